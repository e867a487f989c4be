use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Table};
use crate::error::{Error, Result};

/// Bins shared by the real and synthetic side of one column.
#[derive(Debug, Clone, PartialEq)]
enum Bins {
    Categories(Vec<String>),
    /// `n + 1` increasing edges; the last bin is closed.
    Edges(Vec<f64>),
}

impl Bins {
    fn for_column(real: &Table, synthetic: &Table, col: usize, bins: usize) -> Self {
        let c = real.schema().column(col);
        if c.kind != ColumnKind::RealValued {
            return Bins::Categories(c.values.clone());
        }
        let vals = real
            .rows()
            .iter()
            .chain(synthetic.rows())
            .map(|r| r[col].as_f64());
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() || lo == hi {
            let lo = if lo.is_finite() { lo } else { 0.0 };
            return Bins::Edges(vec![lo, lo]);
        }
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|k| lo + width * k as f64).collect();
        edges.push(hi);
        Bins::Edges(edges)
    }

    fn len(&self) -> usize {
        match self {
            Bins::Categories(v) => v.len(),
            Bins::Edges(e) => e.len() - 1,
        }
    }

    fn index(&self, v: crate::data::Value) -> usize {
        match self {
            Bins::Categories(_) => v.category().expect("discrete column"),
            Bins::Edges(e) => {
                let x = v.as_f64();
                let n = e.len() - 1;
                // first edge strictly above x, minus one; top edge joins the last bin
                e[1..n].partition_point(|edge| *edge <= x).min(n - 1)
            }
        }
    }

    fn label(&self, k: usize) -> (String, String, String) {
        match self {
            Bins::Categories(v) => (v[k].clone(), String::new(), String::new()),
            Bins::Edges(e) => (format!("{}", k), format!("{}", e[k]), format!("{}", e[k + 1])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDensity {
    pub column: String,
    pub labels: Vec<String>,
    pub real: Vec<usize>,
    pub synthetic: Vec<usize>,
    /// `½ Σ |p_real − p_synthetic|` over bins.
    pub tv_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDensity {
    pub a: String,
    pub b: String,
    pub a_labels: Vec<String>,
    pub b_labels: Vec<String>,
    /// Row-major `[a_bin][b_bin]` counts.
    pub real: Vec<Vec<usize>>,
    pub synthetic: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityExport {
    pub columns: Vec<ColumnDensity>,
    pub joints: Vec<JointDensity>,
}

/// Total-variation distance between two count vectors over the same bins.
pub fn tv_distance(a: &[usize], b: &[usize]) -> f64 {
    let na = a.iter().sum::<usize>().max(1) as f64;
    let nb = b.iter().sum::<usize>().max(1) as f64;
    0.5 * a
        .iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 / na - *y as f64 / nb).abs())
        .sum::<f64>()
}

/// Replaces every character outside `[A-Za-z0-9_-]` with `_`.
pub fn sanitize_file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn resolve(table: &Table, name: &str) -> Result<usize> {
    table
        .schema()
        .index_of(name)
        .ok_or_else(|| Error::invalid("density_export", format!("unknown column `{}`", name)))
}

/// Histogram counts per named column and 2-D counts per named pair.
pub fn compute_densities(
    real: &Table,
    synthetic: &Table,
    columns: &[String],
    joint_pairs: &[(String, String)],
    bins: usize,
) -> Result<DensityExport> {
    let diff = real.schema().diff(synthetic.schema());
    if !diff.is_empty() {
        return Err(Error::Schema(format!("density_export: {}", diff.join("; "))));
    }
    if bins == 0 {
        return Err(Error::invalid("density_export", "bins must be positive"));
    }
    let bins_of = |col: usize| Bins::for_column(real, synthetic, col, bins);
    let mut out = DensityExport {
        columns: Vec::new(),
        joints: Vec::new(),
    };
    for name in columns {
        let col = resolve(real, name)?;
        let b = bins_of(col);
        let count = |t: &Table| {
            let mut c = vec![0usize; b.len()];
            for r in t.rows() {
                c[b.index(r[col])] += 1;
            }
            c
        };
        let (rc, sc) = (count(real), count(synthetic));
        out.columns.push(ColumnDensity {
            column: name.clone(),
            labels: (0..b.len()).map(|k| b.label(k).0).collect(),
            tv_distance: tv_distance(&rc, &sc),
            real: rc,
            synthetic: sc,
        });
    }
    for (a, b) in joint_pairs {
        let (ca, cb) = (resolve(real, a)?, resolve(real, b)?);
        let (ba, bb) = (bins_of(ca), bins_of(cb));
        let count = |t: &Table| {
            let mut c = vec![vec![0usize; bb.len()]; ba.len()];
            for r in t.rows() {
                c[ba.index(r[ca])][bb.index(r[cb])] += 1;
            }
            c
        };
        out.joints.push(JointDensity {
            a: a.clone(),
            b: b.clone(),
            a_labels: (0..ba.len()).map(|k| ba.label(k).0).collect(),
            b_labels: (0..bb.len()).map(|k| bb.label(k).0).collect(),
            real: count(real),
            synthetic: count(synthetic),
        });
    }
    Ok(out)
}

/// Writes `marginal_<column>.csv` and `joint_<a>__<b>.csv` into `dir`
/// (names passed through [`sanitize_file_stem`]) and returns the paths in
/// write order.
///
/// Marginal files have columns `bin,lower,upper,real,synthetic`; `lower`
/// and `upper` are empty for discrete columns. Joint files are long-form
/// `a_bin,b_bin,real,synthetic`.
pub fn density_export(
    real: &Table,
    synthetic: &Table,
    columns: &[String],
    joint_pairs: &[(String, String)],
    bins: usize,
    dir: &Path,
) -> Result<(DensityExport, Vec<PathBuf>)> {
    let export = compute_densities(real, synthetic, columns, joint_pairs, bins)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut write = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        if files.contains(&path) {
            return Err(Error::invalid(
                "density_export",
                format!("two exports map to the same file {}", path.display()),
            ));
        }
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        Ok(())
    };
    for (density, name) in export.columns.iter().zip(columns) {
        let col = resolve(real, name)?;
        let b = Bins::for_column(real, synthetic, col, bins);
        let mut body = String::from("bin,lower,upper,real,synthetic\n");
        for k in 0..b.len() {
            let (label, lo, hi) = b.label(k);
            writeln!(body, "{},{},{},{},{}", csv_field(&label), lo, hi, density.real[k], density.synthetic[k]).unwrap();
        }
        write(format!("marginal_{}.csv", sanitize_file_stem(name)), body)?;
    }
    for j in &export.joints {
        let mut body = String::from("a_bin,b_bin,real,synthetic\n");
        for (ia, la) in j.a_labels.iter().enumerate() {
            for (ib, lb) in j.b_labels.iter().enumerate() {
                writeln!(body, "{},{},{},{}", csv_field(la), csv_field(lb), j.real[ia][ib], j.synthetic[ia][ib]).unwrap();
            }
        }
        write(
            format!("joint_{}__{}.csv", sanitize_file_stem(&j.a), sanitize_file_stem(&j.b)),
            body,
        )?;
    }
    Ok((export, files))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
