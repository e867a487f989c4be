//! Feature tokenization: every column of an encoded row becomes one
//! `d`-dimensional token, and reconstructed tokens map back to column values.
//!
//! Tokens follow the encoded layout order: real-valued columns first, then
//! discrete columns. A real value `x` becomes `x * w + b`. A category
//! becomes `one_hot @ W + b`, which selects row `c` of `W`. The detokenizer
//! has its own parameters. It gives `e @ ŵ + b̂` for real columns and
//! `softmax(e @ Ŵ + b̂)` for discrete ones.

use rand::Rng;

use crate::autodiff::{softmax_in_place, Graph, ParamId, ParamStore, Var};
use crate::data::Layout;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    /// `[1, d]` for a real column, `[C, d]` for a discrete one.
    w: ParamId,
    /// `[d]`
    b: ParamId,
    /// `[d, 1]` or `[d, C]`
    w_hat: ParamId,
    /// `[1]` or `[C]`
    b_hat: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTokenizer {
    d: usize,
    layout: Layout,
    blocks: Vec<Block>,
}

/// Detokenizer outputs for a batch, one entry per layout span.
#[derive(Debug, Clone)]
pub struct Detokenized {
    /// `[B, 1]` reconstructed standardized value for real spans, `[B, C]`
    /// logits for discrete spans.
    pub outputs: Vec<Var>,
}

impl FeatureTokenizer {
    /// Registers one parameter block per column, uniform in `±1/sqrt(d)`.
    pub fn new(store: &mut ParamStore, layout: &Layout, d: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let blocks = layout
            .spans()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let c = s.width;
                let tag = if s.discrete { "dis" } else { "con" };
                Block {
                    w: store.add_uniform(format!("tok.{tag}{i}.w"), &[c, d], bound, rng),
                    b: store.add_uniform(format!("tok.{tag}{i}.b"), &[d], bound, rng),
                    w_hat: store.add_uniform(format!("detok.{tag}{i}.w"), &[d, c], bound, rng),
                    b_hat: store.add_uniform(format!("detok.{tag}{i}.b"), &[c], bound, rng),
                }
            })
            .collect();
        Self {
            d,
            layout: layout.clone(),
            blocks,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of tokens `M`.
    pub fn n_tokens(&self) -> usize {
        self.blocks.len()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// `x: [B, W]` encoded rows to `[B, M, d]` tokens.
    pub fn tokenize_graph(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.layout.width() {
            return Err(Error::Shape {
                op: "tokenize",
                left: shape,
                right: vec![0, self.layout.width()],
            });
        }
        let batch = shape[0];
        let mut tokens = Vec::with_capacity(self.blocks.len());
        for (s, blk) in self.layout.spans().iter().zip(&self.blocks) {
            let cells = g.slice(x, s.start, s.start + s.width)?;
            let w = g.param(store, blk.w);
            let b = g.param(store, blk.b);
            let t = g.matmul(cells, w)?;
            tokens.push(g.add(t, b)?);
        }
        let flat = g.concat(&tokens)?;
        g.reshape(flat, &[batch, self.blocks.len(), self.d])
    }

    /// `[B, M, d]` tokens to per-span outputs (values for real columns,
    /// logits for discrete ones).
    pub fn detokenize_graph(&self, g: &mut Graph, store: &ParamStore, e: Var) -> Result<Detokenized> {
        let shape = g.shape(e).to_vec();
        let m = self.blocks.len();
        if shape.len() != 3 || shape[1] != m || shape[2] != self.d {
            return Err(Error::Shape {
                op: "detokenize",
                left: shape,
                right: vec![0, m, self.d],
            });
        }
        let flat = g.reshape(e, &[shape[0], m * self.d])?;
        let mut outputs = Vec::with_capacity(m);
        for (i, blk) in self.blocks.iter().enumerate() {
            let tok = g.slice(flat, i * self.d, (i + 1) * self.d)?;
            let w = g.param(store, blk.w_hat);
            let b = g.param(store, blk.b_hat);
            let y = g.matmul(tok, w)?;
            outputs.push(g.add(y, b)?);
        }
        Ok(Detokenized { outputs })
    }

    /// Token matrix `M × d` for one encoded row.
    pub fn tokenize(&self, store: &ParamStore, encoded_row: &[f64]) -> Result<Matrix> {
        let mut g = Graph::new();
        let x = g.constant(vec![1, encoded_row.len()], encoded_row.to_vec())?;
        let e = self.tokenize_graph(&mut g, store, x)?;
        Matrix::new(self.blocks.len(), self.d, g.value(e).to_vec())
    }

    /// Reconstructed encoded row (real values and discrete probabilities
    /// placed in their spans) and the per-discrete-column probabilities.
    pub fn detokenize(&self, store: &ParamStore, e: &Matrix) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let ev = g.constant(vec![1, e.rows(), e.cols()], e.data().to_vec())?;
        let out = self.detokenize_graph(&mut g, store, ev)?;
        let rows = outputs_to_rows(&g, &self.layout, &out)?;
        let row = rows.row(0).to_vec();
        let probs = self
            .layout
            .spans()
            .iter()
            .filter(|s| s.discrete)
            .map(|s| row[s.start..s.start + s.width].to_vec())
            .collect();
        Ok((row, probs))
    }
}

/// Assembles detokenizer outputs into encoded rows, turning logits into
/// probabilities.
pub fn outputs_to_rows(g: &Graph, layout: &Layout, out: &Detokenized) -> Result<Matrix> {
    let batch = out.outputs.first().map(|v| g.shape(*v)[0]).unwrap_or(0);
    let mut m = Matrix::zeros(batch, layout.width());
    for (s, v) in layout.spans().iter().zip(&out.outputs) {
        let vals = g.value(*v);
        for i in 0..batch {
            let dst = &mut m.row_mut(i)[s.start..s.start + s.width];
            dst.copy_from_slice(&vals[i * s.width..(i + 1) * s.width]);
            if s.discrete {
                softmax_in_place(dst);
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnKind, ColumnSchema, Standardization, TableSchema};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout() -> Layout {
        let real = |n: &str| {
            let mut c = ColumnSchema::real(n);
            c.standardization = Some(Standardization { mean: 0.0, std: 1.0 });
            c
        };
        let dis = |n: &str, c: usize| {
            ColumnSchema::discrete(n, ColumnKind::Nominal, (0..c).map(|v| v.to_string()).collect())
        };
        let schema = TableSchema::new(
            vec![dis("a", 2), real("x"), dis("b", 3), real("y"), dis("c", 4)],
            None,
        )
        .unwrap();
        Layout::new(&schema)
    }

    fn setup() -> (ParamStore, FeatureTokenizer) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tok = FeatureTokenizer::new(&mut store, &layout(), 4, &mut rng);
        (store, tok)
    }

    #[test]
    fn shape_is_tokens_by_width() {
        let (store, tok) = setup();
        let row = vec![0.3, -1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let e = tok.tokenize(&store, &row).unwrap();
        assert_eq!((e.rows(), e.cols()), (5, 4));
    }

    #[test]
    fn zero_real_gives_bias() {
        let (store, tok) = setup();
        let row = vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let e = tok.tokenize(&store, &row).unwrap();
        assert_eq!(e.row(0), store.get(tok.blocks[0].b).values());
    }

    #[test]
    fn category_selects_embedding_row() {
        let (mut store, tok) = setup();
        // span 3 is column `b` (C = 3); choose category 2 and zero its bias
        let blk = tok.blocks[3];
        store.get_mut(blk.b).values_mut().fill(0.0);
        let mut row = vec![0.0; 11];
        row[2] = 1.0;
        row[4 + 2] = 1.0;
        row[7] = 1.0;
        let e = tok.tokenize(&store, &row).unwrap();
        assert_eq!(e.row(3), &store.get(blk.w).values()[2 * 4..3 * 4]);
    }

    #[test]
    fn equal_logits_give_uniform_probabilities() {
        let (mut store, tok) = setup();
        for blk in &tok.blocks {
            store.get_mut(blk.w_hat).values_mut().fill(0.0);
            store.get_mut(blk.b_hat).values_mut().fill(0.0);
        }
        let e = Matrix::new(5, 4, vec![0.7; 20]).unwrap();
        let (_, probs) = tok.detokenize(&store, &e).unwrap();
        assert_eq!(probs.len(), 3);
        for p in probs {
            let c = p.len() as f64;
            assert!(p.iter().all(|v| (v - 1.0 / c).abs() < 1e-12));
        }
    }

    #[test]
    fn wrong_width_is_rejected() {
        let (store, tok) = setup();
        assert!(tok.tokenize(&store, &[0.0; 3]).is_err());
        assert!(tok.detokenize(&store, &Matrix::zeros(4, 4)).is_err());
    }
}
