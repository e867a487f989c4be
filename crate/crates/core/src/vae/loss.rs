use crate::autodiff::{Graph, Var};
use crate::data::Layout;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tokenizer::Detokenized;

/// Loss nodes of one VAE forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub recon: Var,
    pub kl: Var,
    pub total: Var,
}

/// Reconstruction plus `beta` times KL, both averaged over the batch and
/// summed over columns (and, for KL, over token dimensions).
///
/// The reconstruction is squared error on each standardized real column
/// and cross-entropy on each discrete column. `x` holds the encoded input
/// `[B, W]`; `logvar` is the log-variance head output.
pub fn vae_loss_graph(
    g: &mut Graph,
    layout: &Layout,
    x: Var,
    recon: &Detokenized,
    mu: Var,
    logvar: Var,
    beta: f64,
) -> Result<LossVars> {
    let batch = g.shape(x)[0] as f64;
    let mut terms = Vec::with_capacity(layout.spans().len());
    for (s, out) in layout.spans().iter().zip(&recon.outputs) {
        let target = g.slice(x, s.start, s.start + s.width)?;
        let t = if s.discrete {
            let logp = g.log_softmax_rows(*out)?;
            let picked = g.mul(logp, target)?;
            let total = g.sum(picked)?;
            g.scale(total, -1.0 / batch)?
        } else {
            let diff = g.sub(*out, target)?;
            let total = g.sum_squares(diff)?;
            g.scale(total, 1.0 / batch)?
        };
        terms.push(t);
    }
    let mut recon_total = terms[0];
    for t in &terms[1..] {
        recon_total = g.add(recon_total, *t)?;
    }

    let kl = kl_graph(g, mu, logvar, batch)?;
    let weighted = g.scale(kl, beta)?;
    let total = g.add(recon_total, weighted)?;
    Ok(LossVars {
        recon: recon_total,
        kl,
        total,
    })
}

/// `0.5 * Σ (mu² + exp(logvar) - 1 - logvar) / batch`
pub fn kl_graph(g: &mut Graph, mu: Var, logvar: Var, batch: f64) -> Result<Var> {
    let numel = g.value(mu).len() as f64;
    let mu2 = g.sum_squares(mu)?;
    let var = g.exp(logvar)?;
    let var = g.sum(var)?;
    let lv = g.sum(logvar)?;
    let neg_lv = g.scale(lv, -1.0)?;
    let a = g.add(mu2, var)?;
    let a = g.add(a, neg_lv)?;
    let minus_one = g.constant(vec![1], vec![-numel])?;
    let a = g.add(a, minus_one)?;
    g.scale(a, 0.5 / batch)
}

/// Loss components computed directly from values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

/// Gaussian KL to `N(0, 1)` summed over entries.
pub fn kl_divergence(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum()
}

/// Value-level counterpart of [`vae_loss_graph`].
///
/// `x` is the encoded input `[B, W]`, `reconstruction` holds reconstructed
/// real values and discrete probability vectors in the same layout, and
/// `mu`/`sigma` are flattened per row (`[B, M·d]`).
pub fn vae_loss(
    layout: &Layout,
    x: &Matrix,
    reconstruction: &Matrix,
    mu: &Matrix,
    sigma: &Matrix,
    beta: f64,
) -> Result<LossParts> {
    if x.rows() != reconstruction.rows()
        || x.cols() != layout.width()
        || reconstruction.cols() != layout.width()
        || mu.rows() != x.rows()
        || mu.cols() != sigma.cols()
        || sigma.rows() != x.rows()
    {
        return Err(Error::Shape {
            op: "vae_loss",
            left: vec![x.rows(), x.cols()],
            right: vec![reconstruction.rows(), reconstruction.cols()],
        });
    }
    let batch = x.rows().max(1) as f64;
    let mut recon = 0.0;
    for (xr, rr) in x.iter_rows().zip(reconstruction.iter_rows()) {
        for s in layout.spans() {
            let (xs, rs) = (&xr[s.start..s.start + s.width], &rr[s.start..s.start + s.width]);
            if s.discrete {
                recon -= xs.iter().zip(rs).map(|(t, p)| if *t > 0.0 { t * p.ln() } else { 0.0 }).sum::<f64>();
            } else {
                recon += (rs[0] - xs[0]).powi(2);
            }
        }
    }
    recon /= batch;
    let kl = kl_divergence(mu.data(), sigma.data()) / batch;
    Ok(LossParts {
        recon,
        kl,
        total: recon + beta * kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_identities() {
        assert_eq!(kl_divergence(&[0.0; 4], &[1.0; 4]), 0.0);
        assert!((kl_divergence(&[1.0], &[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_standard_normal() {
        for i in -10..=10 {
            for j in 1..=20 {
                let (m, s) = (i as f64 * 0.3, j as f64 * 0.15);
                let kl = kl_divergence(&[m], &[s]);
                assert!(kl >= 0.0);
                if kl == 0.0 {
                    assert!(m == 0.0 && (s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn graph_kl_matches_values() {
        let mut g = Graph::new();
        let mu = g.constant(vec![2, 3], vec![0.1, -0.4, 1.0, 0.0, 0.3, 2.0]).unwrap();
        let lv = g.constant(vec![2, 3], vec![0.0, 0.5, -1.0, 0.2, 0.1, -0.3]).unwrap();
        let kl = kl_graph(&mut g, mu, lv, 2.0).unwrap();
        let sigma: Vec<f64> = g.value(lv).iter().map(|v| (0.5 * v).exp()).collect();
        let expect = kl_divergence(g.value(mu), &sigma) / 2.0;
        assert!((g.scalar(kl) - expect).abs() < 1e-12);
    }
}
