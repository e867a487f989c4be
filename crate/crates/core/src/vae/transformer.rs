use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};

/// Pre-norm transformer block over the column-token axis:
/// `x + attn(ln1(x))`, then `+ fc2(relu(fc1(ln2(x))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    heads: usize,
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// Output of one block plus the `[B, M, M]` attention weights per head.
pub struct BlockOutput {
    pub out: Var,
    pub attention: Vec<Var>,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::invalid(
                "transformer",
                format!("width {} is not divisible by {} heads", d, heads),
            ));
        }
        Ok(Self {
            heads,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            fc1: Linear::new(store, &format!("{name}.fc1"), d, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d, rng),
        })
    }

    /// `x: [B, M, d]` to `[B, M, d]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<BlockOutput> {
        let d = *g.shape(x).last().expect("3-d input");
        let dh = d / self.heads;
        let h = self.ln1.forward(g, store, x)?;
        let q = self.q.forward(g, store, h)?;
        let k = self.k.forward(g, store, h)?;
        let v = self.v.forward(g, store, h)?;
        let mut heads = Vec::with_capacity(self.heads);
        let mut attention = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let (lo, hi) = (i * dh, (i + 1) * dh);
            let qi = g.slice(q, lo, hi)?;
            let ki = g.slice(k, lo, hi)?;
            let vi = g.slice(v, lo, hi)?;
            let kt = g.transpose(ki)?;
            let scores = g.matmul(qi, kt)?;
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
            let weights = g.softmax_rows(scores)?;
            attention.push(weights);
            heads.push(g.matmul(weights, vi)?);
        }
        let joined = g.concat(&heads)?;
        let attn = self.o.forward(g, store, joined)?;
        let x = g.add(x, attn)?;

        let h = self.ln2.forward(g, store, x)?;
        let h = self.fc1.forward(g, store, h)?;
        let h = g.relu(h)?;
        let h = self.fc2.forward(g, store, h)?;
        let out = g.add(x, h)?;
        Ok(BlockOutput { out, attention })
    }
}
