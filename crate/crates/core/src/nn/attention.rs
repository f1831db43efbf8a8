use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Last-layer queries and keys kept from a forward pass, `[B, n, C]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCache {
    queries: Tensor,
    keys: Tensor,
    heads: usize,
}

impl AttentionCache {
    pub fn new(queries: Tensor, keys: Tensor, heads: usize) -> Result<Self> {
        let s = queries.shape();
        if s.len() != 3 || keys.shape() != s || heads == 0 || s[2] % heads != 0 {
            return Err(Error::shape(
                "attention_cache",
                format!("queries {s:?}, keys {:?}, {heads} heads", keys.shape()),
            ));
        }
        Ok(Self { queries, keys, heads })
    }

    pub fn batch(&self) -> usize {
        self.queries.shape()[0]
    }

    pub fn tokens(&self) -> usize {
        self.queries.shape()[1]
    }
}

/// Head-averaged `Softmax(Q Kᵀ / √d_k)` for every batch element; each result
/// is an `n × n` row-stochastic matrix.
pub fn extract_attention(cache: Option<&AttentionCache>) -> Result<Vec<Tensor>> {
    let cache = cache.ok_or_else(|| Error::InvalidArgument("no cached forward pass".into()))?;
    let s = cache.queries.shape();
    let (batch, n, c) = (s[0], s[1], s[2]);
    let dk = c / cache.heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let q = cache.queries.data();
    let k = cache.keys.data();
    let mut maps = Vec::with_capacity(batch);
    for b in 0..batch {
        let base = b * n * c;
        let mut avg = vec![0.0; n * n];
        let mut row = vec![0.0; n];
        for h in 0..cache.heads {
            for i in 0..n {
                let qi = &q[base + i * c + h * dk..base + i * c + (h + 1) * dk];
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &k[base + j * c + h * dk..base + j * c + (h + 1) * dk];
                    *r = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - m).exp();
                    z += *r;
                }
                for (j, r) in row.iter().enumerate() {
                    avg[i * n + j] += r / z / cache.heads as f64;
                }
            }
        }
        maps.push(Tensor::new(vec![n, n], avg)?);
    }
    Ok(maps)
}
