use rand::Rng;

use super::layers::Linear;
use crate::error::{contract, Result};
use crate::numerics::{Float, Graph, ParamStore, Tensor, Var};

/// Sinusoidal features of the continuous noise level `γ_t`, followed by a
/// two-layer projection with Swish in between.
#[derive(Debug, Clone)]
pub struct NoiseLevelEmbedding {
    pub dim: usize,
    pub hidden: usize,
    first: Linear,
    second: Linear,
}

/// γ ∈ (0, 1] is stretched onto the range the frequency table was designed
/// for (integer step indices up to ~1000).
const LEVEL_SCALE: f64 = 1000.0;

impl NoiseLevelEmbedding {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        contract!(dim >= 2 && dim % 2 == 0, "embedding dimension {dim} must be even and ≥ 2");
        let hidden = 2 * dim;
        Ok(Self {
            dim,
            hidden,
            first: Linear::new(store, &format!("{name}.fc1"), dim, hidden, rng),
            second: Linear::new(store, &format!("{name}.fc2"), hidden, hidden, rng),
        })
    }

    /// The fixed sinusoidal table `[N, dim]`: `sin(s·f_i)` then `cos(s·f_i)`
    /// with `f_i = 10000^(−i/half)`.
    pub fn sinusoidal<F: Float>(&self, gammas: &[f64]) -> Tensor<F> {
        let half = self.dim / 2;
        let mut data = Vec::with_capacity(gammas.len() * self.dim);
        for &gm in gammas {
            let s = gm * LEVEL_SCALE;
            let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
            let angles: Vec<f64> = freqs.map(|f| s * f).collect();
            data.extend(angles.iter().map(|a| F::from_f64_lossy(a.sin())));
            data.extend(angles.iter().map(|a| F::from_f64_lossy(a.cos())));
        }
        Tensor::new(&[gammas.len(), self.dim], data).expect("embedding table shape")
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: &ParamStore<F>, gammas: &[f64]) -> Result<Var> {
        let table = g.constant(self.sinusoidal(gammas));
        let h = self.first.forward(g, p, table)?;
        let h = g.swish(h);
        self.second.forward(g, p, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distinct_levels_give_distinct_embeddings() {
        let mut store = ParamStore::new();
        let emb = NoiseLevelEmbedding::new(&mut store, "emb", 16, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let levels = [0.999, 0.99, 0.5, 0.5001, 0.01, 1e-4];
        let table = emb.sinusoidal::<f64>(&levels);
        for i in 0..levels.len() {
            for j in i + 1..levels.len() {
                let a = table.select(i).unwrap();
                let b = table.select(j).unwrap();
                assert!(a.max_abs_diff(&b).unwrap() > 1e-3, "{} vs {}", levels[i], levels[j]);
            }
        }
        let mut g = Graph::new();
        let a = emb.forward(&mut g, &store, &levels).unwrap();
        let mut g2 = Graph::new();
        let b = emb.forward(&mut g2, &store, &levels).unwrap();
        assert_eq!(g.value(a), g2.value(b));
        assert_eq!(g.shape(a), &[levels.len(), 32]);
    }

    #[test]
    fn odd_dimension_rejected() {
        let mut store = ParamStore::new();
        assert!(NoiseLevelEmbedding::new(&mut store, "e", 7, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
