//! Building blocks shared by the encoder, the noise predictor and the
//! baseline: convolutions, ConvBlock/ResBlock, Down/Up and attention.

use rand::Rng;

use crate::error::{contract, Result};
use crate::numerics::{init, AttentionWeights, Float, Graph, ParamId, ParamStore, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Group count used for `channels`: the configured count, clamped to the
/// channel count.
pub fn groups_for(channels: usize, groups: usize) -> Result<usize> {
    let g = groups.min(channels).max(1);
    contract!(
        channels % g == 0,
        "{channels} channels cannot be split into {g} normalization groups"
    );
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), init::fan_in(&[cout, cin, k, k], rng));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self {
            w,
            b,
            stride,
            padding: k / 2,
        }
    }

    /// 1×1 conv with weights at a tenth of the fan-in scale.
    pub fn small<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        let std = 0.1 / (cin as f64).sqrt();
        let w = store.add(format!("{name}.weight"), init::truncated_normal(&[cout, cin, 1, 1], std, rng));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self {
            w,
            b,
            stride: 1,
            padding: 0,
        }
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Self {
        let w = store.add(format!("{name}.weight"), Tensor::zeros(&[cout, cin, 1, 1]));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self {
            w,
            b,
            stride: 1,
            padding: 0,
        }
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: &ParamStore<F>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(p, self.w), g.param(p, self.b));
        g.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fin: usize, fout: usize, rng: &mut R) -> Self {
        Self {
            w: store.add(format!("{name}.weight"), init::fan_in(&[fout, fin], rng)),
            b: store.add(format!("{name}.bias"), Tensor::zeros(&[fout])),
        }
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: &ParamStore<F>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(p, self.w), g.param(p, self.b));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            groups: groups_for(channels, groups)?,
        })
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: &ParamStore<F>, x: Var) -> Result<Var> {
        let (ga, be) = (g.param(p, self.gamma), g.param(p, self.beta));
        g.group_norm(x, self.groups, ga, be, NORM_EPS)
    }
}

/// 3×3 conv → GroupNorm → Swish.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    conv: Conv,
    norm: GroupNorm,
}

impl ConvBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        groups: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(store, &format!("{name}.conv"), cin, cout, 3, 1, rng),
            norm: GroupNorm::new(store, &format!("{name}.norm"), cout, groups)?,
        })
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: &ParamStore<F>, x: Var) -> Result<Var> {
        let h = self.conv.forward(g, p, x)?;
        let h = self.norm.forward(g, p, h)?;
        Ok(g.swish(h))
    }
}

/// Two ConvBlocks with a residual path (1×1 conv when the channel count
/// changes). When built with an embedding width, a projection of the
/// noise-level embedding is added between the blocks.
#[derive(Debug, Clone)]
pub struct ResBlock {
    first: ConvBlock,
    second: ConvBlock,
    emb_proj: Option<Linear>,
    skip: Option<Conv>,
    pub out_channels: usize,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        emb_dim: Option<usize>,
        groups: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let first = ConvBlock::new(store, &format!("{name}.block1"), cin, cout, groups, rng)?;
        let emb_proj = emb_dim.map(|e| Linear::new(store, &format!("{name}.emb"), e, cout, rng));
        let second = ConvBlock::new(store, &format!("{name}.block2"), cout, cout, groups, rng)?;
        let skip = (cin != cout).then(|| Conv::new(store, &format!("{name}.skip"), cin, cout, 1, 1, rng));
        Ok(Self {
            first,
            second,
            emb_proj,
            skip,
            out_channels: cout,
        })
    }

    /// `emb` is the shared noise-level embedding `[N, E]`; it is ignored by
    /// blocks built without an embedding projection.
    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: &ParamStore<F>, x: Var, emb: Option<Var>) -> Result<Var> {
        let mut h = self.first.forward(g, p, x)?;
        if let (Some(proj), Some(e)) = (&self.emb_proj, emb) {
            let e = g.swish(e);
            let e = proj.forward(g, p, e)?;
            h = g.add_channel(h, e)?;
        }
        let h = self.second.forward(g, p, h)?;
        let skip = match &self.skip {
            Some(c) => c.forward(g, p, x)?,
            None => x,
        };
        g.add(h, skip)
    }
}

/// Nearest-neighbour 2× upsampling followed by a 1×1 conv.
#[derive(Debug, Clone)]
pub struct Up {
    conv: Conv,
}

impl Up {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv::new(store, &format!("{name}.conv"), cin, cout, 1, 1, rng),
        }
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: &ParamStore<F>, x: Var) -> Result<Var> {
        let h = g.upsample2x(x)?;
        self.conv.forward(g, p, h)
    }
}

/// Single-head attention with 1×1 projections and a residual connection.
/// The output projection starts small so a fresh block is close to the
/// identity.
#[derive(Debug, Clone)]
pub struct Attention {
    q: Conv,
    k: Conv,
    v: Conv,
    out: Conv,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: usize, rng: &mut R) -> Self {
        let c = channels;
        Self {
            q: Conv::new(store, &format!("{name}.q"), c, c, 1, 1, rng),
            k: Conv::new(store, &format!("{name}.k"), c, c, 1, 1, rng),
            v: Conv::new(store, &format!("{name}.v"), c, c, 1, 1, rng),
            out: Conv::small(store, &format!("{name}.out"), c, c, rng),
        }
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: &ParamStore<F>, query: Var, context: Var) -> Result<Var> {
        let w = AttentionWeights {
            wq: g.param(p, self.q.w),
            bq: g.param(p, self.q.b),
            wk: g.param(p, self.k.w),
            bk: g.param(p, self.k.b),
            wv: g.param(p, self.v.w),
            bv: g.param(p, self.v.b),
            wo: g.param(p, self.out.w),
            bo: g.param(p, self.out.b),
        };
        g.attention(query, context, &w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_conv_resblock_is_pure_skip() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rb = ResBlock::new(&mut store, "rb", 4, 4, None, 2, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).ends_with(".weight") {
                let z = Tensor::zeros(store.get(id).shape());
                store.assign(id, &z).unwrap();
            }
        }
        let x = Tensor::from_fn(&[2, 4, 4, 4], |i| (i as f32 * 0.13).sin());
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = rb.forward(&mut g, &store, xv, None).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn resblock_changes_only_channels() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rb = ResBlock::new(&mut store, "rb", 3, 8, Some(5), 8, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 3, 6, 4], 0.5));
        let e = g.constant(Tensor::full(&[2, 5], 0.1));
        let y = rb.forward(&mut g, &store, x, Some(e)).unwrap();
        assert_eq!(g.shape(y), &[2, 8, 6, 4]);
    }

    #[test]
    fn group_clamp() {
        assert_eq!(groups_for(4, 8).unwrap(), 4);
        assert_eq!(groups_for(32, 8).unwrap(), 8);
        assert!(groups_for(12, 8).is_err());
    }
}
