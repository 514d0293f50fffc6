use rand::Rng;

use super::embedding::NoiseLevelEmbedding;
use super::encoder::{build_stages, check_spatial, Stage};
use super::layers::{Attention, Conv, GroupNorm, ResBlock, Up};
use super::NetConfig;
use crate::error::{contract, Result};
use crate::numerics::{Float, Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone)]
struct DecoderBlock {
    first: ResBlock,
    second: ResBlock,
    up: Option<Up>,
}

/// Expanding path: five blocks of two ResBlocks, the first four ending in an
/// Up block. The first block sits at the bottleneck resolution and consumes
/// the level-5 and level-4 skips; each later block consumes one.
#[derive(Debug, Clone)]
pub(crate) struct UnetDecoder {
    blocks: Vec<DecoderBlock>,
    out_norm: GroupNorm,
    out_conv: Conv,
}

impl UnetDecoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &NetConfig,
        emb_dim: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let w = cfg.widths;
        let gr = cfg.groups;
        let mut blocks = Vec::with_capacity(5);
        blocks.push(DecoderBlock {
            first: ResBlock::new(store, &format!("{name}.block0.res1"), 2 * w[5], w[4], emb_dim, gr, rng)?,
            second: ResBlock::new(store, &format!("{name}.block0.res2"), 2 * w[4], w[4], emb_dim, gr, rng)?,
            up: Some(Up::new(store, &format!("{name}.block0.up"), w[4], w[3], rng)),
        });
        for (j, level) in [3usize, 2, 1, 0].into_iter().enumerate() {
            let b = j + 1;
            let c = w[level];
            blocks.push(DecoderBlock {
                first: ResBlock::new(store, &format!("{name}.block{b}.res1"), 2 * c, c, emb_dim, gr, rng)?,
                second: ResBlock::new(store, &format!("{name}.block{b}.res2"), c, c, emb_dim, gr, rng)?,
                up: (level > 0).then(|| Up::new(store, &format!("{name}.block{b}.up"), c, w[level - 1], rng)),
            });
        }
        Ok(Self {
            blocks,
            out_norm: GroupNorm::new(store, &format!("{name}.out_norm"), w[0], gr)?,
            out_conv: Conv::new(store, &format!("{name}.out_conv"), w[0], 1, 3, 1, rng),
        })
    }

    pub fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        p: &ParamStore<F>,
        mut h: Var,
        skips: &[Var],
        emb: Option<Var>,
    ) -> Result<Var> {
        debug_assert_eq!(skips.len(), 6);
        for (b, block) in self.blocks.iter().enumerate() {
            let skip = if b == 0 { skips[5] } else { skips[4 - b] };
            let cat = g.concat(h, skip)?;
            h = block.first.forward(g, p, cat, emb)?;
            let second_in = if b == 0 { g.concat(h, skips[4])? } else { h };
            h = block.second.forward(g, p, second_in, emb)?;
            if let Some(up) = &block.up {
                h = up.forward(g, p, h)?;
            }
        }
        let h = self.out_norm.forward(g, p, h)?;
        let h = g.swish(h);
        self.out_conv.forward(g, p, h)
    }

    pub fn out_conv(&self) -> &Conv {
        &self.out_conv
    }
}

/// How the predictor merges one level of structure features into its own.
#[derive(Debug, Clone)]
pub enum Fusion {
    Add,
    CrossAttention(Attention),
}

/// Noise predictor `f(x_e, y_t, γ_t)`: a six-level UNet over the noisy dose
/// map, fused with the structure features at every level of its encoder
/// (addition at levels 0–2, cross-attention at levels 3–5), with a
/// self-attention bottleneck.
#[derive(Debug, Clone)]
pub struct NoisePredictor {
    input: Conv,
    embedding: NoiseLevelEmbedding,
    stages: Vec<Stage>,
    fusion: Vec<Fusion>,
    mid_first: ResBlock,
    mid_attention: Attention,
    mid_second: ResBlock,
    decoder: UnetDecoder,
    pub widths: [usize; 6],
}

impl NoisePredictor {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &NetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.widths;
        let input = Conv::new(store, &format!("{name}.input"), 1, w[0], 3, 1, rng);
        let embedding = NoiseLevelEmbedding::new(store, &format!("{name}.embed"), cfg.emb_dim, rng)?;
        let e = Some(embedding.hidden);
        let stages = build_stages(store, name, cfg, e, rng)?;
        let fusion = (0..6)
            .map(|k| {
                if k < 3 {
                    Fusion::Add
                } else {
                    Fusion::CrossAttention(Attention::new(store, &format!("{name}.fuse{k}"), w[k], rng))
                }
            })
            .collect();
        let mid_first = ResBlock::new(store, &format!("{name}.mid.res1"), w[5], w[5], e, cfg.groups, rng)?;
        let mid_attention = Attention::new(store, &format!("{name}.mid.attn"), w[5], rng);
        let mid_second = ResBlock::new(store, &format!("{name}.mid.res2"), w[5], w[5], e, cfg.groups, rng)?;
        let decoder = UnetDecoder::new(store, &format!("{name}.dec"), cfg, e, rng)?;
        Ok(Self {
            input,
            embedding,
            stages,
            fusion,
            mid_first,
            mid_attention,
            mid_second,
            decoder,
            widths: w,
        })
    }

    pub fn fusion(&self) -> &[Fusion] {
        &self.fusion
    }

    fn fuse<F: Float>(&self, g: &mut Graph<F>, p: &ParamStore<F>, level: usize, h: Var, feature: Var) -> Result<Var> {
        contract!(
            g.shape(h) == g.shape(feature),
            "structure feature at level {level} has shape {:?}, predictor expects {:?}",
            g.shape(feature),
            g.shape(h)
        );
        match &self.fusion[level] {
            Fusion::Add => g.add(h, feature),
            Fusion::CrossAttention(attn) => attn.forward(g, p, h, feature),
        }
    }

    /// Predicted noise for `y_t: [N, 1, H, W]`, same shape as `y_t`.
    pub fn predict<F: Float>(
        &self,
        g: &mut Graph<F>,
        p: &ParamStore<F>,
        features: &[Var],
        y_t: Var,
        gammas: &[f64],
    ) -> Result<Var> {
        let (n, c, h, w) = g.value(y_t).dims4()?;
        contract!(c == 1, "noisy dose map must have one channel, got {c}");
        check_spatial(h, w)?;
        contract!(
            features.len() == 6,
            "expected 6 structure feature levels, got {}",
            features.len()
        );
        contract!(gammas.len() == n, "{} noise levels for a batch of {n}", gammas.len());
        let emb = Some(self.embedding.forward(g, p, gammas)?);

        let mut skips = Vec::with_capacity(6);
        let mut cur = self.input.forward(g, p, y_t)?;
        cur = self.fuse(g, p, 0, cur, features[0])?;
        skips.push(cur);
        for (k, stage) in self.stages.iter().enumerate() {
            cur = stage.forward(g, p, cur, emb)?;
            cur = self.fuse(g, p, k + 1, cur, features[k + 1])?;
            skips.push(cur);
        }
        cur = self.mid_first.forward(g, p, cur, emb)?;
        cur = self.mid_attention.forward(g, p, cur, cur)?;
        cur = self.mid_second.forward(g, p, cur, emb)?;
        self.decoder.forward(g, p, cur, &skips, emb)
    }

    pub fn output_layer(&self) -> [ParamId; 2] {
        let c = self.decoder.out_conv();
        [c.w, c.b]
    }
}

/// Direct dose regressor with the same ResBlock/Down/Up vocabulary and
/// widths as the predictor, trained with an L1 loss. Used as the
/// over-smoothing reference.
#[derive(Debug, Clone)]
pub struct BaselineUnet {
    input: Conv,
    stages: Vec<Stage>,
    mid_first: ResBlock,
    mid_second: ResBlock,
    decoder: UnetDecoder,
    pub in_channels: usize,
}

impl BaselineUnet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &NetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.widths;
        Ok(Self {
            input: Conv::new(store, &format!("{name}.input"), cfg.in_channels, w[0], 3, 1, rng),
            stages: build_stages(store, name, cfg, None, rng)?,
            mid_first: ResBlock::new(store, &format!("{name}.mid.res1"), w[5], w[5], None, cfg.groups, rng)?,
            mid_second: ResBlock::new(store, &format!("{name}.mid.res2"), w[5], w[5], None, cfg.groups, rng)?,
            decoder: UnetDecoder::new(store, &format!("{name}.dec"), cfg, None, rng)?,
            in_channels: cfg.in_channels,
        })
    }

    pub fn predict<F: Float>(&self, g: &mut Graph<F>, p: &ParamStore<F>, x: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4()?;
        contract!(
            c == self.in_channels,
            "baseline expects {} input channels, got {c}",
            self.in_channels
        );
        check_spatial(h, w)?;
        let mut skips = Vec::with_capacity(6);
        let mut cur = self.input.forward(g, p, x)?;
        skips.push(cur);
        for stage in &self.stages {
            cur = stage.forward(g, p, cur, None)?;
            skips.push(cur);
        }
        cur = self.mid_first.forward(g, p, cur, None)?;
        cur = self.mid_second.forward(g, p, cur, None)?;
        self.decoder.forward(g, p, cur, &skips, None)
    }

    pub fn output_layer(&self) -> [ParamId; 2] {
        let c = self.decoder.out_conv();
        [c.w, c.b]
    }
}
