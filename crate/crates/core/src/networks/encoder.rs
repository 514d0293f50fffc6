use rand::Rng;

use super::layers::{Conv, ResBlock};
use super::NetConfig;
use crate::error::{contract, Result};
use crate::numerics::{Float, Graph, ParamStore, Var};

/// Spatial sizes must be divisible by this for the four stride-2 stages.
pub const SPATIAL_MULTIPLE: usize = 16;

pub(crate) fn check_spatial(h: usize, w: usize) -> Result<()> {
    contract!(
        h % SPATIAL_MULTIPLE == 0 && w % SPATIAL_MULTIPLE == 0 && h > 0 && w > 0,
        "spatial size {h}×{w} is not a positive multiple of {SPATIAL_MULTIPLE}"
    );
    Ok(())
}

/// A ResBlock optionally followed by a stride-2 Down convolution.
#[derive(Debug, Clone)]
pub(crate) struct Stage {
    pub block: ResBlock,
    pub down: Option<Conv>,
}

impl Stage {
    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: &ParamStore<F>, x: Var, emb: Option<Var>) -> Result<Var> {
        let h = self.block.forward(g, p, x, emb)?;
        match &self.down {
            Some(d) => d.forward(g, p, h),
            None => Ok(h),
        }
    }
}

/// Contracting path shared by the structure encoder, the predictor's
/// encoder half and the baseline: five stages at widths `w1..w5`, all but
/// the last ending in a Down block.
pub(crate) fn build_stages<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    cfg: &NetConfig,
    emb_dim: Option<usize>,
    rng: &mut R,
) -> Result<Vec<Stage>> {
    (1..6)
        .map(|k| {
            let (cin, cout) = (cfg.widths[k - 1], cfg.widths[k]);
            let block = ResBlock::new(store, &format!("{name}.stage{k}.res"), cin, cout, emb_dim, cfg.groups, rng)?;
            let down = (k < 5).then(|| Conv::new(store, &format!("{name}.stage{k}.down"), cout, cout, 3, 2, rng));
            Ok(Stage { block, down })
        })
        .collect()
}

/// Structure encoder `g`: an input convolution (level 0) then five stages,
/// emitting one feature map per level.
#[derive(Debug, Clone)]
pub struct StructureEncoder {
    input: Conv,
    stages: Vec<Stage>,
    pub in_channels: usize,
    pub widths: [usize; 6],
}

impl StructureEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &NetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let input = Conv::new(store, &format!("{name}.input"), cfg.in_channels, cfg.widths[0], 3, 1, rng);
        let stages = build_stages(store, name, cfg, None, rng)?;
        Ok(Self {
            input,
            stages,
            in_channels: cfg.in_channels,
            widths: cfg.widths,
        })
    }

    /// Six feature maps: level `k < 5` at `H/2^k`, level 5 at `H/16`.
    pub fn encode<F: Float>(&self, g: &mut Graph<F>, p: &ParamStore<F>, x: Var) -> Result<Vec<Var>> {
        let (_, c, h, w) = g.value(x).dims4()?;
        contract!(
            c == self.in_channels,
            "structure encoder expects {} input channels, got {c}",
            self.in_channels
        );
        check_spatial(h, w)?;
        let mut levels = Vec::with_capacity(6);
        let mut cur = self.input.forward(g, p, x)?;
        levels.push(cur);
        for stage in &self.stages {
            cur = stage.forward(g, p, cur, None)?;
            levels.push(cur);
        }
        Ok(levels)
    }
}
