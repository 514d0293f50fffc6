//! Synthetic phantoms: an elliptical body with CT-like texture, a PTV, four
//! OARs, and an analytic multi-beam dose with sharp band edges.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numerics::Tensor;

pub const OAR_NAMES: [&str; 4] = ["bladder", "femoral_head_r", "femoral_head_l", "small_intestine"];
/// CT, PTV and the four OAR masks.
pub const STRUCTURE_CHANNELS: usize = 2 + OAR_NAMES.len();
pub const DEFAULT_BEAMS: usize = 9;

const PLACEMENT_ATTEMPTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub theta: f64,
}

impl Ellipse {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        ((c * dx + s * dy) / self.rx, (-s * dx + c * dy) / self.ry)
    }

    /// Squared normalized radius; `< 1` inside.
    pub fn level(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.local(x, y);
        u * u + v * v
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.level(x, y) <= 1.0
    }

    /// Distance from an interior point to the boundary along the unit
    /// direction `(dx, dy)`.
    pub fn exit_distance(&self, x: f64, y: f64, dx: f64, dy: f64) -> f64 {
        let (qx, qy) = self.local(x, y);
        let (s, c) = self.theta.sin_cos();
        let (wx, wy) = ((c * dx + s * dy) / self.rx, (-s * dx + c * dy) / self.ry);
        let a = wx * wx + wy * wy;
        let b = qx * wx + qy * wy;
        let cc = qx * qx + qy * qy - 1.0;
        let disc = (b * b - a * cc).max(0.0);
        ((-b + disc.sqrt()) / a).max(0.0)
    }

    fn max_radius(&self) -> f64 {
        self.rx.max(self.ry)
    }

    fn grown(&self, margin: f64) -> Self {
        Self {
            rx: self.rx + margin,
            ry: self.ry + margin,
            ..*self
        }
    }

    /// Whether `self` lies strictly inside `outer`, checked on the boundary.
    fn inside(&self, outer: &Ellipse) -> bool {
        (0..96).all(|i| {
            let a = 2.0 * PI * i as f64 / 96.0;
            let (s, c) = self.theta.sin_cos();
            let (u, v) = (self.rx * a.cos(), self.ry * a.sin());
            outer.level(self.cx + c * u - s * v, self.cy + s * u + c * v) < 1.0
        })
    }

    fn rasterize(&self, size: usize) -> Vec<bool> {
        let mut m = vec![false; size * size];
        for r in 0..size {
            for c in 0..size {
                m[r * size + c] = self.contains(c as f64 + 0.5, r as f64 + 0.5);
            }
        }
        m
    }
}

/// One treatment beam: a band of `width` pixels through the PTV centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec {
    /// Travel direction, radians.
    pub angle: f64,
    pub width: f64,
    /// Linear attenuation per pixel of tissue.
    pub attenuation_mu: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomGeometry {
    pub body: Ellipse,
    pub ptv: Ellipse,
    pub oars: Vec<Ellipse>,
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub case_id: String,
    /// `[6, H, W]`: CT in `[0, 1]`, PTV mask, four OAR masks.
    pub x: Tensor,
    /// `[1, H, W]` dose relative to prescription (PTV mean 1).
    pub y: Tensor,
    pub seed: u64,
    pub size: usize,
    pub beams: Vec<BeamSpec>,
    pub geometry: PhantomGeometry,
}

impl PhantomCase {
    fn channel(&self, c: usize) -> Tensor {
        let n = self.size * self.size;
        Tensor::new(&[1, self.size, self.size], self.x.data()[c * n..(c + 1) * n].to_vec()).expect("channel")
    }

    pub fn ct(&self) -> Tensor {
        self.channel(0)
    }

    pub fn ptv_mask(&self) -> Tensor {
        self.channel(1)
    }

    pub fn oar_mask(&self, i: usize) -> Tensor {
        self.channel(2 + i)
    }

    pub fn body_mask(&self) -> Tensor {
        self.ct().map(|v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    /// Checks mask disjointness, containment in the body and the
    /// prescription normalization.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.size * self.size;
        let ct = &self.x.data()[..n];
        let masks: Vec<&[f32]> = (1..STRUCTURE_CHANNELS).map(|c| &self.x.data()[c * n..(c + 1) * n]).collect();
        contract!(masks[0].iter().any(|&v| v > 0.5), "{}: empty PTV", self.case_id);
        for i in 0..n {
            let mut owners = 0;
            for m in &masks {
                contract!(m[i] == 0.0 || m[i] == 1.0, "{}: non-binary mask value", self.case_id);
                if m[i] > 0.5 {
                    owners += 1;
                    contract!(ct[i] > 0.0, "{}: mask pixel {i} outside the body", self.case_id);
                }
            }
            contract!(owners <= 1, "{}: masks overlap at pixel {i}", self.case_id);
            contract!((0.0..=1.0).contains(&ct[i]), "{}: CT value out of range", self.case_id);
        }
        let ptv_mean = masked_mean(self.y.data(), masks[0]);
        contract!(
            (ptv_mean - 1.0).abs() <= 1e-6,
            "{}: PTV mean dose {ptv_mean} is not 1",
            self.case_id
        );
        Ok(())
    }
}

fn masked_mean(values: &[f32], mask: &[f32]) -> f64 {
    let (mut s, mut n) = (0.0f64, 0usize);
    for (v, m) in values.iter().zip(mask) {
        if *m > 0.5 {
            s += *v as f64;
            n += 1;
        }
    }
    s / n.max(1) as f64
}

pub fn case_id(seed: u64) -> String {
    format!("case_{seed:06}")
}

/// Unnormalized superposition of beam bands inside the body. Each beam
/// contributes `weight·exp(−μ·d)` where `d` is the tissue depth from the
/// body surface along the beam, and nothing outside its band.
pub fn beam_dose(body: &Ellipse, target: (f64, f64), beams: &[BeamSpec], size: usize) -> Tensor {
    let mut dose = vec![0.0f64; size * size];
    for b in beams {
        let (dy, dx) = b.angle.sin_cos();
        let (nx, ny) = (-dy, dx);
        for r in 0..size {
            for c in 0..size {
                let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
                if !body.contains(px, py) {
                    continue;
                }
                let offset = (px - target.0) * nx + (py - target.1) * ny;
                if offset.abs() > b.width / 2.0 {
                    continue;
                }
                let depth = body.exit_distance(px, py, -dx, -dy);
                dose[r * size + c] += b.weight * (-b.attenuation_mu * depth).exp();
            }
        }
    }
    Tensor::new(&[1, size, size], dose.into_iter().map(|v| v as f32).collect()).expect("dose shape")
}

/// Beam dose aimed at the PTV centroid, scaled so the mean over the PTV is
/// exactly the prescription (1.0).
pub fn analytic_dose(body: &Ellipse, ptv_mask: &Tensor, beams: &[BeamSpec], size: usize) -> Result<Tensor> {
    contract!(!beams.is_empty(), "analytic dose needs at least one beam");
    contract!(
        ptv_mask.len() == size * size,
        "PTV mask has {} pixels, expected {}",
        ptv_mask.len(),
        size * size
    );
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (i, &m) in ptv_mask.data().iter().enumerate() {
        if m > 0.5 {
            sx += (i % size) as f64 + 0.5;
            sy += (i / size) as f64 + 0.5;
            n += 1;
        }
    }
    contract!(n > 0, "analytic dose needs a nonempty PTV");
    let centroid = (sx / n as f64, sy / n as f64);
    let raw = beam_dose(body, centroid, beams, size);
    let mean = masked_mean(raw.data(), ptv_mask.data());
    contract!(mean > 0.0, "beams deliver no dose to the PTV");
    let scaled: Vec<f64> = raw.data().iter().map(|&v| v as f64 / mean).collect();
    // One refinement pass absorbs the f32 rounding of the first scaling.
    let as_f32: Vec<f32> = scaled.iter().map(|&v| v as f32).collect();
    let again = masked_mean(&as_f32, ptv_mask.data());
    let out = scaled.iter().map(|&v| (v / again) as f32).collect();
    Tensor::new(&[1, size, size], out)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn place_inside(rng: &mut ChaCha8Rng, body: &Ellipse, rx: f64, ry: f64, reach: f64) -> Ellipse {
    let a = uniform(rng, 0.0, 2.0 * PI);
    let r = reach * uniform(rng, 0.0, 1.0).sqrt();
    let (u, v) = (r * a.cos() * body.rx, r * a.sin() * body.ry);
    let (s, c) = body.theta.sin_cos();
    Ellipse {
        cx: body.cx + c * u - s * v,
        cy: body.cy + s * u + c * v,
        rx,
        ry,
        theta: uniform(rng, -PI / 2.0, PI / 2.0),
    }
}

fn separated(a: &Ellipse, b: &Ellipse, margin: f64) -> bool {
    let d = ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)).sqrt();
    d > a.max_radius() + b.max_radius() + margin
}

fn build_geometry(rng: &mut ChaCha8Rng, size: usize) -> Option<PhantomGeometry> {
    let s = size as f64;
    let body = Ellipse {
        cx: s / 2.0 + uniform(rng, -0.03, 0.03) * s,
        cy: s / 2.0 + uniform(rng, -0.03, 0.03) * s,
        rx: uniform(rng, 0.40, 0.46) * s,
        ry: uniform(rng, 0.32, 0.38) * s,
        theta: uniform(rng, -0.1, 0.1),
    };
    let ptv = {
        let rx = (uniform(rng, 0.07, 0.12) * s).max(1.25);
        let ry = (uniform(rng, 0.07, 0.12) * s).max(1.25);
        place_inside(rng, &body, rx, ry, 0.45)
    };
    let margin = (0.025 * s).clamp(0.25, 1.5);
    if !ptv.grown(margin).inside(&body) {
        return None;
    }
    // bladder, femoral heads, small intestine
    let radii = [(0.06, 0.10), (0.045, 0.065), (0.045, 0.065), (0.08, 0.12)];
    let mut oars: Vec<Ellipse> = Vec::with_capacity(4);
    for (lo, hi) in radii {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let rx = (uniform(rng, lo, hi) * s).max(0.75);
            let ry = (uniform(rng, lo, hi) * s).max(0.75);
            let cand = place_inside(rng, &body, rx, ry, 0.8);
            let clear = separated(&cand, &ptv, margin) && oars.iter().all(|o| separated(&cand, o, margin));
            if clear && cand.grown(margin).inside(&body) {
                placed = Some(cand);
                break;
            }
        }
        oars.push(placed?);
    }
    Some(PhantomGeometry { body, ptv, oars })
}

/// Smooth texture from a handful of random low-frequency cosines.
fn ct_texture(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                uniform(rng, 0.5, 2.5),
                uniform(rng, 0.5, 2.5),
                uniform(rng, 0.0, 2.0 * PI),
                uniform(rng, 0.01, 0.03),
            )
        })
        .collect();
    let s = size as f64;
    let mut out = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            out[r * size + c] = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (2.0 * PI * (fx * c as f64 / s + fy * r as f64 / s) + ph).cos())
                .sum();
        }
    }
    out
}

/// Generates one case. Identical arguments give bit-identical output.
pub fn generate_case(seed: u64, size: usize, n_beams: usize) -> Result<PhantomCase> {
    contract!(
        size >= 16 && size % 16 == 0,
        "phantom size {size} must be a positive multiple of 16"
    );
    contract!(n_beams >= 1, "need at least one beam");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = (0..PLACEMENT_ATTEMPTS)
        .find_map(|_| build_geometry(&mut rng, size))
        .ok_or_else(|| {
            Error::Generation(format!(
                "seed {seed}: could not place disjoint organs in a {size}×{size} body after {PLACEMENT_ATTEMPTS} attempts"
            ))
        })?;

    let n = size * size;
    let body = geometry.body.rasterize(size);
    let ptv = geometry.ptv.rasterize(size);
    let oars: Vec<Vec<bool>> = geometry.oars.iter().map(|o| o.rasterize(size)).collect();

    let texture = ct_texture(&mut rng, size);
    let organ_offset = [0.05, 0.45, 0.45, -0.08];
    let mut x = vec![0.0f32; STRUCTURE_CHANNELS * n];
    for i in 0..n {
        if !body[i] {
            continue;
        }
        let mut v = 0.35 + texture[i];
        if ptv[i] {
            v += 0.08;
            x[n + i] = 1.0;
        }
        for (k, m) in oars.iter().enumerate() {
            if m[i] {
                v += organ_offset[k];
                x[(2 + k) * n + i] = 1.0;
            }
        }
        x[i] = v.clamp(0.05, 1.0) as f32;
    }

    let base = uniform(&mut rng, 0.0, 2.0 * PI);
    let spread = 2.0 * PI / n_beams as f64;
    let ptv_extent = geometry.ptv.max_radius();
    let mu_scale = 64.0 / size as f64;
    let beams: Vec<BeamSpec> = (0..n_beams)
        .map(|i| BeamSpec {
            angle: base + spread * i as f64 + uniform(&mut rng, -0.1, 0.1) * spread,
            width: 2.0 * ptv_extent + uniform(&mut rng, 1.0, 1.0 + 0.05 * size as f64),
            attenuation_mu: uniform(&mut rng, 0.02, 0.05) * mu_scale,
            weight: uniform(&mut rng, 0.8, 1.2),
        })
        .collect();

    let ptv_mask = Tensor::new(&[1, size, size], x[n..2 * n].to_vec())?;
    let y = analytic_dose(&geometry.body, &ptv_mask, &beams, size)?;
    let case = PhantomCase {
        case_id: case_id(seed),
        x: Tensor::new(&[STRUCTURE_CHANNELS, size, size], x)?,
        y,
        seed,
        size,
        beams,
        geometry,
    };
    case.check_invariants()
        .map_err(|e| Error::Generation(format!("seed {seed}: generated case violates invariants: {e}")))?;
    Ok(case)
}

/// Cases for seeds `base_seed .. base_seed + count`.
pub fn generate_dataset(base_seed: u64, count: usize, size: usize, n_beams: usize) -> Result<Vec<PhantomCase>> {
    (0..count as u64)
        .map(|i| generate_case(base_seed.wrapping_add(i), size, n_beams))
        .collect()
}

/// Stacks structures to `[B, 6, H, W]` and doses to `[B, 1, H, W]`.
pub fn stack_cases(cases: &[&PhantomCase]) -> Result<(Tensor, Tensor)> {
    let xs: Vec<&Tensor> = cases.iter().map(|c| &c.x).collect();
    let ys: Vec<&Tensor> = cases.iter().map(|c| &c.y).collect();
    Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?))
}

/// Seeded shuffle then partition into train/validation/test with sizes
/// rounded by largest remainder so they sum to the input count.
pub fn split_dataset<T: Clone>(items: &[T], fractions: (f64, f64, f64), seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let f = [fractions.0, fractions.1, fractions.2];
    contract!(f.iter().all(|&v| v >= 0.0), "split fractions must be non-negative");
    contract!(
        (f.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
        "split fractions {f:?} do not sum to 1"
    );
    let total = items.len();
    let exact: Vec<f64> = f.iter().map(|v| v * total as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let mut rest = total - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    for i in 0..3 {
        contract!(
            f[i] == 0.0 || sizes[i] > 0,
            "split {i} with fraction {} would be empty for {total} items",
            f[i]
        );
    }
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |r: std::ops::Range<usize>| r.map(|i| items[idx[i]].clone()).collect::<Vec<T>>();
    Ok((
        take(0..sizes[0]),
        take(sizes[0]..sizes[0] + sizes[1]),
        take(sizes[0] + sizes[1]..total),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let a = generate_case(1, 64, 9).unwrap();
        let b = generate_case(1, 64, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_case(2, 64, 9).unwrap();
        assert_ne!((a.geometry.ptv.cx, a.geometry.ptv.cy), (c.geometry.ptv.cx, c.geometry.ptv.cy));
    }

    #[test]
    fn invariants_hold_across_sizes() {
        for size in [16, 32, 64, 128] {
            for seed in 0..10 {
                generate_case(seed, size, 9).unwrap().check_invariants().unwrap();
            }
        }
    }

    #[test]
    fn bad_arguments_are_rejected() {
        assert!(generate_case(0, 40, 9).is_err());
        assert!(generate_case(0, 64, 0).is_err());
    }

    fn disk_body(size: usize) -> Ellipse {
        let s = size as f64;
        Ellipse {
            cx: s / 2.0,
            cy: s / 2.0,
            rx: 0.45 * s,
            ry: 0.45 * s,
            theta: 0.0,
        }
    }

    #[test]
    fn unattenuated_beam_is_flat_inside_band() {
        let body = disk_body(32);
        let beam = BeamSpec {
            angle: 0.0,
            width: 6.0,
            attenuation_mu: 0.0,
            weight: 2.0,
        };
        let d = beam_dose(&body, (16.0, 16.0), &[beam], 32);
        for r in 0..32 {
            for c in 0..32 {
                let v = d.data()[r * 32 + c];
                let in_band = ((r as f64 + 0.5) - 16.0).abs() <= 3.0;
                let in_body = body.contains(c as f64 + 0.5, r as f64 + 0.5);
                assert_eq!(v, if in_band && in_body { 2.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn perpendicular_beams_superpose() {
        let body = disk_body(32);
        let mk = |angle| BeamSpec {
            angle,
            width: 6.0,
            attenuation_mu: 0.0,
            weight: 1.0,
        };
        let single = beam_dose(&body, (16.0, 16.0), &[mk(0.0)], 32);
        let both = beam_dose(&body, (16.0, 16.0), &[mk(0.0), mk(PI / 2.0)], 32);
        let i = 16 * 32 + 16;
        assert_eq!(both.data()[i], 2.0 * single.data()[i]);
    }

    #[test]
    fn attenuation_decays_with_depth() {
        let body = disk_body(64);
        let beam = BeamSpec {
            angle: 0.0,
            width: 4.0,
            attenuation_mu: 0.05,
            weight: 1.0,
        };
        let d = beam_dose(&body, (32.0, 32.0), &[beam], 64);
        let row = &d.data()[32 * 64..33 * 64];
        let inside: Vec<f32> = row.iter().copied().filter(|v| *v > 0.0).collect();
        assert!(inside.windows(2).all(|w| w[1] < w[0]));
        // Entry pixel centre sits half a pixel or less past the surface.
        assert!(inside[0] > (-0.05f32 * 1.0).exp());
    }

    #[test]
    fn normalized_dose_has_unit_ptv_mean() {
        let case = generate_case(17, 64, 5).unwrap();
        let mean = masked_mean(case.y.data(), case.ptv_mask().data());
        assert!((mean - 1.0).abs() <= 1e-6);
        let empty = Tensor::zeros(&[1, 64, 64]);
        assert!(analytic_dose(&case.geometry.body, &empty, &case.beams, 64).is_err());
        assert!(analytic_dose(&case.geometry.body, &case.ptv_mask(), &[], 64).is_err());
    }

    #[test]
    fn full_scale_split_sizes() {
        let items: Vec<usize> = (0..130).collect();
        let (tr, va, te) = split_dataset(&items, (0.754, 0.077, 0.169), 3).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (98, 10, 22));
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(split_dataset(&items, (0.754, 0.077, 0.169), 3).unwrap(), (tr, va, te));
    }

    #[test]
    fn degenerate_splits() {
        let items: Vec<usize> = (0..7).collect();
        let (tr, va, te) = split_dataset(&items, (1.0, 0.0, 0.0), 0).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (7, 0, 0));
        assert!(split_dataset(&items[..2], (0.5, 0.25, 0.25), 0).is_err());
        assert!(split_dataset(&items, (0.5, 0.2, 0.2), 0).is_err());
    }
}
