//! Raw forward/backward kernels on flat buffers. Shapes are validated by the
//! graph layer before these are called.

use super::Float;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output columns `lo..hi` whose input column `ox + kx − pad` is in range,
/// for stride 1.
fn unit_stride_span(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).min(g.ow);
    let hi = (g.w + g.pad).saturating_sub(kx).min(g.ow).max(lo);
    (lo, hi)
}

fn im2col<F: Float>(x: &[F], g: &ConvGeom, cols: &mut [F]) {
    let p = g.col_cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = unit_stride_span(g, kx);
                        line[..lo].fill(F::zero());
                        line[hi..].fill(F::zero());
                        if lo < hi {
                            line[lo..hi].copy_from_slice(&src[lo + kx - g.pad..hi + kx - g.pad]);
                        }
                        continue;
                    }
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            F::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<F: Float>(cols: &[F], g: &ConvGeom, dx: &mut [F]) {
    let p = g.col_cols();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = unit_stride_span(g, kx);
                        let row = &src[oy * g.ow..(oy + 1) * g.ow];
                        for (d, v) in dst[lo + kx - g.pad..hi + kx - g.pad].iter_mut().zip(&row[lo..hi]) {
                            *d += *v;
                        }
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cache-blocked transpose of a `rows×cols` row-major matrix.
fn transpose<F: Float>(src: &[F], rows: usize, cols: usize, dst: &mut [F]) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<F: Float>(x: &[F], w: &[F], b: &[F], g: &ConvGeom) -> Vec<F> {
    let (kr, p) = (g.col_rows(), g.col_cols());
    let in_sz = g.cin * g.h * g.w;
    let out_sz = g.cout * p;
    let mut out = vec![F::zero(); g.n * out_sz];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![F::zero(); kr * p]
    };
    for n in 0..g.n {
        let xs = &x[n * in_sz..(n + 1) * in_sz];
        let o = &mut out[n * out_sz..(n + 1) * out_sz];
        for (co, row) in o.chunks_mut(p).enumerate() {
            row.fill(b[co]);
        }
        let c: &[F] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut cols);
            &cols
        };
        F::gemm(g.cout, kr, p, w, false, c, false, o, true);
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` is only computed when requested.
pub(crate) fn conv2d_backward<F: Float>(
    x: &[F],
    w: &[F],
    dy: &[F],
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<F>>, Vec<F>, Vec<F>) {
    let (kr, p) = (g.col_rows(), g.col_cols());
    let in_sz = g.cin * g.h * g.w;
    let out_sz = g.cout * p;
    let mut dw = vec![F::zero(); g.cout * kr];
    let mut db = vec![F::zero(); g.cout];
    let mut dx = need_dx.then(|| vec![F::zero(); g.n * in_sz]);
    let mut cols = vec![F::zero(); kr * p];
    // dW contracts over the spatial axis; feeding gemm a spatial-major copy
    // keeps its packing reads contiguous.
    let mut cols_t = vec![F::zero(); kr * p];
    for n in 0..g.n {
        let xs = &x[n * in_sz..(n + 1) * in_sz];
        let dys = &dy[n * out_sz..(n + 1) * out_sz];
        for (co, row) in dys.chunks(p).enumerate() {
            db[co] += row.iter().copied().sum::<F>();
        }
        if g.is_pointwise() {
            transpose(xs, kr, p, &mut cols_t);
            F::gemm(g.cout, p, kr, dys, false, &cols_t, false, &mut dw, true);
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[n * in_sz..(n + 1) * in_sz];
                F::gemm(kr, g.cout, p, w, true, dys, false, dxs, false);
            }
        } else {
            im2col(xs, g, &mut cols);
            transpose(&cols, kr, p, &mut cols_t);
            F::gemm(g.cout, p, kr, dys, false, &cols_t, false, &mut dw, true);
            if let Some(dx) = dx.as_mut() {
                F::gemm(kr, g.cout, p, w, true, dys, false, &mut cols, false);
                col2im(&cols, g, &mut dx[n * in_sz..(n + 1) * in_sz]);
            }
        }
    }
    (dx, dw, db)
}

pub(crate) struct NormStats<F> {
    pub mean: Vec<F>,
    pub rstd: Vec<F>,
}

pub(crate) fn group_norm_forward<F: Float>(
    x: &[F],
    (n, c, hw): (usize, usize, usize),
    groups: usize,
    gamma: &[F],
    beta: &[F],
    eps: f64,
) -> (Vec<F>, NormStats<F>) {
    let cpg = c / groups;
    let gsz = cpg * hw;
    let mut y = vec![F::zero(); x.len()];
    let mut mean = Vec::with_capacity(n * groups);
    let mut rstd = Vec::with_capacity(n * groups);
    for s in 0..n {
        for gi in 0..groups {
            let base = (s * c + gi * cpg) * hw;
            let xs = &x[base..base + gsz];
            let mut sum = 0.0f64;
            for v in xs {
                sum += v.to_f64().unwrap_or(f64::NAN);
            }
            let mu = sum / gsz as f64;
            let mut var = 0.0f64;
            for v in xs {
                let d = v.to_f64().unwrap_or(f64::NAN) - mu;
                var += d * d;
            }
            var /= gsz as f64;
            let r = 1.0 / (var + eps).sqrt();
            let (mu_f, r_f) = (F::from_f64_lossy(mu), F::from_f64_lossy(r));
            mean.push(mu_f);
            rstd.push(r_f);
            for ci in 0..cpg {
                let ch = gi * cpg + ci;
                let off = base + ci * hw;
                let (ga, be) = (gamma[ch], beta[ch]);
                for i in off..off + hw {
                    y[i] = (x[i] - mu_f) * r_f * ga + be;
                }
            }
        }
    }
    (y, NormStats { mean, rstd })
}

/// Returns `(dx, dgamma, dbeta)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward<F: Float>(
    x: &[F],
    (n, c, hw): (usize, usize, usize),
    groups: usize,
    gamma: &[F],
    stats: &NormStats<F>,
    dy: &[F],
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let cpg = c / groups;
    let gsz = cpg * hw;
    let m = F::from_usize(gsz).unwrap();
    let mut dx = vec![F::zero(); x.len()];
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for s in 0..n {
        for gi in 0..groups {
            let idx = s * groups + gi;
            let (mu, r) = (stats.mean[idx], stats.rstd[idx]);
            let base = (s * c + gi * cpg) * hw;
            let mut sum_dxhat = F::zero();
            let mut sum_dxhat_xhat = F::zero();
            for ci in 0..cpg {
                let ch = gi * cpg + ci;
                let off = base + ci * hw;
                for i in off..off + hw {
                    let xhat = (x[i] - mu) * r;
                    dgamma[ch] += dy[i] * xhat;
                    dbeta[ch] += dy[i];
                    let dxhat = dy[i] * gamma[ch];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
            }
            for ci in 0..cpg {
                let ch = gi * cpg + ci;
                let off = base + ci * hw;
                for i in off..off + hw {
                    let xhat = (x[i] - mu) * r;
                    let dxhat = dy[i] * gamma[ch];
                    dx[i] = r / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Single-head scaled dot-product attention over flattened spatial
/// positions. `q` is `[N, C, Pq]`, `k`/`v` are `[N, C, Pk]`. Returns the
/// attended values `[N, C, Pq]` and the softmax matrices `[N, Pq, Pk]`.
pub(crate) fn attend_forward<F: Float>(
    q: &[F],
    k: &[F],
    v: &[F],
    (n, c, pq, pk): (usize, usize, usize, usize),
) -> (Vec<F>, Vec<F>) {
    let scale = F::from_f64_lossy(1.0 / (c as f64).sqrt());
    let mut out = vec![F::zero(); n * c * pq];
    let mut probs = vec![F::zero(); n * pq * pk];
    for s in 0..n {
        let qs = &q[s * c * pq..(s + 1) * c * pq];
        let ks = &k[s * c * pk..(s + 1) * c * pk];
        let vs = &v[s * c * pk..(s + 1) * c * pk];
        let a = &mut probs[s * pq * pk..(s + 1) * pq * pk];
        F::gemm(pq, c, pk, qs, true, ks, false, a, false);
        for row in a.chunks_mut(pk) {
            let mx = row
                .iter()
                .fold(F::neg_infinity(), |m, &x| if x * scale > m { x * scale } else { m });
            let mut z = F::zero();
            for e in row.iter_mut() {
                *e = (*e * scale - mx).exp();
                z += *e;
            }
            for e in row.iter_mut() {
                *e = *e / z;
            }
        }
        let o = &mut out[s * c * pq..(s + 1) * c * pq];
        F::gemm(c, pk, pq, vs, false, a, true, o, false);
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
pub(crate) fn attend_backward<F: Float>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dout: &[F],
    (n, c, pq, pk): (usize, usize, usize, usize),
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let scale = F::from_f64_lossy(1.0 / (c as f64).sqrt());
    let mut dq = vec![F::zero(); q.len()];
    let mut dk = vec![F::zero(); k.len()];
    let mut dv = vec![F::zero(); v.len()];
    let mut ds = vec![F::zero(); pq * pk];
    for s in 0..n {
        let (qr, kr) = (s * c * pq..(s + 1) * c * pq, s * c * pk..(s + 1) * c * pk);
        let a = &probs[s * pq * pk..(s + 1) * pq * pk];
        let d_o = &dout[qr.clone()];
        F::gemm(c, pq, pk, d_o, false, a, false, &mut dv[kr.clone()], false);
        F::gemm(pq, c, pk, d_o, true, &v[kr.clone()], false, &mut ds, false);
        for (drow, arow) in ds.chunks_mut(pk).zip(a.chunks(pk)) {
            let dot: F = drow.iter().zip(arow).map(|(&d, &p)| d * p).sum();
            for (d, &p) in drow.iter_mut().zip(arow) {
                *d = p * (*d - dot) * scale;
            }
        }
        F::gemm(c, pk, pq, &k[kr.clone()], false, &ds, true, &mut dq[qr.clone()], false);
        F::gemm(c, pq, pk, &q[qr], false, &ds, false, &mut dk[kr], false);
    }
    (dq, dk, dv)
}
