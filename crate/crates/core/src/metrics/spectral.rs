use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{contract, Result};
use crate::numerics::Tensor;

/// Radius, in cycles per pixel, of the low-frequency disk. Nyquist is 0.5.
pub const LOW_BAND_RADIUS: f64 = 0.25;

fn signed_freq(k: usize, n: usize) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k / n as f64
}

fn plane(t: &Tensor) -> Result<(usize, usize)> {
    contract!(t.rank() >= 2, "expected an image, got shape {:?}", t.shape());
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    contract!(
        t.len() == h * w,
        "expected a single image plane, got shape {:?}",
        t.shape()
    );
    Ok((h, w))
}

/// Share of non-DC spectral energy outside the disk of radius
/// [`LOW_BAND_RADIUS`]. A constant image scores 0.
pub fn hf_energy_ratio(image: &Tensor) -> Result<f64> {
    let (h, w) = plane(image)?;
    contract!(h >= 4 && w >= 4, "image {h}×{w} is smaller than 4×4");
    let mut buf: Vec<Complex<f64>> = image.data().iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let row = planner.plan_fft_forward(w);
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let col = planner.plan_fft_forward(h);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            column[r] = buf[r * w + c];
        }
        col.process(&mut column);
        for r in 0..h {
            buf[r * w + c] = column[r];
        }
    }
    let (mut total, mut high) = (0.0, 0.0);
    for r in 0..h {
        let fy = signed_freq(r, h);
        for c in 0..w {
            if r == 0 && c == 0 {
                continue;
            }
            let fx = signed_freq(c, w);
            let e = buf[r * w + c].norm_sqr();
            total += e;
            if (fx * fx + fy * fy).sqrt() >= LOW_BAND_RADIUS {
                high += e;
            }
        }
    }
    let scale = buf[0].norm().max(1.0);
    Ok(if total <= 1e-24 * scale * scale { 0.0 } else { high / total })
}

/// Separable Gaussian blur with circular boundaries over the last two axes.
pub fn gaussian_blur(image: &Tensor, sigma: f64) -> Result<Tensor> {
    contract!(sigma > 0.0, "blur sigma must be positive, got {sigma}");
    contract!(image.rank() >= 2, "expected an image, got shape {:?}", image.shape());
    let s = image.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let wrap = |i: isize, n: usize| i.rem_euclid(n as isize) as usize;

    let mut out = Vec::with_capacity(image.len());
    for planed in image.data().chunks_exact(h * w) {
        let mut tmp = vec![0.0f64; h * w];
        for r in 0..h {
            for c in 0..w {
                tmp[r * w + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kv)| kv * planed[r * w + wrap(c as isize + k as isize - radius, w)] as f64)
                    .sum();
            }
        }
        for r in 0..h {
            for c in 0..w {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kv)| kv * tmp[wrap(r as isize + k as isize - radius, h) * w + c])
                    .sum();
                out.push(v as f32);
            }
        }
    }
    Tensor::new(s, out)
}
