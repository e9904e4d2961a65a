//! Image losses (L1, SSIM) with gradients, and PSNR.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::{Rgb, RgbImage};
use crate::math;
use crate::{Error, Result};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::invalid("image dimensions differ"));
    }
    Ok(())
}

/// Mean absolute difference over all pixels and channels.
pub fn l1(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a.pixels().iter().zip(b.pixels()).flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).abs())).sum();
    Ok(sum / (3 * a.pixels().len()) as f64)
}

/// `10 log10(1 / MSE)`; identical images give `+inf`.
pub fn psnr(rendered: &RgbImage, target: &RgbImage) -> Result<f64> {
    check_dims(rendered, target)?;
    let sum: f64 = rendered
        .pixels()
        .iter()
        .zip(target.pixels())
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]) * (p[c] - q[c])))
        .sum();
    let mse = sum / (3 * rendered.pixels().len()) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * math::log10(mse))
}

fn kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = math::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian blur with zero padding ("same" size).
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW / 2;
    let mut tmp = vec![0.0; w * h];
    for (row, out) in src.chunks_exact(w).zip(tmp.chunks_exact_mut(w)) {
        for (x, o) in out.iter_mut().enumerate() {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            *o = row[lo..=hi].iter().zip(&k[lo + r - x..]).map(|(v, kk)| v * kk).sum();
        }
    }
    // Vertical pass as weighted sums of whole rows.
    let mut out = vec![0.0; w * h];
    for (y, dst) in out.chunks_exact_mut(w).enumerate() {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for yy in lo..=hi {
            let kk = k[yy + r - y];
            for (d, v) in dst.iter_mut().zip(&tmp[yy * w..(yy + 1) * w]) {
                *d += kk * v;
            }
        }
    }
    out
}

fn channel(img: &RgbImage, c: usize) -> Vec<f64> {
    img.pixels().iter().map(|p| p[c]).collect()
}

/// Mean SSIM (11×11 Gaussian window, σ 1.5) and optionally its gradient with
/// respect to `x`.
fn ssim_impl(x_img: &RgbImage, y_img: &RgbImage, want_grad: bool) -> (f64, Vec<Rgb>) {
    let (w, h) = (x_img.width(), x_img.height());
    let n = w * h;
    let k = kernel();
    let norm = 1.0 / (3 * n) as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { vec![[0.0; 3]; n] } else { Vec::new() };
    for c in 0..3 {
        let x = channel(x_img, c);
        let y = channel(y_img, c);
        let sq = |v: &[f64]| v.iter().map(|a| a * a).collect::<Vec<_>>();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = blur(&x, w, h, &k);
        let my = blur(&y, w, h, &k);
        let exx = blur(&sq(&x), w, h, &k);
        let eyy = blur(&sq(&y), w, h, &k);
        let exy = blur(&xy, w, h, &k);
        let mut d_mu = vec![0.0; n];
        let mut d_exx = vec![0.0; n];
        let mut d_exy = vec![0.0; n];
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let sx = exx[i] - ux * ux;
            let sy = eyy[i] - uy * uy;
            let sxy = exy[i] - ux * uy;
            let a1 = 2.0 * ux * uy + C1;
            let a2 = 2.0 * sxy + C2;
            let b1 = ux * ux + uy * uy + C1;
            let b2 = sx + sy + C2;
            let d = b1 * b2;
            let s = a1 * a2 / d;
            total += s;
            if want_grad {
                // Arranged so that identical inputs cancel exactly.
                let kk = a1 / d;
                d_mu[i] = norm * (2.0 / d) * (uy * (a2 - a1) + ux * s * (b1 - b2));
                d_exx[i] = -norm * kk * (a2 / b2);
                d_exy[i] = norm * 2.0 * kk;
            }
        }
        if want_grad {
            let g_mu = blur(&d_mu, w, h, &k);
            let g_xx = blur(&d_exx, w, h, &k);
            let g_xy = blur(&d_exy, w, h, &k);
            for i in 0..n {
                grad[i][c] = g_mu[i] + 2.0 * x[i] * g_xx[i] + y[i] * g_xy[i];
            }
        }
    }
    (total * norm, grad)
}

pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_dims(a, b)?;
    Ok(ssim_impl(a, b, false).0)
}

/// `l1_weight · L1 + ssim_weight · (1 − SSIM)` and its gradient with respect
/// to every rendered pixel.
pub fn loss_and_gradient(
    rendered: &RgbImage,
    target: &RgbImage,
    l1_weight: f64,
    ssim_weight: f64,
) -> Result<(f64, Vec<Rgb>)> {
    check_dims(rendered, target)?;
    let n = rendered.pixels().len();
    let scale = l1_weight / (3 * n) as f64;
    let mut l1_sum = 0.0;
    let mut grad: Vec<Rgb> = rendered
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(p, q)| {
            let mut g = [0.0; 3];
            for c in 0..3 {
                let d = p[c] - q[c];
                l1_sum += d.abs();
                g[c] = if d > 0.0 {
                    scale
                } else if d < 0.0 {
                    -scale
                } else {
                    0.0
                };
            }
            g
        })
        .collect();
    let mut loss = l1_weight * l1_sum / (3 * n) as f64;
    if ssim_weight != 0.0 {
        let (s, ds) = ssim_impl(rendered, target, true);
        loss += ssim_weight * (1.0 - s);
        for (g, d) in grad.iter_mut().zip(&ds) {
            for c in 0..3 {
                g[c] -= ssim_weight * d[c];
            }
        }
    }
    Ok((loss, grad))
}
