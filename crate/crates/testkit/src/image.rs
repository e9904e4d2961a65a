//! Image oracles.

/// Bilinear interpolation written as a sum over every pixel with tent weights.
pub fn bilinear(pixels: &[f64], width: usize, height: usize, u: f64, v: f64) -> f64 {
    let mut acc = 0.0;
    for y in 0..height {
        let wy = 1.0 - (v - y as f64).abs();
        if wy <= 0.0 {
            continue;
        }
        for x in 0..width {
            let wx = 1.0 - (u - x as f64).abs();
            if wx <= 0.0 {
                continue;
            }
            acc += wx * wy * pixels[y * width + x];
        }
    }
    acc
}

/// 2×2 block average; odd trailing rows and columns are dropped.
pub fn box_downsample(pixels: &[f64], width: usize, height: usize) -> (Vec<f64>, usize, usize) {
    let (w, h) = (width / 2, height / 2);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    s += pixels[(2 * y + dy) * width + 2 * x + dx];
                }
            }
            out.push(s / 4.0);
        }
    }
    (out, w, h)
}
