use densesplat::synth::{generate_synthetic_scene, SynthConfig};

/// Fraction of interior pixels whose central differences are exactly zero.
fn flat_fraction(fraction: f64, seed: u64) -> f64 {
    let cfg = SynthConfig { frames: 5, textureless_fraction: fraction, ..SynthConfig::default() };
    let scene = generate_synthetic_scene(seed, &cfg).unwrap();
    let (w, h) = (cfg.width, cfg.height);
    let mut flat = 0usize;
    let mut total = 0usize;
    for f in &scene.frames {
        let luma: Vec<f64> = f.color.pixels().iter().map(|p| p[0] + p[1] + p[2]).collect();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let gx = luma[y * w + x + 1] - luma[y * w + x - 1];
                let gy = luma[(y + 1) * w + x] - luma[(y - 1) * w + x];
                total += 1;
                if gx == 0.0 && gy == 0.0 {
                    flat += 1;
                }
            }
        }
    }
    flat as f64 / total as f64
}

#[test]
fn textureless_fraction_matches_gradient_census() {
    for seed in 0..3 {
        let f = flat_fraction(0.3, seed);
        assert!((0.22..=0.38).contains(&f), "seed {seed}: {f:.3} of pixels are flat");
    }
}

#[test]
fn fully_textured_room_has_no_flat_pixels() {
    assert!(flat_fraction(0.0, 0) < 0.01);
}
