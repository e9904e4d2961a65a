use densesplat_core::{bilinear_sample, build_pyramid, image_gradient, IntensityImage};
use densesplat_testkit::image::{bilinear, box_downsample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> IntensityImage {
    IntensityImage::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
}

#[test]
fn bilinear_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = random_image(&mut rng, 23, 17);
    for _ in 0..1000 {
        let u = rng.gen_range(0.0..=22.0);
        let v = rng.gen_range(0.0..=16.0);
        let fast = bilinear_sample(&img, u, v).unwrap();
        let slow = bilinear(img.pixels(), 23, 17, u, v);
        assert!((fast - slow).abs() < 1e-12, "({u}, {v}): {fast} vs {slow}");
    }
}

#[test]
fn bilinear_is_bounded_by_its_neighbours() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = random_image(&mut rng, 12, 9);
    for _ in 0..500 {
        let u: f64 = rng.gen_range(0.0..11.0);
        let v: f64 = rng.gen_range(0.0..8.0);
        let (x, y) = (u.floor() as usize, v.floor() as usize);
        let n = [img.get(x, y), img.get(x + 1, y), img.get(x, y + 1), img.get(x + 1, y + 1)];
        let s = bilinear_sample(&img, u, v).unwrap();
        let lo = n.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = n.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(s >= lo - 1e-15 && s <= hi + 1e-15);
    }
}

#[test]
fn gradient_matches_differences_of_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = IntensityImage::from_fn(40, 30, |x, y| 0.5 + 0.3 * (0.3 * x as f64).sin() * (0.2 * y as f64).cos());
    for _ in 0..100 {
        let u = rng.gen_range(1.0..38.0);
        let v = rng.gen_range(1.0..28.0);
        let (gx, gy) = image_gradient(&img, u, v).unwrap();
        let fx = (bilinear_sample(&img, u + 1.0, v).unwrap() - bilinear_sample(&img, u - 1.0, v).unwrap()) / 2.0;
        let fy = (bilinear_sample(&img, u, v + 1.0).unwrap() - bilinear_sample(&img, u, v - 1.0).unwrap()) / 2.0;
        assert!((gx - fx).abs() < 1e-6 && (gy - fy).abs() < 1e-6);
    }
}

#[test]
fn pyramid_levels_are_block_averages() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let img = random_image(&mut rng, 8, 8);
        let pyr = build_pyramid(&img, 3).unwrap();
        let (mut expect, mut w, mut h) = (img.pixels().to_vec(), 8, 8);
        for level in pyr.levels().iter().skip(1) {
            (expect, w, h) = box_downsample(&expect, w, h);
            assert_eq!((level.width(), level.height()), (w, h));
            for (a, b) in level.pixels().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
