use proptest::prelude::*;
use shapebias_core::distort::*;
use shapebias_core::image::Image;
use shapebias_core::rng::rng_from;

fn image(h: usize, w: usize, seed: u64) -> Image {
    let px = (0..h * w * 3).map(|i| ((i as u64 * 7919 + seed * 104729) % 1009) as f64 / 1008.0).collect();
    Image::new(h, w, px).unwrap()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s
}

#[test]
fn saturation_two_is_identity() {
    let img = image(8, 8, 1);
    let out = saturate(&img, 2.0).unwrap();
    for (a, b) in img.pixels().iter().zip(out.pixels()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn saturation_fixed_points() {
    for p in [0.25, 1.0, 4.0, 1024.0, f64::INFINITY] {
        for v in [0.0, 0.5, 1.0] {
            assert_eq!(saturate_value(v, p), v, "p={p} v={v}");
        }
    }
}

#[test]
fn patch_shuffle_quadrant_swap() {
    let px: Vec<f64> = (0..16).flat_map(|i| [i as f64 / 15.0; 3]).collect();
    let img = Image::new(4, 4, px).unwrap();
    let out = patch_permute(&img, 2, &[1, 0, 3, 2]).unwrap();
    let rows: Vec<Vec<usize>> = (0..4).map(|y| (0..4).map(|x| (out.get(y, x, 0) * 15.0).round() as usize).collect()).collect();
    assert_eq!(rows, vec![vec![2, 3, 0, 1], vec![6, 7, 4, 5], vec![10, 11, 8, 9], vec![14, 15, 12, 13]]);
}

#[test]
fn low_and_high_pass_are_complements() {
    for (h, w) in [(8, 8), (12, 10), (32, 32), (7, 9)] {
        let img = image(h, w, 3);
        for r in [0.1, 0.3, 0.5, 0.9] {
            let low = fourier_filter_raw(&img, FourierMask::Low(r), &mut rng_from(0));
            let high = fourier_filter_raw(&img, FourierMask::High(r), &mut rng_from(0));
            let n = img.pixels().len() as f64;
            let rms = (img.pixels().iter().zip(low.values.iter().zip(&high.values)).map(|(x, (l, hh))| (x - l - hh).powi(2)).sum::<f64>() / n).sqrt();
            assert!(rms < 1e-6, "{h}x{w} r={r}: {rms}");
            assert!(low.max_imaginary < 1e-9 && high.max_imaginary < 1e-9);
        }
    }
}

#[test]
fn random_filter_extremes() {
    let img = image(16, 12, 5);
    let keep = fourier_filter_raw(&img, FourierMask::Random(0.0), &mut rng_from(1));
    for (a, b) in img.pixels().iter().zip(&keep.values) {
        assert!((a - b).abs() < 1e-9);
    }
    let drop = fourier_filter_raw(&img, FourierMask::Random(1.0), &mut rng_from(1));
    assert!(drop.values.iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn random_mask_is_conjugate_symmetric() {
    for (h, w) in [(8, 8), (9, 6), (32, 32)] {
        let m = fourier_mask(h, w, FourierMask::Random(0.5), &mut rng_from(11));
        for u in 0..h {
            for v in 0..w {
                assert_eq!(m[u * w + v], m[((h - u) % h) * w + (w - v) % w]);
            }
        }
        let img = image(h, w, 2);
        assert!(fourier_filter_raw(&img, FourierMask::Random(0.5), &mut rng_from(11)).max_imaginary < 1e-9);
    }
}

#[test]
fn dataset_distortion_is_per_image_reproducible() {
    let spec = DistortionSpec::new("patch:4".parse().unwrap(), 42);
    let img = image(32, 32, 9);
    assert_eq!(spec.apply(&img, 17).unwrap(), spec.apply(&img, 17).unwrap());
    assert_ne!(spec.apply(&img, 17).unwrap(), spec.apply(&img, 18).unwrap());
}

proptest! {
    #[test]
    fn saturation_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, p in 0.05f64..2000.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(saturate_value(lo, p) <= saturate_value(hi, p));
        prop_assert!((0.0..=1.0).contains(&saturate_value(a, p)));
    }

    #[test]
    fn patch_shuffle_conserves_pixels(seed in 0u64..10_000, k in 2usize..6, h in 6usize..20, w in 6usize..20) {
        prop_assume!(k <= h.min(w));
        let img = image(h, w, seed);
        let cropped = crop_to_multiple(&img, k).unwrap();
        let perm = random_patch_order(k, &mut rng_from(seed));
        let out = patch_permute(&img, k, &perm).unwrap();
        prop_assert_eq!(sorted(out.pixels()), sorted(cropped.pixels()));
        let back = patch_permute(&out, k, &inverse_permutation(&perm)).unwrap();
        prop_assert_eq!(back, cropped);
    }

    #[test]
    fn filters_stay_in_range(seed in 0u64..1000, r in 0.05f64..1.0) {
        let img = image(10, 10, seed);
        for m in [FourierMask::Low(r), FourierMask::High(r), FourierMask::Random(r)] {
            let out = fourier_filter(&img, m, &mut rng_from(seed)).unwrap();
            prop_assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
