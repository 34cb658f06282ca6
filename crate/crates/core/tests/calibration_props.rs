use hyperseg::calibration::{calibrate, reflectance, ReferencePair};
use hyperseg::hypercube::{HyperCube, WavelengthGrid};
use proptest::prelude::*;

fn cube(h: usize, w: usize, values: Vec<f32>) -> HyperCube {
    let bands = values.len() / (h * w);
    HyperCube::new(h, w, values, WavelengthGrid::uniform(400.0, 1000.0, bands).unwrap(), false).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scalar_kernel_is_affine_invariant(
        l in -1e3f64..1e4, dark in 0.0f64..1e3, gap in 1.0f64..1e4,
        a in 1e-3f64..1e3, b in -1e4f64..1e4,
    ) {
        let white = dark + gap;
        let r0 = reflectance(l, white, dark).unwrap();
        let r1 = reflectance(a * l + b, a * white + b, a * dark + b).unwrap();
        prop_assert!((r0 - r1).abs() <= 1e-12 * r0.abs().max(1.0), "{} vs {}", r0, r1);
    }

    #[test]
    fn cube_calibration_is_affine_invariant(
        counts in prop::collection::vec(0u16..4096, 2 * 3 * 4),
        dark in prop::collection::vec(0u16..200, 4),
        gap in prop::collection::vec(1u16..3000, 4),
        scale_exp in -4i32..5, offset in 0u16..512,
    ) {
        // power-of-two scale and integer offset keep every input exact in f32
        let a = 2f64.powi(scale_exp);
        let b = offset as f64;
        let white: Vec<f32> = dark.iter().zip(&gap).map(|(d, g)| (d + g) as f32).collect();
        let darkf: Vec<f32> = dark.iter().map(|&d| d as f32).collect();
        let raw: Vec<f32> = counts.iter().map(|&c| c as f32).collect();
        let map = |v: &[f32]| v.iter().map(|&x| (a * x as f64 + b) as f32).collect::<Vec<_>>();
        let refs = ReferencePair::new(cube(1, 1, white.clone()), cube(1, 1, darkf.clone())).unwrap();
        let scaled = ReferencePair::new(cube(1, 1, map(&white)), cube(1, 1, map(&darkf))).unwrap();
        let (c0, r0) = calibrate(&cube(2, 3, raw.clone()), &refs, false).unwrap();
        let (c1, r1) = calibrate(&cube(2, 3, map(&raw)), &scaled, false).unwrap();
        prop_assert_eq!(r0, r1);
        for (x, y) in c0.values().iter().zip(c1.values()) {
            prop_assert!(((x - y) as f64).abs() <= 1e-12 * (*x as f64).abs().max(1.0));
        }
    }

    #[test]
    fn output_increases_with_intensity(l in -1e3f64..1e4, step in 1e-3f64..1e3, dark in 0.0f64..100.0, gap in 1.0f64..1e4) {
        let white = dark + gap;
        prop_assert!(reflectance(l + step, white, dark).unwrap() > reflectance(l, white, dark).unwrap());
    }

    #[test]
    fn unclipped_cube_matches_scalar_recomputation(
        raw in prop::collection::vec(0.0f32..5000.0, 3 * 2 * 5),
        white in prop::collection::vec(3000.0f32..5000.0, 3 * 2 * 5),
        dark in prop::collection::vec(0.0f32..300.0, 3 * 2 * 5),
    ) {
        let refs = ReferencePair::new(cube(3, 2, white.clone()), cube(3, 2, dark.clone())).unwrap();
        let (out, report) = calibrate(&cube(3, 2, raw.clone()), &refs, false).unwrap();
        prop_assert_eq!(report.invalid_pixel_count, 0);
        for i in 0..raw.len() {
            let expect = (raw[i] as f64 - dark[i] as f64) / (white[i] as f64 - dark[i] as f64);
            prop_assert_eq!(out.values()[i], expect as f32);
        }
    }
}
