use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbcc_core::correlators::{Correlator, MethodConfig};
use sbcc_core::peakfit::estimate_peak;
use sbcc_core::spectral::{forward_transform, shift_array};
use sbcc_core::synth::{generate_pair, FlowSpec, NoiseSpec, ParticleSpec};
use sbcc_core::{ContextBank, CorrelationPlane, GridSpec, Spectrum, Window};

fn methods() -> Vec<MethodConfig> {
    vec![
        MethodConfig::scc(),
        MethodConfig::pc(),
        MethodConfig::spof(),
        MethodConfig::rpc(),
        MethodConfig::cspc(0.5, 0.2),
        MethodConfig::cfcc(),
        MethodConfig::sbcc_b1(),
        MethodConfig::sbcc_b2(),
        MethodConfig::sbcc_b3(),
        MethodConfig::sbcc(),
    ]
}

fn window(seed: u64, n: usize) -> Window {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Window::from_fn(n, n, |_, _| rng.random::<f64>()).unwrap()
}

fn context(seed: u64, n: usize) -> ContextBank {
    let spectra: Vec<Spectrum> = (0..3).map(|k| forward_transform(&window(seed ^ (k + 1) * 7919, n))).collect();
    ContextBank::from_spectra(&spectra).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn planes_are_real(seed in any::<u64>(), m in 0usize..10, n in prop::sample::select(vec![8usize, 16])) {
        let cfg = methods()[m].clone();
        let f1 = forward_transform(&window(seed, n));
        let f2 = forward_transform(&window(seed.wrapping_add(1), n));
        let ctx = context(seed, n);
        let p = Correlator::new(cfg, n, n).unwrap().correlate(&f1, &f2, Some(&ctx)).unwrap();
        prop_assert!(p.imag_residual < 1e-10);
    }

    #[test]
    fn swapping_frames_mirrors_plane(seed in any::<u64>(), m in 0usize..10) {
        let cfg = methods()[m].clone();
        prop_assume!(cfg.name() != "cfcc");
        let n = 16;
        let f1 = forward_transform(&window(seed, n));
        let f2 = forward_transform(&window(seed.wrapping_add(1), n));
        let ctx = context(seed, n);
        let corr = Correlator::new(cfg, n, n).unwrap();
        let a = corr.correlate(&f1, &f2, Some(&ctx)).unwrap();
        let b = corr.correlate(&f2, &f1, Some(&ctx)).unwrap();
        let scale = a.data.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for ((iy, ix), v) in a.data.indexed_iter() {
            let (dx, dy) = a.displacement_of(ix, iy);
            prop_assert!((b.at(-dx, -dy) - v).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn sbcc_without_regularizers_is_pc_on_shifts(seed in any::<u64>(), dx in -5i64..=5, dy in -5i64..=5) {
        let n = 16;
        let w = window(seed, n);
        let f1 = forward_transform(&w);
        let f2 = forward_transform(&Window::new(shift_array(w.data(), dx, dy)).unwrap());
        let unit = Correlator::with_filters(
            MethodConfig::sbcc_with(0.0, 0.0, 0.0),
            Array2::ones((n, n)),
            Array2::zeros((n, n)),
        ).unwrap();
        let mut pc = MethodConfig::pc();
        pc.eps_guard = false;
        let a = unit.correlate(&f1, &f2, None).unwrap();
        let b = Correlator::new(pc, n, n).unwrap().correlate(&f1, &f2, None).unwrap();
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!((a.at(dx, dy) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn peak_estimate_follows_integer_plane_shift(
        cx in -6.0f64..6.0, cy in -6.0f64..6.0, sigma in 0.8f64..2.5, sx in -4i64..=4, sy in -4i64..=4,
    ) {
        let n = 32;
        let data = Array2::from_shape_fn((n, n), |(iy, ix)| {
            let x = ix as f64 - 16.0 - cx;
            let y = iy as f64 - 16.0 - cy;
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        });
        let base = estimate_peak(&CorrelationPlane::from_data(data.clone()), false).unwrap();
        let moved = estimate_peak(&CorrelationPlane::from_data(shift_array(&data, sx, sy)), false).unwrap();
        prop_assert!((moved.dx - base.dx - sx as f64).abs() < 1e-12);
        prop_assert!((moved.dy - base.dy - sy as f64).abs() < 1e-12);
        let (ix, iy) = (base.ix as f64 - 16.0, base.iy as f64 - 16.0);
        prop_assert!((base.dx - ix).abs() < 0.5 && (base.dy - iy).abs() < 0.5);
    }

    #[test]
    fn generation_is_a_function_of_the_seed(seed in any::<u64>(), u in -3.0f64..3.0, v in -3.0f64..3.0) {
        let p = ParticleSpec { rng_seed: seed, ..ParticleSpec::default() };
        let noise = NoiseSpec { gaussian_sigma: 0.02, out_of_plane_loss: 0.1, ..NoiseSpec::default() };
        let grid = GridSpec::default();
        let flow = FlowSpec::uniform(u, v);
        let a = generate_pair(64, &p, &flow, &noise, &grid).unwrap();
        let b = generate_pair(64, &p, &flow, &noise, &grid).unwrap();
        prop_assert_eq!(&a.image1, &b.image1);
        prop_assert_eq!(&a.image2, &b.image2);
        prop_assert!(a.image1.iter().chain(a.image2.iter()).all(|x| (0.0..=1.0).contains(x)));
    }
}
