use proptest::prelude::*;
use turbrestore_core::pgm::{decode_pgm, encode_pgm};
use turbrestore_core::sim::smooth_random_flow;
use turbrestore_core::solver::{PROX_MAX_ITERS, PROX_TOL};
use turbrestore_core::{
    apply_adjoint, apply_warp, compute_weights, nltv_energy, nltv_prox, BitDepth, FlowField, Image, NlParams,
    RunManifest, SimMode, SimParams, SolverConfig,
};

fn image(w: usize, h: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0..1.0f64, w * h).prop_map(move |d| Image::from_vec(w, h, d).unwrap())
}

fn sized_image() -> impl Strategy<Value = Image> {
    (4usize..20, 4usize..20).prop_flat_map(|(w, h)| image(w, h))
}

/// An image together with a smooth flow of the same size.
fn image_and_flow() -> impl Strategy<Value = (Image, FlowField)> {
    (4usize..24, 4usize..24, 0.0..4.0f64, any::<u64>()).prop_flat_map(|(w, h, amp, seed)| {
        let flow = smooth_random_flow(w, h, amp, 3.0, seed).unwrap();
        (image(w, h), Just(flow))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_identity((u, flow) in image_and_flow(), seed in any::<u64>()) {
        let (w, h) = u.dims();
        let r = Image::from_fn(w, h, |x, y| {
            let k = (x as u64 * 31 + y as u64 * 17) ^ seed;
            (k % 1009) as f64 / 1009.0 - 0.5
        });
        let lhs = apply_warp(&u, &flow).unwrap().dot(&r);
        let rhs = u.dot(&apply_adjoint(&r, &flow).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-9 * u.norm() * r.norm());
    }

    #[test]
    fn warp_is_linear((u, flow) in image_and_flow(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let v = u.map(|x| (x * 7.3).sin());
        let combo = u.zip_map(&v, |x, y| a * x + b * y).unwrap();
        let lhs = apply_warp(&combo, &flow).unwrap();
        let wu = apply_warp(&u, &flow).unwrap();
        let wv = apply_warp(&v, &flow).unwrap();
        let rhs = wu.zip_map(&wv, |x, y| a * x + b * y).unwrap();
        for (p, q) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_flow_is_identity(u in sized_image()) {
        let (w, h) = u.dims();
        let zero = FlowField::zeros(w, h);
        prop_assert_eq!(apply_warp(&u, &zero).unwrap(), u.clone());
        prop_assert_eq!(apply_adjoint(&u, &zero).unwrap(), u);
    }

    #[test]
    fn energy_ignores_constant_shift(u in image(12, 12), c in -1.0..1.0f64) {
        let params = NlParams::default();
        let g = compute_weights(&u, &params).unwrap();
        let e = nltv_energy(&u, &g, params.sqrt_epsilon).unwrap();
        let shifted = nltv_energy(&u.map(|x| x + c), &g, params.sqrt_epsilon).unwrap();
        prop_assert!((e - shifted).abs() <= 1e-9 * e.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prox_keeps_the_mean(v in image(12, 12), mu in 0.01..2.0f64) {
        let params = NlParams::default();
        let g = compute_weights(&v, &params).unwrap();
        let u = nltv_prox(&v, &g, mu, &params, PROX_MAX_ITERS, PROX_TOL).unwrap();
        prop_assert!((u.mean() - v.mean()).abs() <= 1e-6);
    }
}

proptest! {
    #[test]
    fn pgm_round_trip_16bit(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let img = Image::from_fn(w, h, |x, y| {
            ((x as u64 * 2654435761 + y as u64 * 40503 + seed) % 65536) as f64 / 65535.0
        });
        let bytes = encode_pgm(&img, BitDepth::Sixteen);
        let back = decode_pgm(&bytes).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(encode_pgm(&back, BitDepth::Sixteen), bytes);
    }

    #[test]
    fn pgm_round_trip_8bit(data in prop::collection::vec(any::<u8>(), 1..64)) {
        let w = data.len();
        let mut bytes = format!("P5\n{w} 1\n255\n").into_bytes();
        bytes.extend_from_slice(&data);
        let img = decode_pgm(&bytes).unwrap();
        prop_assert_eq!(encode_pgm(&img, BitDepth::Eight), bytes);
    }

    #[test]
    fn manifest_round_trip(
        lambda0 in 0.01..10.0f64,
        delta in prop::option::of(0.001..1.0f64),
        outer in 1usize..50,
        h in 0.001..1.0f64,
        amplitude in 0.0..8.0f64,
        seed in any::<u64>(),
        random in any::<bool>(),
    ) {
        let mut cfg = SolverConfig::with_lambda0(lambda0);
        cfg.delta = delta;
        cfg.outer_iters = outer;
        cfg.nl.h = h;
        let sim = SimParams {
            amplitude,
            phase_seed: seed,
            mode: if random { SimMode::SmoothRandom } else { SimMode::Wave },
            ..SimParams::default()
        };
        let mut m = RunManifest::new("restore");
        m.put_solver_config(&cfg);
        m.put_sim_params(&sim);
        let parsed = RunManifest::parse(&m.to_string()).unwrap();
        prop_assert_eq!(&parsed, &m);
        prop_assert_eq!(parsed.solver_config().unwrap(), cfg);
        prop_assert_eq!(parsed.sim_params().unwrap(), sim);
    }
}
