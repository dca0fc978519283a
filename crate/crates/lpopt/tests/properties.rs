//! Property tests for the quantizer contract, the equivalence probe, and
//! the serialization round trips.

use proptest::prelude::*;

use lpopt::fpquant::{quantize_scalar, QuantSpec, Rounding};
use lpopt::mat::Mat;
use lpopt::optim::adam_equivalence_probe;
use lpopt::problems::rosenbrock_value;
use lpopt::rng::RngStream;
use lpopt::trainloop::{records_from_csv, records_to_csv, TrainRecord};

/// Normal (non-subnormal) finite doubles across a wide exponent range.
fn safe_f64() -> impl Strategy<Value = f64> {
    (any::<bool>(), -300i32..300, 0u64..(1 << 52)).prop_map(|(neg, e, mant)| {
        let base = (2.0f64).powi(e);
        let frac = 1.0 + mant as f64 / (1u64 << 52) as f64;
        if neg {
            -base * frac
        } else {
            base * frac
        }
    })
}

fn mode_strategy() -> impl Strategy<Value = Rounding> {
    prop_oneof![
        Just(Rounding::Truncate),
        Just(Rounding::NearestEven),
        Just(Rounding::Stochastic),
    ]
}

proptest! {
    #[test]
    fn relative_error_bound(x in safe_f64(), m in 0u32..=52, mode in mode_strategy(), seed in any::<u64>()) {
        let spec = QuantSpec::new(m, mode);
        let mut rng = RngStream::new(seed, 0);
        let qx = quantize_scalar(x, &spec, &mut rng).unwrap();
        let q = (2.0f64).powi(-(m.min(52) as i32));
        prop_assert!((qx - x).abs() <= q * x.abs(), "x={x:e} qx={qx:e} M={m}");
        // sign is never flipped
        prop_assert!(qx == 0.0 || qx.signum() == x.signum());
    }

    #[test]
    fn deterministic_modes_are_idempotent(x in safe_f64(), m in 0u32..=52) {
        let mut rng = RngStream::new(0, 0);
        for mode in [Rounding::Truncate, Rounding::NearestEven] {
            let spec = QuantSpec::new(m, mode);
            let q1 = quantize_scalar(x, &spec, &mut rng).unwrap();
            let q2 = quantize_scalar(q1, &spec, &mut rng).unwrap();
            prop_assert_eq!(q1.to_bits(), q2.to_bits());
        }
    }

    #[test]
    fn truncation_error_never_grows_with_more_bits(x in safe_f64()) {
        let mut rng = RngStream::new(0, 0);
        let mut prev = f64::INFINITY;
        for m in 0..=52u32 {
            let spec = QuantSpec::new(m, Rounding::Truncate);
            let err = (quantize_scalar(x, &spec, &mut rng).unwrap() - x).abs();
            prop_assert!(err <= prev);
            prev = err;
        }
    }

    #[test]
    fn probe_proportionality(
        beta in 0.05f64..0.95,
        q in 0.0f64..0.5,
        seed in any::<u64>(),
        len in 1usize..60,
    ) {
        let mut rng = RngStream::new(seed, 1);
        let inputs: Vec<f64> = (0..len).map(|_| rng.next_normal()).collect();
        let deltas: Vec<f64> = (0..len).map(|_| q * (2.0 * rng.next_f64() - 1.0)).collect();
        let (a, c) = adam_equivalence_probe(beta, q, &inputs, &deltas).unwrap();
        for k in 0..len {
            let expect = (1.0 - beta) * a[k];
            prop_assert!((c[k] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn rosenbrock_positive_away_from_minimum(seed in any::<u64>(), rows in 1usize..6, cols in 2usize..8) {
        let mut rng = RngStream::new(seed, 2);
        let w = Mat::gaussian(rows, cols, &mut rng);
        let v = rosenbrock_value(&w);
        prop_assert!(v >= 0.0);
        let dist = w.sub(&Mat::filled(rows, cols, 1.0)).unwrap().frob_norm();
        if dist > 1e-4 {
            prop_assert!(v > 0.0);
        }
        prop_assert_eq!(rosenbrock_value(&Mat::filled(rows, cols, 1.0)), 0.0);
    }

    #[test]
    fn transpose_reverses_products(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 3);
        let a = Mat::gaussian(4, 3, &mut rng);
        let b = Mat::gaussian(3, 5, &mut rng);
        let lhs = a.matmul(&b).unwrap().transpose();
        let rhs = b.transpose().matmul(&a.transpose()).unwrap();
        let scale = lhs.frob_norm().max(1.0);
        prop_assert!(lhs.sub(&rhs).unwrap().frob_norm() <= 1e-12 * scale);
    }

    #[test]
    fn csv_round_trip_is_bit_exact(
        rows in proptest::collection::vec(
            (0usize..100_000, safe_f64(), safe_f64(),
             proptest::option::of(0.0f64..1.0), proptest::option::of(0.0f64..1.0),
             proptest::option::of(0.0f64..1.0), proptest::option::of(0.0f64..1.0),
             safe_f64()),
            0..20,
        )
    ) {
        let records: Vec<TrainRecord> = rows
            .into_iter()
            .map(|(t, loss, grad_norm, qw, qg, qm, qv, update)| TrainRecord {
                t,
                loss,
                grad_norm,
                qerr_w: qw,
                qerr_g: qg,
                qerr_m: qm,
                qerr_v: qv,
                update_norm: update,
                wall_ns: 0,
            })
            .collect();
        let text = records_to_csv(&records);
        let parsed = records_from_csv(&text).unwrap();
        prop_assert_eq!(parsed.len(), records.len());
        for (a, b) in parsed.iter().zip(&records) {
            prop_assert_eq!(a.t, b.t);
            prop_assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            prop_assert_eq!(a.grad_norm.to_bits(), b.grad_norm.to_bits());
            prop_assert_eq!(a.update_norm.to_bits(), b.update_norm.to_bits());
            prop_assert_eq!(a.qerr_w.map(f64::to_bits), b.qerr_w.map(f64::to_bits));
            prop_assert_eq!(a.qerr_g.map(f64::to_bits), b.qerr_g.map(f64::to_bits));
            prop_assert_eq!(a.qerr_m.map(f64::to_bits), b.qerr_m.map(f64::to_bits));
            prop_assert_eq!(a.qerr_v.map(f64::to_bits), b.qerr_v.map(f64::to_bits));
        }
    }
}
