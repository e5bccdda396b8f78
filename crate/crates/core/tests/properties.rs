//! Randomised invariants of the building blocks.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pdesde::brownian::sample_brownian;
use pdesde::control::{closed_loop_spectrum, solve_riccati, stabilizing_gain, ArtsteinState, LqWeights, Predictor};
use pdesde::grid::make_grid;
use pdesde::kernels::{solve_kernels_default, KernelSet};
use pdesde::params::SystemParams;
use pdesde::profile::Profile;
use pdesde::sim::transform::{invert_profile, transform_profile};
use pdesde::stats::{pairwise_sum, variance};

const NX: usize = 24;

fn fig1_kernels() -> &'static KernelSet {
    static KS: OnceLock<KernelSet> = OnceLock::new();
    KS.get_or_init(|| solve_kernels_default(&SystemParams::fig1(), NX).unwrap())
}

fn predictor(a: f64) -> Arc<Predictor> {
    let p = SystemParams { a: DMatrix::from_element(1, 1, a), ..SystemParams::fig1() };
    let g = make_grid(&p, 20).unwrap();
    Arc::new(Predictor::new(&p.a, &p.b, &g))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gain_places_the_requested_poles(
        a in prop::array::uniform4(-2.0..2.0f64),
        b in prop::array::uniform2(-2.0..2.0f64),
        h in 0.0..1.0f64,
        p1 in -3.0..-0.2f64,
        gap in 0.3..2.0f64,
    ) {
        let a = DMatrix::from_row_slice(2, 2, &a);
        let b = DVector::from_column_slice(&b);
        let c = DMatrix::from_columns(&[b.clone(), &a * &b]);
        prop_assume!(c.determinant().abs() > 0.2);
        let poles = [p1, p1 - gap];
        let k = stabilizing_gain(&a, &b, h, &poles).unwrap();
        let bbar = pdesde::linalg::expm(&a, -h) * &b;
        let spec = closed_loop_spectrum(&a, &bbar, &k);
        let mut want = poles.to_vec();
        want.sort_by(f64::total_cmp);
        for ((re, im), p) in spec.iter().zip(&want) {
            prop_assert!((re - p).abs() < 1e-6 * (1.0 + p.abs()), "{spec:?} vs {want:?}");
            prop_assert!(im.abs() < 1e-6);
        }
    }

    #[test]
    fn empty_buffer_predicts_the_state(a in -2.0..2.0f64, x in -10.0..10.0f64) {
        let s = ArtsteinState::zero(predictor(a));
        let x = DVector::from_element(1, x);
        prop_assert_eq!(s.predict(&x), x);
    }

    #[test]
    fn constant_input_without_drift_adds_its_integral(c in -5.0..5.0f64, x in -10.0..10.0f64) {
        let pred = predictor(0.0);
        let h = pred.delay;
        let s = ArtsteinState::new(pred, &vec![c; 1000]);
        let y = s.predict(&DVector::from_element(1, x));
        prop_assert!((y[0] - (x + c * h)).abs() < 1e-12 * (1.0 + x.abs() + c.abs()));
    }

    #[test]
    fn riccati_stays_symmetric_and_nonnegative(
        a in prop::array::uniform4(-1.0..1.0f64),
        b in prop::array::uniform2(-1.0..1.0f64),
        l in prop::array::uniform4(-1.0..1.0f64),
        r in 0.05..2.0f64,
    ) {
        let a = DMatrix::from_row_slice(2, 2, &a);
        let b = DVector::from_column_slice(&b);
        let l = DMatrix::from_row_slice(2, 2, &l);
        let q = &l * l.transpose();
        let w = LqWeights::constant(&q, r);
        let p = solve_riccati(&w, &a, &b, 0.5, 3.0, 0.01).unwrap();
        for t in [0.0, 1.0, 2.5, 3.0] {
            let m = p.at(t);
            prop_assert!((&m - m.transpose()).amax() <= 1e-10 * (1.0 + m.amax()));
            let scale = 1.0 + m.amax();
            let ev = m.symmetric_eigen().eigenvalues;
            prop_assert!(ev.min() >= -1e-9 * scale, "P({t}) eigenvalues {ev}");
        }
        prop_assert!(p.at(3.0).amax() < 1e-12);
    }

    #[test]
    fn backstepping_map_inverts(
        u in prop::collection::vec(-1.0..1.0f64, NX + 1),
        v in prop::collection::vec(-1.0..1.0f64, NX + 1),
        x in -3.0..3.0f64,
    ) {
        let ks = fig1_kernels();
        let x = DVector::from_element(1, x);
        let (alpha, beta) = transform_profile(&u, &v, &x, ks);
        let (u2, v2) = invert_profile(&alpha, &beta, &x, ks).unwrap();
        for i in 0..=NX {
            prop_assert!((u[i] - u2[i]).abs() < 1e-8 && (v[i] - v2[i]).abs() < 1e-8, "node {i}");
        }
    }

    #[test]
    fn brownian_path_is_a_function_of_its_seed(seed in any::<u64>(), nt in 1usize..300, dt in 1e-4..0.1f64) {
        let p = sample_brownian(seed, nt, dt).unwrap();
        prop_assert_eq!(&p.increments, &sample_brownian(seed, nt, dt).unwrap().increments);
        prop_assert_eq!(p.cumulative.len(), nt + 1);
        prop_assert_eq!(p.cumulative[0], 0.0);
        let mut w = 0.0;
        for (k, dw) in p.increments.iter().enumerate() {
            w += dw;
            prop_assert!((p.cumulative[k + 1] - w).abs() <= 1e-12 * (1.0 + w.abs()));
        }
    }

    #[test]
    fn reductions_are_consistent(xs in prop::collection::vec(-1e3..1e3f64, 2..200)) {
        let naive: f64 = xs.iter().sum();
        prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-9 * xs.iter().map(|x| x.abs()).sum::<f64>().max(1.0));
        prop_assert!(variance(&xs) >= 0.0);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 17.0).collect();
        prop_assert!((variance(&shifted) - variance(&xs)).abs() <= 1e-8 * (1.0 + variance(&xs)));
    }

    #[test]
    fn profiles_interpolate_their_tables(y0 in -5.0..5.0f64, y1 in -5.0..5.0f64, s in 0.0..1.0f64) {
        let p = Profile::Table(vec![[0.0, y0], [1.0, y1]]);
        prop_assert!((p.eval(s) - (y0 + s * (y1 - y0))).abs() < 1e-12);
    }
}
