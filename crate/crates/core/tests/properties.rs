use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scalora::adapter::LoraLayer;
use scalora::linalg::{hadamard, numerical_rank, singular_values, solve_symmetric, svd, DenseMatrix};
use scalora::optimizer::{adamw_step, adamw_update, gd_step, AdamParams, MatrixMoments, MomentState};
use scalora::scaling::{
    build_column_system, choose_scaling, column_objective, scalar_objective, solve_scalar, Hyper,
};
use scalora::trainer::{train, LinRegTask, Method, OptimizerKind, TrainConfig, Trainer};
use scalora::verify::oracles::gaussian;

type M = DenseMatrix<f64>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dims() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..=12, 1usize..=12, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_factors_are_consistent((m, n, seed) in dims()) {
        let a = gaussian(&mut rng(seed), m, n);
        let f = svd(&a).unwrap();
        let p = m.min(n);
        let energy: f64 = f.s.iter().map(|s| s * s).sum();
        prop_assert!((energy - a.frob_norm_sq()).abs() <= 1e-9 * a.frob_norm_sq());
        prop_assert!(f.reconstruct().sub(&a).unwrap().frob_norm() <= 1e-10 * a.frob_norm().max(1.0));
        let utu = f.u.t_matmul(&f.u).unwrap().sub(&M::identity(p)).unwrap().max_abs();
        let vvt = f.vt.matmul_t(&f.vt).unwrap().sub(&M::identity(p)).unwrap().max_abs();
        prop_assert!(utu <= 1e-10 && vvt <= 1e-10);
        prop_assert!(f.s.windows(2).all(|w| w[0] >= w[1]) && f.s.iter().all(|&s| s >= 0.0));
        let values = singular_values(&a).unwrap();
        for (x, y) in values.iter().zip(&f.s) {
            prop_assert!((x - y).abs() <= 1e-10 * f.s[0]);
        }
    }

    #[test]
    fn svd_handles_low_rank((m, n, seed) in dims(), r in 1usize..4) {
        let mut g = rng(seed);
        let a = gaussian(&mut g, m, r).matmul_t(&gaussian(&mut g, n, r)).unwrap();
        let f = svd(&a).unwrap();
        prop_assert!(f.reconstruct().sub(&a).unwrap().frob_norm() <= 1e-10 * a.frob_norm());
        prop_assert!(numerical_rank(&a, 1e-6).unwrap() <= r.min(m).min(n));
    }

    #[test]
    fn symmetric_solve_residual(n in 1usize..10, seed: u64) {
        let mut g = rng(seed);
        let f = gaussian(&mut g, n + 3, n);
        let gram = f.t_matmul(&f).unwrap();
        let b: Vec<f64> = gaussian(&mut g, n, 1).into_data();
        let sol = solve_symmetric(&gram, &b).unwrap();
        let gv = gram.mul_vec(&sol.v).unwrap();
        let res: f64 = gv.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let bn: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(res <= 1e-8 * bn);
    }

    #[test]
    fn rank_is_monotone_in_tolerance((m, n, seed) in dims(), t1 in 1e-14f64..1.0, t2 in 1e-14f64..1.0) {
        let mut g = rng(seed);
        let a = gaussian(&mut g, m, n).hadamard(&M::from_fn(m, n, |i, _| 10f64.powi(-(i as i32)))).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(numerical_rank(&a, lo).unwrap() >= numerical_rank(&a, hi).unwrap());
    }

    #[test]
    fn hadamard_diagonal_identity((m, n, seed) in dims()) {
        // (M1 ⊙ M2) v = diag(M1 diag(v) M2ᵀ)
        let mut g = rng(seed);
        let m1 = gaussian(&mut g, m, n);
        let m2 = gaussian(&mut g, m, n);
        let v = gaussian(&mut g, n, 1).into_data();
        let lhs = hadamard(&m1, &m2).unwrap().mul_vec(&v).unwrap();
        let rhs = m1.scale_columns(&v).unwrap().matmul_t(&m2).unwrap().diag();
        for (x, y) in lhs.iter().zip(&rhs) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn merge_preserves_effective_weight((m, n, seed) in dims(), r in 1usize..=8, scale in 0.1f64..4.0) {
        let r = r.min(m).min(n);
        let mut g = rng(seed);
        let mut layer = LoraLayer::from_parts(gaussian(&mut g, m, n), gaussian(&mut g, m, r), gaussian(&mut g, n, r), scale).unwrap();
        let before = layer.effective_weight();
        let new_a = gaussian(&mut g, m, r);
        let new_b = gaussian(&mut g, n, r);
        layer.merge_factor(new_a.clone(), new_b.clone()).unwrap();
        prop_assert!(layer.effective_weight().sub(&before).unwrap().frob_norm() <= 1e-10 * before.frob_norm());
        prop_assert_eq!(layer.a(), &new_a);
        prop_assert_eq!(layer.b(), &new_b);
    }

    #[test]
    fn constant_vectors_match_scalar((m, n, seed) in dims(), al in 0.0f64..3.0, be in 0.0f64..3.0) {
        let mut g = rng(seed);
        let r = 2usize.min(m).min(n);
        let (gm, a, b) = (gaussian(&mut g, m, n), gaussian(&mut g, m, r), gaussian(&mut g, n, r));
        let h = Hyper::new(0.8, 1.7).unwrap();
        let s = scalar_objective(&gm, &a, &b, al, be, &h).unwrap();
        let c = column_objective(&gm, &a, &b, &vec![al; r], &vec![be; r], &h).unwrap();
        prop_assert_eq!(s, c);
    }

    #[test]
    fn scalar_solution_is_never_trivial((m, n, seed) in dims(), zero in 0u8..3) {
        let mut g = rng(seed);
        let r = 3usize.min(m).min(n);
        let gm = gaussian(&mut g, m, n);
        let mut a = gaussian(&mut g, m, r);
        let mut b = gaussian(&mut g, n, r);
        match zero { 1 => a = M::zeros(m, r), 2 => b = M::zeros(n, r), _ => {} }
        let sol = solve_scalar(&gm, &a, &b, &Hyper::unit()).unwrap();
        prop_assert!(sol.alpha > 0.0 || sol.beta > 0.0);
        prop_assert!(sol.alpha >= 0.0 && sol.beta >= 0.0);
        prop_assert!(sol.coefficients.c >= -1e-12 * sol.coefficients.norms.a_at_g * sol.coefficients.norms.g_b_bt);
    }

    #[test]
    fn column_gram_is_psd((m, n, seed) in dims(), r in 1usize..=4) {
        let r = r.min(m).min(n);
        let mut g = rng(seed);
        let sys = build_column_system(&gaussian(&mut g, m, n), &gaussian(&mut g, m, r), &gaussian(&mut g, n, r)).unwrap();
        let ev = scalora::verify::oracles::symmetric_eigenvalues(&sys.gram);
        prop_assert!(*ev.last().unwrap() >= -1e-10 * ev[0].max(1.0));
    }

    #[test]
    fn moments_stay_nonnegative(seed: u64, rescales in proptest::collection::vec((0.0f64..3.0, 0.0f64..3.0), 1..6)) {
        let mut g = rng(seed);
        let (m, n, r) = (5, 4, 2);
        let mut layer = LoraLayer::from_parts(gaussian(&mut g, m, n), gaussian(&mut g, m, r), gaussian(&mut g, n, r), 1.0).unwrap();
        let mut state = MomentState::new(&layer, AdamParams::default());
        for (al, be) in rescales {
            let grads = layer.project_grads(&gaussian(&mut g, m, n)).unwrap();
            adamw_step(&mut layer, &grads, &mut state, 1e-2).unwrap();
            state.rescale_columns(&[al, be], &[be, al]).unwrap();
            state.rescale_scalar(al, be);
        }
        for v in [&state.a.v, &state.b.v] {
            prop_assert!(v.data().iter().all(|&x| x >= 0.0));
        }
    }
}

#[test]
fn adamw_without_averaging_matches_formula() {
    let mut g = rng(3);
    let p0 = gaussian(&mut g, 4, 3);
    let grad = gaussian(&mut g, 4, 3);
    let params = AdamParams {
        beta1: 0.0,
        beta2: 0.0,
        eps: 1e-3,
        weight_decay: 0.0,
    };
    let mut p = p0.clone();
    let mut mom = MatrixMoments::zeros(4, 3);
    adamw_update(&mut p, &grad, &mut mom, &params, 1, 0.1).unwrap();
    for ((x, x0), gr) in p.data().iter().zip(p0.data()).zip(grad.data()) {
        let want = x0 - 0.1 * gr / (gr.abs() + 1e-3);
        assert!((x - want).abs() <= 1e-15);
    }
}

#[test]
fn lora_update_rank_never_exceeds_r() {
    for seed in 0..4 {
        let task = LinRegTask::<f64>::generate(12, 10, 20, seed).unwrap();
        let l = task.l_exact;
        let mut layer = LoraLayer::init(M::zeros(12, 10), 3, 0.5, seed).unwrap();
        let w0 = layer.effective_weight();
        for _ in 0..60 {
            let (_, gw) = task.loss_grad(&layer.effective_weight()).unwrap();
            let grads = layer.project_grads(&gw).unwrap();
            gd_step(&mut layer, &grads, 0.5 / l).unwrap();
            let upd = layer.cumulative_update(&w0).unwrap();
            assert!(numerical_rank(&upd, 1e-6).unwrap() <= 3);
        }
    }
}

#[test]
fn training_is_bit_deterministic() {
    for method in [Method::Full, Method::Lora, Method::Scalora, Method::ScaloraI] {
        let cfg = TrainConfig {
            method,
            interval: if method == Method::ScaloraI { 3 } else { 1 },
            steps: 25,
            m: 9,
            n: 7,
            k: 12,
            rank: 2,
            minibatch: Some(6),
            optimizer: OptimizerKind::AdamW,
            lr: Some(1e-2),
            ..TrainConfig::default()
        };
        assert_eq!(train(&cfg).unwrap(), train(&cfg).unwrap());
    }
}

#[test]
fn full_gd_bound_dominates_loss_on_small_tasks() {
    for seed in 0..6 {
        let cfg = TrainConfig {
            method: Method::Full,
            seed,
            steps: 400,
            m: 6,
            n: 5,
            k: 9,
            ..TrainConfig::default()
        };
        for row in train(&cfg).unwrap() {
            assert!(row.upper_bound >= row.loss, "seed {seed} step {}", row.step);
        }
    }
}

#[test]
fn scaling_events_do_not_move_the_weight() {
    let cfg = TrainConfig {
        method: Method::Scalora,
        steps: 40,
        m: 10,
        n: 8,
        k: 15,
        rank: 2,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::<f64>::new(cfg).unwrap();
    for _ in 0..40 {
        let layer = trainer.layer().unwrap().clone();
        let w = layer.effective_weight();
        let (_, gw) = trainer.task().loss_grad(&w).unwrap();
        let outcome = choose_scaling(&gw, layer.a(), layer.b(), trainer.hyper()).unwrap();
        if let Some((na, nb)) = outcome.apply(layer.a(), layer.b()).unwrap() {
            let mut moved = layer.clone();
            moved.merge_factor(na, nb).unwrap();
            assert!(moved.effective_weight().sub(&w).unwrap().frob_norm() <= 1e-10 * w.frob_norm().max(1.0));
        }
        trainer.step().unwrap();
    }
}

#[test]
fn minibatch_adamw_scalora_trains() {
    let cfg = TrainConfig {
        method: Method::Scalora,
        optimizer: OptimizerKind::AdamW,
        minibatch: Some(16),
        lr: Some(5e-3),
        steps: 200,
        m: 16,
        n: 12,
        k: 40,
        rank: 2,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::<f64>::new(cfg).unwrap();
    let first = trainer.step().unwrap().loss;
    let mut last = first;
    for _ in 1..200 {
        last = trainer.step().unwrap().loss;
    }
    assert!(last < first);
    let mom = trainer.moments().unwrap();
    assert_eq!(mom.step, 200);
    assert!(mom.a.v.data().iter().chain(mom.b.v.data()).all(|&x| x >= 0.0 && x.is_finite()));
}
