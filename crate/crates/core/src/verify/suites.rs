//! Seeded property suites pairing each closed-form result with an oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapter::LoraLayer;
use crate::error::Result;
use crate::linalg::DenseMatrix;
use crate::optimizer::{adamw_step, AdamParams, MomentState};
use crate::scaling::{
    adapter_objective, build_column_system, choose_scaling_with, column_objective, scalar_objective,
    solve_column, solve_scalar, solve_scalar_from, svd_oracle, CaseOrder, Hyper, Projections, ScalarCase,
    ScalingOutcome,
};
use crate::trainer::LinRegTask;
use crate::verify::oracles::{
    central_diff, column_nnls_oracle, ema_replay, gaussian, literal_scalar_objective, scalar_grid_oracle,
    singular_values_via_gram,
};

type M = DenseMatrix<f64>;

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    pub failures: usize,
    /// Largest observed error, in the units `tolerance` is stated in.
    pub max_error: f64,
    pub tolerance: f64,
    /// Named side measurements.
    pub extras: Vec<(&'static str, f64)>,
}

impl SuiteReport {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            instances: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
            extras: Vec::new(),
        }
    }

    fn record(&mut self, err: f64) {
        self.instances += 1;
        if err.is_nan() || err > self.max_error {
            self.max_error = if err.is_nan() { f64::INFINITY } else { err };
        }
        if !(err <= self.tolerance) {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }

    pub fn extra(&self, key: &str) -> Option<f64> {
        self.extras.iter().find(|(k, _)| *k == key).map(|&(_, v)| v)
    }
}

fn normalized(mut g: M) -> M {
    let n = g.frob_norm();
    if n > 0.0 {
        g.scale_mut(1.0 / n);
    }
    g
}

/// Branch-forcing instance shapes for the scalar suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarInstanceKind {
    /// `B = 0`: every coefficient collapses to zero, `A`-only branch.
    ZeroB,
    /// `A = 0`: `B`-only branch.
    ZeroA,
    /// Gaussian `A`, `B`.
    Generic,
}

pub fn scalar_instance(rng: &mut ChaCha8Rng, kind: ScalarInstanceKind) -> (M, M, M) {
    let m = rng.random_range(2..=16);
    let n = rng.random_range(2..=16);
    let r = rng.random_range(1..=4usize.min(m).min(n));
    let g = normalized(gaussian(rng, m, n));
    let mut a = gaussian(rng, m, r);
    let mut b = gaussian(rng, n, r);
    match kind {
        ScalarInstanceKind::ZeroB => b = M::zeros(n, r),
        ScalarInstanceKind::ZeroA => a = M::zeros(m, r),
        ScalarInstanceKind::Generic => {}
    }
    (g, a, b)
}

/// Closed-form scalar scaling against a grid-plus-refinement search of the
/// literal objective. Error is the absolute excess over the oracle minimum.
pub fn scalar_optimality(seed: u64, count: usize, order: CaseOrder) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("scalar-grid", 1e-8);
    let hyper = Hyper::unit();
    let mut cases = [0usize; 3];
    let mut min_c = f64::INFINITY;
    let kinds = [ScalarInstanceKind::ZeroB, ScalarInstanceKind::ZeroA, ScalarInstanceKind::Generic];
    for i in 0..count {
        let (g, a, b) = scalar_instance(&mut rng, kinds[i % 3]);
        let proj = Projections::new(&g, &a, &b)?;
        let sol = solve_scalar_from(&proj, &a, &b, g.frob_norm(), &hyper, order)?;
        cases[match sol.case {
            ScalarCase::Both => 0,
            ScalarCase::AlphaOnly => 1,
            ScalarCase::BetaOnly => 2,
        }] += 1;
        min_c = min_c.min(sol.coefficients.c);
        let closed = scalar_objective(&g, &a, &b, sol.alpha, sol.beta, &hyper)?;
        let oracle = scalar_grid_oracle(|al, be| literal_scalar_objective(&g, &a, &b, al, be, 1.0, 1.0));
        let mut err = (closed - oracle.value).max(0.0);
        if sol.alpha == 0.0 && sol.beta == 0.0 {
            err = f64::INFINITY;
        }
        report.record(err);
    }
    report.extras = vec![
        ("case_both", cases[0] as f64),
        ("case_alpha_only", cases[1] as f64),
        ("case_beta_only", cases[2] as f64),
        ("min_c", min_c),
    ];
    Ok(report)
}

/// Column-wise closed form against projected-gradient NNLS on instances
/// whose system has a nonnegative solution. Error is the relative excess.
pub fn column_optimality(seed: u64, count: usize, nnls_iters: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("column-nnls", 1e-6);
    let mut attempts = 0usize;
    let mut r1_checked = 0usize;
    let mut r1_max_diff = 0.0f64;
    while report.instances < count && attempts < count * 200 {
        attempts += 1;
        // every fourth draw is rank one so the scalar cross-check gets data
        let force_r1 = attempts.is_multiple_of(4);
        let m = rng.random_range(2..=16);
        let n = rng.random_range(2..=16);
        let r = if force_r1 { 1 } else { rng.random_range(1..=4usize.min(m).min(n)) };
        let l = rng.random_range(0.5..2.0);
        let l_eta = rng.random_range(0.5..2.0);
        let hyper = Hyper::new(l_eta, l)?;
        let g = normalized(gaussian(&mut rng, m, n));
        let a = gaussian(&mut rng, m, r);
        let b = gaussian(&mut rng, n, r);
        let system = build_column_system(&g, &a, &b)?;
        let Some((alpha, beta)) = solve_column(&system, &hyper) else {
            continue;
        };
        let closed = column_objective(&g, &a, &b, &alpha, &beta, &hyper)?;
        let oracle = column_nnls_oracle(&g, &a, &b, l_eta, l, nnls_iters);
        // relative to the oracle, floored at rounding level of f(0) = ‖G‖²/(2L)
        let floor = 1e-12 * g.frob_norm_sq() / (2.0 * l);
        let err = (closed - oracle.value).max(0.0) / oracle.value.max(floor);
        let mut failed_r1 = false;
        if r == 1 {
            let s = solve_scalar(&g, &a, &b, &hyper)?;
            if s.case == ScalarCase::Both {
                r1_checked += 1;
                let d = (s.alpha - alpha[0]).abs().max((s.beta - beta[0]).abs());
                r1_max_diff = r1_max_diff.max(d);
                failed_r1 = !(d <= 1e-9);
            }
        }
        report.record(if failed_r1 { f64::INFINITY } else { err });
    }
    report.extras = vec![
        ("attempts", attempts as f64),
        ("rank_one_checked", r1_checked as f64),
        ("rank_one_max_diff", r1_max_diff),
    ];
    if report.instances < count {
        report.failures += count - report.instances;
    }
    Ok(report)
}

/// SVD oracle against the Eckart-Young tail and against both scaling
/// solvers. Error is the relative deviation from the tail value; an oracle
/// value above either solver's counts as a failure.
pub fn eckart_young(seed: u64, count: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("eckart-young", 1e-8);
    let (m, n, r) = (20, 15, 3);
    let mut worst_gap = f64::INFINITY;
    for _ in 0..count {
        let l = rng.random_range(0.5..2.0);
        let l_eta = rng.random_range(0.5..2.0);
        let hyper = Hyper::new(l_eta, l)?;
        let g = gaussian(&mut rng, m, n);
        let a = gaussian(&mut rng, m, r);
        let b = gaussian(&mut rng, n, r);
        let (a_opt, b_opt) = svd_oracle(&g, r, &hyper, 1e-6)?;
        let at_oracle = adapter_objective(&g, &a_opt, &b_opt, &hyper)?;
        let s = singular_values_via_gram(&g);
        let tail: f64 = s[2 * r..].iter().map(|x| x * x).sum::<f64>() / (2.0 * l);
        let mut err = (at_oracle - tail).abs() / tail;

        let sc = solve_scalar(&g, &a, &b, &hyper)?;
        let mut solver_values = vec![scalar_objective(&g, &a, &b, sc.alpha, sc.beta, &hyper)?];
        let system = build_column_system(&g, &a, &b)?;
        if let Some((al, be)) = solve_column(&system, &hyper) {
            solver_values.push(column_objective(&g, &a, &b, &al, &be, &hyper)?);
        }
        for v in solver_values {
            worst_gap = worst_gap.min(v - at_oracle);
            if at_oracle > v * (1.0 + 1e-12) {
                err = f64::INFINITY;
            }
        }
        report.record(err);
    }
    report.extras = vec![("min_solver_gap", worst_gap)];
    Ok(report)
}

/// AdamW trajectories with one rescale event against the directly summed
/// EMA of the rescaled gradient history.
pub fn moment_equivariance(seed: u64, count: usize, steps: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("moment-replay", 1e-12);
    for trial in 0..count {
        let m = rng.random_range(3..=12);
        let n = rng.random_range(3..=12);
        let r = rng.random_range(1..=4usize.min(m).min(n));
        let params = AdamParams {
            beta1: rng.random_range(0.5..0.95),
            beta2: rng.random_range(0.9..0.999),
            ..AdamParams::default()
        };
        let mut layer = LoraLayer::init(gaussian(&mut rng, m, n), r, 0.5, rng.random())?;
        let b0 = gaussian(&mut rng, n, r);
        let a0 = layer.a().clone();
        layer.merge_factor(a0, b0)?;
        let mut state = MomentState::new(&layer, params);
        let event = rng.random_range(1..steps);
        let column = trial % 2 == 0;
        let col_alpha: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..2.0)).collect();
        let col_beta: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..2.0)).collect();
        let (sa, sb) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let (alpha, beta) = if column { (col_alpha, col_beta) } else { (vec![sa; r], vec![sb; r]) };

        let mut hist_a = Vec::with_capacity(steps);
        let mut hist_b = Vec::with_capacity(steps);
        for t in 0..steps {
            if t == event {
                if column {
                    state.rescale_columns(&alpha, &beta)?;
                } else {
                    state.rescale_scalar(sa, sb);
                }
                let (na, nb) = (layer.a().scale_columns(&alpha)?, layer.b().scale_columns(&beta)?);
                layer.merge_factor(na, nb)?;
                // history as seen by the rescaled parameters
                for h in hist_a.iter_mut() {
                    *h = M::scale_columns(h, &beta)?;
                }
                for h in hist_b.iter_mut() {
                    *h = M::scale_columns(h, &alpha)?;
                }
            }
            let g = gaussian(&mut rng, m, n);
            let grads = layer.project_grads(&g)?;
            hist_a.push(grads.g_a.clone());
            hist_b.push(grads.g_b.clone());
            adamw_step(&mut layer, &grads, &mut state, 1e-3)?;
        }
        let (ma, va) = ema_replay(&hist_a, params.beta1, params.beta2);
        let (mb, vb) = ema_replay(&hist_b, params.beta1, params.beta2);
        let mut err: f64 = 0.0;
        for (got, want) in [(&state.a.m, &ma), (&state.a.v, &va), (&state.b.m, &mb), (&state.b.v, &vb)] {
            for (x, y) in got.data().iter().zip(want.data()) {
                err = err.max((x - y).abs() / y.abs().max(1.0));
            }
        }
        if state.step != steps as u64 {
            err = f64::INFINITY;
        }
        report.record(err);
    }
    Ok(report)
}

/// Merge-and-refactor under random scalings; error is the relative drift
/// of the effective weight.
pub fn merge_invariance(seed: u64, count: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("merge-invariance", 1e-10);
    for i in 0..count {
        let m = rng.random_range(1..=64);
        let n = rng.random_range(1..=64);
        let r = rng.random_range(1..=8usize.min(m).min(n));
        let scale = rng.random_range(0.5..2.0);
        let mut layer = LoraLayer::from_parts(
            gaussian(&mut rng, m, n),
            gaussian(&mut rng, m, r),
            gaussian(&mut rng, n, r),
            scale,
        )?;
        let outcome = if i % 2 == 0 {
            let draw = |rng: &mut ChaCha8Rng| {
                (0..r)
                    .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..3.0) })
                    .collect::<Vec<f64>>()
            };
            let alpha = draw(&mut rng);
            let beta = draw(&mut rng);
            ScalingOutcome::ColumnWise { alpha, beta }
        } else {
            ScalingOutcome::Scalar {
                alpha: rng.random_range(0.0..3.0),
                beta: rng.random_range(0.0..3.0),
            }
        };
        let before = layer.effective_weight();
        if let Some((na, nb)) = outcome.apply(layer.a(), layer.b())? {
            layer.merge_factor(na, nb)?;
        }
        let drift = layer.effective_weight().sub(&before)?.frob_norm() / before.frob_norm().max(f64::MIN_POSITIVE);
        report.record(drift);
    }
    Ok(report)
}

/// Analytic gradients against central differences (step 1e-6): the task
/// gradient w.r.t. `W` and the projected gradients w.r.t. `A` and `B`.
/// Error is the worst entrywise relative error over entries above 1e-8.
pub fn gradient_check(seed: u64, count: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("finite-differences", 1e-5);
    let h = 1e-6;
    let rel = |fd: &M, an: &M| {
        fd.data()
            .iter()
            .zip(an.data())
            .filter(|(_, a)| a.abs() > 1e-8)
            .map(|(f, a)| (f - a).abs() / a.abs())
            .fold(0.0, f64::max)
    };
    for _ in 0..count {
        let m = rng.random_range(2..=6);
        let n = rng.random_range(2..=6);
        let k = rng.random_range(2..=8);
        let r = rng.random_range(1..=2usize.min(m).min(n));
        let task = LinRegTask::from_data(gaussian(&mut rng, n, k), gaussian(&mut rng, m, k))?;
        let w = gaussian(&mut rng, m, n).scaled(0.5);
        let (_, g) = task.loss_grad(&w)?;
        let fd_w = central_diff(&w, h, |p| task.loss(p).unwrap());
        let mut err = rel(&fd_w, &g);

        let scale = rng.random_range(0.5..2.0);
        let layer = LoraLayer::from_parts(
            gaussian(&mut rng, m, n).scaled(0.5),
            gaussian(&mut rng, m, r),
            gaussian(&mut rng, n, r),
            scale,
        )?;
        let (_, g_eff) = task.loss_grad(&layer.effective_weight())?;
        let grads = layer.project_grads(&g_eff)?;
        let loss_at = |a: &M, b: &M| {
            let l = LoraLayer::from_parts(layer.w_base().clone(), a.clone(), b.clone(), scale).unwrap();
            task.loss(&l.effective_weight()).unwrap()
        };
        let fd_a = central_diff(layer.a(), h, |p| loss_at(p, layer.b()));
        let fd_b = central_diff(layer.b(), h, |p| loss_at(layer.a(), p));
        err = err.max(rel(&fd_a, &grads.g_a)).max(rel(&fd_b, &grads.g_b));
        report.record(err);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelftestOptions {
    pub seed: u64,
    pub inject_fault: bool,
}

/// The suites behind `scalora selftest`, at sizes that finish in seconds.
pub fn run_selftest(opts: SelftestOptions) -> Result<Vec<SuiteReport>> {
    let order = if opts.inject_fault {
        CaseOrder::InjectedFault
    } else {
        CaseOrder::Standard
    };
    let s = opts.seed;
    Ok(vec![
        scalar_optimality(s, 90, order)?,
        column_optimality(s.wrapping_add(1), 40, 10_000)?,
        eckart_young(s.wrapping_add(2), 40)?,
        moment_equivariance(s.wrapping_add(3), 20, 100)?,
        merge_invariance(s.wrapping_add(4), 200)?,
        gradient_check(s.wrapping_add(5), 10)?,
        decision_consistency(s.wrapping_add(6), 40, order)?,
    ])
}

/// The combined decision never does worse on the surrogate than the scalar
/// solver alone, since the column family contains every scalar scaling.
pub fn decision_consistency(seed: u64, count: usize, order: CaseOrder) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("decision", 1e-12);
    let hyper = Hyper::unit();
    for _ in 0..count {
        let (g, a, b) = scalar_instance(&mut rng, ScalarInstanceKind::Generic);
        let outcome = choose_scaling_with(&g, &a, &b, &hyper, order)?;
        let chosen = match &outcome {
            ScalingOutcome::ColumnWise { alpha, beta } => column_objective(&g, &a, &b, alpha, beta, &hyper)?,
            ScalingOutcome::Scalar { alpha, beta } => scalar_objective(&g, &a, &b, *alpha, *beta, &hyper)?,
            ScalingOutcome::Skipped(_) => f64::INFINITY,
        };
        let oracle = scalar_grid_oracle(|al, be| literal_scalar_objective(&g, &a, &b, al, be, 1.0, 1.0));
        report.record(((chosen - oracle.value) / oracle.value.abs().max(1e-300)).max(0.0));
    }
    Ok(report)
}
