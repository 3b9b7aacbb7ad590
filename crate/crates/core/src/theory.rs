//! Ensembles of linear regressors trained by full-batch gradient descent on a
//! shared training set, with the quantities used to reason about when their
//! disagreement grows.
//!
//! Inputs are stored column-per-example: `X` is `[d x M]`, targets are row
//! vectors, and model `i` is row `i` of `W` (`[Q x d]`). Covariances are
//! unnormalised: `Σ_XX = X Xᵀ`, `Σ_YX = y Xᵀ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RegressionProblem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    xt: DMatrix<f64>,
    yt: DVector<f64>,
    mu: f64,
    sxx: DMatrix<f64>,
    syx: DVector<f64>,
    stt: DMatrix<f64>,
    syt: DVector<f64>,
    eigenvalues: Vec<f64>,
}

impl RegressionProblem {
    /// `x` is `[d x M]`, `xt` is `[d x Nt]`.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, xt: DMatrix<f64>, yt: DVector<f64>, mu: f64) -> Result<Self> {
        let d = x.nrows();
        if d == 0 || xt.nrows() != d {
            return Err(Error::input("train and test inputs must share a nonzero dimension"));
        }
        if y.len() != x.ncols() || yt.len() != xt.ncols() || xt.ncols() == 0 {
            return Err(Error::input("target length must match the number of input columns"));
        }
        if x.ncols() < d {
            return Err(Error::input(format!("Σ_XX is singular: {} examples in dimension {d}", x.ncols())));
        }
        if x.iter().chain(y.iter()).chain(xt.iter()).chain(yt.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("problem data must be finite"));
        }
        let sxx = &x * x.transpose();
        let syx = &x * &y;
        let stt = &xt * xt.transpose();
        let syt = &xt * &yt;
        let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sxx.clone()).eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(|a, b| a.total_cmp(b));
        let (lo, hi) = (eigenvalues[0], eigenvalues[d - 1]);
        if lo.is_nan() || lo <= hi * 1e-12 {
            return Err(Error::input("Σ_XX is singular (not full rank)"));
        }
        let problem = Self { x, y, xt, yt, mu, sxx, syx, stt, syt, eigenvalues };
        problem.check_mu(mu)?;
        Ok(problem)
    }

    // μ = 0 is accepted as the frozen problem; runs that need contraction
    // call `check_contraction`.
    fn check_mu(&self, mu: f64) -> Result<()> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::input(format!("learning rate {mu} must be finite and nonnegative")));
        }
        if mu == 0.0 {
            return Ok(());
        }
        self.check_contraction(mu)
    }

    fn check_contraction(&self, mu: f64) -> Result<()> {
        let norm = self.contraction_norm_at(mu);
        if norm >= 1.0 {
            return Err(Error::input(format!(
                "‖I − μΣ_XX‖ = {norm} ≥ 1; gradient descent needs 0 < μ < 2/λ_max(Σ_XX) = {}",
                self.max_stable_mu()
            )));
        }
        Ok(())
    }

    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        self.check_mu(mu)?;
        Ok(Self { mu, ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_train(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_test(&self) -> usize {
        self.xt.ncols()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn train_inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn train_targets(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn test_inputs(&self) -> &DMatrix<f64> {
        &self.xt
    }

    pub fn test_targets(&self) -> &DVector<f64> {
        &self.yt
    }

    pub fn sigma_xx(&self) -> &DMatrix<f64> {
        &self.sxx
    }

    /// `Σ_YX` as a column vector.
    pub fn sigma_yx(&self) -> &DVector<f64> {
        &self.syx
    }

    pub fn sigma_test(&self) -> &DMatrix<f64> {
        &self.stt
    }

    pub fn sigma_yx_test(&self) -> &DVector<f64> {
        &self.syt
    }

    /// Ascending eigenvalues of `Σ_XX`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn max_stable_mu(&self) -> f64 {
        2.0 / self.eigenvalues[self.eigenvalues.len() - 1]
    }

    fn contraction_norm_at(&self, mu: f64) -> f64 {
        self.eigenvalues.iter().map(|l| (1.0 - mu * l).abs()).fold(0.0, f64::max)
    }

    /// Operator norm `‖I − μΣ_XX‖`.
    pub fn contraction_norm(&self) -> f64 {
        self.contraction_norm_at(self.mu)
    }

    /// Least-squares solution `Σ_YX Σ_XX⁻¹` (as a column vector).
    pub fn closed_form(&self) -> DVector<f64> {
        solve_spd(&self.sxx, &self.syx)
    }

    /// `Σ_YtXt Σ_XtXt⁻¹`; `None` when the test covariance is singular.
    pub fn test_closed_form(&self) -> Option<DVector<f64>> {
        self.stt.clone().cholesky().map(|c| c.solve(&self.syt))
    }
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.clone().cholesky().expect("Σ_XX checked positive definite").solve(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionEnsembleState {
    w: DMatrix<f64>,
    step: usize,
    init_seed: u64,
}

impl RegressionEnsembleState {
    /// `Q` models with i.i.d. `N(0, init_scale²)` weights.
    pub fn random(problem: &RegressionProblem, q: usize, init_scale: f64, seed: u64) -> Result<Self> {
        if q == 0 {
            return Err(Error::input("an ensemble needs at least one model"));
        }
        if !(init_scale.is_finite() && init_scale >= 0.0) {
            return Err(Error::input("init scale must be finite and nonnegative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = problem.dim();
        let w = DMatrix::from_fn(q, d, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            init_scale * z
        });
        Ok(Self { w, step: 0, init_seed: seed })
    }

    pub fn from_weights(problem: &RegressionProblem, w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.ncols() != problem.dim() {
            return Err(Error::input(format!(
                "weights are {}x{}, problem dimension is {}",
                w.nrows(),
                w.ncols(),
                problem.dim()
            )));
        }
        Ok(Self { w, step: 0, init_seed: 0 })
    }

    pub fn num_models(&self) -> usize {
        self.w.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn mean_weights(&self) -> DVector<f64> {
        self.w.row_mean().transpose()
    }

    fn check_model(&self, i: usize) -> Result<()> {
        if i >= self.num_models() {
            return Err(Error::input(format!("model {i} not in an ensemble of {}", self.num_models())));
        }
        Ok(())
    }
}

/// One full-batch step on every model: `W(i) ← W(i) − μ(W(i)Σ_XX − Σ_YX)`.
pub fn gd_step(state: &RegressionEnsembleState, problem: &RegressionProblem) -> Result<RegressionEnsembleState> {
    gd_step_with(state, problem, problem.mu)
}

fn gd_step_with(state: &RegressionEnsembleState, problem: &RegressionProblem, mu: f64) -> Result<RegressionEnsembleState> {
    let grads = all_gradients(state, problem, Target::Train);
    let w = &state.w - grads * mu;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            epoch: state.step + 1,
            detail: "non-finite regression weights".into(),
        });
    }
    Ok(RegressionEnsembleState {
        w,
        step: state.step + 1,
        init_seed: state.init_seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Train,
    Test,
}

// Rows are Δ(i, target) for every model.
fn all_gradients(state: &RegressionEnsembleState, problem: &RegressionProblem, target: Target) -> DMatrix<f64> {
    let (cov, cross) = match target {
        Target::Train => (&problem.sxx, &problem.syx),
        Target::Test => (&problem.stt, &problem.syt),
    };
    let mut g = &state.w * cov;
    for mut row in g.row_iter_mut() {
        row -= cross.transpose();
    }
    g
}

/// `Δ(i, target)` in covariance form: `W(i)Σ − Σ_Y·`.
pub fn cross_gradient(
    state: &RegressionEnsembleState,
    problem: &RegressionProblem,
    i: usize,
    target: Target,
) -> Result<DVector<f64>> {
    state.check_model(i)?;
    let (cov, cross) = match target {
        Target::Train => (&problem.sxx, &problem.syx),
        Target::Test => (&problem.stt, &problem.syt),
    };
    Ok(cov * state.w.row(i).transpose() - cross)
}

/// `Δ(i, target)` in error form: `e(i, ·) X(·)ᵀ`.
pub fn cross_gradient_from_errors(
    state: &RegressionEnsembleState,
    problem: &RegressionProblem,
    i: usize,
    target: Target,
) -> Result<DVector<f64>> {
    state.check_model(i)?;
    let (x, y) = match target {
        Target::Train => (&problem.x, &problem.y),
        Target::Test => (&problem.xt, &problem.yt),
    };
    let e = x.transpose() * state.w.row(i).transpose() - y;
    Ok(x * e)
}

/// `e(i,t) = W(i)Xt − yt` and its squared norm.
pub fn test_error(state: &RegressionEnsembleState, problem: &RegressionProblem, i: usize) -> Result<(DVector<f64>, f64)> {
    state.check_model(i)?;
    let e = problem.xt.transpose() * state.w.row(i).transpose() - &problem.yt;
    let sq = e.norm_squared();
    Ok((e, sq))
}

// Rows are e(i,t) for every model.
fn all_test_errors(state: &RegressionEnsembleState, problem: &RegressionProblem) -> DMatrix<f64> {
    let mut e = &state.w * &problem.xt;
    for mut row in e.row_iter_mut() {
        row -= problem.yt.transpose();
    }
    e
}

/// Whether model `i`'s squared test error strictly increased over one step.
pub fn overfit_indicator(
    before: &RegressionEnsembleState,
    after: &RegressionEnsembleState,
    problem: &RegressionProblem,
    i: usize,
) -> Result<bool> {
    if after.step != before.step + 1 || after.num_models() != before.num_models() {
        return Err(Error::input(format!(
            "states at steps {} and {} are not one step apart",
            before.step, after.step
        )));
    }
    Ok(test_error(after, problem, i)?.1 > test_error(before, problem, i)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    /// `(1/(2Q²)) Σ_ij ‖e(i,t) − e(j,t)‖²`.
    pub pairwise: f64,
    /// `Σ_n Var_i[e(i,t)_n]` (population variance).
    pub variance: f64,
}

pub fn disagreement(state: &RegressionEnsembleState, problem: &RegressionProblem) -> Result<Disagreement> {
    let q = state.num_models();
    if q < 2 {
        return Err(Error::input("disagreement needs at least two models"));
    }
    Ok(disagreement_of(&all_test_errors(state, problem)))
}

fn disagreement_of(e: &DMatrix<f64>) -> Disagreement {
    let q = e.nrows();
    let mut pairwise = 0.0;
    for i in 0..q {
        for j in i + 1..q {
            pairwise += (e.row(i) - e.row(j)).norm_squared();
        }
    }
    pairwise = 2.0 * pairwise / (2.0 * (q * q) as f64);
    let mean = e.row_mean();
    let variance = e.row_iter().map(|r| (r - &mean).norm_squared()).sum::<f64>() / q as f64;
    Disagreement { pairwise, variance }
}

/// Least-squares slope of `ln y` against `ln x`, skipping nonpositive `y`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (count - 1) as f64).exp())
            .collect(),
    }
}

/// Default learning-rate sweep for the quadratic-order fits.
pub fn default_mu_sweep() -> Vec<f64> {
    log_space(1e-4, 1e-2, 9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Point {
    pub mu: f64,
    pub error_change: f64,
    /// `(‖ẽ‖² − ‖e‖²) + 2μ Δ(i,i)·Δ(i,t)`.
    pub residual: f64,
    pub signs_agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub model: usize,
    /// `Δ(i,i)·Δ(i,t)`.
    pub gradient_product: f64,
    /// Largest μ below which the sign equivalence holds exactly; `None` when
    /// it holds for every μ.
    pub threshold: Option<f64>,
    /// Largest swept μ such that the signs agree at it and every smaller one.
    pub largest_agreeing_mu: Option<f64>,
    pub points: Vec<Lemma1Point>,
    pub residual_exponent: Option<f64>,
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Compare the one-step test-error change with the sign of `−Δ(i,i)·Δ(i,t)`
/// across a sweep of step sizes.
pub fn lemma1_check(
    state: &RegressionEnsembleState,
    problem: &RegressionProblem,
    i: usize,
    mu_sweep: &[f64],
) -> Result<Lemma1Report> {
    let g = cross_gradient(state, problem, i, Target::Train)?;
    let gt = cross_gradient(state, problem, i, Target::Test)?;
    let product = g.dot(&gt);
    let (e, before) = test_error(state, problem, i)?;
    let shift = problem.xt.transpose() * &g;
    let curvature = shift.norm_squared();
    // ‖e − μ g Xt‖² − ‖e‖² = −2μ g·Δt + μ²‖g Xt‖², so the signs can only
    // disagree above 2 g·Δt / ‖g Xt‖² when g·Δt > 0.
    let threshold = (product > 0.0 && curvature > 0.0).then(|| 2.0 * product / curvature);
    let mut mus = mu_sweep.to_vec();
    mus.sort_by(|a, b| a.total_cmp(b));
    let mut points = Vec::with_capacity(mus.len());
    for &mu in &mus {
        let after = (&e - &shift * mu).norm_squared();
        let change = after - before;
        points.push(Lemma1Point {
            mu,
            error_change: change,
            residual: change + 2.0 * mu * product,
            signs_agree: sign(change) == sign(-product),
        });
    }
    let largest_agreeing_mu = points.iter().take_while(|p| p.signs_agree).last().map(|p| p.mu);
    let residual_exponent = loglog_slope(
        &points.iter().map(|p| p.mu).collect::<Vec<_>>(),
        &points.iter().map(|p| p.residual.abs()).collect::<Vec<_>>(),
    );
    Ok(Lemma1Report {
        model: i,
        gradient_product: product,
        threshold,
        largest_agreeing_mu,
        points,
        residual_exponent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub num_models: usize,
    pub steps: usize,
    pub init_scale: f64,
    pub contraction_norm: f64,
    /// `‖I − μΣ_XX‖^s`.
    pub tail_factor: f64,
    /// `‖mean_i W(i) − Σ_YX Σ_XX⁻¹‖`.
    pub deviation: f64,
    /// `init_scale · ‖I − μΣ_XX‖^s · sqrt(d/Q)`.
    pub init_noise_term: f64,
    /// `‖Σ_YX Σ_XX⁻¹‖ · ‖I − μΣ_XX‖^s`.
    pub tail_term: f64,
    /// Floor for rounding error in the recursion.
    pub numerical_floor: f64,
    pub passed: bool,
}

/// Tolerance factor on the predicted envelope.
pub const LEMMA2_FACTOR: f64 = 3.0;

/// Run `Q` models for `s` steps from mean-zero inits and compare the ensemble
/// mean against the closed form.
pub fn lemma2_check(problem: &RegressionProblem, q: usize, s: usize, init_scale: f64, seed: u64) -> Result<Lemma2Report> {
    problem.check_contraction(problem.mu)?;
    let mut state = RegressionEnsembleState::random(problem, q, init_scale, seed)?;
    for _ in 0..s {
        state = gd_step(&state, problem)?;
    }
    let target = problem.closed_form();
    let deviation = (state.mean_weights() - &target).norm();
    let rho = problem.contraction_norm();
    let tail_factor = rho.powi(s as i32);
    let d = problem.dim() as f64;
    let init_noise_term = init_scale * tail_factor * (d / q as f64).sqrt();
    let tail_term = target.norm() * tail_factor;
    let numerical_floor = 1e-12 * (1.0 + target.norm()) * (1.0 + s as f64).sqrt();
    let passed = deviation <= LEMMA2_FACTOR * (init_noise_term + tail_term) + numerical_floor;
    Ok(Lemma2Report {
        num_models: q,
        steps: s,
        init_scale,
        contraction_norm: rho,
        tail_factor,
        deviation,
        init_noise_term,
        tail_term,
        numerical_floor,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Step index `s`; the record describes the move from `s − 1` to `s`.
    pub step: usize,
    pub disagreement: f64,
    pub delta_disagreement: f64,
    /// Evaluated at the state before the step.
    pub c_prime: f64,
    pub c_double_prime: f64,
    /// `|ΔDisAg − μ(C′ − C″)|`.
    pub approx_error: f64,
    pub overfit_fraction: f64,
    pub all_overfit: bool,
    pub mean_test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentProbe {
    pub step: usize,
    pub mus: Vec<f64>,
    pub approx_errors: Vec<f64>,
    pub exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub num_models: usize,
    pub mu: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub contraction_norm: f64,
    pub steps: Vec<StepRecord>,
    /// Steps at which every model's test error strictly increased.
    pub certified_steps: Vec<usize>,
    /// Certified steps with `ΔDisAg ≤ 0`.
    pub violations: Vec<usize>,
    /// Steps where no model overfits and `|C′| ≤ 0.05·|C″|` but `ΔDisAg ≥ 0`.
    pub quiet_violations: Vec<usize>,
    pub exponent_probes: Vec<ExponentProbe>,
    /// Steps with `|C′| ≤ 0.05·|C″|`, and how many of them have
    /// `|ΔDisAg + μC″| ≤ 0.1·|μC″|`.
    pub negligible_c_prime_steps: usize,
    pub negligible_c_prime_within_10pct: usize,
}

impl TheoremReport {
    pub fn theorem_holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `(C′, C″)` at a state: `C″ = (2/Q)Σ_i Δ(i,i)·Δ(i,t)` and `C′` by its
/// defining double sum.
pub fn c_terms(state: &RegressionEnsembleState, problem: &RegressionProblem) -> (f64, f64) {
    let g = all_gradients(state, problem, Target::Train);
    let gt = all_gradients(state, problem, Target::Test);
    let q = state.num_models();
    let mut cdd = 0.0;
    for i in 0..q {
        cdd += g.row(i).dot(&gt.row(i));
    }
    cdd *= 2.0 / q as f64;
    // g·gtᵀ holds every Δ(i,i)·Δ(j,t).
    let cross = &g * gt.transpose();
    let mut cp = 0.0;
    for i in 0..q {
        for j in 0..q {
            cp += cross[(i, j)] + cross[(j, i)];
        }
    }
    cp /= (q * q) as f64;
    (cp, cdd)
}

fn exponent_probe(state: &RegressionEnsembleState, problem: &RegressionProblem, mus: &[f64]) -> Result<ExponentProbe> {
    let before = disagreement_of(&all_test_errors(state, problem)).variance;
    let (cp, cdd) = c_terms(state, problem);
    let mut errs = Vec::with_capacity(mus.len());
    for &mu in mus {
        let after = gd_step_with(state, problem, mu)?;
        let delta = disagreement_of(&all_test_errors(&after, problem)).variance - before;
        errs.push((delta - mu * (cp - cdd)).abs());
    }
    Ok(ExponentProbe {
        step: state.step,
        mus: mus.to_vec(),
        exponent: loglog_slope(mus, &errs),
        approx_errors: errs,
    })
}

/// Run the ensemble for `s_max` steps, recording disagreement dynamics and
/// the overfit certificate per step. `probe_steps` are states (by step index)
/// at which the approximation error is refit against `mu_sweep`.
pub fn theorem_check(
    problem: &RegressionProblem,
    q: usize,
    s_max: usize,
    init_scale: f64,
    seed: u64,
    mu_sweep: &[f64],
    probe_steps: &[usize],
) -> Result<TheoremReport> {
    if q < 2 {
        return Err(Error::input("the disagreement theorem needs at least two models"));
    }
    problem.check_contraction(problem.mu)?;
    let mu = problem.mu;
    let mut state = RegressionEnsembleState::random(problem, q, init_scale, seed)?;
    let mut errors = all_test_errors(&state, problem);
    let mut dis = disagreement_of(&errors).pairwise;
    let mut steps = Vec::with_capacity(s_max);
    let mut probes = Vec::new();
    for s in 1..=s_max {
        if probe_steps.contains(&(s - 1)) {
            probes.push(exponent_probe(&state, problem, mu_sweep)?);
        }
        let (cp, cdd) = c_terms(&state, problem);
        let next = gd_step(&state, problem)?;
        let next_errors = all_test_errors(&next, problem);
        let next_dis = disagreement_of(&next_errors).pairwise;
        let overfit = (0..q)
            .filter(|&i| next_errors.row(i).norm_squared() > errors.row(i).norm_squared())
            .count();
        let delta = next_dis - dis;
        steps.push(StepRecord {
            step: s,
            disagreement: next_dis,
            delta_disagreement: delta,
            c_prime: cp,
            c_double_prime: cdd,
            approx_error: (delta - mu * (cp - cdd)).abs(),
            overfit_fraction: overfit as f64 / q as f64,
            all_overfit: overfit == q,
            mean_test_error: next_errors.row_iter().map(|r| r.norm_squared()).sum::<f64>() / q as f64,
        });
        state = next;
        errors = next_errors;
        dis = next_dis;
    }
    if probe_steps.contains(&s_max) {
        probes.push(exponent_probe(&state, problem, mu_sweep)?);
    }
    let certified_steps: Vec<usize> = steps.iter().filter(|r| r.all_overfit).map(|r| r.step).collect();
    let violations = steps
        .iter()
        .filter(|r| r.all_overfit && r.delta_disagreement <= 0.0)
        .map(|r| r.step)
        .collect();
    let negligible: Vec<&StepRecord> = steps
        .iter()
        .filter(|r| r.c_prime.abs() <= 0.05 * r.c_double_prime.abs() && r.c_double_prime != 0.0)
        .collect();
    let quiet_violations = negligible
        .iter()
        .filter(|r| r.overfit_fraction == 0.0 && r.delta_disagreement >= 0.0)
        .map(|r| r.step)
        .collect();
    let within = negligible
        .iter()
        .filter(|r| (r.delta_disagreement + mu * r.c_double_prime).abs() <= 0.1 * (mu * r.c_double_prime).abs())
        .count();
    let negligible_c_prime_steps = negligible.len();
    Ok(TheoremReport {
        num_models: q,
        mu,
        init_scale,
        seed,
        contraction_norm: problem.contraction_norm(),
        steps,
        certified_steps,
        violations,
        quiet_violations,
        exponent_probes: probes,
        negligible_c_prime_steps,
        negligible_c_prime_within_10pct: within,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CPrimePoint {
    pub num_models: usize,
    pub steps: usize,
    pub c_prime: f64,
}

/// `|C′|` after `s` steps for each `(Q, s)` pair.
pub fn c_prime_sweep(
    problem: &RegressionProblem,
    pairs: &[(usize, usize)],
    init_scale: f64,
    seed: u64,
) -> Result<Vec<CPrimePoint>> {
    pairs
        .iter()
        .map(|&(q, s)| {
            let mut state = RegressionEnsembleState::random(problem, q, init_scale, seed)?;
            for _ in 0..s {
                state = gd_step(&state, problem)?;
            }
            Ok(CPrimePoint {
                num_models: q,
                steps: s,
                c_prime: c_terms(&state, problem).0.abs(),
            })
        })
        .collect()
}

/// Whether `values` trend downward: negative least-squares slope of
/// `ln value` against position.
pub fn decreasing_on_average(values: &[f64]) -> bool {
    let idx: Vec<f64> = (1..=values.len()).map(|k| k as f64).collect();
    let pts: Vec<(f64, f64)> = idx
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0)
        .map(|(k, v)| (*k, v.ln()))
        .collect();
    if pts.len() < 2 {
        return false;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy < 0.0
}

/// Parameters of a planted-teacher regression instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub dim: usize,
    pub num_train: usize,
    pub num_test: usize,
    /// Std of Gaussian noise on the training targets, relative to the
    /// clean target std (`1/sqrt(M)`).
    pub label_noise: f64,
    pub seed: u64,
    /// Defaults to `0.5 / λ_max(Σ_XX)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

/// Planted linear teacher `w*` with noisy training targets and clean test
/// targets. Inputs are `N(0, 1/M)` so `Σ_XX` is close to the identity in scale.
pub fn make_overfit_instance(spec: &InstanceSpec) -> Result<RegressionProblem> {
    let (d, m, nt) = (spec.dim, spec.num_train, spec.num_test);
    if d == 0 || m < d || nt == 0 {
        return Err(Error::input("instance needs d ≥ 1, M ≥ d and at least one test point"));
    }
    if !(spec.label_noise.is_finite() && spec.label_noise >= 0.0) {
        return Err(Error::input("label noise must be finite and nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let teacher = DVector::from_fn(d, |_, _| normal() / (d as f64).sqrt());
    let scale = 1.0 / (m as f64).sqrt();
    let x = DMatrix::from_fn(d, m, |_, _| scale * normal());
    let xt = DMatrix::from_fn(d, nt, |_, _| scale * normal());
    let y = x.transpose() * &teacher + DVector::from_fn(m, |_, _| spec.label_noise * scale * normal());
    let yt = xt.transpose() * &teacher;
    let mut problem = RegressionProblem::new(x, y, xt, yt, 0.0)?;
    let mu = spec.mu.unwrap_or(0.5 / problem.eigenvalues[d - 1]);
    problem.check_mu(mu)?;
    problem.mu = mu;
    Ok(problem)
}

/// Parameters for a full theory run, as stored in run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConfig {
    pub instance: InstanceSpec,
    #[serde(default = "default_models")]
    pub num_models: usize,
    pub steps: usize,
    /// Defaults to `0.1 / sqrt(d)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    pub seed: u64,
    /// Step sizes for the quadratic-order fits; defaults to 9 log-spaced
    /// values in `[1e-4, 1e-2]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_sweep: Option<Vec<f64>>,
    /// States at which the approximation error is refit; defaults to the
    /// first, middle and last.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_steps: Option<Vec<usize>>,
    /// Ensemble sizes for the mean-convergence check; defaults to 16, 64, 256.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma2_models: Option<Vec<usize>>,
    /// Jointly growing `(Q, s)` pairs for the `|C′|` sweep; defaults to
    /// `(16, s/4), (64, s/2), (256, s)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_pairs: Option<Vec<(usize, usize)>>,
}

fn default_models() -> usize {
    64
}

impl TheoryConfig {
    pub fn init_scale(&self) -> f64 {
        self.init_scale.unwrap_or(0.1 / (self.instance.dim.max(1) as f64).sqrt())
    }

    pub fn mu_sweep(&self) -> Vec<f64> {
        self.mu_sweep.clone().unwrap_or_else(default_mu_sweep)
    }

    pub fn probe_steps(&self) -> Vec<usize> {
        self.probe_steps
            .clone()
            .unwrap_or_else(|| vec![0, self.steps / 2, self.steps])
    }

    pub fn lemma2_models(&self) -> Vec<usize> {
        self.lemma2_models.clone().unwrap_or_else(|| vec![16, 64, 256])
    }

    pub fn sweep_pairs(&self) -> Vec<(usize, usize)> {
        self.sweep_pairs
            .clone()
            .unwrap_or_else(|| vec![(16, self.steps / 4), (64, self.steps / 2), (256, self.steps)])
    }

    pub fn problem(&self) -> Result<RegressionProblem> {
        make_overfit_instance(&self.instance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRunReport {
    pub theorem: TheoremReport,
    pub c_prime_sweep: Vec<CPrimePoint>,
    pub c_prime_decreasing: bool,
}

pub fn run_theory(cfg: &TheoryConfig) -> Result<TheoryRunReport> {
    let problem = cfg.problem()?;
    let theorem = theorem_check(
        &problem,
        cfg.num_models,
        cfg.steps,
        cfg.init_scale(),
        cfg.seed,
        &cfg.mu_sweep(),
        &cfg.probe_steps(),
    )?;
    let sweep = c_prime_sweep(&problem, &cfg.sweep_pairs(), cfg.init_scale(), cfg.seed)?;
    let values: Vec<f64> = sweep.iter().map(|p| p.c_prime).collect();
    Ok(TheoryRunReport {
        theorem,
        c_prime_decreasing: decreasing_on_average(&values),
        c_prime_sweep: sweep,
    })
}

/// Lemma 1 reports for every model of the freshly initialised ensemble.
pub fn run_lemma1(cfg: &TheoryConfig) -> Result<Vec<Lemma1Report>> {
    let problem = cfg.problem()?;
    let state = RegressionEnsembleState::random(&problem, cfg.num_models, cfg.init_scale(), cfg.seed)?;
    let mus = cfg.mu_sweep();
    (0..cfg.num_models).map(|i| lemma1_check(&state, &problem, i, &mus)).collect()
}

/// Lemma 2 reports for each configured ensemble size at `cfg.steps`.
pub fn run_lemma2(cfg: &TheoryConfig) -> Result<Vec<Lemma2Report>> {
    let problem = cfg.problem()?;
    cfg.lemma2_models()
        .into_iter()
        .map(|q| lemma2_check(&problem, q, cfg.steps, cfg.init_scale(), cfg.seed))
        .collect()
}
