//! Strict-feasibility engine for [`LmiProblem`]s.
//!
//! Maximizes the spectral margin `t(x) = min_c λ_min(F_c(x))` by projected
//! supergradient ascent with Polyak target-level steps.
//!
//! Every problem built by [`crate::lmi`] is positively homogeneous apart from a
//! PSD constant term, so the raw margin of an infeasible problem creeps to 0⁻
//! as the blocks shrink and says nothing about how infeasible it is. The ascent
//! therefore runs on the homogenized margin `g(x, τ) = min_c λ_min(τ F₀ + L_c(x))`
//! with the total trace of the symmetric blocks pinned to its value at the
//! identity start. Strict feasibility of the original problem is equivalent to
//! `g > 0` for some `τ > 0` (divide by `τ`), and `g` is a scale-free measure of
//! infeasibility. Once a feasible direction is found, a line search along the
//! ray `α·x` maximizes the margin of the original problem.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{evaluate_constraints, worst_constraint, Assignment, BlockKind, LmiProblem};
use crate::numerics::{sym_eig, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Margin `ε` at which a point counts as strictly feasible.
    pub target_margin: f64,
    /// Frobenius-norm bound on the decision blocks.
    pub radius: f64,
    pub max_iters: usize,
    /// Iterations without best-margin progress before a restart (or stop).
    pub stagnation_window: usize,
    /// Relative progress below which the best margin counts as stagnant.
    pub stagnation_tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            target_margin: 1e-6,
            radius: 1e3,
            max_iters: 20_000,
            stagnation_window: 500,
            stagnation_tol: 1e-10,
            max_restarts: 3,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_margin > 0.0) || !(self.radius > 0.0) {
            return Err(Error::invalid("solver: target margin and radius must be positive"));
        }
        if self.max_iters == 0 || self.stagnation_window == 0 {
            return Err(Error::invalid("solver: iteration budgets must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Feasible,
    /// Budget exhausted with a negative best normalized margin.
    MarginNegative,
    /// Budget exhausted without reaching the target margin.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Block values at original scale.
    pub assignment: Assignment,
    /// Minimum constraint eigenvalue of the original problem at `assignment`.
    pub achieved_margin: f64,
    /// Best homogenized (trace-normalized) margin seen; nondecreasing history.
    pub best_margin: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Best homogenized margin after each iteration.
    pub history: Vec<f64>,
    pub target_margin: f64,
}

/// Margin value and supergradient at a point.
#[derive(Clone, Debug)]
pub struct Subgradient {
    pub value: f64,
    /// Index of the active constraint (lowest index on ties).
    pub active: usize,
    pub label: String,
    pub direction: Assignment,
}

const TIE_TOL: f64 = 1e-12;

struct Eval {
    value: f64,
    active: usize,
    direction: Assignment,
    d_tau: f64,
}

fn evaluate_homogeneous(prob: &LmiProblem, x: &Assignment, tau: f64) -> Result<Eval> {
    let mut lows = Vec::with_capacity(prob.constraints.len());
    let mut vecs = Vec::with_capacity(prob.constraints.len());
    for c in &prob.constraints {
        let eig = sym_eig(&c.assemble_scaled(&x.values, tau))?;
        lows.push(eig.eigenvalues[0]);
        vecs.push(eig.eigenvector(0));
    }
    let min = lows.iter().copied().fold(f64::INFINITY, f64::min);
    let active = lows.iter().position(|&l| l <= min + TIE_TOL).expect("at least one constraint");
    let v = &vecs[active];
    let constraint = &prob.constraints[active];

    let mut direction = Assignment::zeros(prob);
    for term in &constraint.terms {
        let lv = term.left.apply(v);
        let rv = term.right.apply(v);
        direction.values[term.block].add_outer(term.sign, &lv, &rv);
    }
    for (b, d) in prob.blocks.iter().zip(direction.values.iter_mut()) {
        if b.kind == BlockKind::Symmetric {
            *d = d.symmetric_part();
        }
    }
    let d_tau = constraint.constant.as_matrix().quadratic_form(v);
    Ok(Eval { value: min, active, direction, d_tau })
}

/// `t(x)` and a supergradient at `x` for the original problem: the adjoint
/// of `v vᵀ` for a unit eigenvector `v` of the active constraint.
pub fn subgradient(prob: &LmiProblem, assignment: &Assignment) -> Result<Subgradient> {
    prob.check_assignment(assignment)?;
    let e = evaluate_homogeneous(prob, assignment, 1.0)?;
    Ok(Subgradient {
        value: e.value,
        active: e.active,
        label: prob.constraints[e.active].label.clone(),
        direction: e.direction,
    })
}

/// Minimum constraint eigenvalue of the original problem.
pub fn margin(prob: &LmiProblem, assignment: &Assignment) -> Result<f64> {
    let values = evaluate_constraints(prob, assignment)?;
    Ok(worst_constraint(&values).map_or(f64::INFINITY, |v| v.min_eigenvalue))
}

/// Independent re-evaluation: true iff every constraint has `λ_min ≥ ε/2`.
pub fn reverify(prob: &LmiProblem, outcome: &SolveOutcome) -> bool {
    match margin(prob, &outcome.assignment) {
        Ok(m) => m >= 0.5 * outcome.target_margin,
        Err(_) => false,
    }
}

/// Trace-slice ∩ Frobenius-ball geometry for the homogenized iterates.
struct Domain {
    /// Indices of symmetric blocks; empty means no normalization.
    sym: Vec<usize>,
    /// Σ dims of symmetric blocks; the slice is `Σ tr(X_b) = total`.
    total: f64,
    radius: f64,
}

impl Domain {
    fn new(prob: &LmiProblem, radius: f64) -> Self {
        let sym: Vec<usize> = prob
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BlockKind::Symmetric)
            .map(|(i, _)| i)
            .collect();
        let total = sym.iter().map(|&i| prob.blocks[i].rows as f64).sum();
        Self { sym, total, radius }
    }

    fn normalized(&self) -> bool {
        !self.sym.is_empty()
    }

    fn trace(&self, x: &Assignment) -> f64 {
        self.sym.iter().map(|&i| x.values[i].trace()).sum()
    }

    /// Adds `s` to every diagonal entry of every symmetric block.
    fn shift(&self, x: &mut Assignment, s: f64) {
        for &i in &self.sym {
            let m = &mut x.values[i];
            for k in 0..m.rows() {
                m[(k, k)] += s;
            }
        }
    }

    /// Removes the component along the slice normal.
    fn tangent(&self, g: &mut Assignment) {
        if self.normalized() {
            let s = self.trace(g) / self.total;
            self.shift(g, -s);
        }
    }

    fn project(&self, x: &mut Assignment) {
        if !self.normalized() {
            let n = x.norm();
            if n > self.radius {
                *x = x.scale(self.radius / n);
            }
            return;
        }
        let s = (self.trace(x) - self.total) / self.total;
        self.shift(x, -s);
        // The slice's closest point to the origin is the identity pattern,
        // with squared norm `total`; shrink the offset from it if needed.
        let r2 = self.radius * self.radius - self.total;
        if r2 <= 0.0 {
            return;
        }
        let mut offset = x.clone();
        self.shift(&mut offset, -1.0);
        let off_norm = offset.norm();
        if off_norm * off_norm > r2 {
            let k = r2.sqrt() / off_norm;
            self.shift(x, -1.0);
            *x = x.scale(k);
            self.shift(x, 1.0);
        }
    }
}

fn perturb(prob: &LmiProblem, x: &Assignment, sigma: f64, rng: &mut ChaCha8Rng) -> Assignment {
    let mut out = x.clone();
    for (b, v) in prob.blocks.iter().zip(out.values.iter_mut()) {
        let mut noise = Matrix::zeros(b.rows, b.cols);
        for e in noise.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *e = sigma * z;
        }
        if b.kind == BlockKind::Symmetric {
            noise = noise.symmetric_part();
        }
        v.add_scaled(1.0, &noise);
    }
    out
}

/// Maximizes the original margin along `α·x`, `α ∈ (0, α_max]`. The margin is
/// concave in `α`, so golden-section search applies.
fn ray_search(prob: &LmiProblem, x: &Assignment, hint: f64, alpha_max: f64) -> Result<(f64, f64)> {
    let eval = |a: f64| margin(prob, &x.scale(a));
    let (mut lo, mut hi) = (0.0, alpha_max);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut a1 = hi - phi * (hi - lo);
    let mut a2 = lo + phi * (hi - lo);
    let mut f1 = eval(a1)?;
    let mut f2 = eval(a2)?;
    for _ in 0..80 {
        if f1 < f2 {
            lo = a1;
            a1 = a2;
            f1 = f2;
            a2 = lo + phi * (hi - lo);
            f2 = eval(a2)?;
        } else {
            hi = a2;
            a2 = a1;
            f2 = f1;
            a1 = hi - phi * (hi - lo);
            f1 = eval(a1)?;
        }
        if hi - lo <= 1e-12 * alpha_max {
            break;
        }
    }
    let mut best = if f1 >= f2 { (a1, f1) } else { (a2, f2) };
    if hint > 0.0 && hint <= alpha_max {
        let fh = eval(hint)?;
        if fh > best.1 {
            best = (hint, fh);
        }
    }
    Ok(best)
}

/// Searches for decision-block values with every constraint `≻ 0`.
///
/// Deterministic for a given problem and config. A `Feasible` status is
/// always backed by [`reverify`]; anything else is a numerical judgment, not
/// an infeasibility proof.
pub fn solve(prob: &LmiProblem, cfg: &SolverConfig) -> Result<SolveOutcome> {
    cfg.validate()?;
    prob.check()?;
    let domain = Domain::new(prob, cfg.radius);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let x0 = Assignment::initial(prob);
    let sigma = 0.1 * x0.norm().max(1.0) / (x0.values.iter().map(|v| v.as_slice().len()).sum::<usize>() as f64).sqrt();
    let tau_max = cfg.radius;

    let mut x = x0.clone();
    domain.project(&mut x);
    let mut tau = 1.0;

    let wrap = |e: Error, k: usize| match e {
        Error::NumericalFailure(m) => Error::NumericalFailure(format!("iteration {k}: {m}")),
        other => other,
    };

    let mut history = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut best_x = x.clone();
    let mut best_tau = tau;
    let mut ever_feasible = false;
    let mut mark = f64::NEG_INFINITY;
    let mut since_progress = 0usize;
    let mut delta = 0.0;
    let mut since_level = 0usize;
    let mut restarts = 0usize;
    let mut iterations = 0usize;

    for k in 0..cfg.max_iters {
        iterations = k + 1;
        let e = evaluate_homogeneous(prob, &x, tau).map_err(|err| wrap(err, k))?;
        if k == 0 {
            delta = 0.5 * e.value.abs().max(1.0);
        }
        if e.value > best {
            if e.value >= best + 0.5 * delta {
                since_level = 0;
            }
            best = e.value;
            best_x = x.clone();
            best_tau = tau;
        }
        history.push(best);
        if tau > 0.0 && e.value / tau >= cfg.target_margin {
            ever_feasible = true;
        }

        if best > mark + cfg.stagnation_tol * best.abs().max(1.0) {
            mark = best;
            since_progress = 0;
        } else {
            since_progress += 1;
        }

        let mut g = e.direction;
        domain.tangent(&mut g);
        let g_tau = if domain.normalized() && tau_max > 0.0 { e.d_tau } else { 0.0 };
        let g_norm2 = g.dot(&g) + g_tau * g_tau;
        let stationary = g_norm2 <= 1e-300;

        if since_progress >= cfg.stagnation_window || stationary {
            if ever_feasible || restarts >= cfg.max_restarts || stationary {
                break;
            }
            restarts += 1;
            x = perturb(prob, &best_x, sigma, &mut rng);
            domain.project(&mut x);
            let z: f64 = StandardNormal.sample(&mut rng);
            tau = (best_tau * (0.1 * z).exp()).clamp(0.0, tau_max);
            delta = 0.5 * best.abs().max(1.0);
            since_progress = 0;
            since_level = 0;
            continue;
        }

        since_level += 1;
        if since_level >= 30 {
            delta *= 0.5;
            since_level = 0;
        }
        let step = (best + delta - e.value) / g_norm2;
        x.add_scaled(step, &g);
        domain.project(&mut x);
        if domain.normalized() {
            tau = (tau + step * g_tau).clamp(0.0, tau_max);
        }
    }

    // Back to the original scale: x/τ, refined along the ray.
    let x_norm = best_x.norm();
    let alpha_max = if x_norm > 0.0 { cfg.radius / x_norm } else { 1.0 };
    let hint = if best_tau > 0.0 { 1.0 / best_tau } else { 0.0 };
    let (alpha, achieved) = if domain.normalized() && best > 0.0 {
        ray_search(prob, &best_x, hint, alpha_max)?
    } else {
        let a = if best_tau > 0.0 { hint } else { 1.0 };
        (a, margin(prob, &best_x.scale(a))?)
    };
    let assignment = best_x.scale(alpha);

    let status = if achieved >= cfg.target_margin {
        SolveStatus::Feasible
    } else if best < 0.0 {
        SolveStatus::MarginNegative
    } else {
        SolveStatus::Stalled
    };
    let mut outcome = SolveOutcome {
        status,
        assignment,
        achieved_margin: achieved,
        best_margin: best,
        iterations,
        restarts,
        history,
        target_margin: cfg.target_margin,
    };
    if outcome.status == SolveStatus::Feasible && !reverify(prob, &outcome) {
        log::warn!("solver: feasible point failed re-verification; downgrading to Stalled");
        outcome.status = SolveStatus::Stalled;
    }
    Ok(outcome)
}
