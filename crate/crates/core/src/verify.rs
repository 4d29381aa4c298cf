//! Independent checks of certificates and the verdict ladders.
//!
//! Nothing here trusts the solver: certificate constraints are rebuilt
//! directly from the system matrices, the parameter-dependent
//! stabilizability condition is sampled on a simplex grid, and gains are
//! exercised by simulation while the Lyapunov function is monitored.

use std::fmt::{self, Write as _};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{self, labels, evaluate_constraints, worst_constraint, ConstraintValue, LmiTest, LyapunovStructure};
use crate::model::{random_schedule, PolytopicSystem, Schedule, ScheduleMode, SimplexPoint};
use crate::numerics::{min_eigenvalue, spd_inverse, spectral_radius, Matrix, SymMatrix};
use crate::solver::{solve, SolveOutcome, SolveStatus, SolverConfig};
use crate::synthesis::{observer_gains, ControllerGain, DetectCertificate, ObserverGains, StabCertificate, StabMethod};

/// Below this state norm a trajectory counts as converged.
pub const CONVERGED_NORM: f64 = 1e-9;
/// Relative band a one-step decrease must clear.
pub const DESCENT_BAND: f64 = 1e-12;
/// A trajectory is aborted, and flagged, beyond this state norm.
pub const DIVERGENCE_NORM: f64 = 1e12;

fn lambda_min(m: &Matrix) -> Result<f64> {
    min_eigenvalue(&SymMatrix::from_symmetric_part(m))
}

/// Per-constraint minimum eigenvalues of a certificate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateCheck {
    pub values: Vec<ConstraintValue>,
    pub min_margin: f64,
    pub worst_label: String,
    pub eps: f64,
    pub passed: bool,
}

impl CertificateCheck {
    fn from_values(values: Vec<ConstraintValue>, eps: f64) -> Self {
        let (worst_label, min_margin) = worst_constraint(&values)
            .map(|v| (v.label.clone(), v.min_eigenvalue))
            .unwrap_or_else(|| (String::new(), f64::INFINITY));
        // NaN margins never pass.
        let passed = min_margin >= eps;
        Self { values, min_margin, worst_label, eps, passed }
    }
}

fn positivity(symbol: &str, blocks: &[SymMatrix]) -> Result<Vec<ConstraintValue>> {
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            Ok(ConstraintValue { label: labels::positive(&labels::block(symbol, i)), min_eigenvalue: min_eigenvalue(b)? })
        })
        .collect()
}

/// `P̄_i ≻ 0` and `P̄_i − A_iᵀ P̄_j A_i + CᵀC ≻ 0` for all `i, j`.
pub fn check_detect_certificate(sys: &PolytopicSystem, cert: &DetectCertificate, eps: f64) -> Result<CertificateCheck> {
    cert.check_dims(sys)?;
    let ctc = sys.c.gram();
    let mut values = positivity("P", &cert.p_bar)?;
    for (i, a) in sys.vertices.iter().enumerate() {
        for (j, pj) in cert.p_bar.iter().enumerate() {
            let m = &(cert.p_bar[i].as_matrix() - &(&(&a.transpose() * pj.as_matrix()) * a)) + &ctc;
            values.push(ConstraintValue { label: labels::cross("det", i, j), min_eigenvalue: lambda_min(&m)? });
        }
    }
    Ok(CertificateCheck::from_values(values, eps))
}

/// The vertex or slack inequalities a stabilizability certificate claims.
pub fn check_stab_certificate(sys: &PolytopicSystem, cert: &StabCertificate, eps: f64) -> Result<CertificateCheck> {
    cert.check_dims(sys)?;
    let n = sys.n_x();
    let bbt = sys.b.transpose().gram();
    let mut values = positivity("S", &cert.s_bar)?;
    for (i, a) in sys.vertices.iter().enumerate() {
        let ai_si_ait = &(a * cert.s_bar[i].as_matrix()) * &a.transpose();
        for (j, sj) in cert.s_bar.iter().enumerate() {
            let (label, m) = match cert.kind {
                StabMethod::Vertex => (labels::cross("stab", i, j), &(sj.as_matrix() - &ai_si_ait) + &bbt),
                StabMethod::Slack => {
                    let x = &cert.x[i];
                    let top = &(&(x + &x.transpose()) - &ai_si_ait) + &bbt;
                    let mut m = Matrix::zeros(2 * n, 2 * n);
                    m.set_block(0, 0, &top);
                    m.set_block(0, n, &x.transpose());
                    m.set_block(n, 0, x);
                    m.set_block(n, n, sj.as_matrix());
                    (labels::cross("slack", i, j), m)
                }
            };
            values.push(ConstraintValue { label, min_eigenvalue: lambda_min(&m)? });
        }
    }
    Ok(CertificateCheck::from_values(values, eps))
}

/// Resolution `m` of the simplex grid `{k/m : Σ k = m}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
}

impl GridSpec {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::invalid("grid resolution must be at least 1"));
        }
        Ok(Self { resolution })
    }

    /// `C(m + N − 1, N − 1)` points per simplex.
    pub fn size(&self, n_vertices: usize) -> usize {
        let (m, k) = (self.resolution as u128, n_vertices.saturating_sub(1) as u128);
        let mut c: u128 = 1;
        for t in 1..=k {
            c = c * (m + t) / t;
        }
        c as usize
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { resolution: 20 }
    }
}

/// All grid points, first coordinate descending (so `e_1` first, `e_N` last).
pub fn simplex_grid(n_vertices: usize, grid: GridSpec) -> Vec<SimplexPoint> {
    fn fill(rest: usize, slots: usize, m: usize, prefix: &mut Vec<usize>, out: &mut Vec<SimplexPoint>) {
        if slots == 1 {
            prefix.push(rest);
            let w = prefix.iter().map(|&k| k as f64 / m as f64).collect();
            out.push(SimplexPoint::new(w).expect("grid weights lie on the simplex"));
            prefix.pop();
            return;
        }
        for k in (0..=rest).rev() {
            prefix.push(k);
            fill(rest - k, slots - 1, m, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(grid.size(n_vertices));
    if n_vertices > 0 {
        fill(grid.resolution, n_vertices, grid.resolution, &mut Vec::new(), &mut out);
    }
    out
}

/// Grid values closer than this (relative to `max(1, |v|)`) are ties.
pub const GRID_TIE: f64 = 1e-12;

fn tie_band(v: f64) -> f64 {
    GRID_TIE * v.abs().max(1.0)
}

/// Worst grid pair for `S(ξ⁺) − A(ξ) S(ξ) A(ξ)ᵀ + BBᵀ ≻ 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridReport {
    pub resolution: usize,
    pub pairs: usize,
    pub worst_xi: Vec<f64>,
    pub worst_xi_next: Vec<f64>,
    pub worst_value: f64,
    pub eps: f64,
    pub passed: bool,
}

/// Samples the parameter-dependent stabilizability condition at every
/// ordered pair of grid points. Passing is evidence, not proof.
pub fn grid_check_stab(sys: &PolytopicSystem, cert: &StabCertificate, grid: GridSpec, eps: f64) -> Result<GridReport> {
    GridSpec::new(grid.resolution)?;
    let evaluator = ControllerGain::new(cert, sys)?;
    let points = simplex_grid(sys.num_vertices(), grid);
    let bbt = sys.b.transpose().gram();

    // S(ξ) at every point, and W(ξ) = A(ξ) S(ξ) A(ξ)ᵀ − BBᵀ.
    let s_at: Vec<Matrix> =
        points.par_iter().map(|xi| evaluator.s_at(xi).map(SymMatrix::into_matrix)).collect::<Result<_>>()?;
    let w_at: Vec<Matrix> = points
        .par_iter()
        .zip(&s_at)
        .map(|(xi, s)| {
            let a = sys.evaluate_a(xi)?;
            Ok(&(&(&a * s) * &a.transpose()) - &bbt)
        })
        .collect::<Result<_>>()?;

    // Row minima in parallel. Values within GRID_TIE of the running minimum
    // count as ties; a row starts from its diagonal pair so ties resolve to
    // ξ⁺ = ξ, otherwise to the first pair in grid order. NaN always wins.
    let rows: Vec<(usize, f64)> = w_at
        .par_iter()
        .enumerate()
        .map(|(r, w)| {
            let mut best = (r, lambda_min(&(&s_at[r] - w))?);
            for (k, s_next) in s_at.iter().enumerate() {
                if best.1.is_nan() {
                    break;
                }
                let v = lambda_min(&(s_next - w))?;
                if v.is_nan() || v < best.1 - tie_band(best.1) {
                    best = (k, v);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let (row, (col, worst_value)) = rows.iter().copied().enumerate().fold((0, rows[0]), |best, (r, v)| {
        if !best.1 .1.is_nan() && (v.1.is_nan() || v.1 < best.1 .1 - tie_band(best.1 .1)) {
            (r, v)
        } else {
            best
        }
    });

    Ok(GridReport {
        resolution: grid.resolution,
        pairs: points.len() * points.len(),
        worst_xi: points[row].weights().to_vec(),
        worst_xi_next: points[col].weights().to_vec(),
        worst_value,
        eps,
        passed: worst_value >= eps,
    })
}

/// One step at which `V` failed to decrease (or the state diverged).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DescentViolation {
    pub trajectory: usize,
    pub step: usize,
    pub v_before: f64,
    pub v_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub trajectories: usize,
    pub steps: usize,
    /// Largest `V_{k+1} / V_k` over steps with a nonzero state.
    pub worst_ratio: f64,
    /// Smallest `(V_k − V_{k+1}) / ‖x_k‖²` over steps with a nonzero state.
    pub decrease_rate: Option<f64>,
    pub max_terminal_norm: f64,
    pub diverged: usize,
    pub violations: Vec<DescentViolation>,
}

impl SimReport {
    fn empty(steps: usize) -> Self {
        Self {
            trajectories: 0,
            steps,
            worst_ratio: 0.0,
            decrease_rate: None,
            max_terminal_norm: 0.0,
            diverged: 0,
            violations: Vec::new(),
        }
    }

    /// Folds `other` in, renumbering its trajectories after ours.
    pub fn merge(&mut self, other: SimReport) {
        let offset = self.trajectories;
        self.trajectories += other.trajectories;
        self.steps = self.steps.max(other.steps);
        self.worst_ratio = self.worst_ratio.max(other.worst_ratio);
        self.decrease_rate = match (self.decrease_rate, other.decrease_rate) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.max_terminal_norm = self.max_terminal_norm.max(other.max_terminal_norm);
        self.diverged += other.diverged;
        self.violations.extend(other.violations.into_iter().map(|v| DescentViolation { trajectory: v.trajectory + offset, ..v }));
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// States and Lyapunov values along one simulated run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub xi: Vec<SimplexPoint>,
    pub states: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl Trajectory {
    /// CSV with header `k,xi_1..xi_N,x_1..x_n,V`, doubles to 17 significant digits.
    pub fn to_csv(&self) -> String {
        let n_xi = self.xi.first().map_or(0, SimplexPoint::len);
        let n_x = self.states.first().map_or(0, Vec::len);
        let mut out = String::from("k");
        (1..=n_xi).for_each(|i| write!(out, ",xi_{i}").unwrap());
        (1..=n_x).for_each(|i| write!(out, ",x_{i}").unwrap());
        out.push_str(",V\n");
        for (k, (x, v)) in self.states.iter().zip(&self.values).enumerate() {
            write!(out, "{k}").unwrap();
            for w in self.xi[k].weights() {
                write!(out, ",{w:.16e}").unwrap();
            }
            for s in x {
                write!(out, ",{s:.16e}").unwrap();
            }
            writeln!(out, ",{v:.16e}").unwrap();
        }
        out
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Runs `x_{k+1} = step(k, x_k)` along `schedule`, watching `V(ξ_k, x_k)`.
fn monitor(
    schedule: &Schedule,
    p_bar: &[Matrix],
    x0: &[f64],
    mut step: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
) -> Result<(SimReport, Trajectory)> {
    let value = |k: usize, x: &[f64]| -> f64 {
        let w = schedule.points[k].weights();
        p_bar.iter().zip(w).filter(|(_, w)| **w != 0.0).map(|(p, w)| w * p.quadratic_form(x)).sum()
    };
    let steps = schedule.steps();
    let mut report = SimReport::empty(steps);
    report.trajectories = 1;
    let mut traj = Trajectory { xi: Vec::with_capacity(steps + 1), states: Vec::with_capacity(steps + 1), values: Vec::new() };
    let mut x = x0.to_vec();
    let mut v = value(0, &x);
    traj.xi.push(schedule.points[0].clone());
    traj.states.push(x.clone());
    traj.values.push(v);

    for k in 0..steps {
        let next = step(k, &x)?;
        let v_next = value(k + 1, &next);
        let x_norm = norm(&x);
        let next_norm = norm(&next);
        let diverged = !(next_norm <= DIVERGENCE_NORM) || !v_next.is_finite();
        if x_norm > CONVERGED_NORM {
            if v > 0.0 {
                report.worst_ratio = report.worst_ratio.max(v_next / v);
            }
            let rate = (v - v_next) / (x_norm * x_norm);
            report.decrease_rate = Some(report.decrease_rate.map_or(rate, |r: f64| r.min(rate)));
        }
        let fails_descent = x_norm > CONVERGED_NORM && !(v_next <= v - DESCENT_BAND * v);
        if fails_descent || diverged {
            report.violations.push(DescentViolation { trajectory: 0, step: k, v_before: v, v_after: v_next });
        }
        x = next;
        v = v_next;
        traj.xi.push(schedule.points[k + 1].clone());
        traj.states.push(x.clone());
        traj.values.push(v);
        if diverged {
            report.diverged = 1;
            break;
        }
    }
    report.max_terminal_norm = norm(&x);
    Ok((report, traj))
}

fn check_schedule(sys: &PolytopicSystem, schedule: &Schedule, x0: &[f64]) -> Result<()> {
    if schedule.points.len() < 2 {
        return Err(Error::invalid("schedule needs at least two points"));
    }
    if schedule.num_vertices() != sys.num_vertices() {
        return Err(Error::invalid(format!(
            "schedule has {} weights per point for a system with {} vertices",
            schedule.num_vertices(),
            sys.num_vertices()
        )));
    }
    if x0.len() != sys.n_x() {
        return Err(Error::invalid(format!("initial state has length {} but n_x = {}", x0.len(), sys.n_x())));
    }
    Ok(())
}

/// Observer error dynamics `e_{k+1} = (A(ξ_k) + L(ξ_k) C) e_k`, monitored with `P̄`.
pub fn simulate_error_system(
    sys: &PolytopicSystem,
    gains: &ObserverGains,
    p_bar: &[SymMatrix],
    schedule: &Schedule,
    e0: &[f64],
) -> Result<(SimReport, Trajectory)> {
    check_schedule(sys, schedule, e0)?;
    gains.check_dims(sys)?;
    if p_bar.len() != sys.num_vertices() || p_bar.iter().any(|p| p.dim() != sys.n_x()) {
        return Err(Error::invalid("Lyapunov blocks do not match the system"));
    }
    let closed = gains.vertex_error_dynamics(sys);
    let p: Vec<Matrix> = p_bar.iter().map(|p| p.as_matrix().clone()).collect();
    monitor(schedule, &p, e0, |k, e| Ok(crate::model::convex_combination(&closed, schedule.points[k].weights()).apply(e)))
}

/// Closed loop `x_{k+1} = (A(ξ_k) + B K(ξ_k, ξ_{k+1})) x_k`, monitored with `P̄_i = S̄_i⁻¹`.
pub fn simulate_closed_loop(
    sys: &PolytopicSystem,
    cert: &StabCertificate,
    schedule: &Schedule,
    x0: &[f64],
) -> Result<(SimReport, Trajectory)> {
    check_schedule(sys, schedule, x0)?;
    let gain = ControllerGain::new(cert, sys)?;
    simulate_with_controller(&gain, schedule, x0)
}

/// Closed loop driven by a prebuilt gain evaluator.
pub fn simulate_with_controller(gain: &ControllerGain, schedule: &Schedule, x0: &[f64]) -> Result<(SimReport, Trajectory)> {
    if schedule.points.len() < 2 || schedule.num_vertices() != gain.p_bar.len() {
        return Err(Error::invalid("schedule does not match the controller"));
    }
    if x0.len() != gain.p_bar[0].dim() {
        return Err(Error::invalid(format!("initial state has length {} but n_x = {}", x0.len(), gain.p_bar[0].dim())));
    }
    let p: Vec<Matrix> = gain.p_bar.iter().map(|p| p.as_matrix().clone()).collect();
    monitor(schedule, &p, x0, |k, x| {
        Ok(gain.closed_loop(&schedule.points[k], &schedule.points[k + 1])?.apply(x))
    })
}

/// Seeded batch of random trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub trajectories: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        Self { trajectories: 1000, steps: 100, seed: 0 }
    }
}

/// Schedule and unit initial state of trajectory `t`: even `t` switch
/// between vertices, odd `t` move through the interior.
pub fn monte_carlo_case(n_vertices: usize, n_x: usize, spec: &MonteCarloSpec, t: usize) -> Result<(Schedule, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(t as u64);
    let mode = if t.is_multiple_of(2) { ScheduleMode::VertexSwitching } else { ScheduleMode::InteriorDirichlet };
    let schedule = random_schedule(n_vertices, spec.steps, mode, rng.next_u64())?;
    let mut x0: Vec<f64> = (0..n_x).map(|_| StandardNormal.sample(&mut rng)).collect();
    let r = norm(&x0);
    x0.iter_mut().for_each(|v| *v /= r);
    Ok((schedule, x0))
}

fn monte_carlo(
    sys: &PolytopicSystem,
    spec: &MonteCarloSpec,
    run: impl Fn(&Schedule, &[f64]) -> Result<SimReport> + Sync,
) -> Result<SimReport> {
    let reports: Vec<SimReport> = (0..spec.trajectories)
        .into_par_iter()
        .map(|t| {
            let (schedule, x0) = monte_carlo_case(sys.num_vertices(), sys.n_x(), spec, t)?;
            run(&schedule, &x0)
        })
        .collect::<Result<_>>()?;
    let mut total = SimReport::empty(spec.steps);
    reports.into_iter().for_each(|r| total.merge(r));
    Ok(total)
}

pub fn monte_carlo_error_system(
    sys: &PolytopicSystem,
    gains: &ObserverGains,
    p_bar: &[SymMatrix],
    spec: &MonteCarloSpec,
) -> Result<SimReport> {
    monte_carlo(sys, spec, |schedule, x0| Ok(simulate_error_system(sys, gains, p_bar, schedule, x0)?.0))
}

pub fn monte_carlo_closed_loop(sys: &PolytopicSystem, cert: &StabCertificate, spec: &MonteCarloSpec) -> Result<SimReport> {
    let gain = ControllerGain::new(cert, sys)?;
    monte_carlo(sys, spec, |schedule, x0| Ok(simulate_with_controller(&gain, schedule, x0)?.0))
}

/// Spectral radii of `A_i + L_i C`.
pub fn observer_vertex_radii(sys: &PolytopicSystem, gains: &ObserverGains) -> Result<Vec<f64>> {
    gains.vertex_error_dynamics(sys).iter().map(spectral_radius).collect()
}

/// Spectral radii of `A_i + B K(e_i, e_i)`.
pub fn controller_vertex_radii(sys: &PolytopicSystem, cert: &StabCertificate) -> Result<Vec<f64>> {
    let gain = ControllerGain::new(cert, sys)?;
    let n = sys.num_vertices();
    (0..n)
        .map(|i| {
            let e = SimplexPoint::vertex(n, i);
            spectral_radius(&gain.closed_loop(&e, &e)?)
        })
        .collect()
}

/// Intermediate quantities of the detectability sufficiency argument.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectChain {
    /// `min λ_min(S̄_j − (A_i + L_i C) S̄_i (A_i + L_i C)ᵀ)`.
    pub q_min: f64,
    /// `max ‖(A_i + L_i C) − A_i (P̄_i + CᵀC)⁻¹ P̄_i‖_F`.
    pub factorization_gap: f64,
    /// `min λ_min(P̄_i − (A_i + L_i C)ᵀ P̄_j (A_i + L_i C))`.
    pub pair_descent_min: f64,
}

pub fn detect_proof_chain(sys: &PolytopicSystem, cert: &DetectCertificate) -> Result<DetectChain> {
    let gains = observer_gains(cert, sys)?;
    let closed = gains.vertex_error_dynamics(sys);
    let s_bar: Vec<SymMatrix> = cert.p_bar.iter().map(spd_inverse).collect::<Result<_>>()?;
    let ctc = sys.c.gram();
    let mut chain = DetectChain { q_min: f64::INFINITY, factorization_gap: 0.0, pair_descent_min: f64::INFINITY };
    for (i, acl) in closed.iter().enumerate() {
        let inner = spd_inverse(&SymMatrix::from_symmetric_part(&(cert.p_bar[i].as_matrix() + &ctc)))?;
        let factored = &(&sys.vertices[i] * inner.as_matrix()) * cert.p_bar[i].as_matrix();
        chain.factorization_gap = chain.factorization_gap.max((acl - &factored).frobenius_norm());
        let pushed = &(acl * s_bar[i].as_matrix()) * &acl.transpose();
        for j in 0..closed.len() {
            chain.q_min = chain.q_min.min(lambda_min(&(s_bar[j].as_matrix() - &pushed))?);
            let descent = cert.p_bar[i].as_matrix() - &(&(&acl.transpose() * cert.p_bar[j].as_matrix()) * acl);
            chain.pair_descent_min = chain.pair_descent_min.min(lambda_min(&descent)?);
        }
    }
    Ok(chain)
}

/// Intermediate quantities of the slack-variable sufficiency argument.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlackChain {
    /// `min λ_min` of `[[P̄_i, A_iᵀ, 0], [A_i, X_i + X_iᵀ + BBᵀ, X_iᵀP̄_j], [0, P̄_j X_i, P̄_j]]`.
    pub interm_min: f64,
    /// `min λ_min(S̄_j − A_i S̄_i A_iᵀ + BBᵀ)`.
    pub vertex_condition_min: f64,
    /// `min λ_min(P̄_i − A_clᵀ P̄_j A_cl)` with `A_cl = A_i + B K(e_i, e_j)`.
    pub pair_descent_min: f64,
}

pub fn slack_proof_chain(sys: &PolytopicSystem, cert: &StabCertificate) -> Result<SlackChain> {
    if cert.kind != StabMethod::Slack {
        return Err(Error::invalid("slack proof chain needs a slack certificate"));
    }
    cert.check_dims(sys)?;
    let gain = ControllerGain::new(cert, sys)?;
    let n = sys.n_x();
    let nv = sys.num_vertices();
    let bbt = sys.b.transpose().gram();
    let mut chain = SlackChain { interm_min: f64::INFINITY, vertex_condition_min: f64::INFINITY, pair_descent_min: f64::INFINITY };
    for i in 0..nv {
        let a = &sys.vertices[i];
        let x = &cert.x[i];
        let pi = gain.p_bar[i].as_matrix();
        let pushed = &(a * cert.s_bar[i].as_matrix()) * &a.transpose();
        for j in 0..nv {
            let pj = gain.p_bar[j].as_matrix();
            let mut m = Matrix::zeros(3 * n, 3 * n);
            m.set_block(0, 0, pi);
            m.set_block(0, n, &a.transpose());
            m.set_block(n, 0, a);
            m.set_block(n, n, &(&(x + &x.transpose()) + &bbt));
            let pjx = pj * x;
            m.set_block(n, 2 * n, &pjx.transpose());
            m.set_block(2 * n, n, &pjx);
            m.set_block(2 * n, 2 * n, pj);
            chain.interm_min = chain.interm_min.min(lambda_min(&m)?);

            let vertex = &(cert.s_bar[j].as_matrix() - &pushed) + &bbt;
            chain.vertex_condition_min = chain.vertex_condition_min.min(lambda_min(&vertex)?);

            let acl = gain.closed_loop(&SimplexPoint::vertex(nv, i), &SimplexPoint::vertex(nv, j))?;
            let descent = pi - &(&(&acl.transpose() * pj) * &acl);
            chain.pair_descent_min = chain.pair_descent_min.min(lambda_min(&descent)?);
        }
    }
    Ok(chain)
}

/// `λ_min(XᵀS⁻¹X + YᵀSY − XᵀY − YᵀX)`, which is never negative.
pub fn young_gap(x: &Matrix, y: &Matrix, s: &SymMatrix) -> Result<f64> {
    if x.shape() != y.shape() || x.rows() != s.dim() {
        return Err(Error::invalid("young_gap: dimension mismatch"));
    }
    let s_inv = spd_inverse(s)?;
    let xt = x.transpose();
    let yt = y.transpose();
    let lhs = &(&(&xt * s_inv.as_matrix()) * x) + &(&(&yt * s.as_matrix()) * y);
    let rhs = &(&xt * y) + &(&yt * x);
    lambda_min(&(&lhs - &rhs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Detectability,
    Stabilizability,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictStatus {
    Holds,
    FailsNecessary,
    Unknown,
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictStatus::Holds => "holds",
            VerdictStatus::FailsNecessary => "fails necessary conditions",
            VerdictStatus::Unknown => "unknown",
        })
    }
}

/// Which stabilizability tests the ladder runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabChoice {
    /// Slack (sufficient) first, then the vertex screen.
    #[default]
    Auto,
    Slack,
    Vertex,
}

/// Summary of one solver run, kept so negative verdicts can be rerun.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub test: LmiTest,
    pub structure: LyapunovStructure,
    pub status: SolveStatus,
    pub achieved_margin: f64,
    pub best_margin: f64,
    pub worst_label: String,
    pub iterations: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub target_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: Property,
    pub status: VerdictStatus,
    pub strictly_polytopic: bool,
    pub note: String,
    pub reports: Vec<MarginReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detect_certificate: Option<DetectCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stab_certificate: Option<StabCertificate>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerdictConfig {
    pub solver: SolverConfig,
    pub structure: Structure,
    pub method: StabChoice,
}

/// Serializable mirror of [`LyapunovStructure`] with a default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    #[default]
    PolyQuadratic,
    Common,
}

impl From<Structure> for LyapunovStructure {
    fn from(s: Structure) -> Self {
        match s {
            Structure::PolyQuadratic => LyapunovStructure::PolyQuadratic,
            Structure::Common => LyapunovStructure::Common,
        }
    }
}

fn run(
    sys: &PolytopicSystem,
    test: LmiTest,
    structure: LyapunovStructure,
    cfg: &SolverConfig,
) -> Result<(lmi::LmiProblem, SolveOutcome, MarginReport)> {
    let prob = lmi::build(sys, test, structure);
    let outcome = solve(&prob, cfg)?;
    let worst_label = worst_constraint(&evaluate_constraints(&prob, &outcome.assignment)?)
        .map(|v| v.label.clone())
        .unwrap_or_default();
    let report = MarginReport {
        test,
        structure,
        status: outcome.status,
        achieved_margin: outcome.achieved_margin,
        best_margin: outcome.best_margin,
        worst_label,
        iterations: outcome.iterations,
        restarts: outcome.restarts,
        max_iters: cfg.max_iters,
        target_margin: cfg.target_margin,
    };
    log::info!(
        "{test} ({structure:?}): {:?}, margin {:.3e}, best normalized {:.3e}, {} iterations",
        outcome.status,
        outcome.achieved_margin,
        outcome.best_margin,
        outcome.iterations
    );
    Ok((prob, outcome, report))
}

fn budget_note(report: &MarginReport) -> String {
    format!(
        "best normalized margin {:.6e} after {} iterations (budget {}); a numerical judgment, not a proof",
        report.best_margin, report.iterations, report.max_iters
    )
}

/// Detectability ladder: feasible LMIs give `Holds`; infeasibility is a
/// necessary-condition failure only for strictly polytopic systems.
pub fn verdict_detect(sys: &PolytopicSystem, cfg: &VerdictConfig) -> Result<Verdict> {
    let sys = sys.clone().checked()?;
    let structure = cfg.structure.into();
    let (prob, outcome, report) = run(&sys, LmiTest::Detectability, structure, &cfg.solver)?;
    let mut verdict = Verdict {
        property: Property::Detectability,
        status: VerdictStatus::Unknown,
        strictly_polytopic: sys.strictly_polytopic,
        note: String::new(),
        reports: vec![report],
        detect_certificate: None,
        stab_certificate: None,
    };
    if outcome.status == SolveStatus::Feasible {
        let cert = DetectCertificate::from_outcome(&prob, &outcome, sys.num_vertices())?;
        let check = check_detect_certificate(&sys, &cert, cfg.solver.target_margin / 2.0)?;
        if check.passed {
            verdict.status = VerdictStatus::Holds;
            verdict.note = format!("detectability LMIs feasible with margin {:.6e}", cert.margin);
        } else {
            verdict.note = format!("solver certificate failed the independent check at {}", check.worst_label);
        }
        verdict.detect_certificate = Some(cert);
    } else if sys.strictly_polytopic {
        verdict.status = VerdictStatus::FailsNecessary;
        verdict.note = format!("detectability LMIs infeasible: {}", budget_note(&verdict.reports[0]));
    } else {
        verdict.note = format!(
            "detectability LMIs infeasible; they are only sufficient for systems that are not strictly polytopic: {}",
            budget_note(&verdict.reports[0])
        );
    }
    Ok(verdict)
}

/// Stabilizability ladder: slack conditions (sufficient), then the vertex
/// conditions (necessary for strictly polytopic systems).
pub fn verdict_stab(sys: &PolytopicSystem, cfg: &VerdictConfig) -> Result<Verdict> {
    let sys = sys.clone().checked()?;
    let mut verdict = Verdict {
        property: Property::Stabilizability,
        status: VerdictStatus::Unknown,
        strictly_polytopic: sys.strictly_polytopic,
        note: String::new(),
        reports: Vec::new(),
        detect_certificate: None,
        stab_certificate: None,
    };
    let n = sys.num_vertices();

    if cfg.method != StabChoice::Vertex {
        let (prob, outcome, report) = run(&sys, LmiTest::StabSlack, LyapunovStructure::PolyQuadratic, &cfg.solver)?;
        verdict.reports.push(report);
        if outcome.status == SolveStatus::Feasible {
            let cert = StabCertificate::from_outcome(&prob, &outcome, StabMethod::Slack, n)?;
            let check = check_stab_certificate(&sys, &cert, cfg.solver.target_margin / 2.0)?;
            verdict.stab_certificate = Some(cert);
            if check.passed {
                verdict.status = VerdictStatus::Holds;
                verdict.note = "sufficient slack conditions feasible".into();
                return Ok(verdict);
            }
            verdict.note = format!("solver certificate failed the independent check at {}", check.worst_label);
            return Ok(verdict);
        }
        if cfg.method == StabChoice::Slack {
            verdict.note = format!(
                "sufficient slack conditions infeasible; necessary conditions not checked: {}",
                budget_note(&verdict.reports[0])
            );
            return Ok(verdict);
        }
    }

    let structure = cfg.structure.into();
    let (prob, outcome, report) = run(&sys, LmiTest::StabVertex, structure, &cfg.solver)?;
    verdict.reports.push(report);
    if outcome.status == SolveStatus::Feasible {
        verdict.stab_certificate = Some(StabCertificate::from_outcome(&prob, &outcome, StabMethod::Vertex, n)?);
        verdict.note = "necessary conditions feasible; sufficiency not established".into();
    } else if sys.strictly_polytopic {
        verdict.status = VerdictStatus::FailsNecessary;
        verdict.note = format!("necessary vertex conditions infeasible: {}", budget_note(verdict.reports.last().unwrap()));
    } else {
        verdict.note = format!(
            "vertex conditions infeasible, but they are necessary only for strictly polytopic systems: {}",
            budget_note(verdict.reports.last().unwrap())
        );
    }
    Ok(verdict)
}
