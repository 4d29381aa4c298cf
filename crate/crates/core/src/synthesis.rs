//! Certificates, observer and state-feedback gains, and the poly-quadratic
//! Lyapunov function `V(ξ, x) = xᵀ (Σ ξ_i P̄_i) x`.
//!
//! Observer gains are polytopic: `L(ξ) = Σ ξ_i L_i` with
//! `L_i = −A_i (P̄_i + CᵀC)⁻¹ Cᵀ`. The state-feedback gain is not; it needs
//! both the current and the next scheduling point:
//! `K(ξ, ξ⁺) = −Bᵀ (S(ξ⁺) + BBᵀ)⁻¹ A(ξ)` with `S(ξ) = (Σ ξ_i S̄_i⁻¹)⁻¹`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{labels, Assignment, LmiProblem};
use crate::model::{convex_combination, PolytopicSystem, SimplexPoint};
use crate::numerics::{condition_number, is_pd, solve_spd, spd_inverse, sym_eig, Matrix, SymMatrix};
use crate::solver::{SolveOutcome, SolveStatus};

/// Conditioning above which gain computations log a warning.
pub const CONDITION_WARN: f64 = 1e12;

/// Where a certificate came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub restarts: usize,
    pub best_margin: f64,
}

impl From<&SolveOutcome> for SolverDiagnostics {
    fn from(o: &SolveOutcome) -> Self {
        Self { status: o.status, iterations: o.iterations, restarts: o.restarts, best_margin: o.best_margin }
    }
}

/// Blocks `P̄_i` solving the detectability LMIs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectCertificate {
    #[serde(rename = "P_bar")]
    pub p_bar: Vec<SymMatrix>,
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<SolverDiagnostics>,
}

impl DetectCertificate {
    /// Reads `P[i]` (or a shared `P`) from a solved detectability problem.
    pub fn from_outcome(prob: &LmiProblem, outcome: &SolveOutcome, n_vertices: usize) -> Result<Self> {
        Ok(Self {
            p_bar: lyapunov_blocks(prob, &outcome.assignment, "P", n_vertices)?,
            margin: outcome.achieved_margin,
            provenance: Some(outcome.into()),
        })
    }

    pub fn check_dims(&self, sys: &PolytopicSystem) -> Result<()> {
        check_blocks("P_bar", &self.p_bar, sys)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabMethod {
    /// Vertex conditions `S̄_j − A_i S̄_i A_iᵀ + BBᵀ ≻ 0` (necessary only).
    Vertex,
    /// Slack-variable conditions (sufficient).
    Slack,
}

/// Blocks `S̄_i` (and slacks `X_i` for the slack test).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabCertificate {
    #[serde(rename = "method")]
    pub kind: StabMethod,
    #[serde(rename = "S_bar")]
    pub s_bar: Vec<SymMatrix>,
    #[serde(rename = "X", default)]
    pub x: Vec<Matrix>,
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<SolverDiagnostics>,
}

impl StabCertificate {
    pub fn from_outcome(prob: &LmiProblem, outcome: &SolveOutcome, kind: StabMethod, n_vertices: usize) -> Result<Self> {
        let s_bar = lyapunov_blocks(prob, &outcome.assignment, "S", n_vertices)?;
        let x = match kind {
            StabMethod::Vertex => Vec::new(),
            StabMethod::Slack => (0..n_vertices)
                .map(|i| {
                    outcome
                        .assignment
                        .get(prob, &labels::block("X", i))
                        .cloned()
                        .ok_or_else(|| Error::invalid(format!("problem has no block X[{}]", i + 1)))
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self { kind, s_bar, x, margin: outcome.achieved_margin, provenance: Some(outcome.into()) })
    }

    pub fn check_dims(&self, sys: &PolytopicSystem) -> Result<()> {
        check_blocks("S_bar", &self.s_bar, sys)?;
        match self.kind {
            StabMethod::Vertex if !self.x.is_empty() => Err(Error::invalid("vertex certificate carries slack blocks")),
            StabMethod::Slack if self.x.len() != sys.num_vertices() => {
                Err(Error::invalid(format!("expected {} slack blocks X, got {}", sys.num_vertices(), self.x.len())))
            }
            StabMethod::Slack if self.x.iter().any(|x| x.shape() != (sys.n_x(), sys.n_x())) => {
                Err(Error::invalid("slack block X has the wrong shape"))
            }
            _ => Ok(()),
        }
    }

    /// `P̄_i = S̄_i⁻¹`.
    pub fn p_bar(&self) -> Result<Vec<SymMatrix>> {
        self.s_bar.iter().map(spd_inverse).collect()
    }
}

fn lyapunov_blocks(prob: &LmiProblem, a: &Assignment, symbol: &str, n_vertices: usize) -> Result<Vec<SymMatrix>> {
    (0..n_vertices)
        .map(|i| {
            let m = a
                .get(prob, &labels::block(symbol, i))
                .or_else(|| a.get(prob, symbol))
                .ok_or_else(|| Error::invalid(format!("problem has no block {symbol}[{}]", i + 1)))?;
            Ok(SymMatrix::from_symmetric_part(m))
        })
        .collect()
}

fn check_blocks(field: &str, blocks: &[SymMatrix], sys: &PolytopicSystem) -> Result<()> {
    if blocks.len() != sys.num_vertices() {
        return Err(Error::invalid(format!(
            "{field}: {} blocks for a system with {} vertices",
            blocks.len(),
            sys.num_vertices()
        )));
    }
    if let Some(b) = blocks.iter().find(|b| b.dim() != sys.n_x()) {
        return Err(Error::invalid(format!("{field}: block of size {} for n_x = {}", b.dim(), sys.n_x())));
    }
    Ok(())
}

fn warn_if_ill_conditioned(what: &str, m: &SymMatrix) {
    if let Ok(k) = condition_number(m) {
        if k > CONDITION_WARN {
            log::warn!("{what}: condition number {k:.3e}");
        }
    }
}

/// Vertex observer gains `L_i`; the scheduled gain is `Σ ξ_i L_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverGains {
    #[serde(rename = "L")]
    pub vertex: Vec<Matrix>,
}

impl ObserverGains {
    pub fn at(&self, xi: &SimplexPoint) -> Result<Matrix> {
        if xi.len() != self.vertex.len() {
            return Err(Error::invalid("observer gain: simplex point length mismatch"));
        }
        Ok(convex_combination(&self.vertex, xi.weights()))
    }

    pub fn check_dims(&self, sys: &PolytopicSystem) -> Result<()> {
        if self.vertex.len() != sys.num_vertices() {
            return Err(Error::invalid(format!(
                "{} observer gains for a system with {} vertices",
                self.vertex.len(),
                sys.num_vertices()
            )));
        }
        if self.vertex.iter().any(|l| l.shape() != (sys.n_x(), sys.n_y())) {
            return Err(Error::invalid(format!("observer gains must be {}x{}", sys.n_x(), sys.n_y())));
        }
        Ok(())
    }

    /// `A_i + L_i C` for every vertex.
    pub fn vertex_error_dynamics(&self, sys: &PolytopicSystem) -> Vec<Matrix> {
        sys.vertices.iter().zip(&self.vertex).map(|(a, l)| a + &(l * &sys.c)).collect()
    }
}

/// `L_i = −A_i (P̄_i + CᵀC)⁻¹ Cᵀ` for every vertex.
pub fn observer_gains(cert: &DetectCertificate, sys: &PolytopicSystem) -> Result<ObserverGains> {
    cert.check_dims(sys)?;
    let ctc = sys.c.gram();
    let ct = sys.c.transpose();
    let vertex = sys
        .vertices
        .iter()
        .zip(&cert.p_bar)
        .enumerate()
        .map(|(i, (a, p))| {
            let inner = SymMatrix::from_symmetric_part(&(p.as_matrix() + &ctc));
            warn_if_ill_conditioned(&format!("P_bar[{}] + C'C", i + 1), &inner);
            let solved = solve_spd(&inner, &ct)
                .map_err(|_| Error::NotPositiveDefinite(format!("P_bar[{}] + C'C", i + 1)))?;
            Ok((a * &solved).scale(-1.0))
        })
        .collect::<Result<_>>()?;
    Ok(ObserverGains { vertex })
}

/// Evaluator for `K(ξ, ξ⁺)`, holding `P̄_i = S̄_i⁻¹`.
#[derive(Clone, Debug)]
pub struct ControllerGain {
    pub s_bar: Vec<SymMatrix>,
    pub p_bar: Vec<SymMatrix>,
    b: Matrix,
    bbt: Matrix,
    vertices: Vec<Matrix>,
}

impl ControllerGain {
    pub fn new(cert: &StabCertificate, sys: &PolytopicSystem) -> Result<Self> {
        check_blocks("S_bar", &cert.s_bar, sys)?;
        let p_bar = cert
            .s_bar
            .iter()
            .enumerate()
            .map(|(i, s)| spd_inverse(s).map_err(|_| Error::NotPositiveDefinite(format!("S_bar[{}]", i + 1))))
            .collect::<Result<_>>()?;
        Ok(Self::from_blocks(cert.s_bar.clone(), p_bar, sys))
    }

    /// Rebuilds the evaluator from stored `S̄_i` and `P̄_i`, which must be
    /// mutual inverses to `1e-8` relative accuracy.
    pub fn from_parts(s_bar: Vec<SymMatrix>, p_bar: Vec<SymMatrix>, sys: &PolytopicSystem) -> Result<Self> {
        check_blocks("S_bar", &s_bar, sys)?;
        check_blocks("P_bar", &p_bar, sys)?;
        for (i, (s, p)) in s_bar.iter().zip(&p_bar).enumerate() {
            let prod = s.as_matrix() * p.as_matrix();
            let gap = (&prod - &Matrix::identity(sys.n_x())).frobenius_norm();
            if !(gap <= 1e-8 * condition_number(s).unwrap_or(f64::INFINITY).max(1.0)) {
                return Err(Error::invalid(format!("P_bar[{}] is not the inverse of S_bar[{}]", i + 1, i + 1)));
            }
        }
        Ok(Self::from_blocks(s_bar, p_bar, sys))
    }

    fn from_blocks(s_bar: Vec<SymMatrix>, p_bar: Vec<SymMatrix>, sys: &PolytopicSystem) -> Self {
        Self { s_bar, p_bar, b: sys.b.clone(), bbt: sys.b.transpose().gram(), vertices: sys.vertices.clone() }
    }

    /// `P(ξ) = Σ ξ_i P̄_i`.
    pub fn p_at(&self, xi: &SimplexPoint) -> Result<SymMatrix> {
        if xi.len() != self.p_bar.len() {
            return Err(Error::invalid("controller gain: simplex point length mismatch"));
        }
        let mats: Vec<Matrix> = self.p_bar.iter().map(|p| p.as_matrix().clone()).collect();
        Ok(SymMatrix::from_symmetric_part(&convex_combination(&mats, xi.weights())))
    }

    /// `S(ξ) = P(ξ)⁻¹`.
    pub fn s_at(&self, xi: &SimplexPoint) -> Result<SymMatrix> {
        spd_inverse(&self.p_at(xi)?).map_err(|_| Error::NotPositiveDefinite("P(xi)".into()))
    }

    /// `K(ξ, ξ⁺) = −Bᵀ (S(ξ⁺) + BBᵀ)⁻¹ A(ξ)`.
    pub fn gain(&self, xi_now: &SimplexPoint, xi_next: &SimplexPoint) -> Result<Matrix> {
        if xi_now.len() != self.vertices.len() {
            return Err(Error::invalid("controller gain: simplex point length mismatch"));
        }
        let s_next = self.s_at(xi_next)?;
        let inner = SymMatrix::from_symmetric_part(&(s_next.as_matrix() + &self.bbt));
        warn_if_ill_conditioned("S(xi+) + BB'", &inner);
        let solved = solve_spd(&inner, &self.b).map_err(|_| Error::NotPositiveDefinite("S(xi+) + BB'".into()))?;
        let a_now = convex_combination(&self.vertices, xi_now.weights());
        Ok((&solved.transpose() * &a_now).scale(-1.0))
    }

    /// `A(ξ) + B K(ξ, ξ⁺)`.
    pub fn closed_loop(&self, xi_now: &SimplexPoint, xi_next: &SimplexPoint) -> Result<Matrix> {
        let a_now = convex_combination(&self.vertices, xi_now.weights());
        Ok(&a_now + &(&self.b * &self.gain(xi_now, xi_next)?))
    }
}

pub fn controller_gain(
    cert: &StabCertificate,
    sys: &PolytopicSystem,
    xi_now: &SimplexPoint,
    xi_next: &SimplexPoint,
) -> Result<Matrix> {
    ControllerGain::new(cert, sys)?.gain(xi_now, xi_next)
}

/// `V(ξ, x) = xᵀ (Σ ξ_i P̄_i) x`.
pub fn lyapunov_value(p_bar: &[SymMatrix], xi: &SimplexPoint, x: &[f64]) -> Result<f64> {
    if p_bar.is_empty() || xi.len() != p_bar.len() {
        return Err(Error::invalid("lyapunov_value: simplex point length mismatch"));
    }
    if x.len() != p_bar[0].dim() {
        return Err(Error::invalid("lyapunov_value: state length mismatch"));
    }
    Ok(p_bar.iter().zip(xi.weights()).filter(|(_, w)| **w != 0.0).map(|(p, w)| w * p.as_matrix().quadratic_form(x)).sum())
}

/// A poly-quadratic Lyapunov function with its bounds
/// `a₁‖x‖² ≤ V ≤ a₂‖x‖²` and, once measured, an empirical decrease rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyQlf {
    #[serde(rename = "P_bar")]
    pub p_bar: Vec<SymMatrix>,
    pub a1: f64,
    pub a2: f64,
    /// Worst observed `(V_k − V_{k+1}) / ‖x_k‖²`; filled by simulation.
    pub a3: Option<f64>,
}

impl PolyQlf {
    pub fn new(p_bar: Vec<SymMatrix>) -> Result<Self> {
        let mut a1 = f64::INFINITY;
        let mut a2 = f64::NEG_INFINITY;
        for p in &p_bar {
            let eig = sym_eig(p)?;
            a1 = a1.min(eig.eigenvalues[0]);
            a2 = a2.max(eig.eigenvalues[eig.eigenvalues.len() - 1]);
        }
        Ok(Self { p_bar, a1, a2, a3: None })
    }

    pub fn value(&self, xi: &SimplexPoint, x: &[f64]) -> Result<f64> {
        lyapunov_value(&self.p_bar, xi, x)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.p_bar.iter().all(|p| is_pd(p, 1e-12).unwrap_or(false))
    }
}

fn relative_gap(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).frobenius_norm() / a.frobenius_norm().max(b.frobenius_norm()).max(1.0)
}

/// Tolerance for agreement of the direct and Woodbury gain forms.
pub const WOODBURY_TOL: f64 = 1e-10;

/// `(−A(P + CᵀC)⁻¹Cᵀ, −ASCᵀ(I + CSCᵀ)⁻¹)` with `S = P⁻¹`.
pub fn lti_observer_gain_forms(a: &Matrix, c: &Matrix, p: &SymMatrix) -> Result<(Matrix, Matrix)> {
    let n = a.rows();
    if !a.is_square() || c.cols() != n || p.dim() != n {
        return Err(Error::invalid("lti_observer_gain: dimension mismatch"));
    }
    let inner = SymMatrix::from_symmetric_part(&(p.as_matrix() + &c.gram()));
    let direct = (a * &solve_spd(&inner, &c.transpose())?).scale(-1.0);

    let s = spd_inverse(p)?;
    let cs = c * s.as_matrix();
    let mut m = &cs * &c.transpose();
    for i in 0..m.rows() {
        m[(i, i)] += 1.0;
    }
    let m = SymMatrix::from_symmetric_part(&m);
    // −A S Cᵀ M⁻¹ = −(M⁻¹ C S Aᵀ)ᵀ
    let woodbury = solve_spd(&m, &(&cs * &a.transpose()))?.transpose().scale(-1.0);
    Ok((direct, woodbury))
}

/// LTI observer gain from a detectability solution `P`.
pub fn lti_observer_gain(a: &Matrix, c: &Matrix, p: &SymMatrix) -> Result<Matrix> {
    let (direct, woodbury) = lti_observer_gain_forms(a, c, p)?;
    let gap = relative_gap(&direct, &woodbury);
    if gap > WOODBURY_TOL {
        log::warn!("lti_observer_gain: direct and Woodbury forms differ by {gap:.3e}");
    }
    Ok(direct)
}

/// `(−Bᵀ(S + BBᵀ)⁻¹A, −(I + BᵀPB)⁻¹BᵀPA)` with `P = S⁻¹`.
pub fn lti_controller_gain_forms(a: &Matrix, b: &Matrix, s: &SymMatrix) -> Result<(Matrix, Matrix)> {
    let n = a.rows();
    if !a.is_square() || b.rows() != n || s.dim() != n {
        return Err(Error::invalid("lti_controller_gain: dimension mismatch"));
    }
    let inner = SymMatrix::from_symmetric_part(&(s.as_matrix() + &b.transpose().gram()));
    let direct = (&solve_spd(&inner, b)?.transpose() * a).scale(-1.0);

    let p = spd_inverse(s)?;
    let btp = &b.transpose() * p.as_matrix();
    let mut m = &btp * b;
    for i in 0..m.rows() {
        m[(i, i)] += 1.0;
    }
    let m = SymMatrix::from_symmetric_part(&m);
    let woodbury = solve_spd(&m, &(&btp * a))?.scale(-1.0);
    Ok((direct, woodbury))
}

/// LTI state-feedback gain from a stabilizability solution `S`.
pub fn lti_controller_gain(a: &Matrix, b: &Matrix, s: &SymMatrix) -> Result<Matrix> {
    let (direct, woodbury) = lti_controller_gain_forms(a, b, s)?;
    let gap = relative_gap(&direct, &woodbury);
    if gap > WOODBURY_TOL {
        log::warn!("lti_controller_gain: direct and Woodbury forms differ by {gap:.3e}");
    }
    Ok(direct)
}
