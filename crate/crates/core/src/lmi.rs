//! Finite LMI systems over named decision blocks.
//!
//! A constraint is `F(x) = F₀ + sym(Σ sign · Lᵀ X R) ≻ 0` where each term
//! references one decision block `X`. Problems are stored structurally, so the
//! adjoint of every term is available to the solver without vectorization.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PolytopicSystem;
use crate::numerics::{min_eigenvalue, Matrix, SymMatrix, SYMMETRY_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Symmetric,
    Rectangular,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecisionBlock {
    pub name: String,
    pub kind: BlockKind,
    pub rows: usize,
    pub cols: usize,
}

/// `sign · sym(Lᵀ X R)` for the block at index `block`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Term {
    pub block: usize,
    pub left: Matrix,
    pub right: Matrix,
    pub sign: f64,
    #[serde(skip)]
    left_t: Matrix,
}

impl Term {
    pub fn new(block: usize, left: Matrix, right: Matrix, sign: f64) -> Self {
        let left_t = left.transpose();
        Self { block, left, right, sign, left_t }
    }

    /// `sign · Lᵀ X R`, before symmetrization.
    pub(crate) fn apply(&self, x: &Matrix) -> Matrix {
        let xr = x * &self.right;
        (&self.left_t * &xr).scale(self.sign)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AffineConstraint {
    pub label: String,
    pub constant: SymMatrix,
    pub terms: Vec<Term>,
}

impl AffineConstraint {
    pub fn dim(&self) -> usize {
        self.constant.dim()
    }

    /// `F(x)` for block values `x`, with the constant scaled by `tau`.
    pub(crate) fn assemble_scaled(&self, values: &[Matrix], tau: f64) -> SymMatrix {
        let mut acc = self.constant.as_matrix().scale(tau);
        for term in &self.terms {
            acc.add_scaled(1.0, &term.apply(&values[term.block]));
        }
        SymMatrix::from_symmetric_part(&acc)
    }

    pub fn assemble(&self, values: &[Matrix]) -> SymMatrix {
        self.assemble_scaled(values, 1.0)
    }
}

/// Which test a problem encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LmiTest {
    /// `P̄_i − A_iᵀ P̄_j A_i + CᵀC ≻ 0`.
    Detectability,
    /// `S̄_j − A_i S̄_i A_iᵀ + BBᵀ ≻ 0`: necessary for stabilizability.
    StabVertex,
    /// The slack-variable block inequality: sufficient for stabilizability.
    StabSlack,
}

impl fmt::Display for LmiTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LmiTest::Detectability => "detectability",
            LmiTest::StabVertex => "stab-vertex",
            LmiTest::StabSlack => "stab-slack",
        })
    }
}

/// Vertex-dependent Lyapunov blocks, or one block shared by all vertices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LyapunovStructure {
    PolyQuadratic,
    Common,
}

#[derive(Clone, Debug, Serialize)]
pub struct LmiProblem {
    pub blocks: Vec<DecisionBlock>,
    pub constraints: Vec<AffineConstraint>,
    pub test: LmiTest,
    pub structure: LyapunovStructure,
}

impl LmiProblem {
    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn constraint_index(&self, label: &str) -> Option<usize> {
        self.constraints.iter().position(|c| c.label == label)
    }

    /// Checks the structural invariants: unique block names, at least one
    /// constraint, valid term references and conforming factor shapes.
    pub fn check(&self) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            if self.blocks[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::invalid(format!("duplicate block name {}", b.name)));
            }
            if b.kind == BlockKind::Symmetric && b.rows != b.cols {
                return Err(Error::invalid(format!("symmetric block {} is not square", b.name)));
            }
        }
        if self.constraints.is_empty() {
            return Err(Error::invalid("problem has no constraints"));
        }
        for c in &self.constraints {
            let d = c.dim();
            for t in &c.terms {
                let b = self
                    .blocks
                    .get(t.block)
                    .ok_or_else(|| Error::invalid(format!("{}: unknown block index {}", c.label, t.block)))?;
                if t.left.shape() != (b.rows, d) || t.right.shape() != (b.cols, d) {
                    return Err(Error::invalid(format!("{}: factor shapes do not match block {}", c.label, b.name)));
                }
            }
        }
        Ok(())
    }

    /// Assembled constraint matrices, in constraint order.
    pub fn assemble(&self, assignment: &Assignment) -> Result<Vec<SymMatrix>> {
        self.check_assignment(assignment)?;
        Ok(self.constraints.iter().map(|c| c.assemble(&assignment.values)).collect())
    }

    pub fn check_assignment(&self, assignment: &Assignment) -> Result<()> {
        if assignment.values.len() != self.blocks.len() {
            return Err(Error::invalid(format!(
                "assignment has {} blocks, problem has {}",
                assignment.values.len(),
                self.blocks.len()
            )));
        }
        for (b, v) in self.blocks.iter().zip(&assignment.values) {
            if v.shape() != (b.rows, b.cols) {
                return Err(Error::invalid(format!(
                    "block {} expects {}x{}, got {}x{}",
                    b.name,
                    b.rows,
                    b.cols,
                    v.rows(),
                    v.cols()
                )));
            }
            if !v.is_finite() {
                return Err(Error::invalid(format!("block {} has a non-finite entry", b.name)));
            }
            if b.kind == BlockKind::Symmetric && v.max_asymmetry() > SYMMETRY_TOL * v.frobenius_norm().max(1.0) {
                return Err(Error::invalid(format!("block {} is not symmetric", b.name)));
            }
        }
        Ok(())
    }
}

/// Values for every decision block, aligned with [`LmiProblem::blocks`].
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub values: Vec<Matrix>,
}

impl Assignment {
    /// Symmetric blocks at identity, rectangular blocks at zero.
    pub fn initial(prob: &LmiProblem) -> Self {
        let values = prob
            .blocks
            .iter()
            .map(|b| match b.kind {
                BlockKind::Symmetric => Matrix::identity(b.rows),
                BlockKind::Rectangular => Matrix::zeros(b.rows, b.cols),
            })
            .collect();
        Self { values }
    }

    pub fn zeros(prob: &LmiProblem) -> Self {
        Self { values: prob.blocks.iter().map(|b| Matrix::zeros(b.rows, b.cols)).collect() }
    }

    pub fn get<'a>(&'a self, prob: &LmiProblem, name: &str) -> Option<&'a Matrix> {
        prob.block_index(name).map(|i| &self.values[i])
    }

    pub fn dot(&self, other: &Assignment) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn add_scaled(&mut self, k: f64, other: &Assignment) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.add_scaled(k, b);
        }
    }

    pub fn scale(&self, k: f64) -> Assignment {
        Assignment { values: self.values.iter().map(|v| v.scale(k)).collect() }
    }
}

/// `λ_min` of one assembled constraint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintValue {
    pub label: String,
    pub min_eigenvalue: f64,
}

/// Exact per-constraint `λ_min`, in problem order.
pub fn evaluate_constraints(prob: &LmiProblem, assignment: &Assignment) -> Result<Vec<ConstraintValue>> {
    prob.assemble(assignment)?
        .iter()
        .zip(&prob.constraints)
        .map(|(m, c)| Ok(ConstraintValue { label: c.label.clone(), min_eigenvalue: min_eigenvalue(m)? }))
        .collect()
}

/// Smallest entry of [`evaluate_constraints`] with its label.
pub fn worst_constraint(values: &[ConstraintValue]) -> Option<&ConstraintValue> {
    values.iter().fold(None, |best: Option<&ConstraintValue>, v| match best {
        Some(b) if b.min_eigenvalue <= v.min_eigenvalue => Some(b),
        _ => Some(v),
    })
}

/// Label conventions (1-based vertex indices).
pub mod labels {
    pub fn positive(block: &str) -> String {
        format!("{block}>0")
    }

    pub fn cross(prefix: &str, i: usize, j: usize) -> String {
        format!("{prefix}[i={},j={}]", i + 1, j + 1)
    }

    pub fn cross_common(prefix: &str, i: usize) -> String {
        format!("{prefix}[i={}]", i + 1)
    }

    pub fn block(symbol: &str, i: usize) -> String {
        format!("{symbol}[{}]", i + 1)
    }
}

fn sym_block(name: String, n: usize) -> DecisionBlock {
    DecisionBlock { name, kind: BlockKind::Symmetric, rows: n, cols: n }
}

/// Lyapunov block names and, per vertex, the index of its block.
fn lyapunov_blocks(symbol: &str, n_x: usize, n_vertices: usize, structure: LyapunovStructure) -> (Vec<DecisionBlock>, Vec<usize>) {
    match structure {
        LyapunovStructure::PolyQuadratic => (
            (0..n_vertices).map(|i| sym_block(labels::block(symbol, i), n_x)).collect(),
            (0..n_vertices).collect(),
        ),
        LyapunovStructure::Common => (vec![sym_block(symbol.to_string(), n_x)], vec![0; n_vertices]),
    }
}

fn positivity_constraints(blocks: &[DecisionBlock]) -> Vec<AffineConstraint> {
    blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == BlockKind::Symmetric)
        .map(|(k, b)| AffineConstraint {
            label: labels::positive(&b.name),
            constant: SymMatrix::zeros(b.rows),
            terms: vec![Term::new(k, Matrix::identity(b.rows), Matrix::identity(b.rows), 1.0)],
        })
        .collect()
}

/// Vertex pairs `(i, j)` a test ranges over; with a common block `j` is moot.
fn vertex_pairs(n_vertices: usize, structure: LyapunovStructure) -> Vec<(usize, Option<usize>)> {
    match structure {
        LyapunovStructure::PolyQuadratic => {
            (0..n_vertices).flat_map(|i| (0..n_vertices).map(move |j| (i, Some(j)))).collect()
        }
        LyapunovStructure::Common => (0..n_vertices).map(|i| (i, None)).collect(),
    }
}

fn cross_label(prefix: &str, i: usize, j: Option<usize>) -> String {
    match j {
        Some(j) => labels::cross(prefix, i, j),
        None => labels::cross_common(prefix, i),
    }
}

pub fn build_detectability(sys: &PolytopicSystem) -> LmiProblem {
    build_detectability_with(sys, LyapunovStructure::PolyQuadratic)
}

/// `P̄_i ≻ 0` and `P̄_i − A_iᵀ P̄_j A_i + CᵀC ≻ 0` for all `i, j`.
pub fn build_detectability_with(sys: &PolytopicSystem, structure: LyapunovStructure) -> LmiProblem {
    let n = sys.n_x();
    let (blocks, idx) = lyapunov_blocks("P", n, sys.num_vertices(), structure);
    let mut constraints = positivity_constraints(&blocks);
    let ctc = SymMatrix::from_symmetric_part(&sys.c.gram());
    let eye = Matrix::identity(n);
    for (i, j) in vertex_pairs(sys.num_vertices(), structure) {
        let a = &sys.vertices[i];
        let pj = idx[j.unwrap_or(i)];
        constraints.push(AffineConstraint {
            label: cross_label("det", i, j),
            constant: ctc.clone(),
            terms: vec![Term::new(idx[i], eye.clone(), eye.clone(), 1.0), Term::new(pj, a.clone(), a.clone(), -1.0)],
        });
    }
    LmiProblem { blocks, constraints, test: LmiTest::Detectability, structure }
}

pub fn build_stab_vertex(sys: &PolytopicSystem) -> LmiProblem {
    build_stab_vertex_with(sys, LyapunovStructure::PolyQuadratic)
}

/// `S̄_i ≻ 0` and `S̄_j − A_i S̄_i A_iᵀ + BBᵀ ≻ 0` for all `i, j`.
pub fn build_stab_vertex_with(sys: &PolytopicSystem, structure: LyapunovStructure) -> LmiProblem {
    let n = sys.n_x();
    let (blocks, idx) = lyapunov_blocks("S", n, sys.num_vertices(), structure);
    let mut constraints = positivity_constraints(&blocks);
    // BBᵀ as (Bᵀ)ᵀ Bᵀ: bit-identical to CᵀC of the dual system.
    let bbt = SymMatrix::from_symmetric_part(&sys.b.transpose().gram());
    let eye = Matrix::identity(n);
    for (i, j) in vertex_pairs(sys.num_vertices(), structure) {
        let at = sys.vertices[i].transpose();
        let sj = idx[j.unwrap_or(i)];
        constraints.push(AffineConstraint {
            label: cross_label("stab", i, j),
            constant: bbt.clone(),
            terms: vec![Term::new(sj, eye.clone(), eye.clone(), 1.0), Term::new(idx[i], at.clone(), at, -1.0)],
        });
    }
    LmiProblem { blocks, constraints, test: LmiTest::StabVertex, structure }
}

/// `S̄_i ≻ 0` and, for all `i, j`,
/// `[[X_i + X_iᵀ − A_i S̄_i A_iᵀ + BBᵀ, X_iᵀ], [X_i, S̄_j]] ≻ 0`.
pub fn build_stab_slack(sys: &PolytopicSystem) -> LmiProblem {
    let n = sys.n_x();
    let nv = sys.num_vertices();
    let (mut blocks, idx) = lyapunov_blocks("S", n, nv, LyapunovStructure::PolyQuadratic);
    let mut constraints = positivity_constraints(&blocks);
    let x_idx: Vec<usize> = (0..nv)
        .map(|i| {
            blocks.push(DecisionBlock { name: labels::block("X", i), kind: BlockKind::Rectangular, rows: n, cols: n });
            blocks.len() - 1
        })
        .collect();

    // Embeddings of the n×n blocks into 2n×2n: E1 = [I 0], E2 = [0 I].
    let mut e1 = Matrix::zeros(n, 2 * n);
    let mut e2 = Matrix::zeros(n, 2 * n);
    e1.set_block(0, 0, &Matrix::identity(n));
    e2.set_block(0, n, &Matrix::identity(n));
    let mut constant = Matrix::zeros(2 * n, 2 * n);
    constant.set_block(0, 0, &sys.b.transpose().gram());
    let constant = SymMatrix::from_symmetric_part(&constant);

    for i in 0..nv {
        let at_e1 = &sys.vertices[i].transpose() * &e1;
        for j in 0..nv {
            constraints.push(AffineConstraint {
                label: labels::cross("slack", i, j),
                constant: constant.clone(),
                terms: vec![
                    // He(X_i) in (1,1)
                    Term::new(x_idx[i], e1.clone(), e1.clone(), 2.0),
                    // X_i in (2,1), X_iᵀ in (1,2)
                    Term::new(x_idx[i], e2.clone(), e1.clone(), 2.0),
                    // −A_i S̄_i A_iᵀ in (1,1)
                    Term::new(idx[i], at_e1.clone(), at_e1.clone(), -1.0),
                    // S̄_j in (2,2)
                    Term::new(idx[j], e2.clone(), e2.clone(), 1.0),
                ],
            });
        }
    }
    LmiProblem { blocks, constraints, test: LmiTest::StabSlack, structure: LyapunovStructure::PolyQuadratic }
}

pub fn build(sys: &PolytopicSystem, test: LmiTest, structure: LyapunovStructure) -> LmiProblem {
    match test {
        LmiTest::Detectability => build_detectability_with(sys, structure),
        LmiTest::StabVertex => build_stab_vertex_with(sys, structure),
        LmiTest::StabSlack => build_stab_slack(sys),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_system() -> PolytopicSystem {
        PolytopicSystem::new(
            vec![Matrix::scalar(0.5), Matrix::scalar(2.0)],
            Matrix::scalar(1.0),
            Matrix::scalar(1.0),
            true,
        )
        .unwrap()
    }

    fn fill(prob: &LmiProblem, sym: f64, rect: f64) -> Assignment {
        Assignment {
            values: prob
                .blocks
                .iter()
                .map(|b| match b.kind {
                    BlockKind::Symmetric => Matrix::identity(b.rows).scale(sym),
                    BlockKind::Rectangular => Matrix::identity(b.rows).scale(rect),
                })
                .collect(),
        }
    }

    fn min_of(values: &[ConstraintValue]) -> f64 {
        worst_constraint(values).unwrap().min_eigenvalue
    }

    #[test]
    fn detectability_counts() {
        let prob = build_detectability(&scalar_system());
        prob.check().unwrap();
        assert_eq!(prob.blocks.len(), 2);
        assert_eq!(prob.constraints.len(), 6);
        assert_eq!(prob.constraints[0].label, "P[1]>0");
        assert_eq!(prob.constraints[2].label, "det[i=1,j=1]");
        assert_eq!(prob.constraints[5].label, "det[i=2,j=2]");
    }

    #[test]
    fn detectability_scalar_witness() {
        let prob = build_detectability(&scalar_system());
        let values = evaluate_constraints(&prob, &fill(&prob, 0.3, 0.0)).unwrap();
        // i = 2: 0.3 − 4·0.3 + 1 = 0.1
        let worst = worst_constraint(&values).unwrap();
        assert!((worst.min_eigenvalue - 0.1).abs() < 1e-12);
        assert_eq!(worst.label, "det[i=2,j=1]");
        assert!(values.iter().all(|v| v.min_eigenvalue >= 0.1 - 1e-12));
    }

    #[test]
    fn zero_assignment_reports_zero_positivity() {
        let prob = build_detectability(&scalar_system());
        let values = evaluate_constraints(&prob, &Assignment::zeros(&prob)).unwrap();
        assert_eq!(values[0].min_eigenvalue, 0.0);
        assert_eq!(values[1].min_eigenvalue, 0.0);
    }

    #[test]
    fn identity_assignment_with_zero_dynamics() {
        let sys = PolytopicSystem::new(
            vec![Matrix::zeros(2, 2), Matrix::zeros(2, 2)],
            Matrix::zeros(2, 1),
            Matrix::zeros(1, 2),
            false,
        )
        .unwrap();
        let prob = build_detectability(&sys);
        let values = evaluate_constraints(&prob, &Assignment::initial(&prob)).unwrap();
        assert!(values[2..].iter().all(|v| v.min_eigenvalue == 1.0));
    }

    #[test]
    fn stab_vertex_scalar_witness_and_sign() {
        let prob = build_stab_vertex(&scalar_system());
        let values = evaluate_constraints(&prob, &fill(&prob, 0.3, 0.0)).unwrap();
        assert!((min_of(&values) - 0.1).abs() < 1e-12);
        assert_eq!(worst_constraint(&values).unwrap().label, "stab[i=2,j=1]");

        let unstable = PolytopicSystem::new(vec![Matrix::scalar(2.0)], Matrix::scalar(0.0), Matrix::scalar(1.0), true).unwrap();
        let prob = build_stab_vertex(&unstable);
        for s in [0.1, 1.0, 10.0] {
            let values = evaluate_constraints(&prob, &fill(&prob, s, 0.0)).unwrap();
            assert!((values[1].min_eigenvalue + 3.0 * s).abs() < 1e-12);
        }
    }

    #[test]
    fn slack_scalar_witness() {
        let prob = build_stab_slack(&scalar_system());
        prob.check().unwrap();
        assert_eq!(prob.blocks.len(), 4);
        assert_eq!(prob.constraints.len(), 2 + 4);
        let assignment = fill(&prob, 0.3, 0.3);
        let mats = prob.assemble(&assignment).unwrap();
        for (c, m) in prob.constraints.iter().zip(&mats).skip(2) {
            assert!(crate::numerics::is_pd(m, 0.0).unwrap(), "{}", c.label);
            let m = m.as_matrix();
            let schur = m[(0, 0)] - m[(1, 0)] * m[(1, 0)] / m[(1, 1)];
            assert!(schur >= 0.1 - 1e-12, "{}: {schur}", c.label);
        }
        // Worst Schur complement at i = 2: (0.6 − 1.2 + 1) − 0.09/0.3 = 0.1.
        let m = mats[prob.constraint_index("slack[i=2,j=2]").unwrap()].as_matrix().clone();
        assert!((m[(0, 0)] - m[(1, 0)] * m[(1, 0)] / m[(1, 1)] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn slack_reports_indefinite_block_by_label() {
        let prob = build_stab_slack(&scalar_system());
        let mut assignment = fill(&prob, 0.3, 0.3);
        assignment.values[1] = Matrix::scalar(-0.3);
        let values = evaluate_constraints(&prob, &assignment).unwrap();
        let bad = values.iter().find(|v| v.label == "S[2]>0").unwrap();
        assert!(bad.min_eigenvalue < 0.0);
    }

    #[test]
    fn assignment_errors() {
        let prob = build_detectability(&scalar_system());
        let short = Assignment { values: vec![Matrix::scalar(1.0)] };
        assert!(evaluate_constraints(&prob, &short).is_err());
        let wrong = Assignment { values: vec![Matrix::scalar(1.0), Matrix::identity(2)] };
        assert!(evaluate_constraints(&prob, &wrong).is_err());
    }

    #[test]
    fn common_structure_counts() {
        let prob = build_detectability_with(&scalar_system(), LyapunovStructure::Common);
        prob.check().unwrap();
        assert_eq!(prob.blocks.len(), 1);
        assert_eq!(prob.constraints.len(), 3);
        assert_eq!(prob.constraints[1].label, "det[i=1]");
    }
}
