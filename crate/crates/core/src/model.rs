//! Polytopic systems, simplex coordinates and parameter schedules.
//!
//! The crate works directly in simplex coordinates `ξ`: the map from the
//! physical parameter to `ξ` belongs to the caller, and continuity of that map
//! is assumed rather than checked.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{spectral_radius, Matrix};

/// Tolerance on `|Σ ξ_i − 1|`.
pub const SIMPLEX_SUM_TOL: f64 = 1e-10;
/// Components in `[−SIMPLEX_CLAMP_TOL, 0)` are clamped to zero.
pub const SIMPLEX_CLAMP_TOL: f64 = 1e-12;

/// `x_{k+1} = A(ξ_k) x_k + B u_k`, `y_k = C x_k` with
/// `A(ξ) = Σ ξ_i A_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolytopicSystem {
    pub name: Option<String>,
    pub vertices: Vec<Matrix>,
    pub b: Matrix,
    pub c: Matrix,
    /// Declared, not inferred: whether every simplex vertex is attained by the
    /// parameter map. Only gates how strong a negative verdict may be.
    pub strictly_polytopic: bool,
}

/// One failed invariant of a [`PolytopicSystem`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

impl PolytopicSystem {
    /// Builds and validates a system.
    pub fn new(vertices: Vec<Matrix>, b: Matrix, c: Matrix, strictly_polytopic: bool) -> Result<Self> {
        Self { name: None, vertices, b, c, strictly_polytopic }.checked()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    /// Number of vertices `N`.
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_x(&self) -> usize {
        self.vertices.first().map_or(0, Matrix::rows)
    }

    pub fn n_u(&self) -> usize {
        self.b.cols()
    }

    pub fn n_y(&self) -> usize {
        self.c.rows()
    }

    /// Lists every broken invariant; empty means the system is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: String, reason: String| out.push(Violation { field, reason });
        if self.vertices.is_empty() {
            push("A".into(), "at least one vertex matrix is required".into());
        }
        let n = self.n_x();
        for (i, a) in self.vertices.iter().enumerate() {
            let field = format!("A[{}]", i + 1);
            if !a.is_square() {
                push(field.clone(), format!("must be square, got {}x{}", a.rows(), a.cols()));
            } else if a.rows() != n {
                push(field.clone(), format!("dimension {} differs from n_x = {n}", a.rows()));
            }
            if !a.is_finite() {
                push(field, "non-finite entry".into());
            }
        }
        if !self.vertices.is_empty() {
            if self.b.rows() != n {
                push("B".into(), format!("has {} rows, expected n_x = {n}", self.b.rows()));
            }
            if self.c.cols() != n {
                push("C".into(), format!("has {} columns, expected n_x = {n}", self.c.cols()));
            }
        }
        if !self.b.is_finite() {
            push("B".into(), "non-finite entry".into());
        }
        if !self.c.is_finite() {
            push("C".into(), "non-finite entry".into());
        }
        out
    }

    pub fn checked(self) -> Result<Self> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(self)
        } else {
            let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
            Err(Error::InvalidInput(msg.join("; ")))
        }
    }

    /// `A(ξ) = Σ ξ_i A_i`.
    pub fn evaluate_a(&self, xi: &SimplexPoint) -> Result<Matrix> {
        if xi.len() != self.num_vertices() {
            return Err(Error::invalid(format!(
                "simplex point has {} components, system has {} vertices",
                xi.len(),
                self.num_vertices()
            )));
        }
        Ok(convex_combination(&self.vertices, xi.weights()))
    }

    /// The same system with every `A_i` transposed and `B`, `C` swapped as
    /// `B ← Cᵀ`, `C ← Bᵀ`.
    pub fn dual(&self) -> PolytopicSystem {
        PolytopicSystem {
            name: self.name.as_ref().map(|n| format!("{n} (dual)")),
            vertices: self.vertices.iter().map(Matrix::transpose).collect(),
            b: self.c.transpose(),
            c: self.b.transpose(),
            strictly_polytopic: self.strictly_polytopic,
        }
    }
}

/// `Σ w_i M_i`, skipping zero weights so vertex evaluation is bit-exact.
pub(crate) fn convex_combination(mats: &[Matrix], weights: &[f64]) -> Matrix {
    let (r, c) = mats[0].shape();
    let mut out = Matrix::zeros(r, c);
    for (m, &w) in mats.iter().zip(weights) {
        if w == 1.0 {
            out.add_scaled(1.0, m);
        } else if w != 0.0 {
            out.add_scaled(w, m);
        }
    }
    out
}

/// A point on the unit simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(mut xi: Vec<f64>) -> Result<Self> {
        if xi.is_empty() {
            return Err(Error::invalid("simplex point must have at least one component"));
        }
        for (i, v) in xi.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("simplex component {} is not finite", i + 1)));
            }
            if *v < 0.0 {
                if *v < -SIMPLEX_CLAMP_TOL {
                    return Err(Error::invalid(format!("simplex component {} is negative ({v})", i + 1)));
                }
                *v = 0.0;
            }
        }
        let sum: f64 = xi.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::invalid(format!("simplex components sum to {sum}, not 1")));
        }
        Ok(Self(xi))
    }

    /// Elementary basis vector `e_i` (zero-based `i`).
    pub fn vertex(n: usize, i: usize) -> Self {
        assert!(i < n, "vertex index out of range");
        let mut xi = vec![0.0; n];
        xi[i] = 1.0;
        Self(xi)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    /// Index of the vertex this point coincides with, if any.
    pub fn as_vertex(&self) -> Option<usize> {
        let mut hit = None;
        for (i, &v) in self.0.iter().enumerate() {
            if v == 1.0 {
                hit = Some(i);
            } else if v != 0.0 {
                return None;
            }
        }
        hit
    }
}

/// Time-indexed simplex points `ξ_0, …, ξ_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub points: Vec<SimplexPoint>,
}

impl Schedule {
    pub fn new(points: Vec<SimplexPoint>) -> Result<Self> {
        if let Some(first) = points.first() {
            if points.iter().any(|p| p.len() != first.len()) {
                return Err(Error::invalid("schedule points have differing lengths"));
            }
        }
        Ok(Self { points })
    }

    /// Every step at vertex `i`.
    pub fn constant(n: usize, i: usize, steps: usize) -> Self {
        Self { points: vec![SimplexPoint::vertex(n, i); steps + 1] }
    }

    /// Number of simulated transitions, `T`.
    pub fn steps(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn num_vertices(&self) -> usize {
        self.points.first().map_or(0, SimplexPoint::len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// Each point is a vertex `e_i`: a switched linear system.
    VertexSwitching,
    /// Strictly positive points from normalized exponential draws.
    InteriorDirichlet,
}

/// Random schedule of `steps + 1` points, reproducible from `seed`.
pub fn random_schedule(n: usize, steps: usize, mode: ScheduleMode, seed: u64) -> Result<Schedule> {
    if n == 0 {
        return Err(Error::invalid("random_schedule: N must be at least 1"));
    }
    if steps == 0 {
        return Err(Error::invalid("random_schedule: T must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..=steps)
        .map(|_| match mode {
            _ if n == 1 => SimplexPoint(vec![1.0]),
            ScheduleMode::VertexSwitching => SimplexPoint::vertex(n, rng.random_range(0..n)),
            ScheduleMode::InteriorDirichlet => {
                let draws: Vec<f64> = (0..n)
                    .map(|_| {
                        let d: f64 = rng.sample(Exp1);
                        d.max(f64::MIN_POSITIVE)
                    })
                    .collect();
                let total: f64 = draws.iter().sum();
                SimplexPoint(draws.into_iter().map(|d| d / total).collect())
            }
        })
        .collect();
    Ok(Schedule { points })
}

/// Dimension and stability ranges for [`random_system`]; all ranges inclusive.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomSystemSpec {
    pub states: (usize, usize),
    pub vertices: (usize, usize),
    pub inputs: (usize, usize),
    pub outputs: (usize, usize),
    /// Each vertex is a Gaussian matrix rescaled to a spectral radius drawn from this range.
    pub radius: (f64, f64),
    pub strictly_polytopic: bool,
}

impl Default for RandomSystemSpec {
    fn default() -> Self {
        Self { states: (1, 4), vertices: (1, 4), inputs: (1, 2), outputs: (1, 2), radius: (0.3, 1.3), strictly_polytopic: true }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new_unchecked(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect())
}

/// Seeded random system with Gaussian `B`, `C` and rescaled Gaussian vertices.
/// Input and output counts never exceed the state count.
pub fn random_system(spec: &RandomSystemSpec, seed: u64) -> Result<PolytopicSystem> {
    let ranges = [spec.states, spec.vertices, spec.inputs, spec.outputs];
    if ranges.iter().any(|&(lo, hi)| lo == 0 || lo > hi) || !(spec.radius.0 >= 0.0 && spec.radius.0 <= spec.radius.1) {
        return Err(Error::invalid("random_system: empty or zero range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(spec.states.0..=spec.states.1);
    let n_vertices = rng.random_range(spec.vertices.0..=spec.vertices.1);
    let n_u = rng.random_range(spec.inputs.0..=spec.inputs.1).min(n);
    let n_y = rng.random_range(spec.outputs.0..=spec.outputs.1).min(n);
    let vertices = (0..n_vertices)
        .map(|_| {
            let a = gaussian(&mut rng, n, n);
            let target = rng.random_range(spec.radius.0..=spec.radius.1);
            let rho = spectral_radius(&a)?;
            Ok(if rho > 1e-6 { a.scale(target / rho) } else { a })
        })
        .collect::<Result<_>>()?;
    let b = gaussian(&mut rng, n, n_u);
    let c = gaussian(&mut rng, n_y, n);
    PolytopicSystem::new(vertices, b, c, spec.strictly_polytopic)
}

#[derive(Serialize, Deserialize)]
struct SystemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    strictly_polytopic: bool,
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
}

/// Parses a rectangular 2-D array, keeping non-finite values for validation.
pub(crate) fn matrix_from_json(field: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::Format(format!("{field}: empty matrix")));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Format(format!("{field}: ragged rows")));
    }
    Ok(Matrix::new_unchecked(r, c, rows.concat()))
}

pub fn system_from_json(text: &str) -> Result<PolytopicSystem> {
    let file: SystemFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let vertices = file
        .a
        .iter()
        .enumerate()
        .map(|(i, rows)| matrix_from_json(&format!("A[{}]", i + 1), rows))
        .collect::<Result<Vec<_>>>()?;
    let sys = PolytopicSystem {
        name: file.name,
        vertices,
        b: matrix_from_json("B", &file.b)?,
        c: matrix_from_json("C", &file.c)?,
        strictly_polytopic: file.strictly_polytopic,
    };
    sys.checked()
}

pub fn system_to_json(sys: &PolytopicSystem) -> String {
    let file = SystemFile {
        name: sys.name.clone(),
        strictly_polytopic: sys.strictly_polytopic,
        a: sys.vertices.iter().map(Matrix::to_rows).collect(),
        b: sys.b.to_rows(),
        c: sys.c.to_rows(),
    };
    serde_json::to_string_pretty(&file).expect("system serializes")
}

pub fn load_system(path: impl AsRef<Path>) -> Result<PolytopicSystem> {
    system_from_json(&std::fs::read_to_string(path)?)
}

pub fn save_system(sys: &PolytopicSystem, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, system_to_json(sys))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    xi: Vec<Vec<f64>>,
}

pub fn load_schedule(path: impl AsRef<Path>) -> Result<Schedule> {
    let file: ScheduleFile =
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Format(e.to_string()))?;
    Schedule::new(file.xi.into_iter().map(SimplexPoint::new).collect::<Result<_>>()?)
}

pub fn save_schedule(schedule: &Schedule, path: impl AsRef<Path>) -> Result<()> {
    let file = ScheduleFile { xi: schedule.points.iter().map(|p| p.weights().to_vec()).collect() };
    std::fs::write(path, serde_json::to_string(&file).expect("schedule serializes"))?;
    Ok(())
}
