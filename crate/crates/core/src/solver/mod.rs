//! Convex sparse-recovery solvers.
//!
//! Three entry points share one engine (see [`engine`]): [`bpdn`] for a
//! single measurement vector, [`mmv_bpdn`] for joint row-sparse recovery of
//! several measurement columns, and [`group_bpdn`] for arbitrary coefficient
//! groups such as the paired uplink/downlink blocks. Each solves
//!
//! ```text
//! minimize  sum_g ||beta_g||_2   subject to  ||y - Phi beta|| <= epsilon
//! ```
//!
//! where the groups are single entries, matrix rows, or caller-supplied
//! index sets. Solutions report the residual, iteration count, support, and
//! a duality-gap certificate; infeasible or uncertified exits are flagged
//! through `converged`, never silently.

mod engine;

pub use engine::operator_norm_sq;

use crate::error::{Error, Result};
use crate::numerics::{least_squares, numerical_rank, CMat, CVec};
use engine::{solve_constrained, EngineOptions, EngineResult, Grouping, FEASIBILITY_SLACK};

/// Residual bound and stopping controls for one solve.
#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Residual bound epsilon (>= 0).
    pub epsilon: f64,
    /// Inner iteration cap per penalty stage.
    pub max_iterations: usize,
    /// Penalty-search stage cap.
    pub max_outer_iterations: usize,
    /// Relative objective-change threshold stopping the inner loop.
    pub objective_tolerance: f64,
    /// Relative duality-gap target certifying the constrained optimum.
    pub gap_tolerance: f64,
    /// Relative magnitude below which coefficients are read as zero.
    pub support_threshold: f64,
    /// Optional precomputed power-iteration estimate of `||Phi||^2`; callers
    /// that reuse one matrix across many solves can share it.
    pub operator_norm_sq: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            epsilon: 0.0,
            max_iterations: 5000,
            max_outer_iterations: 40,
            objective_tolerance: 1e-7,
            gap_tolerance: 1e-5,
            support_threshold: 1e-3,
            operator_norm_sq: None,
        }
    }
}

impl SolverOptions {
    pub fn with_epsilon(epsilon: f64) -> Self {
        SolverOptions {
            epsilon,
            ..SolverOptions::default()
        }
    }

    /// Residual bound matched to i.i.d. complex Gaussian noise of the given
    /// per-entry variance over `dim` entries: mean plus two standard
    /// deviations of the residual norm square, square-rooted.
    pub fn epsilon_for_noise(dim: usize, variance: f64) -> f64 {
        let d = dim as f64;
        (variance * (d + 2.0 * d.sqrt())).sqrt()
    }

    fn engine(&self) -> EngineOptions {
        EngineOptions {
            epsilon: self.epsilon,
            max_inner_iterations: self.max_iterations,
            max_outer_iterations: self.max_outer_iterations,
            objective_tolerance: self.objective_tolerance,
            gap_tolerance: self.gap_tolerance,
            operator_norm_sq: self.operator_norm_sq,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(
                "solver epsilon must be finite and >= 0".into(),
            ));
        }
        for (name, v) in [
            ("objective_tolerance", self.objective_tolerance),
            ("gap_tolerance", self.gap_tolerance),
            ("support_threshold", self.support_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Pairing of coefficient indices into groups that activate together.
#[derive(Clone, Debug)]
pub struct GroupStructure {
    groups: Vec<Vec<usize>>,
    dim: usize,
}

impl GroupStructure {
    /// Validates that `groups` partition `0..dim`.
    pub fn new(groups: Vec<Vec<usize>>, dim: usize) -> Result<Self> {
        let mut seen = vec![false; dim];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::InvalidArgument("empty coefficient group".into()));
            }
            for &i in g {
                if i >= dim {
                    return Err(Error::InvalidArgument(format!(
                        "group index {i} out of range for dimension {dim}"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidArgument(format!(
                        "index {i} appears in more than one group"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(
                "groups do not cover every coefficient index".into(),
            ));
        }
        Ok(GroupStructure { groups, dim })
    }

    /// One group per coefficient: the plain l1 objective.
    pub fn singletons(dim: usize) -> Self {
        GroupStructure {
            groups: (0..dim).map(|i| vec![i]).collect(),
            dim,
        }
    }

    /// Groups `{j, m + j}` pairing entry `j` of a first block of length `m`
    /// with entry `j` of a second block; total dimension `2m`.
    pub fn paired_blocks(m: usize) -> Self {
        GroupStructure {
            groups: (0..m).map(|j| vec![j, m + j]).collect(),
            dim: 2 * m,
        }
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

/// Result of one sparse solve. `beta` has one column per measurement column
/// (a single column except for the MMV solver).
#[derive(Clone, Debug)]
pub struct SparseCode {
    pub beta: CMat,
    /// Entry indices (row indices for MMV) above the support threshold.
    pub support: Vec<usize>,
    pub residual_norm: f64,
    /// Sum of group norms at the solution.
    pub objective: f64,
    /// Relative duality gap certifying closeness to the constrained optimum.
    pub duality_gap: f64,
    /// Total inner iterations across all penalty stages.
    pub iterations: usize,
    pub converged: bool,
}

impl SparseCode {
    /// The coefficient vector of a single-column solve.
    pub fn beta_vector(&self) -> CVec {
        assert_eq!(self.beta.ncols(), 1, "beta_vector on a multi-column code");
        CVec::from_column_slice(self.beta.as_slice())
    }

    /// Number of reported support entries (rows for MMV).
    pub fn l0(&self) -> usize {
        self.support.len()
    }

    /// True when the residual satisfies the bound within slack.
    pub fn feasible(&self, epsilon: f64) -> bool {
        self.residual_norm <= epsilon * (1.0 + FEASIBILITY_SLACK) + 1e-14
    }
}

fn finish(result: EngineResult, grouping: &Grouping, opts: &SolverOptions) -> SparseCode {
    let support = grouping.support(&result.beta, opts.support_threshold);
    SparseCode {
        beta: result.beta,
        support,
        residual_norm: result.residual_norm,
        objective: result.objective,
        duality_gap: result.duality_gap,
        iterations: result.iterations,
        converged: result.converged,
    }
}

/// Basis-pursuit denoising: minimum complex l1 norm under a residual bound.
pub fn bpdn(phi: &CMat, y: &CVec, opts: &SolverOptions) -> Result<SparseCode> {
    opts.validate()?;
    if phi.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "bpdn: Phi has {} rows, y has {} entries",
            phi.nrows(),
            y.len()
        )));
    }
    let y_mat = CMat::from_column_slice(y.len(), 1, y.as_slice());
    let grouping = Grouping::Rows;
    let result = solve_constrained(phi, &y_mat, &grouping, &opts.engine());
    Ok(finish(result, &grouping, opts))
}

/// Multiple-measurement-vector recovery: minimizes the sum of row norms of
/// `B` subject to `||Y - Phi B||_F <= epsilon`. Rows switch on together, so
/// the reported support is a row support.
pub fn mmv_bpdn(phi: &CMat, y: &CMat, opts: &SolverOptions) -> Result<SparseCode> {
    opts.validate()?;
    if phi.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "mmv_bpdn: Phi has {} rows, Y has {}",
            phi.nrows(),
            y.nrows()
        )));
    }
    let grouping = Grouping::Rows;
    let result = solve_constrained(phi, y, &grouping, &opts.engine());
    Ok(finish(result, &grouping, opts))
}

/// Group basis pursuit: minimizes the sum of group norms under the residual
/// bound. Used with [`GroupStructure::paired_blocks`] it ties corresponding
/// uplink and downlink coefficients to a shared support.
pub fn group_bpdn(
    g: &CMat,
    y: &CVec,
    groups: &GroupStructure,
    opts: &SolverOptions,
) -> Result<SparseCode> {
    opts.validate()?;
    if g.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "group_bpdn: G has {} rows, y has {} entries",
            g.nrows(),
            y.len()
        )));
    }
    if groups.dim() != g.ncols() {
        return Err(Error::InvalidArgument(format!(
            "group structure covers {} coefficients, G has {} columns",
            groups.dim(),
            g.ncols()
        )));
    }
    let y_mat = CMat::from_column_slice(y.len(), 1, y.as_slice());
    let grouping = Grouping::Indexed(groups.groups().to_vec());
    let result = solve_constrained(g, &y_mat, &grouping, &opts.engine());
    Ok(finish(result, &grouping, opts))
}

/// Indices with `|beta_i|` strictly above `threshold * max_i |beta_i|`.
pub fn support_of(beta: &CVec, threshold: f64) -> Vec<usize> {
    let max = beta.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    let cutoff = threshold * max;
    beta.iter()
        .enumerate()
        .filter(|(_, z)| z.norm() > cutoff)
        .map(|(i, _)| i)
        .collect()
}

/// Least-squares refit restricted to the support columns.
#[derive(Clone, Debug)]
pub struct DebiasResult {
    /// Full-length coefficient vector, zero off the support.
    pub coefficients: CVec,
    /// Set when the restricted system is numerically rank-deficient.
    pub rank_deficient: bool,
}

pub fn debias_on_support(phi: &CMat, y: &CVec, support: &[usize]) -> Result<DebiasResult> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("debias: empty support".into()));
    }
    if support.len() > phi.nrows() {
        return Err(Error::InvalidArgument(format!(
            "debias: support size {} exceeds {} measurements",
            support.len(),
            phi.nrows()
        )));
    }
    let mut restricted = CMat::zeros(phi.nrows(), support.len());
    for (j, &col) in support.iter().enumerate() {
        if col >= phi.ncols() {
            return Err(Error::InvalidArgument(format!(
                "debias: support index {col} out of range"
            )));
        }
        restricted.set_column(j, &phi.column(col));
    }
    let rank_deficient = numerical_rank(&restricted)? < support.len();
    let y_mat = CMat::from_column_slice(y.len(), 1, y.as_slice());
    let solution = least_squares(&restricted, &y_mat)?;
    let mut coefficients = CVec::zeros(phi.ncols());
    for (j, &col) in support.iter().enumerate() {
        coefficients[col] = solution[(j, 0)];
    }
    Ok(DebiasResult {
        coefficients,
        rank_deficient,
    })
}
