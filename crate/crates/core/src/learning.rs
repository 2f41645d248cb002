//! Dictionary learning from channel measurements.
//!
//! Alternates sparse coding of the training set against the current
//! dictionary (each sample an independent solve, parallel across the set)
//! with K-SVD atom updates (sequential by definition: every atom update
//! sees the residuals left by the previous ones). The joint variant codes
//! uplink/downlink pairs through the stacked block-diagonal system, so both
//! bands share one support by construction, then updates the two
//! dictionaries independently on their own halves.

use num_complex::Complex64;

use crate::dictionary::{dft_overcomplete, Dictionary, DictionaryOrigin};
use crate::error::{Error, Result};
use crate::numerics::{CMat, CVec};
use crate::parallel::{map_slice, Execution};
use crate::rng::{complex_gaussian_vector, substream, SimRng};
use crate::solver::{bpdn, group_bpdn, operator_norm_sq, GroupStructure, SolverOptions, SparseCode};

/// Unit-normalized training samples.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    samples: Vec<CVec>,
    /// Learning-measurement SNR applied before normalization, if any.
    learning_snr_db: Option<f64>,
}

impl TrainingSet {
    /// Normalizes every sample to unit norm.
    pub fn from_vectors(raw: Vec<CVec>) -> Result<Self> {
        Self::build(raw, None)
    }

    fn build(raw: Vec<CVec>, learning_snr_db: Option<f64>) -> Result<Self> {
        let dim = raw
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty training set".into()))?
            .len();
        let mut samples = Vec::with_capacity(raw.len());
        for (i, mut v) in raw.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "training sample {i} has length {}, expected {dim}",
                    v.len()
                )));
            }
            let norm = v.norm();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "training sample {i} has invalid norm {norm}"
                )));
            }
            v.unscale_mut(norm);
            samples.push(v);
        }
        Ok(TrainingSet {
            samples,
            learning_snr_db,
        })
    }

    pub fn samples(&self) -> &[CVec] {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn learning_snr_db(&self) -> Option<f64> {
        self.learning_snr_db
    }
}

/// Unit-normalized uplink/downlink sample pairs (downlink stored first to
/// match the stacked system layout).
#[derive(Clone, Debug)]
pub struct PairedTrainingSet {
    /// (downlink, uplink) members, each unit norm.
    pairs: Vec<(CVec, CVec)>,
}

impl PairedTrainingSet {
    pub fn from_vectors(raw: Vec<(CVec, CVec)>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidArgument("empty paired training set".into()));
        }
        let dim = raw[0].0.len();
        let mut pairs = Vec::with_capacity(raw.len());
        for (i, (mut down, mut up)) in raw.into_iter().enumerate() {
            if down.len() != dim || up.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "pair {i} members must both have length {dim}"
                )));
            }
            for v in [&mut down, &mut up] {
                let norm = v.norm();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "pair {i} has a member with invalid norm {norm}"
                    )));
                }
                v.unscale_mut(norm);
            }
            pairs.push((down, up));
        }
        Ok(PairedTrainingSet { pairs })
    }

    pub fn pairs(&self) -> &[(CVec, CVec)] {
        &self.pairs
    }

    pub fn dim(&self) -> usize {
        self.pairs[0].0.len()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Adds circular Gaussian noise at the given learning-measurement SNR
/// (`||h||^2 / (N sigma^2)`) to raw channel vectors. `f64::INFINITY` leaves
/// them untouched.
pub fn corrupt_training_set(
    raw: &[CVec],
    learning_snr_db: f64,
    rng: &mut SimRng,
) -> Result<TrainingSet> {
    if learning_snr_db.is_infinite() && learning_snr_db > 0.0 {
        return TrainingSet::build(raw.to_vec(), Some(f64::INFINITY));
    }
    if !learning_snr_db.is_finite() {
        return Err(Error::InvalidArgument(
            "learning SNR must be finite or +inf".into(),
        ));
    }
    let snr = 10f64.powf(learning_snr_db / 10.0);
    let corrupted = raw
        .iter()
        .map(|h| {
            let n = h.len();
            let sigma_sq = h.norm_squared() / (n as f64 * snr);
            h + complex_gaussian_vector(n, sigma_sq, rng)
        })
        .collect();
    TrainingSet::build(corrupted, Some(learning_snr_db))
}

/// Dictionary initialization.
#[derive(Clone, Debug)]
pub enum DictInit {
    /// Overcomplete DFT (the default: a reasonably good starting point).
    Odft,
    /// Unit-norm random columns.
    Random,
    Provided(Dictionary),
}

#[derive(Clone, Debug)]
pub struct LearnConfig {
    /// Atom count M (>= signal dimension).
    pub atom_count: usize,
    /// Per-sample residual bound eta.
    pub mismatch_tolerance: f64,
    pub outer_iterations: usize,
    pub init: DictInit,
    pub seed: u64,
    pub execution: Execution,
    /// Template for the per-sample solves; `epsilon` is overwritten by
    /// `mismatch_tolerance`.
    pub solver: SolverOptions,
}

impl LearnConfig {
    pub fn new(atom_count: usize, mismatch_tolerance: f64) -> Self {
        LearnConfig {
            atom_count,
            mismatch_tolerance,
            outer_iterations: 30,
            init: DictInit::Odft,
            seed: 0,
            execution: Execution::default(),
            solver: SolverOptions::default(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.atom_count < dim {
            return Err(Error::InvalidArgument(format!(
                "atom count {} below signal dimension {dim}",
                self.atom_count
            )));
        }
        if !(self.mismatch_tolerance > 0.0) {
            return Err(Error::InvalidArgument("mismatch tolerance must be > 0".into()));
        }
        Ok(())
    }

    fn initial(&self, dim: usize, label: &str) -> Result<CMat> {
        match &self.init {
            DictInit::Odft => Ok(dft_overcomplete(dim, self.atom_count)?.matrix().clone()),
            DictInit::Random => {
                let mut rng = substream(self.seed, 0xD1C7);
                let mut d = CMat::zeros(dim, self.atom_count);
                for j in 0..self.atom_count {
                    let col = complex_gaussian_vector(dim, 1.0, &mut rng);
                    let norm = col.norm();
                    d.set_column(j, &col.unscale(norm));
                }
                Ok(d)
            }
            DictInit::Provided(d) => {
                if d.dim() != dim || d.atoms() != self.atom_count {
                    return Err(Error::DimensionMismatch(format!(
                        "provided init is {}x{}, expected {dim}x{} for {label}",
                        d.dim(),
                        d.atoms(),
                        self.atom_count
                    )));
                }
                Ok(d.matrix().clone())
            }
        }
    }
}

/// Per-iteration learning diagnostics (one row per coding evaluation).
#[derive(Clone, Debug)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// Mean support size over converged codes.
    pub mean_l0: f64,
    pub mean_residual: f64,
    /// Fraction of samples coded within the mismatch tolerance.
    pub feasible_fraction: f64,
    /// Samples skipped this iteration (solver did not converge).
    pub skipped: usize,
    /// Atoms replaced by the update that followed this evaluation.
    pub atoms_replaced: usize,
}

#[derive(Clone, Debug)]
pub struct LearnedModel {
    pub dictionary: Dictionary,
    pub diagnostics: Vec<IterationDiagnostics>,
}

#[derive(Clone, Debug)]
pub struct JointLearnedModel {
    pub uplink: Dictionary,
    pub downlink: Dictionary,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// Codes every sample against `d` with residual bound `eta`.
pub fn sparse_code_dataset(
    d: &Dictionary,
    samples: &[CVec],
    eta: f64,
    execution: Execution,
) -> Vec<SparseCode> {
    let mut opts = SolverOptions::with_epsilon(eta);
    opts.operator_norm_sq = Some(operator_norm_sq(d.matrix()));
    map_slice(samples, execution, |h| {
        bpdn(d.matrix(), h, &opts).expect("dimensions checked by caller")
    })
}

fn sparse_code_dataset_with(
    d: &CMat,
    samples: &[CVec],
    opts_template: &SolverOptions,
    eta: f64,
    execution: Execution,
) -> Vec<SparseCode> {
    let mut opts = opts_template.clone();
    opts.epsilon = eta;
    opts.operator_norm_sq = Some(operator_norm_sq(d));
    map_slice(samples, execution, |h| {
        bpdn(d, h, &opts).expect("dimensions checked by caller")
    })
}

/// Codes every (downlink, uplink) pair through the stacked block-diagonal
/// system with paired groups, enforcing a shared support. The stacked bound
/// folds the per-link tolerances: `sqrt(eta_d^2 + eta_u^2)`.
pub fn sparse_code_pairs(
    d_down: &Dictionary,
    d_up: &Dictionary,
    pairs: &[(CVec, CVec)],
    eta_down: f64,
    eta_up: f64,
    execution: Execution,
) -> Result<Vec<SparseCode>> {
    if d_down.atoms() != d_up.atoms() || d_down.dim() != d_up.dim() {
        return Err(Error::DimensionMismatch(
            "joint coding needs same-shaped dictionaries".into(),
        ));
    }
    let stacked = stack_block_diag(d_down.matrix(), d_up.matrix());
    Ok(code_pairs_against(
        &stacked,
        d_down.atoms(),
        pairs,
        &SolverOptions::default(),
        (eta_down * eta_down + eta_up * eta_up).sqrt(),
        execution,
    ))
}

fn stack_block_diag(d_down: &CMat, d_up: &CMat) -> CMat {
    let (n_d, m) = d_down.shape();
    let n_u = d_up.nrows();
    let mut g = CMat::zeros(n_d + n_u, 2 * m);
    g.view_mut((0, 0), (n_d, m)).copy_from(d_down);
    g.view_mut((n_d, m), (n_u, m)).copy_from(d_up);
    g
}

fn code_pairs_against(
    stacked: &CMat,
    m: usize,
    pairs: &[(CVec, CVec)],
    opts_template: &SolverOptions,
    stacked_eta: f64,
    execution: Execution,
) -> Vec<SparseCode> {
    let mut opts = opts_template.clone();
    opts.epsilon = stacked_eta;
    opts.operator_norm_sq = Some(operator_norm_sq(stacked));
    let groups = GroupStructure::paired_blocks(m);
    let n_d = pairs[0].0.len();
    let n_u = pairs[0].1.len();
    map_slice(pairs, execution, |(down, up)| {
        let mut y = CVec::zeros(n_d + n_u);
        y.rows_mut(0, n_d).copy_from(down);
        y.rows_mut(n_d, n_u).copy_from(up);
        group_bpdn(stacked, &y, &groups, &opts).expect("dimensions checked by caller")
    })
}

/// One K-SVD sweep over all atoms.
///
/// Every atom used by at least one sample is replaced by the dominant
/// rank-one factor of its restricted residual (alternating updates warm
/// started at the current atom, so the fit error never increases), with the
/// matching coefficients updated simultaneously. Unused atoms and near
/// duplicates are then replaced by the worst-represented samples. Returns
/// the updated dictionary and the number of replaced atoms.
pub fn ksvd_update(
    d: &Dictionary,
    samples: &[CVec],
    codes: &[SparseCode],
) -> Result<(Dictionary, usize)> {
    if samples.len() != codes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} codes for {} samples",
            codes.len(),
            samples.len()
        )));
    }
    let mut matrix = d.matrix().clone();
    let mut coefs = CMat::zeros(d.atoms(), samples.len());
    let mut active = vec![false; samples.len()];
    for (i, code) in codes.iter().enumerate() {
        active[i] = code.converged;
        if code.converged {
            coefs.set_column(i, &code.beta.column(0));
        }
    }
    let mut h = CMat::zeros(d.dim(), samples.len());
    for (i, s) in samples.iter().enumerate() {
        h.set_column(i, s);
    }
    let mut residual = &h - &matrix * &coefs;
    let errors = ksvd_sweep(&mut matrix, &mut coefs, &mut residual, &active);
    debug_assert!(errors.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].max(1.0)));
    let replaced = replace_degenerate_atoms(&mut matrix, &coefs, &residual, &active);
    let dict = Dictionary::new(matrix, d.label(), d.origin())?;
    Ok((
        match d.link() {
            Some(l) => dict.with_link(l.to_string()),
            None => dict,
        },
        replaced,
    ))
}

/// Sequential atom sweep; returns the total squared representation error
/// after each atom update (non-increasing).
fn ksvd_sweep(
    matrix: &mut CMat,
    coefs: &mut CMat,
    residual: &mut CMat,
    active: &[bool],
) -> Vec<f64> {
    let (n, m) = matrix.shape();
    let mut errors = Vec::with_capacity(m);
    for j in 0..m {
        let users: Vec<usize> = (0..coefs.ncols())
            .filter(|&i| active[i] && coefs[(j, i)] != Complex64::ZERO)
            .collect();
        if users.is_empty() {
            errors.push(last_or_current_error(&errors, residual, active));
            continue;
        }
        // Restricted residual with this atom's contribution restored.
        let mut e = CMat::zeros(n, users.len());
        for (slot, &i) in users.iter().enumerate() {
            let c = coefs[(j, i)];
            for row in 0..n {
                e[(row, slot)] = residual[(row, i)] + matrix[(row, j)] * c;
            }
        }
        // Rank-one fit by alternating updates, warm started at the atom.
        let mut atom = CVec::from_column_slice(matrix.column(j).as_slice());
        let mut row = CVec::zeros(users.len());
        let mut sigma_prev = 0.0;
        for _ in 0..30 {
            // row = E^H atom (optimal coefficients for a unit atom)
            row.gemv_ad(Complex64::ONE, &e, &atom, Complex64::ZERO);
            // atom = E row / ||.||
            atom.gemv(Complex64::ONE, &e, &row, Complex64::ZERO);
            let sigma = atom.norm();
            if sigma <= 0.0 {
                break;
            }
            atom.unscale_mut(sigma);
            if (sigma - sigma_prev).abs() <= 1e-12 * sigma {
                break;
            }
            sigma_prev = sigma;
        }
        row.gemv_ad(Complex64::ONE, &e, &atom, Complex64::ZERO);
        matrix.set_column(j, &atom);
        for (slot, &i) in users.iter().enumerate() {
            // row holds g = E^H d; the rank-one model is d g^H, so the
            // coefficient of sample i is conj(g_i).
            let c = row[slot].conj();
            coefs[(j, i)] = c;
            for r in 0..n {
                residual[(r, i)] = e[(r, slot)] - atom[r] * c;
            }
        }
        errors.push(total_error(residual, active));
    }
    errors
}

fn total_error(residual: &CMat, active: &[bool]) -> f64 {
    let mut total = 0.0;
    for (i, &on) in active.iter().enumerate() {
        if on {
            total += residual.column(i).norm_squared();
        }
    }
    total
}

fn last_or_current_error(errors: &[f64], residual: &CMat, active: &[bool]) -> f64 {
    errors
        .last()
        .copied()
        .unwrap_or_else(|| total_error(residual, active))
}

/// Replaces unused atoms and near duplicates (|<d_i, d_j>| > 0.99) with the
/// worst-represented samples, unit-normalized.
fn replace_degenerate_atoms(
    matrix: &mut CMat,
    coefs: &CMat,
    residual: &CMat,
    active: &[bool],
) -> usize {
    let m = matrix.ncols();
    let mut degenerate: Vec<usize> = Vec::new();
    for j in 0..m {
        let used = (0..coefs.ncols()).any(|i| active[i] && coefs[(j, i)] != Complex64::ZERO);
        if !used {
            degenerate.push(j);
        }
    }
    for j in 0..m {
        if degenerate.contains(&j) {
            continue;
        }
        for i in 0..j {
            if degenerate.contains(&i) {
                continue;
            }
            let ip: Complex64 = matrix.column(i).dotc(&matrix.column(j));
            if ip.norm() > 0.99 {
                degenerate.push(j);
                break;
            }
        }
    }
    if degenerate.is_empty() {
        return 0;
    }
    // Worst-represented samples, largest residual first, one per atom.
    let mut order: Vec<(f64, usize)> = (0..residual.ncols())
        .filter(|&i| active[i])
        .map(|i| (residual.column(i).norm_squared(), i))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut replaced = 0;
    for (slot, &j) in degenerate.iter().enumerate() {
        let Some(&(_, sample)) = order.get(slot) else {
            break;
        };
        // h = residual + reconstruction; use the raw sample direction.
        let mut col = CVec::zeros(matrix.nrows());
        for r in 0..matrix.nrows() {
            col[r] = residual[(r, sample)];
        }
        // residual alone can vanish; fall back to a deterministic ramp.
        let norm = col.norm();
        if norm > 1e-12 {
            col.unscale_mut(norm);
        } else {
            let n = matrix.nrows();
            col = CVec::from_fn(n, |r, _| {
                Complex64::from_polar(1.0 / (n as f64).sqrt(), r as f64 + j as f64)
            });
        }
        matrix.set_column(j, &col);
        replaced += 1;
    }
    replaced
}

struct EvalStats {
    mean_l0: f64,
    mean_residual: f64,
    feasible_fraction: f64,
    skipped: usize,
}

fn evaluate_codes(codes: &[SparseCode], eta: f64, support_groups: bool) -> EvalStats {
    let mut l0_total = 0usize;
    let mut resid_total = 0.0;
    let mut feasible = 0usize;
    let mut skipped = 0usize;
    let mut counted = 0usize;
    for code in codes {
        if !code.converged {
            skipped += 1;
        }
        counted += 1;
        // Group support lists both members; count groups once for pairs.
        l0_total += if support_groups {
            code.support.len() / 2
        } else {
            code.support.len()
        };
        resid_total += code.residual_norm;
        if code.residual_norm <= eta * (1.0 + 1e-6) {
            feasible += 1;
        }
    }
    let denom = counted.max(1) as f64;
    EvalStats {
        mean_l0: l0_total as f64 / denom,
        mean_residual: resid_total / denom,
        feasible_fraction: feasible as f64 / denom,
        skipped,
    }
}

/// Stops when the mean support size improved by less than 1% over the last
/// three iterations.
fn early_stop(history: &[f64]) -> bool {
    if history.len() < 4 {
        return false;
    }
    let old = history[history.len() - 4];
    let new = history[history.len() - 1];
    old > 0.0 && (old - new) / old < 0.01
}

/// Learns a sparsifying dictionary by alternating sparse coding and K-SVD
/// updates; returns the iterate with the smallest mean support size among
/// those coding at least 99% of samples within tolerance.
pub fn learn_dictionary(training: &TrainingSet, config: &LearnConfig) -> Result<LearnedModel> {
    let dim = training.dim();
    config.validate(dim)?;
    let eta = config.mismatch_tolerance;
    let mut current = config.initial(dim, "dictionary")?;
    let mut diagnostics = Vec::new();
    let mut best: Option<(CMat, f64)> = None;
    let mut l0_history = Vec::new();

    for iteration in 0..=config.outer_iterations {
        let codes = sparse_code_dataset_with(
            &current,
            training.samples(),
            &config.solver,
            eta,
            config.execution,
        );
        let stats = evaluate_codes(&codes, eta, false);
        l0_history.push(stats.mean_l0);
        let qualifies = stats.feasible_fraction >= 0.99;
        let improves = match &best {
            Some((_, best_l0)) => stats.mean_l0 < *best_l0,
            None => true,
        };
        if qualifies && improves {
            best = Some((current.clone(), stats.mean_l0));
        }
        let mut row = IterationDiagnostics {
            iteration,
            mean_l0: stats.mean_l0,
            mean_residual: stats.mean_residual,
            feasible_fraction: stats.feasible_fraction,
            skipped: stats.skipped,
            atoms_replaced: 0,
        };
        if iteration == config.outer_iterations || early_stop(&l0_history) {
            diagnostics.push(row);
            break;
        }
        let dict = Dictionary::new(current, "learning", DictionaryOrigin::Learned)?;
        let (updated, replaced) = ksvd_update(&dict, training.samples(), &codes)?;
        row.atoms_replaced = replaced;
        diagnostics.push(row);
        current = updated.matrix().clone();
    }

    let matrix = match best {
        Some((m, _)) => m,
        None => current,
    };
    Ok(LearnedModel {
        dictionary: Dictionary::new(matrix, "learned", DictionaryOrigin::Learned)?,
        diagnostics,
    })
}

/// Joint uplink/downlink learning: group coding through the stacked system
/// (shared supports by construction), then decoupled K-SVD updates per band.
pub fn learn_joint(
    pairs: &PairedTrainingSet,
    config_up: &LearnConfig,
    config_down: &LearnConfig,
) -> Result<JointLearnedModel> {
    let dim = pairs.dim();
    config_up.validate(dim)?;
    config_down.validate(dim)?;
    if config_up.atom_count != config_down.atom_count {
        return Err(Error::InvalidArgument(
            "joint learning needs equal atom counts".into(),
        ));
    }
    let m = config_up.atom_count;
    let eta_u = config_up.mismatch_tolerance;
    let eta_d = config_down.mismatch_tolerance;
    let stacked_eta = (eta_d * eta_d + eta_u * eta_u).sqrt();
    let link = format!("jdlcm-{}", config_up.seed);

    let mut d_up = config_up.initial(dim, "uplink")?;
    let mut d_down = config_down.initial(dim, "downlink")?;
    let mut diagnostics = Vec::new();
    let mut best: Option<(CMat, CMat, f64)> = None;
    let mut l0_history = Vec::new();

    for iteration in 0..=config_up.outer_iterations {
        let stacked = stack_block_diag(&d_down, &d_up);
        let codes = code_pairs_against(
            &stacked,
            m,
            pairs.pairs(),
            &config_up.solver,
            stacked_eta,
            config_up.execution,
        );
        let stats = evaluate_codes(&codes, stacked_eta, true);
        l0_history.push(stats.mean_l0);
        let qualifies = stats.feasible_fraction >= 0.99;
        let improves = match &best {
            Some((_, _, best_l0)) => stats.mean_l0 < *best_l0,
            None => true,
        };
        if qualifies && improves {
            best = Some((d_up.clone(), d_down.clone(), stats.mean_l0));
        }
        let mut row = IterationDiagnostics {
            iteration,
            mean_l0: stats.mean_l0,
            mean_residual: stats.mean_residual,
            feasible_fraction: stats.feasible_fraction,
            skipped: stats.skipped,
            atoms_replaced: 0,
        };
        if iteration == config_up.outer_iterations || early_stop(&l0_history) {
            diagnostics.push(row);
            break;
        }

        // Decoupled updates: split each stacked code into its halves.
        let (down_samples, down_codes, up_samples, up_codes) = split_pair_codes(pairs, &codes, m);
        let dict_down = Dictionary::new(d_down, "learning-dl", DictionaryOrigin::JointLearned)?;
        let (dict_down, replaced_d) = ksvd_update(&dict_down, &down_samples, &down_codes)?;
        let dict_up = Dictionary::new(d_up, "learning-ul", DictionaryOrigin::JointLearned)?;
        let (dict_up, replaced_u) = ksvd_update(&dict_up, &up_samples, &up_codes)?;
        row.atoms_replaced = replaced_d + replaced_u;
        diagnostics.push(row);
        d_down = dict_down.matrix().clone();
        d_up = dict_up.matrix().clone();
    }

    let (up, down) = match best {
        Some((u, d, _)) => (u, d),
        None => (d_up, d_down),
    };
    Ok(JointLearnedModel {
        uplink: Dictionary::new(up, "learned-ul", DictionaryOrigin::JointLearned)?
            .with_link(link.clone()),
        downlink: Dictionary::new(down, "learned-dl", DictionaryOrigin::JointLearned)?
            .with_link(link),
        diagnostics,
    })
}

fn split_pair_codes(
    pairs: &PairedTrainingSet,
    codes: &[SparseCode],
    m: usize,
) -> (Vec<CVec>, Vec<SparseCode>, Vec<CVec>, Vec<SparseCode>) {
    let mut down_samples = Vec::with_capacity(pairs.len());
    let mut up_samples = Vec::with_capacity(pairs.len());
    let mut down_codes = Vec::with_capacity(pairs.len());
    let mut up_codes = Vec::with_capacity(pairs.len());
    for ((down, up), code) in pairs.pairs().iter().zip(codes) {
        down_samples.push(down.clone());
        up_samples.push(up.clone());
        let beta = code.beta_vector();
        let mut half = |offset: usize| {
            let b = CMat::from_fn(m, 1, |i, _| beta[offset + i]);
            let support: Vec<usize> = code
                .support
                .iter()
                .filter(|&&i| i >= offset && i < offset + m)
                .map(|&i| i - offset)
                .collect();
            SparseCode {
                beta: b,
                support,
                residual_norm: code.residual_norm,
                objective: code.objective,
                duality_gap: code.duality_gap,
                iterations: code.iterations,
                converged: code.converged,
            }
        };
        down_codes.push(half(0));
        up_codes.push(half(m));
    }
    (down_samples, down_codes, up_samples, up_codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::master_rng;
    use crate::solver::support_of;

    fn random_unit_dictionary(n: usize, m: usize, seed: u64) -> Dictionary {
        let mut rng = master_rng(seed);
        let mut d = CMat::zeros(n, m);
        for j in 0..m {
            let col = complex_gaussian_vector(n, 1.0, &mut rng);
            let norm = col.norm();
            d.set_column(j, &col.unscale(norm));
        }
        Dictionary::new(d, format!("rand{seed}"), DictionaryOrigin::Learned).unwrap()
    }

    #[test]
    fn coding_an_atom_returns_its_index() {
        let d = dft_overcomplete(8, 12).unwrap();
        let sample = CVec::from_column_slice(d.matrix().column(3).as_slice());
        let codes = sparse_code_dataset(&d, &[sample], 0.1, Execution::Sequential);
        assert_eq!(codes[0].support, vec![3]);
        assert!(codes[0].feasible(0.1));
    }

    #[test]
    fn coding_inside_tolerance_returns_zero() {
        let d = dft_overcomplete(8, 12).unwrap();
        let sample = CVec::from_column_slice(d.matrix().column(3).as_slice());
        let codes = sparse_code_dataset(&d, &[sample], 1.5, Execution::Sequential);
        assert_eq!(codes[0].beta.norm(), 0.0);
        assert!(codes[0].converged);
    }

    #[test]
    fn pair_coding_shares_support() {
        let d_down = random_unit_dictionary(10, 15, 1);
        let d_up = random_unit_dictionary(10, 15, 2);
        let mut rng = master_rng(3);
        let mut pairs = Vec::new();
        for _ in 0..5 {
            use rand::Rng;
            let atom = rng.gen_range(0..15usize);
            let cd = crate::rng::complex_gaussian(&mut rng);
            let cu = crate::rng::complex_gaussian(&mut rng);
            pairs.push((
                CVec::from_column_slice((d_down.matrix().column(atom) * cd).as_slice()),
                CVec::from_column_slice((d_up.matrix().column(atom) * cu).as_slice()),
            ));
        }
        let set = PairedTrainingSet::from_vectors(pairs).unwrap();
        let codes =
            sparse_code_pairs(&d_down, &d_up, set.pairs(), 0.05, 0.05, Execution::Sequential)
                .unwrap();
        for code in &codes {
            let beta = code.beta_vector();
            let down = CVec::from_fn(15, |i, _| beta[i]);
            let up = CVec::from_fn(15, |i, _| beta[15 + i]);
            assert_eq!(
                support_of(&down, 1e-3),
                support_of(&up, 1e-3),
                "supports must match across bands"
            );
        }
    }

    #[test]
    fn ksvd_single_sample_single_atom() {
        let mut rng = master_rng(4);
        let sample = complex_gaussian_vector(6, 1.0, &mut rng);
        let normalized = sample.clone().unscale(sample.norm());
        let d = Dictionary::new(
            CMat::from_fn(6, 6, |i, j| if i == j { Complex64::ONE } else { Complex64::ZERO }),
            "eye",
            DictionaryOrigin::Learned,
        )
        .unwrap();
        // One sample, coded entirely on atom 0 with coefficient 1.
        let mut beta = CMat::zeros(6, 1);
        beta[(0, 0)] = Complex64::ONE;
        let code = SparseCode {
            beta,
            support: vec![0],
            residual_norm: 0.0,
            objective: 1.0,
            duality_gap: 0.0,
            iterations: 1,
            converged: true,
        };
        let (updated, _) = ksvd_update(&d, &[sample.clone()], &[code]).unwrap();
        let atom = updated.matrix().column(0);
        let alignment = atom.dotc(&normalized).norm();
        assert!((alignment - 1.0).abs() < 1e-10, "atom should align with the sample");
    }

    #[test]
    fn ksvd_replaces_unused_atoms_with_worst_sample() {
        let d = random_unit_dictionary(6, 3, 5);
        let mut rng = master_rng(6);
        // Both samples coded on atom 0 only; atoms 1, 2 unused.
        let s0 = CVec::from_column_slice(d.matrix().column(0).as_slice());
        let stray = complex_gaussian_vector(6, 1.0, &mut rng);
        let samples = vec![s0.clone(), stray.clone()];
        let mut codes = Vec::new();
        for (i, _) in samples.iter().enumerate() {
            let mut beta = CMat::zeros(3, 1);
            beta[(0, 0)] = if i == 0 { Complex64::ONE } else { Complex64::ZERO };
            codes.push(SparseCode {
                beta,
                support: if i == 0 { vec![0] } else { vec![] },
                residual_norm: 0.0,
                objective: 0.0,
                duality_gap: 0.0,
                iterations: 1,
                converged: true,
            });
        }
        let (updated, replaced) = ksvd_update(&d, &samples, &codes).unwrap();
        assert_eq!(replaced, 2);
        // The stray sample (whole norm unexplained) is the worst-represented;
        // one replacement atom must align with it.
        let stray_unit = stray.clone().unscale(stray.norm());
        let best_alignment = (0..3)
            .map(|j| updated.matrix().column(j).dotc(&stray_unit).norm())
            .fold(0.0f64, f64::max);
        assert!(best_alignment > 0.999, "alignment {best_alignment}");
    }

    #[test]
    fn ksvd_sweep_error_is_monotone() {
        let d = random_unit_dictionary(8, 12, 7);
        let mut rng = master_rng(8);
        let samples: Vec<CVec> = (0..30)
            .map(|_| {
                let v = complex_gaussian_vector(8, 1.0, &mut rng);
                v.clone().unscale(v.norm())
            })
            .collect();
        let codes = sparse_code_dataset(&d, &samples, 0.3, Execution::Sequential);
        let mut matrix = d.matrix().clone();
        let mut coefs = CMat::zeros(12, 30);
        let active = vec![true; 30];
        for (i, code) in codes.iter().enumerate() {
            coefs.set_column(i, &code.beta.column(0));
        }
        let mut h = CMat::zeros(8, 30);
        for (i, s) in samples.iter().enumerate() {
            h.set_column(i, s);
        }
        let mut residual = &h - &matrix * &coefs;
        let errors = ksvd_sweep(&mut matrix, &mut coefs, &mut residual, &active);
        for w in errors.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0), "error rose: {w:?}");
        }
    }

    #[test]
    fn ksvd_recovers_atoms_from_one_sparse_data() {
        let truth = random_unit_dictionary(10, 14, 9);
        let mut rng = master_rng(10);
        let per_atom = 8;
        let mut samples = Vec::new();
        let mut codes = Vec::new();
        for atom in 0..14 {
            for _ in 0..per_atom {
                let c = crate::rng::complex_gaussian(&mut rng) * 2.0;
                samples.push(CVec::from_column_slice(
                    (truth.matrix().column(atom) * c).as_slice(),
                ));
                let mut beta = CMat::zeros(14, 1);
                beta[(atom, 0)] = c;
                codes.push(SparseCode {
                    beta,
                    support: vec![atom],
                    residual_norm: 0.0,
                    objective: c.norm(),
                    duality_gap: 0.0,
                    iterations: 1,
                    converged: true,
                });
            }
        }
        // Start from a perturbed dictionary; one sweep with the true codes
        // must snap each atom back (up to phase).
        let mut perturbed = truth.matrix().clone();
        for j in 0..14 {
            let noise = complex_gaussian_vector(10, 0.02, &mut rng);
            let col = perturbed.column(j) + noise;
            let norm = col.norm();
            perturbed.set_column(j, &col.unscale(norm));
        }
        let d0 = Dictionary::new(perturbed, "perturbed", DictionaryOrigin::Learned).unwrap();
        let (updated, _) = ksvd_update(&d0, &samples, &codes).unwrap();
        for atom in 0..14 {
            let alignment = updated
                .matrix()
                .column(atom)
                .dotc(&truth.matrix().column(atom))
                .norm();
            assert!(alignment > 0.999, "atom {atom}: alignment {alignment}");
        }
    }

    #[test]
    fn learn_dictionary_odft_fixed_point() {
        let d = dft_overcomplete(8, 16).unwrap();
        let mut rng = master_rng(11);
        let samples: Vec<CVec> = (0..40)
            .map(|_| {
                use rand::Rng;
                let atom = rng.gen_range(0..16usize);
                let c = crate::rng::complex_gaussian(&mut rng);
                CVec::from_column_slice((d.matrix().column(atom) * c).as_slice())
            })
            .collect();
        let training = TrainingSet::from_vectors(samples).unwrap();
        let mut config = LearnConfig::new(16, 0.1);
        config.outer_iterations = 3;
        let model = learn_dictionary(&training, &config).unwrap();
        assert!((model.diagnostics[0].mean_l0 - 1.0).abs() < 1e-9);
        // The init is already optimal for this data, so it is the best iterate.
        assert!((model.dictionary.matrix() - d.matrix()).norm() < 1e-12);
    }

    #[test]
    fn learning_is_deterministic() {
        let mut rng = master_rng(12);
        let samples: Vec<CVec> = (0..30)
            .map(|_| complex_gaussian_vector(6, 1.0, &mut rng))
            .collect();
        let training = TrainingSet::from_vectors(samples).unwrap();
        let mut config = LearnConfig::new(9, 0.2);
        config.outer_iterations = 4;
        config.execution = Execution::default();
        let a = learn_dictionary(&training, &config).unwrap();
        let b = learn_dictionary(&training, &config).unwrap();
        assert_eq!(a.dictionary.matrix(), b.dictionary.matrix());
    }

    #[test]
    fn learned_columns_stay_in_unit_ball() {
        let mut rng = master_rng(13);
        let samples: Vec<CVec> = (0..40)
            .map(|_| complex_gaussian_vector(6, 1.0, &mut rng))
            .collect();
        let training = TrainingSet::from_vectors(samples).unwrap();
        let mut config = LearnConfig::new(10, 0.25);
        config.outer_iterations = 5;
        let model = learn_dictionary(&training, &config).unwrap();
        for col in model.dictionary.matrix().column_iter() {
            assert!(col.norm() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn corrupt_training_set_snr_definition() {
        let mut rng = master_rng(14);
        let raw: Vec<CVec> = (0..1000)
            .map(|_| complex_gaussian_vector(16, 1.0, &mut rng))
            .collect();

        let clean = corrupt_training_set(&raw, f64::INFINITY, &mut master_rng(15)).unwrap();
        let expected = raw[0].clone().unscale(raw[0].norm());
        assert!((&clean.samples()[0] - expected).norm() < 1e-15);

        // 0 dB: E||noise||^2 matches ||h||^2 within 5% over the set.
        let mut ratio_acc = 0.0;
        let mut noise_rng = master_rng(16);
        for h in &raw {
            let sigma_sq = h.norm_squared() / 16.0; // snr = 1
            let noise = complex_gaussian_vector(16, sigma_sq, &mut noise_rng);
            ratio_acc += noise.norm_squared() / h.norm_squared();
        }
        let ratio = ratio_acc / raw.len() as f64;
        assert!((ratio - 1.0).abs() < 0.05, "0 dB noise power ratio {ratio}");

        // 30 dB: mean noise amplitude ratio near sqrt(1e-3).
        let mut amp_acc = 0.0;
        let mut noise_rng = master_rng(17);
        for h in &raw {
            let sigma_sq = h.norm_squared() / (16.0 * 1000.0);
            let noise = complex_gaussian_vector(16, sigma_sq, &mut noise_rng);
            amp_acc += noise.norm() / h.norm();
        }
        let amp = amp_acc / raw.len() as f64;
        assert!((amp - 0.0316).abs() < 0.003, "30 dB amplitude ratio {amp}");
    }

    #[test]
    fn joint_learning_symmetric_input_stays_symmetric() {
        let mut rng = master_rng(18);
        let pairs: Vec<(CVec, CVec)> = (0..25)
            .map(|_| {
                let v = complex_gaussian_vector(6, 1.0, &mut rng);
                (v.clone(), v)
            })
            .collect();
        let set = PairedTrainingSet::from_vectors(pairs).unwrap();
        let mut config = LearnConfig::new(9, 0.2);
        config.outer_iterations = 3;
        let model = learn_joint(&set, &config.clone(), &config).unwrap();
        assert!(
            (model.uplink.matrix() - model.downlink.matrix()).norm() < 1e-10,
            "symmetric input must give symmetric dictionaries"
        );
        assert_eq!(model.uplink.link(), model.downlink.link());
    }

    #[test]
    fn joint_learning_recovers_shared_support_dictionaries() {
        let truth_down = random_unit_dictionary(8, 10, 19);
        let truth_up = random_unit_dictionary(8, 10, 20);
        let mut rng = master_rng(21);
        let mut pairs = Vec::new();
        for _ in 0..120 {
            use rand::Rng;
            let atom = rng.gen_range(0..10usize);
            let cd = crate::rng::complex_gaussian(&mut rng);
            let cu = crate::rng::complex_gaussian(&mut rng);
            pairs.push((
                CVec::from_column_slice((truth_down.matrix().column(atom) * cd).as_slice()),
                CVec::from_column_slice((truth_up.matrix().column(atom) * cu).as_slice()),
            ));
        }
        let set = PairedTrainingSet::from_vectors(pairs).unwrap();
        // Perturbed-truth init: the alternation must snap both dictionaries
        // back onto the generating atoms.
        let perturb = |d: &Dictionary, seed: u64| {
            let mut rng = master_rng(seed);
            let mut m = d.matrix().clone();
            for j in 0..m.ncols() {
                // ~1.4% column error: inside the mismatch tolerance, so the
                // coding stays one-sparse and the update can snap atoms back.
                let col = m.column(j) + complex_gaussian_vector(8, 2.5e-5, &mut rng);
                let norm = col.norm();
                m.set_column(j, &col.unscale(norm));
            }
            Dictionary::new(m, "init", DictionaryOrigin::Learned).unwrap()
        };
        let mut config_up = LearnConfig::new(10, 0.02);
        config_up.outer_iterations = 8;
        config_up.init = DictInit::Provided(perturb(&truth_up, 23));
        let mut config_down = config_up.clone();
        config_down.init = DictInit::Provided(perturb(&truth_down, 24));
        let model = learn_joint(&set, &config_up, &config_down).unwrap();
        // Every true atom should be captured by some learned atom (up to phase).
        for (truth, learned) in [(&truth_down, &model.downlink), (&truth_up, &model.uplink)] {
            let mut captured = 0;
            for t in truth.matrix().column_iter() {
                let best = learned
                    .matrix()
                    .column_iter()
                    .map(|l| l.dotc(&t).norm() / l.norm().max(1e-12))
                    .fold(0.0f64, f64::max);
                if best > 0.99 {
                    captured += 1;
                }
            }
            assert!(captured >= 8, "only {captured}/10 atoms captured");
        }
    }
}
