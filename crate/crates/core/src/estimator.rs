//! End-to-end channel estimators.
//!
//! Observation synthesis follows the training models exactly: the uplink
//! superimposes powered user pilots, the downlink compresses the channel
//! through a short pilot block, both under unit-variance circular Gaussian
//! noise. Estimators: plain least squares, sparse recovery on the lifted
//! uplink system, compressed sensing (single- or multiple-measurement) on
//! the downlink, restricted least squares for scheduled users with known
//! supports, and the joint uplink/downlink group solver that shares one
//! support across bands.

use num_complex::Complex64;
use rand::Rng;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::numerics::{least_squares, pseudo_inverse, CMat, CVec};
use crate::pilots::{kron_sensing_matrix, restricted_sensing_matrix, DownlinkPilots, PilotMatrix};
use crate::rng::complex_gaussian;
use crate::solver::{
    bpdn, group_bpdn, mmv_bpdn, operator_norm_sq, GroupStructure, SolverOptions, SparseCode,
};

/// Received uplink training block `Y = H C S + W` (`N x T_u`).
#[derive(Clone, Debug)]
pub struct UplinkObservation {
    pub y: CMat,
    pub pilots: PilotMatrix,
    /// Per-entry noise variance used at synthesis (0 in noiseless mode).
    pub noise_variance: f64,
}

/// Received downlink training block `Y = A H + W` (`T_d x N_R`).
#[derive(Clone, Debug)]
pub struct DownlinkObservation {
    pub y: CMat,
    pub pilots: DownlinkPilots,
    pub noise_variance: f64,
}

/// Solver diagnostics attached to sparse estimates.
#[derive(Clone, Debug)]
pub struct SolverStats {
    pub iterations: usize,
    pub duality_gap: f64,
    pub residual_norm: f64,
    pub converged: bool,
}

impl From<&SparseCode> for SolverStats {
    fn from(code: &SparseCode) -> Self {
        SolverStats {
            iterations: code.iterations,
            duality_gap: code.duality_gap,
            residual_norm: code.residual_norm,
            converged: code.converged,
        }
    }
}

/// Channel estimates plus diagnostics. Uplink estimators return one estimate
/// per user; downlink estimators return a single entry.
#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub estimates: Vec<CMat>,
    /// Flags an LS problem with fewer measurements than unknowns.
    pub underdetermined: bool,
    pub solver: Option<SolverStats>,
}

impl EstimateReport {
    fn from_columns(h: &CMat) -> Self {
        EstimateReport {
            estimates: (0..h.ncols())
                .map(|k| CMat::from_column_slice(h.nrows(), 1, h.column(k).as_slice()))
                .collect(),
            underdetermined: false,
            solver: None,
        }
    }

    /// NMSE of each estimate against the matching ground truth.
    pub fn nmse_against(&self, truths: &[CMat]) -> Result<Vec<f64>> {
        if truths.len() != self.estimates.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} truths for {} estimates",
                truths.len(),
                self.estimates.len()
            )));
        }
        self.estimates
            .iter()
            .zip(truths)
            .map(|(e, t)| nmse(t, e))
            .collect()
    }
}

/// Per-realization normalized squared error `||h - h_hat||^2 / ||h||^2`.
pub fn nmse(truth: &CMat, estimate: &CMat) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::DimensionMismatch(format!(
            "nmse: truth {:?} vs estimate {:?}",
            truth.shape(),
            estimate.shape()
        )));
    }
    let denom = truth.norm_squared();
    if denom <= 0.0 {
        return Err(Error::InvalidArgument("nmse: zero ground truth".into()));
    }
    Ok((estimate - truth).norm_squared() / denom)
}

/// Synthesizes `Y = sum_k h_k sqrt(rho_k T) s_k^T (+ W)`.
pub fn simulate_uplink(
    channels: &[CVec],
    pilots: &PilotMatrix,
    add_noise: bool,
    rng: &mut impl Rng,
) -> Result<UplinkObservation> {
    if channels.len() != pilots.users() {
        return Err(Error::DimensionMismatch(format!(
            "{} channels for {} pilot rows",
            channels.len(),
            pilots.users()
        )));
    }
    let n = channels
        .first()
        .ok_or_else(|| Error::InvalidArgument("no channels".into()))?
        .len();
    if channels.iter().any(|h| h.len() != n) {
        return Err(Error::DimensionMismatch("channel lengths differ".into()));
    }
    let t = pilots.symbols();
    let mut h = CMat::zeros(n, channels.len());
    for (k, ch) in channels.iter().enumerate() {
        h.set_column(k, ch);
    }
    let mut y = &h * pilots.powered();
    if add_noise {
        for z in y.iter_mut() {
            *z += complex_gaussian(rng);
        }
    }
    let _ = t;
    Ok(UplinkObservation {
        y,
        pilots: pilots.clone(),
        noise_variance: if add_noise { 1.0 } else { 0.0 },
    })
}

/// Synthesizes `Y = A H (+ W)` for a (possibly multi-antenna) downlink user.
pub fn simulate_downlink(
    channel: &CMat,
    pilots: &DownlinkPilots,
    add_noise: bool,
    rng: &mut impl Rng,
) -> Result<DownlinkObservation> {
    if pilots.matrix.ncols() != channel.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "pilots expect {} antennas, channel has {}",
            pilots.matrix.ncols(),
            channel.nrows()
        )));
    }
    let mut y = &pilots.matrix * channel;
    if add_noise {
        for z in y.iter_mut() {
            *z += complex_gaussian(rng);
        }
    }
    Ok(DownlinkObservation {
        y,
        pilots: pilots.clone(),
        noise_variance: if add_noise { 1.0 } else { 0.0 },
    })
}

/// LS uplink estimate `H_hat = Y (C S)^+`, flagged underdetermined when
/// `T_u < K`.
pub fn uplink_ls(obs: &UplinkObservation) -> Result<EstimateReport> {
    let powered = obs.pilots.powered();
    let h = &obs.y * pseudo_inverse(&powered)?;
    Ok(EstimateReport {
        underdetermined: obs.pilots.symbols() < obs.pilots.users(),
        ..EstimateReport::from_columns(&h)
    })
}

/// Sparse-recovery uplink estimate on the lifted system
/// `vec(Y) = (S^T (x) D) vec(B C) + w`; per-user coefficients are rescaled
/// by their training power and mapped through the dictionary.
pub fn uplink_sr(
    obs: &UplinkObservation,
    dictionary: &Dictionary,
    opts: &SolverOptions,
) -> Result<EstimateReport> {
    let n = obs.y.nrows();
    if dictionary.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "dictionary dimension {} vs {} antennas",
            dictionary.dim(),
            n
        )));
    }
    let e = kron_sensing_matrix(&obs.pilots, dictionary);
    let y = CVec::from_column_slice(obs.y.as_slice());
    let code = bpdn(&e, &y, opts)?;
    let m = dictionary.atoms();
    let beta = code.beta_vector();
    let mut estimates = Vec::with_capacity(obs.pilots.users());
    for (k, power) in obs.pilots.power_profile().iter().enumerate() {
        let scale = Complex64::new(1.0 / power.sqrt(), 0.0);
        let user_beta = CVec::from_fn(m, |i, _| beta[k * m + i] * scale);
        let h = dictionary.matrix() * user_beta;
        estimates.push(CMat::from_column_slice(h.len(), 1, h.as_slice()));
    }
    Ok(EstimateReport {
        estimates,
        underdetermined: false,
        solver: Some(SolverStats::from(&code)),
    })
}

/// Restricted-LS uplink estimate for scheduled users whose supports are
/// known a priori: solves `y = E_Lambda b_Lambda + w` and maps each user's
/// block through the dictionary. This is the regime where disjoint supports
/// keep the restricted system well conditioned regardless of pilot length.
pub fn uplink_sr_with_supports(
    obs: &UplinkObservation,
    dictionary: &Dictionary,
    supports: &[Vec<usize>],
) -> Result<EstimateReport> {
    let e = restricted_sensing_matrix(&obs.pilots, dictionary, supports)?;
    let y = CMat::from_column_slice(obs.y.len(), 1, obs.y.as_slice());
    let rank = crate::numerics::numerical_rank(&e)?;
    let coeffs = least_squares(&e, &y)?;
    let mut estimates = Vec::with_capacity(supports.len());
    let mut offset = 0;
    for (k, support) in supports.iter().enumerate() {
        let scale = Complex64::new(1.0 / obs.pilots.power_profile()[k].sqrt(), 0.0);
        let mut beta = CVec::zeros(dictionary.atoms());
        for (j, &atom) in support.iter().enumerate() {
            beta[atom] = coeffs[(offset + j, 0)] * scale;
        }
        offset += support.len();
        let h = dictionary.matrix() * beta;
        estimates.push(CMat::from_column_slice(h.len(), 1, h.as_slice()));
    }
    Ok(EstimateReport {
        estimates,
        underdetermined: rank < offset,
        solver: None,
    })
}

/// Which downlink solver handles a multi-antenna UE.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsMode {
    /// Each UE antenna's column solved independently.
    Smv,
    /// Joint row-sparse recovery across UE antennas.
    Mmv,
}

/// Compressed-sensing downlink estimate `H_hat = D B_hat` with
/// `Phi = A D`.
pub fn downlink_cs(
    obs: &DownlinkObservation,
    dictionary: &Dictionary,
    opts: &SolverOptions,
    mode: CsMode,
) -> Result<EstimateReport> {
    if obs.pilots.matrix.ncols() != dictionary.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dictionary dimension {} vs {} antennas",
            dictionary.dim(),
            obs.pilots.matrix.ncols()
        )));
    }
    let phi = &obs.pilots.matrix * dictionary.matrix();
    let n_r = obs.y.ncols();
    match mode {
        CsMode::Mmv => {
            let code = mmv_bpdn(&phi, &obs.y, opts)?;
            let h = dictionary.matrix() * &code.beta;
            Ok(EstimateReport {
                estimates: vec![h],
                underdetermined: false,
                solver: Some(SolverStats::from(&code)),
            })
        }
        CsMode::Smv => {
            // Columns share the operator; reuse its norm across solves.
            let mut opts = opts.clone();
            if opts.operator_norm_sq.is_none() && n_r > 1 {
                opts.operator_norm_sq = Some(operator_norm_sq(&phi));
            }
            let mut h = CMat::zeros(dictionary.dim(), n_r);
            let mut total_iterations = 0;
            let mut worst_gap = 0.0f64;
            let mut residual_sq = 0.0;
            let mut converged = true;
            for col in 0..n_r {
                let y = CVec::from_column_slice(obs.y.column(col).as_slice());
                let code = bpdn(&phi, &y, &opts)?;
                h.set_column(col, &(dictionary.matrix() * code.beta_vector()));
                total_iterations += code.iterations;
                worst_gap = worst_gap.max(code.duality_gap);
                residual_sq += code.residual_norm * code.residual_norm;
                converged &= code.converged;
            }
            Ok(EstimateReport {
                estimates: vec![h],
                underdetermined: false,
                solver: Some(SolverStats {
                    iterations: total_iterations,
                    duality_gap: worst_gap,
                    residual_norm: residual_sq.sqrt(),
                    converged,
                }),
            })
        }
    }
}

/// LS downlink estimate `H_hat = A^+ Y`, flagged when `T_d < N`.
pub fn downlink_ls(obs: &DownlinkObservation) -> Result<EstimateReport> {
    let h = pseudo_inverse(&obs.pilots.matrix)? * &obs.y;
    Ok(EstimateReport {
        underdetermined: obs.pilots.matrix.nrows() < obs.pilots.matrix.ncols(),
        ..EstimateReport::from_columns(&h)
    })
}

/// Joint uplink/downlink estimate for one user.
#[derive(Clone, Debug)]
pub struct JointEstimate {
    pub uplink: CVec,
    pub downlink: CVec,
    /// Shared atom support (identical across bands by construction).
    pub support: Vec<usize>,
    pub tau: f64,
    pub solver: SolverStats,
}

/// De-spreads the single-user uplink block to `y_u = h_u + w_u` with
/// per-entry noise variance `1 / (rho_u T_u)`.
pub fn despread_uplink(obs: &UplinkObservation) -> Result<CVec> {
    if obs.pilots.users() != 1 {
        return Err(Error::InvalidArgument(
            "de-spreading expects a single-user observation".into(),
        ));
    }
    // (sqrt(rho T) s^T)^+ = conj(s) / sqrt(rho T) for a unit row.
    let power = obs.pilots.power_profile()[0];
    let scale = Complex64::new(1.0 / power.sqrt(), 0.0);
    let s_conj = obs.pilots.matrix().row(0).conjugate().transpose();
    Ok(&obs.y * (s_conj * scale))
}

/// Solves the stacked group problem
/// `y = [y_d; tau y_u]`, `G = [A D_d, 0; 0, tau D_u]` with paired groups, so
/// the two bands share one support. `tau` balances the column norms of the
/// two blocks unless overridden; `opts.epsilon == 0` requests the
/// noise-matched stacked bound.
pub fn joint_estimate(
    ul_obs: &UplinkObservation,
    dl_obs: &DownlinkObservation,
    dict_up: &Dictionary,
    dict_down: &Dictionary,
    opts: &SolverOptions,
    tau_override: Option<f64>,
) -> Result<JointEstimate> {
    if dict_up.atoms() != dict_down.atoms() {
        return Err(Error::InvalidArgument(
            "joint estimation needs dictionaries with matching atom counts".into(),
        ));
    }
    if let (Some(lu), Some(ld)) = (dict_up.link(), dict_down.link()) {
        if lu != ld {
            return Err(Error::InvalidArgument(format!(
                "dictionaries are not a linked pair ({lu} vs {ld})"
            )));
        }
    }
    if dl_obs.y.ncols() != 1 {
        return Err(Error::InvalidArgument(
            "joint estimation expects a single-antenna downlink observation".into(),
        ));
    }
    let y_u = despread_uplink(ul_obs)?;
    let n = y_u.len();
    if dict_up.dim() != n || dict_down.dim() != dl_obs.pilots.matrix.ncols() {
        return Err(Error::DimensionMismatch(
            "dictionary dimensions do not match the observations".into(),
        ));
    }
    let t_d = dl_obs.y.nrows();
    let m = dict_up.atoms();
    let a_dd = &dl_obs.pilots.matrix * dict_down.matrix();

    let tau = match tau_override {
        Some(t) => t,
        None => {
            let mean_norm = |x: &CMat| {
                x.column_iter().map(|c| c.norm()).sum::<f64>() / x.ncols() as f64
            };
            mean_norm(&a_dd) / mean_norm(dict_up.matrix()).max(1e-300)
        }
    };

    let mut g = CMat::zeros(t_d + n, 2 * m);
    g.view_mut((0, 0), (t_d, m)).copy_from(&a_dd);
    g.view_mut((t_d, m), (n, m))
        .copy_from(&(dict_up.matrix() * Complex64::new(tau, 0.0)));

    let mut y = CVec::zeros(t_d + n);
    for i in 0..t_d {
        y[i] = dl_obs.y[(i, 0)];
    }
    for i in 0..n {
        y[t_d + i] = y_u[i] * tau;
    }

    let mut opts = opts.clone();
    if opts.epsilon == 0.0 {
        // Fold the per-link bounds into one stacked bound; the de-spread
        // uplink noise has per-entry variance 1/(rho T).
        let eps_d = SolverOptions::epsilon_for_noise(t_d, dl_obs.noise_variance);
        let ul_variance = ul_obs.noise_variance / ul_obs.pilots.power_profile()[0];
        let eps_u = SolverOptions::epsilon_for_noise(n, ul_variance);
        opts.epsilon = (eps_d * eps_d + tau * tau * eps_u * eps_u).sqrt();
    }

    let groups = GroupStructure::paired_blocks(m);
    let code = group_bpdn(&g, &y, &groups, &opts)?;
    let beta = code.beta_vector();
    let beta_d = CVec::from_fn(m, |i, _| beta[i]);
    let beta_u = CVec::from_fn(m, |i, _| beta[m + i]);
    let support: Vec<usize> = code.support.iter().filter(|&&i| i < m).copied().collect();
    Ok(JointEstimate {
        uplink: dict_up.matrix() * beta_u,
        downlink: dict_down.matrix() * beta_d,
        support,
        tau,
        solver: SolverStats::from(&code),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{dft_overcomplete, dft_square};
    use crate::pilots::{downlink_pilots, orthogonal_pilots, random_pilots};
    use crate::rng::{complex_gaussian_vector, master_rng};

    fn unit_vec(n: usize, seed: u64) -> CVec {
        let mut v = complex_gaussian_vector(n, 1.0, &mut master_rng(seed));
        let norm = v.norm();
        v.unscale_mut(norm);
        v
    }

    #[test]
    fn nmse_trivial_values() {
        let t = CMat::from_column_slice(2, 1, &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 2.0)]);
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        assert_eq!(nmse(&t, &CMat::zeros(2, 1)).unwrap(), 1.0);
        let double = &t * Complex64::new(2.0, 0.0);
        assert!((nmse(&t, &double).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&CMat::zeros(2, 1), &t).is_err());
    }

    #[test]
    fn simulate_uplink_noiseless_matches_model() {
        let pilots = orthogonal_pilots(3, 4).unwrap().with_snr(2.0);
        let channels: Vec<CVec> = (0..3).map(|k| unit_vec(6, k as u64)).collect();
        let obs =
            simulate_uplink(&channels, &pilots, false, &mut master_rng(1)).unwrap();
        let mut h = CMat::zeros(6, 3);
        for (k, c) in channels.iter().enumerate() {
            h.set_column(k, c);
        }
        let expected = &h * pilots.powered();
        assert!((&obs.y - expected).norm() < 1e-12);

        let a = simulate_uplink(&channels, &pilots, true, &mut master_rng(2)).unwrap();
        let b = simulate_uplink(&channels, &pilots, true, &mut master_rng(2)).unwrap();
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn despread_noise_variance_matches_algebra() {
        let rho = 4.0;
        let t_u = 2;
        let pilots = orthogonal_pilots(1, t_u).unwrap().with_snr(rho);
        let h = unit_vec(8, 3);
        let mut rng = master_rng(4);
        let trials = 600;
        let mut acc = 0.0;
        for _ in 0..trials {
            let obs = simulate_uplink(&[h.clone()], &pilots, true, &mut rng).unwrap();
            let despread = despread_uplink(&obs).unwrap();
            acc += (&despread - &h).norm_squared() / 8.0;
        }
        let variance = acc / trials as f64;
        let expected = 1.0 / (rho * t_u as f64);
        assert!(
            (variance - expected).abs() < 0.15 * expected,
            "variance {variance} vs expected {expected}"
        );
    }

    #[test]
    fn uplink_ls_noiseless_exact_and_flags() {
        let pilots = orthogonal_pilots(4, 4).unwrap().with_snr(1.0);
        let channels: Vec<CVec> = (0..4).map(|k| unit_vec(8, 10 + k as u64)).collect();
        let obs = simulate_uplink(&channels, &pilots, false, &mut master_rng(5)).unwrap();
        let report = uplink_ls(&obs).unwrap();
        assert!(!report.underdetermined);
        for (est, truth) in report.estimates.iter().zip(&channels) {
            let t = CMat::from_column_slice(8, 1, truth.as_slice());
            assert!(nmse(&t, est).unwrap() < 1e-20);
        }

        // Underdetermined: T < K is flagged and inaccurate.
        let short = random_pilots(4, 3, &mut master_rng(6)).unwrap().with_snr(1.0);
        let obs = simulate_uplink(&channels, &short, false, &mut master_rng(7)).unwrap();
        let report = uplink_ls(&obs).unwrap();
        assert!(report.underdetermined);
        let truths: Vec<CMat> = channels
            .iter()
            .map(|c| CMat::from_column_slice(8, 1, c.as_slice()))
            .collect();
        let mean: f64 =
            report.nmse_against(&truths).unwrap().iter().sum::<f64>() / 4.0;
        assert!(mean > 0.2, "underdetermined LS should be poor, got {mean}");
    }

    #[test]
    fn uplink_ls_noise_scales_inversely_with_power() {
        let channels: Vec<CVec> = (0..3).map(|k| unit_vec(12, 20 + k as u64)).collect();
        let truths: Vec<CMat> = channels
            .iter()
            .map(|c| CMat::from_column_slice(12, 1, c.as_slice()))
            .collect();
        let mut mean_at = |rho: f64, seed: u64| {
            let pilots = orthogonal_pilots(3, 3).unwrap().with_snr(rho);
            let trials = 300;
            let mut rng = master_rng(seed);
            let mut acc = 0.0;
            for _ in 0..trials {
                let obs = simulate_uplink(&channels, &pilots, true, &mut rng).unwrap();
                let report = uplink_ls(&obs).unwrap();
                acc += report.nmse_against(&truths).unwrap().iter().sum::<f64>() / 3.0;
            }
            acc / trials as f64
        };
        let low = mean_at(5.0, 30);
        let high = mean_at(10.0, 30);
        let ratio = low / high;
        assert!((1.6..=2.5).contains(&ratio), "doubling power gave ratio {ratio}");
    }

    #[test]
    fn uplink_sr_known_supports_corollary_regime() {
        // K = 2, T_u = 1: disjoint supports recover exactly, identical
        // supports collapse to a rank-one system and fail.
        let d = dft_overcomplete(16, 24).unwrap();
        let pilots = random_pilots(2, 1, &mut master_rng(8)).unwrap().with_snr(1.0);
        let atoms = [3usize, 17];
        let coefs = [Complex64::new(1.0, -0.4), Complex64::new(-0.7, 0.9)];
        let channels: Vec<CVec> = atoms
            .iter()
            .zip(coefs)
            .map(|(&a, c)| d.matrix().column(a) * c)
            .collect();
        let obs = simulate_uplink(&channels, &pilots, false, &mut master_rng(9)).unwrap();

        let report =
            uplink_sr_with_supports(&obs, &d, &[vec![atoms[0]], vec![atoms[1]]]).unwrap();
        assert!(!report.underdetermined);
        for (est, truth) in report.estimates.iter().zip(&channels) {
            let t = CMat::from_column_slice(16, 1, truth.as_slice());
            assert!(nmse(&t, est).unwrap() < 1e-16);
        }

        // Identical supports: the restricted system is rank one, so the
        // min-norm split misattributes energy. Average over random gains.
        let same = d.matrix().column(atoms[0]).into_owned();
        let mut rng = master_rng(10);
        let mut acc = 0.0;
        let trials = 40;
        for _ in 0..trials {
            let g1 = complex_gaussian(&mut rng);
            let g2 = complex_gaussian(&mut rng);
            let channels_same = vec![same.clone() * g1, same.clone() * g2];
            let obs =
                simulate_uplink(&channels_same, &pilots, false, &mut rng).unwrap();
            let report =
                uplink_sr_with_supports(&obs, &d, &[vec![atoms[0]], vec![atoms[0]]]).unwrap();
            assert!(report.underdetermined, "identical supports must flag rank deficiency");
            let truths: Vec<CMat> = channels_same
                .iter()
                .map(|c| CMat::from_column_slice(16, 1, c.as_slice()))
                .collect();
            acc += report.nmse_against(&truths).unwrap().iter().sum::<f64>() / 2.0;
        }
        let mean = acc / trials as f64;
        assert!(mean > 0.5, "rank-one split should fail, got mean NMSE {mean}");
    }

    #[test]
    fn uplink_sr_bpdn_route_with_orthogonal_pilots() {
        let d = dft_overcomplete(12, 18).unwrap();
        let pilots = orthogonal_pilots(2, 2).unwrap().with_snr(1.0);
        let channels = vec![
            d.matrix().column(2) * Complex64::new(0.8, 0.1),
            d.matrix().column(9) * Complex64::new(-0.5, 0.6),
        ];
        let obs = simulate_uplink(&channels, &pilots, false, &mut master_rng(11)).unwrap();
        let report = uplink_sr(&obs, &d, &SolverOptions::with_epsilon(1e-8)).unwrap();
        for (est, truth) in report.estimates.iter().zip(&channels) {
            let t = CMat::from_column_slice(12, 1, truth.as_slice());
            assert!(nmse(&t, est).unwrap() < 1e-8);
        }
        assert!(report.solver.as_ref().unwrap().converged);
    }

    #[test]
    fn downlink_cs_identity_pilots_feasible_at_truth() {
        let n = 16;
        let d = dft_overcomplete(n, 24).unwrap();
        let rho: f64 = 4.0;
        let a = DownlinkPilots {
            matrix: CMat::identity(n, n) * Complex64::new(rho.sqrt(), 0.0),
            snr: rho,
        };
        let h = CMat::from_column_slice(n, 1, unit_vec(n, 40).as_slice());
        let obs = simulate_downlink(&h, &a, false, &mut master_rng(12)).unwrap();
        let report = downlink_cs(&obs, &d, &SolverOptions::with_epsilon(1e-8), CsMode::Smv).unwrap();
        assert!(nmse(&h, &report.estimates[0]).unwrap() < 1e-10);
    }

    #[test]
    fn downlink_cs_recovers_on_grid_single_atom() {
        let n = 32;
        let d = dft_overcomplete(n, 48).unwrap();
        let a = downlink_pilots(8, n, 1.0, &mut master_rng(13)).unwrap();
        let atom = 20;
        let h = d.matrix().column(atom) * Complex64::new(0.9, -0.3);
        let h = CMat::from_column_slice(n, 1, h.as_slice());
        let obs = simulate_downlink(&h, &a, false, &mut master_rng(14)).unwrap();
        let report = downlink_cs(&obs, &d, &SolverOptions::with_epsilon(1e-9), CsMode::Smv).unwrap();
        assert!(nmse(&h, &report.estimates[0]).unwrap() < 1e-10);
    }

    #[test]
    fn downlink_ls_exact_and_flagged() {
        let n = 12;
        let a = downlink_pilots(n, n, 2.0, &mut master_rng(15)).unwrap();
        let h = CMat::from_column_slice(n, 1, unit_vec(n, 41).as_slice());
        let obs = simulate_downlink(&h, &a, false, &mut master_rng(16)).unwrap();
        let report = downlink_ls(&obs).unwrap();
        assert!(!report.underdetermined);
        assert!(nmse(&h, &report.estimates[0]).unwrap() < 1e-16);

        let short = downlink_pilots(n / 2, n, 2.0, &mut master_rng(17)).unwrap();
        let obs = simulate_downlink(&h, &short, false, &mut master_rng(18)).unwrap();
        let report = downlink_ls(&obs).unwrap();
        assert!(report.underdetermined);
        assert!(nmse(&h, &report.estimates[0]).unwrap() > 0.1);
    }

    #[test]
    fn joint_estimate_shares_support_and_uses_uplink() {
        // On-grid shared support, tiny T_d: the uplink block (N equations)
        // pins the support, so the joint estimate recovers the downlink where
        // independent CS cannot.
        let n = 16;
        let m = 24;
        let c = 299_792_458.0;
        let spacing = crate::channel::half_wavelength_spacing(2.010e9);
        let (du, dd) =
            crate::dictionary::dft_joint_pair(n, m, spacing, c / 1.920e9, c / 2.110e9).unwrap();
        let atom = 12;
        let h_u = du.matrix().column(atom) * Complex64::new(0.8, 0.2);
        let h_d = dd.matrix().column(atom) * Complex64::new(-0.4, 1.0);

        let t_d = 2;
        let a = downlink_pilots(t_d, n, 1.0, &mut master_rng(39)).unwrap();
        let dl_obs = simulate_downlink(
            &CMat::from_column_slice(n, 1, h_d.as_slice()),
            &a,
            false,
            &mut master_rng(20),
        )
        .unwrap();
        let pilots = orthogonal_pilots(1, 2).unwrap().with_snr(1.0);
        let ul_obs =
            simulate_uplink(&[h_u.clone().into()], &pilots, false, &mut master_rng(21)).unwrap();

        let joint = joint_estimate(
            &ul_obs,
            &dl_obs,
            &du,
            &dd,
            &SolverOptions::with_epsilon(1e-8),
            None,
        )
        .unwrap();
        assert_eq!(joint.support, vec![atom]);
        let h_d_mat = CMat::from_column_slice(n, 1, h_d.as_slice());
        let est = CMat::from_column_slice(n, 1, joint.downlink.as_slice());
        assert!(nmse(&h_d_mat, &est).unwrap() < 1e-8, "joint downlink inexact");

        // Independent CS at T_d = 2 cannot identify the channel.
        let indep = downlink_cs(&dl_obs, &dd, &SolverOptions::with_epsilon(1e-8), CsMode::Smv)
            .unwrap();
        assert!(nmse(&h_d_mat, &indep.estimates[0]).unwrap() > 1e-3);
    }

    #[test]
    fn joint_estimate_tau_zero_matches_independent_cs() {
        let n = 12;
        let m = 18;
        let du = dft_overcomplete(n, m).unwrap();
        let dd = dft_overcomplete(n, m).unwrap();
        let h_d = unit_vec(n, 50);
        let h_u = unit_vec(n, 51);
        let t_d = 6;
        let a = downlink_pilots(t_d, n, 2.0, &mut master_rng(22)).unwrap();
        let dl_obs = simulate_downlink(
            &CMat::from_column_slice(n, 1, h_d.as_slice()),
            &a,
            true,
            &mut master_rng(23),
        )
        .unwrap();
        let pilots = orthogonal_pilots(1, 2).unwrap().with_snr(2.0);
        let ul_obs =
            simulate_uplink(&[h_u], &pilots, true, &mut master_rng(24)).unwrap();

        let eps_d = SolverOptions::epsilon_for_noise(t_d, 1.0);
        let joint = joint_estimate(
            &ul_obs,
            &dl_obs,
            &du,
            &dd,
            &SolverOptions::with_epsilon(eps_d),
            Some(0.0),
        )
        .unwrap();
        let indep = downlink_cs(&dl_obs, &dd, &SolverOptions::with_epsilon(eps_d), CsMode::Smv)
            .unwrap();
        let joint_dl = CMat::from_column_slice(n, 1, joint.downlink.as_slice());
        let rel = (&joint_dl - &indep.estimates[0]).norm()
            / indep.estimates[0].norm().max(1e-12);
        assert!(rel < 1e-4, "tau = 0 deviates from independent CS by {rel}");
        assert!(joint.uplink.norm() < 1e-10, "uplink block must stay inert");
    }

    #[test]
    fn dictionary_dimension_mismatches_are_rejected() {
        let d = dft_square(8).unwrap();
        let pilots = orthogonal_pilots(2, 2).unwrap();
        let channels: Vec<CVec> = (0..2).map(|k| unit_vec(6, 60 + k as u64)).collect();
        let obs = simulate_uplink(&channels, &pilots, false, &mut master_rng(25)).unwrap();
        assert!(uplink_sr(&obs, &d, &SolverOptions::with_epsilon(0.1)).is_err());
    }
}
