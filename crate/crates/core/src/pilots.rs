//! Uplink and downlink training matrices.
//!
//! Uplink pilots are K unit-norm rows over T symbols: orthogonal when
//! T >= K, random, or designed for low cross-correlation by iterative Gram
//! shrinkage when T < K. The module also builds the lifted sensing matrix
//! `S^T (x) D` used by sparse uplink recovery, schedules users with disjoint
//! supports, and draws i.i.d. Gaussian downlink pilots.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;

use crate::dictionary::{fmt_f64, matrix_to_text, parse_matrix_rows, welch_bound, Dictionary};
use crate::error::{Error, Result};
use crate::numerics::{truncated_gram_factor, CMat};
use crate::rng::complex_gaussian_matrix;

/// How a pilot matrix was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PilotOrigin {
    Orthogonal,
    Random,
    Designed,
}

impl std::fmt::Display for PilotOrigin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PilotOrigin::Orthogonal => "orthogonal",
            PilotOrigin::Random => "random",
            PilotOrigin::Designed => "designed",
        })
    }
}

impl std::str::FromStr for PilotOrigin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthogonal" => Ok(PilotOrigin::Orthogonal),
            "random" => Ok(PilotOrigin::Random),
            "designed" => Ok(PilotOrigin::Designed),
            other => Err(Error::format("PILOT", format!("unknown origin `{other}`"))),
        }
    }
}

/// `K x T` uplink training matrix with unit-norm rows `s_k^T`, plus the
/// per-user training powers `rho_k T` (the squared diagonal of C).
#[derive(Clone, Debug)]
pub struct PilotMatrix {
    s: CMat,
    power_profile: Vec<f64>,
    origin: PilotOrigin,
}

impl PilotMatrix {
    pub fn new(s: CMat, origin: PilotOrigin) -> Result<Self> {
        if s.nrows() == 0 || s.ncols() == 0 {
            return Err(Error::InvalidArgument("pilot matrix must be non-empty".into()));
        }
        for k in 0..s.nrows() {
            let norm = s.row(k).norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "pilot row {k} has norm {norm}, expected 1"
                )));
            }
        }
        let t = s.ncols() as f64;
        Ok(PilotMatrix {
            power_profile: vec![t; s.nrows()],
            s,
            origin,
        })
    }

    /// Sets every user's training SNR `rho`, so the power profile becomes
    /// `rho * T` per user.
    pub fn with_snr(mut self, rho: f64) -> Self {
        let t = self.symbols() as f64;
        self.power_profile = vec![rho * t; self.users()];
        self
    }

    /// Per-user SNR values (heterogeneous powers).
    pub fn with_user_snrs(mut self, rhos: &[f64]) -> Result<Self> {
        if rhos.len() != self.users() {
            return Err(Error::DimensionMismatch(format!(
                "{} SNR values for {} users",
                rhos.len(),
                self.users()
            )));
        }
        let t = self.symbols() as f64;
        self.power_profile = rhos.iter().map(|r| r * t).collect();
        Ok(self)
    }

    pub fn matrix(&self) -> &CMat {
        &self.s
    }

    /// `S^T`, the `T x K` matrix whose columns are the user sequences.
    pub fn transposed(&self) -> CMat {
        self.s.transpose()
    }

    /// `rho_k T` per user.
    pub fn power_profile(&self) -> &[f64] {
        &self.power_profile
    }

    /// Diagonal of `C`: `sqrt(rho_k T)`.
    pub fn c_diagonal(&self) -> Vec<f64> {
        self.power_profile.iter().map(|p| p.sqrt()).collect()
    }

    /// `C S`, the powered training matrix.
    pub fn powered(&self) -> CMat {
        let mut out = self.s.clone();
        for (k, scale) in self.c_diagonal().into_iter().enumerate() {
            out.row_mut(k).scale_mut(scale);
        }
        out
    }

    pub fn users(&self) -> usize {
        self.s.nrows()
    }

    pub fn symbols(&self) -> usize {
        self.s.ncols()
    }

    pub fn origin(&self) -> PilotOrigin {
        self.origin
    }

    /// Coherence of the user sequences (columns of `S^T`).
    pub fn coherence(&self) -> Result<f64> {
        crate::dictionary::mutual_coherence(&self.transposed())
    }
}

/// Mutually orthogonal unit rows (requires `T >= K`): rows of the normalized
/// T-point DFT.
pub fn orthogonal_pilots(k: usize, t: usize) -> Result<PilotMatrix> {
    if k == 0 || t < k {
        return Err(Error::InvalidArgument(format!(
            "orthogonal_pilots: need T >= K >= 1, got K={k}, T={t}"
        )));
    }
    let scale = 1.0 / (t as f64).sqrt();
    let s = CMat::from_fn(k, t, |row, col| {
        Complex64::from_polar(scale, -TAU * (row * col) as f64 / t as f64)
    });
    PilotMatrix::new(s, PilotOrigin::Orthogonal)
}

/// Unit-normalized i.i.d. complex Gaussian rows.
pub fn random_pilots(k: usize, t: usize, rng: &mut impl Rng) -> Result<PilotMatrix> {
    if k == 0 || t == 0 {
        return Err(Error::InvalidArgument("random_pilots: K, T must be >= 1".into()));
    }
    let mut s = complex_gaussian_matrix(k, t, 1.0, rng);
    for mut row in s.row_iter_mut() {
        let norm = row.norm();
        row.scale_mut(1.0 / norm);
    }
    PilotMatrix::new(s, PilotOrigin::Random)
}

/// Iterative Gram-shrinkage design of a low-coherence pilot matrix for
/// `1 < T < K`.
///
/// Each pass computes the Gram `G = S* S^T`, scales the top `shrink_percent`
/// of off-diagonal magnitudes by `gamma`, factors the shrunk Gram back to
/// rank `T`, and re-normalizes rows. The best iterate by coherence is
/// returned, so the result never exceeds the coherence of its random
/// initialization; it can never beat the Welch bound.
pub fn design_low_coherence(
    k: usize,
    t: usize,
    shrink_percent: f64,
    gamma: f64,
    iterations: usize,
    rng: &mut impl Rng,
) -> Result<PilotMatrix> {
    if !(t > 1 && t < k) {
        return Err(Error::InvalidArgument(format!(
            "design_low_coherence: need 1 < T < K, got K={k}, T={t}"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) || !(shrink_percent > 0.0 && shrink_percent < 100.0) {
        return Err(Error::InvalidArgument(
            "design_low_coherence: need 0 < gamma < 1 and 0 < shrink_percent < 100".into(),
        ));
    }
    let init = random_pilots(k, t, rng)?;
    let mut s = init.matrix().clone();
    let mut best_s = s.clone();
    let mut best_mu = coherence_of_rows(&s)?;
    let pair_count = k * (k - 1) / 2;
    let shrink_count = ((shrink_percent / 100.0) * pair_count as f64).round().max(1.0) as usize;
    let mut stall = 0usize;

    for _ in 0..iterations {
        let mut gram = s.conjugate() * s.transpose();
        // Threshold at the shrink_count-th largest off-diagonal magnitude.
        let mut mags: Vec<f64> = Vec::with_capacity(pair_count);
        for j in 0..k {
            for i in 0..j {
                mags.push(gram[(i, j)].norm());
            }
        }
        mags.sort_by(|a, b| b.total_cmp(a));
        let threshold = mags[shrink_count.min(pair_count) - 1];
        for j in 0..k {
            for i in 0..j {
                if gram[(i, j)].norm() >= threshold {
                    gram[(i, j)] *= gamma;
                    gram[(j, i)] *= gamma;
                }
            }
        }
        let factor = truncated_gram_factor(&gram, t)?;
        s = factor.transpose();
        for mut row in s.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row.scale_mut(1.0 / norm);
            }
        }
        let mu = coherence_of_rows(&s)?;
        if mu + 1e-12 < best_mu {
            best_mu = mu;
            best_s = s.clone();
            stall = 0;
        } else {
            stall += 1;
            if stall >= 50 {
                break;
            }
        }
    }
    debug_assert!(best_mu + 1e-12 >= welch_bound(k, t)?);
    PilotMatrix::new(best_s, PilotOrigin::Designed)
}

fn coherence_of_rows(s: &CMat) -> Result<f64> {
    crate::dictionary::mutual_coherence(&s.transpose())
}

/// Equivalent sparsifying matrix `E = S^T (x) D` of shape `(N T) x (M K)`.
pub fn kron_sensing_matrix(pilots: &PilotMatrix, dictionary: &Dictionary) -> CMat {
    pilots.transposed().kronecker(dictionary.matrix())
}

/// Restriction `E_Lambda = [s_1 (x) D_{L1} | ... | s_K (x) D_{LK}]` for known
/// per-user supports.
pub fn restricted_sensing_matrix(
    pilots: &PilotMatrix,
    dictionary: &Dictionary,
    supports: &[Vec<usize>],
) -> Result<CMat> {
    if supports.len() != pilots.users() {
        return Err(Error::DimensionMismatch(format!(
            "{} supports for {} users",
            supports.len(),
            pilots.users()
        )));
    }
    let n = dictionary.dim();
    let t = pilots.symbols();
    let total: usize = supports.iter().map(|s| s.len()).sum();
    let mut out = CMat::zeros(n * t, total);
    let mut col = 0;
    for (k, support) in supports.iter().enumerate() {
        for &atom in support {
            if atom >= dictionary.atoms() {
                return Err(Error::InvalidArgument(format!(
                    "support index {atom} out of range"
                )));
            }
            for ti in 0..t {
                let s_val = pilots.matrix()[(k, ti)];
                for ni in 0..n {
                    out[(ti * n + ni, col)] = s_val * dictionary.matrix()[(ni, atom)];
                }
            }
            col += 1;
        }
    }
    Ok(out)
}

/// Greedy support-disjoint scheduling: candidates ordered by ascending
/// support size (ties by id) are admitted while disjoint from everything
/// already selected, up to `quota`. Returns selected ids in admission order.
pub fn schedule_disjoint_users(candidate_supports: &[Vec<usize>], quota: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidate_supports.len()).collect();
    order.sort_by_key(|&id| (candidate_supports[id].len(), id));
    let mut taken: Vec<bool> = Vec::new();
    let mut used = std::collections::HashSet::new();
    let mut selected = Vec::new();
    let _ = &mut taken;
    for id in order {
        if selected.len() >= quota {
            break;
        }
        let support = &candidate_supports[id];
        if support.iter().any(|i| used.contains(i)) {
            continue;
        }
        used.extend(support.iter().copied());
        selected.push(id);
    }
    selected
}

/// Downlink training matrix: `T_d x N` i.i.d. CN(0, rho_d / N) entries, so
/// the expected squared Frobenius norm is `rho_d * T_d`.
#[derive(Clone, Debug)]
pub struct DownlinkPilots {
    pub matrix: CMat,
    pub snr: f64,
}

pub fn downlink_pilots(
    t_d: usize,
    n: usize,
    rho_d: f64,
    rng: &mut impl Rng,
) -> Result<DownlinkPilots> {
    if t_d == 0 || n == 0 {
        return Err(Error::InvalidArgument("downlink_pilots: T_d, N must be >= 1".into()));
    }
    if rho_d < 0.0 {
        return Err(Error::InvalidArgument("downlink_pilots: rho_d must be >= 0".into()));
    }
    Ok(DownlinkPilots {
        matrix: complex_gaussian_matrix(t_d, n, rho_d / n as f64, rng),
        snr: rho_d,
    })
}

/// Writes PILOT v1: header, row-norm line, then K rows of T `re,im` entries
/// (the same numeric layout as DICT files).
pub fn save_pilots(p: &PilotMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("PILOT 1 {} {} {}\n", p.users(), p.symbols(), p.origin());
    let norms: Vec<String> = (0..p.users())
        .map(|k| fmt_f64(p.matrix().row(k).norm()))
        .collect();
    out.push_str(&norms.join(" "));
    out.push('\n');
    out.push_str(&matrix_to_text(p.matrix()));
    fs::write(path, out)?;
    Ok(())
}

pub fn load_pilots(path: impl AsRef<Path>) -> Result<PilotMatrix> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("PILOT", "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "PILOT" || fields[1] != "1" {
        return Err(Error::format("PILOT", format!("bad header `{header}`")));
    }
    let k: usize = fields[2]
        .parse()
        .map_err(|_| Error::format("PILOT", "bad user count"))?;
    let t: usize = fields[3]
        .parse()
        .map_err(|_| Error::format("PILOT", "bad symbol count"))?;
    let origin: PilotOrigin = fields[4].parse()?;
    let _norm_line = lines
        .next()
        .ok_or_else(|| Error::format("PILOT", "missing norm line"))?;
    let s = parse_matrix_rows(&mut lines, k, t, "PILOT")?;
    PilotMatrix::new(s, origin)
}
