//! Sparsifying dictionaries: square and overcomplete DFT constructions,
//! Kronecker variants for rectangular arrays, coherence metrics, and the
//! DICT v1 file format.
//!
//! Every dictionary keeps its column norms inside the unit ball (the
//! constraint set used throughout learning); constructors and the file
//! loader both enforce it.

use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::CMat;

/// Where a dictionary came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DictionaryOrigin {
    Dft,
    Odft,
    Learned,
    JointLearned,
}

impl fmt::Display for DictionaryOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DictionaryOrigin::Dft => "dft",
            DictionaryOrigin::Odft => "odft",
            DictionaryOrigin::Learned => "learned",
            DictionaryOrigin::JointLearned => "joint_learned",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for DictionaryOrigin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dft" => Ok(DictionaryOrigin::Dft),
            "odft" => Ok(DictionaryOrigin::Odft),
            "learned" => Ok(DictionaryOrigin::Learned),
            "joint_learned" => Ok(DictionaryOrigin::JointLearned),
            other => Err(Error::format("DICT", format!("unknown origin `{other}`"))),
        }
    }
}

/// An `N x M` sparsifying matrix with unit-bounded column norms.
#[derive(Clone, Debug)]
pub struct Dictionary {
    matrix: CMat,
    label: String,
    origin: DictionaryOrigin,
    /// Pairs an uplink dictionary with its downlink counterpart.
    link: Option<String>,
}

/// Slack admitted on the unit column-norm bound.
pub const COLUMN_NORM_SLACK: f64 = 1e-9;

impl Dictionary {
    pub fn new(matrix: CMat, label: impl Into<String>, origin: DictionaryOrigin) -> Result<Self> {
        let d = Dictionary {
            matrix,
            label: label.into(),
            origin,
            link: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_link(mut self, link: impl Into<String>) -> Self {
        self.link = Some(link.into());
        self
    }

    fn validate(&self) -> Result<()> {
        if self.matrix.nrows() == 0 || self.matrix.ncols() == 0 {
            return Err(Error::InvalidArgument("dictionary must be non-empty".into()));
        }
        for (j, col) in self.matrix.column_iter().enumerate() {
            let norm = col.norm();
            if !norm.is_finite() {
                return Err(Error::NonFinite("dictionary column"));
            }
            if norm > 1.0 + COLUMN_NORM_SLACK {
                return Err(Error::ColumnNorm { index: j, norm });
            }
        }
        Ok(())
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn origin(&self) -> DictionaryOrigin {
        self.origin
    }

    pub fn link(&self) -> Option<&str> {
        self.link.as_deref()
    }

    /// Signal dimension N (rows).
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Atom count M (columns).
    pub fn atoms(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Column `f(psi) = (1/sqrt(N)) [1, e^{j 2 pi psi}, ..., e^{j 2 pi psi (N-1)}]^T`.
fn dft_column(n: usize, psi: f64) -> Vec<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|row| Complex64::from_polar(scale, TAU * psi * row as f64))
        .collect()
}

fn dft_matrix(n: usize, m: usize) -> CMat {
    // psi grid: -1/2 inclusive to 1/2 exclusive, step 1/M.
    let mut mat = CMat::zeros(n, m);
    for j in 0..m {
        let psi = -0.5 + j as f64 / m as f64;
        for (i, z) in dft_column(n, psi).into_iter().enumerate() {
            mat[(i, j)] = z;
        }
    }
    mat
}

/// Normalized square DFT matrix (`N x N`, unitary).
pub fn dft_square(n: usize) -> Result<Dictionary> {
    if n == 0 {
        return Err(Error::InvalidArgument("dft_square: N must be >= 1".into()));
    }
    Dictionary::new(dft_matrix(n, n), format!("dft{n}"), DictionaryOrigin::Dft)
}

/// Overcomplete DFT matrix (`N x M`, `M >= N`): the angular grid is sampled
/// with step 1/M instead of 1/N, giving unit-norm, non-orthogonal columns.
pub fn dft_overcomplete(n: usize, m: usize) -> Result<Dictionary> {
    if n == 0 || m < n {
        return Err(Error::InvalidArgument(format!(
            "dft_overcomplete: need M >= N >= 1, got N={n}, M={m}"
        )));
    }
    Dictionary::new(dft_matrix(n, m), format!("odft{n}x{m}"), DictionaryOrigin::Odft)
}

/// Overcomplete DFT for a rectangular array: Kronecker product of a
/// horizontal `N2 x M2` factor with a vertical `N1 x M1` factor.
pub fn dft_overcomplete_ura(n1: usize, m1: usize, n2: usize, m2: usize) -> Result<Dictionary> {
    if n1 == 0 || n2 == 0 || m1 < n1 || m2 < n2 {
        return Err(Error::InvalidArgument(format!(
            "dft_overcomplete_ura: need Mi >= Ni >= 1, got ({n1},{m1}) and ({n2},{m2})"
        )));
    }
    let horizontal = dft_matrix(n2, m2);
    let vertical = dft_matrix(n1, m1);
    let kron = horizontal.kronecker(&vertical);
    Dictionary::new(
        kron,
        format!("odft-ura{}x{}", n1 * n2, m1 * m2),
        DictionaryOrigin::Odft,
    )
}

/// Frequency-matched overcomplete DFT pair for two carrier wavelengths.
///
/// Column `m` of both members points at the same physical direction
/// `sin(theta) in {-1, -1 + 2/M, ...}`; the angular frequency seen by each
/// band is `psi = (d / lambda) sin(theta)`. Sharing the direction grid is
/// what makes a common sparsity pattern across the pair meaningful.
pub fn dft_joint_pair(
    n: usize,
    m: usize,
    spacing_m: f64,
    lambda_up: f64,
    lambda_down: f64,
) -> Result<(Dictionary, Dictionary)> {
    if n == 0 || m < n {
        return Err(Error::InvalidArgument(format!(
            "dft_joint_pair: need M >= N >= 1, got N={n}, M={m}"
        )));
    }
    if spacing_m <= 0.0 || lambda_up <= 0.0 || lambda_down <= 0.0 {
        return Err(Error::InvalidArgument(
            "dft_joint_pair: spacing and wavelengths must be positive".into(),
        ));
    }
    let build = |lambda: f64, tag: &str| -> Result<Dictionary> {
        let mut mat = CMat::zeros(n, m);
        for j in 0..m {
            let sin_theta = -1.0 + 2.0 * j as f64 / m as f64;
            let psi = spacing_m / lambda * sin_theta;
            for (i, z) in dft_column(n, psi).into_iter().enumerate() {
                mat[(i, j)] = z;
            }
        }
        Dictionary::new(mat, format!("jodft{n}x{m}-{tag}"), DictionaryOrigin::Odft)
    };
    let link = format!("jodft{n}x{m}");
    let up = build(lambda_up, "ul")?.with_link(link.clone());
    let down = build(lambda_down, "dl")?.with_link(link);
    Ok((up, down))
}

/// Largest normalized inner product between distinct columns, in [0, 1].
pub fn mutual_coherence(x: &CMat) -> Result<f64> {
    let m = x.ncols();
    if m < 2 {
        return Err(Error::InvalidArgument(
            "mutual_coherence: need at least 2 columns".into(),
        ));
    }
    let mut normalized = x.clone();
    for mut col in normalized.column_iter_mut() {
        let norm = col.norm();
        if norm <= 0.0 {
            return Err(Error::InvalidArgument(
                "mutual_coherence: zero column".into(),
            ));
        }
        col.scale_mut(1.0 / norm);
    }
    let gram = normalized.adjoint() * &normalized;
    let mut max = 0.0f64;
    for j in 0..m {
        for i in 0..j {
            max = max.max(gram[(i, j)].norm());
        }
    }
    Ok(max.min(1.0))
}

/// Lower bound on the coherence of any `K`-column frame in `T` dimensions:
/// `sqrt((K - T) / (T (K - 1)))`.
pub fn welch_bound(k: usize, t: usize) -> Result<f64> {
    if t == 0 || t >= k {
        return Err(Error::InvalidArgument(format!(
            "welch_bound: need 1 <= T < K, got K={k}, T={t}; use orthogonal pilots when T >= K"
        )));
    }
    Ok(((k - t) as f64 / (t * (k - 1)) as f64).sqrt())
}

pub(crate) fn fmt_f64(v: f64) -> String {
    // 17 significant digits round-trips f64 exactly.
    format!("{v:.16e}")
}

pub(crate) fn matrix_to_text(m: &CMat) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            let z = m[(i, j)];
            out.push_str(&fmt_f64(z.re));
            out.push(',');
            out.push_str(&fmt_f64(z.im));
        }
        out.push('\n');
    }
    out
}

pub(crate) fn parse_complex_entry(token: &str, format: &'static str) -> Result<Complex64> {
    let (re, im) = token
        .split_once(',')
        .ok_or_else(|| Error::format(format, format!("entry `{token}` is not `re,im`")))?;
    let re: f64 = re
        .parse()
        .map_err(|_| Error::format(format, format!("bad real part `{re}`")))?;
    let im: f64 = im
        .parse()
        .map_err(|_| Error::format(format, format!("bad imaginary part `{im}`")))?;
    Ok(Complex64::new(re, im))
}

pub(crate) fn parse_matrix_rows<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    rows: usize,
    cols: usize,
    format: &'static str,
) -> Result<CMat> {
    let mut m = CMat::zeros(rows, cols);
    for i in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| Error::format(format, format!("missing row {i}")))?;
        let mut count = 0;
        for (j, token) in line.split_whitespace().enumerate() {
            if j >= cols {
                return Err(Error::format(
                    format,
                    format!("row {i} has more than {cols} entries"),
                ));
            }
            m[(i, j)] = parse_complex_entry(token, format)?;
            count += 1;
        }
        if count != cols {
            return Err(Error::format(
                format,
                format!("row {i} has {count} entries, expected {cols}"),
            ));
        }
    }
    Ok(m)
}

/// Writes DICT v1: header line, column-norm line, then N rows of M `re,im`
/// entries with 17 significant digits.
pub fn save_dictionary(d: &Dictionary, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("DICT 1 {} {} {}", d.dim(), d.atoms(), d.origin()));
    if let Some(link) = d.link() {
        out.push_str(&format!(" link={link}"));
    }
    out.push('\n');
    let norms: Vec<String> = d.matrix.column_iter().map(|c| fmt_f64(c.norm())).collect();
    out.push_str(&norms.join(" "));
    out.push('\n');
    out.push_str(&matrix_to_text(&d.matrix));
    fs::write(path, out)?;
    Ok(())
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    let text = fs::read_to_string(&path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("DICT", "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "DICT" || fields[1] != "1" {
        return Err(Error::format("DICT", format!("bad header `{header}`")));
    }
    let n: usize = fields[2]
        .parse()
        .map_err(|_| Error::format("DICT", "bad row count"))?;
    let m: usize = fields[3]
        .parse()
        .map_err(|_| Error::format("DICT", "bad column count"))?;
    let origin: DictionaryOrigin = fields[4].parse()?;
    let link = fields
        .get(5)
        .and_then(|f| f.strip_prefix("link="))
        .map(|s| s.to_string());
    let norm_line = lines
        .next()
        .ok_or_else(|| Error::format("DICT", "missing norm line"))?;
    let norms: Vec<f64> = norm_line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::format("DICT", "bad norm")))
        .collect::<Result<_>>()?;
    if norms.len() != m {
        return Err(Error::format(
            "DICT",
            format!("{} norms for {m} columns", norms.len()),
        ));
    }
    for (j, norm) in norms.iter().enumerate() {
        if *norm > 1.0 + COLUMN_NORM_SLACK {
            return Err(Error::ColumnNorm { index: j, norm: *norm });
        }
    }
    let matrix = parse_matrix_rows(&mut lines, n, m, "DICT")?;
    for (j, col) in matrix.column_iter().enumerate() {
        if (col.norm() - norms[j]).abs() > 1e-6 {
            return Err(Error::format(
                "DICT",
                format!("stored norm of column {j} does not match its entries"),
            ));
        }
    }
    let label = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dictionary".into());
    let d = Dictionary::new(matrix, label, origin)?;
    Ok(match link {
        Some(l) => d.with_link(l),
        None => d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_gaussian_matrix, master_rng};
    use num_complex::Complex64;

    /// Normalized Dirichlet kernel: inner product of DFT columns 1/M apart.
    fn dirichlet_coherence(n: usize, m: usize) -> f64 {
        let delta = std::f64::consts::PI / m as f64;
        ((n as f64 * delta).sin() / (n as f64 * delta.sin())).abs()
    }

    fn unit_columns(rows: usize, cols: usize, seed: u64) -> CMat {
        let mut x = complex_gaussian_matrix(rows, cols, 1.0, &mut master_rng(seed));
        for mut c in x.column_iter_mut() {
            let norm = c.norm();
            c.scale_mut(1.0 / norm);
        }
        x
    }

    #[test]
    fn dft_square_trivial_and_unitary() {
        let d1 = dft_square(1).unwrap();
        assert_eq!(d1.matrix()[(0, 0)], Complex64::new(1.0, 0.0));

        for n in [2usize, 3, 4, 16, 64, 256] {
            let d = dft_square(n).unwrap();
            let gram = d.matrix().adjoint() * d.matrix();
            let err = (&gram - CMat::identity(n, n)).norm();
            assert!(err < 1e-12 * (n as f64), "N={n}: {err}");
        }
        assert!(mutual_coherence(dft_square(4).unwrap().matrix()).unwrap() < 1e-12);
    }

    #[test]
    fn dft_square_1024_orthogonality_sampled() {
        let d = dft_square(1024).unwrap();
        let m = d.matrix();
        let mut rng = master_rng(99);
        use rand::Rng;
        for _ in 0..2000 {
            let i = rng.gen_range(0..1024usize);
            let j = rng.gen_range(0..1024usize);
            let ip: Complex64 = m.column(i).dotc(&m.column(j));
            if i == j {
                assert!((ip.norm() - 1.0).abs() < 1e-12);
            } else {
                assert!(ip.norm() < 1e-12, "columns {i},{j}: {}", ip.norm());
            }
        }
    }

    #[test]
    fn odft_degenerate_equals_square() {
        let a = dft_overcomplete(4, 4).unwrap();
        let b = dft_square(4).unwrap();
        assert!((a.matrix() - b.matrix()).norm() < 1e-15);
        assert!(dft_overcomplete(4, 3).is_err());
    }

    #[test]
    fn odft_coherence_matches_dirichlet_kernel() {
        let d = dft_overcomplete(4, 8).unwrap();
        let mu = mutual_coherence(d.matrix()).unwrap();
        assert!((mu - 0.6532814824381883).abs() < 1e-4, "mu = {mu}");
        assert!((mu - dirichlet_coherence(4, 8)).abs() < 1e-12);
    }

    #[test]
    fn odft_ura_shape_and_norms() {
        let d = dft_overcomplete_ura(3, 6, 3, 6).unwrap();
        assert_eq!(d.dim(), 9);
        assert_eq!(d.atoms(), 36);
        for col in d.matrix().column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_pair_shares_direction_grid() {
        let c = 299_792_458.0;
        let spacing = c / (2.0 * 2.010e9);
        let (up, down) = dft_joint_pair(8, 16, spacing, c / 1.920e9, c / 2.110e9).unwrap();
        assert_eq!(up.link(), down.link());
        assert_eq!(up.dim(), 8);
        // Broadside column (sin theta = 0) is the all-constant column in both.
        let j0 = 8;
        for member in [&up, &down] {
            let col = member.matrix().column(j0);
            for z in col.iter() {
                assert!((z - Complex64::new(1.0 / 8f64.sqrt(), 0.0)).norm() < 1e-12);
            }
        }
        // Off-broadside columns differ because the bands see different d/lambda.
        assert!((up.matrix().column(1) - down.matrix().column(1)).norm() > 1e-3);
    }

    #[test]
    fn coherence_trivial_cases() {
        let eye = CMat::identity(3, 3);
        assert!(mutual_coherence(&eye).unwrap() < 1e-15);

        let mut two = CMat::zeros(3, 2);
        two[(0, 0)] = Complex64::new(1.0, 0.0);
        two[(0, 1)] = Complex64::new(0.5, 0.5);
        assert!((mutual_coherence(&two).unwrap() - 1.0).abs() < 1e-12);

        let mut zero_col = CMat::identity(3, 3);
        zero_col.column_mut(1).scale_mut(0.0);
        assert!(mutual_coherence(&zero_col).is_err());
    }

    #[test]
    fn coherence_invariant_to_scaling_and_permutation() {
        let x = unit_columns(6, 10, 3);
        let base = mutual_coherence(&x).unwrap();

        let mut scaled = x.clone();
        for (j, mut c) in scaled.column_iter_mut().enumerate() {
            let factor = Complex64::from_polar(0.3 + j as f64, 0.7 * j as f64);
            for z in c.iter_mut() {
                *z *= factor;
            }
        }
        assert!((mutual_coherence(&scaled).unwrap() - base).abs() < 1e-12);

        let mut permuted = CMat::zeros(6, 10);
        for j in 0..10 {
            permuted.set_column(j, &x.column((j * 3) % 10));
        }
        assert!((mutual_coherence(&permuted).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn welch_bound_values_and_errors() {
        assert_eq!(welch_bound(6, 5).unwrap(), 0.2);
        assert_eq!(welch_bound(2, 1).unwrap(), 1.0);
        assert_eq!(welch_bound(5, 4).unwrap(), 0.25);
        assert!(welch_bound(4, 4).is_err());
        assert!(welch_bound(4, 6).is_err());
        assert!(welch_bound(3, 0).is_err());
    }

    #[test]
    fn welch_bound_is_a_lower_bound_on_random_frames() {
        for seed in 0..30u64 {
            let t = 3 + (seed as usize % 4);
            let k = t + 1 + (seed as usize % 5);
            let x = unit_columns(t, k, 1000 + seed);
            let mu = mutual_coherence(&x).unwrap();
            let bound = welch_bound(k, t).unwrap();
            assert!(mu + 1e-12 >= bound, "K={k} T={t}: mu={mu} < bound={bound}");
        }
    }

    #[test]
    fn kronecker_coherence_identity() {
        for seed in 0..20u64 {
            let s = unit_columns(3, 5, 500 + seed);
            let d = unit_columns(6, 9, 700 + seed);
            let e = s.kronecker(&d);
            let mu_e = mutual_coherence(&e).unwrap();
            let expected = mutual_coherence(&s)
                .unwrap()
                .max(mutual_coherence(&d).unwrap());
            assert!((mu_e - expected).abs() <= 1e-10, "seed {seed}: {mu_e} vs {expected}");
        }
    }

    #[test]
    fn dictionary_rejects_oversized_column() {
        let mut m = CMat::identity(3, 3);
        m.column_mut(2).scale_mut(1.5);
        match Dictionary::new(m, "bad", DictionaryOrigin::Learned) {
            Err(Error::ColumnNorm { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected column-norm error, got {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join("dictchan-test-dict");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.dict");
        let d = dft_square(8).unwrap();
        save_dictionary(&d, &path).unwrap();
        let loaded = load_dictionary(&path).unwrap();
        assert_eq!(loaded.origin(), DictionaryOrigin::Dft);
        assert!((loaded.matrix() - d.matrix()).norm() < 1e-15);
    }

    #[test]
    fn load_rejects_truncated_and_norm_violating_files() {
        let dir = std::env::temp_dir().join("dictchan-test-dict");
        std::fs::create_dir_all(&dir).unwrap();

        let path = dir.join("truncated.dict");
        let d = dft_square(4).unwrap();
        save_dictionary(&d, &path).unwrap();
        let full = std::fs::read_to_string(&path).unwrap();
        let cut: String = full.lines().take(3).collect::<Vec<_>>().join("\n");
        std::fs::write(&path, cut).unwrap();
        assert!(matches!(load_dictionary(&path), Err(Error::Format { .. })));

        let path = dir.join("overnorm.dict");
        let mut text = String::from("DICT 1 2 2 learned\n1.0 1.5\n");
        text.push_str("1.0,0.0 0.0,0.0\n0.0,0.0 1.5,0.0\n");
        std::fs::write(&path, text).unwrap();
        match load_dictionary(&path) {
            Err(Error::ColumnNorm { index, norm }) => {
                assert_eq!(index, 1);
                assert!((norm - 1.5).abs() < 1e-12);
            }
            other => panic!("expected column-norm error, got {other:?}"),
        }
    }

    #[test]
    fn saved_file_precision_is_exact() {
        let dir = std::env::temp_dir().join("dictchan-test-dict");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("precision.dict");
        let mut m = CMat::zeros(2, 2);
        m[(0, 0)] = Complex64::new(1.0 / 3.0, -2.0 / 7.0);
        m[(1, 1)] = Complex64::new(0.987654321098765432, 0.123456789012345678);
        let d = Dictionary::new(m.clone(), "prec", DictionaryOrigin::Learned).unwrap();
        save_dictionary(&d, &path).unwrap();
        let loaded = load_dictionary(&path).unwrap();
        assert_eq!(loaded.matrix()[(0, 0)], m[(0, 0)]);
        assert_eq!(loaded.matrix()[(1, 1)], m[(1, 1)]);
    }
}
