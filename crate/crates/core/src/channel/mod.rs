//! Geometry-based stochastic channel synthesis for one cell.
//!
//! A cell is a fixed set of scattering clusters plus sector geometry. Every
//! channel draw places a user, picks the nearest fixed clusters and one
//! user-dependent cluster, spreads subpaths around each cluster direction,
//! and sums per-subpath array responses with circular Gaussian gains. Uplink
//! and downlink draws at the same location share subpath angles exactly and
//! differ only in gains and wavelength, which is the angular-reciprocity
//! premise the joint estimators rely on.

mod chset;

pub use chset::{
    load_channel_set, load_pair_set, save_channel_set, save_pair_set, ChannelSet, PairSet,
};

use std::f64::consts::{FRAC_PI_2, TAU};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CMat, CVec};
use crate::rng::complex_gaussian;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Physical spacing from the deployment rule `d = c / (2 f0)`.
pub fn half_wavelength_spacing(reference_hz: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * reference_hz)
}

pub fn wavelength(frequency_hz: f64) -> f64 {
    SPEED_OF_LIGHT / frequency_hz
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    Ula,
    Ura,
}

/// Antenna positions and gains, nominal or perturbed.
///
/// Positions are stored in units of the nominal spacing along each axis, so
/// a calibrated array has positions `0, 1, ..., n-1`. Perturbations move the
/// positions and scale the gains but the nominal spacing stays the
/// deployment-rule value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArrayGeometry {
    kind: ArrayKind,
    /// Vertical element count (the full count for a ULA).
    n1: usize,
    /// Horizontal element count (1 for a ULA).
    n2: usize,
    positions1: Vec<f64>,
    positions2: Vec<f64>,
    gains: Vec<f64>,
    spacing1_m: f64,
    spacing2_m: f64,
}

impl ArrayGeometry {
    pub fn ula(n: usize, spacing_m: f64) -> Result<Self> {
        if n == 0 || spacing_m <= 0.0 {
            return Err(Error::InvalidArgument(
                "ula: need n >= 1 and positive spacing".into(),
            ));
        }
        Ok(ArrayGeometry {
            kind: ArrayKind::Ula,
            n1: n,
            n2: 1,
            positions1: (0..n).map(|i| i as f64).collect(),
            positions2: vec![0.0],
            gains: vec![1.0; n],
            spacing1_m: spacing_m,
            spacing2_m: spacing_m,
        })
    }

    pub fn ura(n1: usize, n2: usize, spacing1_m: f64, spacing2_m: f64) -> Result<Self> {
        if n1 == 0 || n2 == 0 || spacing1_m <= 0.0 || spacing2_m <= 0.0 {
            return Err(Error::InvalidArgument(
                "ura: need n1, n2 >= 1 and positive spacings".into(),
            ));
        }
        Ok(ArrayGeometry {
            kind: ArrayKind::Ura,
            n1,
            n2,
            positions1: (0..n1).map(|i| i as f64).collect(),
            positions2: (0..n2).map(|i| i as f64).collect(),
            gains: vec![1.0; n1 * n2],
            spacing1_m,
            spacing2_m,
        })
    }

    pub fn kind(&self) -> ArrayKind {
        self.kind
    }

    /// Total element count.
    pub fn elements(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn positions(&self) -> (&[f64], &[f64]) {
        (&self.positions1, &self.positions2)
    }

    fn validate(&self) -> Result<()> {
        let ordered = |p: &[f64]| p.windows(2).all(|w| w[1] > w[0]);
        if !ordered(&self.positions1) || !ordered(&self.positions2) {
            return Err(Error::InvalidArgument(
                "element positions must be strictly increasing".into(),
            ));
        }
        if self.gains.iter().any(|g| *g <= 0.0) {
            return Err(Error::InvalidArgument("element gains must be positive".into()));
        }
        Ok(())
    }
}

/// Path direction seen from the base station.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SteeringAngles {
    /// Azimuth-only direction for planar (2D) channels.
    Planar { azimuth: f64 },
    /// Zenith/azimuth direction for 3D channels.
    Spatial { zenith: f64, azimuth: f64 },
}

/// Array response vector for one direction at one wavelength.
///
/// ULA: entry `n` is `g_n exp(j 2 pi (p_n d / lambda) sin(theta))`.
/// URA: Kronecker composition of the horizontal phase ramp
/// `v = 2 pi d2 sin(theta) cos(phi) / lambda` over the vertical ramp
/// `u = 2 pi d1 cos(theta) / lambda`, scaled by per-element gains.
pub fn array_response(
    geometry: &ArrayGeometry,
    angles: SteeringAngles,
    wavelength_m: f64,
) -> Result<CVec> {
    if wavelength_m <= 0.0 {
        return Err(Error::InvalidArgument("wavelength must be positive".into()));
    }
    let in_range = |a: f64| a.is_finite() && a.abs() <= TAU;
    match (geometry.kind, angles) {
        (ArrayKind::Ula, SteeringAngles::Planar { azimuth }) => {
            if !in_range(azimuth) {
                return Err(Error::InvalidArgument(format!("azimuth {azimuth} out of range")));
            }
            let phase_per_unit = TAU * geometry.spacing1_m / wavelength_m * azimuth.sin();
            Ok(CVec::from_fn(geometry.n1, |n, _| {
                Complex64::from_polar(geometry.gains[n], phase_per_unit * geometry.positions1[n])
            }))
        }
        (ArrayKind::Ura, SteeringAngles::Spatial { zenith, azimuth }) => {
            if !in_range(zenith) || !in_range(azimuth) {
                return Err(Error::InvalidArgument(format!(
                    "angles ({zenith}, {azimuth}) out of range"
                )));
            }
            let u = TAU * geometry.spacing1_m / wavelength_m * zenith.cos();
            let v = TAU * geometry.spacing2_m / wavelength_m * zenith.sin() * azimuth.cos();
            let (n1, n2) = (geometry.n1, geometry.n2);
            Ok(CVec::from_fn(n1 * n2, |idx, _| {
                let i1 = idx % n1;
                let i2 = idx / n1;
                let phase = geometry.positions1[i1] * u + geometry.positions2[i2] * v;
                Complex64::from_polar(geometry.gains[idx], phase)
            }))
        }
        _ => Err(Error::InvalidArgument(
            "steering angles do not match the array kind".into(),
        )),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterKind {
    Fixed,
    UserDependent,
}

/// One scattering cluster: a location plus the angular statistics of its
/// subpaths.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScatteringCluster {
    pub x_m: f64,
    pub y_m: f64,
    pub height_m: f64,
    pub azimuth_spread_rad: f64,
    pub zenith_spread_rad: f64,
    pub subpath_count: usize,
    pub kind: ClusterKind,
}

/// The frozen scattering geometry of one cell. Immutable after creation:
/// learning and estimation must see the same environment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellEnvironment {
    fixed_clusters: Vec<ScatteringCluster>,
    cell_radius_m: f64,
    bs_height_m: f64,
    ue_height_m: f64,
    azimuth_range: (f64, f64),
    min_ue_distance_m: f64,
    three_d: bool,
    nearest_fixed_count: usize,
    user_cluster_radius_m: f64,
    cluster_power_decay: f64,
    seed: u64,
}

impl CellEnvironment {
    pub fn fixed_clusters(&self) -> &[ScatteringCluster] {
        &self.fixed_clusters
    }

    pub fn is_three_d(&self) -> bool {
        self.three_d
    }

    pub fn azimuth_range(&self) -> (f64, f64) {
        self.azimuth_range
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Knobs for environment generation, with defaults matching the microwave
/// macro-cell scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentConfig {
    pub fixed_cluster_count: usize,
    pub cell_radius_m: f64,
    pub azimuth_range: (f64, f64),
    pub bs_height_m: f64,
    pub ue_height_m: f64,
    pub cluster_height_range_m: (f64, f64),
    pub min_ue_distance_m: f64,
    pub three_d: bool,
    pub subpath_count: usize,
    pub azimuth_spread_deg: f64,
    pub zenith_spread_deg: f64,
    /// Fixed clusters contributing to each channel draw.
    pub nearest_fixed_count: usize,
    pub user_cluster_radius_m: f64,
    /// Exponential power decay across a draw's clusters, nearest first.
    pub cluster_power_decay: f64,
    pub seed: u64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig {
            fixed_cluster_count: 21,
            cell_radius_m: 900.0,
            azimuth_range: (-FRAC_PI_2, FRAC_PI_2),
            bs_height_m: 10.0,
            ue_height_m: 1.5,
            cluster_height_range_m: (0.5, 30.0),
            min_ue_distance_m: 300.0,
            three_d: false,
            subpath_count: 20,
            azimuth_spread_deg: 5.0,
            zenith_spread_deg: 2.0,
            nearest_fixed_count: 3,
            user_cluster_radius_m: 50.0,
            cluster_power_decay: 1.0,
            seed: 0,
        }
    }
}

impl EnvironmentConfig {
    /// Millimeter-wave street-canyon style defaults: small cell, one fixed
    /// cluster per draw, 3D angles.
    pub fn mmwave() -> Self {
        EnvironmentConfig {
            fixed_cluster_count: 21,
            cell_radius_m: 200.0,
            azimuth_range: (0.0, std::f64::consts::PI),
            min_ue_distance_m: 60.0,
            three_d: true,
            nearest_fixed_count: 1,
            ..EnvironmentConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.fixed_cluster_count == 0 {
            return Err(Error::Config("fixed_cluster_count must be >= 1".into()));
        }
        if !(self.cell_radius_m > 0.0) || self.min_ue_distance_m >= self.cell_radius_m {
            return Err(Error::Config(
                "need 0 <= min_ue_distance < cell_radius".into(),
            ));
        }
        if self.azimuth_range.0 >= self.azimuth_range.1 {
            return Err(Error::Config("empty azimuth range".into()));
        }
        if self.subpath_count == 0 {
            return Err(Error::Config("subpath_count must be >= 1".into()));
        }
        if self.azimuth_spread_deg <= 0.0 || self.zenith_spread_deg <= 0.0 {
            return Err(Error::Config("angular spreads must be positive".into()));
        }
        if self.nearest_fixed_count == 0 || self.nearest_fixed_count > self.fixed_cluster_count {
            return Err(Error::Config(
                "nearest_fixed_count must be in 1..=fixed_cluster_count".into(),
            ));
        }
        if self.cluster_height_range_m.0 > self.cluster_height_range_m.1 {
            return Err(Error::Config("invalid cluster height range".into()));
        }
        Ok(())
    }
}

/// Draws the fixed clusters of a cell uniformly over the sector.
pub fn generate_cell_environment(
    config: &EnvironmentConfig,
    rng: &mut impl Rng,
) -> Result<CellEnvironment> {
    config.validate()?;
    let az_spread = config.azimuth_spread_deg.to_radians();
    let zen_spread = config.zenith_spread_deg.to_radians();
    let fixed_clusters = (0..config.fixed_cluster_count)
        .map(|_| {
            let radius = config.cell_radius_m * rng.gen::<f64>().sqrt();
            let azimuth = rng.gen_range(config.azimuth_range.0..config.azimuth_range.1);
            let height = if config.three_d {
                rng.gen_range(config.cluster_height_range_m.0..=config.cluster_height_range_m.1)
            } else {
                0.0
            };
            ScatteringCluster {
                x_m: radius * azimuth.cos(),
                y_m: radius * azimuth.sin(),
                height_m: height,
                azimuth_spread_rad: az_spread,
                zenith_spread_rad: zen_spread,
                subpath_count: config.subpath_count,
                kind: ClusterKind::Fixed,
            }
        })
        .collect();
    Ok(CellEnvironment {
        fixed_clusters,
        cell_radius_m: config.cell_radius_m,
        bs_height_m: config.bs_height_m,
        ue_height_m: config.ue_height_m,
        azimuth_range: config.azimuth_range,
        min_ue_distance_m: config.min_ue_distance_m,
        three_d: config.three_d,
        nearest_fixed_count: config.nearest_fixed_count,
        user_cluster_radius_m: config.user_cluster_radius_m,
        cluster_power_decay: config.cluster_power_decay,
        seed: config.seed,
    })
}

/// Which cluster a truth path came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterRef {
    Fixed(usize),
    UserDependent,
}

/// Ground-truth subpath: direction plus one complex gain per UE antenna.
#[derive(Clone, Debug)]
pub struct TruthPath {
    pub cluster: ClusterRef,
    pub angles: SteeringAngles,
    pub gains: Vec<Complex64>,
}

/// One synthesized channel with its generation metadata.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    /// `N x N_R`; a single-antenna UE gives one column.
    pub matrix: CMat,
    pub carrier_hz: f64,
    pub ue_position: (f64, f64, f64),
    pub paths: Vec<TruthPath>,
}

impl ChannelRealization {
    /// The channel vector of a single-antenna UE.
    pub fn vector(&self) -> CVec {
        CVec::from_column_slice(self.matrix.column(0).as_slice())
    }

    /// Rebuilds the channel from stored angles and gains; matches `matrix`
    /// to floating-point accuracy by construction.
    pub fn resynthesize(&self, geometry: &ArrayGeometry) -> Result<CMat> {
        let lambda = wavelength(self.carrier_hz);
        let n = geometry.elements();
        let n_r = self.matrix.ncols();
        let mut out = CMat::zeros(n, n_r);
        for path in &self.paths {
            let a = array_response(geometry, path.angles, lambda)?;
            for (col, gain) in path.gains.iter().enumerate() {
                for row in 0..n {
                    out[(row, col)] += a[row] * gain;
                }
            }
        }
        Ok(out)
    }

    /// Sorted multiset of path angles, for reciprocity checks.
    pub fn angle_set(&self) -> Vec<(f64, f64)> {
        let mut angles: Vec<(f64, f64)> = self
            .paths
            .iter()
            .map(|p| match p.angles {
                SteeringAngles::Planar { azimuth } => (azimuth, 0.0),
                SteeringAngles::Spatial { zenith, azimuth } => (zenith, azimuth),
            })
            .collect();
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        angles
    }
}

/// Angle-reciprocal uplink/downlink draw: same location and subpath angles,
/// independent gains, wavelengths per band.
#[derive(Clone, Debug)]
pub struct UplinkDownlinkPair {
    pub uplink: ChannelRealization,
    pub downlink: ChannelRealization,
}

/// Gains-free skeleton of a draw: everything both members of a pair share.
struct PathSkeleton {
    ue_position: (f64, f64, f64),
    /// (cluster, direction, gain variance) per subpath.
    paths: Vec<(ClusterRef, SteeringAngles, f64)>,
}

fn check_compatible(env: &CellEnvironment, geometry: &ArrayGeometry) -> Result<()> {
    match (env.three_d, geometry.kind) {
        (false, ArrayKind::Ula) | (true, ArrayKind::Ura) => Ok(()),
        _ => Err(Error::InvalidArgument(
            "2D environments pair with ULA geometries, 3D with URA".into(),
        )),
    }
}

fn draw_skeleton(
    env: &CellEnvironment,
    azimuth_range: (f64, f64),
    rng: &mut impl Rng,
) -> PathSkeleton {
    // UE uniform over the annular sector.
    let r_min_sq = env.min_ue_distance_m * env.min_ue_distance_m;
    let r_max_sq = env.cell_radius_m * env.cell_radius_m;
    let radius = (r_min_sq + rng.gen::<f64>() * (r_max_sq - r_min_sq)).sqrt();
    let azimuth = rng.gen_range(azimuth_range.0..azimuth_range.1);
    let ue = (
        radius * azimuth.cos(),
        radius * azimuth.sin(),
        env.ue_height_m,
    );

    // Nearest fixed clusters by distance from the UE, ties by lower id.
    let mut order: Vec<(f64, usize)> = env
        .fixed_clusters
        .iter()
        .enumerate()
        .map(|(id, c)| {
            let dx = c.x_m - ue.0;
            let dy = c.y_m - ue.1;
            let dz = if env.three_d { c.height_m - ue.2 } else { 0.0 };
            ((dx * dx + dy * dy + dz * dz).sqrt(), id)
        })
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // One user-dependent cluster near the UE.
    let user_cluster = {
        let rho = env.user_cluster_radius_m * rng.gen::<f64>().sqrt();
        let ang = rng.gen_range(0.0..TAU);
        let template = &env.fixed_clusters[0];
        ScatteringCluster {
            x_m: ue.0 + rho * ang.cos(),
            y_m: ue.1 + rho * ang.sin(),
            height_m: if env.three_d {
                0.5 * (template.height_m + env.ue_height_m)
            } else {
                0.0
            },
            azimuth_spread_rad: template.azimuth_spread_rad,
            zenith_spread_rad: template.zenith_spread_rad,
            subpath_count: template.subpath_count,
            kind: ClusterKind::UserDependent,
        }
    };

    // Draw-order: selected clusters sorted by distance, nearest first, with
    // exponentially decaying powers normalized to one.
    let mut selected: Vec<(f64, ClusterRef, &ScatteringCluster)> = order
        .iter()
        .take(env.nearest_fixed_count)
        .map(|&(dist, id)| (dist, ClusterRef::Fixed(id), &env.fixed_clusters[id]))
        .collect();
    let user_dist = {
        let dx = user_cluster.x_m - ue.0;
        let dy = user_cluster.y_m - ue.1;
        (dx * dx + dy * dy).sqrt()
    };
    selected.push((user_dist, ClusterRef::UserDependent, &user_cluster));
    selected.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let raw_powers: Vec<f64> = (0..selected.len())
        .map(|rank| (-env.cluster_power_decay * rank as f64).exp())
        .collect();
    let power_sum: f64 = raw_powers.iter().sum();

    let mut paths = Vec::new();
    for ((_, cluster_ref, cluster), raw_power) in selected.iter().zip(&raw_powers) {
        let power = raw_power / power_sum;
        let center_azimuth = cluster.y_m.atan2(cluster.x_m);
        let center_zenith = if env.three_d {
            let planar = (cluster.x_m * cluster.x_m + cluster.y_m * cluster.y_m).sqrt();
            let dz = cluster.height_m - env.bs_height_m;
            FRAC_PI_2 - (dz / planar.max(1e-9)).atan()
        } else {
            0.0
        };
        let gain_variance = power / cluster.subpath_count as f64;
        for _ in 0..cluster.subpath_count {
            let az = center_azimuth + gaussian(rng) * cluster.azimuth_spread_rad;
            let angles = if env.three_d {
                let zen = center_zenith + gaussian(rng) * cluster.zenith_spread_rad;
                SteeringAngles::Spatial {
                    zenith: zen.clamp(1e-6, std::f64::consts::PI - 1e-6),
                    azimuth: az,
                }
            } else {
                SteeringAngles::Planar { azimuth: az }
            };
            paths.push((*cluster_ref, angles, gain_variance));
        }
    }

    PathSkeleton {
        ue_position: ue,
        paths,
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

fn synthesize(
    skeleton: &PathSkeleton,
    geometry: &ArrayGeometry,
    frequency_hz: f64,
    ue_antennas: usize,
    rng: &mut impl Rng,
) -> Result<ChannelRealization> {
    let lambda = wavelength(frequency_hz);
    let n = geometry.elements();
    let mut matrix = CMat::zeros(n, ue_antennas);
    let mut paths = Vec::with_capacity(skeleton.paths.len());
    for &(cluster, angles, variance) in &skeleton.paths {
        let response = array_response(geometry, angles, lambda)?;
        let scale = variance.sqrt();
        let gains: Vec<Complex64> = (0..ue_antennas)
            .map(|_| complex_gaussian(rng) * scale)
            .collect();
        for (col, gain) in gains.iter().enumerate() {
            for row in 0..n {
                matrix[(row, col)] += response[row] * gain;
            }
        }
        paths.push(TruthPath {
            cluster,
            angles,
            gains,
        });
    }
    Ok(ChannelRealization {
        matrix,
        carrier_hz: frequency_hz,
        ue_position: skeleton.ue_position,
        paths,
    })
}

/// Draws one user channel at `frequency_hz`.
///
/// The UE lands uniformly in the sector at least `min_ue_distance` from the
/// BS; the channel sums subpaths from the configured number of nearest fixed
/// clusters plus one user-dependent cluster. All UE antennas see the same
/// angles with independent gains.
pub fn draw_user_channel(
    env: &CellEnvironment,
    geometry: &ArrayGeometry,
    frequency_hz: f64,
    ue_antennas: usize,
    rng: &mut impl Rng,
) -> Result<ChannelRealization> {
    draw_user_channel_in_sector(env, geometry, frequency_hz, ue_antennas, env.azimuth_range, rng)
}

/// [`draw_user_channel`] with the UE azimuth confined to a sub-sector; used
/// for angle-separated user placement in the uplink experiments.
pub fn draw_user_channel_in_sector(
    env: &CellEnvironment,
    geometry: &ArrayGeometry,
    frequency_hz: f64,
    ue_antennas: usize,
    azimuth_range: (f64, f64),
    rng: &mut impl Rng,
) -> Result<ChannelRealization> {
    check_compatible(env, geometry)?;
    if ue_antennas == 0 {
        return Err(Error::InvalidArgument("ue_antennas must be >= 1".into()));
    }
    if frequency_hz <= 0.0 {
        return Err(Error::InvalidArgument("frequency must be positive".into()));
    }
    if azimuth_range.0 < env.azimuth_range.0
        || azimuth_range.1 > env.azimuth_range.1
        || azimuth_range.0 >= azimuth_range.1
    {
        return Err(Error::InvalidArgument(
            "user sector must lie inside the cell azimuth range".into(),
        ));
    }
    let skeleton = draw_skeleton(env, azimuth_range, rng);
    synthesize(&skeleton, geometry, frequency_hz, ue_antennas, rng)
}

/// Draws an angle-reciprocal uplink/downlink pair at one UE location.
pub fn draw_ul_dl_pair(
    env: &CellEnvironment,
    geometry: &ArrayGeometry,
    uplink_hz: f64,
    downlink_hz: f64,
    rng: &mut impl Rng,
) -> Result<UplinkDownlinkPair> {
    check_compatible(env, geometry)?;
    if uplink_hz <= 0.0 || downlink_hz <= 0.0 {
        return Err(Error::InvalidArgument("frequencies must be positive".into()));
    }
    let skeleton = draw_skeleton(env, env.azimuth_range, rng);
    let uplink = synthesize(&skeleton, geometry, uplink_hz, 1, rng)?;
    let downlink = synthesize(&skeleton, geometry, downlink_hz, 1, rng)?;
    Ok(UplinkDownlinkPair { uplink, downlink })
}

/// Calibration-error model: a random subset of gains becomes `1 + e` and a
/// random subset of spacings is scaled by `1 + v`, both clamped; the result
/// is drawn once and then frozen for the whole simulation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct UncertaintyConfig {
    pub perturbed_gain_count: usize,
    pub perturbed_spacing_count: usize,
    pub std_dev: f64,
    /// Maximum absolute deviation: perturbations clamp to `1 +- clamp`.
    pub clamp: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            perturbed_gain_count: 20,
            perturbed_spacing_count: 20,
            std_dev: 0.1,
            clamp: 0.2,
        }
    }
}

/// Clamps a multiplicative perturbation `1 + e` into `[1 - clamp, 1 + clamp]`.
pub fn clamp_perturbation(e: f64, clamp: f64) -> f64 {
    (1.0 + e).clamp(1.0 - clamp, 1.0 + clamp)
}

fn choose_distinct(count: usize, from: usize, rng: &mut impl Rng) -> Vec<usize> {
    // Partial Fisher-Yates.
    let mut indices: Vec<usize> = (0..from).collect();
    for i in 0..count {
        let j = rng.gen_range(i..from);
        indices.swap(i, j);
    }
    indices.truncate(count);
    indices
}

pub fn apply_array_uncertainty(
    geometry: &ArrayGeometry,
    config: &UncertaintyConfig,
    rng: &mut impl Rng,
) -> Result<ArrayGeometry> {
    let n = geometry.elements();
    let spacing_slots = (geometry.n1 - 1) + if geometry.kind == ArrayKind::Ura {
        geometry.n2 - 1
    } else {
        0
    };
    if config.perturbed_gain_count > n {
        return Err(Error::InvalidArgument(format!(
            "cannot perturb {} gains on {n} elements",
            config.perturbed_gain_count
        )));
    }
    if config.perturbed_spacing_count > spacing_slots {
        return Err(Error::InvalidArgument(format!(
            "cannot perturb {} spacings on {spacing_slots} gaps",
            config.perturbed_spacing_count
        )));
    }
    let mut out = geometry.clone();
    for idx in choose_distinct(config.perturbed_gain_count, n, rng) {
        out.gains[idx] = clamp_perturbation(gaussian(rng) * config.std_dev, config.clamp);
    }

    // Gap widths along both axes, a subset rescaled, positions re-accumulated.
    let mut gaps1: Vec<f64> = out.positions1.windows(2).map(|w| w[1] - w[0]).collect();
    let mut gaps2: Vec<f64> = out.positions2.windows(2).map(|w| w[1] - w[0]).collect();
    for slot in choose_distinct(config.perturbed_spacing_count, spacing_slots, rng) {
        let factor = clamp_perturbation(gaussian(rng) * config.std_dev, config.clamp);
        if slot < gaps1.len() {
            gaps1[slot] *= factor;
        } else {
            gaps2[slot - gaps1.len()] *= factor;
        }
    }
    let accumulate = |gaps: &[f64]| {
        let mut pos = vec![0.0];
        for g in gaps {
            pos.push(pos.last().unwrap() + g);
        }
        pos
    };
    out.positions1 = accumulate(&gaps1);
    out.positions2 = accumulate(&gaps2);
    out.validate()?;
    Ok(out)
}
