//! Scenario-driven experiment runner.
//!
//! Each family reproduces one experiment protocol end to end: build the cell
//! (environment + array, optionally perturbed), assemble or learn the
//! dictionaries under comparison, then run seeded Monte-Carlo trials and
//! aggregate NMSE (or support-size CDFs) into a result table. Every random
//! draw comes from a substream derived from the master seed and a composed
//! task index, so a rerun with the same config and seed is byte-identical.

mod config;
mod result;

pub use config::{
    load_cell_file, save_cell_file, CellFile, ChannelsConfig, DictionariesConfig,
    EstimationConfig, ExecutionChoice, ExperimentFamily, GeometryConfig, ScenarioConfig,
    SweepConfig,
};
pub use result::{
    emit_csv, manifest_now, mean_and_stderr, parse_csv, render_csv, write_manifest,
    ExperimentResult, ResultRow, RunManifest,
};

use crate::channel::{
    draw_ul_dl_pair, draw_user_channel, draw_user_channel_in_sector, generate_cell_environment,
    apply_array_uncertainty, ArrayGeometry, ArrayKind, CellEnvironment,
};
use crate::dictionary::{
    dft_joint_pair, dft_overcomplete, dft_overcomplete_ura, dft_square, Dictionary,
};
use crate::error::{Error, Result};
use crate::estimator::{
    downlink_cs, downlink_ls, joint_estimate, nmse, simulate_downlink, simulate_uplink,
    uplink_ls, uplink_sr, CsMode,
};
use crate::learning::{
    corrupt_training_set, learn_dictionary, learn_joint, sparse_code_dataset, DictInit,
    LearnConfig, PairedTrainingSet, TrainingSet,
};
use crate::numerics::{CMat, CVec};
use crate::parallel::{map_indexed, Execution};
use crate::pilots::{
    design_low_coherence, downlink_pilots, kron_sensing_matrix, orthogonal_pilots, random_pilots,
    PilotMatrix,
};
use crate::rng::substream;
use crate::solver::{operator_norm_sq, SolverOptions};

// Substream name spaces: high byte picks the purpose, low bits the task.
const STREAM_ENV: u64 = 1 << 56;
const STREAM_GEO: u64 = 2 << 56;
const STREAM_TRAIN: u64 = 3 << 56;
const STREAM_TEST: u64 = 4 << 56;
const STREAM_PILOT: u64 = 5 << 56;
const STREAM_TRIAL: u64 = 6 << 56;
const STREAM_CORRUPT: u64 = 7 << 56;

fn trial_stream(point: usize, trial: usize) -> u64 {
    STREAM_TRIAL | ((point as u64) << 28) | trial as u64
}

/// Frozen per-run assets: the cell and the (possibly perturbed) array.
#[derive(Clone, Debug)]
pub struct Workbench {
    pub env: CellEnvironment,
    pub geometry: ArrayGeometry,
}

pub fn build_workbench(config: &ScenarioConfig) -> Result<Workbench> {
    config.validate()?;
    let mut cell = config.cell.clone();
    cell.seed = config.seed;
    let env = generate_cell_environment(&cell, &mut substream(config.seed, STREAM_ENV))?;
    let nominal = config.geometry.build()?;
    let geometry = match &config.geometry.uncertainty {
        Some(u) => apply_array_uncertainty(&nominal, u, &mut substream(config.seed, STREAM_GEO))?,
        None => nominal,
    };
    Ok(Workbench { env, geometry })
}

fn downlink_hz(config: &ScenarioConfig) -> f64 {
    config.channels.downlink_mhz * 1e6
}

fn uplink_hz(config: &ScenarioConfig) -> f64 {
    config.channels.uplink_mhz * 1e6
}

fn snr_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Draws single-antenna training channels at the given carrier.
pub fn training_channels(
    bench: &Workbench,
    config: &ScenarioConfig,
    count: usize,
    frequency_hz: f64,
) -> Result<Vec<CVec>> {
    let mut rng = substream(config.seed, STREAM_TRAIN);
    (0..count)
        .map(|_| {
            draw_user_channel(&bench.env, &bench.geometry, frequency_hz, 1, &mut rng)
                .map(|c| c.vector())
        })
        .collect()
}

fn learn_config(config: &ScenarioConfig) -> LearnConfig {
    let mut lc = LearnConfig::new(
        config.dictionaries.atoms,
        config.dictionaries.mismatch_tolerance,
    );
    lc.outer_iterations = config.dictionaries.learn_iterations;
    lc.seed = config.seed;
    lc.execution = config.execution.to_execution();
    lc
}

fn predefined_dictionary(family: &str, config: &ScenarioConfig) -> Result<Dictionary> {
    let n = config.geometry.elements();
    match (family, config.geometry.kind) {
        ("dft", _) => dft_square(n),
        ("odft", ArrayKind::Ula) => dft_overcomplete(n, config.dictionaries.atoms),
        ("odft", ArrayKind::Ura) => dft_overcomplete_ura(
            config.geometry.n1,
            config.dictionaries.atoms1,
            config.geometry.n2,
            config.dictionaries.atoms2,
        ),
        _ => Err(Error::Config(format!("no predefined dictionary `{family}`"))),
    }
}

/// Builds the configured dictionary list; `learned` entries are trained on
/// downlink channels drawn from the workbench.
pub fn assemble_dictionaries(
    bench: &Workbench,
    config: &ScenarioConfig,
) -> Result<Vec<Dictionary>> {
    let mut out = Vec::new();
    for family in &config.dictionaries.families {
        let dict = match family.as_str() {
            "learned" => {
                let raw = training_channels(
                    bench,
                    config,
                    config.dictionaries.training_samples,
                    downlink_hz(config),
                )?;
                let training = TrainingSet::from_vectors(raw)?;
                learn_dictionary(&training, &learn_config(config))?.dictionary
            }
            other => predefined_dictionary(other, config)?,
        };
        out.push(dict);
    }
    Ok(out)
}

fn method_label(prefix: &str, family: &str) -> String {
    format!("{prefix}-{family}")
}

/// Runs the configured family.
pub fn run_experiment(config: &ScenarioConfig) -> Result<ExperimentResult> {
    match config.experiment {
        ExperimentFamily::SparsityCdf => run_sparsity_cdf(config),
        ExperimentFamily::DownlinkSweep => run_downlink_sweep(config),
        ExperimentFamily::UplinkSweep => run_uplink_sweep(config),
        ExperimentFamily::JointSweep => run_joint_sweep(config),
        ExperimentFamily::NoisyLearningSweep => run_noisy_learning_sweep(config),
    }
}

fn new_result(config: &ScenarioConfig, rows: Vec<ResultRow>) -> Result<ExperimentResult> {
    Ok(ExperimentResult {
        rows,
        manifest: manifest_now(config.experiment.to_string(), config.seed, &config.to_toml()?),
    })
}

/// Support-size CDF of unit-normalized test channels coded against each
/// dictionary at the mismatch tolerance.
pub fn run_sparsity_cdf(config: &ScenarioConfig) -> Result<ExperimentResult> {
    let bench = build_workbench(config)?;
    let dictionaries = assemble_dictionaries(&bench, config)?;
    run_sparsity_cdf_with(&bench, &dictionaries, config)
}

pub fn run_sparsity_cdf_with(
    bench: &Workbench,
    dictionaries: &[Dictionary],
    config: &ScenarioConfig,
) -> Result<ExperimentResult> {
    let mut rng = substream(config.seed, STREAM_TEST);
    let count = config.estimation.test_channels;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let mut h = draw_user_channel(&bench.env, &bench.geometry, downlink_hz(config), 1, &mut rng)?
            .vector();
        let norm = h.norm();
        h.unscale_mut(norm);
        samples.push(h);
    }
    let eta = config.dictionaries.mismatch_tolerance;
    let execution = config.execution.to_execution();
    let mut rows = Vec::new();
    for (dict, family) in dictionaries.iter().zip(&config.dictionaries.families) {
        let codes = sparse_code_dataset(dict, &samples, eta, execution);
        let sizes: Vec<usize> = codes.iter().map(|c| c.support.len()).collect();
        let max_l0 = sizes.iter().copied().max().unwrap_or(0);
        let method = method_label("l0cdf", family);
        for v in 0..=max_l0 {
            let fraction =
                sizes.iter().filter(|s| **s <= v).count() as f64 / count.max(1) as f64;
            rows.push(ResultRow {
                sweep: v as f64,
                method: method.clone(),
                mean_nmse: fraction,
                stderr: (fraction * (1.0 - fraction) / count.max(1) as f64).sqrt(),
                trials: count,
            });
        }
    }
    new_result(config, rows)
}

/// Downlink NMSE versus the pilot budget `T_d`: CS per dictionary plus the
/// full-budget LS reference.
pub fn run_downlink_sweep(config: &ScenarioConfig) -> Result<ExperimentResult> {
    let bench = build_workbench(config)?;
    let dictionaries = assemble_dictionaries(&bench, config)?;
    run_downlink_sweep_with(&bench, &dictionaries, config)
}

pub fn run_downlink_sweep_with(
    bench: &Workbench,
    dictionaries: &[Dictionary],
    config: &ScenarioConfig,
) -> Result<ExperimentResult> {
    let n = config.geometry.elements();
    let n_r = config.channels.ue_antennas;
    let rho = snr_linear(config.estimation.snr_db);
    let mode = match config.estimation.mode.as_str() {
        "mmv" => CsMode::Mmv,
        _ => CsMode::Smv,
    };
    let execution = config.execution.to_execution();
    let freq = downlink_hz(config);

    let mut rows = Vec::new();
    for (point, td_value) in config.sweep.grid.iter().enumerate() {
        let t_d = *td_value as usize;
        if t_d == 0 {
            return Err(Error::Config("T_d grid values must be >= 1".into()));
        }
        // Per trial: one channel, one pilot block + noise per estimator.
        let per_trial = map_indexed(config.trials, execution, |trial| -> Result<Vec<f64>> {
            let mut rng = substream(config.seed, trial_stream(point, trial));
            let truth =
                draw_user_channel(&bench.env, &bench.geometry, freq, n_r, &mut rng)?.matrix;
            let mut nmses = Vec::with_capacity(dictionaries.len() + 1);
            let pilots = downlink_pilots(t_d, n, rho, &mut rng)?;
            let obs = simulate_downlink(&truth, &pilots, true, &mut rng)?;
            let dim = t_d * n_r;
            let opts = SolverOptions::with_epsilon(SolverOptions::epsilon_for_noise(dim, 1.0));
            for dict in dictionaries {
                let report = downlink_cs(&obs, dict, &opts, mode)?;
                nmses.push(nmse(&truth, &report.estimates[0])?);
            }
            if config.estimation.include_ls {
                let pilots = downlink_pilots(n, n, rho, &mut rng)?;
                let obs = simulate_downlink(&truth, &pilots, true, &mut rng)?;
                let report = downlink_ls(&obs)?;
                nmses.push(nmse(&truth, &report.estimates[0])?);
            }
            Ok(nmses)
        });
        let collected: Vec<Vec<f64>> = per_trial.into_iter().collect::<Result<_>>()?;
        let mut labels: Vec<String> = config
            .dictionaries
            .families
            .iter()
            .map(|f| method_label("cs", f))
            .collect();
        if config.estimation.include_ls {
            labels.push("ls-ref".into());
        }
        for (mi, label) in labels.iter().enumerate() {
            let values: Vec<f64> = collected.iter().map(|t| t[mi]).collect();
            let (mean, stderr) = mean_and_stderr(&values);
            rows.push(ResultRow {
                sweep: *td_value,
                method: label.clone(),
                mean_nmse: mean,
                stderr,
                trials: config.trials,
            });
        }
    }
    new_result(config, rows)
}

/// Uplink NMSE versus SNR: LS with orthogonal pilots against sparse recovery
/// per dictionary under the configured pilot kinds.
pub fn run_uplink_sweep(config: &ScenarioConfig) -> Result<ExperimentResult> {
    let bench = build_workbench(config)?;
    let dictionaries = assemble_dictionaries(&bench, config)?;
    run_uplink_sweep_with(&bench, &dictionaries, config)
}

struct UplinkMethod {
    label: String,
    dict_index: Option<usize>,
    pilots: PilotMatrix,
    /// Shared power-iteration bound for the lifted operator.
    op_norm_sq: Option<f64>,
}

pub fn run_uplink_sweep_with(
    bench: &Workbench,
    dictionaries: &[Dictionary],
    config: &ScenarioConfig,
) -> Result<ExperimentResult> {
    let n = config.geometry.elements();
    let users = config.estimation.users;
    let t_u = config.estimation.tu;
    let execution = config.execution.to_execution();
    let freq = uplink_hz(config);

    let mut methods: Vec<UplinkMethod> = Vec::new();
    if config.estimation.include_ls {
        methods.push(UplinkMethod {
            label: "ls-op".into(),
            dict_index: None,
            pilots: orthogonal_pilots(users, users)?,
            op_norm_sq: None,
        });
    }
    for (di, family) in config.dictionaries.families.iter().enumerate() {
        for pilot_kind in &config.estimation.pilots {
            let pilots = match pilot_kind.as_str() {
                "orthogonal" => orthogonal_pilots(users, t_u.max(users))?,
                "random" => random_pilots(users, t_u, &mut substream(config.seed, STREAM_PILOT))?,
                _ => design_low_coherence(
                    users,
                    t_u,
                    20.0,
                    0.9,
                    200,
                    &mut substream(config.seed, STREAM_PILOT),
                )?,
            };
            let lifted = kron_sensing_matrix(&pilots, &dictionaries[di]);
            methods.push(UplinkMethod {
                label: format!("sr-{family}-{pilot_kind}"),
                dict_index: Some(di),
                pilots,
                op_norm_sq: Some(operator_norm_sq(&lifted)),
            });
        }
    }

    let slice = |k: usize| -> (f64, f64) {
        let (lo, hi) = bench.env.azimuth_range();
        let width = (hi - lo) / users as f64;
        (lo + k as f64 * width, lo + (k + 1) as f64 * width)
    };

    let mut rows = Vec::new();
    for (point, snr_db) in config.sweep.grid.iter().enumerate() {
        let rho = snr_linear(*snr_db);
        let per_trial = map_indexed(config.trials, execution, |trial| -> Result<Vec<f64>> {
            let mut rng = substream(config.seed, trial_stream(point, trial));
            let mut channels = Vec::with_capacity(users);
            for k in 0..users {
                let sector = if config.estimation.separated_users {
                    slice(k)
                } else {
                    bench.env.azimuth_range()
                };
                channels.push(
                    draw_user_channel_in_sector(
                        &bench.env,
                        &bench.geometry,
                        freq,
                        1,
                        sector,
                        &mut rng,
                    )?
                    .vector(),
                );
            }
            let truths: Vec<CMat> = channels
                .iter()
                .map(|c| CMat::from_column_slice(n, 1, c.as_slice()))
                .collect();
            let mut nmses = Vec::with_capacity(methods.len());
            for m in &methods {
                let pilots = m.pilots.clone().with_snr(rho);
                let obs = simulate_uplink(&channels, &pilots, true, &mut rng)?;
                let report = match m.dict_index {
                    None => uplink_ls(&obs)?,
                    Some(di) => {
                        let dim = n * pilots.symbols();
                        let mut opts = SolverOptions::with_epsilon(
                            SolverOptions::epsilon_for_noise(dim, 1.0),
                        );
                        opts.operator_norm_sq = m.op_norm_sq;
                        uplink_sr(&obs, &dictionaries[di], &opts)?
                    }
                };
                let per_user = report.nmse_against(&truths)?;
                nmses.push(per_user.iter().sum::<f64>() / users as f64);
            }
            Ok(nmses)
        });
        let collected: Vec<Vec<f64>> = per_trial.into_iter().collect::<Result<_>>()?;
        for (mi, m) in methods.iter().enumerate() {
            let values: Vec<f64> = collected.iter().map(|t| t[mi]).collect();
            let (mean, stderr) = mean_and_stderr(&values);
            rows.push(ResultRow {
                sweep: *snr_db,
                method: m.label.clone(),
                mean_nmse: mean,
                stderr,
                trials: config.trials,
            });
        }
    }
    new_result(config, rows)
}

/// Dictionaries for the joint family: a jointly learned pair, an
/// independently learned downlink dictionary, the frequency-matched joint
/// ODFT pair, plus plain ODFT.
pub struct JointAssets {
    pub learned_up: Dictionary,
    pub learned_down: Dictionary,
    pub independent_down: Dictionary,
    pub jodft_up: Dictionary,
    pub jodft_down: Dictionary,
    pub odft: Dictionary,
}

pub fn assemble_joint_assets(bench: &Workbench, config: &ScenarioConfig) -> Result<JointAssets> {
    let n = config.geometry.elements();
    let m = config.dictionaries.atoms;
    let f_up = uplink_hz(config);
    let f_down = downlink_hz(config);
    let spacing = crate::channel::half_wavelength_spacing(config.geometry.reference_mhz * 1e6);
    let (jodft_up, jodft_down) = dft_joint_pair(
        n,
        m,
        spacing,
        crate::channel::wavelength(f_up),
        crate::channel::wavelength(f_down),
    )?;

    let mut rng = substream(config.seed, STREAM_TRAIN);
    let mut pairs = Vec::with_capacity(config.dictionaries.training_samples);
    for _ in 0..config.dictionaries.training_samples {
        let pair = draw_ul_dl_pair(&bench.env, &bench.geometry, f_up, f_down, &mut rng)?;
        pairs.push((pair.downlink.vector(), pair.uplink.vector()));
    }
    let down_half: Vec<CVec> = pairs.iter().map(|(d, _)| d.clone()).collect();
    let paired = PairedTrainingSet::from_vectors(pairs)?;

    let mut lc_up = learn_config(config);
    lc_up.init = DictInit::Provided(jodft_up.clone());
    let mut lc_down = learn_config(config);
    lc_down.init = DictInit::Provided(jodft_down.clone());
    let joint = learn_joint(&paired, &lc_up, &lc_down)?;

    let training = TrainingSet::from_vectors(down_half)?;
    let independent = learn_dictionary(&training, &learn_config(config))?;

    Ok(JointAssets {
        learned_up: joint.uplink,
        learned_down: joint.downlink,
        independent_down: independent.dictionary,
        jodft_up,
        jodft_down,
        odft: dft_overcomplete(n, m)?,
    })
}

/// Downlink NMSE versus `T_d` comparing joint estimation against independent
/// CS, for learned and predefined dictionary pairs.
pub fn run_joint_sweep(config: &ScenarioConfig) -> Result<ExperimentResult> {
    let bench = build_workbench(config)?;
    let assets = assemble_joint_assets(&bench, config)?;
    run_joint_sweep_with(&bench, &assets, config)
}

pub fn run_joint_sweep_with(
    bench: &Workbench,
    assets: &JointAssets,
    config: &ScenarioConfig,
) -> Result<ExperimentResult> {
    let n = config.geometry.elements();
    let t_u = config.estimation.tu.max(1);
    let rho = snr_linear(config.estimation.snr_db);
    let execution = config.execution.to_execution();
    let f_up = uplink_hz(config);
    let f_down = downlink_hz(config);
    let ul_pilots = orthogonal_pilots(1, t_u)?;
    let labels = [
        "joint-learned",
        "joint-jodft",
        "indep-learned",
        "indep-odft",
    ];

    let mut rows = Vec::new();
    for (point, td_value) in config.sweep.grid.iter().enumerate() {
        let t_d = *td_value as usize;
        if t_d == 0 {
            return Err(Error::Config("T_d grid values must be >= 1".into()));
        }
        let per_trial = map_indexed(config.trials, execution, |trial| -> Result<Vec<f64>> {
            let mut rng = substream(config.seed, trial_stream(point, trial));
            let pair = draw_ul_dl_pair(&bench.env, &bench.geometry, f_up, f_down, &mut rng)?;
            let truth_down = pair.downlink.matrix.clone();
            let ul_obs = simulate_uplink(
                &[pair.uplink.vector()],
                &ul_pilots.clone().with_snr(rho),
                true,
                &mut rng,
            )?;
            let dl = downlink_pilots(t_d, n, rho, &mut rng)?;
            let dl_obs = simulate_downlink(&truth_down, &dl, true, &mut rng)?;

            let joint_opts = SolverOptions::default(); // epsilon auto-folded
            let indep_opts =
                SolverOptions::with_epsilon(SolverOptions::epsilon_for_noise(t_d, 1.0));
            let mut nmses = Vec::with_capacity(4);
            for (du, dd) in [
                (&assets.learned_up, &assets.learned_down),
                (&assets.jodft_up, &assets.jodft_down),
            ] {
                let joint = joint_estimate(&ul_obs, &dl_obs, du, dd, &joint_opts, None)?;
                let est = CMat::from_column_slice(n, 1, joint.downlink.as_slice());
                nmses.push(nmse(&truth_down, &est)?);
            }
            for dict in [&assets.independent_down, &assets.odft] {
                let report = downlink_cs(&dl_obs, dict, &indep_opts, CsMode::Smv)?;
                nmses.push(nmse(&truth_down, &report.estimates[0])?);
            }
            Ok(nmses)
        });
        let collected: Vec<Vec<f64>> = per_trial.into_iter().collect::<Result<_>>()?;
        for (mi, label) in labels.iter().enumerate() {
            let values: Vec<f64> = collected.iter().map(|t| t[mi]).collect();
            let (mean, stderr) = mean_and_stderr(&values);
            rows.push(ResultRow {
                sweep: *td_value,
                method: label.to_string(),
                mean_nmse: mean,
                stderr,
                trials: config.trials,
            });
        }
    }
    new_result(config, rows)
}

/// Downlink NMSE at fixed `T_d` with dictionaries learned from measurements
/// corrupted at each learning SNR on the grid (`inf` = noiseless learning);
/// predefined dictionaries ride along as references.
pub fn run_noisy_learning_sweep(config: &ScenarioConfig) -> Result<ExperimentResult> {
    let bench = build_workbench(config)?;
    let raw = training_channels(
        &bench,
        config,
        config.dictionaries.training_samples,
        downlink_hz(config),
    )?;

    let n = config.geometry.elements();
    let t_d = config.estimation.td;
    let rho = snr_linear(config.estimation.snr_db);
    let execution = config.execution.to_execution();
    let freq = downlink_hz(config);
    let references: Vec<(String, Dictionary)> = config
        .dictionaries
        .families
        .iter()
        .filter(|f| f.as_str() != "learned")
        .map(|f| Ok((method_label("cs", f), predefined_dictionary(f, config)?)))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (point, learn_snr_db) in config.sweep.grid.iter().enumerate() {
        let training = corrupt_training_set(
            &raw,
            *learn_snr_db,
            &mut substream(config.seed, STREAM_CORRUPT | point as u64),
        )?;
        let model = learn_dictionary(&training, &learn_config(config))?;
        let learned = model.dictionary;

        let per_trial = map_indexed(config.trials, execution, |trial| -> Result<Vec<f64>> {
            let mut rng = substream(config.seed, trial_stream(point, trial));
            let truth = draw_user_channel(&bench.env, &bench.geometry, freq, 1, &mut rng)?.matrix;
            let pilots = downlink_pilots(t_d, n, rho, &mut rng)?;
            let obs = simulate_downlink(&truth, &pilots, true, &mut rng)?;
            let opts = SolverOptions::with_epsilon(SolverOptions::epsilon_for_noise(t_d, 1.0));
            let mut nmses = Vec::with_capacity(1 + references.len());
            let report = downlink_cs(&obs, &learned, &opts, CsMode::Smv)?;
            nmses.push(nmse(&truth, &report.estimates[0])?);
            for (_, dict) in &references {
                let report = downlink_cs(&obs, dict, &opts, CsMode::Smv)?;
                nmses.push(nmse(&truth, &report.estimates[0])?);
            }
            Ok(nmses)
        });
        let collected: Vec<Vec<f64>> = per_trial.into_iter().collect::<Result<_>>()?;
        let mut labels = vec!["cs-learned".to_string()];
        labels.extend(references.iter().map(|(l, _)| l.clone()));
        for (mi, label) in labels.iter().enumerate() {
            let values: Vec<f64> = collected.iter().map(|t| t[mi]).collect();
            let (mean, stderr) = mean_and_stderr(&values);
            rows.push(ResultRow {
                sweep: *learn_snr_db,
                method: label.clone(),
                mean_nmse: mean,
                stderr,
                trials: config.trials,
            });
        }
    }
    new_result(config, rows)
}
