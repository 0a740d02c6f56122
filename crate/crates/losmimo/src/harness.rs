//! Seeded Monte Carlo experiments over random transceiver placements.
//!
//! Every trial derives its own RNG streams from the master seed and the trial
//! index, so trials are independent units of work: results are bit-identical
//! whatever the parallelism degree or completion order. Stage wall-times are
//! recorded per trial but sit outside the reproducibility contract (they are
//! the last CSV columns; everything before them is seed-determined).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geometry::{
    los_channel, multipath_channel, sample_scenario, true_local_aoa, ArrayLayout, ChannelMatrix,
    RoomSpec, Scenario,
};
use crate::inference::{
    likelihood, ml_estimate, run_gmp, AngularGrid, Belief, BeliefKind, FactorTableSet,
    SteeringBasis,
};
use crate::reconstruction::{achievable_rate, tx_endpoints, Bearing, rebuild_channel};
use crate::sounding::{acquire, build_codebook_rng, dft_codebook, estimate_gain, Codebook};
use crate::Vec2;

/// Side length of the room wrapped around each trial when reflections are on.
pub const ROOM_SIDE: f64 = 5.0;

/// An AoA estimation method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Geometry-aided message passing on the subarray chain.
    Gmp,
    /// Independent per-subarray likelihood maximization.
    Ml,
    /// Exhaustive DFT beam scan with a full measurement set.
    Exhaustive,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gmp, Method::Ml, Method::Exhaustive];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Gmp => "gmp",
            Method::Ml => "ml",
            Method::Exhaustive => "exhaustive",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmp" => Ok(Method::Gmp),
            "ml" => Ok(Method::Ml),
            "exhaustive" => Ok(Method::Exhaustive),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected gmp, ml or exhaustive)"
            ))),
        }
    }
}

/// Shared, immutable state for a batch of trials.
pub struct RunContext {
    pub config: Config,
    pub layout: ArrayLayout,
    pub grid: AngularGrid,
    pub basis: SteeringBasis,
    pub tables: FactorTableSet,
    pub methods: Vec<Method>,
    dft_books: Vec<Codebook>,
}

impl RunContext {
    pub fn new(config: Config, tables: FactorTableSet) -> Result<Self> {
        config.validate()?;
        let layout = config.array_layout()?;
        let grid = config.grid()?;
        if tables.n_pairs() + 1 != layout.n_rf {
            return Err(Error::Config(format!(
                "factor tables cover {} pairs, layout needs {}",
                tables.n_pairs(),
                layout.n_rf - 1
            )));
        }
        let basis = SteeringBasis::new(&grid, layout.n_per_sub);
        let methods = config.method_list()?;
        let dft_books = vec![dft_codebook(layout.n_per_sub); layout.n_rf];
        Ok(Self {
            config,
            layout,
            grid,
            basis,
            tables,
            methods,
            dft_books,
        })
    }

    /// TX antennas sounded in every trial: the two outermost ones.
    pub fn sounded_tx(&self) -> Vec<usize> {
        if self.layout.n_tx == 1 {
            vec![0]
        } else {
            vec![0, self.layout.n_tx - 1]
        }
    }
}

/// Outcome of one method in one trial.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodResult {
    Estimated {
        /// Absolute AoA errors in radians, sounded-antenna major then subarray.
        aoa_err_rad: Vec<f64>,
        /// Achievable rate of the reconstruction, bits/s/Hz.
        rate: f64,
    },
    Failed {
        reason: String,
    },
}

impl MethodResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, MethodResult::Estimated { .. })
    }
}

/// Wall-clock stage timings, milliseconds. Not part of the deterministic output.
#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    pub channel_ms: f64,
    pub sounding_ms: f64,
    pub gmp_ms: f64,
    pub ml_ms: f64,
    pub exhaustive_ms: f64,
    pub reconstruct_ms: f64,
}

/// Everything recorded about one trial.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub r: f64,
    pub rx_heading: f64,
    pub tx_heading: f64,
    pub sounded_tx: Vec<usize>,
    /// One entry per enabled method, in configuration order.
    pub results: Vec<(Method, MethodResult)>,
    pub rate_perfect: f64,
    pub timings: StageTimings,
}

impl TrialRecord {
    pub fn result(&self, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|(m, _)| *m == method).map(|(_, r)| r)
    }
}

/// Seed-determined fields only; used by reproducibility checks.
pub fn records_equivalent(a: &TrialRecord, b: &TrialRecord) -> bool {
    a.trial == b.trial
        && a.seed == b.seed
        && a.r == b.r
        && a.rx_heading == b.rx_heading
        && a.tx_heading == b.tx_heading
        && a.sounded_tx == b.sounded_tx
        && a.results == b.results
        && a.rate_perfect == b.rate_perfect
}

/// Per-subarray beliefs captured for diagnostic dumps.
#[derive(Debug, Clone)]
pub struct BeliefBundle {
    pub likelihood: Belief,
    pub fwd_in: Belief,
    pub bwd_in: Belief,
    pub posterior: Belief,
}

/// Captured beliefs for every (sounded TX antenna, subarray) pair.
#[derive(Debug, Clone)]
pub struct TrialDetails {
    /// Indexed `[sounded antenna][subarray]`.
    pub bundles: Vec<Vec<BeliefBundle>>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed derived from the master seed and the trial index.
pub fn derive_trial_seed(master_seed: u64, trial: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(trial))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_SCENARIO: u64 = 0;
const STREAM_CODEBOOKS: u64 = 1;
const STREAM_ZC_NOISE: u64 = 2;
const STREAM_DFT_NOISE: u64 = 3;

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

struct EstimationPass {
    estimates: Vec<Vec<f64>>,    // [l_idx][k]
    valid: Vec<Vec<bool>>,       // [l_idx][k] gain usable
    bundles: Option<Vec<Vec<BeliefBundle>>>,
}

/// Run one trial on an externally supplied scenario.
///
/// `run_trial` wraps this after drawing the scenario from the trial's own
/// stream; injecting the scenario directly is how consistency suites pin
/// exact geometries.
pub fn run_trial_on(
    ctx: &RunContext,
    scenario: &Scenario,
    trial: u64,
    capture: bool,
) -> (TrialRecord, Option<TrialDetails>) {
    let seed = derive_trial_seed(ctx.config.master_seed, trial);
    let sounded = ctx.sounded_tx();
    let n_rf = ctx.layout.n_rf;
    let mut timings = StageTimings::default();

    let base = |reason: String| TrialRecord {
        trial,
        seed,
        r: scenario.r(),
        rx_heading: scenario.rx_pose.heading,
        tx_heading: scenario.tx_pose.heading,
        sounded_tx: sounded.clone(),
        results: ctx
            .methods
            .iter()
            .map(|&m| (m, MethodResult::Failed { reason: reason.clone() }))
            .collect(),
        rate_perfect: f64::NAN,
        timings: StageTimings::default(),
    };

    // True channel, optionally with single-bounce reflections.
    let t0 = Instant::now();
    let channel = if ctx.config.reflect_coeff > 0.0 {
        let center = (scenario.rx_pose.center + scenario.tx_pose.center) / 2.0;
        match RoomSpec::centered(center, ROOM_SIDE)
            .and_then(|room| multipath_channel(scenario, &room, ctx.config.reflect_coeff))
        {
            Ok(h) => h,
            Err(e) => return (base(format!("channel synthesis failed: {e}")), None),
        }
    } else {
        match los_channel(scenario) {
            Ok(h) => h,
            Err(e) => return (base(format!("channel synthesis failed: {e}")), None),
        }
    };
    timings.channel_ms = ms_since(t0);

    let truth: Vec<Vec<f64>> = sounded
        .iter()
        .map(|&l| (0..n_rf).map(|k| true_local_aoa(scenario, k, l)).collect())
        .collect();

    // Compressive ZC sounding (shared by GMP and ML).
    let want_zc = ctx.methods.iter().any(|m| matches!(m, Method::Gmp | Method::Ml)) || capture;
    let want_exh = ctx.methods.contains(&Method::Exhaustive);

    let t0 = Instant::now();
    let zc = if want_zc {
        let mut rng_cb = stream_rng(seed, STREAM_CODEBOOKS);
        let books: Result<Vec<Codebook>> = (0..n_rf)
            .map(|_| {
                build_codebook_rng(
                    ctx.layout.n_per_sub,
                    ctx.config.m,
                    ctx.config.zc_root,
                    &mut rng_cb,
                )
            })
            .collect();
        let books = match books {
            Ok(b) => b,
            Err(e) => return (base(format!("codebook construction failed: {e}")), None),
        };
        let mut rng_noise = stream_rng(seed, STREAM_ZC_NOISE);
        match acquire(&channel, &books, &sounded, ctx.config.snr_pilot_db, &mut rng_noise) {
            Ok(set) => Some(set),
            Err(e) => return (base(format!("acquisition failed: {e}")), None),
        }
    } else {
        None
    };
    let exh = if want_exh {
        let mut rng_noise = stream_rng(seed, STREAM_DFT_NOISE);
        match acquire(
            &channel,
            &ctx.dft_books,
            &sounded,
            ctx.config.snr_pilot_db,
            &mut rng_noise,
        ) {
            Ok(set) => Some(set),
            Err(e) => return (base(format!("exhaustive acquisition failed: {e}")), None),
        }
    } else {
        None
    };
    timings.sounding_ms = ms_since(t0);

    // Per-subarray likelihoods; a flagged gain contributes a flat likelihood
    // and no bearing.
    let build_likelihoods = |set: &crate::sounding::MeasurementSet| {
        let mut liks: Vec<Vec<Belief>> = Vec::with_capacity(sounded.len());
        let mut valid: Vec<Vec<bool>> = Vec::with_capacity(sounded.len());
        for &l in &sounded {
            let mut row = Vec::with_capacity(n_rf);
            let mut ok_row = Vec::with_capacity(n_rf);
            for k in 0..n_rf {
                match estimate_gain(set, k, l) {
                    Ok(gain) => {
                        let b = likelihood(
                            &gain.compensated,
                            &set.codebooks[k],
                            gain.alpha,
                            set.noise_var,
                            &ctx.basis,
                        )
                        .unwrap_or_else(|_| Belief::uniform(ctx.grid.len(), BeliefKind::Likelihood));
                        row.push(b);
                        ok_row.push(true);
                    }
                    Err(_) => {
                        row.push(Belief::uniform(ctx.grid.len(), BeliefKind::Likelihood));
                        ok_row.push(false);
                    }
                }
            }
            liks.push(row);
            valid.push(ok_row);
        }
        (liks, valid)
    };

    let zc_likelihoods = zc.as_ref().map(&build_likelihoods);

    // ML: independent argmax of the compressive likelihoods.
    let ml_pass = zc_likelihoods.as_ref().map(|(liks, valid)| {
        let t = Instant::now();
        let estimates = liks.iter().map(|row| ml_estimate(row, &ctx.grid)).collect();
        timings.ml_ms = ms_since(t);
        EstimationPass {
            estimates,
            valid: valid.clone(),
            bundles: None,
        }
    });

    // GMP: forward/backward message passing per sounded antenna.
    let gmp_pass = match zc_likelihoods.as_ref() {
        Some((liks, valid)) if ctx.methods.contains(&Method::Gmp) || capture => {
            let t = Instant::now();
            let mut estimates = Vec::with_capacity(sounded.len());
            let mut bundles = capture.then(Vec::new);
            let mut failure: Option<String> = None;
            for row in liks {
                match run_gmp(row, &ctx.tables, &ctx.grid) {
                    Ok(out) => {
                        if let Some(bs) = bundles.as_mut() {
                            bs.push(
                                (0..n_rf)
                                    .map(|k| BeliefBundle {
                                        likelihood: row[k].clone(),
                                        fwd_in: out.fwd_in[k].clone(),
                                        bwd_in: out.bwd_in[k].clone(),
                                        posterior: out.posteriors[k].clone(),
                                    })
                                    .collect(),
                            );
                        }
                        estimates.push(out.estimates);
                    }
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            timings.gmp_ms = ms_since(t);
            match failure {
                None => Ok(Some(EstimationPass {
                    estimates,
                    valid: valid.clone(),
                    bundles: bundles.filter(|b| b.len() == sounded.len()),
                })),
                Some(reason) => Err(reason),
            }
        }
        _ => Ok(None),
    };

    // Exhaustive: argmax of the full DFT-scan likelihoods.
    let exh_pass = exh.as_ref().map(|set| {
        let t = Instant::now();
        let (liks, valid) = build_likelihoods(set);
        let estimates = liks.iter().map(|row| ml_estimate(row, &ctx.grid)).collect();
        timings.exhaustive_ms = ms_since(t);
        EstimationPass {
            estimates,
            valid,
            bundles: None,
        }
    });

    // Score one estimation pass: AoA errors plus the reconstruction rate.
    let offsets = ctx.layout.subarray_offsets();
    let rx_local: Vec<Vec2> = ctx
        .layout
        .rx_antenna_offsets()
        .into_iter()
        .map(|x| Vec2::new(x, 0.0))
        .collect();
    let n_streams = ctx.layout.n_rf.min(ctx.layout.n_tx);
    let t_recon = Instant::now();
    let mut score = |pass: &EstimationPass, method: Method| -> MethodResult {
        let mut aoa_err_rad = Vec::with_capacity(sounded.len() * n_rf);
        for (li, row) in pass.estimates.iter().enumerate() {
            for k in 0..n_rf {
                aoa_err_rad.push((row[k] - truth[li][k]).abs());
            }
        }
        if sounded.len() < 2 {
            return MethodResult::Failed {
                reason: "need two sounded TX antennas for reconstruction".into(),
            };
        }
        let bearings: Vec<Vec<Bearing>> = (0..2)
            .map(|li| {
                let li = if li == 0 { 0 } else { sounded.len() - 1 };
                (0..n_rf)
                    .filter(|&k| pass.valid[li][k])
                    .map(|k| Bearing::from_local_aoa(offsets[k], pass.estimates[li][k]))
                    .collect()
            })
            .collect();
        if bearings[0].len() < 2 || bearings[1].len() < 2 {
            return MethodResult::Failed {
                reason: "fewer than two usable bearings".into(),
            };
        }
        let endpoints = match tx_endpoints(&bearings[0], &bearings[1]) {
            Ok(e) => e,
            Err(e) => return MethodResult::Failed { reason: e.to_string() },
        };
        let rebuilt = match rebuild_channel(endpoints.0, endpoints.1, &ctx.layout, &rx_local) {
            Ok(h) => h,
            Err(e) => return MethodResult::Failed { reason: e.to_string() },
        };
        match achievable_rate(
            &channel,
            &rebuilt,
            ctx.config.snr_data_db,
            n_streams,
            method.as_str(),
        ) {
            Ok(point) => MethodResult::Estimated {
                aoa_err_rad,
                rate: point.rate,
            },
            Err(e) => MethodResult::Failed { reason: e.to_string() },
        }
    };

    let mut results = Vec::with_capacity(ctx.methods.len());
    for &method in &ctx.methods {
        let result = match method {
            Method::Ml => match ml_pass.as_ref() {
                Some(pass) => score(pass, method),
                None => MethodResult::Failed { reason: "ml pass unavailable".into() },
            },
            Method::Gmp => match &gmp_pass {
                Ok(Some(pass)) => score(pass, method),
                Ok(None) => MethodResult::Failed { reason: "gmp pass unavailable".into() },
                Err(reason) => MethodResult::Failed { reason: reason.clone() },
            },
            Method::Exhaustive => match exh_pass.as_ref() {
                Some(pass) => score(pass, method),
                None => MethodResult::Failed { reason: "exhaustive pass unavailable".into() },
            },
        };
        results.push((method, result));
    }
    timings.reconstruct_ms = ms_since(t_recon);

    let rate_perfect = achievable_rate(
        &channel,
        &channel,
        ctx.config.snr_data_db,
        n_streams,
        "perfect",
    )
    .map(|p| p.rate)
    .unwrap_or(f64::NAN);

    let details = match &gmp_pass {
        Ok(Some(pass)) => pass.bundles.clone().map(|bundles| TrialDetails { bundles }),
        _ => None,
    };

    (
        TrialRecord {
            trial,
            seed,
            r: scenario.r(),
            rx_heading: scenario.rx_pose.heading,
            tx_heading: scenario.tx_pose.heading,
            sounded_tx: sounded,
            results,
            rate_perfect,
            timings,
        },
        details,
    )
}

/// Run one trial end to end: sample a scenario, sound, estimate, reconstruct.
pub fn run_trial(ctx: &RunContext, trial: u64) -> TrialRecord {
    run_trial_full(ctx, trial, false).0
}

/// As [`run_trial`], optionally capturing per-subarray beliefs for dumps.
pub fn run_trial_full(
    ctx: &RunContext,
    trial: u64,
    capture: bool,
) -> (TrialRecord, Option<TrialDetails>) {
    let seed = derive_trial_seed(ctx.config.master_seed, trial);
    let mut rng = stream_rng(seed, STREAM_SCENARIO);
    match sample_scenario(&ctx.layout, ctx.config.r_min, ctx.config.r_max, &mut rng) {
        Ok(scenario) => run_trial_on(ctx, &scenario, trial, capture),
        Err(e) => {
            let reason = format!("scenario sampling failed: {e}");
            (
                TrialRecord {
                    trial,
                    seed,
                    r: f64::NAN,
                    rx_heading: f64::NAN,
                    tx_heading: f64::NAN,
                    sounded_tx: ctx.sounded_tx(),
                    results: ctx
                        .methods
                        .iter()
                        .map(|&m| (m, MethodResult::Failed { reason: reason.clone() }))
                        .collect(),
                    rate_perfect: f64::NAN,
                    timings: StageTimings::default(),
                },
                None,
            )
        }
    }
}

/// Aggregate statistics of one method over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    /// Pooled absolute AoA errors, degrees, in trial order.
    pub errors_deg: Vec<f64>,
    pub mean_rate: f64,
    pub stderr_rate: f64,
}

/// Batch-level aggregation; failures are counted, never resampled.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub n_trials: usize,
    pub per_method: Vec<MethodSummary>,
    pub rate_perfect_mean: f64,
}

impl BatchSummary {
    pub fn from_records(records: &[TrialRecord], methods: &[Method]) -> Self {
        let mut per_method = Vec::with_capacity(methods.len());
        for &method in methods {
            let mut errors_deg = Vec::new();
            let mut rates = Vec::new();
            let mut n_failed = 0usize;
            for rec in records {
                match rec.result(method) {
                    Some(MethodResult::Estimated { aoa_err_rad, rate }) => {
                        errors_deg.extend(aoa_err_rad.iter().map(|e| e.to_degrees()));
                        rates.push(*rate);
                    }
                    _ => n_failed += 1,
                }
            }
            let n_ok = rates.len();
            let mean_rate = if n_ok > 0 {
                rates.iter().sum::<f64>() / n_ok as f64
            } else {
                f64::NAN
            };
            let stderr_rate = if n_ok > 1 {
                let var = rates
                    .iter()
                    .map(|r| (r - mean_rate).powi(2))
                    .sum::<f64>()
                    / (n_ok as f64 - 1.0);
                (var / n_ok as f64).sqrt()
            } else {
                f64::NAN
            };
            per_method.push(MethodSummary {
                method,
                n_ok,
                n_failed,
                errors_deg,
                mean_rate,
                stderr_rate,
            });
        }
        let perfect: Vec<f64> = records
            .iter()
            .map(|r| r.rate_perfect)
            .filter(|r| r.is_finite())
            .collect();
        let rate_perfect_mean = if perfect.is_empty() {
            f64::NAN
        } else {
            perfect.iter().sum::<f64>() / perfect.len() as f64
        };
        BatchSummary {
            n_trials: records.len(),
            per_method,
            rate_perfect_mean,
        }
    }

    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.per_method.iter().find(|s| s.method == m)
    }
}

/// Records plus summaries of one batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub records: Vec<TrialRecord>,
    pub summary: BatchSummary,
}

/// Run `n_trials` independent trials.
///
/// `parallelism = Some(k)` pins the worker pool to `k` threads; `None` uses
/// one worker per core. Results are identical either way.
pub fn run_batch(ctx: &RunContext, n_trials: usize, parallelism: Option<usize>) -> Result<BatchResult> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let records: Vec<TrialRecord> =
        pool.install(|| (0..n_trials as u64).into_par_iter().map(|i| run_trial(ctx, i)).collect());
    let summary = BatchSummary::from_records(&records, &ctx.methods);
    Ok(BatchResult { records, summary })
}

/// Empirical CDF of pooled error samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EcdfSummary {
    /// Samples in ascending order.
    pub sorted: Vec<f64>,
    /// `(threshold, fraction of samples <= threshold)` pairs.
    pub thresholds: Vec<(f64, f64)>,
}

impl EcdfSummary {
    pub fn fraction_le(&self, t: f64) -> f64 {
        let idx = self.sorted.partition_point(|&x| x <= t);
        idx as f64 / self.sorted.len() as f64
    }
}

/// Build the ECDF of `samples` and evaluate it at the given thresholds.
pub fn ecdf(samples: &[f64], thresholds: &[f64]) -> Result<EcdfSummary> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("ecdf of no samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN error samples"));
    let mut summary = EcdfSummary {
        sorted,
        thresholds: Vec::with_capacity(thresholds.len()),
    };
    summary.thresholds = thresholds
        .iter()
        .map(|&t| (t, summary.fraction_le(t)))
        .collect();
    Ok(summary)
}

/// 17-significant-digit decimal serialization used by every CSV writer.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write one TrialRecord per row. Column order: trial, seed, scenario summary,
/// perfect-CSI rate, then per method (configuration order) status, rate,
/// per-antenna-per-subarray AoA errors in degrees, failure note, and finally
/// the wall-clock timings, which are excluded from reproducibility.
pub fn write_trials_csv(path: &Path, records: &[TrialRecord], ctx: &RunContext) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n_rf = ctx.layout.n_rf;
    let sounded = ctx.sounded_tx();
    let mut header = vec![
        "trial".to_string(),
        "seed".to_string(),
        "r".to_string(),
        "rx_heading".to_string(),
        "tx_heading".to_string(),
        "rate_perfect".to_string(),
    ];
    for &m in &ctx.methods {
        header.push(format!("{m}_status"));
        header.push(format!("{m}_rate"));
        for &l in &sounded {
            for k in 0..n_rf {
                header.push(format!("{m}_err_deg_tx{}_sub{}", l + 1, k + 1));
            }
        }
        header.push(format!("{m}_note"));
    }
    for t in [
        "t_channel_ms",
        "t_sounding_ms",
        "t_gmp_ms",
        "t_ml_ms",
        "t_exhaustive_ms",
        "t_reconstruct_ms",
    ] {
        header.push(t.to_string());
    }
    writeln!(out, "{}", header.join(","))?;

    for rec in records {
        let mut row = vec![
            rec.trial.to_string(),
            rec.seed.to_string(),
            fmt_f64(rec.r),
            fmt_f64(rec.rx_heading),
            fmt_f64(rec.tx_heading),
            fmt_f64(rec.rate_perfect),
        ];
        for &(method, ref result) in &rec.results {
            let _ = method;
            match result {
                MethodResult::Estimated { aoa_err_rad, rate } => {
                    row.push("ok".into());
                    row.push(fmt_f64(*rate));
                    for err in aoa_err_rad {
                        row.push(fmt_f64(err.to_degrees()));
                    }
                    row.push(String::new());
                }
                MethodResult::Failed { reason } => {
                    row.push("failed".into());
                    row.push(String::new());
                    for _ in 0..sounded.len() * n_rf {
                        row.push(String::new());
                    }
                    row.push(reason.replace(',', ";"));
                }
            }
        }
        for t in [
            rec.timings.channel_ms,
            rec.timings.sounding_ms,
            rec.timings.gmp_ms,
            rec.timings.ml_ms,
            rec.timings.exhaustive_ms,
            rec.timings.reconstruct_ms,
        ] {
            row.push(fmt_f64(t));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Write an ECDF as `error_deg,fraction` rows, one per sorted sample.
pub fn write_ecdf_csv(path: &Path, summary: &EcdfSummary) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "error_deg,fraction")?;
    let n = summary.sorted.len() as f64;
    for (i, &e) in summary.sorted.iter().enumerate() {
        writeln!(out, "{},{}", fmt_f64(e), fmt_f64((i as f64 + 1.0) / n))?;
    }
    Ok(())
}

/// One row of the rate-versus-measurement-count sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub m: usize,
    pub method: Method,
    pub mean_rate: f64,
    pub stderr: f64,
}

pub fn write_rates_csv(path: &Path, rows: &[RateRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "m,method,mean_rate,stderr")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{}",
            row.m,
            row.method,
            fmt_f64(row.mean_rate),
            fmt_f64(row.stderr)
        )?;
    }
    Ok(())
}
