//! Randomized benchmark harness.
//!
//! Reproduces the scaling study at desk scale: randomized three-mode GMM
//! targets, 200 steps at dt = 0.1 s, first- or second-order point masses
//! across 2-6 dimensions. Wall time is measured with a monotonic clock
//! around the planner only (bootstrap + optimization), excluding target
//! generation and metric evaluation.
//!
//! Timing acceptance is expressed as ratios (per-iteration metric+gradient
//! cost across dimensions), not absolute seconds, so results are portable
//! across machines. Trials are embarrassingly parallel; records are ordered
//! by spec index regardless of completion order, and all randomness is
//! derived from the trial seed alone.

use crate::distributions::{random_benchmark_gmm, GaussianMixture};
use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::fourier::{fourier_metric, FourierBasisSet};
use crate::metric::{ergodic_grad, ergodic_metric, EuclideanTrajectory, KernelParams};
use crate::planner::{
    bootstrap, optimize, ErgodicProblem, EuclideanProblem, SearchSpace, Trajectory,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Harness configuration. Defaults mirror the benchmark protocol: 200 steps,
/// dt 0.1 s, three-mode targets, 20 trials per configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub dims: Vec<usize>,
    pub trials_per_dim: usize,
    /// 1 = single integrator, 2 = double integrator.
    pub order: usize,
    pub horizon: usize,
    pub dt: f64,
    /// Isotropic kernel variance; the planner optimizes against the
    /// bandwidth-smoothed target (see `GaussianMixture::smoothed`).
    pub kernel_theta: f64,
    pub max_iters: usize,
    /// Subproblem regulation scales (negative values are a deliberate way
    /// to inject Riccati failures in tests).
    pub q_scale: f64,
    pub r_scale: f64,
    /// Fourier cross-check: highest index per dimension, recorded only for
    /// dims at or below `fourier_max_dim` (the quadrature refuses above 3).
    pub fourier_max_index: usize,
    pub fourier_max_dim: usize,
    /// Targets for measurable dims are redrawn until the mixture mass
    /// outside the unit box falls below this threshold; the Fourier metric
    /// compares against the density restricted to the search space, which
    /// the problem statement requires to carry the full probability mass.
    pub containment_threshold: f64,
    pub containment_max_draws: usize,
    pub base_seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dims: (2..=6).collect(),
            trials_per_dim: 20,
            order: 1,
            horizon: 200,
            dt: 0.1,
            kernel_theta: 0.005,
            max_iters: 200,
            q_scale: 1.0,
            r_scale: 0.1,
            fourier_max_index: 10,
            fourier_max_dim: 3,
            containment_threshold: 1e-2,
            containment_max_draws: 100_000,
            base_seed: 0,
        }
    }
}

/// One trial, reproducible from the seed alone.
#[derive(Clone, Debug)]
pub struct TrialSpec {
    pub seed: u64,
    pub dim: usize,
    pub order: usize,
    pub horizon: usize,
    pub dt: f64,
    pub target: GaussianMixture<f64>,
    pub initial_state: DVector<f64>,
    pub config: BenchConfig,
    pub containment_draws: usize,
}

/// Result of one trial. Failures are recorded, never propagated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// FNV-1a hash of the generating parameters (hex).
    pub spec_hash: String,
    pub seed: u64,
    pub dim: usize,
    pub order: usize,
    pub horizon: usize,
    pub dt: f64,
    pub kernel_theta: f64,
    pub status: String,
    pub iters: usize,
    pub final_kernel_metric: Option<f64>,
    pub final_fourier_metric: Option<f64>,
    pub time_total_s: f64,
    pub time_per_iter_s: f64,
    pub termination: Option<String>,
    pub objective_curve: Vec<f64>,
    pub containment_draws: usize,
    /// Protocol assumptions baked into target generation.
    pub protocol: String,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Estimated mixture mass outside the unit box (per-axis normal tails,
/// union bound). Only used to condition benchmark targets.
fn mass_outside_unit_box(target: &GaussianMixture<f64>) -> f64 {
    fn normal_cdf(z: f64) -> f64 {
        let x = z / std::f64::consts::SQRT_2;
        let t = 1.0 / (1.0 + 0.3275911 * x.abs());
        let poly = t
            * (0.254829592
                + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        let erf = 1.0 - poly * (-x * x).exp();
        let erf = if x < 0.0 { -erf } else { erf };
        0.5 * (1.0 + erf)
    }
    let mut total = 0.0;
    for c in target.components() {
        let mut outside = 0.0;
        for axis in 0..target.dim() {
            let mu = c.mean()[axis];
            let sd = c.cov()[(axis, axis)].max(1e-300).sqrt();
            outside += normal_cdf(-mu / sd) + (1.0 - normal_cdf((1.0 - mu) / sd));
        }
        total += c.weight() * outside.min(1.0);
    }
    total
}

/// Build the spec for one (dim, trial) cell. The trial seed is derived from
/// the base seed and the cell coordinates, so any subset of trials can be
/// reproduced independently.
pub fn trial_spec(config: &BenchConfig, dim: usize, trial_index: usize) -> Result<TrialSpec> {
    let seed = config
        .base_seed
        .wrapping_add(fnv1a64(format!("trial/{dim}/{trial_index}").as_bytes()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let measurable = dim <= config.fourier_max_dim;
    let mut draws = 0;
    let target = loop {
        draws += 1;
        if draws > config.containment_max_draws {
            return Err(Error::Structure(format!(
                "no contained target found for dim {dim} after {} draws",
                config.containment_max_draws
            )));
        }
        let t = random_benchmark_gmm::<f64, _>(dim, &mut rng)?;
        if !measurable || mass_outside_unit_box(&t) <= config.containment_threshold {
            break t;
        }
    };
    let domain = SearchSpace::<f64>::unit_cube(dim);
    let initial_state = domain.sample_uniform(&mut rng);
    Ok(TrialSpec {
        seed,
        dim,
        order: config.order,
        horizon: config.horizon,
        dt: config.dt,
        target,
        initial_state,
        config: config.clone(),
        containment_draws: draws,
    })
}

fn spec_hash(spec: &TrialSpec) -> String {
    let summary = format!(
        "{}/{}/{}/{}/{}/{}/{}",
        spec.seed,
        spec.dim,
        spec.order,
        spec.horizon,
        spec.dt,
        spec.config.kernel_theta,
        spec.config.max_iters
    );
    format!("{:016x}", fnv1a64(summary.as_bytes()))
}

fn build_problem(spec: &TrialSpec) -> Result<ErgodicProblem<f64>> {
    let model = match spec.order {
        1 => SystemModel::FirstOrder { dim: spec.dim },
        2 => SystemModel::SecondOrder { dim: spec.dim },
        other => {
            return Err(Error::ModelMismatch(format!(
                "dynamics order must be 1 or 2, got {other}"
            )))
        }
    };
    let theta = DVector::from_element(spec.dim, spec.config.kernel_theta);
    let planning_target = spec.target.smoothed(&theta)?;
    let initial_state = match spec.order {
        1 => spec.initial_state.clone(),
        _ => {
            // start at rest
            let mut s = DVector::zeros(2 * spec.dim);
            s.rows_mut(0, spec.dim).copy_from(&spec.initial_state);
            s
        }
    };
    let mut problem = EuclideanProblem::new(
        model,
        planning_target,
        KernelParams::Isotropic(spec.config.kernel_theta),
        spec.horizon,
        spec.dt,
        initial_state,
        SearchSpace::unit_cube(spec.dim),
    )?;
    problem.settings.max_iters = spec.config.max_iters;
    problem.q = DMatrix::identity(model.state_dim(), model.state_dim()) * spec.config.q_scale;
    problem.r = DMatrix::identity(model.control_dim(), model.control_dim()) * spec.config.r_scale;
    Ok(ErgodicProblem::Euclidean(problem))
}

/// Run one trial: bootstrap, optimize, evaluate metrics. The monotonic
/// clock wraps the planner only. Planner failures set the status flag and
/// leave the metrics empty.
pub fn run_trial(spec: &TrialSpec) -> TrialRecord {
    let mut record = TrialRecord {
        spec_hash: spec_hash(spec),
        seed: spec.seed,
        dim: spec.dim,
        order: spec.order,
        horizon: spec.horizon,
        dt: spec.dt,
        kernel_theta: spec.config.kernel_theta,
        status: "ok".to_string(),
        iters: 0,
        final_kernel_metric: None,
        final_fourier_metric: None,
        time_total_s: 0.0,
        time_per_iter_s: 0.0,
        termination: None,
        objective_curve: Vec::new(),
        containment_draws: spec.containment_draws,
        protocol: format!(
            "weights=dirichlet(1,1,1);containment_mass_outside<={}",
            spec.config.containment_threshold
        ),
    };

    let problem = match build_problem(spec) {
        Ok(p) => p,
        Err(e) => {
            record.status = format!("failed: {e}");
            return record;
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e3779b97f4a7c15);
    let start = Instant::now();
    let solution = bootstrap(&problem, &mut rng).and_then(|u0| optimize(&problem, &u0));
    let elapsed = start.elapsed().as_secs_f64();

    let solution = match solution {
        Ok(s) => s,
        Err(e) => {
            record.status = format!("failed: {e}");
            record.time_total_s = elapsed;
            return record;
        }
    };

    record.time_total_s = elapsed;
    record.iters = solution.report.iterations.len();
    if record.iters > 0 {
        record.time_per_iter_s = elapsed / record.iters as f64;
    }
    let termination = serde_json::to_value(solution.report.termination)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    if termination == "subproblem_failure" {
        record.status = "failed: Riccati subproblem lost positive semidefiniteness".to_string();
    }
    record.termination = Some(termination);
    record.objective_curve = solution.report.iterations.iter().map(|i| i.objective).collect();

    // score against the original (unsmoothed) target
    let traj = match &solution.trajectory {
        Trajectory::Euclidean(t) => t.clone(),
        Trajectory::Lie(_) => unreachable!("benchmark problems are Euclidean"),
    };
    let task_traj = match spec.order {
        1 => traj,
        _ => {
            let pos = traj.states().rows(0, spec.dim).into_owned();
            EuclideanTrajectory::new(pos, traj.controls().clone(), traj.dt())
                .expect("position block is a valid trajectory")
        }
    };
    let theta = KernelParams::Isotropic(spec.config.kernel_theta);
    match ergodic_metric(&task_traj, &spec.target, &theta) {
        Ok(m) => record.final_kernel_metric = Some(m),
        Err(e) => record.status = format!("failed: metric evaluation: {e}"),
    }
    if spec.dim <= spec.config.fourier_max_dim {
        match FourierBasisSet::unit_cube(spec.dim, spec.config.fourier_max_index)
            .and_then(|basis| fourier_metric(&basis, &task_traj, &spec.target))
        {
            Ok(m) => record.final_fourier_metric = Some(m),
            Err(e) => record.status = format!("failed: Fourier evaluation: {e}"),
        }
    }
    record
}

/// Run the full grid. Trials run in parallel; the output order is by
/// (dim, trial) index, independent of completion order.
pub fn run_benchmark(config: &BenchConfig) -> Result<Vec<TrialRecord>> {
    let mut specs = Vec::new();
    for dim in &config.dims {
        for trial in 0..config.trials_per_dim {
            specs.push(trial_spec(config, *dim, trial)?);
        }
    }
    Ok(specs.par_iter().map(run_trial).collect())
}

// ---------------------------------------------------------------------------
// Scaling sweep.
// ---------------------------------------------------------------------------

/// Median and interquartile range of per-iteration metric+gradient wall
/// time for one dimension.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingRow {
    pub dim: usize,
    pub median_s: f64,
    pub iqr_s: f64,
    pub samples: usize,
}

/// Scaling sweep output with the linear fit over dimension.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    pub slope_s_per_dim: f64,
    pub r_squared: f64,
    /// Ratio of the largest to the smallest per-dimension median.
    pub max_min_ratio: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Time one kernel-metric + gradient evaluation pair on a random in-box
/// trajectory; this is the per-iteration cost the dimension-scaling claim
/// is about (the Riccati part is cubic in the state dimension but
/// negligible next to the O(T^2 n) sums).
pub fn metric_grad_timings(dim: usize, horizon: usize, reps: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = random_benchmark_gmm::<f64, _>(dim, &mut rng)?;
    let theta = KernelParams::Isotropic(0.005);
    let states = DMatrix::from_fn(dim, horizon, |_, _| rng.random_range(0.0..1.0));
    let traj = EuclideanTrajectory::new(states, DMatrix::zeros(dim, horizon), 0.1)?;
    // warm-up
    let _ = ergodic_metric(&traj, &target, &theta)?;
    let _ = ergodic_grad(&traj, &target, &theta)?;
    let mut out = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let m = ergodic_metric(&traj, &target, &theta)?;
        let g = ergodic_grad(&traj, &target, &theta)?;
        out.push(start.elapsed().as_secs_f64());
        // keep the optimizer from discarding the results
        std::hint::black_box((m, g[(0, 0)]));
    }
    Ok(out)
}

/// Median per-iteration metric+gradient time per dimension, with a linear
/// fit over dimension.
pub fn scaling_sweep(
    dims: &[usize],
    trials_per_dim: usize,
    horizon: usize,
    base_seed: u64,
) -> Result<ScalingTable> {
    let mut rows = Vec::new();
    for &dim in dims {
        let mut samples = Vec::new();
        for trial in 0..trials_per_dim {
            let seed = base_seed.wrapping_add(fnv1a64(format!("scale/{dim}/{trial}").as_bytes()));
            samples.extend(metric_grad_timings(dim, horizon, 5, seed)?);
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rows.push(ScalingRow {
            dim,
            median_s: percentile(&samples, 0.5),
            iqr_s: percentile(&samples, 0.75) - percentile(&samples, 0.25),
            samples: samples.len(),
        });
    }

    // least-squares line median = a + b * dim
    let (mut slope, mut r2) = (f64::NAN, f64::NAN);
    if rows.len() >= 2 {
        let n = rows.len() as f64;
        let sx: f64 = rows.iter().map(|r| r.dim as f64).sum();
        let sy: f64 = rows.iter().map(|r| r.median_s).sum();
        let sxx: f64 = rows.iter().map(|r| (r.dim * r.dim) as f64).sum();
        let sxy: f64 = rows.iter().map(|r| r.dim as f64 * r.median_s).sum();
        slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        let mean_y = sy / n;
        let ss_tot: f64 = rows.iter().map(|r| (r.median_s - mean_y).powi(2)).sum();
        let ss_res: f64 = rows
            .iter()
            .map(|r| (r.median_s - (intercept + slope * r.dim as f64)).powi(2))
            .sum();
        r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    }
    let max = rows.iter().map(|r| r.median_s).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.median_s).fold(f64::INFINITY, f64::min);
    Ok(ScalingTable {
        rows,
        slope_s_per_dim: slope,
        r_squared: r2,
        max_min_ratio: if rows_empty_guard(min) { f64::NAN } else { max / min },
    })
}

fn rows_empty_guard(min: f64) -> bool {
    !min.is_finite() || min <= 0.0
}

// ---------------------------------------------------------------------------
// Emission.
// ---------------------------------------------------------------------------

pub const CSV_HEADER: &str =
    "seed,dim,order,T,dt,iters,final_kernel_metric,final_fourier_metric,time_total_s,time_per_iter_s,status";

fn opt_to_csv(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Summary CSV, one row per trial.
pub fn records_to_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.dim,
            r.order,
            r.horizon,
            r.dt,
            r.iters,
            opt_to_csv(r.final_kernel_metric),
            opt_to_csv(r.final_fourier_metric),
            r.time_total_s,
            r.time_per_iter_s,
            r.status.replace(',', ";")
        ));
    }
    out
}

/// Full records as JSONL, one object per line.
pub fn records_to_jsonl(records: &[TrialRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<TrialRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Structure(format!("bad record line: {e}")))
        })
        .collect()
}

/// Plot-ready per-dimension summary: dimension, median per-iteration time,
/// interquartile range.
pub fn plot_csv(records: &[TrialRecord]) -> String {
    let mut dims: Vec<usize> = records.iter().map(|r| r.dim).collect();
    dims.sort_unstable();
    dims.dedup();
    let mut out = String::from("dim,median_time_per_iter_s,iqr_s\n");
    for dim in dims {
        let mut times: Vec<f64> = records
            .iter()
            .filter(|r| r.dim == dim && r.status == "ok" && r.iters > 0)
            .map(|r| r.time_per_iter_s)
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if times.is_empty() {
            continue;
        }
        let median = percentile(&times, 0.5);
        let iqr = percentile(&times, 0.75) - percentile(&times, 0.25);
        out.push_str(&format!("{dim},{median},{iqr}\n"));
    }
    out
}

fn write_file(path: &str, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_string(),
        source: e,
    })
}

/// Write the summary CSV, the JSONL records, and the plot-data CSV.
pub fn emit_results(
    records: &[TrialRecord],
    csv_path: &str,
    jsonl_path: &str,
    plot_path: &str,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Structure("no records to emit".into()));
    }
    write_file(csv_path, &records_to_csv(records))?;
    write_file(jsonl_path, &records_to_jsonl(records))?;
    write_file(plot_path, &plot_csv(records))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> BenchConfig {
        BenchConfig {
            dims: vec![2],
            trials_per_dim: 1,
            horizon: 60,
            max_iters: 30,
            ..BenchConfig::default()
        }
    }

    fn strip_times(mut r: TrialRecord) -> TrialRecord {
        r.time_total_s = 0.0;
        r.time_per_iter_s = 0.0;
        r
    }

    #[test]
    fn trial_is_deterministic_up_to_wall_time() {
        let config = tiny_config();
        let spec1 = trial_spec(&config, 2, 0).unwrap();
        let spec2 = trial_spec(&config, 2, 0).unwrap();
        let a = strip_times(run_trial(&spec1));
        let b = strip_times(run_trial(&spec2));
        assert_eq!(a, b);
        assert_eq!(a.status, "ok");
    }

    #[test]
    fn trial_2d_reaches_fourier_target() {
        let config = BenchConfig {
            dims: vec![2],
            trials_per_dim: 1,
            ..BenchConfig::default()
        };
        let spec = trial_spec(&config, 2, 0).unwrap();
        let record = run_trial(&spec);
        assert_eq!(record.status, "ok");
        let fm = record.final_fourier_metric.expect("2D records Fourier");
        assert!(fm <= 5e-3, "Fourier metric {fm} above threshold");
    }

    #[test]
    fn objective_curves_are_monotone() {
        let spec = trial_spec(&tiny_config(), 2, 0).unwrap();
        let record = run_trial(&spec);
        for w in record.objective_curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn failure_injection_is_flagged_and_contained() {
        let config = BenchConfig {
            r_scale: -1.0,
            ..tiny_config()
        };
        let spec = trial_spec(&config, 2, 0).unwrap();
        let record = run_trial(&spec);
        assert!(record.status.starts_with("failed:"), "status {:?}", record.status);
        assert!(record.final_kernel_metric.is_none());
        // the harness keeps going after a failed trial
        let healthy = trial_spec(&tiny_config(), 2, 0).unwrap();
        assert_eq!(run_trial(&healthy).status, "ok");
    }

    #[test]
    fn second_order_trial_runs() {
        let config = BenchConfig {
            order: 2,
            ..tiny_config()
        };
        let spec = trial_spec(&config, 2, 0).unwrap();
        let record = run_trial(&spec);
        assert_eq!(record.status, "ok");
        assert_eq!(record.order, 2);
        assert!(record.final_kernel_metric.is_some());
        for w in record.objective_curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn higher_dims_skip_fourier() {
        let config = BenchConfig {
            dims: vec![4],
            trials_per_dim: 1,
            horizon: 40,
            max_iters: 5,
            ..BenchConfig::default()
        };
        let spec = trial_spec(&config, 4, 0).unwrap();
        let record = run_trial(&spec);
        assert_eq!(record.status, "ok");
        assert!(record.final_fourier_metric.is_none());
        assert!(record.final_kernel_metric.is_some());
    }

    #[test]
    fn sweep_empty_dims_yields_empty_table() {
        let table = scaling_sweep(&[], 3, 50, 0).unwrap();
        assert!(table.rows.is_empty());
        assert!(table.max_min_ratio.is_nan());
    }

    #[test]
    fn quadratic_growth_in_horizon() {
        // the double sum is O(T^2): quadrupling T should cost clearly more
        // than 4x (quadratic predicts 16x); keep the band loose for CI noise
        let t100: f64 = {
            let mut v = metric_grad_timings(2, 100, 7, 1).unwrap();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            percentile(&v, 0.5)
        };
        let t400: f64 = {
            let mut v = metric_grad_timings(2, 400, 7, 1).unwrap();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            percentile(&v, 0.5)
        };
        let ratio = t400 / t100;
        assert!(ratio > 6.0, "T-scaling ratio {ratio} not superlinear");
        assert!(ratio < 60.0, "T-scaling ratio {ratio} implausibly large");
    }

    #[test]
    fn emission_roundtrip_and_schema() {
        let config = tiny_config();
        let records: Vec<TrialRecord> = vec![
            run_trial(&trial_spec(&config, 2, 0).unwrap()),
            run_trial(&trial_spec(&config, 2, 1).unwrap()),
        ];
        let jsonl = records_to_jsonl(&records);
        let back = records_from_jsonl(&jsonl).unwrap();
        assert_eq!(records, back);

        let csv = records_to_csv(&records);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.count(), records.len());

        let dir = std::env::temp_dir().join(format!("kes-bench-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("summary.csv");
        let jsonl_path = dir.join("records.jsonl");
        let plot_path = dir.join("plot.csv");
        emit_results(
            &records,
            csv_path.to_str().unwrap(),
            jsonl_path.to_str().unwrap(),
            plot_path.to_str().unwrap(),
        )
        .unwrap();
        assert_eq!(std::fs::read_to_string(&jsonl_path).unwrap(), jsonl);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn plot_medians_match_recomputation() {
        let config = BenchConfig {
            dims: vec![2],
            trials_per_dim: 3,
            horizon: 50,
            max_iters: 10,
            ..BenchConfig::default()
        };
        let records = run_benchmark(&config).unwrap();
        let plot = plot_csv(&records);
        let line = plot.lines().nth(1).expect("one dim row");
        let fields: Vec<&str> = line.split(',').collect();
        let median: f64 = fields[1].parse().unwrap();
        let mut times: Vec<f64> = records
            .iter()
            .filter(|r| r.status == "ok" && r.iters > 0)
            .map(|r| r.time_per_iter_s)
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((median - percentile(&times, 0.5)).abs() < 1e-15);
    }

    #[test]
    fn benchmark_preserves_spec_order() {
        let config = BenchConfig {
            dims: vec![2, 3],
            trials_per_dim: 2,
            horizon: 40,
            max_iters: 5,
            ..BenchConfig::default()
        };
        let records = run_benchmark(&config).unwrap();
        let dims: Vec<usize> = records.iter().map(|r| r.dim).collect();
        assert_eq!(dims, vec![2, 2, 3, 3]);
    }
}
