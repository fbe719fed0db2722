//! Subcommand implementations.
//!
//! Exit-code contract: 0 on success, 1 on configuration/input errors,
//! 2 on solver failures. Output files are written only on success.

use crate::config::{BenchFileConfig, KernelConfig, RunConfig, SpaceConfig};
use crate::formats;
use anyhow::{anyhow, bail, Context, Result};
use kes_core::bench;
use kes_core::distributions::{lie_gmm_fit_em, EmOptions, GaussianMixture, LieGaussianMixture};
use kes_core::dynamics::SystemModel;
use kes_core::fourier::{fourier_metric, FourierBasisSet};
use kes_core::liegroups::{GroupElement, GroupKind};
use kes_core::metric::{
    ergodic_metric, lie_ergodic_metric, log_grid, tune_kernel,
    KernelParams,
};
use kes_core::planner::{
    bootstrap, optimize, ErgodicProblem, EuclideanProblem, LieProblem, SearchSpace, Trajectory,
};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A failed command with its process exit code.
pub struct CommandError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CommandError {
    fn config(error: anyhow::Error) -> Self {
        CommandError { code: 1, error }
    }
    fn solver(error: anyhow::Error) -> Self {
        CommandError { code: 2, error }
    }
}

type CmdResult = std::result::Result<(), CommandError>;

fn write_output(path: &str, contents: &str) -> std::result::Result<(), CommandError> {
    std::fs::write(path, contents)
        .with_context(|| format!("writing {path}"))
        .map_err(CommandError::config)
}

fn parse_theta(value: &serde_json::Value) -> Result<KernelParams<f64>> {
    if let Some(v) = value.as_f64() {
        return Ok(KernelParams::Isotropic(v));
    }
    if let Some(arr) = value.as_array() {
        let entries: Option<Vec<f64>> = arr.iter().map(|x| x.as_f64()).collect();
        if let Some(entries) = entries {
            return Ok(KernelParams::Diagonal(DVector::from_vec(entries)));
        }
    }
    bail!("kernel theta must be a number or an array of numbers")
}

struct ResolvedKernel {
    params: KernelParams<f64>,
    tuning: Option<TuningTrace>,
}

struct TuningTrace {
    grid: Vec<f64>,
    objectives: Vec<f64>,
    chosen: f64,
}

fn resolve_kernel(
    kernel: &KernelConfig,
    target: &GaussianMixture<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<ResolvedKernel> {
    if let Some(theta) = &kernel.theta {
        return Ok(ResolvedKernel {
            params: parse_theta(theta)?,
            tuning: None,
        });
    }
    let auto = kernel.auto.as_ref().expect("validated: theta xor auto");
    let samples = target.sample(rng, auto.samples);
    let grid = log_grid(auto.grid_min, auto.grid_max, auto.grid_size)?;
    let tuning = tune_kernel(&samples, target, &grid)?;
    let grid_values: Vec<f64> = grid
        .iter()
        .map(|g| match g {
            KernelParams::Isotropic(v) => *v,
            KernelParams::Diagonal(_) => unreachable!("log grid is isotropic"),
        })
        .collect();
    let chosen = grid_values[tuning.best_index];
    Ok(ResolvedKernel {
        params: tuning.best.clone(),
        tuning: Some(TuningTrace {
            grid: grid_values,
            objectives: tuning.objectives,
            chosen,
        }),
    })
}

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

pub fn cmd_plan(config_path: &str, redact_timing: bool) -> CmdResult {
    let config = RunConfig::from_file(config_path).map_err(CommandError::config)?;
    let target_text = config.target.load_text().map_err(CommandError::config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let (problem, mut tuning) = match &config.space {
        SpaceConfig::Euclidean { lower, upper } => {
            let target =
                GaussianMixture::<f64>::from_json(&target_text).map_err(|e| CommandError::config(e.into()))?;
            let resolved =
                resolve_kernel(&config.kernel, &target, &mut rng).map_err(CommandError::config)?;
            let dim = target.dim();
            let domain = SearchSpace::new(
                DVector::from_vec(lower.clone()),
                DVector::from_vec(upper.clone()),
            )
            .map_err(|e| CommandError::config(e.into()))?;
            let model = match config.dynamics_order {
                1 => SystemModel::FirstOrder { dim },
                2 => SystemModel::SecondOrder { dim },
                o => {
                    return Err(CommandError::config(anyhow!(
                        "dynamics_order must be 1 or 2, got {o}"
                    )))
                }
            };
            let initial_state = match config.initial_state.len() {
                l if l == model.state_dim() => DVector::from_vec(config.initial_state.clone()),
                l if l == dim && config.dynamics_order == 2 => {
                    let mut s = DVector::zeros(2 * dim);
                    s.rows_mut(0, dim)
                        .copy_from(&DVector::from_vec(config.initial_state.clone()));
                    s
                }
                l => {
                    return Err(CommandError::config(anyhow!(
                        "initial_state has {l} entries; expected {} (or {dim} at rest for order 2)",
                        model.state_dim()
                    )))
                }
            };
            let planning_target = if config.smooth_target {
                let theta = resolved
                    .params
                    .expand(dim)
                    .map_err(|e| CommandError::config(e.into()))?;
                target.smoothed(&theta).map_err(|e| CommandError::config(e.into()))?
            } else {
                target.clone()
            };
            let mut problem = EuclideanProblem::new(
                model,
                planning_target,
                resolved.params.clone(),
                config.horizon,
                config.dt,
                initial_state,
                domain,
            )
            .map_err(|e| CommandError::config(e.into()))?;
            problem.settings.max_iters = config.max_iters;
            let sd = model.state_dim();
            let cd = model.control_dim();
            problem.q = DMatrix::identity(sd, sd) * config.weights.q;
            problem.r = DMatrix::identity(cd, cd) * config.weights.r;
            problem.control_weight = DMatrix::identity(cd, cd) * config.weights.control;
            if !config.barrier {
                problem.barrier = None;
            }
            (ErgodicProblem::Euclidean(problem), resolved.tuning)
        }
        SpaceConfig::So3 | SpaceConfig::Se3 => {
            let kind = match &config.space {
                SpaceConfig::So3 => GroupKind::SO3,
                _ => GroupKind::SE3,
            };
            let target = LieGaussianMixture::<f64>::from_json(&target_text)
                .map_err(|e| CommandError::config(e.into()))?;
            if target.kind() != kind {
                return Err(CommandError::config(anyhow!(
                    "config space is {kind} but target is {}",
                    target.kind()
                )));
            }
            let theta = config
                .kernel
                .theta
                .as_ref()
                .ok_or_else(|| {
                    CommandError::config(anyhow!("auto kernel selection is Euclidean-only"))
                })
                .and_then(|v| parse_theta(v).map_err(CommandError::config))?;
            let expected = match kind {
                GroupKind::SO3 => 9,
                GroupKind::SE3 => 16,
            };
            if config.initial_state.len() != expected {
                return Err(CommandError::config(anyhow!(
                    "initial_state needs {expected} row-major entries for {kind}"
                )));
            }
            let rows = if expected == 9 { 3 } else { 4 };
            let m = DMatrix::from_fn(rows, rows, |i, j| config.initial_state[rows * i + j]);
            let initial = GroupElement::project(kind, &m).map_err(|e| CommandError::config(e.into()))?;
            let mut problem = LieProblem::new(target, theta, config.horizon, config.dt, initial)
                .map_err(|e| CommandError::config(e.into()))?;
            problem.settings.max_iters = config.max_iters;
            let d = kind.dof();
            problem.q = DMatrix::identity(d, d) * config.weights.q;
            problem.r = DMatrix::identity(d, d) * config.weights.r;
            problem.control_weight = DMatrix::identity(d, d) * config.weights.control;
            (ErgodicProblem::Lie(problem), None)
        }
    };

    let u0 = bootstrap(&problem, &mut rng).map_err(|e| CommandError::solver(e.into()))?;
    let mut solution = optimize(&problem, &u0).map_err(|e| CommandError::solver(e.into()))?;
    if redact_timing {
        solution.report.redact_timing();
    }

    let trajectory_csv = match &solution.trajectory {
        Trajectory::Euclidean(t) => formats::euclidean_trajectory_to_csv(t),
        Trajectory::Lie(t) => formats::lie_trajectory_to_csv(t),
    };
    let mut report_jsonl = solution.report.to_jsonl();
    if let Some(tuning) = tuning.take() {
        let line = serde_json::json!({
            "type": "kernel_tuning",
            "grid": tuning.grid,
            "objectives": tuning.objectives,
            "chosen_theta": tuning.chosen,
        });
        report_jsonl.push_str(&line.to_string());
        report_jsonl.push('\n');
    }
    write_output(&config.outputs.trajectory, &trajectory_csv)?;
    write_output(&config.outputs.report, &report_jsonl)?;
    println!(
        "plan: {} iterations, termination {:?}, outputs {} {}",
        solution.report.iterations.len(),
        solution.report.termination,
        config.outputs.trajectory,
        config.outputs.report
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_tune(
    target_path: &str,
    samples_path: Option<&str>,
    sample_count: usize,
    seed: u64,
    grid_min: f64,
    grid_max: f64,
    grid_size: usize,
    grid_list: Option<&str>,
    sweep_csv: Option<&str>,
) -> CmdResult {
    let target_text = std::fs::read_to_string(target_path)
        .with_context(|| format!("reading target {target_path}"))
        .map_err(CommandError::config)?;
    let target =
        GaussianMixture::<f64>::from_json(&target_text).map_err(|e| CommandError::config(e.into()))?;

    let samples = match samples_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading samples {path}"))
                .map_err(CommandError::config)?;
            formats::samples_from_csv(&text).map_err(CommandError::config)?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            target.sample(&mut rng, sample_count)
        }
    };

    let grid: Vec<KernelParams<f64>> = match grid_list {
        Some(list) => list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map(KernelParams::Isotropic)
                    .with_context(|| format!("bad grid entry {v:?}"))
            })
            .collect::<Result<_>>()
            .map_err(CommandError::config)?,
        None => log_grid(grid_min, grid_max, grid_size).map_err(|e| CommandError::config(e.into()))?,
    };
    if grid.is_empty() {
        return Err(CommandError::config(anyhow!("empty kernel parameter grid")));
    }

    let tuning = tune_kernel(&samples, &target, &grid).map_err(|e| CommandError::config(e.into()))?;

    println!("theta,objective");
    for (g, j) in grid.iter().zip(tuning.objectives.iter()) {
        if let KernelParams::Isotropic(v) = g {
            println!("{v},{j}");
        }
    }
    if let KernelParams::Isotropic(best) = tuning.best {
        println!("best_theta,{best}");
    }

    if let Some(path) = sweep_csv {
        let mut out = String::from("theta,objective\n");
        for (g, j) in grid.iter().zip(tuning.objectives.iter()) {
            if let KernelParams::Isotropic(v) = g {
                out.push_str(&format!("{v},{j}\n"));
            }
        }
        write_output(path, &out)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

pub fn cmd_fit(
    demo_path: &str,
    components: usize,
    z_offset: f64,
    seed: u64,
    output: &str,
) -> CmdResult {
    let text = std::fs::read_to_string(demo_path)
        .with_context(|| format!("reading demonstration {demo_path}"))
        .map_err(CommandError::config)?;
    let poses = formats::demonstration_from_csv(&text).map_err(CommandError::config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fit = lie_gmm_fit_em(&poses, components, &mut rng, &EmOptions::default())
        .map_err(|e| CommandError::solver(e.into()))?;
    // positive offsets lower the means along z
    let mixture = fit
        .mixture
        .translate_means(&Vector3::new(0.0, 0.0, -z_offset))
        .map_err(|e| CommandError::solver(e.into()))?;
    write_output(output, &mixture.to_json())?;
    println!(
        "fit: {} poses, {} components, {} EM iterations (log-likelihood {:.4}), output {output}",
        poses.len(),
        components,
        fit.log_likelihood.len(),
        fit.log_likelihood.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// metric
// ---------------------------------------------------------------------------

pub fn cmd_metric(
    trajectory_path: &str,
    target_path: &str,
    theta: &str,
    fourier_k: Option<usize>,
) -> CmdResult {
    let target_text = std::fs::read_to_string(target_path)
        .with_context(|| format!("reading target {target_path}"))
        .map_err(CommandError::config)?;
    let traj_text = std::fs::read_to_string(trajectory_path)
        .with_context(|| format!("reading trajectory {trajectory_path}"))
        .map_err(CommandError::config)?;

    let theta_value: serde_json::Value =
        serde_json::from_str(theta).map_err(|e| CommandError::config(anyhow!("bad theta: {e}")))?;
    let params = parse_theta(&theta_value).map_err(CommandError::config)?;

    // Euclidean and group targets share the mixture schema; try Euclidean
    // first, fall back to the group form.
    if let Ok(target) = GaussianMixture::<f64>::from_json(&target_text) {
        let traj = formats::euclidean_trajectory_from_csv(&traj_text).map_err(CommandError::config)?;
        if traj.dim() != target.dim() {
            return Err(CommandError::config(anyhow!(
                "trajectory dim {} vs target dim {}",
                traj.dim(),
                target.dim()
            )));
        }
        let kernel = ergodic_metric(&traj, &target, &params).map_err(|e| CommandError::config(e.into()))?;
        let fourier = match fourier_k {
            Some(k) => {
                if target.dim() > 3 {
                    return Err(CommandError::config(anyhow!(
                        "the Fourier metric refuses dimensions above 3 (tensor quadrature \
                         needs 64^{} nodes); requested dim {}",
                        target.dim(),
                        target.dim()
                    )));
                }
                let basis = FourierBasisSet::unit_cube(target.dim(), k)
                    .map_err(|e| CommandError::config(e.into()))?;
                Some(fourier_metric(&basis, &traj, &target).map_err(|e| CommandError::config(e.into()))?)
            }
            None => None,
        };
        println!(
            "{}",
            serde_json::json!({
                "kernel_metric": kernel,
                "fourier_metric": fourier,
                "constant_convention": "full",
            })
        );
        return Ok(());
    }

    let target =
        LieGaussianMixture::<f64>::from_json(&target_text).map_err(|e| CommandError::config(e.into()))?;
    if fourier_k.is_some() {
        return Err(CommandError::config(anyhow!(
            "the Fourier metric is Euclidean-only"
        )));
    }
    let traj =
        formats::lie_trajectory_from_csv(target.kind(), &traj_text).map_err(CommandError::config)?;
    let kernel =
        lie_ergodic_metric(&traj, &target, &params).map_err(|e| CommandError::config(e.into()))?;
    println!(
        "{}",
        serde_json::json!({
            "kernel_metric": kernel,
            "fourier_metric": null,
            "constant_convention": "integral_p_squared_omitted",
        })
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

pub fn cmd_bench(config_path: &str, redact_timing: bool) -> CmdResult {
    let config = BenchFileConfig::from_file(config_path).map_err(CommandError::config)?;
    let mut records =
        bench::run_benchmark(&config.bench).map_err(|e| CommandError::solver(e.into()))?;
    if redact_timing {
        for r in records.iter_mut() {
            r.time_total_s = 0.0;
            r.time_per_iter_s = 0.0;
        }
    }
    bench::emit_results(
        &records,
        &config.outputs.csv,
        &config.outputs.jsonl,
        &config.outputs.plot,
    )
    .map_err(|e| CommandError::solver(e.into()))?;

    let ok = records.iter().filter(|r| r.status == "ok").count();
    println!("bench: {} trials, {} ok", records.len(), ok);

    // metric+gradient scaling summary across the swept dimensions
    if config.bench.dims.len() > 1 && !redact_timing {
        let table = bench::scaling_sweep(&config.bench.dims, 3, config.bench.horizon, config.bench.base_seed)
            .map_err(|e| CommandError::solver(e.into()))?;
        let d_min = table.rows.first().map(|r| r.dim).unwrap_or(0);
        let d_max = table.rows.last().map(|r| r.dim).unwrap_or(0);
        let linear_prediction = d_max as f64 / d_min as f64;
        println!(
            "scaling: per-iteration metric+gradient t({d_max}D)/t({d_min}D) = {:.2} (linear predicts {:.2}, R^2 {:.3})",
            table.max_min_ratio, linear_prediction, table.r_squared
        );
    }
    Ok(())
}
