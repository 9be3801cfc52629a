//! Command-line interface.
//!
//! Subcommands: `tabulate`, `verify`, `train`, `sample`, `reduce`,
//! `noisemap`. Every run prints its resolved configuration before doing
//! any work, and all randomness flows from `--seed` through named
//! substreams, so reruns with identical flags produce byte-identical
//! outputs. Exit codes: 0 success / all checks passed, 1 failure,
//! 2 usage error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bridge::{compute_coefficients, variant_pi, BridgeVariant, VariantKind};
use crate::error::{RdbmError, Result};
use crate::io::{format_g17, read_pgm, write_csv, write_pgm, write_svg_lines, SvgSeries};
use crate::rng::Stream;
use crate::sampler::{sample_loop, SampleMode};
use crate::schedule::{build_table, ScheduleSpec};
use crate::sim::SimConfig;
use crate::tensor::TensorGrid;
use crate::train::{
    make_toy_dataset, predictor_forward, read_model, streak_mask, train, write_model,
    DegradationSpec, DenoiserParams, TrainConfig,
};
use crate::verify::{
    brownian_limit_check, default_verify_schedules, drift_identity_check, flow_determinism_check,
    moment_checks, oracle_recovery_check, psi_quadrature_check, ve_drift_limit_check,
    vp_substitution_check, CheckOutcome, MomentRow,
};

#[derive(Parser)]
#[command(
    name = "rdbm",
    about = "Residual diffusion bridge toolkit: coefficient tables, Monte Carlo verification, toy training, reverse sampling, limit reductions and noise maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the coefficient table as CSV plus an SVG plot.
    Tabulate {
        /// Schedule JSON; the built-in default schedule when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output basename; writes <out>.csv and <out>.svg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the self-verification suite; nonzero exit on any failure.
    Verify {
        /// Schedule JSON; the built-in trio (constant, linear, cosine)
        /// when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200_000)]
        trajectories: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Moment report CSV path.
        #[arg(long, default_value = "verify_report.csv")]
        out: PathBuf,
    },
    /// Train the toy predictor on a synthetic dataset.
    Train {
        /// Training JSON: {"schedule": .., "degradation": .., "train": ..,
        /// "variant": ..}; missing sections take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model output path.
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV path.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Restore a degraded image with a trained model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        /// Degraded input image (binary PGM).
        #[arg(long)]
        degraded: PathBuf,
        /// Reverse steps; must equal the model schedule's N.
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, value_parser = ["ddim", "posterior"], default_value = "ddim")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restored output image (binary PGM).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare limit configurations against their closed-form targets.
    Reduce {
        #[arg(long, value_parser = ["brownian", "ve", "vp", "flow"])]
        variant: String,
        /// Rate used by the small-rate limits.
        #[arg(long, default_value_t = 1e-5)]
        theta: f64,
        /// Deviation table CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export |prediction| maps of a trained model under both noise
    /// profiles, with degraded/intact means.
    Noisemap {
        #[arg(long)]
        model: PathBuf,
        /// Step index to probe; the model schedule's midpoint when omitted.
        #[arg(long)]
        step: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output basename; writes <out>.<profile>.pgm and <out>.summary.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Training file: schedule, degradation, optimizer settings, variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub degradation: DegradationSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_variant")]
    pub variant: VariantKind,
}

fn default_variant() -> VariantKind {
    VariantKind::Rdbm
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        TrainFileConfig {
            schedule: ScheduleSpec::default(),
            degradation: DegradationSpec::default(),
            train: TrainConfig::default(),
            variant: default_variant(),
        }
    }
}

fn load_schedule(path: &Option<PathBuf>) -> Result<ScheduleSpec> {
    let spec = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => ScheduleSpec::default(),
    };
    spec.validate()?;
    Ok(spec)
}

fn load_train_config(path: &Option<PathBuf>) -> Result<TrainFileConfig> {
    let cfg: TrainFileConfig = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => TrainFileConfig::default(),
    };
    cfg.schedule.validate()?;
    cfg.degradation.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn print_resolved<T: Serialize>(what: &str, value: &T) {
    println!(
        "resolved {what}: {}",
        serde_json::to_string(value).expect("config serializes")
    );
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Tabulate { config, out } => cmd_tabulate(&config, &out),
        Command::Verify { config, trajectories, seed, out } => {
            cmd_verify(&config, trajectories, seed, &out)
        }
        Command::Train { config, out, trace } => cmd_train(&config, &out, &trace),
        Command::Sample { model, degraded, steps, mode, seed, out } => {
            cmd_sample(&model, &degraded, steps, &mode, seed, &out)
        }
        Command::Reduce { variant, theta, out } => cmd_reduce(&variant, theta, &out),
        Command::Noisemap { model, step, seed, out } => cmd_noisemap(&model, step, seed, &out),
    }
}

fn with_extension(base: &Path, ext: &str) -> PathBuf {
    let mut name = base.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(ext);
    base.with_file_name(name)
}

fn cmd_tabulate(config: &Option<PathBuf>, out: &Path) -> Result<i32> {
    let spec = load_schedule(config)?;
    print_resolved("schedule", &spec);
    let table = build_table(&spec)?;
    let coeffs = compute_coefficients(&table, spec.lambda)?;
    let rows: Vec<Vec<String>> = (0..=spec.steps)
        .map(|i| {
            vec![
                i.to_string(),
                format_g17(table.t_grid[i]),
                format_g17(table.cum0[i]),
                format_g17(coeffs.theta[i]),
                format_g17(coeffs.sigma[i]),
                format_g17(coeffs.r[i]),
            ]
        })
        .collect();
    let csv_path = with_extension(out, ".csv");
    write_csv(
        &csv_path,
        &["i", "t", "theta_bar_0t", "Theta", "Sigma", "R"],
        &rows,
    )?;
    let series = [
        SvgSeries {
            label: "Theta",
            points: table.t_grid.iter().zip(coeffs.theta.iter()).map(|(&t, &v)| (t, v)).collect(),
        },
        SvgSeries {
            label: "Sigma",
            points: table.t_grid.iter().zip(coeffs.sigma.iter()).map(|(&t, &v)| (t, v)).collect(),
        },
        SvgSeries {
            label: "R",
            points: table.t_grid.iter().zip(coeffs.r.iter()).map(|(&t, &v)| (t, v)).collect(),
        },
    ];
    let svg_path = with_extension(out, ".svg");
    write_svg_lines(&svg_path, "bridge coefficients", "t", "value", &series)?;
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(0)
}

fn moment_rows_to_csv(rows: &[(String, Vec<MomentRow>)], path: &Path) -> Result<()> {
    let mut csv_rows = Vec::new();
    for (label, schedule_rows) in rows {
        for row in schedule_rows {
            csv_rows.push(vec![
                label.clone(),
                format_g17(row.t),
                format_g17(row.analytic_mean),
                format_g17(row.estimate.mean),
                format_g17(row.estimate.mean_se),
                format_g17(row.analytic_var),
                format_g17(row.estimate.var),
                format_g17(row.estimate.var_se),
                (row.pass_mean && row.pass_var).to_string(),
            ]);
        }
    }
    write_csv(
        path,
        &[
            "schedule",
            "t",
            "analytic_mean",
            "mc_mean",
            "mean_se",
            "analytic_var",
            "mc_var",
            "var_se",
            "pass",
        ],
        &csv_rows,
    )
}

fn cmd_verify(
    config: &Option<PathBuf>,
    trajectories: usize,
    seed: u64,
    out: &Path,
) -> Result<i32> {
    let schedules = match config {
        Some(_) => vec![("config".to_string(), load_schedule(config)?)],
        None => default_verify_schedules(),
    };
    let cfg = SimConfig { trajectories, seed, ..SimConfig::default() };
    print_resolved(
        "verify",
        &serde_json::json!({
            "schedules": schedules,
            "trajectories": trajectories,
            "seed": seed,
            "report": out.display().to_string(),
        }),
    );
    let mut checks: Vec<CheckOutcome> = Vec::new();
    let mut all_rows = Vec::new();
    for (label, spec) in &schedules {
        let table = build_table(spec)?;
        let coeffs = compute_coefficients(&table, spec.lambda)?;
        let (mc, rows) = moment_checks(spec, &coeffs, &cfg, label)?;
        checks.extend(mc);
        all_rows.push((label.clone(), rows));
        checks.push(oracle_recovery_check(spec, &format!("{label},N={}", spec.steps))?);
        let dense = ScheduleSpec { steps: 50, ..*spec };
        checks.push(oracle_recovery_check(&dense, &format!("{label},N=50"))?);
    }
    checks.push(drift_identity_check(seed)?);
    checks.push(psi_quadrature_check(seed)?);
    checks.push(brownian_limit_check(1e-5)?);
    checks.push(flow_determinism_check(&cfg)?);
    checks.push(ve_drift_limit_check(1e-5)?);
    checks.push(vp_substitution_check(seed)?);
    moment_rows_to_csv(&all_rows, out)?;
    let mut all_pass = true;
    for check in &checks {
        println!(
            "check {:<32} {}  ({})",
            check.name,
            if check.pass { "PASS" } else { "FAIL" },
            check.detail
        );
        all_pass &= check.pass;
    }
    println!("report written to {}", out.display());
    Ok(if all_pass { 0 } else { 1 })
}

fn cmd_train(config: &Option<PathBuf>, out: &Path, trace: &Option<PathBuf>) -> Result<i32> {
    let cfg = load_train_config(config)?;
    print_resolved("train config", &cfg);
    let dataset = make_toy_dataset(&cfg.degradation, cfg.train.dataset_size)?;
    let variant = BridgeVariant::new(cfg.variant);
    let outcome = train(&cfg.train, &cfg.schedule, &dataset, &variant)?;
    write_model(out, &outcome.params, &serde_json::to_string(&cfg)?)?;
    println!("model written to {}", out.display());
    if let Some(trace_path) = trace {
        let rows: Vec<Vec<String>> = outcome
            .trace
            .iter()
            .map(|(it, l)| vec![it.to_string(), format_g17(*l)])
            .collect();
        write_csv(trace_path, &["iteration", "loss"], &rows)?;
        println!("trace written to {}", trace_path.display());
    }
    let (first, last) = (outcome.trace.first().unwrap(), outcome.trace.last().unwrap());
    println!(
        "loss {} (iteration {}) -> {} (iteration {})",
        format_g17(first.1),
        first.0,
        format_g17(last.1),
        last.0
    );
    Ok(0)
}

/// Loads a model file back into usable parameters plus its config.
pub fn load_model(path: &Path) -> Result<(DenoiserParams, TrainFileConfig)> {
    let (layers, json) = read_model(path)?;
    let cfg: TrainFileConfig = serde_json::from_str(&json)?;
    let table = build_table(&cfg.schedule)?;
    let coeffs = compute_coefficients(&table, cfg.schedule.lambda)?;
    let n = coeffs.n_cells();
    let (step_theta, step_sigma) = (0..=n).map(|i| coeffs.step_coeffs(i)).unzip();
    let image_size = cfg.degradation.image_size;
    let embed_dim = cfg.train.embed_dim;
    let expected_in = 2 * image_size * image_size + embed_dim;
    if layers[0].in_dim != expected_in
        || layers.last().unwrap().out_dim != image_size * image_size
    {
        return Err(RdbmError::Format {
            path: path.display().to_string(),
            reason: "layer dimensions do not match the embedded config".into(),
        });
    }
    Ok((
        DenoiserParams {
            layers,
            image_size,
            embed_dim,
            n_steps: n,
            step_theta,
            step_sigma,
        },
        cfg,
    ))
}

fn cmd_sample(
    model: &Path,
    degraded: &Path,
    steps: usize,
    mode: &str,
    seed: u64,
    out: &Path,
) -> Result<i32> {
    let (params, cfg) = load_model(model)?;
    print_resolved(
        "sample",
        &serde_json::json!({
            "model": model.display().to_string(),
            "schedule": cfg.schedule,
            "steps": steps,
            "mode": mode,
            "seed": seed,
        }),
    );
    let mu = read_pgm(degraded)?;
    if mu.shape() != [params.image_size, params.image_size] {
        return Err(RdbmError::shape(
            &[params.image_size, params.image_size],
            mu.shape(),
        ));
    }
    let table = build_table(&cfg.schedule)?;
    let coeffs = compute_coefficients(&table, cfg.schedule.lambda)?;
    let sample_mode = match mode {
        "posterior" => SampleMode::Posterior,
        _ => SampleMode::Ddim,
    };
    let predictor =
        |x: &TensorGrid, i: usize, m: &TensorGrid| predictor_forward(&params, x, i, m);
    let mut stream = Stream::named(seed, "sample.posterior");
    let restored = sample_loop(&predictor, &mu, &coeffs, steps, sample_mode, &mut stream)?;
    write_pgm(out, &restored.map(|v| v.clamp(0.0, 1.0)))?;
    println!("restored image written to {}", out.display());
    Ok(0)
}

fn cmd_reduce(variant: &str, theta: f64, out: &Option<PathBuf>) -> Result<i32> {
    if !(theta > 0.0) {
        return Err(RdbmError::InvalidConfig(format!(
            "--theta must be > 0, got {theta}"
        )));
    }
    print_resolved(
        "reduce",
        &serde_json::json!({ "variant": variant, "theta": theta }),
    );
    let base = ScheduleSpec::default();
    let mut rows: Vec<Vec<String>> = Vec::new();
    match variant {
        "brownian" => {
            let bv = BridgeVariant { kind: VariantKind::Brownian, small_theta: theta };
            let spec = bv.schedule_override(&base);
            let table = build_table(&spec)?;
            let coeffs = compute_coefficients(&table, spec.lambda)?;
            let mut max_theta_dev = 0.0f64;
            let mut max_sigma_dev = 0.0f64;
            for (i, &t) in table.t_grid.iter().enumerate() {
                let target_theta = 1.0 - t / spec.horizon;
                let target_sigma2 = t * (1.0 - t / spec.horizon);
                let dev_t = (coeffs.theta[i] - target_theta).abs();
                let dev_s = (coeffs.sigma[i] * coeffs.sigma[i] - target_sigma2).abs();
                max_theta_dev = max_theta_dev.max(dev_t);
                max_sigma_dev = max_sigma_dev.max(dev_s);
                rows.push(vec![
                    format_g17(t),
                    format_g17(coeffs.theta[i]),
                    format_g17(target_theta),
                    format_g17(dev_t),
                    format_g17(coeffs.sigma[i] * coeffs.sigma[i]),
                    format_g17(target_sigma2),
                    format_g17(dev_s),
                ]);
            }
            emit_reduce(out, &["t", "Theta", "theta_target", "theta_dev", "Sigma2", "sigma2_target", "sigma2_dev"], &rows)?;
            println!("max_theta_deviation {}", format_g17(max_theta_dev));
            println!("max_sigma2_deviation {}", format_g17(max_sigma_dev));
        }
        "ve" => {
            let spec = ScheduleSpec::constant(theta, base.horizon, base.steps, base.lambda);
            let mut max_dev = 0.0f64;
            for k in 1..20 {
                let t = k as f64 / 20.0 * 0.95 * spec.horizon;
                let coef = crate::bridge::bridge_drift_coefficient(&spec, t)?;
                let target = 1.0 / (spec.horizon - t);
                let dev = crate::math::rel_err(coef, target);
                max_dev = max_dev.max(dev);
                rows.push(vec![
                    format_g17(t),
                    format_g17(coef),
                    format_g17(target),
                    format_g17(dev),
                ]);
            }
            emit_reduce(out, &["t", "drift_coef", "target", "rel_dev"], &rows)?;
            println!("max_drift_rel_deviation {}", format_g17(max_dev));
        }
        "vp" => {
            let check = vp_substitution_check(0)?;
            println!("check {} {} ({})", check.name, if check.pass { "PASS" } else { "FAIL" }, check.detail);
            emit_reduce(out, &["check", "pass", "detail"], &[vec![
                check.name.clone(),
                check.pass.to_string(),
                check.detail.clone(),
            ]])?;
            return Ok(if check.pass { 0 } else { 1 });
        }
        "flow" => {
            // Zero noise profile: every simulated trajectory coincides.
            let cfg = SimConfig { trajectories: 2000, substeps_per_cell: 16, ..Default::default() };
            let moments = crate::sim::euler_maruyama_forward(&base, 1.0, 0.0, 0.0, &cfg)?;
            let mut max_var = 0.0f64;
            for m in &moments {
                max_var = max_var.max(m.var.abs());
                rows.push(vec![format_g17(m.t), format_g17(m.mean), format_g17(m.var)]);
            }
            emit_reduce(out, &["t", "mean", "stochastic_deviation"], &rows)?;
            println!("max_stochastic_deviation {}", format_g17(max_var));
        }
        other => {
            return Err(RdbmError::InvalidConfig(format!("unknown variant {other}")));
        }
    }
    Ok(0)
}

fn emit_reduce(out: &Option<PathBuf>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(path) = out {
        write_csv(path, header, rows)?;
        println!("table written to {}", path.display());
    }
    Ok(())
}

fn cmd_noisemap(model: &Path, step: Option<usize>, seed: u64, out: &Path) -> Result<i32> {
    let (params, cfg) = load_model(model)?;
    let table = build_table(&cfg.schedule)?;
    let coeffs = compute_coefficients(&table, cfg.schedule.lambda)?;
    let step = step.unwrap_or(coeffs.n_cells() / 2).clamp(1, coeffs.n_cells());
    print_resolved(
        "noisemap",
        &serde_json::json!({
            "model": model.display().to_string(),
            "step": step,
            "seed": seed,
        }),
    );
    // Held-out pair generated from the CLI seed, independent of the
    // training dataset indices.
    let heldout_spec = DegradationSpec { seed, ..cfg.degradation };
    let pair = make_toy_dataset(&heldout_spec, 1)?.remove(0);
    let (x0, mu) = pair;
    let mask = streak_mask(&heldout_spec, 0)?;
    let mut eps_stream = Stream::named(seed, "noisemap.eps");
    let eps = x0.normal_like(&mut eps_stream);
    let mut summary_rows = Vec::new();
    let mut summaries = Vec::new();
    for kind in [VariantKind::Rdbm, VariantKind::GlobalNoisePi1] {
        let label = match kind {
            VariantKind::Rdbm => "rdbm",
            _ => "pi1",
        };
        let pi = variant_pi(&BridgeVariant::new(kind), &x0, &mu)?;
        let x_t = crate::bridge::forward_sample(&x0, &mu, &pi, &coeffs, step, &eps)?;
        let pred = predictor_forward(&params, &x_t, step, &mu)?;
        let abs_map = pred.map(f64::abs);
        let (mut deg_sum, mut deg_n, mut intact_sum, mut intact_n) = (0.0, 0usize, 0.0, 0usize);
        for (v, m) in abs_map.data().iter().zip(mask.data().iter()) {
            if *m != 0.0 {
                deg_sum += v;
                deg_n += 1;
            } else {
                intact_sum += v;
                intact_n += 1;
            }
        }
        let deg_mean = if deg_n > 0 { deg_sum / deg_n as f64 } else { 0.0 };
        let intact_mean = if intact_n > 0 { intact_sum / intact_n as f64 } else { 0.0 };
        // Scale to the 8-bit range for the image; raw numbers go to the
        // summary.
        let peak = abs_map.data().iter().cloned().fold(0.0f64, f64::max).max(1e-12);
        let img_path = with_extension(out, &format!(".{label}.pgm"));
        write_pgm(&img_path, &abs_map.map(|v| v / peak))?;
        println!(
            "{label}: mean |prediction| degraded {} intact {} -> {}",
            format_g17(deg_mean),
            format_g17(intact_mean),
            img_path.display()
        );
        summary_rows.push(vec![
            label.to_string(),
            format_g17(deg_mean),
            format_g17(intact_mean),
        ]);
        summaries.push((label, deg_mean, intact_mean));
    }
    let summary_path = with_extension(out, ".summary.csv");
    write_csv(
        &summary_path,
        &["profile", "mean_abs_pred_degraded", "mean_abs_pred_intact"],
        &summary_rows,
    )?;
    println!("summary written to {}", summary_path.display());
    Ok(0)
}
