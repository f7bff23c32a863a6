use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use satgkdv::evolution::{read_run, run, write_run};
use satgkdv::grid::{write_columns, Grid, GridFunction};
use satgkdv::groundstate::solve_ground_state;
use satgkdv::linearized::build_p;
use satgkdv::modulation::{evaluate_functionals, track, DecomposeConfig, Decomposer, WeightSet};
use satgkdv::profile::{build_localized, compute_psi, profile_energy, profile_mass, ProfileConfig};
use satgkdv::reduced::{basin, integrate_reduced, ReducedError, ReducedParams, ReducedState};
use satgkdv_cli::config::ExperimentConfig;
use satgkdv_cli::experiment::{functionals, run_experiment, write_json, write_modulation};
use satgkdv_cli::initial::make_initial_data;
use satgkdv_cli::study::{gamma_limit_study, GammaStudyConfig};
use satgkdv_cli::HarnessError;
use serde_json::json;

#[derive(Parser)]
#[command(name = "satgkdv", version, about = "Saturated critical gKdV toolkit")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct ProfileGrid {
    #[arg(long, default_value_t = 0.0)]
    omega: f64,
    #[arg(long, default_value_t = 7.0)]
    q: f64,
    #[arg(long, default_value_t = 40.0)]
    half_length: f64,
    #[arg(long, default_value_t = 4001)]
    n: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Ground state profile: x, Q, Q'.
    Groundstate(ProfileGrid),
    /// Nonlocal profile: y, P, Ptilde, Lambda_Q.
    ProfileP(ProfileGrid),
    /// Localized profile: y, Qb, Psi, chi.
    ProfileQb {
        #[command(flatten)]
        grid: ProfileGrid,
        #[arg(long)]
        b: f64,
    },
    /// Evolve the configured initial data and write every snapshot.
    Evolve,
    /// Decompose one field sampled on a uniform grid.
    Decompose {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 7.0)]
        q: f64,
    },
    /// Modulation parameters of a stored run.
    Track {
        #[arg(long)]
        series: PathBuf,
    },
    /// Reduced modulation flow in rescaled time.
    Reduced {
        #[arg(long)]
        lambda0: f64,
        #[arg(long)]
        b0: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 7.0)]
        q: f64,
        #[arg(long)]
        s_end: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Regime of the reduced flow over a box of initial data.
    ReducedBasin {
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 7.0)]
        q: f64,
        #[arg(long, num_args = 2, default_values_t = [0.5, 2.0])]
        lambda_range: Vec<f64>,
        #[arg(long, num_args = 2, default_values_t = [-0.05, 0.05])]
        b_range: Vec<f64>,
        #[arg(long, default_value_t = 21)]
        points: usize,
        #[arg(long, default_value_t = 1e-12)]
        zero_band: f64,
    },
    /// Evolve, track and classify one configuration.
    Experiment,
    /// Terminal soliton scale against the saturation strength.
    GammaStudy,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("satgkdv: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn out_dir(cli: &Cli, configured: Option<&Path>) -> Result<PathBuf, HarnessError> {
    let dir = cli.out_dir.clone().or_else(|| configured.map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(HarnessError::io)?;
    Ok(dir)
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let path = cli.config.as_deref().ok_or_else(|| HarnessError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) -> Result<(), HarnessError> {
    println!("{}", serde_json::to_string_pretty(v).map_err(HarnessError::numerical)?);
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<i32, HarnessError> {
    match &cli.command {
        Command::Groundstate(p) => {
            let grid = Grid::make_symmetric(p.half_length, p.n).map_err(|e| HarnessError::Config(e.to_string()))?;
            let gs = solve_ground_state(p.omega, p.q, grid).map_err(HarnessError::numerical)?;
            let dir = out_dir(cli, None)?;
            let x = grid.nodes();
            write_columns(&dir.join("groundstate.csv"), &["x", "Q", "dQ"], &[&x, &gs.profile.values, &gs.derivative.values])
                .map_err(HarnessError::io)?;
            let summary = json!({
                "omega": p.omega, "q": p.q, "center": gs.center, "mass": gs.mass(),
                "newton_iterations": gs.newton_iterations,
            });
            write_json(&dir.join("groundstate.json"), &summary)?;
            print_json(&summary)?;
            Ok(0)
        }
        Command::ProfileP(p) => {
            let grid = Grid::make_symmetric(p.half_length, p.n).map_err(|e| HarnessError::Config(e.to_string()))?;
            let gs = solve_ground_state(p.omega, p.q, grid).map_err(HarnessError::numerical)?;
            let np = build_p(&gs).map_err(HarnessError::numerical)?;
            let dir = out_dir(cli, None)?;
            let y = grid.nodes();
            write_columns(
                &dir.join("profile_p.csv"),
                &["y", "P", "Ptilde", "Lambda_Q"],
                &[&y, &np.p.values, &np.p_tilde.values, &np.lambda_q.values],
            )
            .map_err(HarnessError::io)?;
            let summary = json!({
                "omega": p.omega, "q": p.q, "left_limit": np.left_limit, "f_omega": np.f_omega,
                "integral_q": np.integral_q,
            });
            write_json(&dir.join("profile_p.json"), &summary)?;
            print_json(&summary)?;
            Ok(0)
        }
        Command::ProfileQb { grid: p, b } => {
            let grid = Grid::make_symmetric(p.half_length, p.n).map_err(|e| HarnessError::Config(e.to_string()))?;
            let gs = solve_ground_state(p.omega, p.q, grid).map_err(HarnessError::numerical)?;
            let np = build_p(&gs).map_err(HarnessError::numerical)?;
            let lp = build_localized(*b, &gs, &np, &ProfileConfig::default()).map_err(HarnessError::numerical)?;
            let dir = out_dir(cli, None)?;
            let y = grid.nodes();
            let psi = compute_psi(&lp).map_err(HarnessError::numerical)?;
            write_columns(
                &dir.join("profile_qb.csv"),
                &["y", "Qb", "Psi", "chi"],
                &[&y, &lp.q_b.values, &psi.values, &lp.chi.values],
            )
            .map_err(HarnessError::io)?;
            let summary = json!({
                "omega": p.omega, "q": p.q, "b": b, "mass": profile_mass(&lp),
                "energy": profile_energy(&lp).map_err(HarnessError::numerical)?,
            });
            write_json(&dir.join("profile_qb.json"), &summary)?;
            print_json(&summary)?;
            Ok(0)
        }
        Command::Evolve => {
            let cfg = experiment_config(cli)?;
            let evo = cfg.evolution_config(cfg.gamma);
            let grid = evo.grid().map_err(|e| HarnessError::Config(e.to_string()))?;
            let u0 = make_initial_data(&cfg.initial, grid, cfg.gamma, cfg.q, cfg.effective_seed())?;
            let result = run(&u0, &evo, cfg.evolution.stride).map_err(HarnessError::numerical)?;
            let dir = out_dir(cli, cfg.out_dir.as_deref())?;
            write_run(&dir, &evo, &result).map_err(HarnessError::io)?;
            print_json(&json!({
                "stop": result.stop, "steps": result.steps, "snapshots": result.snapshots.len(),
                "max_mass_drift": result.max_mass_drift, "max_energy_drift": result.max_energy_drift,
            }))?;
            Ok(0)
        }
        Command::Decompose { input, gamma, q } => {
            let u = GridFunction::read_csv(input).map_err(|e| HarnessError::Config(format!("{}: {e}", input.display())))?;
            let bank = satgkdv_cli::bank(*q)?;
            let rho = bank.rho().map_err(HarnessError::numerical)?;
            let dec = Decomposer::new(bank, *gamma, DecomposeConfig::default());
            let ms = dec.decompose(&u, None).map_err(HarnessError::numerical)?;
            let rep = evaluate_functionals(&ms, &WeightSet::default(), &rho, *q).map_err(HarnessError::numerical)?;
            print_json(&json!({
                "lambda": ms.lambda, "b": ms.b, "x": ms.x_center, "omega": ms.omega,
                "residual": ms.newton_residual, "iterations": ms.iterations, "N1": rep.n1, "N2": rep.n2,
            }))?;
            Ok(0)
        }
        Command::Track { series } => {
            let cfg = experiment_config(cli)?;
            let evo = cfg.evolution_config(cfg.gamma);
            let snaps = read_run(series, &evo).map_err(|e| HarnessError::Config(e.to_string()))?;
            let bank = satgkdv_cli::bank(cfg.q)?;
            let c1 = match cfg.classifier.c1 {
                Some(c) => c,
                None => bank.c1().map_err(HarnessError::numerical)?,
            };
            let dec = Decomposer::new(bank, cfg.gamma, cfg.decompose);
            let tr = track(&dec, &snaps);
            let reports = functionals(&tr.states, cfg.q)?;
            let dir = out_dir(cli, Some(series))?;
            write_modulation(&dir.join("modulation.csv"), &tr.states, &reports, c1, cfg.classifier.c_star)?;
            print_json(&json!({
                "tracked": tr.states.len(),
                "failure": tr.failure.as_ref().map(|f| format!("t = {}: {}", f.t, f.error)),
            }))?;
            Ok(if tr.failure.is_some() { 3 } else { 0 })
        }
        Command::Reduced { lambda0, b0, gamma, q, s_end, tol } => {
            let init = ReducedState::new(*lambda0, *b0, ReducedParams::new(*gamma, *q));
            let (traj, code) = match integrate_reduced(&init, *s_end, *tol) {
                Ok(t) => (t, 0),
                Err(ReducedError::BlowUpDetected { states, s, b }) => {
                    log::warn!("b diverged to {b:e} at s = {s}");
                    (states, 0)
                }
                Err(ReducedError::InvalidArgument(m)) => return Err(HarnessError::Config(m)),
                Err(e) => return Err(HarnessError::numerical(e)),
            };
            let dir = out_dir(cli, None)?;
            let mut w = csv::Writer::from_path(dir.join("reduced.csv")).map_err(HarnessError::io)?;
            w.write_record(["s", "t", "lambda", "b", "x", "L_of_s"]).map_err(HarnessError::io)?;
            for r in &traj {
                let row = [r.s, r.t, r.lambda, r.b, r.x, r.l_of_s()];
                w.write_record(row.iter().map(|v| format!("{v:.17e}"))).map_err(HarnessError::io)?;
            }
            w.flush().map_err(HarnessError::io)?;
            Ok(code)
        }
        Command::ReducedBasin { gamma, q, lambda_range, b_range, points, zero_band } => {
            if *points < 2 || !(lambda_range[0] > 0.0) {
                return Err(HarnessError::Config("need two or more points and positive lambda".into()));
            }
            let axis = |r: &[f64]| -> Vec<f64> {
                (0..*points).map(|i| r[0] + (r[1] - r[0]) * i as f64 / (*points - 1) as f64).collect()
            };
            let map = basin(&axis(lambda_range), &axis(b_range), &ReducedParams::new(*gamma, *q), *zero_band);
            let dir = out_dir(cli, None)?;
            let mut w = csv::Writer::from_path(dir.join("basin.csv")).map_err(HarnessError::io)?;
            w.write_record(["lambda0", "b0", "regime"]).map_err(HarnessError::io)?;
            for (l, b, r) in map {
                w.write_record([format!("{l:.17e}"), format!("{b:.17e}"), r.to_string()]).map_err(HarnessError::io)?;
            }
            w.flush().map_err(HarnessError::io)?;
            Ok(0)
        }
        Command::Experiment => {
            let cfg = experiment_config(cli)?;
            let dir = out_dir(cli, cfg.out_dir.as_deref())?;
            let out = run_experiment(&cfg, Some(&dir))?;
            let m = &out.manifest;
            print_json(&json!({
                "regime": m.regime, "reason": m.reason, "lambda_inf": m.metrics.lambda_inf,
                "final_lambda": m.metrics.final_lambda, "final_b": m.metrics.final_b,
            }))?;
            Ok(m.exit_code())
        }
        Command::GammaStudy => {
            let path = cli.config.as_deref().ok_or_else(|| HarnessError::Config("--config is required".into()))?;
            let mut cfg = GammaStudyConfig::load(path)?;
            if let Some(s) = cli.seed {
                cfg.base.seed = s;
            }
            let dir = out_dir(cli, cfg.base.out_dir.as_deref())?;
            let report = gamma_limit_study(&cfg, Some(&dir))?;
            print_json(&serde_json::to_value(&report).map_err(HarnessError::numerical)?)?;
            Ok(if report.fit.is_some() { 0 } else { 4 })
        }
    }
}
