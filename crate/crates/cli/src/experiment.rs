use std::path::Path;

use satgkdv::evolution::{run, FieldState, RunResult, Solver, StopReason};
use satgkdv::grid::{write_columns, GridFunction};
use satgkdv::modulation::{
    classify_regime, evaluate_functionals, monotonicity_probe, separation_margin, track, Classification, Decomposer,
    FunctionalReport, ModulationState, TrackResult, WeightSet,
};
use satgkdv::Regime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::initial::make_initial_data;
use crate::HarnessError;

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub const MODULATION_COLUMNS: [&str; 17] = [
    "t", "s", "lambda", "b", "x", "omega", "N1", "N2", "J1", "J2", "F11", "F12", "F21", "F22", "tail10",
    "b_plus_c1_omega", "margin",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub samples: usize,
    pub noise: f64,
    pub mu: f64,
    pub c_fit: f64,
    pub violations: usize,
    pub c_tail: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub c1: f64,
    pub initial_mass: f64,
    pub initial_energy: f64,
    pub stop: Option<StopReason>,
    pub t_final: f64,
    pub snapshots: usize,
    pub steps: usize,
    pub max_mass_drift: f64,
    pub max_energy_drift: f64,
    pub tracked: usize,
    pub track_failure: Option<String>,
    pub final_lambda: Option<f64>,
    pub final_b: Option<f64>,
    pub lambda_inf: Option<f64>,
    pub max_margin: Option<f64>,
    pub min_margin: Option<f64>,
    pub probe: Option<ProbeSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub gamma: f64,
    pub seed: u64,
    pub stages: Vec<StageStatus>,
    pub regime: Option<Regime>,
    pub reason: String,
    pub metrics: Metrics,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn failed(&self) -> bool {
        self.stages.iter().any(|s| !s.ok)
    }

    /// 0 success, 3 failed stage, 4 undetermined regime.
    pub fn exit_code(&self) -> i32 {
        if self.failed() {
            3
        } else if self.regime == Some(Regime::Undetermined) {
            4
        } else {
            0
        }
    }
}

/// Everything one pipeline pass produced.
pub struct Outcome {
    pub manifest: RunManifest,
    pub run: Option<RunResult>,
    pub track: Option<TrackResult>,
    pub reports: Vec<FunctionalReport>,
    pub classification: Option<Classification>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Functionals of every tracked state.
pub fn functionals(states: &[ModulationState], q: f64) -> Result<Vec<FunctionalReport>, HarnessError> {
    let bank = crate::bank(q)?;
    let rho = bank.rho().map_err(HarnessError::numerical)?;
    let w = WeightSet::default();
    states.iter().map(|m| evaluate_functionals(m, &w, &rho, q).map_err(HarnessError::numerical)).collect()
}

/// Mean `lambda` over the trailing `fraction` of the time span.
pub fn plateau_lambda(states: &[ModulationState], fraction: f64) -> Option<f64> {
    let (first, last) = (states.first()?, states.last()?);
    let from = last.t - fraction * (last.t - first.t);
    let tail: Vec<f64> = states.iter().filter(|m| m.t >= from).map(|m| m.lambda).collect();
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Evolve `u0` under saturation `gamma`, track and classify.
pub fn pipeline(cfg: &ExperimentConfig, gamma: f64, u0: &GridFunction) -> Result<Outcome, HarnessError> {
    let evo = cfg.evolution_config(gamma);
    let bank = crate::bank(cfg.q)?;
    let c1 = match cfg.classifier.c1 {
        Some(c) => c,
        None => bank.c1().map_err(HarnessError::numerical)?,
    };
    let mut manifest = RunManifest {
        version: VERSION.to_string(),
        config: cfg.clone(),
        gamma,
        seed: cfg.effective_seed(),
        stages: Vec::new(),
        regime: None,
        reason: String::new(),
        metrics: Metrics { c1, ..Metrics::default() },
        files: Vec::new(),
    };
    log::info!("evolving gamma = {gamma} to t = {}", evo.t_end);
    let result = match run(u0, &evo, cfg.evolution.stride) {
        Ok(r) => r,
        Err(e) => {
            manifest.stages.push(StageStatus { stage: "evolve".into(), ok: false, detail: e.to_string() });
            manifest.reason = format!("evolution failed: {e}");
            return Ok(Outcome { manifest, run: None, track: None, reports: Vec::new(), classification: None });
        }
    };
    let m = &mut manifest.metrics;
    m.initial_mass = result.snapshots[0].mass;
    m.initial_energy = result.snapshots[0].energy;
    m.stop = Some(result.stop);
    m.t_final = result.snapshots.last().map_or(0.0, |s| s.t);
    m.snapshots = result.snapshots.len();
    m.steps = result.steps;
    m.max_mass_drift = result.max_mass_drift;
    m.max_energy_drift = result.max_energy_drift;
    manifest.stages.push(StageStatus {
        stage: "evolve".into(),
        ok: true,
        detail: format!("{:?} after {} steps at t = {}", result.stop, result.steps, m.t_final),
    });

    log::info!("tracking {} snapshots", result.snapshots.len());
    let dec = Decomposer::new(bank, gamma, cfg.decompose);
    let tr = track(&dec, &result.snapshots);
    let reports = functionals(&tr.states, cfg.q)?;
    let m = &mut manifest.metrics;
    m.tracked = tr.states.len();
    m.track_failure = tr.failure.as_ref().map(|f| format!("t = {}: {}", f.t, f.error));
    m.final_lambda = tr.states.last().map(|s| s.lambda);
    m.final_b = tr.states.last().map(|s| s.b);
    manifest.stages.push(StageStatus {
        stage: "track".into(),
        ok: true,
        detail: format!("{} states{}", tr.states.len(), if tr.failure.is_some() { ", truncated" } else { "" }),
    });

    let n1: Vec<f64> = reports.iter().map(|r| r.n1).collect();
    let cls = classify_regime(&tr.states, &n1, tr.failure.as_ref(), c1, &cfg.classifier.classifier());
    let m = &mut manifest.metrics;
    m.max_margin = finite(cls.max_margin);
    m.min_margin = finite(cls.min_margin);
    if cls.regime == Regime::Soliton {
        m.lambda_inf = plateau_lambda(&tr.states, cfg.classifier.settle_fraction);
    }
    if tr.states.len() >= 3 {
        match monotonicity_probe(&tr.states, &reports, None, cfg.classifier.probe_limit) {
            Ok(p) => {
                m.probe = Some(ProbeSummary {
                    samples: p.samples.len(),
                    noise: p.noise,
                    mu: p.mu,
                    c_fit: p.c_fit,
                    violations: p.violations.len(),
                    c_tail: p.c_tail,
                })
            }
            Err(e) => log::warn!("probe skipped: {e}"),
        }
    }
    manifest.regime = Some(cls.regime);
    manifest.reason = cls.reason.clone();
    manifest.stages.push(StageStatus { stage: "classify".into(), ok: true, detail: cls.regime.to_string() });
    Ok(Outcome { manifest, run: Some(result), track: Some(tr), reports, classification: Some(cls) })
}

/// Build the initial data, run the pipeline and write outputs to `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Outcome, HarnessError> {
    cfg.validate()?;
    let grid = cfg.evolution_config(cfg.gamma).grid().map_err(|e| HarnessError::Config(e.to_string()))?;
    let u0 = make_initial_data(&cfg.initial, grid, cfg.gamma, cfg.q, cfg.effective_seed())?;
    let mut out = pipeline(cfg, cfg.gamma, &u0)?;
    if let Some(dir) = out_dir {
        write_outputs(dir, cfg, &mut out)?;
    }
    Ok(out)
}

pub fn sha256_file(path: &Path) -> Result<FileEntry, HarnessError> {
    let bytes = std::fs::read(path).map_err(HarnessError::io)?;
    let digest = Sha256::digest(&bytes);
    Ok(FileEntry {
        name: path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        bytes: bytes.len() as u64,
    })
}

pub fn write_series(path: &Path, cfg: &ExperimentConfig, gamma: f64, snapshots: &[FieldState]) -> Result<(), HarnessError> {
    let mut solver = Solver::new(&cfg.evolution_config(gamma)).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut cols: [Vec<f64>; 5] = Default::default();
    for s in snapshots {
        cols[0].push(s.t);
        cols[1].push(s.mass);
        cols[2].push(s.energy);
        cols[3].push(s.u.sup_norm());
        cols[4].push(solver.l2_ux(&s.u.values));
    }
    write_columns(path, &["t", "mass", "energy", "sup_u", "l2_ux"], &[&cols[0], &cols[1], &cols[2], &cols[3], &cols[4]])
        .map_err(HarnessError::io)
}

pub fn write_modulation(
    path: &Path,
    states: &[ModulationState],
    reports: &[FunctionalReport],
    c1: f64,
    c_star: f64,
) -> Result<(), HarnessError> {
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(states.len()); MODULATION_COLUMNS.len()];
    for (m, r) in states.iter().zip(reports) {
        let row = [
            m.t,
            m.s,
            m.lambda,
            m.b,
            m.x_center,
            m.omega,
            r.n1,
            r.n2,
            r.j1,
            r.j2,
            r.f[0][0],
            r.f[0][1],
            r.f[1][0],
            r.f[1][1],
            r.tail10,
            m.b + c1 * m.omega,
            separation_margin(m, r.n1, c1, c_star),
        ];
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
    }
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    write_columns(path, &MODULATION_COLUMNS, &refs).map_err(HarnessError::io)
}

pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &mut Outcome) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io)?;
    let mut files = Vec::new();
    if let Some(run) = &out.run {
        let p = dir.join("series.csv");
        write_series(&p, cfg, out.manifest.gamma, &run.snapshots)?;
        files.push(sha256_file(&p)?);
    }
    if let Some(tr) = &out.track {
        let p = dir.join("modulation.csv");
        write_modulation(&p, &tr.states, &out.reports, out.manifest.metrics.c1, cfg.classifier.c_star)?;
        files.push(sha256_file(&p)?);
    }
    out.manifest.files = files;
    write_json(&dir.join("manifest.json"), &out.manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).map_err(HarnessError::numerical)?;
    text.push('\n');
    std::fs::write(path, text).map_err(HarnessError::io)
}
