use std::path::Path;

use satgkdv::evolution::StopReason;
use satgkdv::modulation::Decomposer;
use satgkdv::reduced::{classify_l0, integrate_reduced, log_log_slope, ReducedParams, ReducedState};
use satgkdv::{saturation_exponent, Regime};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::experiment::{pipeline, write_json, Outcome};
use crate::initial::make_initial_data;
use crate::HarnessError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyMode {
    #[default]
    Pde,
    Reduced,
}

/// Fixed reduced-model starting point: `lambda0` and the conserved `L0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surrogate {
    #[serde(default = "unit")]
    pub lambda0: f64,
    #[serde(default)]
    pub l0: Option<f64>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaStudyConfig {
    pub base: ExperimentConfig,
    /// Strictly decreasing saturation strengths.
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub mode: StudyMode,
    #[serde(default)]
    pub surrogate: Option<Surrogate>,
    /// Also run the unsaturated flow from the same data.
    #[serde(default)]
    pub zero_reference: bool,
}

impl GammaStudyConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.base.validate()?;
        if self.gammas.len() < 2 {
            return Err(HarnessError::Config("need at least two gammas".into()));
        }
        if self.gammas.iter().any(|g| !(*g > 0.0)) || self.gammas.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(HarnessError::Config(format!("gammas {:?} must be positive and decreasing", self.gammas)));
        }
        if let Some(s) = self.surrogate {
            if !(s.lambda0 > 0.0) || s.l0.is_some_and(|l| !(l > 0.0)) {
                return Err(HarnessError::Config(format!("surrogate {s:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRun {
    pub gamma: f64,
    pub regime: Option<Regime>,
    pub lambda_inf: Option<f64>,
    pub reason: String,
    pub stop: Option<StopReason>,
    pub t_final: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub used: Vec<f64>,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub mode: StudyMode,
    pub q: f64,
    pub expected_exponent: f64,
    pub runs: Vec<StudyRun>,
    pub fit: Option<PowerFit>,
    pub fit_error: Option<String>,
    /// Gammas left out of the fit because they did not settle.
    pub shortfall: Vec<f64>,
    pub all_exit: bool,
    pub zero_reference: Option<StudyRun>,
    /// Conserved `L0` shared by all reduced runs.
    pub l0: Option<f64>,
}

fn summary(gamma: f64, out: &Outcome) -> StudyRun {
    let m = &out.manifest;
    StudyRun {
        gamma,
        regime: m.regime,
        lambda_inf: m.metrics.lambda_inf,
        reason: m.reason.clone(),
        stop: m.metrics.stop,
        t_final: m.metrics.t_final,
    }
}

/// Power law `lambda_inf = prefactor * gamma^exponent` by least squares in logs.
pub fn fit_power(gammas: &[f64], lambdas: &[f64], expected: f64) -> PowerFit {
    let exponent = log_log_slope(gammas, lambdas);
    let n = gammas.len() as f64;
    let mean = gammas.iter().zip(lambdas).map(|(g, l)| l.ln() - exponent * g.ln()).sum::<f64>() / n;
    PowerFit {
        exponent,
        prefactor: mean.exp(),
        used: gammas.to_vec(),
        relative_error: (exponent / expected - 1.0).abs(),
    }
}

/// Settled runs enter the fit when there are three of them, or when exactly
/// the two largest gammas settled; the remainder is reported as shortfall.
pub fn select_fit(runs: &[StudyRun], expected: f64) -> (Option<PowerFit>, Option<String>, Vec<f64>) {
    let settled: Vec<(f64, f64)> = runs
        .iter()
        .filter(|r| r.regime == Some(Regime::Soliton))
        .filter_map(|r| r.lambda_inf.map(|l| (r.gamma, l)))
        .collect();
    let shortfall: Vec<f64> = runs.iter().map(|r| r.gamma).filter(|g| !settled.iter().any(|(s, _)| s == g)).collect();
    let leading = settled.len() == 2 && settled[0].0 == runs[0].gamma && settled[1].0 == runs[1].gamma;
    if settled.len() >= 3 || leading {
        let (g, l): (Vec<f64>, Vec<f64>) = settled.into_iter().unzip();
        (Some(fit_power(&g, &l, expected)), None, shortfall)
    } else {
        let msg = format!("{} of {} runs settled to a soliton", settled.len(), runs.len());
        (None, Some(msg), shortfall)
    }
}

/// `lambda_inf` versus `gamma` from one initial datum built at the largest gamma.
pub fn gamma_limit_study(cfg: &GammaStudyConfig, out_dir: Option<&Path>) -> Result<StudyReport, HarnessError> {
    cfg.validate()?;
    let base = &cfg.base;
    let expected = 2.0 / (base.q - 1.0);
    let grid = base.evolution_config(cfg.gammas[0]).grid().map_err(|e| HarnessError::Config(e.to_string()))?;
    let u0 = make_initial_data(&base.initial, grid, cfg.gammas[0], base.q, base.effective_seed())?;
    let report = match cfg.mode {
        StudyMode::Pde => pde_study(cfg, &u0, expected, out_dir)?,
        StudyMode::Reduced => reduced_study(cfg, &u0, expected)?,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(HarnessError::io)?;
        write_json(&dir.join("study.json"), &report)?;
    }
    Ok(report)
}

fn pde_study(
    cfg: &GammaStudyConfig,
    u0: &satgkdv::grid::GridFunction,
    expected: f64,
    out_dir: Option<&Path>,
) -> Result<StudyReport, HarnessError> {
    let base = &cfg.base;
    let one = |gamma: f64, tag: String| -> Result<StudyRun, HarnessError> {
        let mut out = pipeline(base, gamma, u0)?;
        if let Some(dir) = out_dir {
            crate::experiment::write_outputs(&dir.join(tag), base, &mut out)?;
        }
        Ok(summary(gamma, &out))
    };
    let mut runs = Vec::with_capacity(cfg.gammas.len());
    for (i, &g) in cfg.gammas.iter().enumerate() {
        runs.push(one(g, format!("gamma_{i}"))?);
    }
    let zero_reference = if cfg.zero_reference { Some(one(0.0, "gamma_zero".into())?) } else { None };
    let (fit, fit_error, shortfall) = select_fit(&runs, expected);
    Ok(StudyReport {
        mode: StudyMode::Pde,
        q: base.q,
        expected_exponent: expected,
        all_exit: runs.iter().all(|r| r.regime == Some(Regime::Exit)),
        runs,
        fit,
        fit_error,
        shortfall,
        zero_reference,
        l0: None,
    })
}

/// Reduced flow to its plateau: `s_end` doubles until `|b| / lambda^2 <= 1e-7 L0`.
pub fn reduced_plateau(init: &ReducedState, l0: f64) -> Result<ReducedState, HarnessError> {
    let mut s_end = 1e3;
    while s_end <= 1e10 {
        let traj = integrate_reduced(init, s_end, 1e-11).map_err(HarnessError::numerical)?;
        let last = *traj.last().expect("non-empty");
        if (last.b / (last.lambda * last.lambda)).abs() <= 1e-7 * l0 {
            return Ok(last);
        }
        s_end *= 2.0;
    }
    Err(HarnessError::Numerical(format!("no plateau by s = {s_end:e}")))
}

fn reduced_study(cfg: &GammaStudyConfig, u0: &satgkdv::grid::GridFunction, expected: f64) -> Result<StudyReport, HarnessError> {
    let base = &cfg.base;
    let bank = crate::bank(base.q)?;
    let c0 = bank.c0().map_err(HarnessError::numerical)?;
    let sur = cfg.surrogate.unwrap_or(Surrogate { lambda0: 1.0, l0: None });
    let l0 = match sur.l0 {
        Some(l) => l,
        None => {
            let g0 = cfg.gammas[0];
            let dec = Decomposer::new(bank.clone(), g0, base.decompose);
            let ms = dec.decompose(u0, None).map_err(HarnessError::numerical)?;
            ReducedState::new(ms.lambda, ms.b, ReducedParams::with_c0(g0, base.q, c0)).l_of_s()
        }
    };
    if !(l0 > 0.0) {
        return Err(HarnessError::Numerical(format!("L0 = {l0:e} leaves no soliton regime")));
    }
    let m = saturation_exponent(base.q);
    let mut runs = Vec::with_capacity(cfg.gammas.len());
    for &g in &cfg.gammas {
        let params = ReducedParams::with_c0(g, base.q, c0);
        let b0 = sur.lambda0 * sur.lambda0 * (l0 - params.c1() * g / sur.lambda0.powf(m + 2.0));
        let init = ReducedState::new(sur.lambda0, b0, params);
        let end = reduced_plateau(&init, l0)?;
        runs.push(StudyRun {
            gamma: g,
            regime: Some(classify_l0(&init, 0.0)),
            lambda_inf: Some(end.lambda),
            reason: format!("b0 = {b0:.6e}, plateau at s = {:.3e}", end.s),
            stop: None,
            t_final: end.t,
        });
    }
    let (fit, fit_error, shortfall) = select_fit(&runs, expected);
    Ok(StudyReport {
        mode: StudyMode::Reduced,
        q: base.q,
        expected_exponent: expected,
        all_exit: runs.iter().all(|r| r.regime == Some(Regime::Exit)),
        runs,
        fit,
        fit_error,
        shortfall,
        zero_reference: None,
        l0: Some(l0),
    })
}
