use std::path::{Path, PathBuf};

use satgkdv::evolution::{EvolutionConfig, SpectralDamping, Sponge};
use satgkdv::modulation::{ClassifierConfig, DecomposeConfig};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

fn one() -> usize {
    1
}

fn default_ceiling() -> f64 {
    1e3
}

fn default_c_star() -> f64 {
    10.0
}

fn default_band() -> f64 {
    0.2
}

fn default_settle_fraction() -> f64 {
    0.2
}

fn default_settle_tol() -> f64 {
    0.02
}

fn default_probe_limit() -> f64 {
    1e4
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    pub half_length: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSettings {
    pub dt: f64,
    pub t_end: f64,
    /// Steps between snapshots when no interval is given.
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub snapshot_interval: Option<f64>,
    #[serde(default)]
    pub dealias: bool,
    #[serde(default)]
    pub cfl: Option<f64>,
    #[serde(default)]
    pub damping: Option<SpectralDamping>,
    #[serde(default)]
    pub sponge: Option<Sponge>,
    #[serde(default = "default_ceiling")]
    pub ux_ceiling: f64,
    #[serde(default)]
    pub resolution_tol: Option<f64>,
}

/// Smooth cut-off behind the initial soliton, see [`satgkdv::evolution::taper_behind`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Taper {
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialData {
    GroundState,
    Profile {
        b0: f64,
        #[serde(default)]
        taper: Option<Taper>,
    },
    /// Ground state plus a seeded smooth field of the given H1 size.
    Perturbed {
        #[serde(default)]
        seed: Option<u64>,
        amplitude: f64,
    },
    /// Ground state multiplied by `factor`.
    Scaled { factor: f64 },
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSettings {
    /// Overrides the computed `c1`.
    #[serde(default)]
    pub c1: Option<f64>,
    #[serde(default = "default_c_star")]
    pub c_star: f64,
    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default = "default_settle_fraction")]
    pub settle_fraction: f64,
    #[serde(default = "default_settle_tol")]
    pub settle_tol: f64,
    /// Probe samples needing a larger constant are flagged.
    #[serde(default = "default_probe_limit")]
    pub probe_limit: f64,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        ClassifierSettings {
            c1: None,
            c_star: default_c_star(),
            band: default_band(),
            settle_fraction: default_settle_fraction(),
            settle_tol: default_settle_tol(),
            probe_limit: default_probe_limit(),
        }
    }
}

impl ClassifierSettings {
    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            c_star: self.c_star,
            band: self.band,
            settle_fraction: self.settle_fraction,
            settle_tol: self.settle_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub q: f64,
    pub gamma: f64,
    pub grid: GridSettings,
    pub evolution: EvolutionSettings,
    pub initial: InitialData,
    #[serde(default)]
    pub classifier: ClassifierSettings,
    #[serde(default)]
    pub decompose: DecomposeConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.q > 5.0) {
            return bad(format!("q = {} must exceed 5", self.q));
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma = {} must be non-negative", self.gamma));
        }
        if self.evolution.stride == 0 {
            return bad("stride must be positive".into());
        }
        if let Some(d) = self.evolution.snapshot_interval {
            if !(d > 0.0) {
                return bad(format!("snapshot_interval = {d}"));
            }
        }
        match &self.initial {
            InitialData::Perturbed { amplitude, .. } if !(*amplitude > 0.0) => {
                return bad(format!("perturbation amplitude {amplitude} must be positive"));
            }
            InitialData::Scaled { factor } if !(*factor > 0.0) => return bad(format!("scale factor {factor}")),
            InitialData::Profile { taper: Some(t), .. } if !(t.end > t.start && t.start > 0.0) => {
                return bad(format!("taper {t:?}"));
            }
            _ => {}
        }
        let c = &self.classifier;
        if !(c.c_star > 0.0) || !(c.band >= 0.0) || !(c.settle_fraction > 0.0 && c.settle_fraction <= 1.0) {
            return bad(format!("classifier {c:?}"));
        }
        self.evolution_config(self.gamma)
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn evolution_config(&self, gamma: f64) -> EvolutionConfig {
        let e = &self.evolution;
        EvolutionConfig {
            gamma,
            q: self.q,
            domain_half_length: self.grid.half_length,
            n_modes: self.grid.n,
            dt: e.dt,
            t_end: e.t_end,
            dealias: e.dealias,
            damping: e.damping,
            sponge: e.sponge,
            cfl: e.cfl,
            snapshot_interval: e.snapshot_interval,
            ux_ceiling: e.ux_ceiling,
            resolution_tol: e.resolution_tol,
        }
    }

    /// Seed actually used for seeded initial data.
    pub fn effective_seed(&self) -> u64 {
        match self.initial {
            InitialData::Perturbed { seed: Some(s), .. } => s,
            _ => self.seed,
        }
    }
}
