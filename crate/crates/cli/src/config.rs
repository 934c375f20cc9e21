//! Versioned experiment configuration.
//!
//! Configs are TOML with a strict schema: unknown fields are rejected, the
//! seed is mandatory so no run depends on wall-clock state, and
//! `parse(serialize(c))` returns `c` exactly.

use couplab_core::testbed::ExampleParams;
use couplab_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GammaTable,
    BigGamma,
    Conv1,
    Unique,
    Conv2,
    WeakInProb,
    Mixing,
    EChain,
    Supermartingale,
    Sdde,
    Example,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 11] = [
        ExperimentKind::GammaTable,
        ExperimentKind::BigGamma,
        ExperimentKind::Conv1,
        ExperimentKind::Unique,
        ExperimentKind::Conv2,
        ExperimentKind::WeakInProb,
        ExperimentKind::Mixing,
        ExperimentKind::EChain,
        ExperimentKind::Supermartingale,
        ExperimentKind::Sdde,
        ExperimentKind::Example,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::GammaTable => "gamma-table",
            ExperimentKind::BigGamma => "big-gamma",
            ExperimentKind::Conv1 => "conv1",
            ExperimentKind::Unique => "unique",
            ExperimentKind::Conv2 => "conv2",
            ExperimentKind::WeakInProb => "weak-in-prob",
            ExperimentKind::Mixing => "mixing",
            ExperimentKind::EChain => "e-chain",
            ExperimentKind::Supermartingale => "supermartingale",
            ExperimentKind::Sdde => "sdde",
            ExperimentKind::Example => "example",
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            ExperimentKind::GammaTable => {
                "exact pairwise closeness table over horizon and threshold grids"
            }
            ExperimentKind::BigGamma => {
                "averaged closeness under the invariant law; checks monotone growth in n"
            }
            ExperimentKind::Conv1 => {
                "positivity of the long-run closeness proxy (finite chains exactly, \
                 pair samplers by Monte-Carlo occupation)"
            }
            ExperimentKind::Unique => "invariant law with a uniqueness verdict",
            ExperimentKind::Conv2 => "pairwise closeness in probability along a pair sampler",
            ExperimentKind::WeakInProb => {
                "mass of starting states whose laws stay far from the invariant law"
            }
            ExperimentKind::Mixing => "decay of stationary covariances for a coordinate observable",
            ExperimentKind::EChain => {
                "uniform closeness of law sequences started in shrinking neighborhoods"
            }
            ExperimentKind::Supermartingale => {
                "one-step averaging inequality for the closeness table"
            }
            ExperimentKind::Sdde => {
                "delay-equation pair integration: gap contraction and change-of-measure checks"
            }
            ExperimentKind::Example => "runs an instance's built-in assertions",
        }
    }
}

/// Optional overrides of the built-in instance parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsPatch {
    pub modulus: Option<u64>,
    pub denominator: Option<u64>,
    pub sequence_len: Option<usize>,
    pub depth: Option<usize>,
    pub truncation: Option<usize>,
    pub grid: Option<u64>,
    pub rotation: Option<u64>,
    pub sampler_grid: Option<u64>,
    pub sampler_rotation: Option<u64>,
    pub switch_scale: Option<f64>,
    pub switch_power: Option<f64>,
}

impl ParamsPatch {
    pub fn apply(&self, mut base: ExampleParams) -> ExampleParams {
        if let Some(v) = self.modulus {
            base.modulus = v;
        }
        if let Some(v) = self.denominator {
            base.denominator = v;
        }
        if let Some(v) = self.sequence_len {
            base.sequence_len = v;
        }
        if let Some(v) = self.depth {
            base.depth = v;
        }
        if let Some(v) = self.truncation {
            base.truncation = v;
        }
        if let Some(v) = self.grid {
            base.grid = v;
        }
        if let Some(v) = self.rotation {
            base.rotation = v;
        }
        if let Some(v) = self.sampler_grid {
            base.sampler_grid = v;
        }
        if let Some(v) = self.sampler_rotation {
            base.sampler_rotation = v;
        }
        if let Some(v) = self.switch_scale {
            base.switch_scale = v;
        }
        if let Some(v) = self.switch_power {
            base.switch_power = v;
        }
        base
    }
}

/// What to run on: a catalog anchor or a chain definition file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRef {
    pub anchor: Option<String>,
    pub chain_file: Option<PathBuf>,
    /// Metric name for chain-file instances; catalog instances carry their
    /// own metric.
    pub metric: Option<String>,
    /// Probe or start state (index for finite chains, numerator for the
    /// coupled rotation pair).
    #[serde(default)]
    pub x0: usize,
    /// Second start where a kind needs a pair; defaults per kind.
    pub y0: Option<usize>,
    #[serde(default, skip_serializing_if = "is_default_patch")]
    pub params: ParamsPatch,
}

fn is_default_patch(p: &ParamsPatch) -> bool {
    *p == ParamsPatch::default()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    #[serde(default)]
    pub horizons: Vec<usize>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub dts: Vec<f64>,
}

fn default_reps() -> usize {
    200
}
fn default_n_max() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// 0 keeps the ambient thread pool.
    #[serde(default)]
    pub threads: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            reps: default_reps(),
            n_max: default_n_max(),
            threads: 0,
        }
    }
}

fn default_mass_tol() -> f64 {
    0.01
}
fn default_decay_tol() -> f64 {
    1e-6
}
fn default_refute_floor() -> f64 {
    0.25
}
fn default_support_ceiling() -> f64 {
    0.1
}
fn default_gamma_min() -> f64 {
    0.05
}
fn default_mass_fraction() -> f64 {
    0.999
}
fn default_occupation_threshold() -> f64 {
    0.5
}
fn default_min_ess() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// weak-in-prob: acceptable far-state mass at the end of the grid.
    #[serde(default = "default_mass_tol")]
    pub mass_tol: f64,
    /// mixing: covariance magnitude treated as fully decayed.
    #[serde(default = "default_decay_tol")]
    pub decay_tol: f64,
    /// mixing and e-chain: persisting magnitude that refutes.
    #[serde(default = "default_refute_floor")]
    pub refute_floor: f64,
    /// e-chain: sup distance that still supports.
    #[serde(default = "default_support_ceiling")]
    pub support_ceiling: f64,
    /// conv1: closeness proxy each pair must reach.
    #[serde(default = "default_gamma_min")]
    pub gamma_min: f64,
    /// conv1: pair mass fraction that must reach it.
    #[serde(default = "default_mass_fraction")]
    pub mass_fraction: f64,
    /// conv1/conv2 Monte-Carlo: occupation or closeness target.
    #[serde(default = "default_occupation_threshold")]
    pub occupation_threshold: f64,
    /// Monte-Carlo: minimum effective sample size before verdicts.
    #[serde(default = "default_min_ess")]
    pub min_ess: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            mass_tol: default_mass_tol(),
            decay_tol: default_decay_tol(),
            refute_floor: default_refute_floor(),
            support_ceiling: default_support_ceiling(),
            gamma_min: default_gamma_min(),
            mass_fraction: default_mass_fraction(),
            occupation_threshold: default_occupation_threshold(),
            min_ess: default_min_ess(),
        }
    }
}

fn default_system() -> String {
    "linear".to_string()
}
fn default_t_max() -> f64 {
    20.0
}
fn default_x0() -> f64 {
    1.0
}
fn default_cap() -> f64 {
    1e3
}
fn default_threshold_frac() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SddeSettings {
    #[serde(default = "default_system")]
    pub system: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Both components start from constant segments at these levels.
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default)]
    pub y0: f64,
    /// Control-integral cap; exceeding it counts as a divergent repetition.
    #[serde(default = "default_cap")]
    pub cap: f64,
    /// Contraction threshold as a fraction of lambda (absolute when lambda
    /// is 0).
    #[serde(default = "default_threshold_frac")]
    pub threshold_frac: f64,
}

impl Default for SddeSettings {
    fn default() -> Self {
        Self {
            system: default_system(),
            params: BTreeMap::new(),
            t_max: default_t_max(),
            x0: default_x0(),
            y0: 0.0,
            cap: default_cap(),
            threshold_frac: default_threshold_frac(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub kind: ExperimentKind,
    /// Master seed; every derived stream comes from it.
    pub seed: u64,
    /// Output directory; the --out flag overrides it.
    pub out: Option<PathBuf>,
    pub instance: Option<InstanceRef>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub sdde: Option<SddeSettings>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::InvalidInput(format!(
                "config version {} (this build reads {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn serialize(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidInput(format!("config serialize: {e}")))
    }

    /// Structural checks shared by `parse` and the validate-config command;
    /// each failure names the offending grid or field.
    pub fn validate(&self) -> Result<()> {
        let need_instance = !matches!(self.kind, ExperimentKind::Sdde);
        if need_instance {
            let inst = self
                .instance
                .as_ref()
                .ok_or_else(|| Error::InvalidInput(format!(
                    "kind {} needs an [instance] table",
                    self.kind.name()
                )))?;
            match (&inst.anchor, &inst.chain_file) {
                (None, None) => {
                    return Err(Error::InvalidInput(
                        "instance needs an anchor or a chain_file".into(),
                    ))
                }
                (Some(_), Some(_)) => {
                    return Err(Error::InvalidInput(
                        "instance anchor and chain_file are mutually exclusive".into(),
                    ))
                }
                _ => {}
            }
        }
        let nonempty_horizons = || -> Result<()> {
            if self.grids.horizons.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "kind {} needs a nonempty horizons grid",
                    self.kind.name()
                )));
            }
            Ok(())
        };
        let nonempty_epsilons = || -> Result<()> {
            if self.grids.epsilons.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "kind {} needs a nonempty epsilons grid",
                    self.kind.name()
                )));
            }
            if self.grids.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                return Err(Error::InvalidInput("epsilons must be finite and >= 0".into()));
            }
            Ok(())
        };
        match self.kind {
            ExperimentKind::GammaTable
            | ExperimentKind::BigGamma
            | ExperimentKind::Conv1
            | ExperimentKind::Conv2
            | ExperimentKind::Supermartingale => {
                nonempty_horizons()?;
                nonempty_epsilons()?;
            }
            ExperimentKind::WeakInProb | ExperimentKind::EChain => {
                nonempty_horizons()?;
                nonempty_epsilons()?;
            }
            ExperimentKind::Mixing => {
                nonempty_horizons()?;
            }
            ExperimentKind::Sdde => {
                if self.grids.lambdas.is_empty() {
                    return Err(Error::InvalidInput(
                        "kind sdde needs a nonempty lambdas grid".into(),
                    ));
                }
                if self.grids.dts.is_empty() {
                    return Err(Error::InvalidInput(
                        "kind sdde needs a nonempty dts grid".into(),
                    ));
                }
                if self
                    .grids
                    .lambdas
                    .iter()
                    .any(|l| !(l.is_finite() && *l >= 0.0))
                {
                    return Err(Error::InvalidInput("lambdas must be finite and >= 0".into()));
                }
                if self.grids.dts.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                    return Err(Error::InvalidInput("dts must be finite and > 0".into()));
                }
            }
            ExperimentKind::Unique | ExperimentKind::Example => {}
        }
        if self.run.reps < 2 && !matches!(self.kind, ExperimentKind::Example | ExperimentKind::Unique)
        {
            return Err(Error::InvalidInput("run.reps must be at least 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(kind: &str, extra: &str) -> String {
        format!(
            "version = 1\nkind = \"{kind}\"\nseed = 7\n{extra}"
        )
    }

    #[test]
    fn round_trips_exactly() {
        let text = minimal(
            "conv1",
            "[instance]\nanchor = \"aperiodic-5\"\n[grids]\nhorizons = [1, 2, 4]\nepsilons = [0.1, 0.05]\n",
        );
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let re = ExperimentConfig::parse(&cfg.serialize().unwrap()).unwrap();
        assert_eq!(cfg, re);
    }

    #[test]
    fn seed_is_mandatory() {
        let err = ExperimentConfig::parse("version = 1\nkind = \"unique\"\n[instance]\nanchor = \"5.2\"\n")
            .unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = minimal("unique", "[instance]\nanchor = \"5.2\"\nbogus = 1\n");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = "version = 2\nkind = \"unique\"\nseed = 1\n[instance]\nanchor = \"5.2\"\n";
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn empty_grids_fail_per_kind() {
        let err = ExperimentConfig::parse(&minimal(
            "conv1",
            "[instance]\nanchor = \"aperiodic-5\"\n",
        ))
        .unwrap_err();
        assert!(err.to_string().contains("horizons"), "{err}");
        let err = ExperimentConfig::parse(&minimal("sdde", "")).unwrap_err();
        assert!(err.to_string().contains("lambdas"), "{err}");
    }

    #[test]
    fn instance_reference_is_exclusive() {
        let err = ExperimentConfig::parse(&minimal(
            "unique",
            "[instance]\nanchor = \"5.2\"\nchain_file = \"c.toml\"\n",
        ))
        .unwrap_err();
        assert!(err.to_string().contains("mutually exclusive"), "{err}");
        let err = ExperimentConfig::parse(&minimal("unique", "[instance]\n")).unwrap_err();
        assert!(err.to_string().contains("anchor or a chain_file"), "{err}");
    }

    #[test]
    fn params_patch_applies_overrides() {
        let patch = ParamsPatch {
            modulus: Some(101),
            switch_power: Some(2.0),
            ..ParamsPatch::default()
        };
        let p = patch.apply(ExampleParams::default());
        assert_eq!(p.modulus, 101);
        assert_eq!(p.switch_power, 2.0);
        assert_eq!(p.grid, ExampleParams::default().grid);
    }
}
