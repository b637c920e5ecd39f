//! Run configuration. One JSON document drives every subcommand; flags given on
//! the command line replace the matching fields after the file is read.

use std::path::{Path, PathBuf};

use ebse_core::model::{platoon_with_lqr, ModelDocument, NoiseSpec, PartitionedSystem};
use ebse_core::sim::DropModel;
use ebse_core::synthesis::{Channel, Variant};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Exactly one model source; serde's external tagging rejects a document naming both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// The LQR-controlled platoon of `vehicles` cars, sampled at `dt`.
    Platoon {
        vehicles: usize,
        #[serde(default = "default_dt")]
        dt: f64,
    },
    /// A model document on disk.
    File(PathBuf),
}

/// How target values are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetUnit {
    #[default]
    Absolute,
    /// Multiples of the full-communication floor `c*`.
    CStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    #[default]
    Csv,
    Binary,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// Solver tolerance; the solver default when absent.
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Performance output. Anything but the estimation error runs the alternating driver.
    pub channel: Channel,
    pub max_rounds: usize,
    /// Relative slack for re-verifying the design's blocks.
    pub verify_slack: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { tol: None, max_iter: None, channel: Channel::EstimationError, max_rounds: 10, verify_slack: 10.0 * ebse_core::sdp::DEFAULT_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub horizon: usize,
    /// First seed; sweeps use `seed..seed + seeds`.
    pub seed: u64,
    pub seeds: usize,
    pub drops: DropModel,
    pub local_update: bool,
    pub input_sharing: bool,
    pub reset_period: Option<usize>,
    /// Velocity surplus of the leading vehicle (platoon models only).
    pub surplus_velocity: f64,
    /// Nominal inter-vehicle distance used for the positions file.
    pub spacing: f64,
    /// Initial state; overrides the platoon scenario when present.
    pub x0: Option<Vec<f64>>,
    pub window: usize,
    pub tail_fraction: f64,
    pub trace_format: TraceFormat,
    pub positions: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            horizon: 50_000,
            seed: 0,
            seeds: 20,
            drops: DropModel::Bernoulli { p_loss: 0.1 },
            local_update: false,
            input_sharing: false,
            reset_period: None,
            surplus_velocity: 5.0,
            spacing: 20.0,
            x0: None,
            window: 200,
            tail_fraction: 0.5,
            trace_format: TraceFormat::Csv,
            positions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub j_max: Vec<f64>,
    /// Baseline rows use rate divisors `1..=max_divisor`.
    pub max_divisor: usize,
    /// Sweeps start from rest and, by default, without drops so rows compare
    /// with the drop-free baseline.
    pub drops: DropModel,
    pub jobs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { j_max: Vec::new(), max_divisor: 200, drops: DropModel::None, jobs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSource,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    /// Replaces the model's own noise description.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub j_max: Option<f64>,
    #[serde(default)]
    pub j_unit: TargetUnit,
    #[serde(default)]
    pub synthesis: SynthSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_dt() -> f64 {
    0.02
}

fn default_variant() -> Variant {
    Variant::Cor2
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSource::Platoon { vehicles: 3, dt: default_dt() },
            variant: default_variant(),
            noise: None,
            j_max: None,
            j_unit: TargetUnit::Absolute,
            synthesis: SynthSection::default(),
            sim: SimSection::default(),
            sweep: SweepSection::default(),
            output: default_output(),
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self, CliError> {
        serde_json::from_str(s).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks everything that can be checked without building the model.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        match &self.model {
            ModelSource::Platoon { vehicles, dt } => {
                if *vehicles < 2 {
                    return bad(format!("a platoon needs at least 2 vehicles, got {vehicles}"));
                }
                if !(*dt > 0.0 && dt.is_finite()) {
                    return bad(format!("sampling time must be positive, got {dt}"));
                }
            }
            ModelSource::File(p) if !p.is_file() => return bad(format!("model file {} does not exist", p.display())),
            ModelSource::File(_) => {}
        }
        if let Some(j) = self.j_max {
            if !(j > 0.0 && j.is_finite()) {
                return bad(format!("J_max must be positive, got {j}"));
            }
        }
        if self.sweep.j_max.iter().any(|j| !(*j > 0.0 && j.is_finite())) {
            return bad("sweep J_max values must be positive".into());
        }
        let s = &self.sim;
        if s.horizon == 0 || s.seeds == 0 || s.window == 0 {
            return bad("horizon, seeds and window must be at least 1".into());
        }
        if !(s.tail_fraction > 0.0 && s.tail_fraction <= 1.0) {
            return bad(format!("tail fraction {} must lie in (0, 1]", s.tail_fraction));
        }
        if self.sweep.max_divisor == 0 || self.sweep.jobs == 0 {
            return bad("max_divisor and jobs must be at least 1".into());
        }
        if self.j_unit == TargetUnit::CStar && self.synthesis.channel != Channel::EstimationError {
            return bad("targets in units of c* need the estimation-error channel".into());
        }
        Ok(())
    }

    pub fn platoon_size(&self) -> Option<usize> {
        match self.model {
            ModelSource::Platoon { vehicles, .. } => Some(vehicles),
            ModelSource::File(_) => None,
        }
    }

    pub fn build_model(&self) -> Result<(PartitionedSystem, NoiseSpec), CliError> {
        let (sys, noise) = match &self.model {
            ModelSource::Platoon { vehicles, dt } => platoon_with_lqr(*vehicles, *dt)?,
            ModelSource::File(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read model {}: {e}", p.display())))?;
                ModelDocument::from_json(&text).map_err(|e| CliError::Usage(format!("model {}: {e}", p.display())))?.into_model()?
            }
        };
        let noise = match &self.noise {
            Some(n) => {
                n.validate(&sys)?;
                n.clone()
            }
            None => noise,
        };
        Ok((sys, noise))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(cfg: &RunConfig) {
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(&back, cfg);
        assert_eq!(back.to_json(), cfg.to_json());
    }

    #[test]
    fn default_round_trips() {
        round_trip(&RunConfig::default());
    }

    #[test]
    fn populated_round_trips() {
        let mut cfg = RunConfig {
            model: ModelSource::File("model.json".into()),
            variant: Variant::Cor3,
            j_max: Some(0.1 + 0.2),
            j_unit: TargetUnit::CStar,
            output: "runs/a".into(),
            ..RunConfig::default()
        };
        cfg.sim.drops = DropModel::MinSpacing { k0: 7 };
        cfg.sim.x0 = Some(vec![1.0 / 3.0, -2.5e-17]);
        cfg.sim.reset_period = Some(40);
        cfg.sim.trace_format = TraceFormat::Binary;
        cfg.synthesis.tol = Some(1e-11);
        cfg.synthesis.channel = Channel::Communication;
        cfg.sweep.j_max = vec![0.05, 0.38];
        cfg.noise = Some(platoon_with_lqr(2, 0.02).unwrap().1);
        round_trip(&cfg);
    }

    #[test]
    fn sparse_document_takes_defaults() {
        let cfg = RunConfig::from_json(r#"{"model": {"platoon": {"vehicles": 3}}, "j_max": 0.38}"#).unwrap();
        assert_eq!(cfg, RunConfig { j_max: Some(0.38), ..RunConfig::default() });
    }

    #[test]
    fn two_model_sources_are_rejected() {
        let doc = r#"{"model": {"platoon": {"vehicles": 3}, "file": "m.json"}}"#;
        assert!(RunConfig::from_json(doc).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_json(r#"{"model": {"platoon": {"vehicles": 3}}, "jmax": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"platoon": {"vehicles": 3}}, "sim": {"horizn": 1}}"#).is_err());
    }

    #[test]
    fn missing_model_file_fails_validation() {
        let cfg = RunConfig { model: ModelSource::File("/nonexistent/model.json".into()), ..RunConfig::default() };
        assert!(matches!(cfg.validate(), Err(CliError::Usage(_))));
    }
}
