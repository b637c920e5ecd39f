use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ebse_core::sim::DropModel;
use ebse_core::synthesis::Variant;

use crate::config::{ModelSource, RunConfig, TargetUnit, TraceFormat};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "ebse", version, about = "Event-based distributed state estimation: synthesis, simulation and sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize gains and thresholds; writes design.json, model.json and report.txt.
    Synth(RunArgs),
    /// Simulate the closed loop with a design file or a fresh design; writes trace and metrics.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Design to simulate instead of synthesizing one.
        #[arg(long)]
        design: Option<PathBuf>,
    },
    /// Performance versus communication: event-based rows over the sweep list plus baseline rows.
    Sweep(RunArgs),
    /// Reduced-rate centralized filter rows for divisors 1..=max_divisor.
    Baseline(RunArgs),
    /// Replay the two-agent input-sharing example step by step.
    DemoAppf {
        /// Run only one mode; both when absent.
        #[arg(long, value_enum)]
        input_sharing: Option<Toggle>,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Re-check every LMI block of a design against its model.
    VerifyDesign {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        design: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

/// Configuration file plus flat overrides.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in platoon with this many vehicles.
    #[arg(long, conflicts_with = "model")]
    pub platoon: Option<usize>,
    /// Model document (JSON).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Sampling time of the built-in platoon.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub j_max: Option<f64>,
    #[arg(long, value_enum)]
    pub j_unit: Option<UnitArg>,
    /// Comma-separated J_max list for sweeps.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub sweep: Option<Vec<f64>>,
    #[arg(long)]
    pub max_divisor: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Per-link loss probability; 0 disables drops.
    #[arg(long)]
    pub p_loss: Option<f64>,
    #[arg(long)]
    pub local_update: bool,
    #[arg(long)]
    pub input_sharing: bool,
    #[arg(long, value_enum)]
    pub trace_format: Option<FormatArg>,
    /// Worker threads for sweep simulations.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnitArg {
    Absolute,
    CStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Binary,
    None,
}

impl RunArgs {
    /// Reads the config file (or the defaults) and applies the flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(m) = self.platoon {
            let dt = match cfg.model {
                ModelSource::Platoon { dt, .. } => dt,
                ModelSource::File(_) => 0.02,
            };
            cfg.model = ModelSource::Platoon { vehicles: m, dt };
        }
        if let Some(p) = &self.model {
            cfg.model = ModelSource::File(p.clone());
        }
        if let Some(new_dt) = self.dt {
            match &mut cfg.model {
                ModelSource::Platoon { dt, .. } => *dt = new_dt,
                ModelSource::File(_) => return Err(CliError::Usage("--dt applies to the built-in platoon only".into())),
            }
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(j) = self.j_max {
            cfg.j_max = Some(j);
        }
        if let Some(u) = self.j_unit {
            cfg.j_unit = match u {
                UnitArg::Absolute => TargetUnit::Absolute,
                UnitArg::CStar => TargetUnit::CStar,
            };
        }
        if let Some(s) = &self.sweep {
            cfg.sweep.j_max = s.clone();
        }
        if let Some(r) = self.max_divisor {
            cfg.sweep.max_divisor = r;
        }
        if let Some(t) = self.tol {
            cfg.synthesis.tol = Some(t);
        }
        if let Some(h) = self.horizon {
            cfg.sim.horizon = h;
        }
        if let Some(s) = self.seed {
            cfg.sim.seed = s;
        }
        if let Some(s) = self.seeds {
            cfg.sim.seeds = s;
        }
        if let Some(p) = self.p_loss {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Usage(format!("--p-loss {p} must lie in [0, 1]")));
            }
            let drops = if p > 0.0 { DropModel::Bernoulli { p_loss: p } } else { DropModel::None };
            cfg.sim.drops = drops;
            cfg.sweep.drops = drops;
        }
        cfg.sim.local_update |= self.local_update;
        cfg.sim.input_sharing |= self.input_sharing;
        if let Some(f) = self.trace_format {
            cfg.sim.trace_format = match f {
                FormatArg::Csv => TraceFormat::Csv,
                FormatArg::Binary => TraceFormat::Binary,
                FormatArg::None => TraceFormat::None,
            };
        }
        if let Some(j) = self.jobs {
            cfg.sweep.jobs = j;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        Ok(())
    }
}
