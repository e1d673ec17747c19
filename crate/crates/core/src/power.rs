//! Analytic energy model: weight-loading memory energy (SRAM or DDR) plus
//! compute energy, driven by per-component invocation counts.
//!
//! Every invocation reloads the component's full weights; there is no
//! cross-invocation cache. Weights are INT8, so bytes equal parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RuntimeStats;
use crate::model::ModelConfig;
use crate::synth::Preset;

/// Nominal encoder size used for energy estimates.
pub const ENCODER_PARAMS: u64 = 68_000_000;
/// Nominal predictor size used for energy estimates.
pub const PREDICTOR_PARAMS: u64 = 6_000_000;

/// Assumptions printed alongside every energy report.
pub const ASSUMPTIONS: &[&str] = &[
    "weights are reloaded from their memory on every invocation (no cross-invocation cache)",
    "weights are INT8: one byte per parameter",
    "encoder and predictor stay DDR-resident regardless of size",
    "a joiner path is SRAM-resident iff its weight bytes <= sram_capacity",
    "encoder and predictor use nominal sizes of 68M and 6M parameters",
    "one encoder invocation per encoder output frame",
    "compute is 2 ops per weight per invocation; activations are ignored",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerParams {
    /// pJ per byte read from DDR.
    pub ddr_energy: f64,
    /// pJ per byte read from local SRAM.
    pub sram_energy: f64,
    /// Ops per second per milliwatt.
    pub compute_efficiency: f64,
    /// Local buffer capacity in bytes.
    pub sram_capacity: u64,
}

impl Default for PowerParams {
    fn default() -> Self {
        PowerParams {
            ddr_energy: 120.0,
            sram_energy: 1.5,
            compute_efficiency: 5e9,
            sram_capacity: 2 * 1024 * 1024,
        }
    }
}

impl PowerParams {
    /// Energy per op in pJ: 5 GOPS/mW is 1e-3 J/s over 5e9 op/s = 0.2 pJ/op.
    pub fn pj_per_op(&self) -> f64 {
        1e9 / self.compute_efficiency
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.ddr_energy, self.sram_energy, self.compute_efficiency]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive || self.sram_capacity == 0 {
            return Err(Error::Config("power parameters must be positive".into()));
        }
        if self.sram_energy >= self.ddr_energy {
            return Err(Error::Config("sram_energy must be below ddr_energy".into()));
        }
        Ok(())
    }

    /// Reads a JSON file; missing fields keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let p: PowerParams = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Placement {
    Sram,
    Ddr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentProfile {
    pub name: String,
    pub weight_bytes: u64,
    pub invocations: u64,
    pub ops_per_invocation: u64,
    /// False pins the component to DDR.
    pub sram_eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEnergy {
    pub name: String,
    pub placement: Placement,
    pub invocations: u64,
    /// pJ.
    pub memory_energy: f64,
    /// pJ.
    pub compute_energy: f64,
}

impl ComponentEnergy {
    pub fn total(&self) -> f64 {
        self.memory_energy + self.compute_energy
    }
}

/// Energy in pJ per component and in total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub components: Vec<ComponentEnergy>,
    pub memory_energy: f64,
    pub compute_energy: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn component(&self, name: &str) -> Option<&ComponentEnergy> {
        self.components.iter().find(|c| c.name == name)
    }
}

pub fn place(profile: &ComponentProfile, params: &PowerParams) -> Placement {
    if profile.sram_eligible && profile.weight_bytes <= params.sram_capacity {
        Placement::Sram
    } else {
        Placement::Ddr
    }
}

pub fn estimate_energy(profiles: &[ComponentProfile], params: &PowerParams) -> EnergyBreakdown {
    let pj_per_op = params.pj_per_op();
    let components: Vec<ComponentEnergy> = profiles
        .iter()
        .map(|p| {
            let placement = place(p, params);
            let rate = match placement {
                Placement::Sram => params.sram_energy,
                Placement::Ddr => params.ddr_energy,
            };
            let n = p.invocations as f64;
            ComponentEnergy {
                name: p.name.clone(),
                placement,
                invocations: p.invocations,
                memory_energy: n * p.weight_bytes as f64 * rate,
                compute_energy: n * p.ops_per_invocation as f64 * pj_per_op,
            }
        })
        .collect();
    let memory_energy = components.iter().map(|c| c.memory_energy).sum();
    let compute_energy = components.iter().map(|c| c.compute_energy).sum();
    EnergyBreakdown {
        components,
        memory_energy,
        compute_energy,
        total: memory_energy + compute_energy,
    }
}

/// Percentage reduction of `b` relative to the baseline `a`.
pub fn compare_runs(a: &EnergyBreakdown, b: &EnergyBreakdown) -> Result<f64> {
    if a.total <= 0.0 {
        return Err(Error::UndefinedMetric("energy comparison needs a positive baseline"));
    }
    Ok(100.0 * (1.0 - b.total / a.total))
}

/// Static size of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub name: String,
    pub weight_bytes: u64,
    pub ops_per_invocation: u64,
    pub sram_eligible: bool,
}

/// Component sizes for energy estimates: nominal encoder and predictor,
/// joiner sizes from the configuration.
pub fn footprint(config: &ModelConfig) -> Vec<Footprint> {
    let mut out = vec![
        Footprint {
            name: "encoder".into(),
            weight_bytes: ENCODER_PARAMS,
            ops_per_invocation: 2 * ENCODER_PARAMS,
            sram_eligible: false,
        },
        Footprint {
            name: "predictor".into(),
            weight_bytes: PREDICTOR_PARAMS,
            ops_per_invocation: 2 * PREDICTOR_PARAMS,
            sram_eligible: false,
        },
    ];
    for c in config.component_sizes() {
        if c.name.starts_with("joiner") {
            out.push(Footprint {
                name: c.name.clone(),
                weight_bytes: c.params,
                ops_per_invocation: c.ops,
                sram_eligible: true,
            });
        }
    }
    out
}

/// Footprint of the full-size counterpart of a preset.
pub fn preset_footprint(preset: Preset) -> Vec<Footprint> {
    footprint(&preset.full_size().config())
}

/// Attaches measured invocation counts to a footprint.
pub fn profiles_from_stats(footprint: &[Footprint], stats: &RuntimeStats) -> Result<Vec<ComponentProfile>> {
    footprint
        .iter()
        .map(|f| {
            let invocations = match f.name.as_str() {
                "encoder" => stats.frames,
                "predictor" => stats.predictor_calls,
                "joiner" => stats.full_joiner_calls,
                "joiner_blank" => stats.blank_joiner_calls,
                "joiner_nonblank" => stats.nonblank_joiner_calls,
                other => return Err(Error::Config(format!("no invocation counter for component {other:?}"))),
            };
            Ok(ComponentProfile {
                name: f.name.clone(),
                weight_bytes: f.weight_bytes,
                invocations,
                ops_per_invocation: f.ops_per_invocation,
                sram_eligible: f.sram_eligible,
            })
        })
        .collect()
}
