//! Run configuration: a TOML file with every frequency in Hz.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionMode, AcquisitionParams, TuningPlan};
use crate::chain::{ChainParams, DetuningGrid, JpaGainProfile};
use crate::error::{Error, Result};
use crate::faxion::{AxionLineshape, FaxionConfig, ENVELOPE_DURATION};
use crate::pipeline::PipelineParams;
use crate::qnet::{angular, SystemParams};

/// Operating configuration of the converter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Quantum-limited: `g_C = √(κ_m κ_ℓ)/2`, `g_G = 0`.
    QL,
    /// Balanced: `g_C = g_G`.
    GC,
    /// Imbalanced: `g_C > g_G`.
    GCI,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::QL, Mode::GC, Mode::GCI];

    pub fn label(self) -> &'static str {
        match self {
            Mode::QL => "QL",
            Mode::GC => "GC",
            Mode::GCI => "GCI",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "QL" => Ok(Mode::QL),
            "GC" => Ok(Mode::GC),
            "GCI" => Ok(Mode::GCI),
            _ => Err(Error::Config(format!("unknown mode {s:?} (expected QL, GC or GCI)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub cavity_frequency_hz: f64,
    pub cavity_internal_loss_hz: f64,
    pub cavity_external_coupling_hz: f64,
    pub readout_frequency_hz: f64,
    pub readout_internal_loss_hz: f64,
    pub readout_external_coupling_hz: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            cavity_frequency_hz: 7.454e9,
            cavity_internal_loss_hz: 960e3,
            cavity_external_coupling_hz: 1220.0,
            readout_frequency_hz: 4.98e9,
            readout_internal_loss_hz: 0.0,
            readout_external_coupling_hz: 20.6e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    /// Balanced preset: `g_C = g_G` (Hz).
    pub gc_hz: f64,
    /// Imbalanced preset `g_C` (Hz).
    pub gci_g_c_hz: f64,
    /// Imbalanced preset `g_G` (Hz).
    pub gci_g_g_hz: f64,
}

impl Default for RatesSection {
    fn default() -> Self {
        Self {
            gc_hz: 7.30e6,
            gci_g_c_hz: 12.25e6,
            gci_g_g_hz: 11.76e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub efficiency: f64,
    pub temperature_k: f64,
    pub n_sys: f64,
    pub jpa_peak_gain_db: f64,
    pub jpa_bandwidth_hz: f64,
}

impl Default for ChainSection {
    fn default() -> Self {
        let c = ChainParams::default();
        Self {
            efficiency: c.efficiency,
            temperature_k: c.temperature,
            n_sys: c.n_sys,
            jpa_peak_gain_db: c.jpa.peak_gain_db,
            jpa_bandwidth_hz: c.jpa.bandwidth_hz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaxionSection {
    pub update_rate_hz: f64,
    pub modulation_depth_hz: f64,
    pub carrier_power: f64,
    pub rest_frequency_hz: f64,
    pub velocity_parameter: f64,
}

impl Default for FaxionSection {
    fn default() -> Self {
        let f = FaxionConfig::default();
        Self {
            update_rate_hz: f.update_rate,
            modulation_depth_hz: f.modulation_depth,
            carrier_power: f.carrier_power,
            rest_frequency_hz: f.lineshape.rest_frequency,
            velocity_parameter: f.lineshape.velocity_parameter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    pub sub_traces: usize,
    pub sub_trace_duration_s: f64,
    pub resolution_hz: f64,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        let a = AcquisitionParams::default();
        Self {
            sub_traces: a.sub_traces,
            sub_trace_duration_s: a.sub_trace_duration,
            resolution_hz: a.resolution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub step_size_hz: f64,
    pub window_hz: f64,
    pub init_window_hz: f64,
}

impl Default for PlanSection {
    fn default() -> Self {
        let p = TuningPlan::default();
        Self {
            step_size_hz: p.step_size,
            window_hz: p.window,
            init_window_hz: p.init_window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub half_span_hz: f64,
    pub spacing_hz: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = DetuningGrid::default();
        Self {
            half_span_hz: g.half_span_hz,
            spacing_hz: g.spacing_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeSection {
    pub duration_s: f64,
    pub seed: u64,
    /// Cache directory; relative paths resolve against the working directory.
    pub cache_dir: String,
}

impl Default for EnvelopeSection {
    fn default() -> Self {
        Self {
            duration_s: ENVELOPE_DURATION,
            seed: 0,
            cache_dir: "envelope-cache".into(),
        }
    }
}

/// Complete run configuration as written in the TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub trials: u32,
    pub master_seed: u64,
    pub acquisition_mode: AcquisitionMode,
    pub system: SystemSection,
    pub rates: RatesSection,
    pub chain: ChainSection,
    pub faxion: FaxionSection,
    pub acquisition: AcquisitionSection,
    pub plan: PlanSection,
    pub pipeline: PipelineParams,
    pub grid: GridSection,
    pub envelope: EnvelopeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::GC,
            trials: 30,
            master_seed: 1,
            acquisition_mode: AcquisitionMode::Fast,
            system: SystemSection::default(),
            rates: RatesSection::default(),
            chain: ChainSection::default(),
            faxion: FaxionSection::default(),
            acquisition: AcquisitionSection::default(),
            plan: PlanSection::default(),
            pipeline: PipelineParams::default(),
            grid: GridSection::default(),
            envelope: EnvelopeSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be ≥ 1".into()));
        }
        for mode in Mode::ALL {
            self.system_for(mode).validate()?;
        }
        if self.rates.gci_g_c_hz <= self.rates.gci_g_g_hz {
            return Err(Error::Config("GCI preset requires g_C > g_G".into()));
        }
        self.chain_params().validate()?;
        self.faxion_config().validate()?;
        self.acquisition_params().validate()?;
        self.tuning_plan().validate()?;
        self.tuning_plan().step_bins(self.acquisition.resolution_hz)?;
        if !(self.grid.spacing_hz > 0.0) || !(self.grid.half_span_hz > 0.0) {
            return Err(Error::Config("grid span and spacing must be > 0".into()));
        }
        Ok(())
    }

    /// Device parameters with the interaction rates of `mode` resolved.
    pub fn system_for(&self, mode: Mode) -> SystemParams {
        let s = &self.system;
        let mut p = SystemParams::from_hz(
            s.cavity_frequency_hz,
            s.cavity_internal_loss_hz,
            s.cavity_external_coupling_hz,
            s.readout_frequency_hz,
            s.readout_external_coupling_hz,
            0.0,
            0.0,
        );
        p.readout.internal_loss_rate = angular(s.readout_internal_loss_hz);
        match mode {
            Mode::QL => p.with_quantum_limited_rates(),
            Mode::GC => p.with_rates_hz(self.rates.gc_hz, self.rates.gc_hz),
            Mode::GCI => p.with_rates_hz(self.rates.gci_g_c_hz, self.rates.gci_g_g_hz),
        }
    }

    pub fn system(&self) -> SystemParams {
        self.system_for(self.mode)
    }

    pub fn chain_params(&self) -> ChainParams {
        let c = &self.chain;
        ChainParams {
            efficiency: c.efficiency,
            temperature: c.temperature_k,
            n_sys: c.n_sys,
            jpa: JpaGainProfile {
                peak_gain_db: c.jpa_peak_gain_db,
                bandwidth_hz: c.jpa_bandwidth_hz,
                center_hz: 0.0,
            },
            signal_frequency: angular(self.system.readout_frequency_hz),
        }
    }

    pub fn faxion_config(&self) -> FaxionConfig {
        let f = &self.faxion;
        FaxionConfig {
            update_rate: f.update_rate_hz,
            modulation_depth: f.modulation_depth_hz,
            carrier_power: f.carrier_power,
            lineshape: AxionLineshape {
                rest_frequency: f.rest_frequency_hz,
                velocity_parameter: f.velocity_parameter,
            },
        }
    }

    pub fn acquisition_params(&self) -> AcquisitionParams {
        let a = &self.acquisition;
        AcquisitionParams {
            sub_traces: a.sub_traces,
            sub_trace_duration: a.sub_trace_duration_s,
            resolution: a.resolution_hz,
            total_trace: a.sub_traces as f64 * a.sub_trace_duration_s,
        }
    }

    pub fn tuning_plan(&self) -> TuningPlan {
        let p = &self.plan;
        TuningPlan {
            step_size: p.step_size_hz,
            window: p.window_hz,
            init_window: p.init_window_hz,
            step_count: (p.window_hz / p.step_size_hz).round() as usize + 1,
        }
    }

    pub fn detuning_grid(&self) -> DetuningGrid {
        DetuningGrid {
            half_span_hz: self.grid.half_span_hz,
            spacing_hz: self.grid.spacing_hz,
        }
    }
}

/// Fully expanded configuration, echoed into every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub mode: Mode,
    pub trials: u32,
    pub master_seed: u64,
    pub acquisition_mode: AcquisitionMode,
    pub system: SystemParams,
    pub chain: ChainParams,
    pub faxion: FaxionConfig,
    pub acquisition: AcquisitionParams,
    pub plan: TuningPlan,
    pub pipeline: PipelineParams,
    pub grid: DetuningGrid,
    pub source: RunConfig,
}

impl From<&RunConfig> for ResolvedConfig {
    fn from(c: &RunConfig) -> Self {
        Self {
            mode: c.mode,
            trials: c.trials,
            master_seed: c.master_seed,
            acquisition_mode: c.acquisition_mode,
            system: c.system(),
            chain: c.chain_params(),
            faxion: c.faxion_config(),
            acquisition: c.acquisition_params(),
            plan: c.tuning_plan(),
            pipeline: c.pipeline,
            grid: c.detuning_grid(),
            source: c.clone(),
        }
    }
}
