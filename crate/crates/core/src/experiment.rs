//! Assembly of a configured search: device model, faxion injection and the
//! analysis chain for one operating mode.

use serde::{Deserialize, Serialize};

use crate::acquisition::{
    run_search, AcquisitionMode, FaxionInjection, SearchSetup, SearchTruth, SpectrumGrid, SpectrumModel,
};
use crate::chain::{self, ChainParams, ConfigurationSweep, ScanRateReport};
use crate::config::{Mode, RunConfig};
use crate::error::Result;
use crate::exec::Execution;
use crate::faxion::{EnvelopeCache, SpectralEnvelope};
use crate::pipeline::{run_trial, PipelineParams, SearchOutcome, TrialAnalysis};
use crate::qnet::SystemParams;

/// Envelope for `cfg`, loaded from or written to its cache directory.
pub fn load_envelope(cfg: &RunConfig, force: bool) -> Result<SpectralEnvelope> {
    EnvelopeCache::new(&cfg.envelope.cache_dir).load_or_compute(
        &cfg.faxion_config(),
        cfg.acquisition.resolution_hz,
        cfg.envelope.duration_s,
        cfg.envelope.seed,
        force,
    )
}

/// Visibility sweep of one mode on the configured detuning grid.
pub fn visibility_sweep(cfg: &RunConfig, mode: Mode, exec: Execution) -> Result<ConfigurationSweep> {
    chain::sweep(&cfg.system_for(mode), &cfg.chain_params(), &cfg.detuning_grid().points_hz(), exec)
}

/// Scan-rate reports for QL, GC and GCI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRateSummary {
    #[serde(rename = "QL")]
    pub ql: ScanRateReport,
    #[serde(rename = "GC")]
    pub gc: ScanRateReport,
    #[serde(rename = "GCI")]
    pub gci: ScanRateReport,
    pub gc_over_ql: f64,
    pub gci_over_ql: f64,
}

pub fn scan_rate_summary(cfg: &RunConfig, exec: Execution) -> Result<ScanRateSummary> {
    let ql = visibility_sweep(cfg, Mode::QL, exec)?.report()?;
    let gc = visibility_sweep(cfg, Mode::GC, exec)?.report()?;
    let gci = visibility_sweep(cfg, Mode::GCI, exec)?.report()?;
    Ok(ScanRateSummary {
        gc_over_ql: chain::enhancement_ratio(&gc, &ql)?,
        gci_over_ql: chain::enhancement_ratio(&gci, &ql)?,
        ql,
        gc,
        gci,
    })
}

/// One operating mode ready to run trials.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub mode: Mode,
    pub system: SystemParams,
    pub chain: ChainParams,
    pub pipeline: PipelineParams,
    pub envelope: SpectralEnvelope,
    pub setup: SearchSetup,
    pub visibility: Vec<f64>,
    /// Maximum candidate-to-truth distance counted as a hit, Hz.
    pub hit_tolerance_hz: f64,
}

/// Analysis products and bookkeeping of one trial.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub truth: SearchTruth,
    pub outcome: SearchOutcome,
    pub analysis: TrialAnalysis,
}

impl Experiment {
    pub fn build(cfg: &RunConfig, mode: Mode, envelope: SpectralEnvelope, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let system = cfg.system_for(mode);
        let chain = cfg.chain_params();
        let plan = cfg.tuning_plan();
        let params = cfg.acquisition_params();
        let grid = SpectrumGrid::for_plan(&plan, params.resolution, &envelope);
        let model = SpectrumModel::new(&system, &chain, grid, exec)?;
        let visibility = model.visibility();
        let faxion = cfg.faxion_config();
        let injection = if faxion.carrier_power > 0.0 {
            Some(FaxionInjection::calibrated(
                faxion,
                envelope.clone(),
                FaxionInjection::ql_reference_gain(&system)?,
            )?)
        } else {
            None
        };
        Ok(Self {
            mode,
            system,
            chain,
            pipeline: cfg.pipeline,
            envelope,
            setup: SearchSetup {
                model,
                injection,
                plan,
                params,
            },
            visibility,
            hit_tolerance_hz: faxion.modulation_depth,
        })
    }

    pub fn run_trial(&self, master_seed: u64, trial: u32, mode: AcquisitionMode, exec: Execution) -> Result<TrialRecord> {
        let run = run_search(&self.setup, master_seed, trial, mode, exec)?;
        self.analyze(run.analysis, run.truth, exec)
    }

    pub fn analyze(
        &self,
        input: crate::acquisition::AnalysisInput,
        truth: SearchTruth,
        exec: Execution,
    ) -> Result<TrialRecord> {
        let analysis = run_trial(input, &self.visibility, &self.envelope, &self.pipeline, exec)?;
        let outcome = SearchOutcome::new(&analysis.candidate, &analysis.grand, &truth, self.hit_tolerance_hz);
        Ok(TrialRecord {
            truth,
            outcome,
            analysis,
        })
    }
}
