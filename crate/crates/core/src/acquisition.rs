//! Per-step spectrum acquisition: mean-PSD model, fast radiometric draws,
//! time-domain synthesis, and the tuning-plan search driver.
//!
//! Spectra live on a folded grid `k = 0..=K` of bins `k·Δν` away from the LO
//! (placed at the readout band center). The unfolded spectrum is symmetric
//! about the LO, so a faxion at detuning `d` also appears at its mirror `−d`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::chain::{self, ChainParams};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::faxion::{FaxionConfig, SpectralEnvelope};
use crate::qnet::{self, angular, InputOccupations, SystemParams};
use crate::rng::{self, Domain};

/// Averaging parameters of one raw spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub sub_traces: usize,
    /// s.
    pub sub_trace_duration: f64,
    /// Hz.
    pub resolution: f64,
    /// s.
    pub total_trace: f64,
}

impl Default for AcquisitionParams {
    fn default() -> Self {
        Self {
            sub_traces: 32,
            sub_trace_duration: 5e-3,
            resolution: 200.0,
            total_trace: 0.16,
        }
    }
}

impl AcquisitionParams {
    pub fn with_sub_traces(n: usize) -> Self {
        let base = Self::default();
        Self {
            sub_traces: n,
            total_trace: n as f64 * base.sub_trace_duration,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sub_traces == 0 || !(self.sub_trace_duration > 0.0) {
            return Err(Error::InvalidParameter("need ≥ 1 sub-trace of positive duration".into()));
        }
        if (self.resolution * self.sub_trace_duration - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("resolution must equal 1/sub_trace_duration".into()));
        }
        if (self.total_trace - self.sub_traces as f64 * self.sub_trace_duration).abs() > 1e-9 * self.total_trace.max(1.0) {
            return Err(Error::InvalidParameter("total_trace must equal sub_traces · sub_trace_duration".into()));
        }
        Ok(())
    }

    /// Expected fractional standard deviation of a raw-spectrum bin.
    pub fn radiometer_sigma(&self) -> f64 {
        1.0 / (self.sub_traces as f64 * self.sub_trace_duration * self.resolution).sqrt()
    }
}

/// Tuning schedule of the faxion relative to the fixed cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningPlan {
    /// Hz.
    pub step_size: f64,
    /// Hz.
    pub window: f64,
    /// Hz.
    pub init_window: f64,
    pub step_count: usize,
}

impl Default for TuningPlan {
    fn default() -> Self {
        Self {
            step_size: 10e3,
            window: 26e6,
            init_window: 1e6,
            step_count: 2601,
        }
    }
}

impl TuningPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.window >= 0.0) || !(self.init_window >= 0.0) {
            return Err(Error::InvalidParameter("tuning plan sizes must be positive".into()));
        }
        let expected = (self.window / self.step_size).round() as usize + 1;
        if self.step_count != expected {
            return Err(Error::InvalidParameter(format!(
                "step_count {} ≠ window/step_size + 1 = {expected}",
                self.step_count
            )));
        }
        Ok(())
    }

    /// Initialization window `[lo, hi]` (Hz from the cavity) just below the tuned range.
    pub fn init_range_hz(&self) -> (f64, f64) {
        let c = -0.5 * self.window;
        (c - 0.5 * self.init_window, c + 0.5 * self.init_window)
    }

    /// Step size in bins; fails unless it is an integer multiple of `resolution`.
    pub fn step_bins(&self, resolution: f64) -> Result<i64> {
        let r = self.step_size / resolution;
        if (r - r.round()).abs() > 1e-9 || r.round() < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "step size {} Hz is not an integer multiple of the {} Hz resolution",
                self.step_size, resolution
            )));
        }
        Ok(r.round() as i64)
    }
}

/// Folded detector grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumGrid {
    pub resolution: f64,
    /// Highest folded bin `K`.
    pub half_bins: usize,
}

impl SpectrumGrid {
    /// Grid covering every faxion position of the plan plus the envelope support.
    pub fn for_plan(plan: &TuningPlan, resolution: f64, envelope: &SpectralEnvelope) -> Self {
        let (lo, _) = plan.init_range_hz();
        let margin = envelope.first_bin.unsigned_abs() as usize + envelope.len();
        Self {
            resolution,
            half_bins: (lo.abs() / resolution).ceil() as usize + margin,
        }
    }

    pub fn len(&self) -> usize {
        self.half_bins + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn detuning_hz(&self, k: usize) -> f64 {
        k as f64 * self.resolution
    }
}

/// Noise and signal-gain profile of one configuration on a folded grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumModel {
    pub grid: SpectrumGrid,
    /// Total measured noise PSD, vacuum units.
    pub noise: Vec<f64>,
    /// Axion-port to measured-quadrature power gain.
    pub signal_gain: Vec<f64>,
}

impl SpectrumModel {
    pub fn new(system: &SystemParams, chain: &ChainParams, grid: SpectrumGrid, exec: Execution) -> Result<Self> {
        system.validate()?;
        chain.validate()?;
        let rows = exec.map_indexed(grid.len(), |k| -> Result<(f64, f64)> {
            let d = angular(grid.detuning_hz(k));
            let psd = qnet::port_psd(system, d, &InputOccupations::default())?;
            Ok((chain::total_noise_psd(&psd, chain, d)?, psd.signal_gain))
        });
        let rows: Vec<(f64, f64)> = rows.into_iter().collect::<Result<_>>()?;
        Ok(Self {
            grid,
            noise: rows.iter().map(|r| r.0).collect(),
            signal_gain: rows.iter().map(|r| r.1).collect(),
        })
    }

    /// Visibility per folded bin for a unit axion-port PSD.
    pub fn visibility(&self) -> Vec<f64> {
        self.signal_gain.iter().zip(&self.noise).map(|(g, n)| g / n).collect()
    }
}

/// Faxion injection: envelope in bin masses and the power calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaxionInjection {
    pub config: FaxionConfig,
    pub envelope: SpectralEnvelope,
    /// Per-bin tone power at the axion port that yields `carrier_power` peak under QL.
    pub calibration: f64,
}

impl FaxionInjection {
    /// Calibrate against the quantum-limited on-resonance signal gain.
    pub fn calibrated(config: FaxionConfig, envelope: SpectralEnvelope, ql_gain_on_resonance: f64) -> Result<Self> {
        config.validate()?;
        let peak = envelope.bin_masses().into_iter().fold(0.0, f64::max);
        if !(peak > 0.0) || !(ql_gain_on_resonance > 0.0) {
            return Err(Error::ZeroDenominator("calibration needs a nonzero envelope and QL gain".into()));
        }
        Ok(Self {
            calibration: config.carrier_power / (ql_gain_on_resonance * peak),
            config,
            envelope,
        })
    }

    /// Quantum-limited on-resonance gain for the cavity of `system`.
    pub fn ql_reference_gain(system: &SystemParams) -> Result<f64> {
        let ql = system.with_quantum_limited_rates();
        Ok(qnet::port_psd(&ql, 0.0, &InputOccupations::default())?.signal_gain)
    }

    fn mass(&self, masses: &[f64], j: i64) -> f64 {
        let i = j - self.envelope.first_bin;
        if i >= 0 && (i as usize) < masses.len() {
            masses[i as usize]
        } else {
            0.0
        }
    }
}

/// Mean PSD per folded bin with the faxion carrier at signed bin `carrier_bin`.
pub fn expected_psd(model: &SpectrumModel, faxion: Option<(&FaxionInjection, i64)>) -> Result<Vec<f64>> {
    let mut out = model.noise.clone();
    if let Some((inj, c)) = faxion {
        if (inj.envelope.resolution_hz - model.grid.resolution).abs() > 1e-9 * model.grid.resolution {
            return Err(Error::GridMismatch("envelope and spectrum resolutions differ".into()));
        }
        let masses = inj.envelope.bin_masses();
        let first = inj.envelope.first_bin;
        let last = first + masses.len() as i64 - 1;
        let k_max = model.grid.half_bins as i64;
        // Direct image at k = c + j, mirror at k = −(c + j).
        for j in first..=last {
            for k in [c + j, -(c + j)] {
                if (0..=k_max).contains(&k) {
                    let k = k as usize;
                    out[k] += inj.calibration * model.signal_gain[k] * inj.mass(&masses, j);
                }
            }
        }
    }
    Ok(out)
}

/// One averaged spectrum on the folded grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSpectrum {
    pub step_index: usize,
    pub resolution: f64,
    pub psd: Vec<f32>,
}

impl RawSpectrum {
    /// RF frequency of folded bin `k` given the LO frequency.
    pub fn bin_frequency(&self, lo_hz: f64, k: usize) -> f64 {
        lo_hz + k as f64 * self.resolution
    }
}

/// Radiometric draw: each bin is the mean of `n` exponential periodogram
/// values, i.e. Gamma(`n`, mean/`n`). The LO bin of a real quadrature is χ²₁
/// per sub-trace, hence Gamma(`n/2`, 2·mean/`n`).
pub fn simulate_step_fast<R: Rng + ?Sized>(means: &[f64], params: &AcquisitionParams, rng: &mut R) -> Result<Vec<f32>> {
    if means.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::InvalidParameter("mean PSD must be > 0".into()));
    }
    let n = params.sub_traces as f64;
    let bulk = Gamma::new(n, 1.0 / n).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let dc = Gamma::new(0.5 * n, 2.0 / n).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(means
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let g: f64 = if k == 0 { dc.sample(rng) } else { bulk.sample(rng) };
            (m * g) as f32
        })
        .collect())
}

fn interp(values: &[f64], x: f64) -> f64 {
    let last = values.len() - 1;
    if x <= 0.0 {
        return values[0];
    }
    if x >= last as f64 {
        return values[last];
    }
    let i = x.floor() as usize;
    let f = x - i as f64;
    values[i] * (1.0 - f) + values[i + 1] * f
}

/// Full time-domain synthesis of one step.
///
/// A real quadrature record of `n` sub-traces is built in the frequency
/// domain from white noise shaped to `model.noise` plus the FM faxion cosine
/// shaped by `√signal_gain`. Each sub-trace is Fourier transformed and the
/// positive-frequency periodograms `|Y_k|²/N` are averaged; the negative
/// frequencies of a real record carry the same values, so the folded
/// spectrum is the symmetrized one.
pub fn simulate_step_timedomain<R: Rng + ?Sized, T: Rng + ?Sized>(
    model: &SpectrumModel,
    faxion: Option<(&FaxionInjection, i64)>,
    params: &AcquisitionParams,
    noise_rng: &mut R,
    track_rng: &mut T,
) -> Result<Vec<f32>> {
    params.validate()?;
    if (params.resolution - model.grid.resolution).abs() > 1e-9 * params.resolution {
        return Err(Error::GridMismatch("acquisition and model resolutions differ".into()));
    }
    let n_sub = params.sub_traces;
    let n = 2 * model.grid.len();
    let len = n * n_sub;
    let fs = n as f64 * params.resolution;

    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(noise_rng.sample(StandardNormal), 0.0))
        .collect();
    if let Some((inj, c)) = faxion {
        let cfg = &inj.config;
        let amplitude = (4.0 * inj.calibration / n as f64).sqrt();
        let carrier = c as f64 * params.resolution;
        let mut phase = 0.0f64;
        let mut segment = u64::MAX;
        let mut freq = carrier;
        for (i, z) in buf.iter_mut().enumerate() {
            let s = ((i as f64 / fs) * cfg.update_rate).floor() as u64;
            if s != segment {
                segment = s;
                freq = carrier + cfg.draw_offset(track_rng);
            }
            z.im = amplitude * phase.cos();
            phase = (phase + std::f64::consts::TAU * freq / fs) % std::f64::consts::TAU;
        }
    }

    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    // Split the two real records packed as w + i·s, then shape each.
    let fine_per_bin = n_sub as f64;
    let mut shaped = vec![Complex64::new(0.0, 0.0); len];
    for i in 0..=len / 2 {
        let z = buf[i];
        let zc = buf[(len - i) % len].conj();
        let w = 0.5 * (z + zc);
        let s = Complex64::new(0.0, -0.5) * (z - zc);
        let x = i as f64 / fine_per_bin;
        let y = w * interp(&model.noise, x).sqrt() + s * interp(&model.signal_gain, x).sqrt();
        shaped[i] = y;
        if i != 0 && i != len - i {
            shaped[len - i] = y.conj();
        }
    }
    planner.plan_fft_inverse(len).process(&mut shaped);

    let fft = planner.plan_fft_forward(n);
    let mut acc = vec![0.0f64; model.grid.len()];
    let mut sub = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..n_sub {
        for (dst, src) in sub.iter_mut().zip(&shaped[t * n..(t + 1) * n]) {
            *dst = Complex64::new(src.re / len as f64, 0.0);
        }
        fft.process(&mut sub);
        for (a, z) in acc.iter_mut().zip(&sub) {
            *a += z.norm_sqr() / n as f64;
        }
    }
    Ok(acc.into_iter().map(|a| (a / n_sub as f64) as f32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionMode {
    #[default]
    Fast,
    #[serde(rename = "timedomain")]
    TimeDomain,
}

/// Everything needed to acquire one configuration's search.
#[derive(Debug, Clone)]
pub struct SearchSetup {
    pub model: SpectrumModel,
    pub injection: Option<FaxionInjection>,
    pub plan: TuningPlan,
    pub params: AcquisitionParams,
}

/// Hidden faxion placement of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchTruth {
    pub trial: u32,
    /// Signed bin of the faxion carrier at step 0.
    pub initial_bin: i64,
    pub initial_offset_hz: f64,
}

/// Analysis-visible record of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisInput {
    pub trial: u32,
    pub plan: TuningPlan,
    pub params: AcquisitionParams,
    pub spectra: Vec<RawSpectrum>,
}

#[derive(Debug, Clone)]
pub struct SearchRun {
    pub analysis: AnalysisInput,
    pub truth: SearchTruth,
}

/// Draw the step-0 faxion bin uniformly over the initialization window.
pub fn draw_initial_bin(plan: &TuningPlan, resolution: f64, master_seed: u64, trial: u32) -> SearchTruth {
    let (lo, hi) = plan.init_range_hz();
    let u: f64 = rng::stream(master_seed, Domain::InitialFrequency, trial, 0).random();
    let bin = ((lo + u * (hi - lo)) / resolution).round() as i64;
    SearchTruth {
        trial,
        initial_bin: bin,
        initial_offset_hz: bin as f64 * resolution,
    }
}

/// Acquire all steps of one trial with the faxion starting at `truth`.
pub fn acquire(
    setup: &SearchSetup,
    truth: &SearchTruth,
    master_seed: u64,
    mode: AcquisitionMode,
    exec: Execution,
) -> Result<AnalysisInput> {
    setup.plan.validate()?;
    setup.params.validate()?;
    let step_bins = setup.plan.step_bins(setup.params.resolution)?;
    let trial = truth.trial;
    let spectra = exec.map_indexed(setup.plan.step_count, |s| -> Result<RawSpectrum> {
        let carrier = truth.initial_bin + s as i64 * step_bins;
        let faxion = setup.injection.as_ref().map(|inj| (inj, carrier));
        let psd = match mode {
            AcquisitionMode::Fast => {
                let means = expected_psd(&setup.model, faxion)?;
                let mut rng = rng::stream(master_seed, Domain::FastNoise, trial, s as u32);
                simulate_step_fast(&means, &setup.params, &mut rng)?
            }
            AcquisitionMode::TimeDomain => {
                let mut noise = rng::stream(master_seed, Domain::TimeDomainNoise, trial, s as u32);
                let mut track = rng::stream(master_seed, Domain::FaxionTrack, trial, s as u32);
                simulate_step_timedomain(&setup.model, faxion, &setup.params, &mut noise, &mut track)?
            }
        };
        Ok(RawSpectrum {
            step_index: s,
            resolution: setup.params.resolution,
            psd,
        })
    });
    Ok(AnalysisInput {
        trial,
        plan: setup.plan,
        params: setup.params,
        spectra: spectra.into_iter().collect::<Result<_>>()?,
    })
}

/// Run one blind trial: draw the hidden start, then acquire every step.
pub fn run_search(
    setup: &SearchSetup,
    master_seed: u64,
    trial: u32,
    mode: AcquisitionMode,
    exec: Execution,
) -> Result<SearchRun> {
    let truth = draw_initial_bin(&setup.plan, setup.params.resolution, master_seed, trial);
    let analysis = acquire(setup, &truth, master_seed, mode, exec)?;
    Ok(SearchRun { analysis, truth })
}
