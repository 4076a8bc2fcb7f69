//! Analysis chain: baseline removal, normalization, visibility-weighted
//! shift-and-combine, matched-filter grand spectrum, candidates and
//! multi-trial aggregation.
//!
//! The combined spectrum is indexed by signed bin `j` in the frame of step 0:
//! detector bin `d` of step `s` lands at `j = d − s·m` with `m` bins per step,
//! so a faxion that started at bin `c` accumulates at `j = c` onward.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::acquisition::{AnalysisInput, RawSpectrum, SearchTruth};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::faxion::SpectralEnvelope;

/// Per-bin arithmetic mean of raw spectra.
pub fn average_baseline(spectra: &[RawSpectrum]) -> Result<Vec<f64>> {
    if spectra.len() < 2 {
        return Err(Error::InvalidParameter("baseline needs at least two spectra".into()));
    }
    let len = spectra[0].psd.len();
    if spectra.iter().any(|s| s.psd.len() != len) {
        return Err(Error::GridMismatch("raw spectra have different lengths".into()));
    }
    let mut acc = vec![0.0f64; len];
    for s in spectra {
        for (a, v) in acc.iter_mut().zip(&s.psd) {
            *a += *v as f64;
        }
    }
    let n = spectra.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Least-squares local-polynomial smoother.
#[derive(Debug, Clone, PartialEq)]
pub struct SavitzkyGolay {
    pub window: usize,
    pub order: usize,
    /// Row `i` evaluates the fit over the first `window` samples at sample `i`;
    /// row `half` is the interior convolution kernel.
    rows: Vec<Vec<f64>>,
}

impl SavitzkyGolay {
    pub fn new(window: usize, order: usize) -> Result<Self> {
        if window.is_multiple_of(2) || window == 0 {
            return Err(Error::InvalidParameter(format!("SG window {window} must be odd")));
        }
        if order >= window {
            return Err(Error::InvalidParameter(format!("SG order {order} must be < window {window}")));
        }
        let half = (window / 2) as f64;
        let a = DMatrix::from_fn(window, order + 1, |i, q| ((i as f64 - half) / half.max(1.0)).powi(q as i32));
        let ata = a.transpose() * &a;
        let inv = ata
            .try_inverse()
            .ok_or_else(|| Error::DegenerateFit("SG normal equations are singular".into()))?;
        let proj = inv * a.transpose();
        let rows = (0..=window / 2)
            .map(|i| {
                let t = (i as f64 - half) / half.max(1.0);
                let e = DVector::from_fn(order + 1, |q, _| t.powi(q as i32));
                (e.transpose() * &proj).iter().cloned().collect()
            })
            .collect();
        Ok(Self { window, order, rows })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let w = self.window;
        let h = w / 2;
        if x.len() < w {
            return Err(Error::InvalidParameter(format!("SG window {w} exceeds data length {}", x.len())));
        }
        let dot = |row: &[f64], seg: &[f64]| row.iter().zip(seg).map(|(c, v)| c * v).sum::<f64>();
        let n = x.len();
        let mut out = vec![0.0; n];
        let kernel = &self.rows[h];
        for i in h..n - h {
            out[i] = dot(kernel, &x[i - h..=i + h]);
        }
        let head = &x[..w];
        let tail: Vec<f64> = x[n - w..].iter().rev().cloned().collect();
        for i in 0..h {
            out[i] = dot(&self.rows[i], head);
            out[n - 1 - i] = dot(&self.rows[i], &tail);
        }
        Ok(out)
    }
}

pub fn sg_filter(baseline: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    SavitzkyGolay::new(window, order)?.apply(baseline)
}

/// Smooth a folded baseline by filtering its symmetric unfolding, so the LO
/// bin is treated as an interior point.
pub fn smooth_folded(baseline: &[f64], sg: &SavitzkyGolay) -> Result<Vec<f64>> {
    let k = baseline.len() - 1;
    let unfolded: Vec<f64> = (0..=2 * k).map(|i| baseline[(i as i64 - k as i64).unsigned_abs() as usize]).collect();
    let s = sg.apply(&unfolded)?;
    Ok(s[k..].to_vec())
}

/// Power excess of one step relative to the smoothed baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedSpectrum {
    pub step_index: usize,
    pub excess: Vec<f32>,
    pub sigma: f64,
}

/// `excess = raw/baseline − 1`.
pub fn normalize(raw: &RawSpectrum, baseline: &[f64], sigma: f64) -> Result<ProcessedSpectrum> {
    normalize_owned(raw.clone(), baseline, sigma)
}

/// As [`normalize`], reusing the raw buffer.
pub fn normalize_owned(raw: RawSpectrum, baseline: &[f64], sigma: f64) -> Result<ProcessedSpectrum> {
    if raw.psd.len() != baseline.len() {
        return Err(Error::GridMismatch("raw spectrum and baseline lengths differ".into()));
    }
    if baseline.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::InvalidParameter("baseline must be > 0".into()));
    }
    let mut excess = raw.psd;
    for (e, b) in excess.iter_mut().zip(baseline) {
        *e = (*e as f64 / b - 1.0) as f32;
    }
    Ok(ProcessedSpectrum {
        step_index: raw.step_index,
        excess,
        sigma,
    })
}

/// Visibility-weighted ML combination in the step-0 frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedSpectrum {
    pub resolution: f64,
    /// Signed bin of `excess[0]`.
    pub first_bin: i64,
    /// Combined excess estimate `Σ(α̂/σ²)δ / Σ(α̂²/σ²)`.
    pub excess: Vec<f64>,
    /// `(Σ α̂²/σ²)^{−1/2}`; infinite where no spectrum contributes.
    pub sigma: Vec<f64>,
    /// Bins with at least the mask fraction of the peak weight mass.
    pub valid: Vec<bool>,
}

impl CombinedSpectrum {
    pub fn offset_hz(&self, i: usize) -> f64 {
        (self.first_bin + i as i64) as f64 * self.resolution
    }

    pub fn index_of_bin(&self, bin: i64) -> Option<usize> {
        let i = bin - self.first_bin;
        (i >= 0 && (i as usize) < self.excess.len()).then_some(i as usize)
    }

    /// Excess in units of its own standard deviation, valid bins only.
    pub fn normalized_valid(&self) -> Vec<f64> {
        (0..self.excess.len())
            .filter(|i| self.valid[*i])
            .map(|i| self.excess[i] / self.sigma[i])
            .collect()
    }
}

/// Bins below this fraction of the peak weight mass are masked.
pub const DEFAULT_MASK_FRACTION: f64 = 0.1;

/// Shift every processed spectrum back by its tuning offset and combine.
///
/// `visibility` is the folded `α(δ)` of the configuration; it is normalized
/// to its peak internally. Output bins are computed independently, each as a
/// sum over steps in ascending order, so the result is bit-stable under
/// parallel evaluation.
pub fn shift_and_combine(
    processed: &[ProcessedSpectrum],
    step_bins: i64,
    resolution: f64,
    visibility: &[f64],
    mask_fraction: f64,
    exec: Execution,
) -> Result<CombinedSpectrum> {
    if processed.is_empty() {
        return Err(Error::InvalidParameter("no spectra to combine".into()));
    }
    if step_bins < 0 {
        return Err(Error::InvalidParameter("step must be a nonnegative bin count".into()));
    }
    let len = visibility.len();
    if processed.iter().any(|p| p.excess.len() != len) {
        return Err(Error::GridMismatch("processed spectra and visibility lengths differ".into()));
    }
    let peak = visibility.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::ZeroDenominator("visibility is zero everywhere".into()));
    }
    let k = (len - 1) as i64;
    let steps = processed.len() as i64;
    let first_bin = -k - (steps - 1) * step_bins;
    let out_len = (k - first_bin + 1) as usize;
    let alpha: Vec<f64> = visibility.iter().map(|a| a / peak).collect();

    let mut acc = vec![(0.0f64, 0.0f64); out_len];
    exec.for_each_chunk_mut(&mut acc, 4096, |start, chunk| {
        let j0 = first_bin + start as i64;
        let j1 = j0 + chunk.len() as i64;
        for (s, p) in processed.iter().enumerate() {
            let inv_var = 1.0 / (p.sigma * p.sigma);
            let shift = s as i64 * step_bins;
            let lo = (j0 + shift).max(-k);
            let hi = (j1 - 1 + shift).min(k);
            for d in lo..=hi {
                let f = d.unsigned_abs() as usize;
                let a = alpha[f] * inv_var;
                let slot = &mut chunk[(d - shift - j0) as usize];
                slot.0 += a * p.excess[f] as f64;
                slot.1 += a * alpha[f];
            }
        }
    });

    let max_w = acc.iter().map(|a| a.1).fold(0.0, f64::max);
    let mut excess = Vec::with_capacity(out_len);
    let mut sigma = Vec::with_capacity(out_len);
    let mut valid = Vec::with_capacity(out_len);
    for (num, w) in acc {
        if w > 0.0 {
            excess.push(num / w);
            sigma.push(w.powf(-0.5));
        } else {
            excess.push(0.0);
            sigma.push(f64::INFINITY);
        }
        valid.push(w > 0.0 && w >= mask_fraction * max_w);
    }
    Ok(CombinedSpectrum {
        resolution,
        first_bin,
        excess,
        sigma,
        valid,
    })
}

/// Matched-filter statistic in units of its noise standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrandSpectrum {
    pub resolution: f64,
    /// Carrier bin of each entry.
    pub bins: Vec<i64>,
    pub excess: Vec<f64>,
}

impl GrandSpectrum {
    pub fn offset_hz(&self, i: usize) -> f64 {
        self.bins[i] as f64 * self.resolution
    }
}

/// `g_c = Σ_j L_j e_{c+j}/s²_{c+j} / √(Σ_j L_j²/s²_{c+j})` for every carrier
/// bin `c` whose envelope support lies entirely on valid combined bins.
pub fn grand_spectrum(combined: &CombinedSpectrum, envelope: &SpectralEnvelope, exec: Execution) -> Result<GrandSpectrum> {
    if (envelope.resolution_hz - combined.resolution).abs() > 1e-9 * combined.resolution {
        return Err(Error::GridMismatch("envelope and combined resolutions differ".into()));
    }
    let l = envelope.bin_masses();
    if l.len() > combined.excess.len() {
        return Err(Error::InvalidParameter("envelope is wider than the combined spectrum".into()));
    }
    let n = combined.excess.len();
    let m = l.len();
    // Index i in `combined` holds carrier c = first + i − envelope.first_bin.
    let span = n - m + 1;
    let values = exec.map_indexed(span, |i| -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, lj) in l.iter().enumerate() {
            let b = i + j;
            if !combined.valid[b] {
                return None;
            }
            let inv = 1.0 / (combined.sigma[b] * combined.sigma[b]);
            num += lj * combined.excess[b] * inv;
            den += lj * lj * inv;
        }
        (den > 0.0).then(|| num / den.sqrt())
    });
    let mut bins = Vec::new();
    let mut excess = Vec::new();
    for (i, v) in values.into_iter().enumerate() {
        if let Some(g) = v {
            bins.push(combined.first_bin + i as i64 - envelope.first_bin);
            excess.push(g);
        }
    }
    if bins.is_empty() {
        return Err(Error::InvalidParameter("no carrier bin has full valid envelope support".into()));
    }
    Ok(GrandSpectrum {
        resolution: combined.resolution,
        bins,
        excess,
    })
}

/// Most likely faxion bin of one grand spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bin: i64,
    pub offset_hz: f64,
    pub excess: f64,
}

/// Argmax of the grand spectrum; ties go to the lowest offset.
pub fn find_candidate(grand: &GrandSpectrum) -> Result<Candidate> {
    if grand.excess.is_empty() {
        return Err(Error::InvalidParameter("empty grand spectrum".into()));
    }
    let mut best = 0;
    for i in 1..grand.excess.len() {
        let better = grand.excess[i] > grand.excess[best]
            || (grand.excess[i] == grand.excess[best] && grand.bins[i] < grand.bins[best]);
        if better {
            best = i;
        }
    }
    Ok(Candidate {
        bin: grand.bins[best],
        offset_hz: grand.offset_hz(best),
        excess: grand.excess[best],
    })
}

/// Result of one trial's analysis, joined with its sealed truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub trial: u32,
    pub best_bin_offset: f64,
    pub best_excess: f64,
    /// Grand-spectrum value at the true carrier bin, when it is in range.
    pub truth_excess: Option<f64>,
    pub truth_hit: bool,
}

impl SearchOutcome {
    pub fn new(candidate: &Candidate, grand: &GrandSpectrum, truth: &SearchTruth, tolerance_hz: f64) -> Self {
        let truth_excess = grand
            .bins
            .binary_search(&truth.initial_bin)
            .ok()
            .map(|i| grand.excess[i]);
        Self {
            trial: truth.trial,
            best_bin_offset: candidate.offset_hz,
            best_excess: candidate.excess,
            truth_excess,
            truth_hit: (candidate.offset_hz - truth.initial_offset_hz).abs() <= tolerance_hz,
        }
    }
}

/// Maximum-likelihood Gaussian fit to per-trial excesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessHistogram {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub mean_error: f64,
    pub std_error: f64,
}

impl ExcessHistogram {
    pub fn fit(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::DegenerateFit("need at least two trials".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateFit("non-finite excess".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(std > 0.0) {
            return Err(Error::DegenerateFit("zero spread in trial excesses".into()));
        }
        Ok(Self {
            mean_error: std / n.sqrt(),
            std_error: std / (2.0 * n).sqrt(),
            values,
            mean,
            std,
        })
    }

    /// Counts per bin of width `width` starting at `start`.
    pub fn counts(&self, start: f64, width: f64, bins: usize) -> Vec<usize> {
        let mut c = vec![0; bins];
        for v in &self.values {
            let i = ((v - start) / width).floor();
            if i >= 0.0 && (i as usize) < bins {
                c[i as usize] += 1;
            }
        }
        c
    }
}

/// `(μ_num/μ_den)²` with first-order propagated uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Enhancement {
    pub value: f64,
    pub uncertainty: f64,
}

pub fn aggregate_trials(numerator: &ExcessHistogram, denominator: &ExcessHistogram) -> Result<Enhancement> {
    if denominator.mean == 0.0 {
        return Err(Error::DegenerateFit("reference mean excess is zero".into()));
    }
    let r = numerator.mean / denominator.mean;
    let rel = ((numerator.mean_error / numerator.mean).powi(2) + (denominator.mean_error / denominator.mean).powi(2)).sqrt();
    Ok(Enhancement {
        value: r * r,
        uncertainty: 2.0 * r * r * rel,
    })
}

/// Analysis settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub sg_window: usize,
    pub sg_order: usize,
    pub mask_fraction: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            sg_window: 301,
            sg_order: 4,
            mask_fraction: DEFAULT_MASK_FRACTION,
        }
    }
}

/// All analysis products of one trial.
#[derive(Debug, Clone)]
pub struct TrialAnalysis {
    pub baseline: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub combined: CombinedSpectrum,
    pub grand: GrandSpectrum,
    pub candidate: Candidate,
}

/// Run the full chain on one blind trial. Consumes the raw spectra.
pub fn run_trial(
    input: AnalysisInput,
    visibility: &[f64],
    envelope: &SpectralEnvelope,
    params: &PipelineParams,
    exec: Execution,
) -> Result<TrialAnalysis> {
    let sg = SavitzkyGolay::new(params.sg_window, params.sg_order)?;
    let baseline = average_baseline(&input.spectra)?;
    let smoothed = smooth_folded(&baseline, &sg)?;
    let sigma = input.params.radiometer_sigma();
    let step_bins = input.plan.step_bins(input.params.resolution)?;
    let processed = input
        .spectra
        .into_iter()
        .map(|r| normalize_owned(r, &smoothed, sigma))
        .collect::<Result<Vec<_>>>()?;
    let combined = shift_and_combine(
        &processed,
        step_bins,
        input.params.resolution,
        visibility,
        params.mask_fraction,
        exec,
    )?;
    drop(processed);
    let grand = grand_spectrum(&combined, envelope, exec)?;
    let candidate = find_candidate(&grand)?;
    Ok(TrialAnalysis {
        baseline,
        smoothed,
        combined,
        grand,
        candidate,
    })
}
