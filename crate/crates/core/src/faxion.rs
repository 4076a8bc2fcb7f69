//! Synthetic axion ("faxion") signal: lineshape, frequency sampling, FM
//! tracks, and the expected spectral envelope seen by the analysis.
//!
//! The lab-frame lineshape is a gamma density of shape 3/2,
//! `f(ν) = (2/√π) √(ν−ν_a) θ^{−3/2} e^{−(ν−ν_a)/θ}` with `θ = ν_a⟨β²⟩/3`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

const TWO_OVER_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Lab-frame axion lineshape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxionLineshape {
    /// Hz.
    pub rest_frequency: f64,
    /// `⟨β²⟩`.
    pub velocity_parameter: f64,
}

impl Default for AxionLineshape {
    fn default() -> Self {
        Self {
            rest_frequency: 7.454e9,
            velocity_parameter: 8.1e-7,
        }
    }
}

/// `P(3/2, y)`, the regularized lower incomplete gamma function.
fn gamma_three_halves_cdf(y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let s = y.sqrt();
    erf(s) - TWO_OVER_SQRT_PI * s * (-y).exp()
}

fn gamma_three_halves_pdf(y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    TWO_OVER_SQRT_PI * y.sqrt() * (-y).exp()
}

/// Inverse of `P(3/2, ·)` by safeguarded Newton iteration.
fn gamma_three_halves_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while gamma_three_halves_cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut y = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = gamma_three_halves_cdf(y) - p;
        if f > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let d = gamma_three_halves_pdf(y);
        let mut next = if d > 0.0 { y - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 1e-15 * y.max(1e-300) {
            return next;
        }
        y = next;
    }
    y
}

/// Full width of `√y e^{−y}` at `1/e` of its peak, in units of the scale.
pub fn one_over_e_width() -> f64 {
    let peak = gamma_three_halves_pdf(0.5);
    let target = peak / std::f64::consts::E;
    let root = |mut lo: f64, mut hi: f64| {
        let rising = gamma_three_halves_pdf(lo) < target;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (gamma_three_halves_pdf(mid) < target) == rising {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    root(40.0, 0.5) - root(0.0, 0.5)
}

impl AxionLineshape {
    pub fn validate(&self) -> Result<()> {
        if !(self.rest_frequency > 0.0) || !(self.velocity_parameter > 0.0) {
            return Err(Error::InvalidParameter("lineshape needs ν_a > 0 and ⟨β²⟩ > 0".into()));
        }
        Ok(())
    }

    /// Scale `θ = ν_a⟨β²⟩/3`, Hz.
    pub fn scale(&self) -> f64 {
        self.rest_frequency * self.velocity_parameter / 3.0
    }

    pub fn pdf(&self, frequency: f64) -> f64 {
        let t = self.scale();
        gamma_three_halves_pdf((frequency - self.rest_frequency) / t) / t
    }

    pub fn cdf(&self, frequency: f64) -> f64 {
        gamma_three_halves_cdf((frequency - self.rest_frequency) / self.scale())
    }

    pub fn inverse_cdf(&self, p: f64) -> f64 {
        self.rest_frequency + self.inverse_cdf_offset(p)
    }

    /// CDF as a function of `ν − ν_a`, avoiding cancellation against `ν_a`.
    pub fn cdf_offset(&self, offset: f64) -> f64 {
        gamma_three_halves_cdf(offset / self.scale())
    }

    /// Quantile as an offset `ν − ν_a`.
    pub fn inverse_cdf_offset(&self, p: f64) -> f64 {
        self.scale() * gamma_three_halves_quantile(p)
    }

    pub fn mean(&self) -> f64 {
        self.rest_frequency + 1.5 * self.scale()
    }

    pub fn mode(&self) -> f64 {
        self.rest_frequency + 0.5 * self.scale()
    }
}

/// I.i.d. inverse-CDF samples (Hz).
pub fn sample_frequencies(shape: &AxionLineshape, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, Domain::Sampling, 0, 0);
    (0..count).map(|_| shape.inverse_cdf(rng.random::<f64>())).collect()
}

/// Faxion generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaxionConfig {
    /// Hz.
    pub update_rate: f64,
    /// Hz; the lineshape's `1/e` full width is mapped onto this.
    pub modulation_depth: f64,
    /// Peak faxion PSD at the measurement port under quantum-limited operation, vacuum units.
    pub carrier_power: f64,
    pub lineshape: AxionLineshape,
}

impl Default for FaxionConfig {
    fn default() -> Self {
        Self {
            update_rate: 1.5e3,
            modulation_depth: 30e3,
            carrier_power: 0.01,
            lineshape: AxionLineshape::default(),
        }
    }
}

impl FaxionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.update_rate > 0.0) || !(self.modulation_depth > 0.0) {
            return Err(Error::InvalidParameter("update rate and modulation depth must be > 0".into()));
        }
        if !(self.carrier_power >= 0.0) {
            return Err(Error::InvalidParameter("carrier power must be ≥ 0".into()));
        }
        self.lineshape.validate()
    }

    /// Factor applied to `ν − ν_a` to obtain a modulation offset.
    pub fn offset_scale(&self) -> f64 {
        self.modulation_depth / (one_over_e_width() * self.lineshape.scale())
    }

    /// Gamma scale of the modulation offsets, Hz.
    pub fn offset_scale_hz(&self) -> f64 {
        self.lineshape.scale() * self.offset_scale()
    }

    /// One random modulation offset (Hz above the carrier).
    pub fn draw_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.offset_scale_hz() * gamma_three_halves_quantile(rng.random::<f64>())
    }
}

/// Piecewise-constant instantaneous frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTrack {
    /// Segment start times, s.
    pub sample_times: Vec<f64>,
    /// Hz.
    pub instantaneous_frequencies: Vec<f64>,
}

impl FrequencyTrack {
    /// Frequency in effect at time `t` (clamped to the track).
    pub fn frequency_at(&self, t: f64, update_rate: f64) -> f64 {
        let i = ((t * update_rate).floor().max(0.0) as usize).min(self.instantaneous_frequencies.len() - 1);
        self.instantaneous_frequencies[i]
    }
}

pub fn synthesize_track<R: Rng + ?Sized>(
    config: &FaxionConfig,
    duration: f64,
    carrier: f64,
    rng: &mut R,
) -> Result<FrequencyTrack> {
    config.validate()?;
    let segments = (duration * config.update_rate * (1.0 - 1e-12)).ceil();
    if !(segments >= 1.0) {
        return Err(Error::InvalidParameter("track needs duration · update_rate ≥ 1".into()));
    }
    let n = segments as usize;
    Ok(FrequencyTrack {
        sample_times: (0..n).map(|i| i as f64 / config.update_rate).collect(),
        instantaneous_frequencies: (0..n).map(|_| carrier + config.draw_offset(rng)).collect(),
    })
}

/// Expected PSD of the FM tone against offset from the carrier, normalized
/// so that `Σ values · resolution = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEnvelope {
    pub resolution_hz: f64,
    /// Bin index (relative to the carrier) of `values[0]`.
    pub first_bin: i64,
    /// 1/Hz.
    pub values: Vec<f64>,
}

impl SpectralEnvelope {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn offset_hz(&self, i: usize) -> f64 {
        (self.first_bin + i as i64) as f64 * self.resolution_hz
    }

    /// Fraction of the tone power in each bin (sums to 1).
    pub fn bin_masses(&self) -> Vec<f64> {
        self.values.iter().map(|v| v * self.resolution_hz).collect()
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.resolution_hz
    }

    /// A single-bin envelope (identity matched filter).
    pub fn delta(resolution_hz: f64) -> Self {
        Self {
            resolution_hz,
            first_bin: 0,
            values: vec![1.0 / resolution_hz],
        }
    }
}

/// Bins kept below the carrier to capture window leakage.
pub const ENVELOPE_LOWER_BINS: i64 = 25;
/// Upper support in units of the offset scale.
pub const ENVELOPE_UPPER_SCALES: f64 = 10.0;
/// Default duration of the simulation behind a cached envelope, s.
pub const ENVELOPE_DURATION: f64 = 200.0;

/// Envelope from a `duration`-long complex-baseband FM simulation, observed
/// with back-to-back rectangular windows of length `1/resolution`.
pub fn spectral_envelope(config: &FaxionConfig, resolution: f64, duration: f64, seed: u64) -> Result<SpectralEnvelope> {
    config.validate()?;
    if !(resolution > 0.0) || resolution > config.modulation_depth / 3.0 {
        return Err(Error::InvalidParameter("envelope resolution must lie in (0, depth/3]".into()));
    }
    let hi = (ENVELOPE_UPPER_SCALES * config.offset_scale_hz() / resolution).ceil() as i64;
    let n = (2 * (hi + ENVELOPE_LOWER_BINS + 1)).max(2048) as usize;
    let n = n.next_power_of_two();
    let fs = n as f64 * resolution;
    let blocks = (duration * resolution).round().max(1.0) as usize;

    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut rng = rng::stream(seed, Domain::Envelope, 0, 0);
    let mut acc = vec![0.0; n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut phase = 0.0f64;
    let mut segment = u64::MAX;
    let mut freq = 0.0;
    for b in 0..blocks {
        for (i, z) in buf.iter_mut().enumerate() {
            let t = (b * n + i) as f64 / fs;
            let s = (t * config.update_rate).floor() as u64;
            if s != segment {
                segment = s;
                freq = config.draw_offset(&mut rng);
            }
            *z = Complex64::from_polar(1.0, phase);
            phase = (phase + 2.0 * PI * freq / fs) % (2.0 * PI);
        }
        fft.process(&mut buf);
        for (a, z) in acc.iter_mut().zip(&buf) {
            *a += z.norm_sqr();
        }
    }
    let values: Vec<f64> = (-ENVELOPE_LOWER_BINS..=hi)
        .map(|k| acc[k.rem_euclid(n as i64) as usize])
        .collect();
    let total: f64 = values.iter().sum::<f64>() * resolution;
    Ok(SpectralEnvelope {
        resolution_hz: resolution,
        first_bin: -ENVELOPE_LOWER_BINS,
        values: values.into_iter().map(|v| v / total).collect(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnvelopeHeader {
    config_hash: String,
    faxion: FaxionConfig,
    resolution_hz: f64,
    duration_s: f64,
    seed: u64,
    first_bin: i64,
}

/// Key for the envelope cache.
pub fn envelope_hash(config: &FaxionConfig, resolution: f64, duration: f64, seed: u64) -> String {
    let key = serde_json::json!({
        "faxion": config,
        "resolution_hz": resolution,
        "duration_s": duration,
        "seed": seed,
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// File-backed envelope cache keyed by configuration hash.
#[derive(Debug, Clone)]
pub struct EnvelopeCache {
    pub dir: PathBuf,
}

impl EnvelopeCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn paths(&self, hash: &str) -> (PathBuf, PathBuf) {
        (
            self.dir.join(format!("envelope-{hash}.csv")),
            self.dir.join(format!("envelope-{hash}.json")),
        )
    }

    /// Load the cached envelope, computing and storing it when absent or when `force` is set.
    pub fn load_or_compute(
        &self,
        config: &FaxionConfig,
        resolution: f64,
        duration: f64,
        seed: u64,
        force: bool,
    ) -> Result<SpectralEnvelope> {
        let hash = envelope_hash(config, resolution, duration, seed);
        let (csv_path, json_path) = self.paths(&hash);
        if !force && csv_path.exists() && json_path.exists() {
            if let Ok(env) = read_envelope(&csv_path, &json_path, &hash) {
                return Ok(env);
            }
        }
        let env = spectral_envelope(config, resolution, duration, seed)?;
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let header = EnvelopeHeader {
            config_hash: hash,
            faxion: *config,
            resolution_hz: resolution,
            duration_s: duration,
            seed,
            first_bin: env.first_bin,
        };
        let json = serde_json::to_string_pretty(&header).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        write_envelope_csv(&csv_path, &env)?;
        Ok(env)
    }
}

pub fn write_envelope_csv(path: &Path, env: &SpectralEnvelope) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    w.write_record(["offset_Hz", "normalized_psd"]).map_err(|e| Error::Serde(e.to_string()))?;
    for (i, v) in env.values.iter().enumerate() {
        w.write_record([env.offset_hz(i).to_string(), v.to_string()])
            .map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_envelope(csv_path: &Path, json_path: &Path, hash: &str) -> Result<SpectralEnvelope> {
    let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let header: EnvelopeHeader = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
    if header.config_hash != hash {
        return Err(Error::Config("envelope cache hash mismatch".into()));
    }
    let mut r = csv::Reader::from_path(csv_path).map_err(|e| Error::Serde(e.to_string()))?;
    let mut values = Vec::new();
    for rec in r.deserialize::<(f64, f64)>() {
        values.push(rec.map_err(|e| Error::Serde(e.to_string()))?.1);
    }
    Ok(SpectralEnvelope {
        resolution_hz: header.resolution_hz,
        first_bin: header.first_bin,
        values,
    })
}
