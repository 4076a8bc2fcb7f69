//! Lossy measurement chain after the converter and the visibility figures of merit.
//!
//! The chain is a beam splitter of efficiency `η` (admitting thermal plus
//! vacuum noise at the fridge temperature) followed by a phase-sensitive
//! amplifier of gain `G_JPA(δ)` and `N_sys` quanta of added noise downstream.
//! Referred to the converter output, in quanta:
//!
//! `S_meas = S_N + (1−η)/η · (N_T + ½) + N_sys / (η G_JPA)`.
//!
//! Everything here is reported in vacuum units (vacuum = 1), i.e. twice the
//! quanta value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::qnet::{self, angular, InputOccupations, PortPsd, SystemParams};

const HBAR: f64 = 1.054_571_817e-34;
const K_B: f64 = 1.380_649e-23;

/// Phase-sensitive amplifier gain, Lorentzian in detuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JpaGainProfile {
    pub peak_gain_db: f64,
    /// Full width at half maximum of `G − 1`, Hz.
    pub bandwidth_hz: f64,
    pub center_hz: f64,
}

impl Default for JpaGainProfile {
    fn default() -> Self {
        Self {
            peak_gain_db: 30.0,
            bandwidth_hz: 2.0e6,
            center_hz: 0.0,
        }
    }
}

impl JpaGainProfile {
    /// Power gain at angular detuning `δ`; never below 1.
    pub fn gain(&self, detuning: f64) -> f64 {
        let peak = 10f64.powf(self.peak_gain_db / 10.0);
        let x = 2.0 * (qnet::hertz(detuning) - self.center_hz) / self.bandwidth_hz;
        1.0 + (peak - 1.0) / (1.0 + x * x)
    }
}

/// Measurement-chain parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub efficiency: f64,
    /// Kelvin.
    pub temperature: f64,
    /// Quanta added after the amplifier.
    pub n_sys: f64,
    pub jpa: JpaGainProfile,
    /// rad/s, sets the thermal occupation of the beam-splitter bath.
    pub signal_frequency: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            efficiency: 0.9,
            temperature: 0.020,
            n_sys: 32.0,
            jpa: JpaGainProfile::default(),
            signal_frequency: angular(4.98e9),
        }
    }
}

impl ChainParams {
    /// Lossless, noiseless chain.
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            n_sys: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::InvalidParameter("chain efficiency must lie in (0, 1]".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidParameter("temperature must be > 0".into()));
        }
        if !(self.n_sys >= 0.0) {
            return Err(Error::InvalidParameter("N_sys must be ≥ 0".into()));
        }
        if !(self.jpa.peak_gain_db >= 0.0) || !(self.jpa.bandwidth_hz > 0.0) {
            return Err(Error::InvalidParameter("JPA gain must be ≥ 0 dB with positive bandwidth".into()));
        }
        if !(self.signal_frequency > 0.0) {
            return Err(Error::InvalidParameter("signal frequency must be > 0".into()));
        }
        Ok(())
    }

    pub fn thermal_occupation(&self) -> f64 {
        bose_occupancy(self.signal_frequency, self.temperature)
    }
}

/// `(e^{ħω/k_BT} − 1)⁻¹`.
pub fn bose_occupancy(frequency: f64, temperature: f64) -> f64 {
    let x = HBAR * frequency / (K_B * temperature);
    1.0 / x.exp_m1()
}

/// Noise added by the chain in quanta, referred to the converter output.
pub fn chain_added_quanta(chain: &ChainParams, jpa_gain: f64) -> Result<f64> {
    if !(jpa_gain > 0.0) {
        return Err(Error::ZeroDenominator("JPA gain must be > 0".into()));
    }
    let eta = chain.efficiency;
    let loss = (1.0 - eta) / eta * (chain.thermal_occupation() + 0.5);
    Ok(loss + chain.n_sys / (eta * jpa_gain))
}

/// Total measured noise PSD (vacuum units) referred to the converter output.
pub fn total_noise_psd(port: &PortPsd, chain: &ChainParams, detuning: f64) -> Result<f64> {
    total_noise_with_gain(port, chain, chain.jpa.gain(detuning))
}

pub fn total_noise_with_gain(port: &PortPsd, chain: &ChainParams, jpa_gain: f64) -> Result<f64> {
    // Quanta → vacuum units doubles every added term; `S_N` is already in vacuum units.
    Ok(port.total() + 2.0 * chain_added_quanta(chain, jpa_gain)?)
}

/// `α = S_a / S_N,meas`.
pub fn visibility(signal_psd: f64, noise_psd: f64) -> Result<f64> {
    if !(noise_psd > 0.0) {
        return Err(Error::ZeroDenominator("noise PSD must be > 0".into()));
    }
    Ok(signal_psd / noise_psd)
}

/// Uniform detuning grid, Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetuningGrid {
    pub half_span_hz: f64,
    pub spacing_hz: f64,
}

impl Default for DetuningGrid {
    fn default() -> Self {
        Self {
            half_span_hz: 20e6,
            spacing_hz: 2e3,
        }
    }
}

impl DetuningGrid {
    pub fn points_hz(&self) -> Vec<f64> {
        if self.spacing_hz <= 0.0 || self.half_span_hz < 0.0 {
            return Vec::new();
        }
        let n = (self.half_span_hz / self.spacing_hz).round() as i64;
        (-n..=n).map(|i| i as f64 * self.spacing_hz).collect()
    }
}

/// `α(δ_A)` on a grid of angular detunings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityCurve {
    pub grid: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl VisibilityCurve {
    pub fn new(grid: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        if grid.len() != alpha.len() {
            return Err(Error::GridMismatch("grid and alpha lengths differ".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridMismatch("grid must be strictly increasing".into()));
        }
        if alpha.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidParameter("visibility must be ≥ 0".into()));
        }
        Ok(Self { grid, alpha })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            alpha: self.alpha.iter().map(|a| a * factor).collect(),
        }
    }

    pub fn peak(&self) -> f64 {
        self.alpha.iter().cloned().fold(0.0, f64::max)
    }
}

/// Scan-rate figures for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRateReport {
    /// `∫ α² dδ_A`, rad/s.
    pub integral_alpha_sq: f64,
    pub peak_alpha: f64,
    /// Visibility bandwidth, rad/s (zero when not computed from PSDs).
    pub visibility_bandwidth: f64,
}

/// Endpoints of the curve must have `α² < SPAN_TOLERANCE · max α²`.
pub const SPAN_TOLERANCE: f64 = 1e-4;

pub fn scan_rate(curve: &VisibilityCurve) -> Result<ScanRateReport> {
    let peak = curve.peak();
    if curve.grid.len() < 2 {
        return Err(Error::InsufficientSpan("need at least two grid points".into()));
    }
    if peak > 0.0 {
        let first = curve.alpha[0].powi(2);
        let last = curve.alpha[curve.alpha.len() - 1].powi(2);
        let limit = SPAN_TOLERANCE * peak * peak;
        if first >= limit || last >= limit {
            return Err(Error::InsufficientSpan(format!(
                "endpoint α²/peak α² = {:.3e}, {:.3e} (limit {:.0e}) over [{:.4e}, {:.4e}] Hz",
                first / (peak * peak),
                last / (peak * peak),
                SPAN_TOLERANCE,
                qnet::hertz(curve.grid[0]),
                qnet::hertz(curve.grid[curve.grid.len() - 1]),
            )));
        }
    }
    let integral = curve
        .grid
        .windows(2)
        .zip(curve.alpha.windows(2))
        .map(|(g, a)| 0.5 * (g[1] - g[0]) * (a[0] * a[0] + a[1] * a[1]))
        .sum();
    Ok(ScanRateReport {
        integral_alpha_sq: integral,
        peak_alpha: peak,
        visibility_bandwidth: 0.0,
    })
}

pub fn enhancement_ratio(numerator: &ScanRateReport, denominator: &ScanRateReport) -> Result<f64> {
    if !(denominator.integral_alpha_sq > 0.0) {
        return Err(Error::ZeroDenominator("reference scan-rate integral is zero".into()));
    }
    Ok(numerator.integral_alpha_sq / denominator.integral_alpha_sq)
}

/// Width (rad/s) of the contiguous interval around `δ = 0` where cavity noise
/// dominates measurement noise. Crossings are linearly interpolated; zero
/// when the cavity noise does not dominate at the point closest to resonance.
pub fn visibility_bandwidth(curve: &[PortPsd]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    let margin = |p: &PortPsd| p.cavity_noise - p.measurement_noise;
    let center = curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.detuning.abs().total_cmp(&b.1.detuning.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if margin(&curve[center]) < 0.0 {
        return 0.0;
    }
    let crossing = |inside: &PortPsd, outside: &PortPsd| {
        let (m0, m1) = (margin(inside), margin(outside));
        inside.detuning + (outside.detuning - inside.detuning) * m0 / (m0 - m1)
    };
    let mut hi = curve[curve.len() - 1].detuning;
    for i in center..curve.len() - 1 {
        if margin(&curve[i + 1]) < 0.0 {
            hi = crossing(&curve[i], &curve[i + 1]);
            break;
        }
    }
    let mut lo = curve[0].detuning;
    for i in (1..=center).rev() {
        if margin(&curve[i - 1]) < 0.0 {
            lo = crossing(&curve[i], &curve[i - 1]);
            break;
        }
    }
    (hi - lo).max(0.0)
}

/// One grid point of a configuration sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityPoint {
    pub detuning_hz: f64,
    pub psd: PortPsd,
    pub total_noise: f64,
    pub alpha: f64,
}

/// Full sweep of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationSweep {
    pub points: Vec<VisibilityPoint>,
}

impl ConfigurationSweep {
    pub fn curve(&self) -> Result<VisibilityCurve> {
        VisibilityCurve::new(
            self.points.iter().map(|p| angular(p.detuning_hz)).collect(),
            self.points.iter().map(|p| p.alpha).collect(),
        )
    }

    pub fn report(&self) -> Result<ScanRateReport> {
        let mut r = scan_rate(&self.curve()?)?;
        let psd: Vec<PortPsd> = self.points.iter().map(|p| p.psd).collect();
        r.visibility_bandwidth = visibility_bandwidth(&psd);
        Ok(r)
    }
}

/// Evaluate PSDs and visibility for a unit-PSD probe at the axion port.
pub fn sweep(
    system: &SystemParams,
    chain: &ChainParams,
    grid_hz: &[f64],
    exec: Execution,
) -> Result<ConfigurationSweep> {
    system.validate()?;
    chain.validate()?;
    let occupations = InputOccupations::default();
    let points = exec.map_slice(grid_hz, |&f| -> Result<VisibilityPoint> {
        let d = angular(f);
        let psd = qnet::port_psd(system, d, &occupations)?;
        let total = total_noise_psd(&psd, chain, d)?;
        Ok(VisibilityPoint {
            detuning_hz: f,
            psd,
            total_noise: total,
            alpha: visibility(psd.signal_gain, total)?,
        })
    });
    Ok(ConfigurationSweep {
        points: points.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bose_limits() {
        assert!(bose_occupancy(angular(1e12), 0.001) < 1e-300);
        // Independent arithmetic: ħω/k_BT = h·ν/(k_B·T).
        let x: f64 = 6.626_070_15e-34 * 4.98e9 / (1.380_649e-23 * 0.02);
        assert_relative_eq!(x, 11.95, epsilon = 0.01);
        let n = bose_occupancy(angular(4.98e9), 0.02);
        assert_relative_eq!(n, 1.0 / (x.exp() - 1.0), max_relative = 1e-6);
        assert_relative_eq!(n, 6.4e-6, max_relative = 0.02);
        // Rayleigh–Jeans.
        let (w, t) = (angular(1e9), 10.0);
        let kt_over_hw = K_B * t / (HBAR * w);
        assert!(1.0 / kt_over_hw < 0.01);
        assert_relative_eq!(bose_occupancy(w, t), kt_over_hw, max_relative = 0.01);
    }

    #[test]
    fn ideal_chain_adds_nothing() {
        let psd = PortPsd { detuning: 0.0, cavity_noise: 0.3, measurement_noise: 0.7, signal_gain: 0.1 };
        let chain = ChainParams::ideal();
        assert_relative_eq!(total_noise_with_gain(&psd, &chain, 1e300).unwrap(), 1.0, epsilon = 1e-12);
        assert!(total_noise_with_gain(&psd, &chain, 0.0).is_err());
    }

    #[test]
    fn chain_terms_in_quanta_then_vacuum_units() {
        let psd = PortPsd { detuning: 0.0, cavity_noise: 1.0, measurement_noise: 0.0, signal_gain: 0.0 };
        let chain = ChainParams { efficiency: 0.9, n_sys: 32.0, ..ChainParams::default() };
        let n_t = chain.thermal_occupation();
        // Chain terms in quanta with S_N = 1 vacuum unit = ½ quantum, then ×2.
        let quanta = 0.5 + (0.1 / 0.9) * (n_t + 0.5) + 32.0 / (0.9 * 100.0);
        let total = total_noise_with_gain(&psd, &chain, 100.0).unwrap();
        assert_relative_eq!(total, 2.0 * quanta, max_relative = 1e-12);
        assert_relative_eq!(total, 1.0 + 0.1 / 0.9 + 2.0 * 32.0 / 90.0, max_relative = 1e-4);
    }

    #[test]
    fn balanced_chain_share_is_small_on_resonance() {
        let sys = SystemParams::prototype(7.30e6, 7.30e6);
        let psd = qnet::port_psd(&sys, 0.0, &InputOccupations::default()).unwrap();
        let chain = ChainParams::default();
        let total = total_noise_psd(&psd, &chain, 0.0).unwrap();
        assert!((total - psd.total()) / total < 0.03);
    }

    #[test]
    fn visibility_cases() {
        assert_eq!(visibility(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(visibility(1.0, 4.0).unwrap(), 0.25);
        assert!(visibility(1.0, 0.0).is_err());
    }

    #[test]
    fn jpa_profile_shape() {
        let jpa = JpaGainProfile::default();
        assert_relative_eq!(jpa.gain(0.0), 1000.0, max_relative = 1e-12);
        let half = jpa.gain(angular(1e6));
        assert_relative_eq!(half - 1.0, 999.0 / 2.0, max_relative = 1e-12);
        assert!(jpa.gain(angular(1e9)) >= 1.0);
    }

    #[test]
    fn scan_rate_zero_and_ratio_cases() {
        let grid: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let zero = VisibilityCurve::new(grid.clone(), vec![0.0; 11]).unwrap();
        let zr = scan_rate(&zero).unwrap();
        assert_eq!(zr.integral_alpha_sq, 0.0);
        let bump: Vec<f64> = (0..11).map(|i| if (3..=7).contains(&i) { 1.0 } else { 0.0 }).collect();
        let c = VisibilityCurve::new(grid, bump).unwrap();
        let r = scan_rate(&c).unwrap();
        assert_relative_eq!(enhancement_ratio(&r, &r).unwrap(), 1.0);
        let r2 = scan_rate(&c.scaled(2.0)).unwrap();
        assert_relative_eq!(enhancement_ratio(&r2, &r2).unwrap(), 1.0);
        assert_relative_eq!(r2.integral_alpha_sq, 4.0 * r.integral_alpha_sq);
        assert!(enhancement_ratio(&r, &zr).is_err());
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let c = VisibilityCurve::new(vec![-1.0, 0.0, 1.0], vec![0.5, 1.0, 0.5]).unwrap();
        assert!(matches!(scan_rate(&c), Err(Error::InsufficientSpan(_))));
    }

    #[test]
    fn curve_validation() {
        assert!(VisibilityCurve::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(VisibilityCurve::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(VisibilityCurve::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn bandwidth_zero_without_coupling() {
        let sys = SystemParams::prototype(0.0, 0.0);
        let grid = DetuningGrid { half_span_hz: 5e6, spacing_hz: 1e4 }.points_hz();
        let s = sweep(&sys, &ChainParams::default(), &grid, Execution::Sequential).unwrap();
        let psd: Vec<PortPsd> = s.points.iter().map(|p| p.psd).collect();
        assert_eq!(visibility_bandwidth(&psd), 0.0);
    }

    #[test]
    fn chain_validation() {
        let bad = ChainParams { efficiency: 0.0, ..ChainParams::default() };
        assert!(bad.validate().is_err());
        let bad = ChainParams { temperature: 0.0, ..ChainParams::default() };
        assert!(bad.validate().is_err());
        assert!(ChainParams::default().validate().is_ok());
    }
}
