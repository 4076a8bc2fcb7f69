//! CSV writers for plot-ready outputs.

use std::io::Write;

use serde::Serialize;

use crate::chain::ConfigurationSweep;
use crate::error::{Error, Result};
use crate::pipeline::{CombinedSpectrum, GrandSpectrum, SearchOutcome};
use crate::qnet::{self, angular, Port, Quadrature, SystemParams};

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

/// One row of the scattering export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SparamRow {
    pub detuning_hz: f64,
    /// `Σ_q |S(Y_m ← q_ℓ)|²`.
    pub cavity_noise_gain: f64,
    /// `Σ_q |S(Y_m ← q_m)|²`.
    pub measurement_noise_gain: f64,
    /// Mode-basis `|S_mℓ|²`.
    pub s_ml_sq: f64,
    /// Mode-basis `|S_mm|²`.
    pub s_mm_sq: f64,
    /// Mode-basis `|S_ma|²`.
    pub s_ma_sq: f64,
}

pub fn sparam_rows(system: &SystemParams, grid_hz: &[f64]) -> Result<Vec<SparamRow>> {
    grid_hz
        .iter()
        .map(|&f| {
            let s = qnet::scattering_at(system, angular(f))?;
            let sum = |p| Quadrature::BOTH.iter().map(|&q| s.measured_gain((p, q))).sum();
            Ok(SparamRow {
                detuning_hz: f,
                cavity_noise_gain: sum(Port::Loss),
                measurement_noise_gain: sum(Port::Measurement),
                s_ml_sq: s.mode_gain(Port::Measurement, Port::Loss),
                s_mm_sq: s.mode_gain(Port::Measurement, Port::Measurement),
                s_ma_sq: s.mode_gain(Port::Measurement, Port::Axion),
            })
        })
        .collect()
}

pub fn write_sparams<W: Write>(w: W, rows: &[SparamRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "detuning_Hz",
        "cavity_noise_gain",
        "measurement_noise_gain",
        "S_ml_sq",
        "S_mm_sq",
        "S_ma_sq",
    ])
    .map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.detuning_hz.to_string(),
            r.cavity_noise_gain.to_string(),
            r.measurement_noise_gain.to_string(),
            r.s_ml_sq.to_string(),
            r.s_mm_sq.to_string(),
            r.s_ma_sq.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Serde(e.to_string()))
}

/// Visibility export; `alpha_sq_normalized` is relative to `reference_peak_alpha²`.
pub fn write_visibility<W: Write>(w: W, sweep: &ConfigurationSweep, reference_peak_alpha: f64) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "detuning_Hz",
        "alpha",
        "alpha_sq_normalized",
        "cavity_noise",
        "measurement_noise",
        "total_noise",
    ])
    .map_err(csv_err)?;
    let norm = reference_peak_alpha * reference_peak_alpha;
    for p in &sweep.points {
        out.write_record([
            p.detuning_hz.to_string(),
            p.alpha.to_string(),
            (p.alpha * p.alpha / norm).to_string(),
            p.psd.cavity_noise.to_string(),
            p.psd.measurement_noise.to_string(),
            p.total_noise.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Serde(e.to_string()))
}

pub fn write_combined<W: Write>(w: W, c: &CombinedSpectrum) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["offset_Hz", "excess", "sigma"]).map_err(csv_err)?;
    for i in 0..c.excess.len() {
        if c.valid[i] {
            out.write_record([c.offset_hz(i).to_string(), c.excess[i].to_string(), c.sigma[i].to_string()])
                .map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| Error::Serde(e.to_string()))
}

pub fn write_grand<W: Write>(w: W, g: &GrandSpectrum) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["offset_Hz", "excess_sigma_units"]).map_err(csv_err)?;
    for i in 0..g.excess.len() {
        out.write_record([g.offset_hz(i).to_string(), g.excess[i].to_string()])
            .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Serde(e.to_string()))
}

pub fn write_outcomes<W: Write>(w: W, outcomes: &[SearchOutcome]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["trial", "offset", "excess", "truth_hit"]).map_err(csv_err)?;
    for o in outcomes {
        out.write_record([
            o.trial.to_string(),
            o.best_bin_offset.to_string(),
            o.best_excess.to_string(),
            o.truth_hit.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Serde(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_grid_writes_header_only() {
        let sys = SystemParams::prototype(0.0, 0.0).with_quantum_limited_rates();
        let rows = sparam_rows(&sys, &[]).unwrap();
        let mut buf = Vec::new();
        write_sparams(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("detuning_Hz,"));
    }

    #[test]
    fn sparams_reference_points() {
        let ql = SystemParams::prototype(0.0, 0.0).with_quantum_limited_rates();
        let rows = sparam_rows(&ql, &[0.0]).unwrap();
        assert!(rows[0].s_mm_sq < 1e-3);
        let gc = SystemParams::prototype(7.30e6, 7.30e6);
        let rows = sparam_rows(&gc, &[-10e6, 0.0, 10e6]).unwrap();
        for r in rows {
            assert!((r.s_mm_sq - 1.0).abs() < 1e-3);
        }
    }
}
