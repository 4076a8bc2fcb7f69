//! Linear input–output model of the cavity (A) / readout (B) parametric network.
//!
//! The interaction Hamiltonian in the doubly rotating frame is
//! `g_C (a†b + ab†) + g_G (ab + a†b†) = (g_C + g_G) X_A X_B + (g_C − g_G) Y_A Y_B`,
//! with quadratures `X = (a + a†)/√2`, `Y = (a − a†)/(i√2)`. Balanced rates
//! give the QND form `2 g_C X_A X_B`.
//!
//! The cavity couples to the axion port (`κ_a`) and the internal-loss port
//! (`κ_ℓ`); the readout couples to the measurement port (`κ_m`) and, when
//! nonzero, to an internal-loss bath. Fields obey `ẋ = M x + √κ·x_in` and
//! `x_out = x_in − √κ·x`, so at detuning `δ` the quadrature scattering matrix is
//! `S(δ) = I − Bᵀ (−iδ − M)⁻¹ B`.

use nalgebra::SMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angular frequency from a frequency in Hz.
pub fn angular(hz: f64) -> f64 {
    std::f64::consts::TAU * hz
}

/// Frequency in Hz from an angular frequency.
pub fn hertz(rad_per_s: f64) -> f64 {
    rad_per_s / std::f64::consts::TAU
}

/// One resonator mode. All fields are angular (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeParams {
    pub frequency: f64,
    pub internal_loss_rate: f64,
    pub external_coupling_rate: f64,
}

impl ModeParams {
    pub fn total_rate(&self) -> f64 {
        self.internal_loss_rate + self.external_coupling_rate
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.frequency > 0.0) {
            return Err(Error::InvalidParameter(format!("{name}: frequency must be > 0")));
        }
        if !(self.internal_loss_rate >= 0.0) || !(self.external_coupling_rate >= 0.0) {
            return Err(Error::InvalidParameter(format!("{name}: rates must be ≥ 0")));
        }
        Ok(())
    }
}

/// Swap (`g_C`) and two-mode-squeezing (`g_G`) rates, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionRates {
    pub g_c: f64,
    pub g_g: f64,
}

/// Full network configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Cavity mode A: internal loss `κ_ℓ`, axion-port coupling `κ_a`.
    pub cavity: ModeParams,
    /// Readout mode B: internal loss (zero by default), measurement coupling `κ_m`.
    pub readout: ModeParams,
    pub rates: InteractionRates,
}

impl SystemParams {
    /// Prototype device values with the given interaction rates (Hz).
    pub fn prototype(g_c_hz: f64, g_g_hz: f64) -> Self {
        Self::from_hz(7.454e9, 960e3, 1220.0, 4.98e9, 20.6e6, g_c_hz, g_g_hz)
    }

    /// Build from frequencies in Hz (`ν = κ/2π`).
    pub fn from_hz(
        cavity_freq: f64,
        kappa_loss: f64,
        kappa_axion: f64,
        readout_freq: f64,
        kappa_meas: f64,
        g_c: f64,
        g_g: f64,
    ) -> Self {
        Self {
            cavity: ModeParams {
                frequency: angular(cavity_freq),
                internal_loss_rate: angular(kappa_loss),
                external_coupling_rate: angular(kappa_axion),
            },
            readout: ModeParams {
                frequency: angular(readout_freq),
                internal_loss_rate: 0.0,
                external_coupling_rate: angular(kappa_meas),
            },
            rates: InteractionRates {
                g_c: angular(g_c),
                g_g: angular(g_g),
            },
        }
    }

    /// Same device with quantum-limited rates: `g_C = √(κ_m κ_ℓ)/2`, `g_G = 0`.
    pub fn with_quantum_limited_rates(mut self) -> Self {
        self.rates = InteractionRates {
            g_c: (self.kappa_m() * self.kappa_l()).sqrt() / 2.0,
            g_g: 0.0,
        };
        self
    }

    pub fn with_rates_hz(mut self, g_c: f64, g_g: f64) -> Self {
        self.rates = InteractionRates {
            g_c: angular(g_c),
            g_g: angular(g_g),
        };
        self
    }

    pub fn kappa_l(&self) -> f64 {
        self.cavity.internal_loss_rate
    }

    pub fn kappa_a(&self) -> f64 {
        self.cavity.external_coupling_rate
    }

    pub fn kappa_m(&self) -> f64 {
        self.readout.external_coupling_rate
    }

    /// Rejects negative rates and any mode with zero total damping.
    pub fn validate(&self) -> Result<()> {
        self.cavity.validate("cavity")?;
        self.readout.validate("readout")?;
        if !(self.rates.g_c >= 0.0) || !(self.rates.g_g >= 0.0) {
            return Err(Error::InvalidParameter("interaction rates must be ≥ 0".into()));
        }
        if self.cavity.total_rate() <= 0.0 || self.readout.total_rate() <= 0.0 {
            return Err(Error::InvalidParameter("each mode needs a nonzero total damping rate".into()));
        }
        Ok(())
    }

    /// Hamiltonian coefficients `(c_XX, c_YY)` of `c_XX X_A X_B + c_YY Y_A Y_B`.
    pub fn hamiltonian_couplings(&self) -> (f64, f64) {
        let InteractionRates { g_c, g_g } = self.rates;
        (g_c + g_g, g_c - g_g)
    }
}

/// Scattering ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Port {
    Axion,
    Loss,
    Measurement,
}

impl Port {
    pub const ALL: [Port; 3] = [Port::Axion, Port::Loss, Port::Measurement];

    fn offset(self) -> usize {
        match self {
            Port::Axion => 0,
            Port::Loss => 2,
            Port::Measurement => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Port::Axion => "a",
            Port::Loss => "l",
            Port::Measurement => "m",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrature {
    X,
    Y,
}

impl Quadrature {
    pub const BOTH: [Quadrature; 2] = [Quadrature::X, Quadrature::Y];

    fn offset(self) -> usize {
        match self {
            Quadrature::X => 0,
            Quadrature::Y => 1,
        }
    }
}

/// Index of `(port, quadrature)` in the 6-vector `(X_a, Y_a, X_ℓ, Y_ℓ, X_m, Y_m)`.
pub fn channel(port: Port, q: Quadrature) -> usize {
    port.offset() + q.offset()
}

/// Langevin drift matrix in the basis `(X_A, Y_A, X_B, Y_B)`.
pub type DriftMatrix = SMatrix<f64, 4, 4>;

pub fn build_drift(params: &SystemParams) -> DriftMatrix {
    let ka = params.cavity.total_rate();
    let kb = params.readout.total_rate();
    let (c_xx, c_yy) = params.hamiltonian_couplings();
    // dX_A = ∂H/∂Y_A, dY_A = −∂H/∂X_A, likewise for B.
    #[rustfmt::skip]
    let m = DriftMatrix::new(
        -ka / 2.0, 0.0,       0.0,       c_yy,
        0.0,       -ka / 2.0, -c_xx,     0.0,
        0.0,       c_yy,      -kb / 2.0, 0.0,
        -c_xx,     0.0,       0.0,       -kb / 2.0,
    );
    m
}

pub type ScatteringMatrix = SMatrix<Complex64, 6, 6>;

/// Frequency-domain quadrature scattering at one detuning.
///
/// `matrix[(out, in)]` maps input channel `in` to output channel `out`
/// (see [`channel`]). Off resonance the entries are complex; the
/// commutator-preserving condition is `S J S† = J`.
#[derive(Debug, Clone)]
pub struct QuadratureScattering {
    pub detuning: f64,
    pub matrix: ScatteringMatrix,
    /// Response of each output channel to the readout internal-loss bath `(X, Y)`.
    pub readout_bath: SMatrix<Complex64, 6, 2>,
}

impl QuadratureScattering {
    pub fn element(&self, out: (Port, Quadrature), input: (Port, Quadrature)) -> Complex64 {
        self.matrix[(channel(out.0, out.1), channel(input.0, input.1))]
    }

    /// Power gain `|S(Y_m ← q)|²`.
    pub fn measured_gain(&self, input: (Port, Quadrature)) -> f64 {
        self.element((Port::Measurement, Quadrature::Y), input).norm_sqr()
    }

    fn mode_coefficients(&self, out: Port, input: Port) -> (Complex64, Complex64) {
        let i = Complex64::i();
        let xx = self.element((out, Quadrature::X), (input, Quadrature::X));
        let xy = self.element((out, Quadrature::X), (input, Quadrature::Y));
        let yx = self.element((out, Quadrature::Y), (input, Quadrature::X));
        let yy = self.element((out, Quadrature::Y), (input, Quadrature::Y));
        let direct = 0.5 * (xx + yy + i * (yx - xy));
        let conjugate = 0.5 * (xx - yy + i * (yx + xy));
        (direct, conjugate)
    }

    /// Phase-preserving (mode-basis) power transmission `|S_out,in|²`.
    pub fn mode_gain(&self, out: Port, input: Port) -> f64 {
        self.mode_coefficients(out, input).0.norm_sqr()
    }

    /// Mode-basis power into the idler (`out ← in†`).
    pub fn mode_idler_gain(&self, out: Port, input: Port) -> f64 {
        self.mode_coefficients(out, input).1.norm_sqr()
    }

    /// `max |S J S† − J|`.
    pub fn symplectic_defect(&self) -> f64 {
        let j = canonical_form();
        let lhs = self.matrix * j * self.matrix.adjoint();
        (lhs - j).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Block-diagonal canonical form `J = ⊕ [[0, 1], [−1, 0]]`.
pub fn canonical_form() -> ScatteringMatrix {
    let mut j = ScatteringMatrix::zeros();
    for p in 0..3 {
        j[(2 * p, 2 * p + 1)] = Complex64::new(1.0, 0.0);
        j[(2 * p + 1, 2 * p)] = Complex64::new(-1.0, 0.0);
    }
    j
}

pub fn scattering_at(params: &SystemParams, detuning: f64) -> Result<QuadratureScattering> {
    let drift = build_drift(params);
    let sa = params.kappa_a().sqrt();
    let sl = params.kappa_l().sqrt();
    let sm = params.kappa_m().sqrt();
    let sb = params.readout.internal_loss_rate.sqrt();

    // Coupling of the 8 bath quadratures (a, ℓ, m, readout loss) into the modes.
    let mut coupling = SMatrix::<Complex64, 4, 8>::zeros();
    for q in 0..2 {
        coupling[(q, q)] = sa.into();
        coupling[(q, 2 + q)] = sl.into();
        coupling[(2 + q, 4 + q)] = sm.into();
        coupling[(2 + q, 6 + q)] = sb.into();
    }

    let shift = Complex64::new(0.0, -detuning);
    let system = SMatrix::<Complex64, 4, 4>::from_fn(|r, c| {
        let diag = if r == c { shift } else { Complex64::new(0.0, 0.0) };
        diag - drift[(r, c)]
    });
    let response = system
        .lu()
        .solve(&coupling)
        .ok_or(Error::Singular { detuning })?;

    // Output coupling: each port reads only its own mode.
    let full: SMatrix<Complex64, 8, 8> = SMatrix::<Complex64, 8, 8>::identity() - coupling.transpose() * response;
    let matrix = full.fixed_view::<6, 6>(0, 0).into_owned();
    let readout_bath = full.fixed_view::<6, 2>(0, 6).into_owned();
    if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Singular { detuning });
    }
    Ok(QuadratureScattering {
        detuning,
        matrix,
        readout_bath,
    })
}

/// `κ_m,eff = 4 g_C² / κ_m`.
pub fn effective_coupling(g_c: f64, kappa_m: f64) -> Result<f64> {
    if kappa_m == 0.0 {
        return Err(Error::ZeroDenominator("κ_m = 0 in effective coupling".into()));
    }
    Ok(4.0 * g_c * g_c / kappa_m)
}

/// `|S_mℓ| = √(κ_ℓ/κ_a)·|S_ma|`.
pub fn infer_s_ml(s_ma: f64, kappa_l: f64, kappa_a: f64) -> Result<f64> {
    if kappa_a == 0.0 {
        return Err(Error::ZeroDenominator("κ_a = 0 when inferring S_mℓ".into()));
    }
    Ok((kappa_l / kappa_a).sqrt() * s_ma)
}

/// Thermal occupation (quanta) of the bath entering each port.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InputOccupations {
    pub axion: f64,
    pub loss: f64,
    pub measurement: f64,
    pub readout_loss: f64,
}

/// Quadrature PSD (vacuum = 1) of `N` thermal quanta.
pub fn quanta_to_vacuum_units(quanta: f64) -> f64 {
    2.0 * quanta + 1.0
}

/// Decomposed PSD of the measured quadrature `Y_m`, vacuum units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortPsd {
    pub detuning: f64,
    /// Noise entering through the cavity: internal loss plus the axion-port bath.
    pub cavity_noise: f64,
    /// Noise entering through the readout: measurement port plus readout loss.
    pub measurement_noise: f64,
    /// `Σ_q |S(Y_m ← q_a)|²`: gain applied to a phase-random axion-port signal.
    pub signal_gain: f64,
}

impl PortPsd {
    pub fn total(&self) -> f64 {
        self.cavity_noise + self.measurement_noise
    }
}

pub fn port_psd(
    params: &SystemParams,
    detuning: f64,
    occupations: &InputOccupations,
) -> Result<PortPsd> {
    let occ = [occupations.axion, occupations.loss, occupations.measurement, occupations.readout_loss];
    if occ.iter().any(|n| !(*n >= 0.0)) {
        return Err(Error::InvalidParameter("occupations must be ≥ 0".into()));
    }
    Ok(psd_from_scattering(&scattering_at(params, detuning)?, occupations))
}

pub fn psd_from_scattering(s: &QuadratureScattering, occupations: &InputOccupations) -> PortPsd {
    let gain = |port| -> f64 {
        Quadrature::BOTH
            .iter()
            .map(|&q| s.measured_gain((port, q)))
            .sum()
    };
    let y_m = channel(Port::Measurement, Quadrature::Y);
    let bath: f64 = (0..2).map(|q| s.readout_bath[(y_m, q)].norm_sqr()).sum();
    let signal_gain = gain(Port::Axion);
    PortPsd {
        detuning: s.detuning,
        cavity_noise: signal_gain * quanta_to_vacuum_units(occupations.axion)
            + gain(Port::Loss) * quanta_to_vacuum_units(occupations.loss),
        measurement_noise: gain(Port::Measurement) * quanta_to_vacuum_units(occupations.measurement)
            + bath * quanta_to_vacuum_units(occupations.readout_loss),
        signal_gain,
    }
}
