use haloscope::chain::{self, ChainParams, ScanRateReport, VisibilityCurve};
use haloscope::pipeline::{shift_and_combine, ProcessedSpectrum, SavitzkyGolay};
use haloscope::qnet::{self, angular, build_drift, InputOccupations, Port, SystemParams};
use haloscope::Execution;
use num_complex::Complex64;
use proptest::prelude::*;

fn device() -> impl Strategy<Value = SystemParams> {
    (
        1e4..5e6f64,
        0.0..1.0f64,
        1e5..1e8f64,
        0.0..3e7f64,
        0.0..1.0f64,
    )
        .prop_map(|(kl, a_frac, km, gc, gg_frac)| {
            SystemParams::from_hz(7.454e9, kl, kl * a_frac, 4.98e9, km, gc, gc * gg_frac)
        })
}

fn ql_device() -> impl Strategy<Value = SystemParams> {
    (1e4..2e6f64, 20.0..200.0f64).prop_map(|(kl, ratio)| {
        SystemParams::from_hz(7.454e9, kl, 1e-3 * kl, 4.98e9, ratio * kl, 0.0, 0.0).with_quantum_limited_rates()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scattering_preserves_canonical_form(sys in device(), d in -5e7..5e7f64) {
        let s = qnet::scattering_at(&sys, angular(d)).unwrap();
        prop_assert!(s.symplectic_defect() < 1e-9, "defect {}", s.symplectic_defect());
    }

    #[test]
    fn loss_and_axion_routes_are_reciprocal(sys in device(), d in -5e7..5e7f64) {
        prop_assume!(sys.kappa_a() > 0.0);
        let s = qnet::scattering_at(&sys, angular(d)).unwrap();
        let via_loss = s.mode_gain(Port::Measurement, Port::Loss) * sys.kappa_a() / sys.kappa_l();
        let via_axion = s.mode_gain(Port::Measurement, Port::Axion);
        prop_assert!((via_loss - via_axion).abs() <= 1e-9 * via_axion.max(1e-300) + 1e-300);
        let idler_loss = s.mode_idler_gain(Port::Measurement, Port::Loss) * sys.kappa_a() / sys.kappa_l();
        let idler_axion = s.mode_idler_gain(Port::Measurement, Port::Axion);
        prop_assert!((idler_loss - idler_axion).abs() <= 1e-9 * idler_axion.max(1e-300) + 1e-300);
    }

    #[test]
    fn balanced_drift_decouples_x_a(sys in device()) {
        let mut sys = sys;
        sys.rates.g_g = sys.rates.g_c;
        let m = build_drift(&sys);
        prop_assert_eq!(m[(0, 2)], 0.0);
        prop_assert_eq!(m[(0, 3)], 0.0);
    }

    #[test]
    fn quantum_limited_matches_single_cavity(sys in ql_device(), x in -5.0..5.0f64) {
        let kl = sys.kappa_l() + sys.kappa_a();
        let d = x * sys.kappa_l();
        let g = sys.rates.g_c;
        let k_eff = 4.0 * g * g / sys.kappa_m();
        let oracle = (Complex64::new(k_eff - kl, -2.0 * d) / Complex64::new(k_eff + kl, 2.0 * d)).norm_sqr();
        let s = qnet::scattering_at(&sys, d).unwrap();
        let model = s.mode_gain(Port::Measurement, Port::Measurement);
        prop_assert!((model - oracle).abs() < 0.02, "{model} vs {oracle} at {x} κ_ℓ");
    }

    #[test]
    fn balanced_rates_reflect_vacuum_at_unity(sys in device(), d in -5e7..5e7f64) {
        let mut sys = sys;
        sys.rates.g_g = sys.rates.g_c;
        let psd = qnet::port_psd(&sys, angular(d), &InputOccupations::default()).unwrap();
        prop_assert!((psd.measurement_noise - 1.0).abs() < 1e-6, "{}", psd.measurement_noise);
    }

    #[test]
    fn efficiency_never_hurts_visibility(
        gc in 0.0..1.2e7f64,
        d in -2e7..2e7f64,
        eta in 0.05..1.0f64,
        step in 0.0..1.0f64,
        n_sys in 0.0..100.0f64,
    ) {
        let sys = SystemParams::prototype(gc, gc);
        let port = qnet::port_psd(&sys, angular(d), &InputOccupations::default()).unwrap();
        let lo = ChainParams { efficiency: eta, n_sys, ..ChainParams::default() };
        let hi = ChainParams { efficiency: eta + step * (1.0 - eta), ..lo };
        let d = angular(d);
        let n_lo = chain::total_noise_psd(&port, &lo, d).unwrap();
        let n_hi = chain::total_noise_psd(&port, &hi, d).unwrap();
        prop_assert!(n_hi <= n_lo * (1.0 + 1e-12));
        prop_assert!(n_hi >= port.total());
        let a_lo = chain::visibility(port.signal_gain, n_lo).unwrap();
        let a_hi = chain::visibility(port.signal_gain, n_hi).unwrap();
        prop_assert!(a_hi >= a_lo * (1.0 - 1e-12));
    }

    #[test]
    fn enhancement_is_invariant_to_signal_scale(scale in 1e-3..1e3f64, w in 1e5..1e6f64, peak in 0.1..10.0f64) {
        let grid: Vec<f64> = (-2000..=2000).map(|i| i as f64 * 1e4).collect();
        let curve = |width: f64, height: f64| {
            let a = grid.iter().map(|f| height / (1.0 + (f / width).powi(2))).collect();
            VisibilityCurve::new(grid.clone(), a).unwrap()
        };
        let num = curve(w, peak);
        let den = curve(2e5, 1.0);
        let r: fn(&VisibilityCurve) -> ScanRateReport = |c| chain::scan_rate(c).unwrap();
        let base = chain::enhancement_ratio(&r(&num), &r(&den)).unwrap();
        let scaled = chain::enhancement_ratio(&r(&num.scaled(scale)), &r(&den.scaled(scale))).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9 * base);
    }

    #[test]
    fn savitzky_golay_reproduces_low_order_polynomials(
        coeffs in proptest::collection::vec(-1.0..1.0f64, 5),
        order in 0usize..=4,
    ) {
        let sg = SavitzkyGolay::new(31, order).unwrap();
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 - 100.0) / 100.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (0..=order).map(|p| coeffs[p] * x.powi(p as i32)).sum()).collect();
        let out = sg.apply(&ys).unwrap();
        for (y, o) in ys.iter().zip(&out) {
            prop_assert!((y - o).abs() < 1e-9);
        }
    }

    #[test]
    fn shift_round_trip_is_identity(steps in 1usize..6, step_bins in 1i64..8, pick in 0usize..6, f in 0usize..=40) {
        let k = 40usize;
        let s = pick % steps;
        let processed: Vec<ProcessedSpectrum> = (0..steps)
            .map(|i| {
                let mut excess = vec![0.0f32; k + 1];
                if i == s {
                    excess[f] = 1.0;
                }
                ProcessedSpectrum { step_index: i, excess, sigma: 1.0 }
            })
            .collect();
        let alpha = vec![1.0; k + 1];
        let c = shift_and_combine(&processed, step_bins, 1.0, &alpha, 0.0, Execution::Sequential).unwrap();
        let shift = s as i64 * step_bins;
        for (i, e) in c.excess.iter().enumerate() {
            let j = c.first_bin + i as i64;
            let back = j + shift;
            let hit = back.unsigned_abs() as usize == f && back.abs() <= k as i64;
            prop_assert_eq!(*e != 0.0, hit, "frame bin {} maps to detector bin {}", j, back);
        }
    }
}
