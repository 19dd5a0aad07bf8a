//! Named physical parameter sets and their conversion to lattice units.
//!
//! Lattice units fix ħ = 1, a length unit `a` (the spacing) and a mass unit
//! `m₀`, so time is measured in `τ = m₀ a² / ħ`.

use serde::{Deserialize, Serialize};

use crate::gravity::ModelKind;

pub const HBAR: f64 = 1.054_571_817e-34;
pub const NEWTON_G: f64 = 6.674_30e-11;
pub const NUCLEON_MASS: f64 = 1.672_621_923_69e-27;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub kind: ModelKind,
    /// Smearing width in metres.
    pub sigma_m: f64,
    pub sigma_cm: f64,
    /// `γ/ħ²` in m³ kg⁻² s⁻¹ (CSL only).
    pub gamma_over_hbar2_si: Option<f64>,
    /// `γ/ħ²` in cm³ g⁻² s⁻¹ (CSL only).
    pub gamma_over_hbar2_cgs: Option<f64>,
    pub kappa: Option<f64>,
    /// Newton constant in m³ kg⁻¹ s⁻².
    pub g_si: f64,
    /// Saturated intrinsic decoherence rate of one nucleon, s⁻¹ (CSL only).
    pub nucleon_rate_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeMapping {
    pub spacing_m: f64,
    pub mass_unit_kg: f64,
    pub time_unit_s: f64,
    pub sigma: f64,
    pub gamma: Option<f64>,
    pub g: f64,
}

pub const MAPPING_FORMULAS: [&str; 4] = [
    "tau = m0 * a^2 / hbar",
    "sigma_lat = sigma / a",
    "gamma_lat = (gamma / hbar^2) * m0^3 / (hbar * a)",
    "G_lat = G * m0^3 * a / hbar^2",
];

fn csl_nucleon_rate(gamma_over_hbar2: f64, sigma: f64) -> f64 {
    let m = NUCLEON_MASS;
    gamma_over_hbar2 * m * m / (4.0 * (4.0 * std::f64::consts::PI * sigma * sigma).powf(1.5))
}

pub fn grw_csl() -> Preset {
    let sigma = 1e-7;
    let g2 = 1e16;
    Preset {
        name: "GRW-CSL".into(),
        kind: ModelKind::Csl,
        sigma_m: sigma,
        sigma_cm: sigma * 100.0,
        // cm³ g⁻² = 1e-6 m³ / 1e-6 kg²
        gamma_over_hbar2_si: Some(g2),
        gamma_over_hbar2_cgs: Some(g2),
        kappa: None,
        g_si: NEWTON_G,
        nucleon_rate_s: Some(csl_nucleon_rate(g2, sigma)),
    }
}

pub fn dp() -> Preset {
    let sigma = 1e-14;
    Preset {
        name: "DP".into(),
        kind: ModelKind::Dp,
        sigma_m: sigma,
        sigma_cm: sigma * 100.0,
        gamma_over_hbar2_si: None,
        gamma_over_hbar2_cgs: None,
        kappa: Some(2.0),
        g_si: NEWTON_G,
        nucleon_rate_s: None,
    }
}

pub fn all() -> Vec<Preset> {
    vec![grw_csl(), dp()]
}

pub fn to_lattice(preset: &Preset, spacing_m: f64, mass_unit_kg: f64) -> LatticeMapping {
    let (a, m0) = (spacing_m, mass_unit_kg);
    LatticeMapping {
        spacing_m: a,
        mass_unit_kg: m0,
        time_unit_s: m0 * a * a / HBAR,
        sigma: preset.sigma_m / a,
        gamma: preset.gamma_over_hbar2_si.map(|g| g * m0.powi(3) / (HBAR * a)),
        g: preset.g_si * m0.powi(3) * a / (HBAR * HBAR),
    }
}
