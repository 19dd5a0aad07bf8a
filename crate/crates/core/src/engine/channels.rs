//! Lattice monitoring channels `A_r = ρ̂σ(r)` with optional Newtonian
//! feedback operators `B_r = Φ̂_(σ)(r)`.
//!
//! Every quantity the integrators need reduces to a translation-invariant pair
//! kernel on the field grid, summed over particle pairs.

use std::sync::Arc;

use crate::error::KernelError;
use crate::kernels::{coulomb_multiplier, gaussian_multiplier, profile, LatticeKernel, NoiseField};
use crate::lattice::{LatticeGrid, C64};
use crate::spectral::GridFft;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonFeedback {
    pub g: f64,
    /// Smear the fed-back potential with `g_σ`.
    pub smeared: bool,
}

#[derive(Clone, Debug)]
pub struct LatticeCouplings {
    kernel: LatticeKernel,
    sigma: f64,
    feedback: Option<NewtonFeedback>,
    /// Multiplier of the monitored profile, `e^{−σ²k²/2}`.
    smear_a: Vec<f64>,
    /// Multiplier of the feedback profile, `p_B · (−4πG/λ)`.
    coupling: Vec<f64>,
    profile_a: Vec<f64>,
    pair_a: Vec<f64>,
    pair_b: Vec<f64>,
    pair_s: Vec<f64>,
}

impl LatticeCouplings {
    pub fn new(kernel: LatticeKernel, sigma: f64, feedback: Option<NewtonFeedback>) -> Result<Self, KernelError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(KernelError::Width(sigma));
        }
        let grid = kernel.grid().clone();
        let fft = kernel.fft().clone();
        let smear_a = gaussian_multiplier(&grid, sigma);
        let coupling: Vec<f64> = match feedback {
            Some(fb) => {
                let green = coulomb_multiplier(&grid, fb.g, kernel.symbol());
                if fb.smeared {
                    green.iter().zip(&smear_a).map(|(g, p)| g * p).collect()
                } else {
                    green
                }
            }
            None => vec![0.0; grid.num_sites()],
        };
        let gamma = kernel.multiplier();
        let inverse = kernel.inverse_multiplier();
        let pa: Vec<f64> = gamma.iter().zip(&smear_a).map(|(g, p)| g * p * p).collect();
        let pb: Vec<f64> = inverse.iter().zip(&coupling).map(|(w, q)| w * q * q).collect();
        let ps: Vec<f64> = smear_a.iter().zip(&coupling).map(|(p, q)| p * q).collect();
        Ok(Self {
            profile_a: profile(&fft, &grid, &smear_a),
            pair_a: profile(&fft, &grid, &pa),
            pair_b: profile(&fft, &grid, &pb),
            pair_s: profile(&fft, &grid, &ps),
            kernel,
            sigma,
            feedback,
            smear_a,
            coupling,
        })
    }

    pub fn grid(&self) -> &LatticeGrid {
        self.kernel.grid()
    }

    pub fn kernel(&self) -> &LatticeKernel {
        &self.kernel
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn feedback(&self) -> Option<NewtonFeedback> {
        self.feedback
    }

    fn fft(&self) -> &Arc<GridFft> {
        self.kernel.fft()
    }

    fn pair_sum(&self, pair: &[f64], masses: &[f64], xs: &[usize], ys: &[usize]) -> f64 {
        let grid = self.grid();
        let mut acc = 0.0;
        for (n, &a) in xs.iter().enumerate() {
            for (m, &b) in ys.iter().enumerate() {
                acc += masses[n] * masses[m] * pair[grid.difference(a, b)];
            }
        }
        acc
    }

    /// `Q_γ(A_x, A_y)` for configurations given as field sites per particle.
    pub fn ga(&self, masses: &[f64], xs: &[usize], ys: &[usize]) -> f64 {
        self.pair_sum(&self.pair_a, masses, xs, ys)
    }

    /// `Q_{γ⁻¹}(B_x, B_y)`.
    pub fn gb(&self, masses: &[f64], xs: &[usize], ys: &[usize]) -> f64 {
        self.pair_sum(&self.pair_b, masses, xs, ys)
    }

    /// `∫ A_x(r) B_y(r) dr`.
    pub fn s(&self, masses: &[f64], xs: &[usize], ys: &[usize]) -> f64 {
        self.pair_sum(&self.pair_s, masses, xs, ys)
    }

    /// Decay rate of `ρ_xy` from the monitoring term alone.
    pub fn intrinsic_rate(&self, masses: &[f64], xs: &[usize], ys: &[usize]) -> f64 {
        0.125 * (self.ga(masses, xs, xs) + self.ga(masses, ys, ys) - 2.0 * self.ga(masses, xs, ys))
    }

    /// Decay rate of `ρ_xy` from the feedback noise.
    pub fn backaction_rate(&self, masses: &[f64], xs: &[usize], ys: &[usize]) -> f64 {
        0.5 * (self.gb(masses, xs, xs) + self.gb(masses, ys, ys) - 2.0 * self.gb(masses, xs, ys))
    }

    /// `V_{G,σ}(x) = ½ ∫ ρσ(r;x) Φ_(σ)(r;x) dr`.
    pub fn backaction_potential(&self, masses: &[f64], xs: &[usize]) -> f64 {
        0.5 * self.s(masses, xs, xs)
    }

    /// Real-space profile of the monitored observable, `A_r(x) = Σ m_n prof(r − x_n)`.
    pub fn observable_profile(&self) -> &[f64] {
        &self.profile_a
    }

    /// Real-space profile of the feedback operator, `B_r(x) = Σ m_n prof(r − x_n)`.
    pub fn feedback_profile(&self) -> Vec<f64> {
        profile(self.fft(), self.grid(), &self.coupling)
    }

    /// `⟨A_r⟩` for a mass-density field `Σ_x p_x ϱ̂(r;x)`.
    pub fn expected_signal(&self, mean_density: &[f64]) -> Vec<f64> {
        self.fft().filter(mean_density, &self.smear_a)
    }

    /// Fields `u = γ * g_σ * ε` and `v = Φ-profile * ε` on the grid; a configuration's
    /// noise increments are `dt Σ_n m_n u(x_n)` and `dt Σ_n m_n v(x_n)`.
    pub fn project(&self, noise: &NoiseField) -> (Vec<f64>, Option<Vec<f64>>) {
        let spec = self.fft().forward_real(noise.values());
        let gamma = self.kernel.multiplier();
        let u_spec: Vec<C64> = spec
            .iter()
            .zip(gamma)
            .zip(&self.smear_a)
            .map(|((z, g), p)| z * (g * p))
            .collect();
        let u = self.fft().inverse_real(u_spec);
        let v = self.feedback.map(|_| {
            let v_spec: Vec<C64> = spec.iter().zip(&self.coupling).map(|(z, q)| z * *q).collect();
            self.fft().inverse_real(v_spec)
        });
        (u, v)
    }
}
