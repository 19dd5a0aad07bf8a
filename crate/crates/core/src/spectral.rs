//! Axis-wise N-d FFT on a [`LatticeGrid`]. The inverse is normalised by 1/M.

use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::lattice::{LatticeGrid, C64};

pub struct GridFft {
    dims: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for GridFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridFft").field("dims", &self.dims).finish()
    }
}

impl GridFft {
    pub fn new(grid: &LatticeGrid) -> Self {
        let mut planner = FftPlanner::new();
        let dims = grid.dims().to_vec();
        let forward = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self { dims, forward, inverse }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [C64]) {
        self.transform(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut [C64]) {
        self.transform(data, &self.inverse);
        let scale = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    pub fn forward_real(&self, f: &[f64]) -> Vec<C64> {
        let mut buf: Vec<C64> = f.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform, keeping the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<C64>) -> Vec<f64> {
        self.inverse(&mut spectrum);
        spectrum.into_iter().map(|z| z.re).collect()
    }

    /// `Re IFFT(multiplier · FFT(f))`.
    pub fn filter(&self, f: &[f64], multiplier: &[f64]) -> Vec<f64> {
        let mut spec = self.forward_real(f);
        spec.iter_mut().zip(multiplier).for_each(|(z, m)| *z *= *m);
        self.inverse_real(spec)
    }

    fn transform(&self, data: &mut [C64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.len(), "buffer does not match grid");
        let total = data.len();
        for (axis, plan) in plans.iter().enumerate() {
            let n = self.dims[axis];
            if n == 1 {
                continue;
            }
            let stride: usize = self.dims[axis + 1..].iter().product();
            let block = n * stride;
            let mut line = vec![C64::new(0.0, 0.0); n];
            let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            for outer in 0..total / block {
                for inner in 0..stride {
                    let base = outer * block + inner;
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        data[base + j * stride] = *v;
                    }
                }
            }
        }
    }
}
