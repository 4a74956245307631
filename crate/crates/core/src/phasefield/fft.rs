use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// In-place 2-D FFT on an `n x n` row-major buffer (rows, transpose,
/// rows, transpose). The inverse is unnormalized.
pub struct Fft2d {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    tmp: Vec<Complex64>,
}

impl Fft2d {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::default(); scratch_len],
            tmp: vec![Complex64::default(); n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn forward(&mut self, buf: &mut [Complex64]) {
        self.apply(buf, true);
    }

    pub fn inverse(&mut self, buf: &mut [Complex64]) {
        self.apply(buf, false);
    }

    fn apply(&mut self, buf: &mut [Complex64], forward: bool) {
        assert_eq!(buf.len(), self.n * self.n);
        let plan = if forward { &self.forward } else { &self.inverse };
        plan.process_with_scratch(buf, &mut self.scratch);
        transpose(buf, &mut self.tmp, self.n);
        plan.process_with_scratch(&mut self.tmp, &mut self.scratch);
        transpose(&self.tmp, buf, self.n);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    for y in 0..n {
        for x in 0..n {
            dst[x * n + y] = src[y * n + x];
        }
    }
}

/// Signed mode number of FFT bin `i` on an `n`-point grid; the Nyquist bin
/// maps to `+n/2`.
pub(crate) fn signed_mode(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}
