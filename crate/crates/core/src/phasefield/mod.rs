//! Two-dimensional Cahn-Hilliard model of spinodal decomposition on a
//! periodic square, and microstructure descriptors of its output.
//!
//! Dynamics: `dc/dt = div(M grad(f'(c) - kappa lap c))` with a double-well
//! bulk energy whose minima sit at `c_alpha` and `c_beta`.

mod fft;
mod qoi;
mod solver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fft::Fft2d;
pub use qoi::{extract_qoi, radial_spectrum, QoIFlags, QoIRecord};
pub use solver::{init_field, run, step, total_free_energy, CahnHilliard, Snapshot, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseFieldError {
    #[error("invalid phase-field parameters: {0}")]
    InvalidParams(String),
    #[error("composition blew up at step {step} (t = {time}): max |c| = {max_abs}")]
    BlowUp { step: usize, time: f64, max_abs: f64 },
}

/// Form of the bulk free energy density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BulkForm {
    /// `W (c - ca)^2 (c - cb)^2`, minima at `ca` and `cb`.
    #[default]
    DoubleWell,
    /// `W (c - ca)(c - cb)`, a single parabola. Kept for comparison only:
    /// it has no two-phase equilibrium.
    Parabola,
}

/// Distribution of the initial-condition noise `zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Standard normal clipped to `[-1, 1]`.
    #[default]
    ClippedNormal,
    /// Uniform on `[-1, 1]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseFieldParams {
    /// Initial mean composition `c*`.
    pub c_star: f64,
    /// Double-well barrier height `W`.
    pub barrier: f64,
    /// Gradient energy coefficient.
    pub kappa: f64,
    pub mobility: f64,
    /// Initial noise amplitude `A`.
    pub noise_amp: f64,
    pub c_alpha: f64,
    pub c_beta: f64,
    /// Cells per side; a power of two.
    pub grid_n: usize,
    /// Side length of the periodic square.
    pub domain_l: f64,
    pub dt: f64,
    /// Linear stabilizer of the time step, in units of `W`.
    pub stabilization: f64,
    pub steps: usize,
    /// Record a snapshot every this many steps (0: initial and final only).
    pub snapshot_every: usize,
    pub bulk: BulkForm,
    pub noise: NoiseKind,
}

impl Default for PhaseFieldParams {
    fn default() -> Self {
        Self {
            c_star: 0.5,
            barrier: 1.0,
            kappa: 1.0,
            mobility: 1.0,
            noise_amp: 0.01,
            c_alpha: 0.3,
            c_beta: 0.7,
            grid_n: 64,
            domain_l: 128.0,
            dt: 20.0,
            stabilization: 1.0,
            steps: 12000,
            snapshot_every: 0,
            bulk: BulkForm::DoubleWell,
            noise: NoiseKind::ClippedNormal,
        }
    }
}

impl PhaseFieldParams {
    pub fn validate(&self) -> Result<(), PhaseFieldError> {
        let bad = |msg: String| Err(PhaseFieldError::InvalidParams(msg));
        let all_finite = [
            self.c_star,
            self.barrier,
            self.kappa,
            self.mobility,
            self.noise_amp,
            self.c_alpha,
            self.c_beta,
            self.domain_l,
            self.dt,
            self.stabilization,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !all_finite {
            return bad("all parameters must be finite".into());
        }
        if !(self.mobility > 0.0) {
            return bad(format!("mobility must be positive, got {}", self.mobility));
        }
        if self.kappa < 0.0 {
            return bad(format!("kappa must be non-negative, got {}", self.kappa));
        }
        if !(self.c_star > 0.0 && self.c_star < 1.0) {
            return bad(format!("c_star must lie in (0, 1), got {}", self.c_star));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.stabilization < 0.0 {
            return bad(format!("stabilization must be non-negative, got {}", self.stabilization));
        }
        if self.noise_amp < 0.0 {
            return bad(format!("noise amplitude must be non-negative, got {}", self.noise_amp));
        }
        if !(self.domain_l > 0.0) {
            return bad(format!("domain length must be positive, got {}", self.domain_l));
        }
        if self.grid_n < 2 || !self.grid_n.is_power_of_two() {
            return bad(format!("grid_n must be a power of two >= 2, got {}", self.grid_n));
        }
        if !(self.c_alpha < self.c_beta) {
            return bad(format!(
                "c_alpha must be below c_beta, got {} and {}",
                self.c_alpha, self.c_beta
            ));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> f64 {
        self.domain_l / self.grid_n as f64
    }

    /// Copy with `[c*, W, kappa, M]` taken from a sample row.
    pub fn with_inputs(&self, inputs: &[f64]) -> Result<Self, PhaseFieldError> {
        if inputs.len() != 4 {
            return Err(PhaseFieldError::InvalidParams(format!(
                "expected 4 inputs [c*, W, kappa, M], got {}",
                inputs.len()
            )));
        }
        let p = Self {
            c_star: inputs[0],
            barrier: inputs[1],
            kappa: inputs[2],
            mobility: inputs[3],
            ..self.clone()
        };
        p.validate()?;
        Ok(p)
    }
}

/// Bulk energy density `f(c)` and its derivative `f'(c)`.
pub fn bulk_energy_density(c: f64, p: &PhaseFieldParams) -> (f64, f64) {
    let (a, b) = (c - p.c_alpha, c - p.c_beta);
    match p.bulk {
        BulkForm::DoubleWell => (p.barrier * a * a * b * b, 2.0 * p.barrier * a * b * (a + b)),
        BulkForm::Parabola => (p.barrier * a * b, p.barrier * (a + b)),
    }
}

/// Second derivative of the bulk energy.
pub fn bulk_curvature(c: f64, p: &PhaseFieldParams) -> f64 {
    let (a, b) = (c - p.c_alpha, c - p.c_beta);
    match p.bulk {
        BulkForm::DoubleWell => 2.0 * p.barrier * (a * a + 4.0 * a * b + b * b),
        BulkForm::Parabola => 2.0 * p.barrier,
    }
}

/// Composition on a `grid_n x grid_n` periodic grid, row-major with `x`
/// varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionField {
    pub n: usize,
    pub data: Vec<f64>,
    pub time: f64,
}

impl CompositionField {
    pub fn uniform(n: usize, c: f64) -> Self {
        Self {
            n,
            data: vec![c; n * n],
            time: 0.0,
        }
    }

    /// Field sampled from `f(x, y)` at cell origins of an `l x l` domain.
    pub fn from_fn(n: usize, l: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let h = l / n as f64;
        let data = (0..n * n)
            .map(|k| f((k % n) as f64 * h, (k / n) as f64 * h))
            .collect();
        Self { n, data, time: 0.0 }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.n + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Cyclic shift by `(dx, dy)` cells.
    pub fn shifted(&self, dx: usize, dy: usize) -> Self {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                data[((y + dy) % n) * n + (x + dx) % n] = self.data[y * n + x];
            }
        }
        Self {
            n,
            data,
            time: self.time,
        }
    }
}
