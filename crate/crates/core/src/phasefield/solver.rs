//! Semi-implicit Fourier-spectral time stepping.
//!
//! With `k^2` the squared continuous wavenumber of each periodic mode, one
//! step is
//!
//! ```text
//! c_hat' = ((1 + dt M S k^2) c_hat - dt M k^2 g_hat) / (1 + dt M S k^2 + dt M kappa k^4)
//! ```
//!
//! with `g = f'(c)` and `S = stabilization * W`. The `S` terms cancel at
//! steady state; they damp the explicit bulk term at large time steps.
//!
//! The zero mode has `k = 0` and is carried over untouched, so the mean
//! composition is conserved up to transform round-off.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

use super::fft::{signed_mode, Fft2d};
use super::{bulk_energy_density, CompositionField, NoiseKind, PhaseFieldError, PhaseFieldParams};
use crate::rng::RandomStream;

const BLOW_UP: f64 = 10.0;

/// Reusable solver state for one parameter set.
pub struct CahnHilliard {
    params: PhaseFieldParams,
    fft: Fft2d,
    k2: Vec<f64>,
    denom: Vec<f64>,
    stab: Vec<f64>,
    c_hat: Vec<Complex64>,
    g_hat: Vec<Complex64>,
    steps_taken: usize,
}

impl CahnHilliard {
    pub fn new(params: &PhaseFieldParams) -> Result<Self, PhaseFieldError> {
        params.validate()?;
        let n = params.grid_n;
        let dk = 2.0 * PI / params.domain_l;
        let mut k2 = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let (kx, ky) = (signed_mode(x, n) as f64 * dk, signed_mode(y, n) as f64 * dk);
                k2.push(kx * kx + ky * ky);
            }
        }
        let scale = params.dt * params.mobility;
        let s = params.stabilization * params.barrier;
        let stab: Vec<f64> = k2.iter().map(|&q| 1.0 + scale * s * q).collect();
        let denom = k2
            .iter()
            .zip(&stab)
            .map(|(&q, &st)| st + scale * params.kappa * q * q)
            .collect();
        Ok(Self {
            params: params.clone(),
            fft: Fft2d::new(n),
            k2,
            denom,
            stab,
            c_hat: vec![Complex64::default(); n * n],
            g_hat: vec![Complex64::default(); n * n],
            steps_taken: 0,
        })
    }

    pub fn params(&self) -> &PhaseFieldParams {
        &self.params
    }

    /// Advances `field` by one time step in place.
    pub fn step(&mut self, field: &mut CompositionField) -> Result<(), PhaseFieldError> {
        let p = &self.params;
        assert_eq!(field.n, p.grid_n, "field size does not match the solver grid");
        for ((ch, gh), &c) in self.c_hat.iter_mut().zip(self.g_hat.iter_mut()).zip(&field.data) {
            *ch = Complex64::new(c, 0.0);
            *gh = Complex64::new(bulk_energy_density(c, p).1, 0.0);
        }
        self.fft.forward(&mut self.c_hat);
        self.fft.forward(&mut self.g_hat);
        let scale = p.dt * p.mobility;
        for (((ch, gh), (&q, &den)), &st) in self
            .c_hat
            .iter_mut()
            .zip(&self.g_hat)
            .zip(self.k2.iter().zip(&self.denom))
            .zip(&self.stab)
        {
            *ch = (*ch * st - *gh * (scale * q)) / den;
        }
        self.fft.inverse(&mut self.c_hat);
        let norm = (p.grid_n * p.grid_n) as f64;
        let mut max_abs = 0.0f64;
        for (c, ch) in field.data.iter_mut().zip(&self.c_hat) {
            *c = ch.re / norm;
            max_abs = max_abs.max(c.abs());
            if !c.is_finite() {
                max_abs = f64::INFINITY;
            }
        }
        self.steps_taken += 1;
        field.time += p.dt;
        if max_abs > BLOW_UP {
            return Err(PhaseFieldError::BlowUp {
                step: self.steps_taken,
                time: field.time,
                max_abs,
            });
        }
        Ok(())
    }

    /// Total free energy: midpoint sum of the bulk density plus the
    /// gradient term evaluated spectrally, times the cell area.
    pub fn free_energy(&mut self, field: &CompositionField) -> f64 {
        let p = &self.params;
        let n = p.grid_n;
        let area = p.cell_size() * p.cell_size();
        let bulk: f64 = field.data.iter().map(|&c| bulk_energy_density(c, p).0).sum();
        for (ch, &c) in self.c_hat.iter_mut().zip(&field.data) {
            *ch = Complex64::new(c, 0.0);
        }
        self.fft.forward(&mut self.c_hat);
        // Parseval: sum_x |grad c|^2 = (1/N^2) sum_k k^2 |c_hat|^2
        let grad: f64 = self
            .c_hat
            .iter()
            .zip(&self.k2)
            .map(|(ch, &q)| q * ch.norm_sqr())
            .sum::<f64>()
            / (n * n) as f64;
        area * (bulk + 0.5 * p.kappa * grad)
    }
}

/// `c* + A zeta` per cell, then recentred so the mean is exactly `c*`
/// while every cell stays within `[c* - A, c* + A]`.
pub fn init_field(p: &PhaseFieldParams, rng: &mut RandomStream) -> Result<CompositionField, PhaseFieldError> {
    p.validate()?;
    let cells = p.grid_n * p.grid_n;
    let zeta: Vec<f64> = (0..cells)
        .map(|_| match p.noise {
            NoiseKind::ClippedNormal => {
                let z: f64 = StandardNormal.sample(rng);
                z.clamp(-1.0, 1.0)
            }
            NoiseKind::Uniform => 2.0 * rng.unit() - 1.0,
        })
        .collect();
    let mu = zeta.iter().sum::<f64>() / cells as f64;
    // zeta - mu lies in [-1 - |mu|, 1 + |mu|]
    let shrink = 1.0 / (1.0 + mu.abs());
    let data = zeta
        .iter()
        .map(|z| p.c_star + p.noise_amp * ((z - mu) * shrink))
        .collect();
    Ok(CompositionField {
        n: p.grid_n,
        data,
        time: 0.0,
    })
}

/// One step from a fresh solver. Prefer [`CahnHilliard`] for many steps.
pub fn step(field: &CompositionField, p: &PhaseFieldParams) -> Result<CompositionField, PhaseFieldError> {
    let mut solver = CahnHilliard::new(p)?;
    let mut out = field.clone();
    solver.step(&mut out)?;
    Ok(out)
}

pub fn total_free_energy(field: &CompositionField, p: &PhaseFieldParams) -> Result<f64, PhaseFieldError> {
    Ok(CahnHilliard::new(p)?.free_energy(field))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub energy: f64,
    pub mean: f64,
    pub field: CompositionField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn final_field(&self) -> &CompositionField {
        &self.snapshots.last().expect("trajectory holds the initial condition").field
    }
}

/// Initial condition followed by `steps` updates, snapshotting the initial
/// field, every `snapshot_every` steps and the final field.
pub fn run(p: &PhaseFieldParams, rng: &mut RandomStream) -> Result<Trajectory, PhaseFieldError> {
    let mut solver = CahnHilliard::new(p)?;
    let mut field = init_field(p, rng)?;
    let mut snapshots = Vec::new();
    let mut record = |solver: &mut CahnHilliard, field: &CompositionField, step: usize| {
        snapshots.push(Snapshot {
            step,
            time: field.time,
            energy: solver.free_energy(field),
            mean: field.mean(),
            field: field.clone(),
        });
    };
    record(&mut solver, &field, 0);
    for s in 1..=p.steps {
        solver.step(&mut field)?;
        let due = p.snapshot_every > 0 && s % p.snapshot_every == 0;
        if due || s == p.steps {
            record(&mut solver, &field, s);
        }
    }
    Ok(Trajectory { snapshots })
}
