//! Microstructure descriptors: phase area fractions, phase compositions and
//! a characteristic length from the radially averaged power spectrum.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{signed_mode, Fft2d};
use super::{CompositionField, PhaseFieldParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QoIFlags {
    pub alpha_empty: bool,
    pub beta_empty: bool,
    /// No power outside the zero mode; `char_length` is set to `L`.
    pub flat_spectrum: bool,
}

impl QoIFlags {
    pub fn any(&self) -> bool {
        self.alpha_empty || self.beta_empty || self.flat_spectrum
    }

    /// `;`-separated names of the raised flags.
    pub fn to_field(&self) -> String {
        let mut out = Vec::new();
        if self.alpha_empty {
            out.push("alpha_empty");
        }
        if self.beta_empty {
            out.push("beta_empty");
        }
        if self.flat_spectrum {
            out.push("flat_spectrum");
        }
        out.join(";")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoIRecord {
    pub area_fraction_alpha: f64,
    pub area_fraction_beta: f64,
    pub comp_alpha: f64,
    pub comp_beta: f64,
    pub char_length: f64,
    pub flags: QoIFlags,
}

impl QoIRecord {
    pub const NAMES: [&'static str; 5] = ["area_alpha", "area_beta", "comp_alpha", "comp_beta", "char_length"];

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.area_fraction_alpha,
            self.area_fraction_beta,
            self.comp_alpha,
            self.comp_beta,
            self.char_length,
        ]
    }
}

/// Power spectrum averaged over annuli of unit width in mode number.
/// Entry `r` (for `r` in `1..=n/2`) is the mean of `|c_hat|^2` over modes
/// whose radius rounds to `r`; entry 0 is unused.
pub fn radial_spectrum(field: &CompositionField) -> Vec<f64> {
    let n = field.n;
    let mut buf: Vec<Complex64> = field.data.iter().map(|&c| Complex64::new(c, 0.0)).collect();
    Fft2d::new(n).forward(&mut buf);
    let bins = n / 2;
    let mut power = vec![0.0; bins + 1];
    let mut count = vec![0usize; bins + 1];
    for y in 0..n {
        for x in 0..n {
            let (mx, my) = (signed_mode(x, n) as f64, signed_mode(y, n) as f64);
            let r = (mx * mx + my * my).sqrt().round() as usize;
            if r == 0 || r > bins {
                continue;
            }
            power[r] += buf[y * n + x].norm_sqr();
            count[r] += 1;
        }
    }
    for (p, &c) in power.iter_mut().zip(&count) {
        if c > 0 {
            *p /= c as f64;
        }
    }
    power
}

/// Thresholds at the midpoint of the two equilibrium compositions; cells at
/// or above it belong to the beta phase. The characteristic length is
/// `2 pi / k_mean` with `k_mean` the first moment of the radial spectrum.
pub fn extract_qoi(field: &CompositionField, p: &PhaseFieldParams) -> QoIRecord {
    let threshold = 0.5 * (p.c_alpha + p.c_beta);
    let total = field.data.len();
    let (mut n_alpha, mut sum_alpha, mut sum_beta) = (0usize, 0.0, 0.0);
    for &c in &field.data {
        if c < threshold {
            n_alpha += 1;
            sum_alpha += c;
        } else {
            sum_beta += c;
        }
    }
    let n_beta = total - n_alpha;
    let global = field.mean();
    let mut flags = QoIFlags::default();
    let comp_alpha = if n_alpha > 0 {
        sum_alpha / n_alpha as f64
    } else {
        flags.alpha_empty = true;
        global
    };
    let comp_beta = if n_beta > 0 {
        sum_beta / n_beta as f64
    } else {
        flags.beta_empty = true;
        global
    };

    let spectrum = radial_spectrum(field);
    let (mut moment, mut mass) = (0.0, 0.0);
    for (r, &pw) in spectrum.iter().enumerate().skip(1) {
        moment += r as f64 * pw;
        mass += pw;
    }
    let char_length = if mass > 0.0 {
        // 2 pi / (mean mode * 2 pi / L)
        p.domain_l * mass / moment
    } else {
        flags.flat_spectrum = true;
        p.domain_l
    };

    QoIRecord {
        area_fraction_alpha: n_alpha as f64 / total as f64,
        area_fraction_beta: n_beta as f64 / total as f64,
        comp_alpha,
        comp_beta,
        char_length,
        flags,
    }
}
