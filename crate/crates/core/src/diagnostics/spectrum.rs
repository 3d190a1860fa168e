use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::Network;

/// `n` equally spaced points on `[z_min, z_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub z_min: f64,
    pub z_max: f64,
    pub n: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            z_min: 0.0,
            z_max: 1.0,
            n: 1024,
        }
    }
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || !self.n.is_power_of_two() {
            return Err(Error::Argument(format!(
                "grid size must be a power of two >= 2, got {}",
                self.n
            )));
        }
        if !(self.z_max > self.z_min) {
            return Err(Error::Argument(format!(
                "empty grid range [{}, {})",
                self.z_min, self.z_max
            )));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        self.z_max - self.z_min
    }

    pub fn spacing(&self) -> f64 {
        self.period() / self.n as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.z_min + self.period() * i as f64 / self.n as f64)
            .collect()
    }
}

fn dft(values: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    buf
}

/// One-sided amplitude spectrum of real samples: bin 0 is the mean, bins
/// `0 < k < N/2` carry `2 |X_k| / N` and the Nyquist bin `|X_{N/2}| / N`, so
/// a unit-amplitude tone at an integer frequency reads 1 in its bin.
pub fn amplitude_spectrum(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Argument(format!(
            "sample count must be a power of two >= 2, got {n}"
        )));
    }
    let x = dft(values);
    let nf = n as f64;
    Ok((0..=n / 2)
        .map(|k| {
            let scale = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            scale * x[k].norm() / nf
        })
        .collect())
}

/// Amplitude spectrum of `f` sampled on `grid`.
pub fn function_spectrum(f: impl Fn(f64) -> f64, grid: &Grid) -> Result<Vec<f64>> {
    grid.validate()?;
    amplitude_spectrum(&grid.points().into_iter().map(f).collect::<Vec<_>>())
}

/// Evaluates a scalar-in scalar-out network on `grid`.
pub fn sample_network(net: &Network, grid: &Grid) -> Result<Vec<f64>> {
    grid.validate()?;
    if net.input_dim() != 1 || net.output_dim() != 1 {
        return Err(Error::Unsupported(format!(
            "spectra need a 1-in 1-out network, got {} -> {}",
            net.input_dim(),
            net.output_dim()
        )));
    }
    let z = Matrix::column_vector(&grid.points());
    Ok(net.predict(&z)?.into_data())
}

/// Amplitude spectra of the learned function over training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSeries {
    pub grid: Grid,
    pub steps: Vec<usize>,
    /// One row per checkpoint, bins `0 ..= N/2`.
    pub amplitudes: Vec<Vec<f64>>,
}

impl SpectrumSeries {
    pub fn bins(&self) -> usize {
        self.grid.n / 2 + 1
    }

    /// Amplitudes clipped to `[0, 1]` for heatmap display.
    pub fn clipped(&self) -> Vec<Vec<f64>> {
        self.amplitudes
            .iter()
            .map(|row| row.iter().map(|v| v.clamp(0.0, 1.0)).collect())
            .collect()
    }

    /// Matrix CSV: a `step` column then one column per bin.
    pub fn write_csv<W: std::io::Write>(&self, out: W, clip: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        header.extend((0..self.bins()).map(|k| format!("bin_{k}")));
        w.write_record(&header)?;
        let rows = if clip {
            self.clipped()
        } else {
            self.amplitudes.clone()
        };
        for (step, row) in self.steps.iter().zip(rows) {
            let mut rec = vec![step.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(crate::error::io_error("<csv>"))?;
        Ok(())
    }
}

/// Sum of amplitudes in bins `from ..`.
pub fn high_frequency_energy(amplitudes: &[f64], from: usize) -> f64 {
    amplitudes.iter().skip(from).sum()
}

/// One spectrum per `(step, network)` checkpoint.
pub fn spectrum(checkpoints: &[(usize, Network)], grid: &Grid) -> Result<SpectrumSeries> {
    let amplitudes = checkpoints
        .par_iter()
        .map(|(_, net)| amplitude_spectrum(&sample_network(net, grid)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumSeries {
        grid: *grid,
        steps: checkpoints.iter().map(|(s, _)| *s).collect(),
        amplitudes,
    })
}

/// Both sides of the discrete Sobolev–Fourier identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParsevalReport {
    /// Grid mean of `f'(z)^2`.
    pub lhs: f64,
    /// `sum_k (2 pi k / P)^2 |c_k|^2` over all signed frequencies.
    pub rhs: f64,
    /// `|lhs - rhs| / max(|lhs|, |rhs|)`, 0 when both vanish.
    pub rel_gap: f64,
}

/// Periodic five-point central difference.
pub fn periodic_derivative(values: &[f64], spacing: f64) -> Vec<f64> {
    let n = values.len();
    let at = |i: isize| values[i.rem_euclid(n as isize) as usize];
    (0..n as isize)
        .map(|i| (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2)) / (12.0 * spacing))
        .collect()
}

/// Compares the mean squared derivative of `values` (sampled on `grid`)
/// with the frequency-weighted Fourier energy. `derivative` supplies exact
/// derivatives; otherwise a periodic finite difference is used.
pub fn parseval_check(
    values: &[f64],
    derivative: Option<&[f64]>,
    grid: &Grid,
) -> Result<ParsevalReport> {
    grid.validate()?;
    if values.len() != grid.n || derivative.is_some_and(|d| d.len() != grid.n) {
        return Err(Error::Argument(format!(
            "expected {} samples per series",
            grid.n
        )));
    }
    let fd;
    let deriv = match derivative {
        Some(d) => d,
        None => {
            fd = periodic_derivative(values, grid.spacing());
            &fd
        }
    };
    let n = grid.n;
    let lhs = deriv.iter().map(|d| d * d).sum::<f64>() / n as f64;
    let x = dft(values);
    let omega = 2.0 * PI / grid.period();
    let mut rhs = 0.0;
    for k in 1..=n / 2 {
        let c2 = (x[k].norm() / n as f64).powi(2);
        let w = (omega * k as f64).powi(2);
        rhs += if k == n / 2 { w * c2 } else { 2.0 * w * c2 };
    }
    let scale = lhs.abs().max(rhs.abs());
    let rel_gap = if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    };
    Ok(ParsevalReport { lhs, rhs, rel_gap })
}

/// A sum of sines `sum_i a_i sin(2 pi r_i z + phi_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tones {
    pub freqs: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

impl Tones {
    /// Unit amplitudes and zero phases.
    pub fn unit(freqs: &[f64]) -> Self {
        Tones {
            freqs: freqs.to_vec(),
            amplitudes: vec![1.0; freqs.len()],
            phases: vec![0.0; freqs.len()],
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        self.iter()
            .map(|(r, a, p)| a * (2.0 * PI * r * z + p).sin())
            .sum()
    }

    pub fn derivative(&self, z: f64) -> f64 {
        self.iter()
            .map(|(r, a, p)| a * 2.0 * PI * r * (2.0 * PI * r * z + p).cos())
            .sum()
    }

    fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.freqs
            .iter()
            .zip(&self.amplitudes)
            .zip(&self.phases)
            .map(|((&r, &a), &p)| (r, a, p))
    }

    /// Parseval check on `grid` with the analytic derivative, or with the
    /// finite-difference derivative when `analytic` is false.
    pub fn parseval(&self, grid: &Grid, analytic: bool) -> Result<ParsevalReport> {
        grid.validate()?;
        let z = grid.points();
        let f: Vec<f64> = z.iter().map(|&v| self.value(v)).collect();
        if analytic {
            let d: Vec<f64> = z.iter().map(|&v| self.derivative(v)).collect();
            parseval_check(&f, Some(&d), grid)
        } else {
            parseval_check(&f, None, grid)
        }
    }
}
