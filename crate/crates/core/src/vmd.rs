//! Variational mode decomposition (ADMM in the frequency domain) and the
//! correlation-gated denoiser built on top of it.
//!
//! Frequencies are handled internally in cycles/sample on the mirror-extended
//! grid and reported in Hz.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum VmdError {
    #[error("signal contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("{modes} modes need at least {needed} samples, got {len}")]
    TooShort { modes: usize, needed: usize, len: usize },
    #[error("invalid VMD configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmdConfig {
    pub n_modes: usize,
    /// Bandwidth penalty on each mode.
    pub alpha: f64,
    /// Dual ascent step; 0 gives the noise-slack variant.
    pub tau: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    /// Minimum Pearson correlation with the raw signal for a mode to be kept
    /// by [`vmd_denoise`].
    pub rho_min: f64,
}

impl Default for VmdConfig {
    fn default() -> Self {
        Self {
            n_modes: 4,
            alpha: 2000.0,
            tau: 0.0,
            tolerance: 1e-7,
            max_iters: 500,
            rho_min: 0.1,
        }
    }
}

impl VmdConfig {
    pub fn validate(&self) -> Result<(), VmdError> {
        let bad = |m: String| Err(VmdError::InvalidConfig(m));
        if self.n_modes == 0 {
            return bad("n_modes must be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be >= 0, got {}", self.tau));
        }
        if !(self.tolerance > 0.0) {
            return bad(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmdResult {
    /// Time-domain modes, ordered by ascending center frequency.
    pub modes: Vec<Vec<f64>>,
    /// Center frequency of each mode in Hz, ascending.
    pub center_freqs_hz: Vec<f64>,
    pub iterations_used: usize,
    pub final_residual: f64,
    /// Convergence measure after every iteration.
    pub residual_history: Vec<f64>,
}

impl VmdResult {
    pub fn reconstruction(&self) -> Vec<f64> {
        let n = self.modes.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for m in &self.modes {
            for (o, v) in out.iter_mut().zip(m) {
                *o += v;
            }
        }
        out
    }
}

/// Decomposes `signal` into `cfg.n_modes` band-limited modes, with center
/// frequencies initialised uniformly over `[0, fs/2)`.
pub fn vmd_decompose(signal: &[f64], fs: f64, cfg: &VmdConfig) -> Result<VmdResult, VmdError> {
    let init: Vec<f64> = (0..cfg.n_modes).map(|k| 0.5 * k as f64 / cfg.n_modes as f64 * fs).collect();
    vmd_decompose_with_init(signal, fs, cfg, &init)
}

/// As [`vmd_decompose`] with explicit initial center frequencies (Hz).
pub fn vmd_decompose_with_init(
    signal: &[f64],
    fs: f64,
    cfg: &VmdConfig,
    init_freqs_hz: &[f64],
) -> Result<VmdResult, VmdError> {
    cfg.validate()?;
    let k_modes = cfg.n_modes;
    if init_freqs_hz.len() != k_modes {
        return Err(VmdError::InvalidConfig(format!(
            "{} initial frequencies for {k_modes} modes",
            init_freqs_hz.len()
        )));
    }
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(VmdError::InvalidConfig(format!("sample rate {fs}")));
    }
    let len = signal.len();
    if len < 2 * k_modes {
        return Err(VmdError::TooShort {
            modes: k_modes,
            needed: 2 * k_modes,
            len,
        });
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(VmdError::NonFinite(i));
    }

    // Mirror-extend: [rev(first half) | signal | rev(second half)].
    let half = len / 2;
    let mut extended: Vec<Complex64> = Vec::with_capacity(2 * len);
    extended.extend(signal[..half].iter().rev().map(|&v| Complex64::new(v, 0.0)));
    extended.extend(signal.iter().map(|&v| Complex64::new(v, 0.0)));
    extended.extend(signal[half..].iter().rev().map(|&v| Complex64::new(v, 0.0)));
    let m = extended.len();

    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(m).process(&mut extended);

    // Analytic (non-negative frequency) half of the spectrum.
    let bins = m / 2 + 1;
    let f_hat: Vec<Complex64> = extended[..bins].to_vec();
    let freqs: Vec<f64> = (0..bins).map(|b| b as f64 / m as f64).collect();

    let mut omega: Vec<f64> = init_freqs_hz.iter().map(|f| (f / fs).clamp(0.0, 0.5)).collect();
    let mut u_hat = vec![vec![Complex64::new(0.0, 0.0); bins]; k_modes];
    let mut lambda = vec![Complex64::new(0.0, 0.0); bins];
    let mut total = vec![Complex64::new(0.0, 0.0); bins];
    let mut history = Vec::new();
    let two_alpha = 2.0 * cfg.alpha;

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < cfg.max_iters {
        iterations += 1;
        residual = 0.0;
        for k in 0..k_modes {
            let w = omega[k];
            let mode = &mut u_hat[k];
            let mut diff_sq = 0.0;
            let mut prev_sq = 0.0;
            let mut weighted = 0.0;
            let mut power = 0.0;
            for b in 0..bins {
                let old = mode[b];
                // residual of all other modes, Gauss-Seidel ordering
                let others = total[b] - old;
                let dnu = freqs[b] - w;
                let new = (f_hat[b] - others + lambda[b] * 0.5) / (1.0 + two_alpha * dnu * dnu);
                mode[b] = new;
                total[b] = others + new;
                let d = new - old;
                diff_sq += d.norm_sqr();
                prev_sq += old.norm_sqr();
                let p = new.norm_sqr();
                weighted += freqs[b] * p;
                power += p;
            }
            if power > 0.0 {
                omega[k] = weighted / power;
            }
            residual += if diff_sq == 0.0 {
                0.0
            } else if prev_sq == 0.0 {
                f64::INFINITY
            } else {
                diff_sq / prev_sq
            };
        }
        if cfg.tau > 0.0 {
            for b in 0..bins {
                lambda[b] += (f_hat[b] - total[b]) * cfg.tau;
            }
        }
        history.push(residual);
        if residual < cfg.tolerance {
            break;
        }
    }

    // Back to time domain through Hermitian symmetry, then crop the mirror.
    let inverse = planner.plan_fft_inverse(m);
    let mut modes: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k_modes);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..k_modes {
        spectrum.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        spectrum[..bins].copy_from_slice(&u_hat[k]);
        for b in 1..m - bins + 1 {
            spectrum[m - b] = u_hat[k][b].conj();
        }
        if m.is_multiple_of(2) {
            // Nyquist bin must be real for a real signal
            spectrum[m / 2] = Complex64::new(u_hat[k][m / 2].re, 0.0);
        }
        spectrum[0] = Complex64::new(u_hat[k][0].re, 0.0);
        inverse.process(&mut spectrum);
        let scale = 1.0 / m as f64;
        let mode: Vec<f64> = spectrum[half..half + len].iter().map(|c| c.re * scale).collect();
        modes.push((omega[k] * fs, mode));
    }
    modes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (center_freqs_hz, modes) = modes.into_iter().unzip();

    Ok(VmdResult {
        modes,
        center_freqs_hz,
        iterations_used: iterations,
        final_residual: residual,
        residual_history: history,
    })
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x, y) = (a[i] - ma, b[i] - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Reconstructs `signal` from the modes whose correlation with it exceeds
/// `cfg.rho_min`; falls back to the single best-correlated mode.
pub fn vmd_denoise(signal: &[f64], fs: f64, cfg: &VmdConfig) -> Result<Vec<f64>, VmdError> {
    let result = vmd_decompose(signal, fs, cfg)?;
    Ok(select_modes(signal, &result, cfg.rho_min))
}

pub fn select_modes(signal: &[f64], result: &VmdResult, rho_min: f64) -> Vec<f64> {
    let corr: Vec<f64> = result.modes.iter().map(|m| pearson(m, signal)).collect();
    let mut out = vec![0.0; signal.len()];
    let mut kept = 0;
    for (mode, &c) in result.modes.iter().zip(&corr) {
        if c > rho_min {
            kept += 1;
            for (o, v) in out.iter_mut().zip(mode) {
                *o += v;
            }
        }
    }
    if kept == 0 {
        if let Some((best, _)) = corr.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
            out.copy_from_slice(&result.modes[best]);
        }
    }
    out
}

/// Samples of `cos(2 pi f t)` at rate `fs`.
pub fn tone(freq_hz: f64, fs: f64, len: usize) -> impl Iterator<Item = f64> {
    (0..len).map(move |n| (2.0 * PI * freq_hz * n as f64 / fs).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 2000.0;

    fn two_tone(len: usize) -> Vec<f64> {
        tone(50.0, FS, len).zip(tone(300.0, FS, len)).map(|(a, b)| a + b).collect()
    }

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn zero_signal_is_a_fixed_point() {
        let res = vmd_decompose(&[0.0; 256], FS, &VmdConfig::default()).unwrap();
        assert_eq!(res.iterations_used, 1);
        assert!(res.modes.iter().all(|m| m.iter().all(|&v| v == 0.0)));
        assert_eq!(vmd_denoise(&[0.0; 256], FS, &VmdConfig::default()).unwrap(), vec![0.0; 256]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = VmdConfig::default();
        assert_eq!(
            vmd_decompose(&[1.0; 7], FS, &cfg).unwrap_err(),
            VmdError::TooShort { modes: 4, needed: 8, len: 7 }
        );
        let mut sig = vec![0.5; 64];
        sig[10] = f64::NAN;
        assert_eq!(vmd_decompose(&sig, FS, &cfg).unwrap_err(), VmdError::NonFinite(10));
        let bad = VmdConfig { tolerance: 0.0, ..cfg };
        assert!(matches!(vmd_decompose(&[1.0; 64], FS, &bad), Err(VmdError::InvalidConfig(_))));
    }

    #[test]
    fn single_tone_reconstructs_interior() {
        let len = 2000;
        let sig: Vec<f64> = tone(100.0, FS, len).collect();
        let cfg = VmdConfig { n_modes: 1, ..VmdConfig::default() };
        let res = vmd_decompose(&sig, FS, &cfg).unwrap();
        let margin = len / 20;
        let err = rel_l2(&res.modes[0][margin..len - margin], &sig[margin..len - margin]);
        assert!(err <= 1e-3, "relative error {err}");
        assert!((res.center_freqs_hz[0] - 100.0).abs() < 2.0);
    }

    #[test]
    fn modes_sorted_and_lengths_preserved() {
        let sig = two_tone(1000);
        let res = vmd_decompose(&sig, FS, &VmdConfig::default()).unwrap();
        assert_eq!(res.modes.len(), 4);
        assert!(res.modes.iter().all(|m| m.len() == 1000));
        assert!(res.center_freqs_hz.windows(2).all(|w| w[0] <= w[1]));
        assert!(res.center_freqs_hz.iter().all(|&f| (0.0..=FS / 2.0).contains(&f)));
    }

    #[test]
    fn clean_two_tone_denoises_to_itself() {
        let sig = two_tone(2000);
        let cfg = VmdConfig { n_modes: 2, ..VmdConfig::default() };
        let out = vmd_denoise(&sig, FS, &cfg).unwrap();
        let err = rel_l2(&out, &sig);
        assert!(err <= 5e-2, "relative error {err}");
    }

    #[test]
    fn energy_is_not_amplified() {
        let sig = two_tone(1500);
        let res = vmd_decompose(&sig, FS, &VmdConfig::default()).unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm(&res.reconstruction()) <= norm(&sig) * 1.05);
    }

    #[test]
    fn residual_does_not_diverge() {
        let sig = two_tone(1200);
        let cfg = VmdConfig { max_iters: 60, tolerance: 1e-30, ..VmdConfig::default() };
        let res = vmd_decompose(&sig, FS, &cfg).unwrap();
        assert_eq!(res.iterations_used, 60);
        let first = res.residual_history[1];
        assert!(res.final_residual <= first);
    }

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&a, &a) - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &[1.0; 4]), 0.0);
    }
}
