#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use radial_threat::dastrace::{ZoneTrace, SAMPLE_RATE_HZ, WINDOW_LEN};
use radial_threat::featurize::{hann, stft_magnitude, stft_tile};
use radial_threat::vmd::{tone, vmd_decompose, vmd_denoise, VmdConfig};

use radial_threat::network::gradcheck::check_module;
use radial_threat::network::layers::{Activation, ActivationKind, BatchNorm2d, Conv2d, Dense, DepthwiseConv2d};
use radial_threat::network::{FusedMbConv, MbConv, Module, SqueezeExcite, Tensor};
use radial_threat::network::Mode;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Finite-difference check of every differentiable layer and block on an
/// `[n, c, h, w]` input. Returns `(layer, max relative error, worst entry)`.
pub fn gradient_case(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Vec<(String, f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&[n, c, h, w], seed ^ 0xF00D);
    let c_out = rng.random_range(1..=4);
    let stride = rng.random_range(1..=2);
    let mut cases: Vec<(String, Box<dyn Module<f64>>, Tensor<f64>, Mode)> = vec![
        ("conv3x3".into(), Box::new(Conv2d::new(c, c_out, 3, stride, &mut rng)), x.clone(), Mode::Train),
        ("conv1x1".into(), Box::new(Conv2d::new(c, c_out, 1, 1, &mut rng)), x.clone(), Mode::Train),
        ("depthwise".into(), Box::new(DepthwiseConv2d::new(c, 3, stride, &mut rng)), x.clone(), Mode::Train),
        ("bn-train".into(), Box::new(BatchNorm2d::new(c)), x.clone(), Mode::Train),
        ("bn-eval".into(), Box::new(BatchNorm2d::new(c)), x.clone(), Mode::Eval),
        ("silu".into(), Box::new(Activation::new(ActivationKind::Silu)), x.clone(), Mode::Train),
        ("sigmoid".into(), Box::new(Activation::new(ActivationKind::Sigmoid)), x.clone(), Mode::Train),
        ("se".into(), Box::new(SqueezeExcite::new(c, 0.5, &mut rng)), x.clone(), Mode::Train),
        (
            "dense".into(),
            Box::new(Dense::new(c * h, c_out, &mut rng)),
            random_tensor(&[n, c * h], seed ^ 0xBEEF),
            Mode::Train,
        ),
        (
            "fused-e1".into(),
            Box::new(FusedMbConv::new(c, c, 1, 1, 0.0, &mut rng, 0).unwrap()),
            x.clone(),
            Mode::Train,
        ),
        (
            "fused-e4".into(),
            Box::new(FusedMbConv::new(c, c_out, stride, 4, 0.0, &mut rng, 0).unwrap()),
            x.clone(),
            Mode::Train,
        ),
        (
            "mbconv".into(),
            Box::new(MbConv::new(c, c, 1, 4, 0.25, 0.0, &mut rng, 0).unwrap()),
            x.clone(),
            Mode::Train,
        ),
        (
            "mbconv-s2".into(),
            Box::new(MbConv::new(c, c_out, 2, 2, 0.25, 0.0, &mut rng, 0).unwrap()),
            x.clone(),
            Mode::Eval,
        ),
    ];
    cases
        .iter_mut()
        .map(|(name, m, input, mode)| {
            let r = check_module(m.as_mut(), input, *mode, seed, 24).unwrap();
            (name.clone(), r.max_rel_error, r.worst)
        })
        .collect()
}

/// Plain-loop squeeze-and-excitation: `u [n, c, h, w]`, `w1 [hid, c]`,
/// `w2 [c, hid]`.
pub fn se_reference(u: &[f64], shape: [usize; 4], w1: &[f64], w2: &[f64], hid: usize) -> Vec<f64> {
    let [n, c, h, w] = shape;
    let mut out = vec![0.0; u.len()];
    for b in 0..n {
        let mut z = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for i in 0..h * w {
                s += u[(b * c + ch) * h * w + i];
            }
            z[ch] = s / (h * w) as f64;
        }
        let mut a = vec![0.0; hid];
        for j in 0..hid {
            let mut s = 0.0;
            for ch in 0..c {
                s += w1[j * c + ch] * z[ch];
            }
            a[j] = if s > 0.0 { s } else { 0.0 };
        }
        for ch in 0..c {
            let mut s = 0.0;
            for j in 0..hid {
                s += w2[ch * hid + j] * a[j];
            }
            let gate = 1.0 / (1.0 + (-s).exp());
            for i in 0..h * w {
                let k = (b * c + ch) * h * w + i;
                out[k] = gate * u[k];
            }
        }
    }
    out
}

/// Max abs difference between the vectorised SE block and the loop version
/// for a random configuration derived from `seed`.
pub fn se_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [
        rng.random_range(1..=3),
        rng.random_range(1..=12),
        rng.random_range(1..=6),
        rng.random_range(1..=6),
    ];
    let c = shape[1];
    let hid = rng.random_range(1..=c.max(2));
    let u = random_tensor(&shape, seed ^ 1);
    let w1 = random_tensor(&[hid, c], seed ^ 2).map(|v| 2.0 * v);
    let w2 = random_tensor(&[c, hid], seed ^ 3).map(|v| 2.0 * v);
    let expected = se_reference(u.data(), shape, w1.data(), w2.data(), hid);
    let mut se = SqueezeExcite::from_weights(w1, w2).unwrap();
    let got = se.forward(&u, Mode::Eval).unwrap();
    got.data()
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Worst relative mismatch, over frames, between the energy of each
/// windowed frame and that of its one-sided spectrum.
pub fn parseval_worst(signal: &[f64], window: usize, hop: usize) -> f64 {
    let s = stft_magnitude(signal, window, hop).unwrap();
    let w = hann(window);
    let mut worst: f64 = 0.0;
    for t in 0..s.cols {
        let time: f64 = (0..window).map(|n| (signal[t * hop + n] * w[n]).powi(2)).sum();
        let mut freq = 0.0;
        for k in 0..s.rows {
            let edge = k == 0 || k == window / 2;
            freq += if edge { 1.0 } else { 2.0 } * s.get(k, t).powi(2);
        }
        freq /= window as f64;
        worst = worst.max((freq - time).abs() / time);
    }
    worst
}

pub fn uniform_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Per-frame argmax bin of a 250 Hz tone through the 256/64 spectrogram.
pub fn tone_peak_bins() -> Vec<usize> {
    let x: Vec<f32> = (0..WINDOW_LEN)
        .map(|n| (std::f64::consts::TAU * 250.0 * n as f64 / SAMPLE_RATE_HZ).sin() as f32)
        .collect();
    let tile = stft_tile(&ZoneTrace::new(5, x), 256, 64).unwrap();
    (0..tile.time_frames())
        .map(|t| {
            (0..tile.freq_bins())
                .max_by(|&a, &b| tile.values.get(a, t).total_cmp(&tile.values.get(b, t)))
                .unwrap()
        })
        .collect()
}

/// Frequencies (Hz) of the `count` largest local maxima of the magnitude
/// spectrum, ascending.
pub fn fft_peaks(signal: &[f64], fs: f64, count: usize) -> Vec<f64> {
    let n = signal.len();
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf[..n / 2 + 1].iter().map(|c| c.norm()).collect();
    let mut peaks: Vec<usize> = (1..mag.len() - 1).filter(|&k| mag[k] > mag[k - 1] && mag[k] >= mag[k + 1]).collect();
    peaks.sort_by(|&a, &b| mag[b].total_cmp(&mag[a]));
    let mut f: Vec<f64> = peaks[..count].iter().map(|&k| k as f64 * fs / n as f64).collect();
    f.sort_by(f64::total_cmp);
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmdOutcome {
    pub centers_hz: Vec<f64>,
    pub oracle_hz: Vec<f64>,
    /// Output minus input SNR in dB, one entry per noise seed.
    pub gains_db: Vec<f64>,
}

impl VmdOutcome {
    pub fn worst_center_error(&self) -> f64 {
        self.centers_hz
            .iter()
            .zip(&self.oracle_hz)
            .map(|(c, o)| (c - o).abs() / o)
            .fold(0.0, f64::max)
    }

    pub fn median_gain_db(&self) -> f64 {
        let mut g = self.gains_db.clone();
        g.sort_by(f64::total_cmp);
        let n = g.len();
        if n % 2 == 1 {
            g[n / 2]
        } else {
            0.5 * (g[n / 2 - 1] + g[n / 2])
        }
    }
}

fn snr_db(clean: &[f64], estimate: &[f64]) -> f64 {
    let signal: f64 = clean.iter().map(|c| c * c).sum();
    let error: f64 = clean.iter().zip(estimate).map(|(c, e)| (c - e).powi(2)).sum();
    10.0 * (signal / error).log10()
}

/// Two-tone 50/300 Hz decomposition with two modes, then default-config
/// denoising of the same tones in 0 dB white noise for each seed.
pub fn vmd_case(seeds: std::ops::Range<u64>) -> VmdOutcome {
    let (fs, len) = (SAMPLE_RATE_HZ, 2000);
    let clean: Vec<f64> = tone(50.0, fs, len).zip(tone(300.0, fs, len)).map(|(a, b)| a + b).collect();
    let two = VmdConfig {
        n_modes: 2,
        ..VmdConfig::default()
    };
    let centers_hz = vmd_decompose(&clean, fs, &two).unwrap().center_freqs_hz;
    let oracle_hz = fft_peaks(&clean, fs, 2);
    let power = clean.iter().map(|c| c * c).sum::<f64>() / len as f64;
    let gains_db = seeds
        .map(|seed| {
            let noise = Normal::new(0.0, power.sqrt()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy: Vec<f64> = clean.iter().map(|c| c + noise.sample(&mut rng)).collect();
            let denoised = vmd_denoise(&noisy, fs, &VmdConfig::default()).unwrap();
            snr_db(&clean, &denoised) - snr_db(&clean, &noisy)
        })
        .collect();
    VmdOutcome {
        centers_hz,
        oracle_hz,
        gains_db,
    }
}
