//! Feature construction: per-zone log-magnitude spectrogram tiles, spatial
//! stitching of adjacent zones, the ablation variants and label-safe
//! augmentation.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::dastrace::{SampleRecord, ThreatClass, ZoneTrace};
use crate::network::Tensor;
use crate::simulate::record_seed;
use crate::vmd::{vmd_denoise, VmdConfig, VmdError};

pub const FEATURE_MAGIC: &[u8; 4] = b"DASF";
pub const DEFAULT_WINDOW: usize = 256;
pub const DEFAULT_HOP: usize = 64;
pub const DEFAULT_RESOLUTION: usize = 96;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("trace of {len} samples is shorter than the {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("invalid STFT parameters: {0}")]
    InvalidStft(String),
    #[error("cannot stitch tiles: {0}")]
    Stitch(String),
    #[error("unknown feature variant {0:?} (expected raw, tf, tff, stff or stff_aug)")]
    UnknownVariant(String),
    #[error("invalid feature configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Vmd(#[from] VmdError),
    #[error("feature file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Input encodings compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureVariant {
    Raw,
    Tf,
    Tff,
    Stff,
    StffAug,
}

impl FeatureVariant {
    pub const ALL: [FeatureVariant; 5] = [
        FeatureVariant::Raw,
        FeatureVariant::Tf,
        FeatureVariant::Tff,
        FeatureVariant::Stff,
        FeatureVariant::StffAug,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureVariant::Raw => "Raw",
            FeatureVariant::Tf => "TF",
            FeatureVariant::Tff => "TFF",
            FeatureVariant::Stff => "STFF",
            FeatureVariant::StffAug => "STFF_Aug",
        }
    }

    /// Whether records are VMD-denoised before featurization.
    pub fn denoises(self) -> bool {
        self == FeatureVariant::StffAug
    }

    /// Whether the training set is expanded with augmented copies.
    pub fn augments(self) -> bool {
        self == FeatureVariant::StffAug
    }
}

impl fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureVariant {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "raw" => Ok(FeatureVariant::Raw),
            "tf" => Ok(FeatureVariant::Tf),
            "tff" => Ok(FeatureVariant::Tff),
            "stff" => Ok(FeatureVariant::Stff),
            "stff_aug" | "stffaug" => Ok(FeatureVariant::StffAug),
            _ => Err(FeatureError::UnknownVariant(s.to_string())),
        }
    }
}

/// Row-major 2-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "grid dimensions do not match data");
        Self { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn column_mean(&self, c: usize) -> f64 {
        (0..self.rows).map(|r| self.get(r, c)).sum::<f64>() / self.rows as f64
    }

    /// Columns `start..end` as a new grid.
    pub fn columns(&self, start: usize, end: usize) -> Grid {
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for r in 0..self.rows {
            data.extend_from_slice(&self.data[r * self.cols + start..r * self.cols + end]);
        }
        Grid::new(self.rows, end - start, data)
    }
}

/// Maps values affinely onto `[0, 1]`; a constant input maps to all zeros.
pub fn min_max_normalize(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = ((*v - lo) / span).clamp(0.0, 1.0));
    }
}

/// Periodic Hann window.
pub fn hann(window: usize) -> Vec<f64> {
    (0..window)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / window as f64).cos())
        .collect()
}

fn check_stft(len: usize, window: usize, hop: usize) -> Result<usize, FeatureError> {
    if !window.is_power_of_two() || window < 2 {
        return Err(FeatureError::InvalidStft(format!("window {window} is not a power of two")));
    }
    if hop == 0 || hop > window {
        return Err(FeatureError::InvalidStft(format!("hop {hop} must be in 1..={window}")));
    }
    if len < window {
        return Err(FeatureError::TooShort { len, window });
    }
    Ok((len - window) / hop + 1)
}

/// Magnitude STFT of `signal` (Hann window, no padding) as a
/// `(window/2 + 1) x frames` grid, row 0 = DC.
pub fn stft_magnitude(signal: &[f64], window: usize, hop: usize) -> Result<Grid, FeatureError> {
    let frames = check_stft(signal.len(), window, hop)?;
    let bins = window / 2 + 1;
    let w = hann(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let mut buf = vec![Complex64::new(0.0, 0.0); window];
    let mut data = vec![0.0; bins * frames];
    for f in 0..frames {
        let seg = &signal[f * hop..f * hop + window];
        for ((b, &x), &wv) in buf.iter_mut().zip(seg).zip(&w) {
            *b = Complex64::new(x * wv, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            data[k * frames + f] = buf[k].norm();
        }
    }
    Ok(Grid::new(bins, frames, data))
}

/// One zone's normalized log-magnitude spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramTile {
    /// `freq_bins x time_frames`, values in `[0, 1]`.
    pub values: Grid,
    pub zone_index: u32,
    pub freq_resolution_hz: f64,
    pub time_resolution_s: f64,
}

impl SpectrogramTile {
    pub fn freq_bins(&self) -> usize {
        self.values.rows
    }

    pub fn time_frames(&self) -> usize {
        self.values.cols
    }
}

/// `log(1 + |STFT|)`, min-max normalized over the tile.
pub fn stft_tile(trace: &ZoneTrace, window: usize, hop: usize) -> Result<SpectrogramTile, FeatureError> {
    let mut grid = stft_magnitude(&trace.to_f64(), window, hop)?;
    grid.data.iter_mut().for_each(|v| *v = v.ln_1p());
    min_max_normalize(&mut grid.data);
    Ok(SpectrogramTile {
        values: grid,
        zone_index: trace.zone_index,
        freq_resolution_hz: trace.sample_rate_hz / window as f64,
        time_resolution_s: hop as f64 / trace.sample_rate_hz,
    })
}

/// Bilinear resampling with corner alignment (corner samples map exactly).
pub fn bilinear_resize(src: &Grid, out_h: usize, out_w: usize) -> Grid {
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let pos = if n_out > 1 {
                    i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
                } else {
                    0.0
                };
                let i0 = (pos.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, pos - i0 as f64)
            })
            .collect()
    };
    let ys = axis(src.rows, out_h);
    let xs = axis(src.cols, out_w);
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src.get(y0, x0) * (1.0 - fx) + src.get(y0, x1) * fx;
            let bot = src.get(y1, x0) * (1.0 - fx) + src.get(y1, x1) * fx;
            data.push(top * (1.0 - fy) + bot * fy);
        }
    }
    Grid::new(out_h, out_w, data)
}

/// Stitched map before and after resizing.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatureMap {
    /// `H x 3W`, tiles left to right in ascending zone order.
    pub stitched: Grid,
    pub values: Grid,
    pub source_zones: [u32; 3],
}

/// Horizontal concatenation `[zone i-1 | zone i | zone i+1]`.
pub fn concat_tiles(tiles: &[SpectrogramTile; 3]) -> Result<Grid, FeatureError> {
    let (rows, cols) = (tiles[0].values.rows, tiles[0].values.cols);
    for t in &tiles[1..] {
        if (t.values.rows, t.values.cols) != (rows, cols) {
            return Err(FeatureError::Stitch(format!(
                "tile shapes differ: {rows}x{cols} vs {}x{}",
                t.values.rows, t.values.cols
            )));
        }
    }
    for pair in tiles.windows(2) {
        if pair[1].zone_index != pair[0].zone_index + 1 {
            return Err(FeatureError::Stitch(format!(
                "zones {} and {} are not consecutive ascending",
                pair[0].zone_index, pair[1].zone_index
            )));
        }
    }
    let mut data = Vec::with_capacity(rows * cols * 3);
    for r in 0..rows {
        for t in tiles {
            data.extend_from_slice(&t.values.data[r * cols..(r + 1) * cols]);
        }
    }
    Ok(Grid::new(rows, 3 * cols, data))
}

pub fn stitch(tiles: &[SpectrogramTile; 3], out_h: usize, out_w: usize) -> Result<FusedFeatureMap, FeatureError> {
    let stitched = concat_tiles(tiles)?;
    let values = bilinear_resize(&stitched, out_h, out_w);
    Ok(FusedFeatureMap {
        stitched,
        values,
        source_zones: [tiles[0].zone_index, tiles[1].zone_index, tiles[2].zone_index],
    })
}

/// Per-frame time-domain statistics: log RMS, zero-crossing rate and log
/// peak magnitude, each normalized, as a 3-row grid.
pub fn time_domain_summary(signal: &[f64], window: usize, hop: usize) -> Result<Grid, FeatureError> {
    let frames = check_stft(signal.len(), window, hop)?;
    let mut rows = vec![vec![0.0; frames]; 3];
    for f in 0..frames {
        let seg = &signal[f * hop..f * hop + window];
        let rms = (seg.iter().map(|v| v * v).sum::<f64>() / window as f64).sqrt();
        let crossings = seg.windows(2).filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0)).count();
        let peak = seg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        rows[0][f] = rms.ln_1p();
        rows[1][f] = crossings as f64 / (window - 1) as f64;
        rows[2][f] = peak.ln_1p();
    }
    let mut data = Vec::with_capacity(3 * frames);
    for mut row in rows {
        min_max_normalize(&mut row);
        data.extend(row);
    }
    Ok(Grid::new(3, frames, data))
}

/// Center waveform linearly resampled to `res * res` samples, laid out row
/// by row and min-max normalized.
pub fn raw_image(signal: &[f64], res: usize) -> Grid {
    let n = res * res;
    let len = signal.len();
    let mut data: Vec<f64> = (0..n)
        .map(|i| {
            if len < 2 {
                return signal.first().copied().unwrap_or(0.0);
            }
            let pos = i as f64 * (len - 1) as f64 / (n - 1).max(1) as f64;
            let i0 = (pos.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let fr = pos - i0 as f64;
            signal[i0] * (1.0 - fr) + signal[i1] * fr
        })
        .collect();
    min_max_normalize(&mut data);
    Grid::new(res, res, data)
}

/// Label-safe augmentation ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Maximum circular shift as a fraction of the window length.
    pub max_shift_frac: f64,
    pub scale_range: (f64, f64),
    /// Maximum additive-noise standard deviation as a fraction of each
    /// zone's RMS.
    pub max_noise_frac: f64,
    /// Augmented copies added per training record.
    pub copies: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_shift_frac: 0.1,
            scale_range: (0.8, 1.2),
            max_noise_frac: 0.05,
            copies: 1,
        }
    }
}

/// One concrete draw of the augmentation transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Circular shift in samples (positive delays the waveform).
    pub shift: i64,
    pub scale: f64,
    pub noise_frac: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        shift: 0,
        scale: 1.0,
        noise_frac: 0.0,
    };
}

/// Applies one augmentation: the same shift and scale to all three zones,
/// then per-zone noise proportional to that zone's RMS.
pub fn apply_augmentation(record: &SampleRecord, p: AugmentParams, noise_seed: u64) -> SampleRecord {
    let mut out = record.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    for (trace, src) in out.traces.iter_mut().zip(&record.traces) {
        let n = src.samples.len();
        let sigma = p.noise_frac * src.rms() * p.scale.abs();
        let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
        let shift = p.shift.rem_euclid(n.max(1) as i64) as usize;
        for (i, dst) in trace.samples.iter_mut().enumerate() {
            let v = f64::from(src.samples[(i + n - shift) % n]) * p.scale;
            let noise = normal.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            *dst = (v + noise) as f32;
        }
    }
    out
}

/// `n_out` seeded augmentations of `record`.
pub fn augment(record: &SampleRecord, seed: u64, n_out: usize, cfg: &AugmentConfig) -> Vec<SampleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = record.center().len() as f64;
    let max_shift = (cfg.max_shift_frac * n).floor() as i64;
    (0..n_out)
        .map(|_| {
            let p = AugmentParams {
                shift: if max_shift > 0 { rng.random_range(-max_shift..=max_shift) } else { 0 },
                scale: rng.random_range(cfg.scale_range.0..=cfg.scale_range.1),
                noise_frac: rng.random_range(0.0..=cfg.max_noise_frac),
            };
            apply_augmentation(record, p, rng.random())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub window: usize,
    pub hop: usize,
    pub resolution: usize,
    pub vmd: VmdConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            hop: DEFAULT_HOP,
            resolution: DEFAULT_RESOLUTION,
            vmd: VmdConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        check_stft(self.window, self.window, self.hop)?;
        if self.resolution < 2 {
            return Err(FeatureError::InvalidConfig(format!("resolution {} too small", self.resolution)));
        }
        let a = &self.augment;
        if !(0.0..=0.5).contains(&a.max_shift_frac)
            || !(a.scale_range.0 > 0.0 && a.scale_range.0 <= a.scale_range.1)
            || !(a.max_noise_frac >= 0.0)
        {
            return Err(FeatureError::InvalidConfig(format!("bad augmentation ranges {a:?}")));
        }
        self.vmd.validate()?;
        Ok(())
    }
}

/// VMD-denoises every zone of `record` independently.
pub fn denoise_record(record: &SampleRecord, vmd: &VmdConfig) -> Result<SampleRecord, FeatureError> {
    let mut out = record.clone();
    for (dst, src) in out.traces.iter_mut().zip(&record.traces) {
        let clean = vmd_denoise(&src.to_f64(), src.sample_rate_hz, vmd)?;
        dst.samples = clean.into_iter().map(|v| v as f32).collect();
    }
    Ok(out)
}

/// Variant rendering of a record that is already denoised if the variant
/// requires it.
fn render(record: &SampleRecord, variant: FeatureVariant, cfg: &FeatureConfig) -> Result<Grid, FeatureError> {
    let res = cfg.resolution;
    match variant {
        FeatureVariant::Raw => Ok(raw_image(&record.center().to_f64(), res)),
        FeatureVariant::Tf => {
            let g = time_domain_summary(&record.center().to_f64(), cfg.window, cfg.hop)?;
            Ok(bilinear_resize(&g, res, res))
        }
        FeatureVariant::Tff => {
            let t = stft_tile(record.center(), cfg.window, cfg.hop)?;
            Ok(bilinear_resize(&t.values, res, res))
        }
        FeatureVariant::Stff | FeatureVariant::StffAug => {
            let tiles = [
                stft_tile(&record.traces[0], cfg.window, cfg.hop)?,
                stft_tile(&record.traces[1], cfg.window, cfg.hop)?,
                stft_tile(&record.traces[2], cfg.window, cfg.hop)?,
            ];
            Ok(stitch(&tiles, res, res)?.values)
        }
    }
}

fn to_tensor(g: Grid) -> Tensor<f32> {
    let (r, c) = (g.rows, g.cols);
    Tensor::from_vec(&[1, r, c], g.data.into_iter().map(|v| v as f32).collect()).expect("grid shape")
}

/// Inference-time features for one record, shape `[1, res, res]`, values in
/// `[0, 1]`. `StffAug` denoises but does not augment.
pub fn make_features(record: &SampleRecord, variant: FeatureVariant, cfg: &FeatureConfig) -> Result<Tensor<f32>, FeatureError> {
    let grid = if variant.denoises() {
        render(&denoise_record(record, &cfg.vmd)?, variant, cfg)?
    } else {
        render(record, variant, cfg)?
    };
    Ok(to_tensor(grid))
}

/// A labelled feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    pub features: Tensor<f32>,
    pub label: ThreatClass,
    pub radial_m: f32,
    /// Index of the source record.
    pub source: usize,
}

/// Features for a whole set. With `training` and an augmenting variant,
/// every record is followed by `cfg.augment.copies` augmented versions
/// (augmentation is applied after denoising). Output order is
/// deterministic and independent of thread count.
pub fn featurize_set(
    records: &[SampleRecord],
    variant: FeatureVariant,
    cfg: &FeatureConfig,
    training: bool,
) -> Result<Vec<FeatureSample>, FeatureError> {
    cfg.validate()?;
    let per_record: Vec<Result<Vec<FeatureSample>, FeatureError>> = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let base = if variant.denoises() {
                denoise_record(rec, &cfg.vmd)?
            } else {
                rec.clone()
            };
            let sample = |r: &SampleRecord| -> Result<FeatureSample, FeatureError> {
                Ok(FeatureSample {
                    features: to_tensor(render(r, variant, cfg)?),
                    label: rec.label,
                    radial_m: rec.radial_distance_m,
                    source: i,
                })
            };
            let mut out = vec![sample(&base)?];
            if training && variant.augments() {
                let seed = record_seed(cfg.seed ^ 0xA5A5_5A5A_0F0F_F0F0, i as u64);
                for aug in augment(&base, seed, cfg.augment.copies, &cfg.augment) {
                    out.push(sample(&aug)?);
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in per_record {
        all.extend(r?);
    }
    Ok(all)
}

fn format_err(path: &Path, reason: impl Into<String>) -> FeatureError {
    FeatureError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Serializes `[N, H, W]` maps: magic `DASF`, `u32` N, H, W, then `f32`
/// values, little-endian.
pub fn feature_bytes(maps: &[&Tensor<f32>]) -> Result<Vec<u8>, FeatureError> {
    let (h, w) = match maps.first().map(|t| t.shape()) {
        Some([1, h, w]) | Some([h, w]) => (*h, *w),
        Some(s) => return Err(FeatureError::InvalidConfig(format!("feature map shape {s:?} is not [1, H, W]"))),
        None => (0, 0),
    };
    let mut out = Vec::with_capacity(16 + maps.len() * h * w * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    for d in [maps.len(), h, w] {
        let d = u32::try_from(d).map_err(|_| FeatureError::InvalidConfig("dimension exceeds u32".into()))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for t in maps {
        if t.len() != h * w {
            return Err(FeatureError::InvalidConfig(format!("mixed feature shapes {:?}", t.shape())));
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_feature_bytes(bytes: &[u8], origin: &Path) -> Result<Vec<Tensor<f32>>, FeatureError> {
    if bytes.len() < 16 {
        return Err(format_err(origin, "truncated header"));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(format_err(origin, "bad magic (expected DASF)"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w) = (dim(0), dim(1), dim(2));
    let per = h.checked_mul(w).ok_or_else(|| format_err(origin, "shape overflows"))?;
    let expected = n
        .checked_mul(per)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(16))
        .ok_or_else(|| format_err(origin, "shape overflows"))?;
    if bytes.len() != expected {
        return Err(format_err(origin, format!("expected {expected} bytes for {n}x{h}x{w}, found {}", bytes.len())));
    }
    let values: Vec<f32> = bytes[16..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(values
        .chunks(per.max(1))
        .take(n)
        .map(|c| Tensor::from_vec(&[1, h, w], c.to_vec()).expect("chunk size"))
        .collect())
}

pub fn write_feature_file(maps: &[&Tensor<f32>], path: &Path) -> Result<(), FeatureError> {
    let bytes = feature_bytes(maps)?;
    let io = |source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)
}

pub fn read_feature_file(path: &Path) -> Result<Vec<Tensor<f32>>, FeatureError> {
    let bytes = std::fs::read(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_feature_bytes(&bytes, path)
}

/// Feature manifest line: `<file>:<index>:<label>:<radial_m>:<variant>`.
pub fn feature_manifest_line(file: &str, index: usize, s: &FeatureSample, variant: FeatureVariant) -> String {
    format!("{file}:{index}:{}:{}:{}", s.label, s.radial_m, variant)
}
