//! Declarative stage configuration, compound scaling and analytic
//! parameter / multiply-accumulate counts.

use std::fmt;
use std::str::FromStr;

use super::se::hidden_units;
use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Stem,
    FusedMBConv,
    MBConv,
    Head,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Stem => "Stem",
            OpKind::FusedMBConv => "FusedMBConv",
            OpKind::MBConv => "MBConv",
            OpKind::Head => "Head",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = NetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Stem" => Ok(OpKind::Stem),
            "FusedMBConv" => Ok(OpKind::FusedMBConv),
            "MBConv" => Ok(OpKind::MBConv),
            "Head" => Ok(OpKind::Head),
            other => Err(NetError::InvalidSpec(format!("unknown op kind {other:?}"))),
        }
    }
}

/// One stage: `repeats` copies of `op_kind`; only the first copy uses
/// `stride`, and only the first copy changes the channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub op_kind: OpKind,
    pub repeats: usize,
    pub channels: usize,
    pub stride: usize,
    pub expansion: usize,
    pub se_ratio: f64,
}

impl LayerSpec {
    pub fn new(op_kind: OpKind, repeats: usize, channels: usize, stride: usize, expansion: usize, se_ratio: f64) -> Self {
        Self {
            op_kind,
            repeats,
            channels,
            stride,
            expansion,
            se_ratio,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidSpec(format!("{}: {m}", self.op_kind)));
        if self.repeats < 1 {
            return bad("repeats must be at least 1".into());
        }
        if self.channels < 1 {
            return bad("channels must be positive".into());
        }
        if self.stride != 1 && self.stride != 2 {
            return bad(format!("stride {} is not 1 or 2", self.stride));
        }
        if self.expansion < 1 {
            return bad("expansion must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.se_ratio) {
            return bad(format!("se_ratio {} outside [0, 1]", self.se_ratio));
        }
        match self.op_kind {
            OpKind::MBConv if self.se_ratio <= 0.0 => bad("MBConv requires se_ratio > 0".into()),
            OpKind::FusedMBConv | OpKind::Stem | OpKind::Head if self.se_ratio != 0.0 => {
                bad("only MBConv carries squeeze-excitation".into())
            }
            OpKind::Stem | OpKind::Head if self.repeats != 1 => bad("stem and head are single layers".into()),
            _ => Ok(()),
        }
    }

    /// `kind,repeats,channels,stride,expansion,se_ratio`
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.op_kind, self.repeats, self.channels, self.stride, self.expansion, self.se_ratio
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, NetError> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(NetError::InvalidSpec(format!("layer line needs 6 fields: {line:?}")));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| NetError::InvalidSpec(format!("bad integer {s:?} in {line:?}")))
        };
        let spec = Self {
            op_kind: f[0].parse()?,
            repeats: int(f[1])?,
            channels: int(f[2])?,
            stride: int(f[3])?,
            expansion: int(f[4])?,
            se_ratio: f[5]
                .parse()
                .map_err(|_| NetError::InvalidSpec(format!("bad se_ratio in {line:?}")))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Depth, width and resolution multipliers, each at least 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingCoefficients {
    pub depth: f64,
    pub width: f64,
    pub resolution: f64,
}

impl Default for ScalingCoefficients {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl ScalingCoefficients {
    pub const IDENTITY: Self = Self {
        depth: 1.0,
        width: 1.0,
        resolution: 1.0,
    };

    pub fn new(depth: f64, width: f64, resolution: f64) -> Result<Self, NetError> {
        let s = Self {
            depth,
            width,
            resolution,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        for (name, v) in [("depth", self.depth), ("width", self.width), ("resolution", self.resolution)] {
            if !(v.is_finite() && v >= 1.0) {
                return Err(NetError::InvalidSpec(format!("{name} coefficient {v} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// Default input side length.
pub const BASE_RESOLUTION: usize = 96;

/// The desk-scale base configuration.
pub fn base_architecture() -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(OpKind::Stem, 1, 16, 2, 1, 0.0),
        LayerSpec::new(OpKind::FusedMBConv, 2, 16, 1, 1, 0.0),
        LayerSpec::new(OpKind::FusedMBConv, 2, 32, 2, 4, 0.0),
        LayerSpec::new(OpKind::MBConv, 2, 48, 2, 4, 0.25),
        LayerSpec::new(OpKind::MBConv, 2, 64, 2, 4, 0.25),
        LayerSpec::new(OpKind::Head, 1, 128, 1, 1, 0.0),
    ]
}

/// Nearest multiple of 4, never below 4.
pub fn round_channels(c: f64) -> usize {
    (((c / 4.0).round() as usize) * 4).max(4)
}

/// Scales block repeats by `ceil(d * L)`, every channel count by `w`
/// (rounded to a multiple of 4) and the input side by `round(r * res)`.
/// Stem and head stay single layers.
pub fn scale_architecture(base: &[LayerSpec], input_res: usize, s: ScalingCoefficients) -> (Vec<LayerSpec>, usize) {
    if s == ScalingCoefficients::IDENTITY {
        return (base.to_vec(), input_res);
    }
    let layers = base
        .iter()
        .map(|l| {
            let repeats = match l.op_kind {
                OpKind::FusedMBConv | OpKind::MBConv => ((s.depth * l.repeats as f64) - 1e-9).ceil().max(1.0) as usize,
                OpKind::Stem | OpKind::Head => l.repeats,
            };
            LayerSpec {
                repeats,
                channels: round_channels(s.width * l.channels as f64),
                ..l.clone()
            }
        })
        .collect();
    (layers, (s.resolution * input_res as f64).round() as usize)
}

pub fn validate_architecture(layers: &[LayerSpec]) -> Result<(), NetError> {
    let first = layers.first().map(|l| l.op_kind);
    let last = layers.last().map(|l| l.op_kind);
    if first != Some(OpKind::Stem) || last != Some(OpKind::Head) {
        return Err(NetError::InvalidSpec("architecture must start with Stem and end with Head".into()));
    }
    for (i, l) in layers.iter().enumerate() {
        l.validate()?;
        let interior = i > 0 && i + 1 < layers.len();
        if interior && matches!(l.op_kind, OpKind::Stem | OpKind::Head) {
            return Err(NetError::InvalidSpec(format!("{} at interior position {i}", l.op_kind)));
        }
    }
    Ok(())
}

/// Output side of a padded 3x3 (or 1x1) convolution.
pub fn conv_side(side: usize, stride: usize) -> usize {
    (side - 1) / stride + 1
}

/// Analytic parameter and per-sample multiply-accumulate totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cost {
    pub params: u64,
    pub macs: u64,
}

/// Counts weights, BN affine parameters and dense bias; MACs cover
/// convolutions, squeeze-excitation matrix products and the dense head.
pub fn count_cost(layers: &[LayerSpec], input_res: usize, in_channels: usize, classes: usize) -> Cost {
    let mut cost = Cost::default();
    let mut c_in = in_channels as u64;
    let mut side = input_res;
    for l in layers {
        for rep in 0..l.repeats {
            let stride = if rep == 0 { l.stride } else { 1 };
            let out_side = conv_side(side, stride);
            let (hw_in, hw_out) = ((side * side) as u64, (out_side * out_side) as u64);
            let c_out = l.channels as u64;
            let mid = c_in * l.expansion as u64;
            match l.op_kind {
                OpKind::Stem => {
                    cost.params += 9 * c_in * c_out + 2 * c_out;
                    cost.macs += 9 * c_in * c_out * hw_out;
                }
                OpKind::FusedMBConv if l.expansion == 1 => {
                    cost.params += 9 * c_in * c_out + 2 * c_out;
                    cost.macs += 9 * c_in * c_out * hw_out;
                }
                OpKind::FusedMBConv => {
                    cost.params += 9 * c_in * mid + 2 * mid + mid * c_out + 2 * c_out;
                    cost.macs += (9 * c_in * mid + mid * c_out) * hw_out;
                }
                OpKind::MBConv => {
                    let hid = hidden_units(mid as usize, l.se_ratio) as u64;
                    cost.params += c_in * mid + 2 * mid + 9 * mid + 2 * mid + 2 * mid * hid + mid * c_out + 2 * c_out;
                    cost.macs += c_in * mid * hw_in + 9 * mid * hw_out + 2 * mid * hid + mid * c_out * hw_out;
                }
                OpKind::Head => {
                    cost.params += c_in * c_out + 2 * c_out + c_out * classes as u64 + classes as u64;
                    cost.macs += c_in * c_out * hw_out + c_out * classes as u64;
                }
            }
            c_in = c_out;
            side = out_side;
        }
    }
    cost
}
