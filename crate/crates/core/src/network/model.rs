//! The full classifier: stem, Fused-MBConv and MBConv stages, head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{base_architecture, count_cost, scale_architecture, validate_architecture, Cost, LayerSpec, OpKind, ScalingCoefficients, BASE_RESOLUTION};
use super::blocks::{FusedMbConv, MbConv, BLOCK_DROPOUT};
use super::layers::{softmax, Activation, ActivationKind, BatchNorm2d, Conv2d, Dense, GlobalAvgPool, Sequential};
use super::tensor::{Real, Tensor};
use super::{join, Mode, Module, NetError, StateVisitor};

/// Everything needed to rebuild a classifier's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub base: Vec<LayerSpec>,
    pub base_resolution: usize,
    pub scaling: ScalingCoefficients,
    pub in_channels: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            base: base_architecture(),
            base_resolution: BASE_RESOLUTION,
            scaling: ScalingCoefficients::IDENTITY,
            in_channels: 1,
            classes: 3,
            dropout: BLOCK_DROPOUT,
        }
    }
}

impl ModelSpec {
    /// Scaled stage list and input side.
    pub fn scaled(&self) -> (Vec<LayerSpec>, usize) {
        scale_architecture(&self.base, self.base_resolution, self.scaling)
    }

    pub fn resolution(&self) -> usize {
        self.scaled().1
    }

    pub fn cost(&self) -> Cost {
        let (layers, res) = self.scaled();
        count_cost(&layers, res, self.in_channels, self.classes)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        self.scaling.validate()?;
        validate_architecture(&self.base)?;
        if self.in_channels == 0 || self.classes < 2 {
            return Err(NetError::InvalidSpec("need at least one input channel and two classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NetError::InvalidSpec(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let res = self.resolution();
        if res < 8 {
            return Err(NetError::InvalidSpec(format!("resolution {res} too small")));
        }
        Ok(())
    }

    /// Multi-line text description (one `key=value` per line).
    pub fn to_text(&self) -> String {
        let s = self.scaling;
        let mut out = format!(
            "base_resolution={}\nscaling={},{},{}\nin_channels={}\nclasses={}\ndropout={}\n",
            self.base_resolution, s.depth, s.width, s.resolution, self.in_channels, self.classes, self.dropout
        );
        for l in &self.base {
            out.push_str(&format!("layer={}\n", l.to_line()));
        }
        out
    }

    /// Parses [`ModelSpec::to_text`] output; unrecognised keys are returned
    /// for the caller to interpret.
    pub fn parse_text(text: &str) -> Result<(Self, Vec<(String, String)>), NetError> {
        let bad = |m: String| NetError::InvalidSpec(m);
        let mut spec = ModelSpec {
            base: Vec::new(),
            ..ModelSpec::default()
        };
        let mut extra = Vec::new();
        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad value for {k}: {v:?}")));
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            match k {
                "base_resolution" => spec.base_resolution = num(k, v)? as usize,
                "scaling" => {
                    let p: Vec<&str> = v.split(',').collect();
                    if p.len() != 3 {
                        return Err(bad(format!("scaling needs 3 values: {v:?}")));
                    }
                    spec.scaling = ScalingCoefficients::new(num(k, p[0])?, num(k, p[1])?, num(k, p[2])?)?;
                }
                "in_channels" => spec.in_channels = num(k, v)? as usize,
                "classes" => spec.classes = num(k, v)? as usize,
                "dropout" => spec.dropout = num(k, v)?,
                "layer" => spec.base.push(LayerSpec::parse_line(v)?),
                _ => extra.push((k.to_string(), v.to_string())),
            }
        }
        spec.validate()?;
        Ok((spec, extra))
    }
}

/// Image classifier producing `[N, classes]` logits.
pub struct Classifier<T: Real> {
    pub spec: ModelSpec,
    pub body: Sequential<T>,
    pub pool: GlobalAvgPool,
    pub fc: Dense<T>,
    resolution: usize,
}

fn block_seed(seed: u64, index: usize) -> u64 {
    seed ^ (0xD1B5_4A32_D192_ED03u64.wrapping_mul(index as u64 + 1))
}

impl<T: Real> Classifier<T> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, NetError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layers, resolution) = spec.scaled();
        let mut body = Sequential::new();
        let mut c_in = spec.in_channels;
        let mut fc = None;
        let mut block_index = 0usize;
        let mut stage = 0usize;
        for l in &layers {
            match l.op_kind {
                OpKind::Stem => {
                    body.push("stem.conv", Conv2d::new(c_in, l.channels, 3, l.stride, &mut rng));
                    body.push("stem.bn", BatchNorm2d::new(l.channels));
                    body.push("stem.act", Activation::new(ActivationKind::Silu));
                }
                OpKind::FusedMBConv | OpKind::MBConv => {
                    stage += 1;
                    for rep in 0..l.repeats {
                        let stride = if rep == 0 { l.stride } else { 1 };
                        let name = format!("stage{stage}.block{rep}");
                        let dseed = block_seed(seed, block_index);
                        block_index += 1;
                        if l.op_kind == OpKind::FusedMBConv {
                            body.push(
                                name,
                                FusedMbConv::new(c_in, l.channels, stride, l.expansion, spec.dropout, &mut rng, dseed)?,
                            );
                        } else {
                            body.push(
                                name,
                                MbConv::new(c_in, l.channels, stride, l.expansion, l.se_ratio, spec.dropout, &mut rng, dseed)?,
                            );
                        }
                        c_in = l.channels;
                    }
                    continue;
                }
                OpKind::Head => {
                    body.push("head.conv", Conv2d::new(c_in, l.channels, 1, 1, &mut rng));
                    body.push("head.bn", BatchNorm2d::new(l.channels));
                    body.push("head.act", Activation::new(ActivationKind::Silu));
                    fc = Some(Dense::new(l.channels, spec.classes, &mut rng));
                }
            }
            c_in = l.channels;
        }
        let fc = fc.ok_or_else(|| NetError::InvalidSpec("architecture has no head".into()))?;
        Ok(Self {
            spec,
            body,
            pool: GlobalAvgPool::new(),
            fc,
            resolution,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn classes(&self) -> usize {
        self.fc.out_features
    }

    /// Replaces the dense classifier with a freshly initialised one.
    pub fn reset_head(&mut self, classes: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.fc = Dense::new(self.fc.in_features, classes, &mut rng);
        self.spec.classes = classes;
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<(), NetError> {
        let (_, c, h, w) = x.dims4()?;
        if h != self.resolution || w != self.resolution {
            return Err(NetError::Resolution {
                expected: self.resolution,
                got: if h != self.resolution { h } else { w },
            });
        }
        if c != self.spec.in_channels {
            return Err(NetError::Shape(format!(
                "model expects {} input channels, got input {:?}",
                self.spec.in_channels,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Class probabilities in inference mode.
    pub fn predict_proba(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let logits = self.forward(x, Mode::Eval)?;
        softmax(&logits)
    }
}

impl<T: Real> Module<T> for Classifier<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NetError> {
        self.check_input(x)?;
        let h = self.body.forward(x, mode)?;
        let p = self.pool.forward(&h, mode)?;
        self.fc.forward(&p, mode)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let d = self.fc.backward(g)?;
        let d = Module::<T>::backward(&mut self.pool, &d)?;
        self.body.backward(&d)
    }

    fn visit(&mut self, prefix: &str, v: &mut dyn StateVisitor<T>) {
        self.body.visit(prefix, v);
        self.fc.visit(&join(prefix, "fc"), v);
    }

    fn macs(&self) -> u64 {
        self.body.macs() + self.fc.macs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::param_count;

    #[test]
    fn parameter_count_matches_analytic_count() {
        let spec = ModelSpec::default();
        let mut m = Classifier::<f32>::new(spec.clone(), 0).unwrap();
        assert_eq!(param_count(&mut m) as u64, spec.cost().params);
    }

    #[test]
    fn spec_text_round_trips() {
        let spec = ModelSpec {
            scaling: ScalingCoefficients::new(1.2, 1.1, 1.15).unwrap(),
            ..ModelSpec::default()
        };
        let (back, extra) = ModelSpec::parse_text(&format!("{}variant=STFF\n", spec.to_text())).unwrap();
        assert_eq!(back, spec);
        assert_eq!(extra, vec![("variant".to_string(), "STFF".to_string())]);
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let mut m = Classifier::<f32>::new(ModelSpec::default(), 0).unwrap();
        let err = m.forward(&Tensor::zeros(&[1, 1, 64, 64]), Mode::Eval).unwrap_err();
        assert!(matches!(err, NetError::Resolution { expected: 96, got: 64 }));
    }
}
