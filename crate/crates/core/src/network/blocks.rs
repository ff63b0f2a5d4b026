//! Fused-MBConv and MBConv residual blocks.

use rand_chacha::ChaCha8Rng;

use super::layers::{Activation, ActivationKind, BatchNorm2d, Conv2d, DepthwiseConv2d, Dropout, Sequential};
use super::se::SqueezeExcite;
use super::tensor::{Real, Tensor};
use super::{join, Mode, Module, NetError, StateVisitor};

/// Dropout applied at the end of every block's main branch.
pub const BLOCK_DROPOUT: f64 = 0.1;

fn check_block(in_ch: usize, out_ch: usize, stride: usize, expansion: usize) -> Result<(), NetError> {
    if in_ch == 0 || out_ch == 0 {
        return Err(NetError::InvalidSpec("channel counts must be positive".into()));
    }
    if stride != 1 && stride != 2 {
        return Err(NetError::InvalidSpec(format!("stride must be 1 or 2, got {stride}")));
    }
    if expansion == 0 {
        return Err(NetError::InvalidSpec("expansion must be at least 1".into()));
    }
    Ok(())
}

fn residual<T: Real>(
    main: &mut dyn Module<T>,
    skip: bool,
    x: &Tensor<T>,
    mode: Mode,
) -> Result<Tensor<T>, NetError> {
    let mut y = main.forward(x, mode)?;
    if skip {
        y.add_assign(x)?;
    }
    Ok(y)
}

fn residual_backward<T: Real>(main: &mut dyn Module<T>, skip: bool, g: &Tensor<T>) -> Result<Tensor<T>, NetError> {
    let mut dx = main.backward(g)?;
    if skip {
        dx.add_assign(g)?;
    }
    Ok(dx)
}

/// `e == 1`: 3x3 conv, BN, SiLU, dropout.
/// `e != 1`: 3x3 expanding conv, BN, SiLU, 1x1 projection, BN, dropout.
pub struct FusedMbConv<T: Real> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub expansion: usize,
    pub main: Sequential<T>,
    pub skip: bool,
}

impl<T: Real> FusedMbConv<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        expansion: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
        dropout_seed: u64,
    ) -> Result<Self, NetError> {
        check_block(in_channels, out_channels, stride, expansion)?;
        let mut main = Sequential::new();
        if expansion == 1 {
            main.push("conv", Conv2d::new(in_channels, out_channels, 3, stride, rng));
            main.push("bn", BatchNorm2d::new(out_channels));
            main.push("act", Activation::new(ActivationKind::Silu));
        } else {
            let mid = in_channels * expansion;
            main.push("expand", Conv2d::new(in_channels, mid, 3, stride, rng));
            main.push("bn0", BatchNorm2d::new(mid));
            main.push("act", Activation::new(ActivationKind::Silu));
            main.push("project", Conv2d::new(mid, out_channels, 1, 1, rng));
            main.push("bn1", BatchNorm2d::new(out_channels));
        }
        main.push("drop", Dropout::new(dropout, dropout_seed));
        Ok(Self {
            in_channels,
            out_channels,
            stride,
            expansion,
            main,
            skip: stride == 1 && in_channels == out_channels,
        })
    }

    /// Channel count after the expanding convolution.
    pub fn hidden_channels(&self) -> usize {
        if self.expansion == 1 {
            self.out_channels
        } else {
            self.in_channels * self.expansion
        }
    }
}

impl<T: Real> Module<T> for FusedMbConv<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NetError> {
        residual(&mut self.main, self.skip, x, mode)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        residual_backward(&mut self.main, self.skip, g)
    }

    fn visit(&mut self, prefix: &str, v: &mut dyn StateVisitor<T>) {
        self.main.visit(prefix, v);
    }

    fn macs(&self) -> u64 {
        self.main.macs()
    }
}

/// 1x1 expand, BN, SiLU, 3x3 depthwise, BN, SiLU, SE, 1x1 project, BN, dropout.
pub struct MbConv<T: Real> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub expansion: usize,
    pub pre: Sequential<T>,
    pub se: SqueezeExcite<T>,
    pub post: Sequential<T>,
    pub skip: bool,
}

impl<T: Real> MbConv<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        expansion: usize,
        se_ratio: f64,
        dropout: f64,
        rng: &mut ChaCha8Rng,
        dropout_seed: u64,
    ) -> Result<Self, NetError> {
        check_block(in_channels, out_channels, stride, expansion)?;
        if !(se_ratio > 0.0 && se_ratio <= 1.0) {
            return Err(NetError::InvalidSpec(format!("MBConv needs se_ratio in (0, 1], got {se_ratio}")));
        }
        let mid = in_channels * expansion;
        let mut pre = Sequential::new();
        pre.push("expand", Conv2d::new(in_channels, mid, 1, 1, rng));
        pre.push("bn0", BatchNorm2d::new(mid));
        pre.push("act0", Activation::new(ActivationKind::Silu));
        pre.push("dw", DepthwiseConv2d::new(mid, 3, stride, rng));
        pre.push("bn1", BatchNorm2d::new(mid));
        pre.push("act1", Activation::new(ActivationKind::Silu));
        let se = SqueezeExcite::new(mid, se_ratio, rng);
        let mut post = Sequential::new();
        post.push("project", Conv2d::new(mid, out_channels, 1, 1, rng));
        post.push("bn2", BatchNorm2d::new(out_channels));
        post.push("drop", Dropout::new(dropout, dropout_seed));
        Ok(Self {
            in_channels,
            out_channels,
            stride,
            expansion,
            pre,
            se,
            post,
            skip: stride == 1 && in_channels == out_channels,
        })
    }

    fn main_forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NetError> {
        let h = self.pre.forward(x, mode)?;
        let h = self.se.forward(&h, mode)?;
        self.post.forward(&h, mode)
    }
}

impl<T: Real> Module<T> for MbConv<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NetError> {
        let mut y = self.main_forward(x, mode)?;
        if self.skip {
            y.add_assign(x)?;
        }
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let d = self.post.backward(g)?;
        let d = self.se.backward(&d)?;
        let mut dx = self.pre.backward(&d)?;
        if self.skip {
            dx.add_assign(g)?;
        }
        Ok(dx)
    }

    fn visit(&mut self, prefix: &str, v: &mut dyn StateVisitor<T>) {
        self.pre.visit(prefix, v);
        self.se.visit(&join(prefix, "se"), v);
        self.post.visit(prefix, v);
    }

    fn macs(&self) -> u64 {
        self.pre.macs() + self.se.macs() + self.post.macs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn stride_two_halves_spatial_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = FusedMbConv::<f32>::new(1, 4, 2, 1, 0.1, &mut rng, 0).unwrap();
        let y = b.forward(&Tensor::zeros(&[1, 1, 96, 96]), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 4, 48, 48]);
    }

    #[test]
    fn expansion_four_on_eight_channels_has_32_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = FusedMbConv::<f32>::new(8, 8, 1, 4, 0.1, &mut rng, 0).unwrap();
        assert_eq!(b.hidden_channels(), 32);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(FusedMbConv::<f32>::new(8, 8, 3, 1, 0.1, &mut rng, 0).is_err());
        assert!(MbConv::<f32>::new(8, 8, 1, 4, 0.0, 0.1, &mut rng, 0).is_err());
    }
}
