//! From-scratch convolutional classifier: tensors with analytic backward
//! passes, squeeze-and-excitation, Fused-MBConv/MBConv blocks and compound
//! scaling of the block configuration.

pub mod arch;
pub mod blocks;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod se;
pub mod tensor;

use thiserror::Error;

pub use arch::{scale_architecture, LayerSpec, OpKind, ScalingCoefficients};
pub use blocks::{FusedMbConv, MbConv};
pub use model::Classifier;
pub use se::SqueezeExcite;
pub use tensor::{Param, Real, Tensor};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("backward called without a cached forward pass in {0}")]
    NoForwardCache(&'static str),
    #[error("input resolution {got} does not match model resolution {expected}")]
    Resolution { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Training mode uses batch statistics and live dropout; inference mode
/// uses running statistics and disables dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Receives every piece of persistent state under a dotted name.
pub trait StateVisitor<T: Real> {
    fn param(&mut self, name: &str, param: &mut Param<T>);
    fn buffer(&mut self, name: &str, buffer: &mut Tensor<T>);
}

/// A differentiable network stage. `forward` caches what `backward` needs
/// when called in [`Mode::Train`] (and in [`Mode::Eval`], for gradient checks
/// of inference-mode behaviour); `backward` accumulates parameter gradients
/// and returns the gradient with respect to the stage input.
pub trait Module<T: Real>: Send {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NetError>;
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NetError>;
    fn visit(&mut self, prefix: &str, v: &mut dyn StateVisitor<T>);
    /// Multiply-accumulate count of the most recent forward pass, per sample.
    fn macs(&self) -> u64 {
        0
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Visits parameters only.
pub fn for_each_param<T: Real>(m: &mut dyn Module<T>, mut f: impl FnMut(&str, &mut Param<T>)) {
    struct P<'a, T, F: FnMut(&str, &mut Param<T>)>(&'a mut F, std::marker::PhantomData<T>);
    impl<T: Real, F: FnMut(&str, &mut Param<T>)> StateVisitor<T> for P<'_, T, F> {
        fn param(&mut self, name: &str, param: &mut Param<T>) {
            (self.0)(name, param)
        }
        fn buffer(&mut self, _: &str, _: &mut Tensor<T>) {}
    }
    m.visit("", &mut P(&mut f, std::marker::PhantomData));
}

pub fn param_count<T: Real>(m: &mut dyn Module<T>) -> usize {
    let mut n = 0;
    for_each_param(m, |_, p| n += p.len());
    n
}

pub fn zero_grad<T: Real>(m: &mut dyn Module<T>) {
    for_each_param(m, |_, p| p.zero_grad());
}
