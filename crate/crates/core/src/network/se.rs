//! Squeeze-and-excitation channel attention.

use rand_chacha::ChaCha8Rng;

use super::layers::{global_avg_pool, sigmoid, Dense};
use super::tensor::{matmul, Param, Real, Tensor};
use super::{join, Mode, Module, NetError, StateVisitor};

/// `z = mean_hw(u)`, `s = sigmoid(W2 relu(W1 z))`, `out_c = s_c * u_c`.
/// The two fully connected maps carry no bias.
pub struct SqueezeExcite<T: Real> {
    pub channels: usize,
    pub hidden: usize,
    /// `[hidden, channels]`
    pub w1: Param<T>,
    /// `[channels, hidden]`
    pub w2: Param<T>,
    /// When set, the gate is pinned to this value and the excitation path
    /// is bypassed (used to compare a block with and without attention).
    pub forced_gate: Option<T>,
    cache: Option<SeCache<T>>,
}

struct SeCache<T> {
    input: Tensor<T>,
    z: Vec<T>,
    a: Vec<T>,
    s: Vec<T>,
}

impl<T: Real> SqueezeExcite<T> {
    pub fn new(channels: usize, se_ratio: f64, rng: &mut ChaCha8Rng) -> Self {
        let hidden = hidden_units(channels, se_ratio);
        let fc1 = Dense::<T>::new(channels, hidden, rng);
        let fc2 = Dense::<T>::new(hidden, channels, rng);
        Self {
            channels,
            hidden,
            w1: fc1.weight,
            w2: fc2.weight,
            forced_gate: None,
            cache: None,
        }
    }

    /// Builds the block from explicit `W1 [hidden, C]` and `W2 [C, hidden]`.
    pub fn from_weights(w1: Tensor<T>, w2: Tensor<T>) -> Result<Self, NetError> {
        let (hidden, channels) = w1.dims2()?;
        if w2.shape() != [channels, hidden] {
            return Err(NetError::Shape(format!(
                "SE weights {:?} and {:?} are inconsistent",
                w1.shape(),
                w2.shape()
            )));
        }
        Ok(Self {
            channels,
            hidden,
            w1: Param::new(w1),
            w2: Param::new(w2),
            forced_gate: None,
            cache: None,
        })
    }

    /// Per-sample, per-channel attention weights for `u`.
    pub fn gates(&self, u: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let (n, c, _, _) = u.dims4()?;
        self.check_channels(u)?;
        if let Some(g) = self.forced_gate {
            return Ok(Tensor::full(&[n, c], g));
        }
        let z = global_avg_pool(u)?;
        let (_, s) = self.excite(z.data(), n);
        Tensor::from_vec(&[n, c], s)
    }

    fn check_channels(&self, u: &Tensor<T>) -> Result<(), NetError> {
        let (_, c, _, _) = u.dims4()?;
        if c != self.channels {
            return Err(NetError::Shape(format!(
                "SE over {} channels got input {:?} (W1 {:?})",
                self.channels,
                u.shape(),
                self.w1.value.shape()
            )));
        }
        Ok(())
    }

    /// Returns (hidden pre-activation, gates), both row-major per sample.
    fn excite(&self, z: &[T], n: usize) -> (Vec<T>, Vec<T>) {
        let (c, h) = (self.channels, self.hidden);
        let mut a = vec![T::zero(); n * h];
        matmul(n, c, h, z, false, self.w1.value.data(), true, &mut a, false);
        let r: Vec<T> = a.iter().map(|&v| v.max(T::zero())).collect();
        let mut s = vec![T::zero(); n * c];
        matmul(n, h, c, &r, false, self.w2.value.data(), true, &mut s, false);
        s.iter_mut().for_each(|v| *v = sigmoid(*v));
        (a, s)
    }
}

/// Width of the excitation bottleneck.
pub fn hidden_units(channels: usize, se_ratio: f64) -> usize {
    ((channels as f64 * se_ratio).floor() as usize).max(1)
}

impl<T: Real> Module<T> for SqueezeExcite<T> {
    fn forward(&mut self, u: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NetError> {
        let (n, c, h, w) = u.dims4()?;
        self.check_channels(u)?;
        let hw = h * w;
        let (z, a, s) = match self.forced_gate {
            Some(g) => (Vec::new(), Vec::new(), vec![g; n * c]),
            None => {
                let z = global_avg_pool(u)?.into_data();
                let (a, s) = self.excite(&z, n);
                (z, a, s)
            }
        };
        let mut out = u.clone();
        for (plane, &sc) in out.data_mut().chunks_exact_mut(hw).zip(&s) {
            plane.iter_mut().for_each(|v| *v *= sc);
        }
        self.cache = Some(SeCache { input: u.clone(), z, a, s });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let cache = self.cache.as_ref().ok_or(NetError::NoForwardCache("squeeze-excite"))?;
        let u = &cache.input;
        u.require_same_shape(grad_out)?;
        let (n, c, h, w) = u.dims4()?;
        let hw = h * w;
        let hid = self.hidden;
        let mut dx = grad_out.clone();
        for (plane, &sc) in dx.data_mut().chunks_exact_mut(hw).zip(&cache.s) {
            plane.iter_mut().for_each(|v| *v *= sc);
        }
        if self.forced_gate.is_some() {
            return Ok(dx);
        }
        // ds_c = sum_hw g * u, then through the sigmoid
        let mut dpre = vec![T::zero(); n * c];
        for i in 0..n * c {
            let g = &grad_out.data()[i * hw..(i + 1) * hw];
            let x = &u.data()[i * hw..(i + 1) * hw];
            let ds: T = g.iter().zip(x).map(|(&a, &b)| a * b).sum();
            let s = cache.s[i];
            dpre[i] = ds * s * (T::one() - s);
        }
        let r: Vec<T> = cache.a.iter().map(|&v| v.max(T::zero())).collect();
        matmul(c, n, hid, &dpre, true, &r, false, self.w2.grad.data_mut(), true);
        let mut dr = vec![T::zero(); n * hid];
        matmul(n, c, hid, &dpre, false, self.w2.value.data(), false, &mut dr, false);
        for (d, &a) in dr.iter_mut().zip(&cache.a) {
            if a <= T::zero() {
                *d = T::zero();
            }
        }
        matmul(hid, n, c, &dr, true, &cache.z, false, self.w1.grad.data_mut(), true);
        let mut dz = vec![T::zero(); n * c];
        matmul(n, hid, c, &dr, false, self.w1.value.data(), false, &mut dz, false);
        let inv = T::one() / T::lit(hw as f64);
        for (plane, &d) in dx.data_mut().chunks_exact_mut(hw).zip(&dz) {
            let add = d * inv;
            plane.iter_mut().for_each(|v| *v += add);
        }
        Ok(dx)
    }

    fn visit(&mut self, prefix: &str, v: &mut dyn StateVisitor<T>) {
        v.param(&join(prefix, "w1"), &mut self.w1);
        v.param(&join(prefix, "w2"), &mut self.w2);
    }

    fn macs(&self) -> u64 {
        (2 * self.channels * self.hidden) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_weights_halve_the_input() {
        let mut se = SqueezeExcite::<f64>::from_weights(Tensor::zeros(&[2, 4]), Tensor::zeros(&[4, 2])).unwrap();
        let u = Tensor::from_fn(&[1, 4, 3, 3], |i| i as f64 - 7.0);
        let y = se.forward(&u, Mode::Eval).unwrap();
        assert_eq!(y, u.map(|v| 0.5 * v));
    }

    #[test]
    fn forced_unit_gate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut se = SqueezeExcite::<f32>::new(8, 0.25, &mut rng);
        se.forced_gate = Some(1.0);
        let u = Tensor::from_fn(&[2, 8, 4, 4], |i| (i as f32 * 0.3).sin());
        assert_eq!(se.forward(&u, Mode::Train).unwrap(), u);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut se = SqueezeExcite::<f32>::new(8, 0.25, &mut rng);
        assert!(se.forward(&Tensor::zeros(&[1, 4, 2, 2]), Mode::Eval).is_err());
    }
}
