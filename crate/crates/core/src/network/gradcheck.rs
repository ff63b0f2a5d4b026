//! Finite-difference checks of analytic gradients (64-bit, five-point
//! central stencil).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::{for_each_param, zero_grad, Mode, Module, NetError};

/// Largest relative discrepancy found, and where.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Step proportional to the coordinate, so near-zero weights feeding a
/// normalisation are not stepped across their own scale.
fn step(v: f64) -> f64 {
    1e-4 * v.abs().clamp(1e-2, 1.0)
}

/// Derivative from samples at `-2h, -h, h, 2h`.
fn stencil(f: [f64; 4], h: f64) -> f64 {
    (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h)
}

/// Five-point estimate of `d f / d v` at `v0`. A second estimate at a ten
/// times smaller step is taken; when the two disagree (a ReLU kink or
/// sharp curvature within reach of the coarse step) the fine one is used.
/// Returns the estimate and the step it used.
fn derivative(v0: f64, mut f: impl FnMut(f64) -> Result<f64, NetError>) -> Result<(f64, f64), NetError> {
    let mut at = |h: f64| -> Result<f64, NetError> {
        Ok(stencil([f(v0 - 2.0 * h)?, f(v0 - h)?, f(v0 + h)?, f(v0 + 2.0 * h)?], h))
    };
    let h = step(v0);
    let coarse = at(h)?;
    let fine = at(h / 10.0)?;
    if (coarse - fine).abs() <= 1e-6 * coarse.abs().max(fine.abs()).max(1e-6) {
        Ok((coarse, h))
    } else {
        Ok((fine, h / 10.0))
    }
}

fn loss(m: &mut dyn Module<f64>, x: &Tensor<f64>, r: &[f64], mode: Mode) -> Result<f64, NetError> {
    let y = m.forward(x, mode)?;
    Ok(y.data().iter().zip(r).map(|(a, b)| a * b).sum())
}

/// Checks input and parameter gradients of `m` at `x` for the scalar loss
/// `sum(r * m(x))` with a seeded random projection `r`. At most
/// `max_per_tensor` randomly chosen coordinates are probed per tensor.
pub fn check_module(
    m: &mut dyn Module<f64>,
    x: &Tensor<f64>,
    mode: Mode,
    seed: u64,
    max_per_tensor: usize,
) -> Result<GradReport, NetError> {
    const FLOOR: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = m.forward(x, mode)?;
    let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    zero_grad(m);
    let y = m.forward(x, mode)?;
    let dx = m.backward(&Tensor::from_vec(y.shape(), r.clone())?)?;
    // Round-off of a stencil evaluation is about eps * sum|r y| / h; the
    // denominator never drops below a large multiple of it.
    let loss_scale: f64 = y.data().iter().zip(&r).map(|(a, b)| (a * b).abs()).sum();
    let floor_for = |h: f64| FLOOR.max(1e5 * f64::EPSILON * loss_scale / h);

    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |what: String, a: f64, n: f64, floor: f64| {
        let e = relative_error(a, n, floor);
        report.checked += 1;
        if e > report.max_rel_error || !e.is_finite() {
            report.max_rel_error = if e.is_finite() { e } else { f64::INFINITY };
            report.worst = format!("{what}: analytic {a:e} numeric {n:e}");
        }
    };

    let pick = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        if len <= max_per_tensor {
            (0..len).collect()
        } else {
            (0..max_per_tensor).map(|_| rng.random_range(0..len)).collect()
        }
    };

    let mut xp = x.clone();
    for i in pick(x.len(), &mut rng) {
        let orig = xp.data()[i];
        let (numeric, h) = derivative(orig, |v| {
            xp.data_mut()[i] = v;
            loss(m, &xp, &r, mode)
        })?;
        xp.data_mut()[i] = orig;
        record(format!("input[{i}]"), dx.data()[i], numeric, floor_for(h));
    }

    let mut shapes = Vec::new();
    for_each_param(m, |name, p| shapes.push((name.to_string(), p.value.clone(), p.grad.clone())));
    for (k, (name, value, grad)) in shapes.into_iter().enumerate() {
        for i in pick(value.len(), &mut rng) {
            let set = |m: &mut dyn Module<f64>, v: f64| {
                let mut idx = 0;
                for_each_param(m, |_, p| {
                    if idx == k {
                        p.value.data_mut()[i] = v;
                    }
                    idx += 1;
                });
            };
            let orig = value.data()[i];
            let (numeric, h) = derivative(orig, |v| {
                set(m, v);
                loss(m, x, &r, mode)
            })?;
            set(m, orig);
            record(format!("{name}[{i}]"), grad.data()[i], numeric, floor_for(h));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::blocks::{FusedMbConv, MbConv};
    use crate::network::layers::{Activation, ActivationKind, BatchNorm2d, Conv2d, Dense, DepthwiseConv2d};
    use crate::network::se::SqueezeExcite;

    fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn assert_ok(name: &str, m: &mut dyn Module<f64>, x: &Tensor<f64>, mode: Mode) {
        let r = check_module(m, x, mode, 11, 40).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{name}: {r:?}");
    }

    #[test]
    fn primitive_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = input(&[2, 2, 5, 5], 1);
        assert_ok("conv s1", &mut Conv2d::new(2, 3, 3, 1, &mut rng), &x, Mode::Train);
        assert_ok("conv s2", &mut Conv2d::new(2, 3, 3, 2, &mut rng), &x, Mode::Train);
        assert_ok("conv 1x1", &mut Conv2d::new(2, 3, 1, 1, &mut rng), &x, Mode::Train);
        assert_ok("depthwise", &mut DepthwiseConv2d::new(2, 3, 2, &mut rng), &x, Mode::Train);
        assert_ok("bn train", &mut BatchNorm2d::new(2), &x, Mode::Train);
        assert_ok("bn eval", &mut BatchNorm2d::new(2), &x, Mode::Eval);
        assert_ok("silu", &mut Activation::new(ActivationKind::Silu), &x, Mode::Train);
        assert_ok("sigmoid", &mut Activation::new(ActivationKind::Sigmoid), &x, Mode::Train);
        assert_ok("se", &mut SqueezeExcite::new(2, 0.5, &mut rng), &x, Mode::Train);
        assert_ok("dense", &mut Dense::new(4, 3, &mut rng), &input(&[3, 4], 2), Mode::Train);
    }

    #[test]
    fn blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = input(&[1, 4, 8, 8], 4);
        let mut f1 = FusedMbConv::new(4, 4, 1, 1, 0.0, &mut rng, 0).unwrap();
        assert_ok("fused e1", &mut f1, &x, Mode::Train);
        let mut f4 = FusedMbConv::new(4, 8, 2, 4, 0.0, &mut rng, 0).unwrap();
        assert_ok("fused e4", &mut f4, &x, Mode::Train);
        let mut mb = MbConv::new(4, 4, 1, 4, 0.25, 0.0, &mut rng, 0).unwrap();
        assert_ok("mbconv", &mut mb, &x, Mode::Train);
    }
}
