//! Standard differentiable building blocks: linear, ReLU, softmax and
//! plain batch normalization. Each layer keeps the forward cache it needs
//! for its backward pass as explicit state.

use rand::Rng;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Dense affine layer, `y = x W + b`, with gradient accumulation buffers.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: Tensor, // [in, out]
    pub bias: Tensor,   // [out]
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
    cache_input: Option<Tensor>,
}

impl LinearLayer {
    /// Xavier/Glorot uniform init from the caller's seeded RNG.
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        LinearLayer {
            weight: Tensor::rand_uniform(&[in_dim, out_dim], -bound, bound, rng),
            bias: Tensor::zeros(&[out_dim]),
            grad_weight: Tensor::zeros(&[in_dim, out_dim]),
            grad_bias: Tensor::zeros(&[out_dim]),
            cache_input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.matmul(&self.weight)?;
        let out = self.out_dim();
        for i in 0..y.rows() {
            for j in 0..out {
                let v = y.at2(i, j) + self.bias.data()[j];
                y.set2(i, j, v);
            }
        }
        self.cache_input = Some(x.clone());
        Ok(y)
    }

    /// Accumulates weight/bias grads, returns dL/dx.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self
            .cache_input
            .as_ref()
            .ok_or_else(|| Error::Usage("linear backward before forward".into()))?;
        let gw = x.transpose()?.matmul(dy)?;
        self.grad_weight = self.grad_weight.add(&gw)?;
        let gb = dy.reduce(0, crate::tensor::Reduce::Sum)?;
        self.grad_bias = self.grad_bias.add(&gb)?;
        dy.matmul(&self.weight.transpose()?)
    }

    pub fn zero_grads(&mut self) {
        self.grad_weight = Tensor::zeros(self.grad_weight.shape());
        self.grad_bias = Tensor::zeros(self.grad_bias.shape());
    }
}

/// ReLU with cached activation mask.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        x.map(|v| v.max(0.0))
    }

    pub fn backward(&self, dy: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::Usage("relu backward before forward".into()))?;
        let mut out = dy.clone();
        for (v, &m) in out.data_mut().iter_mut().zip(mask) {
            if !m {
                *v = 0.0;
            }
        }
        Ok(out)
    }
}

/// Row-wise softmax with max-subtraction for stability.
pub fn softmax_forward(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || x.cols() < 1 {
        return Err(Error::Shape(format!("softmax on {:?}", x.shape())));
    }
    let mut out = x.clone();
    let c = x.cols();
    for i in 0..x.rows() {
        let row = x.row(i);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..c {
            z += (row[j] - mx).exp();
        }
        for j in 0..c {
            out.set2(i, j, (row[j] - mx).exp() / z);
        }
    }
    Ok(out)
}

/// Given softmax output `p` and dL/dp, returns dL/dlogits:
/// `dz_j = p_j (dp_j - sum_k p_k dp_k)` per row.
pub fn softmax_backward(p: &Tensor, dp: &Tensor) -> Result<Tensor> {
    if p.shape() != dp.shape() {
        return Err(Error::Shape(format!(
            "softmax backward {:?} vs {:?}",
            p.shape(),
            dp.shape()
        )));
    }
    let mut out = Tensor::zeros(p.shape());
    let c = p.cols();
    for i in 0..p.rows() {
        let dot: f64 = (0..c).map(|j| p.at2(i, j) * dp.at2(i, j)).sum();
        for j in 0..c {
            out.set2(i, j, p.at2(i, j) * (dp.at2(i, j) - dot));
        }
    }
    Ok(out)
}

/// Plain batch normalization over the batch axis of a `[b, c]` tensor.
/// Biased (population) variance in training statistics; running stats are
/// an exponential moving average `r <- (1-momentum) r + momentum * batch`.
#[derive(Debug, Clone)]
pub struct StandardBn {
    pub channels: usize,
    pub epsilon: f64,
    pub momentum: f64,
    pub gamma: Tensor, // [c]
    pub beta: Tensor,  // [c]
    pub grad_gamma: Tensor,
    pub grad_beta: Tensor,
    pub run_mean: Tensor,
    pub run_var: Tensor,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor, // [b, c]
    var: Vec<f64>,
    dy_seen: bool,
}

impl StandardBn {
    pub fn new(channels: usize, epsilon: f64, momentum: f64) -> Self {
        StandardBn {
            channels,
            epsilon,
            momentum,
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
            run_mean: Tensor::zeros(&[channels]),
            run_var: Tensor::full(&[channels], 1.0),
            cache: None,
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, c) = (x.rows(), x.cols());
        if c != self.channels {
            return Err(Error::Shape(format!("bn channels {} vs {}", c, self.channels)));
        }
        if b < 2 {
            return Err(Error::Usage(format!("bn training needs batch >= 2, got {}", b)));
        }
        let bf = b as f64;
        let mut xhat = Tensor::zeros(&[b, c]);
        let mut vars = vec![0.0; c];
        let mut out = Tensor::zeros(&[b, c]);
        for j in 0..c {
            let mean: f64 = (0..b).map(|i| x.at2(i, j)).sum::<f64>() / bf;
            let var: f64 = (0..b).map(|i| (x.at2(i, j) - mean).powi(2)).sum::<f64>() / bf;
            vars[j] = var;
            let inv = 1.0 / (var + self.epsilon).sqrt();
            for i in 0..b {
                let h = (x.at2(i, j) - mean) * inv;
                xhat.set2(i, j, h);
                out.set2(i, j, self.gamma.data()[j] * h + self.beta.data()[j]);
            }
            let m = self.momentum;
            self.run_mean.data_mut()[j] = (1.0 - m) * self.run_mean.data()[j] + m * mean;
            self.run_var.data_mut()[j] = (1.0 - m) * self.run_var.data()[j] + m * var;
        }
        self.cache = Some(BnCache {
            xhat,
            var: vars,
            dy_seen: false,
        });
        Ok(out)
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c) = (x.rows(), x.cols());
        if c != self.channels {
            return Err(Error::Shape(format!("bn channels {} vs {}", c, self.channels)));
        }
        let mut out = Tensor::zeros(&[b, c]);
        for j in 0..c {
            let inv = 1.0 / (self.run_var.data()[j] + self.epsilon).sqrt();
            for i in 0..b {
                let h = (x.at2(i, j) - self.run_mean.data()[j]) * inv;
                out.set2(i, j, self.gamma.data()[j] * h + self.beta.data()[j]);
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_mut()
            .ok_or_else(|| Error::Usage("bn backward before training forward".into()))?;
        cache.dy_seen = true;
        let (b, c) = (dy.rows(), dy.cols());
        let bf = b as f64;
        let mut dx = Tensor::zeros(&[b, c]);
        for j in 0..c {
            let inv = 1.0 / (cache.var[j] + self.epsilon).sqrt();
            let g = self.gamma.data()[j];
            let mean_dy: f64 = (0..b).map(|i| dy.at2(i, j)).sum::<f64>() / bf;
            let mean_dy_xhat: f64 =
                (0..b).map(|i| dy.at2(i, j) * cache.xhat.at2(i, j)).sum::<f64>() / bf;
            for i in 0..b {
                dx.set2(
                    i,
                    j,
                    g * inv * (dy.at2(i, j) - mean_dy - cache.xhat.at2(i, j) * mean_dy_xhat),
                );
            }
            let gg: f64 = (0..b).map(|i| dy.at2(i, j) * cache.xhat.at2(i, j)).sum();
            let gb: f64 = (0..b).map(|i| dy.at2(i, j)).sum();
            self.grad_gamma.data_mut()[j] += gg;
            self.grad_beta.data_mut()[j] += gb;
        }
        Ok(dx)
    }

    pub fn zero_grads(&mut self) {
        self.grad_gamma = Tensor::zeros(&[self.channels]);
        self.grad_beta = Tensor::zeros(&[self.channels]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::central_diff;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = LinearLayer::new(2, 2, &mut rng);
        l.weight = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let x = Tensor::from_rows(&[vec![3.0, -1.5]]).unwrap();
        assert_eq!(l.forward(&x).unwrap(), x);
    }

    #[test]
    fn linear_bias_grad_counts_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = LinearLayer::new(3, 2, &mut rng);
        let x = Tensor::zeros(&[5, 3]);
        l.forward(&x).unwrap();
        l.backward(&Tensor::full(&[5, 2], 1.0)).unwrap();
        assert_eq!(l.grad_bias.data(), &[5.0, 5.0]);
    }

    #[test]
    fn linear_dx_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut l = LinearLayer::new(4, 3, &mut rng);
        let x = Tensor::rand_uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let r = Tensor::rand_uniform(&[5, 3], -1.0, 1.0, &mut rng);
        l.forward(&x).unwrap();
        let dx = l.backward(&r).unwrap();
        let mut lc = l.clone();
        let fd = central_diff(&x, 1e-5, |xt| {
            Ok(lc.forward(xt)?.mul(&r)?.sum())
        })
        .unwrap();
        for (a, f) in dx.data().iter().zip(fd.data()) {
            let denom = a.abs().max(f.abs()).max(1e-8);
            assert!((a - f).abs() / denom <= 1e-6, "{} vs {}", a, f);
        }
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_forward(&Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
        assert!((p.at2(0, 0) - 0.5).abs() <= 1e-12);
        let p = softmax_forward(&Tensor::from_rows(&[vec![1000.0, 1000.0]]).unwrap()).unwrap();
        assert!((p.at2(0, 1) - 0.5).abs() <= 1e-12);
        // Direct high-precision oracle for [1,2,3].
        let p = softmax_forward(&Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap()).unwrap();
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for j in 0..3 {
            assert!((p.at2(0, j) - ((j + 1) as f64).exp() / z).abs() <= 1e-12);
        }
        assert!(softmax_forward(&Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn bn_constant_channel_is_zero() {
        let mut bn = StandardBn::new(1, 1e-5, 0.1);
        let x = Tensor::from_rows(&[vec![4.0], vec![4.0], vec![4.0]]).unwrap();
        let y = bn.forward_train(&x).unwrap();
        for v in y.data() {
            assert!(v.abs() <= 1e-9);
        }
    }

    #[test]
    fn bn_two_point_channel() {
        // mean 2, var 1: [1,3] normalizes to [-1,1]/sqrt(1+eps).
        let eps = 1e-5;
        let mut bn = StandardBn::new(1, eps, 0.1);
        let x = Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let y = bn.forward_train(&x).unwrap();
        let expect = 1.0 / (1.0 + eps).sqrt();
        assert!((y.at2(0, 0) + expect).abs() <= 1e-12);
        assert!((y.at2(1, 0) - expect).abs() <= 1e-12);
    }

    #[test]
    fn bn_rejects_singleton_batch() {
        let mut bn = StandardBn::new(2, 1e-5, 0.1);
        assert!(bn.forward_train(&Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn bn_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bn = StandardBn::new(3, 1e-5, 0.1);
        bn.gamma = Tensor::rand_uniform(&[3], 0.5, 1.5, &mut rng);
        bn.beta = Tensor::rand_uniform(&[3], -0.5, 0.5, &mut rng);
        let x = Tensor::rand_uniform(&[6, 3], -2.0, 2.0, &mut rng);
        let r = Tensor::rand_uniform(&[6, 3], -1.0, 1.0, &mut rng);
        bn.forward_train(&x).unwrap();
        let dx = bn.backward(&r).unwrap();
        let proto = bn.clone();
        let fd = central_diff(&x, 1e-5, |xt| {
            let mut b = proto.clone();
            Ok(b.forward_train(xt)?.mul(&r)?.sum())
        })
        .unwrap();
        for (a, f) in dx.data().iter().zip(fd.data()) {
            let denom = a.abs().max(f.abs()).max(1e-8);
            assert!((a - f).abs() / denom <= 1e-6, "{} vs {}", a, f);
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-50f64..50.0, 8)) {
            let x = Tensor::new(vec![2, 4], vals).unwrap();
            let p = softmax_forward(&x).unwrap();
            for i in 0..2 {
                let s: f64 = p.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                for &v in p.row(i) { prop_assert!(v > 0.0 && v <= 1.0); }
            }
        }
    }
}
