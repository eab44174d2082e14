//! Domain-prediction branch: a small shared trunk over low-level features
//! followed by two separate softmax heads, one over the source latent
//! domains and one over the target latent domains. A source sample is
//! never scored by the target head and vice versa.

use rand::Rng;

use crate::layers::{softmax_backward, softmax_forward, LinearLayer, Relu, StandardBn};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct DomainBranch {
    pub trunk: LinearLayer,
    relu: Relu,
    pub src_head: LinearLayer,
    pub tgt_head: LinearLayer,
    /// optional standard BN over the head logits (multi-target stabilizer)
    pub src_bn: Option<StandardBn>,
    pub tgt_bn: Option<StandardBn>,
    cache: Option<BranchCache>,
}

#[derive(Debug, Clone)]
struct BranchCache {
    n_src: usize,
    trunk_out: Tensor,
    src_probs: Tensor,
    tgt_probs: Tensor,
}

impl DomainBranch {
    pub fn new<R: Rng>(
        feature_dim: usize,
        width: usize,
        k_s: usize,
        k_t: usize,
        logit_bn: bool,
        epsilon: f64,
        bn_momentum: f64,
        rng: &mut R,
    ) -> Self {
        assert!(k_s >= 1 && k_t >= 1);
        DomainBranch {
            trunk: LinearLayer::new(feature_dim, width, rng),
            relu: Relu::default(),
            src_head: LinearLayer::new(width, k_s, rng),
            tgt_head: LinearLayer::new(width, k_t, rng),
            src_bn: logit_bn.then(|| StandardBn::new(k_s, epsilon, bn_momentum)),
            tgt_bn: logit_bn.then(|| StandardBn::new(k_t, epsilon, bn_momentum)),
            cache: None,
        }
    }

    pub fn k_s(&self) -> usize {
        self.src_head.out_dim()
    }

    pub fn k_t(&self) -> usize {
        self.tgt_head.out_dim()
    }

    /// Predict assignment probabilities for a batch whose first `n_src`
    /// rows are source samples and the rest target samples. Returns the
    /// `[n_src, k_s]` and `[m, k_t]` probability matrices.
    pub fn forward(
        &mut self,
        features: &Tensor,
        n_src: usize,
        train: bool,
    ) -> Result<(Tensor, Tensor)> {
        if n_src > features.rows() {
            return Err(Error::Shape(format!(
                "n_src {} exceeds batch {}",
                n_src,
                features.rows()
            )));
        }
        let h = self.relu.forward(&self.trunk.forward(features)?)?;
        let src_h = h.row_slice(0, n_src);
        let tgt_h = h.row_slice(n_src, h.rows());
        let mut src_logits = self.src_head.forward(&src_h)?;
        let mut tgt_logits = self.tgt_head.forward(&tgt_h)?;
        if let Some(bn) = self.src_bn.as_mut() {
            src_logits = if train && src_logits.rows() >= 2 {
                bn.forward_train(&src_logits)?
            } else {
                bn.forward_infer(&src_logits)?
            };
        }
        if let Some(bn) = self.tgt_bn.as_mut() {
            tgt_logits = if train && tgt_logits.rows() >= 2 {
                bn.forward_train(&tgt_logits)?
            } else {
                bn.forward_infer(&tgt_logits)?
            };
        }
        let src_probs = softmax_forward(&src_logits)?;
        let tgt_probs = softmax_forward(&tgt_logits)?;
        self.cache = Some(BranchCache {
            n_src,
            trunk_out: h,
            src_probs: src_probs.clone(),
            tgt_probs: tgt_probs.clone(),
        });
        Ok((src_probs, tgt_probs))
    }

    /// Backward from dL/d(head probabilities) to dL/d(features).
    pub fn backward(&mut self, d_src_probs: &Tensor, d_tgt_probs: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("branch backward before forward".into()))?;
        let mut d_src = softmax_backward(&cache.src_probs, d_src_probs)?;
        let mut d_tgt = softmax_backward(&cache.tgt_probs, d_tgt_probs)?;
        if let Some(bn) = self.src_bn.as_mut() {
            if d_src.rows() >= 2 {
                d_src = bn.backward(&d_src)?;
            }
        }
        if let Some(bn) = self.tgt_bn.as_mut() {
            if d_tgt.rows() >= 2 {
                d_tgt = bn.backward(&d_tgt)?;
            }
        }
        let d_src_h = self.src_head.backward(&d_src)?;
        let d_tgt_h = self.tgt_head.backward(&d_tgt)?;
        let n_src = cache.n_src;
        let width = self.trunk.out_dim();
        let total = cache.trunk_out.rows();
        let mut dh = Tensor::zeros(&[total, width]);
        for i in 0..n_src {
            for j in 0..width {
                dh.set2(i, j, d_src_h.at2(i, j));
            }
        }
        for i in n_src..total {
            for j in 0..width {
                dh.set2(i, j, d_tgt_h.at2(i - n_src, j));
            }
        }
        let dh = self.relu.backward(&dh)?;
        self.trunk.backward(&dh)
    }

    pub fn zero_grads(&mut self) {
        self.trunk.zero_grads();
        self.src_head.zero_grads();
        self.tgt_head.zero_grads();
        if let Some(bn) = self.src_bn.as_mut() {
            bn.zero_grads();
        }
        if let Some(bn) = self.tgt_bn.as_mut() {
            bn.zero_grads();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeroed_head_predicts_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut b = DomainBranch::new(4, 8, 3, 2, false, 1e-5, 0.1, &mut rng);
        b.src_head.weight = Tensor::zeros(&[8, 3]);
        b.src_head.bias = Tensor::zeros(&[3]);
        let x = Tensor::rand_uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let (src, _) = b.forward(&x, 3, true).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((src.at2(i, j) - 1.0 / 3.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_domain_head_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut b = DomainBranch::new(4, 8, 1, 1, false, 1e-5, 0.1, &mut rng);
        let x = Tensor::rand_uniform(&[4, 4], -1.0, 1.0, &mut rng);
        let (src, tgt) = b.forward(&x, 2, true).unwrap();
        assert!(src.data().iter().all(|&v| v == 1.0));
        assert!(tgt.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pools_never_mix() {
        // perturbing a target sample must not change any source prediction
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut b = DomainBranch::new(3, 6, 2, 2, false, 1e-5, 0.1, &mut rng);
        let x = Tensor::rand_uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let (src1, _) = b.forward(&x, 2, true).unwrap();
        let mut x2 = x.clone();
        x2.set2(3, 0, 5.0);
        let (src2, _) = b.forward(&x2, 2, true).unwrap();
        assert_eq!(src1.data(), src2.data());
    }
}
