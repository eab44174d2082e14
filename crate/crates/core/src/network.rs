//! The full network: an MLP classification branch whose hidden blocks are
//! normalized by multi-domain alignment layers, plus the domain-prediction
//! branch tapped from low-level features.
//!
//! Forward order per batch: the tap activation is computed first, the
//! branch (or a forced source) produces one assignment matrix, and that
//! same matrix is fed to every alignment layer in the pass. Backward
//! accumulates the dL/dw contributions of all alignment layers, merges
//! them with the domain-loss seeds and sends them through the branch
//! heads; the branch trunk's feature gradient rejoins the classification
//! path at the tap.

use rand::Rng;

use crate::domain_branch::DomainBranch;
use crate::layers::{softmax_forward, LinearLayer, Relu};
use crate::mda::{AssignmentMatrix, MdaLayer, RowOrigin};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub k_s: usize,
    pub k_t: usize,
    pub branch_width: usize,
    /// 0 = branch reads raw input features, 1 = the first hidden block's
    /// pre-normalization activation (default)
    pub tap: usize,
    pub epsilon: f64,
    pub bn_momentum: f64,
    pub branch_logit_bn: bool,
    /// number of latent domains the alignment layers carry; `k_s + k_t`
    /// normally, 1 in unified mode
    pub num_domains: usize,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::Config("need at least one hidden layer".into()));
        }
        if self.tap > 1 {
            return Err(Error::Config(format!(
                "tap {} unsupported: assignments must exist before the first alignment layer",
                self.tap
            )));
        }
        if self.num_domains != 1 && self.num_domains != self.k_s + self.k_t {
            return Err(Error::Config(format!(
                "num_domains {} must be 1 or k_s+k_t={}",
                self.num_domains,
                self.k_s + self.k_t
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    linear: LinearLayer,
    mda: MdaLayer,
    relu: Relu,
}

/// How the assignment matrix for a batch is produced.
#[derive(Debug, Clone)]
pub enum AssignmentSource<'a> {
    /// Branch predictions, with known-domain rows clamped to one-hots.
    Predicted { known: &'a [Option<usize>] },
    /// Every sample on the single shared domain.
    Unified,
    /// Fixed one-hot per row; values are column indices into the combined
    /// source+target domain axis.
    ForcedColumns(&'a [usize]),
}

pub struct ForwardOut {
    pub class_probs: Tensor,             // [b, num_classes]
    pub src_head_probs: Option<Tensor>,  // [n_src, k_s], predicted mode only
    pub tgt_head_probs: Option<Tensor>,
    pub assignment: AssignmentMatrix,    // the matrix fed to the mda layers
    pub n_src: usize,
    predicted: bool,
}

#[derive(Clone)]
pub struct Network {
    pub cfg: NetworkConfig,
    blocks: Vec<Block>,
    classifier: LinearLayer,
    pub branch: DomainBranch,
}

impl Network {
    pub fn new<R: Rng>(cfg: NetworkConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::new();
        let mut prev = cfg.input_dim;
        for &h in &cfg.hidden {
            blocks.push(Block {
                linear: LinearLayer::new(prev, h, rng),
                mda: MdaLayer::new(cfg.num_domains, h, cfg.epsilon, cfg.bn_momentum),
                relu: Relu::default(),
            });
            prev = h;
        }
        let classifier = LinearLayer::new(prev, cfg.num_classes, rng);
        let feature_dim = if cfg.tap == 0 { cfg.input_dim } else { cfg.hidden[0] };
        let branch = DomainBranch::new(
            feature_dim,
            cfg.branch_width,
            cfg.k_s,
            cfg.k_t,
            cfg.branch_logit_bn,
            cfg.epsilon,
            cfg.bn_momentum,
            rng,
        );
        Ok(Network {
            cfg,
            blocks,
            classifier,
            branch,
        })
    }

    /// Widen per-pool head probabilities into the combined assignment
    /// matrix: source rows occupy columns `0..k_s`, target rows the
    /// remaining `k_t` columns.
    fn combine_heads(&self, src: &Tensor, tgt: &Tensor) -> Result<Tensor> {
        let (ks, kt) = (self.cfg.k_s, self.cfg.k_t);
        let b = src.rows() + tgt.rows();
        let mut w = Tensor::zeros(&[b, ks + kt]);
        for i in 0..src.rows() {
            for j in 0..ks {
                w.set2(i, j, src.at2(i, j));
            }
        }
        for i in 0..tgt.rows() {
            for j in 0..kt {
                w.set2(src.rows() + i, ks + j, tgt.at2(i, j));
            }
        }
        Ok(w)
    }

    pub fn forward(
        &mut self,
        x: &Tensor,
        n_src: usize,
        source: &AssignmentSource,
        train: bool,
    ) -> Result<ForwardOut> {
        if x.cols() != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "input {:?} vs input_dim {}",
                x.shape(),
                self.cfg.input_dim
            )));
        }
        let b = x.rows();
        // first linear (the tap activation when tap == 1)
        let a1 = self.blocks[0].linear.forward(x)?;
        let tap_features = if self.cfg.tap == 0 { x.clone() } else { a1.clone() };

        let (assignment, src_head_probs, tgt_head_probs, predicted) = match source {
            AssignmentSource::Predicted { known } => {
                let (src_p, tgt_p) = self.branch.forward(&tap_features, n_src, train)?;
                let w = self.combine_heads(&src_p, &tgt_p)?;
                let mut known_cols: Vec<Option<usize>> = vec![None; b];
                for (i, k) in known.iter().enumerate() {
                    if i >= n_src {
                        return Err(Error::Usage("known domains given for target rows".into()));
                    }
                    known_cols[i] = *k; // source domains are columns 0..k_s
                }
                let a = AssignmentMatrix::new(w)?.clamp_known(&known_cols)?;
                (a, Some(src_p), Some(tgt_p), true)
            }
            AssignmentSource::Unified => {
                if self.cfg.num_domains != 1 {
                    return Err(Error::Usage("unified assignments need num_domains = 1".into()));
                }
                let a = AssignmentMatrix::new(Tensor::full(&[b, 1], 1.0))?;
                (a, None, None, false)
            }
            AssignmentSource::ForcedColumns(cols) => {
                if cols.len() != b {
                    return Err(Error::Usage("forced columns length mismatch".into()));
                }
                let nd = self.cfg.num_domains;
                let mut w = Tensor::zeros(&[b, nd]);
                for (i, &c) in cols.iter().enumerate() {
                    if c >= nd {
                        return Err(Error::Usage(format!("forced column {} out of {}", c, nd)));
                    }
                    w.set2(i, c, 1.0);
                }
                (AssignmentMatrix::new(w)?, None, None, false)
            }
        };

        // classification branch
        let mut h = a1;
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            if bi > 0 {
                h = block.linear.forward(&h)?;
            }
            h = if train {
                block.mda.forward_train(&h, &assignment.w)?
            } else {
                block.mda.forward_infer(&h, &assignment.w)?
            };
            h = block.relu.forward(&h)?;
        }
        let logits = self.classifier.forward(&h)?;
        let class_probs = softmax_forward(&logits)?;
        Ok(ForwardOut {
            class_probs,
            src_head_probs,
            tgt_head_probs,
            assignment,
            n_src,
            predicted,
        })
    }

    /// Backward from dL/d(class probabilities) and, in predicted mode,
    /// dL/d(head probabilities) coming from the domain loss. Gradients are
    /// accumulated into every layer's buffers.
    pub fn backward(
        &mut self,
        out: &ForwardOut,
        d_class_probs: &Tensor,
        d_src_head_probs: Option<&Tensor>,
        d_tgt_head_probs: Option<&Tensor>,
    ) -> Result<()> {
        let dz = crate::layers::softmax_backward(&out.class_probs, d_class_probs)?;
        let mut dh = self.classifier.backward(&dz)?;
        let nd = self.cfg.num_domains;
        let b = dh.rows();
        let mut dw_total = Tensor::zeros(&[b, nd]);
        for bi in (0..self.blocks.len()).rev() {
            let block = &mut self.blocks[bi];
            dh = block.relu.backward(&dh)?;
            let (dx, dw) = block.mda.backward(&dh)?;
            dw_total = dw_total.add(&dw)?;
            dh = dx;
            if bi > 0 {
                dh = block.linear.backward(&dh)?;
            }
        }
        // dh is now the gradient at the first linear's output (a1)
        if out.predicted {
            let n_src = out.n_src;
            let (ks, kt) = (self.cfg.k_s, self.cfg.k_t);
            let mut d_src = Tensor::zeros(&[n_src, ks]);
            let mut d_tgt = Tensor::zeros(&[b - n_src, kt]);
            for i in 0..n_src {
                if out.assignment.origin[i] == RowOrigin::ClampedKnown {
                    continue; // clamped rows receive no assignment gradient
                }
                for j in 0..ks {
                    d_src.set2(i, j, dw_total.at2(i, j));
                }
            }
            for i in n_src..b {
                for j in 0..kt {
                    d_tgt.set2(i - n_src, j, dw_total.at2(i, ks + j));
                }
            }
            if let Some(extra) = d_src_head_probs {
                d_src = d_src.add(extra)?;
            }
            if let Some(extra) = d_tgt_head_probs {
                d_tgt = d_tgt.add(extra)?;
            }
            let d_tap = self.branch.backward(&d_src, &d_tgt)?;
            if self.cfg.tap == 1 {
                dh = dh.add(&d_tap)?;
            }
            // tap == 0: the branch reads raw inputs; nothing upstream
        }
        self.blocks[0].linear.backward(&dh)?;
        Ok(())
    }

    /// Fold cached batch statistics of every alignment layer into the
    /// running averages (one training step's worth).
    pub fn update_running_stats(&mut self) -> Result<()> {
        for block in &mut self.blocks {
            block.mda.update_running()?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for block in &mut self.blocks {
            block.linear.zero_grads();
            block.mda.zero_grads();
        }
        self.classifier.zero_grads();
        self.branch.zero_grads();
    }

    /// Visit every trainable parameter in a fixed order:
    /// `(name, param, grad, weight_decay_applies)`.
    pub fn visit_params(
        &mut self,
        f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor, bool) -> Result<()>,
    ) -> Result<()> {
        for (i, block) in self.blocks.iter_mut().enumerate() {
            f(
                &format!("block{}.linear.weight", i),
                &mut block.linear.weight,
                &mut block.linear.grad_weight,
                true,
            )?;
            f(
                &format!("block{}.linear.bias", i),
                &mut block.linear.bias,
                &mut block.linear.grad_bias,
                false,
            )?;
            f(
                &format!("block{}.mda.gamma", i),
                &mut block.mda.gamma,
                &mut block.mda.grad_gamma,
                false,
            )?;
            f(
                &format!("block{}.mda.beta", i),
                &mut block.mda.beta,
                &mut block.mda.grad_beta,
                false,
            )?;
        }
        f(
            "classifier.weight",
            &mut self.classifier.weight,
            &mut self.classifier.grad_weight,
            true,
        )?;
        f(
            "classifier.bias",
            &mut self.classifier.bias,
            &mut self.classifier.grad_bias,
            false,
        )?;
        let br = &mut self.branch;
        f(
            "branch.trunk.weight",
            &mut br.trunk.weight,
            &mut br.trunk.grad_weight,
            true,
        )?;
        f("branch.trunk.bias", &mut br.trunk.bias, &mut br.trunk.grad_bias, false)?;
        f(
            "branch.src_head.weight",
            &mut br.src_head.weight,
            &mut br.src_head.grad_weight,
            true,
        )?;
        f(
            "branch.src_head.bias",
            &mut br.src_head.bias,
            &mut br.src_head.grad_bias,
            false,
        )?;
        f(
            "branch.tgt_head.weight",
            &mut br.tgt_head.weight,
            &mut br.tgt_head.grad_weight,
            true,
        )?;
        f(
            "branch.tgt_head.bias",
            &mut br.tgt_head.bias,
            &mut br.tgt_head.grad_bias,
            false,
        )?;
        if let Some(bn) = br.src_bn.as_mut() {
            f("branch.src_bn.gamma", &mut bn.gamma, &mut bn.grad_gamma, false)?;
            f("branch.src_bn.beta", &mut bn.beta, &mut bn.grad_beta, false)?;
        }
        if let Some(bn) = br.tgt_bn.as_mut() {
            f("branch.tgt_bn.gamma", &mut bn.gamma, &mut bn.grad_gamma, false)?;
            f("branch.tgt_bn.beta", &mut bn.beta, &mut bn.grad_beta, false)?;
        }
        Ok(())
    }

    /// Visit non-trainable state (running statistics) for persistence.
    pub fn visit_buffers(
        &mut self,
        f: &mut dyn FnMut(&str, &mut Tensor) -> Result<()>,
    ) -> Result<()> {
        for (i, block) in self.blocks.iter_mut().enumerate() {
            f(&format!("block{}.mda.run_mean", i), &mut block.mda.run_mean)?;
            f(&format!("block{}.mda.run_var", i), &mut block.mda.run_var)?;
        }
        let br = &mut self.branch;
        if let Some(bn) = br.src_bn.as_mut() {
            f("branch.src_bn.run_mean", &mut bn.run_mean)?;
            f("branch.src_bn.run_var", &mut bn.run_var)?;
        }
        if let Some(bn) = br.tgt_bn.as_mut() {
            f("branch.tgt_bn.run_mean", &mut bn.run_mean)?;
            f("branch.tgt_bn.run_var", &mut bn.run_var)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{classification_loss, domain_loss, LossWeights};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> NetworkConfig {
        NetworkConfig {
            input_dim: 3,
            hidden: vec![4, 4],
            num_classes: 2,
            k_s: 2,
            k_t: 1,
            branch_width: 5,
            tap: 1,
            epsilon: 1e-5,
            bn_momentum: 0.1,
            branch_logit_bn: false,
            num_domains: 3,
        }
    }

    #[test]
    fn forward_shapes_and_shared_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut net = Network::new(tiny_cfg(), &mut rng).unwrap();
        let x = Tensor::rand_uniform(&[6, 3], -1.0, 1.0, &mut rng);
        let out = net
            .forward(&x, 3, &AssignmentSource::Predicted { known: &[None; 3] }, true)
            .unwrap();
        assert_eq!(out.class_probs.shape(), &[6, 2]);
        assert_eq!(out.assignment.w.shape(), &[6, 3]);
        // all mda layers saw the identical matrix
        for block in &net.blocks {
            let cached = &block.mda.cache().unwrap().w;
            assert_eq!(cached.data(), out.assignment.w.data());
        }
        // source rows carry no target-column mass and vice versa
        for i in 0..3 {
            assert_eq!(out.assignment.w.at2(i, 2), 0.0);
            assert_eq!(out.assignment.w.at2(3 + i, 0), 0.0);
            assert_eq!(out.assignment.w.at2(3 + i, 1), 0.0);
        }
    }

    #[test]
    fn classification_gradient_reaches_branch() {
        // the only path from the classification loss to the branch is
        // dL/dw through the alignment layers
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut net = Network::new(tiny_cfg(), &mut rng).unwrap();
        let x = Tensor::rand_uniform(&[6, 3], -1.0, 1.0, &mut rng);
        let out = net
            .forward(&x, 3, &AssignmentSource::Predicted { known: &[None; 3] }, true)
            .unwrap();
        let src_probs = out.class_probs.row_slice(0, 3);
        let tgt_probs = out.class_probs.row_slice(3, 6);
        let w = LossWeights {
            lambda_c: 0.0,
            lambda_e: 0.0,
            lambda_b: 0.0,
            lambda_d: 0.0,
        };
        let cls = classification_loss(&src_probs, &[0, 1, 0], &tgt_probs, &w).unwrap();
        let mut d_class = Tensor::zeros(&[6, 2]);
        for i in 0..3 {
            for j in 0..2 {
                d_class.set2(i, j, cls.d_source.at2(i, j));
            }
        }
        net.zero_grads();
        net.backward(&out, &d_class, None, None).unwrap();
        let norm: f64 = net
            .branch
            .trunk
            .grad_weight
            .data()
            .iter()
            .map(|v| v * v)
            .sum();
        assert!(norm > 0.0, "branch should receive classification gradient");
    }

    #[test]
    fn clamped_rows_get_no_assignment_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut net = Network::new(tiny_cfg(), &mut rng).unwrap();
        let x = Tensor::rand_uniform(&[6, 3], -1.0, 1.0, &mut rng);
        let known = [Some(1), None, None];
        let out = net
            .forward(&x, 3, &AssignmentSource::Predicted { known: &known }, true)
            .unwrap();
        assert_eq!(out.assignment.w.row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(out.assignment.origin[0], RowOrigin::ClampedKnown);
        // full loss backward runs without error
        let src_dom = out.src_head_probs.clone().unwrap();
        let tgt_dom = out.tgt_head_probs.clone().unwrap();
        let dl = domain_loss(&src_dom, &tgt_dom, &known, &LossWeights::default()).unwrap();
        net.zero_grads();
        net.backward(
            &out,
            &Tensor::zeros(&[6, 2]),
            Some(&dl.d_source),
            Some(&dl.d_target),
        )
        .unwrap();
    }

    #[test]
    fn unified_and_forced_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut cfg = tiny_cfg();
        cfg.num_domains = 1;
        let mut net = Network::new(cfg, &mut rng).unwrap();
        let x = Tensor::rand_uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let out = net.forward(&x, 2, &AssignmentSource::Unified, true).unwrap();
        assert!(out.assignment.w.data().iter().all(|&v| v == 1.0));

        let mut net = Network::new(tiny_cfg(), &mut rng).unwrap();
        let cols = [0usize, 1, 2, 2];
        let out = net
            .forward(&x, 2, &AssignmentSource::ForcedColumns(&cols), true)
            .unwrap();
        for (i, &c) in cols.iter().enumerate() {
            assert_eq!(out.assignment.w.at2(i, c), 1.0);
        }
        net.zero_grads();
        net.backward(&out, &Tensor::zeros(&[4, 2]), None, None).unwrap();
        // no branch gradient in forced mode
        assert!(net.branch.trunk.grad_weight.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tap_override_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let mut cfg = tiny_cfg();
        cfg.tap = 0;
        let net = Network::new(cfg, &mut rng).unwrap();
        assert_eq!(net.branch.trunk.in_dim(), 3);
        let mut cfg = tiny_cfg();
        cfg.tap = 1;
        let net = Network::new(cfg, &mut rng).unwrap();
        assert_eq!(net.branch.trunk.in_dim(), 4);
        let mut cfg = tiny_cfg();
        cfg.tap = 2;
        assert!(Network::new(cfg, &mut rng).is_err());
    }
}
