//! Multi-domain alignment layer.
//!
//! Forward (training): per domain `d`, responsibilities
//! `alpha_{i,d} = w_{i,d} / sum_j w_{j,d}` turn the soft assignments into
//! weighted batch statistics `mu_d = sum_i alpha_{i,d} x_i`,
//! `var_d = sum_i alpha_{i,d} (x_i - mu_d)^2`, and the output recombines
//! the per-domain normalized values per sample:
//! `y_i = sum_d w_{i,d} (x_i - mu_d) / sqrt(var_d + eps)`, followed by a
//! shared per-channel affine transform.
//!
//! Backward propagates through the statistics and the weights, returning
//! both dL/dx and dL/dw in closed form; the binding contract is agreement
//! with central finite differences (see [`crate::gradcheck`]).

use crate::tensor::Tensor;
use crate::{Error, Result};

/// A domain whose total batch mass falls below this is treated as empty:
/// its statistics are excluded from the running update and its
/// normalization term falls back to running statistics.
pub const EMPTY_DOMAIN_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOrigin {
    Predicted,
    ClampedKnown,
}

/// Per-sample soft domain assignment weights, rows on the simplex.
#[derive(Debug, Clone)]
pub struct AssignmentMatrix {
    pub w: Tensor, // [b, D]
    pub origin: Vec<RowOrigin>,
}

impl AssignmentMatrix {
    pub fn new(w: Tensor) -> Result<Self> {
        let b = w.rows();
        for i in 0..b {
            let mut sum = 0.0;
            for &v in w.row(i) {
                if !(0.0..=1.0 + 1e-9).contains(&v) {
                    return Err(Error::Domain(format!("assignment entry {} out of [0,1]", v)));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("assignment row {} sums to {}", i, sum)));
            }
            if w.row(i).iter().all(|&v| v == 0.0) {
                return Err(Error::Domain(format!("all-zero assignment row {}", i)));
            }
        }
        Ok(AssignmentMatrix {
            origin: vec![RowOrigin::Predicted; b],
            w,
        })
    }

    pub fn num_domains(&self) -> usize {
        self.w.cols()
    }

    /// Replace rows with known domain ids by exact one-hots and flag them.
    /// Gradients to clamped rows are zeroed by the network backward.
    pub fn clamp_known(mut self, known: &[Option<usize>]) -> Result<Self> {
        let d = self.num_domains();
        for (i, k) in known.iter().enumerate() {
            if let Some(id) = k {
                if *id >= d {
                    return Err(Error::Usage(format!(
                        "known domain {} out of range for {} domains",
                        id, d
                    )));
                }
                for j in 0..d {
                    self.w.set2(i, j, if j == *id { 1.0 } else { 0.0 });
                }
                self.origin[i] = RowOrigin::ClampedKnown;
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Clone)]
pub struct MdaCache {
    pub w: Tensor,        // [b, D]
    pub alpha: Tensor,    // [b, D] responsibilities (0 for empty domains)
    pub mass: Vec<f64>,   // per-domain total weight
    pub active: Vec<bool>,
    pub mu: Tensor,       // [D, C] statistics actually used in the forward
    pub var: Tensor,      // [D, C]
    pub xhat: Vec<Tensor>, // per domain [b, C]
    pub pre_affine: Tensor, // [b, C]
}

/// The multi-domain alignment layer. Affine scale/shift is shared across
/// domains (one pair per channel); running statistics are kept per domain.
#[derive(Debug, Clone)]
pub struct MdaLayer {
    pub num_domains: usize,
    pub channels: usize,
    pub epsilon: f64,
    pub momentum: f64,
    pub gamma: Tensor, // [C]
    pub beta: Tensor,  // [C]
    pub grad_gamma: Tensor,
    pub grad_beta: Tensor,
    pub run_mean: Tensor, // [D, C]
    pub run_var: Tensor,  // [D, C]
    cache: Option<MdaCache>,
}

impl MdaLayer {
    pub fn new(num_domains: usize, channels: usize, epsilon: f64, momentum: f64) -> Self {
        assert!(num_domains >= 1 && epsilon > 0.0);
        MdaLayer {
            num_domains,
            channels,
            epsilon,
            momentum,
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
            run_mean: Tensor::zeros(&[num_domains, channels]),
            run_var: Tensor::full(&[num_domains, channels], 1.0),
            cache: None,
        }
    }

    fn check_shapes(&self, x: &Tensor, w: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.channels {
            return Err(Error::Shape(format!(
                "mda input {:?}, expected [b, {}]",
                x.shape(),
                self.channels
            )));
        }
        if w.rank() != 2 || w.rows() != x.rows() || w.cols() != self.num_domains {
            return Err(Error::Shape(format!(
                "assignment {:?} vs batch {} x {} domains",
                w.shape(),
                x.rows(),
                self.num_domains
            )));
        }
        Ok(())
    }

    /// Training-mode forward. Caches everything the backward needs.
    /// Running statistics are updated separately via [`Self::update_running`]
    /// so that repeated forwards (finite differencing) do not drift them.
    pub fn forward_train(&mut self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        self.check_shapes(x, w)?;
        let (b, c, nd) = (x.rows(), self.channels, self.num_domains);
        if b < 2 {
            return Err(Error::Usage(format!("mda training needs batch >= 2, got {}", b)));
        }
        for i in 0..b {
            if w.row(i).iter().all(|&v| v == 0.0) {
                return Err(Error::Domain(format!("all-zero assignment row {}", i)));
            }
        }
        let mut mass = vec![0.0; nd];
        for d in 0..nd {
            for i in 0..b {
                mass[d] += w.at2(i, d);
            }
        }
        let active: Vec<bool> = mass.iter().map(|&m| m >= EMPTY_DOMAIN_MASS).collect();
        let mut alpha = Tensor::zeros(&[b, nd]);
        let mut mu = Tensor::zeros(&[nd, c]);
        let mut var = Tensor::zeros(&[nd, c]);
        for d in 0..nd {
            if active[d] {
                for i in 0..b {
                    alpha.set2(i, d, w.at2(i, d) / mass[d]);
                }
                for j in 0..c {
                    let m: f64 = (0..b).map(|i| alpha.at2(i, d) * x.at2(i, j)).sum();
                    mu.set2(d, j, m);
                    let v: f64 = (0..b)
                        .map(|i| alpha.at2(i, d) * (x.at2(i, j) - m).powi(2))
                        .sum();
                    var.set2(d, j, v);
                }
            } else {
                // starved domain: normalize its term with running stats
                for j in 0..c {
                    mu.set2(d, j, self.run_mean.at2(d, j));
                    var.set2(d, j, self.run_var.at2(d, j));
                }
            }
        }
        let mut xhat = Vec::with_capacity(nd);
        for d in 0..nd {
            let mut h = Tensor::zeros(&[b, c]);
            for j in 0..c {
                let inv = 1.0 / (var.at2(d, j) + self.epsilon).sqrt();
                for i in 0..b {
                    h.set2(i, j, (x.at2(i, j) - mu.at2(d, j)) * inv);
                }
            }
            xhat.push(h);
        }
        let mut pre = Tensor::zeros(&[b, c]);
        for i in 0..b {
            for j in 0..c {
                let mut acc = 0.0;
                for d in 0..nd {
                    acc += w.at2(i, d) * xhat[d].at2(i, j);
                }
                pre.set2(i, j, acc);
            }
        }
        let mut y = Tensor::zeros(&[b, c]);
        for i in 0..b {
            for j in 0..c {
                y.set2(i, j, self.gamma.data()[j] * pre.at2(i, j) + self.beta.data()[j]);
            }
        }
        if y.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mda forward output".into()));
        }
        self.cache = Some(MdaCache {
            w: w.clone(),
            alpha,
            mass,
            active,
            mu,
            var,
            xhat,
            pre_affine: pre,
        });
        Ok(y)
    }

    /// Inference-mode forward: same per-sample recombination, driven by the
    /// per-domain running statistics. No cache or state update.
    pub fn forward_infer(&self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        self.check_shapes(x, w)?;
        let (b, c, nd) = (x.rows(), self.channels, self.num_domains);
        let mut y = Tensor::zeros(&[b, c]);
        for i in 0..b {
            for j in 0..c {
                let mut acc = 0.0;
                for d in 0..nd {
                    let inv = 1.0 / (self.run_var.at2(d, j) + self.epsilon).sqrt();
                    acc += w.at2(i, d) * (x.at2(i, j) - self.run_mean.at2(d, j)) * inv;
                }
                y.set2(i, j, self.gamma.data()[j] * acc + self.beta.data()[j]);
            }
        }
        Ok(y)
    }

    /// Fold the cached batch statistics into the running averages. The
    /// effective momentum of a domain is scaled by its share of the batch
    /// mass, `momentum * mass_d / b`; a full-mass domain (|D|=1, all w=1)
    /// reduces to the standard BN update.
    pub fn update_running(&mut self) -> Result<()> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("update_running before training forward".into()))?;
        let b = cache.w.rows() as f64;
        for d in 0..self.num_domains {
            if !cache.active[d] {
                continue;
            }
            let m = self.momentum * cache.mass[d] / b;
            for j in 0..self.channels {
                let rm = (1.0 - m) * self.run_mean.at2(d, j) + m * cache.mu.at2(d, j);
                self.run_mean.set2(d, j, rm);
                let rv = (1.0 - m) * self.run_var.at2(d, j) + m * cache.var.at2(d, j);
                self.run_var.set2(d, j, rv);
            }
        }
        Ok(())
    }

    /// Closed-form backward for inputs, assignment weights and the affine
    /// parameters, from the cached training forward.
    pub fn backward(&mut self, dy: &Tensor) -> Result<(Tensor, Tensor)> {
        self.backward_with_b_scale(dy, 1.0)
    }

    /// Backward with the `B_d` cross term scaled; `scale != 1` deliberately
    /// corrupts the closed form and exists only for negative tests of the
    /// gradient checker.
    #[doc(hidden)]
    pub fn backward_with_b_scale(&mut self, dy: &Tensor, b_scale: f64) -> Result<(Tensor, Tensor)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("mda backward before training forward".into()))?;
        let (b, c, nd) = (dy.rows(), self.channels, self.num_domains);
        if dy.rank() != 2 || dy.cols() != c || b != cache.w.rows() {
            return Err(Error::Shape(format!("mda backward dy {:?}", dy.shape())));
        }
        // affine chain: g = dy * gamma, plus affine grads
        let mut g = Tensor::zeros(&[b, c]);
        for i in 0..b {
            for j in 0..c {
                g.set2(i, j, dy.at2(i, j) * self.gamma.data()[j]);
                self.grad_gamma.data_mut()[j] += dy.at2(i, j) * cache.pre_affine.at2(i, j);
                self.grad_beta.data_mut()[j] += dy.at2(i, j);
            }
        }
        // A_d = sum_i alpha_{i,d} g_i ; B_d = sum_i alpha_{i,d} xhat_{i,d} g_i
        let mut a_term = Tensor::zeros(&[nd, c]);
        let mut b_term = Tensor::zeros(&[nd, c]);
        for d in 0..nd {
            if !cache.active[d] {
                continue; // running stats are constants w.r.t. the batch
            }
            for j in 0..c {
                let mut av = 0.0;
                let mut bv = 0.0;
                for i in 0..b {
                    av += cache.alpha.at2(i, d) * g.at2(i, j);
                    bv += cache.alpha.at2(i, d) * cache.xhat[d].at2(i, j) * g.at2(i, j);
                }
                a_term.set2(d, j, av);
                b_term.set2(d, j, bv * b_scale);
            }
        }
        let mut dx = Tensor::zeros(&[b, c]);
        let mut dw = Tensor::zeros(&[b, nd]);
        for i in 0..b {
            for d in 0..nd {
                let mut dwv = 0.0;
                for j in 0..c {
                    let varj = cache.var.at2(d, j);
                    let inv = 1.0 / (varj + self.epsilon).sqrt();
                    let xh = cache.xhat[d].at2(i, j);
                    dx.data_mut()[i * c + j] += cache.w.at2(i, d)
                        * inv
                        * (g.at2(i, j) - a_term.at2(d, j) - xh * b_term.at2(d, j));
                    dwv += xh * (g.at2(i, j) - a_term.at2(d, j))
                        - 0.5 * (xh * xh - varj / (varj + self.epsilon)) * b_term.at2(d, j);
                }
                dw.set2(i, d, dwv);
            }
        }
        if dx.data().iter().chain(dw.data()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mda backward".into()));
        }
        Ok((dx, dw))
    }

    pub fn cache(&self) -> Option<&MdaCache> {
        self.cache.as_ref()
    }

    pub fn zero_grads(&mut self) {
        self.grad_gamma = Tensor::zeros(&[self.channels]);
        self.grad_beta = Tensor::zeros(&[self.channels]);
    }
}
