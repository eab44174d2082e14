//! The composite training objective and its gradient seeds.
//!
//! Classification: average log-loss on labeled source samples plus an
//! entropy regularizer on the target classification distributions.
//! Domain: supervised log-loss on the known-domain subset, per-sample
//! entropy minimization on the rest, and a balancing term maximizing the
//! entropy of the batch-averaged assignment distribution per pool.
//!
//! All functions are pure: they take probability rows and return scalar
//! components together with dL/dprob seeds; the caller chains those
//! through softmax.

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Probabilities are clamped here before logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_e: f64,
    pub lambda_b: f64,
    pub lambda_d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_c: 0.2,
            lambda_e: 0.2,
            lambda_b: 0.1,
            lambda_d: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_c", self.lambda_c),
            ("lambda_e", self.lambda_e),
            ("lambda_b", self.lambda_b),
            ("lambda_d", self.lambda_d),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{} must be finite and >= 0, got {}", name, v)));
            }
        }
        Ok(())
    }
}

/// Term-by-term decomposition of the total objective. `total` is always
/// the signed sum of the components.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossReport {
    pub total: f64,
    pub cls_supervised: f64,
    pub cls_target_entropy: f64,
    pub dom_supervised: f64,
    pub dom_sample_entropy_src: f64,
    pub dom_sample_entropy_tgt: f64,
    pub dom_balance_src: f64,
    pub dom_balance_tgt: f64,
}

impl LossReport {
    pub fn component_sum(&self) -> f64 {
        self.cls_supervised
            + self.cls_target_entropy
            + self.dom_supervised
            + self.dom_sample_entropy_src
            + self.dom_sample_entropy_tgt
            + self.dom_balance_src
            + self.dom_balance_tgt
    }
}

fn check_simplex(p: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for &v in p {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("probability {} invalid", v)));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("probabilities sum to {}", sum)));
    }
    Ok(())
}

/// Shannon entropy with natural log, `0 log 0 := 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_simplex(p)?;
    Ok(p.iter()
        .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
        .sum())
}

/// dH/dp_j = -(ln p_j + 1), with the log clamp.
fn entropy_grad(p: &[f64], out: &mut [f64], scale: f64) {
    for (o, &v) in out.iter_mut().zip(p) {
        *o += scale * -(v.max(LOG_CLAMP).ln() + 1.0);
    }
}

pub struct ClsLoss {
    pub supervised: f64,
    pub target_entropy: f64,
    pub d_source: Tensor,
    pub d_target: Tensor,
    /// rows where the true-label probability hit the log clamp
    pub clamp_warnings: usize,
}

/// Classification loss over one mini-batch:
/// `-(1/n) sum log p_src[y] + (lambda_C/m) sum H(p_tgt)`.
pub fn classification_loss(
    source_probs: &Tensor,
    source_labels: &[usize],
    target_probs: &Tensor,
    weights: &LossWeights,
) -> Result<ClsLoss> {
    let n = source_probs.rows();
    let m = target_probs.rows();
    if n != source_labels.len() {
        return Err(Error::Shape(format!(
            "{} source rows vs {} labels",
            n,
            source_labels.len()
        )));
    }
    let k = source_probs.cols();
    let mut d_source = Tensor::zeros(source_probs.shape());
    let mut d_target = Tensor::zeros(target_probs.shape());
    let mut supervised = 0.0;
    let mut clamp_warnings = 0;
    for (i, &y) in source_labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Usage(format!("label {} out of range {}", y, k)));
        }
        check_simplex(source_probs.row(i))?;
        let p = source_probs.at2(i, y);
        if p < LOG_CLAMP {
            clamp_warnings += 1;
        }
        let pc = p.max(LOG_CLAMP);
        supervised += -pc.ln() / n as f64;
        d_source.set2(i, y, -1.0 / (pc * n as f64));
    }
    let mut target_entropy = 0.0;
    if m > 0 && weights.lambda_c > 0.0 {
        let scale = weights.lambda_c / m as f64;
        for i in 0..m {
            target_entropy += scale * entropy(target_probs.row(i))?;
            let (lo, hi) = (i * target_probs.cols(), (i + 1) * target_probs.cols());
            entropy_grad(target_probs.row(i), &mut d_target.data_mut()[lo..hi], scale);
        }
    }
    Ok(ClsLoss {
        supervised,
        target_entropy,
        d_source,
        d_target,
        clamp_warnings,
    })
}

pub struct DomLoss {
    pub supervised: f64,
    pub sample_entropy_src: f64,
    pub sample_entropy_tgt: f64,
    pub balance_src: f64,
    pub balance_tgt: f64,
    pub d_source: Tensor,
    pub d_target: Tensor,
}

/// Domain loss over one mini-batch. Known labels index source domains;
/// terms whose subset is empty are omitted. The averaged distributions
/// f-bar are per-pool arithmetic means over the batch's rows, and the
/// balance terms enter with a negative sign (entropy maximization).
pub fn domain_loss(
    src_assign_probs: &Tensor,
    tgt_assign_probs: &Tensor,
    known_src_labels: &[Option<usize>],
    weights: &LossWeights,
) -> Result<DomLoss> {
    let n = src_assign_probs.rows();
    let m = tgt_assign_probs.rows();
    if n != known_src_labels.len() {
        return Err(Error::Shape(format!(
            "{} source rows vs {} known labels",
            n,
            known_src_labels.len()
        )));
    }
    for i in 0..n {
        check_simplex(src_assign_probs.row(i))?;
    }
    for i in 0..m {
        check_simplex(tgt_assign_probs.row(i))?;
    }
    let ks = src_assign_probs.cols();
    let mut d_source = Tensor::zeros(src_assign_probs.shape());
    let mut d_target = Tensor::zeros(tgt_assign_probs.shape());

    let known: Vec<(usize, usize)> = known_src_labels
        .iter()
        .enumerate()
        .filter_map(|(i, k)| k.map(|d| (i, d)))
        .collect();
    let unknown: Vec<usize> = known_src_labels
        .iter()
        .enumerate()
        .filter_map(|(i, k)| if k.is_none() { Some(i) } else { None })
        .collect();

    let mut supervised = 0.0;
    if !known.is_empty() && weights.lambda_d > 0.0 {
        let scale = weights.lambda_d / known.len() as f64;
        for &(i, d) in &known {
            if d >= ks {
                return Err(Error::Usage(format!("known domain {} out of range {}", d, ks)));
            }
            let p = src_assign_probs.at2(i, d).max(LOG_CLAMP);
            supervised += -scale * p.ln();
            let v = d_source.at2(i, d) - scale / p;
            d_source.set2(i, d, v);
        }
    }

    let mut sample_entropy_src = 0.0;
    if !unknown.is_empty() && weights.lambda_e > 0.0 {
        let scale = weights.lambda_e / unknown.len() as f64;
        for &i in &unknown {
            sample_entropy_src += scale * entropy(src_assign_probs.row(i))?;
            let (lo, hi) = (i * ks, (i + 1) * ks);
            entropy_grad(src_assign_probs.row(i), &mut d_source.data_mut()[lo..hi], scale);
        }
    }

    let mut sample_entropy_tgt = 0.0;
    if m > 0 && weights.lambda_e > 0.0 {
        let kt = tgt_assign_probs.cols();
        let scale = weights.lambda_e / m as f64;
        for i in 0..m {
            sample_entropy_tgt += scale * entropy(tgt_assign_probs.row(i))?;
            let (lo, hi) = (i * kt, (i + 1) * kt);
            entropy_grad(tgt_assign_probs.row(i), &mut d_target.data_mut()[lo..hi], scale);
        }
    }

    let mut balance_src = 0.0;
    let mut balance_tgt = 0.0;
    if weights.lambda_b > 0.0 {
        for (probs, grad, acc) in [
            (src_assign_probs, &mut d_source, &mut balance_src),
            (tgt_assign_probs, &mut d_target, &mut balance_tgt),
        ] {
            let rows = probs.rows();
            if rows == 0 {
                continue;
            }
            let k = probs.cols();
            let mut mean = vec![0.0; k];
            for i in 0..rows {
                for j in 0..k {
                    mean[j] += probs.at2(i, j) / rows as f64;
                }
            }
            *acc = -weights.lambda_b * entropy(&mean)?;
            // d(-lb H(fbar))/dp_{i,j} = lb (ln fbar_j + 1) / rows
            for j in 0..k {
                let gj = weights.lambda_b * (mean[j].max(LOG_CLAMP).ln() + 1.0) / rows as f64;
                for i in 0..rows {
                    let v = grad.at2(i, j) + gj;
                    grad.set2(i, j, v);
                }
            }
        }
    }

    Ok(DomLoss {
        supervised,
        sample_entropy_src,
        sample_entropy_tgt,
        balance_src,
        balance_tgt,
        d_source,
        d_target,
    })
}

/// Assemble the full report from the two sub-losses.
pub fn total_loss(cls: &ClsLoss, dom: &DomLoss) -> LossReport {
    let mut r = LossReport {
        cls_supervised: cls.supervised,
        cls_target_entropy: cls.target_entropy,
        dom_supervised: dom.supervised,
        dom_sample_entropy_src: dom.sample_entropy_src,
        dom_sample_entropy_tgt: dom.sample_entropy_tgt,
        dom_balance_src: dom.balance_src,
        dom_balance_tgt: dom.balance_tgt,
        total: 0.0,
    };
    r.total = r.component_sum();
    r
}
