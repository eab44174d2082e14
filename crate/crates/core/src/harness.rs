//! Experiment orchestration: deterministic configs, the training loop,
//! periodic evaluation, machine-readable CSV metrics, checkpoints, and
//! multi-run comparison.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{BatchIter, Dataset};
use crate::losses::{
    classification_loss, domain_loss, entropy, total_loss, LossReport, LossWeights,
};
use crate::metrics::{accuracy, argmax_row, assignment_histogram, domain_purity, p_star, tie_fraction};
use crate::network::{AssignmentSource, Network, NetworkConfig};
use crate::optim::{Schedule, Sgd};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// predicted assignments, full loss
    Ours,
    /// predicted assignments without the balancing term
    OursLambdab0,
    /// every sample forced onto one shared domain
    Unified,
    /// fixed random one-hot assignment per sample
    RandomAssign,
    /// true domains as assignments (multi-source upper bound)
    Oracle,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "ours" => Ok(Mode::Ours),
            "ours_lambdab0" => Ok(Mode::OursLambdab0),
            "unified" => Ok(Mode::Unified),
            "random_assign" => Ok(Mode::RandomAssign),
            "oracle" => Ok(Mode::Oracle),
            _ => Err(Error::Config(format!("unknown mode {}", s))),
        }
    }

    fn predicted(&self) -> bool {
        matches!(self, Mode::Ours | Mode::OursLambdab0)
    }
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn default_branch_width() -> usize {
    64
}
fn default_tap() -> usize {
    1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_bn_momentum() -> f64 {
    0.1
}
fn default_epsilon() -> f64 {
    1e-5
}
fn default_batch_size() -> usize {
    48
}
fn default_eval_every() -> usize {
    50
}
fn default_mode() -> Mode {
    Mode::Ours
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub eval_dataset: PathBuf,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_branch_width")]
    pub branch_width: usize,
    #[serde(default = "default_tap")]
    pub tap: usize,
    pub k_s: usize,
    pub k_t: usize,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub total_steps: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub domain_label_frac: f64,
    #[serde(default)]
    pub branch_logit_bn: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.schedule.validate()?;
        if self.k_s == 0 || self.k_t == 0 {
            return Err(Error::Config("k_s and k_t must be >= 1".into()));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::Config("batch_size must be even and >= 2".into()));
        }
        if self.total_steps == 0 || self.eval_every == 0 {
            return Err(Error::Config("total_steps and eval_every must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.domain_label_frac) {
            return Err(Error::Config("domain_label_frac must be in [0,1]".into()));
        }
        Ok(())
    }

    fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if self.mode == Mode::OursLambdab0 {
            w.lambda_b = 0.0;
        }
        w
    }

    fn num_domains(&self) -> usize {
        if self.mode == Mode::Unified {
            1
        } else {
            self.k_s + self.k_t
        }
    }
}

/// One evaluation row of the run record.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub step: usize,
    pub lr: f64,
    pub loss: LossReport,
    pub target_acc: f64,
    pub per_target_domain_acc: Vec<f64>,
    pub src_purity: f64,
    pub tgt_purity: f64,
    pub h_fbar_src: f64,
    pub h_fbar_tgt: f64,
}

pub struct RunSummary {
    pub rows: Vec<EvalRow>,
    pub csv_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

impl RunSummary {
    pub fn final_row(&self) -> &EvalRow {
        self.rows.last().expect("at least one eval row")
    }
}

fn infer_dims(train: &Dataset) -> Result<(usize, usize)> {
    let input_dim = train.feature_dim();
    let num_classes = train.num_classes();
    if input_dim == 0 || num_classes == 0 {
        return Err(Error::Config("dataset has no labeled source samples".into()));
    }
    Ok((input_dim, num_classes))
}

fn build_network(cfg: &ExperimentConfig, input_dim: usize, num_classes: usize) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Network::new(
        NetworkConfig {
            input_dim,
            hidden: cfg.hidden.clone(),
            num_classes,
            k_s: cfg.k_s,
            k_t: cfg.k_t,
            branch_width: cfg.branch_width,
            tap: cfg.tap,
            epsilon: cfg.epsilon,
            bn_momentum: cfg.bn_momentum,
            branch_logit_bn: cfg.branch_logit_bn,
            num_domains: cfg.num_domains(),
        },
        &mut rng,
    )
}

fn forced_columns_for(
    cfg: &ExperimentConfig,
    indices: &[usize],
    n_src: usize,
    true_domains: &[Option<usize>],
    salt: u64,
) -> Result<Vec<usize>> {
    match cfg.mode {
        Mode::RandomAssign => Ok(indices
            .iter()
            .enumerate()
            .map(|(row, &idx)| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt ^ (idx as u64).wrapping_mul(0x9e3779b97f4a7c15));
                if row < n_src {
                    rng.gen_range(0..cfg.k_s)
                } else {
                    cfg.k_s + rng.gen_range(0..cfg.k_t)
                }
            })
            .collect()),
        Mode::Oracle => true_domains
            .iter()
            .enumerate()
            .map(|(row, d)| {
                let d = d.ok_or_else(|| {
                    Error::Config("oracle mode needs ground-truth domains in the dataset".into())
                })?;
                Ok(if row < n_src { d } else { cfg.k_s + d })
            })
            .collect(),
        _ => Err(Error::Usage("forced columns only for random_assign/oracle".into())),
    }
}

struct StepOutcome {
    report: LossReport,
}

fn train_step(
    net: &mut Network,
    opt: &mut Sgd,
    cfg: &ExperimentConfig,
    weights: &LossWeights,
    batch: &crate::data::Batch,
    lr: f64,
) -> Result<StepOutcome> {
    net.zero_grads();
    let b = batch.features.rows();
    let n_src = batch.n_src;
    let forced;
    let source = match cfg.mode {
        Mode::Ours | Mode::OursLambdab0 => AssignmentSource::Predicted {
            known: &batch.known_domains,
        },
        Mode::Unified => AssignmentSource::Unified,
        Mode::RandomAssign | Mode::Oracle => {
            forced = forced_columns_for(cfg, &batch.indices, n_src, &batch.true_domains, 0)?;
            AssignmentSource::ForcedColumns(&forced)
        }
    };
    let out = net.forward(&batch.features, n_src, &source, true)?;
    let src_probs = out.class_probs.row_slice(0, n_src);
    let tgt_probs = out.class_probs.row_slice(n_src, b);
    let cls = classification_loss(&src_probs, &batch.source_labels, &tgt_probs, weights)?;
    let k = out.class_probs.cols();
    let mut d_class = Tensor::zeros(&[b, k]);
    for i in 0..n_src {
        for j in 0..k {
            d_class.set2(i, j, cls.d_source.at2(i, j));
        }
    }
    for i in n_src..b {
        for j in 0..k {
            d_class.set2(i, j, cls.d_target.at2(i - n_src, j));
        }
    }
    let report;
    if cfg.mode.predicted() {
        let dom = domain_loss(
            out.src_head_probs.as_ref().unwrap(),
            out.tgt_head_probs.as_ref().unwrap(),
            &batch.known_domains,
            weights,
        )?;
        report = total_loss(&cls, &dom);
        net.backward(&out, &d_class, Some(&dom.d_source), Some(&dom.d_target))?;
    } else {
        report = total_loss(
            &cls,
            &crate::losses::DomLoss {
                supervised: 0.0,
                sample_entropy_src: 0.0,
                sample_entropy_tgt: 0.0,
                balance_src: 0.0,
                balance_tgt: 0.0,
                d_source: Tensor::zeros(&[n_src, cfg.k_s]),
                d_target: Tensor::zeros(&[b - n_src, cfg.k_t]),
            },
        );
        net.backward(&out, &d_class, None, None)?;
    }
    if !report.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {}", report.total)));
    }
    net.update_running_stats()?;
    let mut slot = 0usize;
    let mut step_err = None;
    net.visit_params(&mut |_, param, grad, decay| {
        if let Err(e) = opt.step_param(slot, param, grad, decay, lr) {
            step_err = Some(e);
        }
        slot += 1;
        Ok(())
    })?;
    if let Some(e) = step_err {
        return Err(e);
    }
    Ok(StepOutcome { report })
}

/// Per-domain assignment distributions `[rows, k]` for one pool of
/// dataset samples, produced with the mode's assignment mechanism in
/// inference mode.
fn pool_assignments(
    net: &mut Network,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    indices: &[usize],
    is_source: bool,
) -> Result<Tensor> {
    let k = if is_source { cfg.k_s } else { cfg.k_t };
    let mut out = Tensor::zeros(&[indices.len(), k]);
    for (chunk_no, chunk) in indices.chunks(512).enumerate() {
        let rows: Vec<Vec<f64>> = chunk
            .iter()
            .map(|&i| ds.samples[i].features.clone())
            .collect();
        let x = Tensor::from_rows(&rows)?;
        let base = chunk_no * 512;
        match cfg.mode {
            Mode::Ours | Mode::OursLambdab0 => {
                let n_src = if is_source { chunk.len() } else { 0 };
                let none = vec![None; n_src];
                let fwd = net.forward(&x, n_src, &AssignmentSource::Predicted { known: &none }, false)?;
                let probs = if is_source {
                    fwd.src_head_probs.unwrap()
                } else {
                    fwd.tgt_head_probs.unwrap()
                };
                for i in 0..chunk.len() {
                    for j in 0..k {
                        out.set2(base + i, j, probs.at2(i, j));
                    }
                }
            }
            Mode::Unified => {
                for i in 0..chunk.len() {
                    out.set2(base + i, 0, 1.0);
                }
            }
            Mode::RandomAssign | Mode::Oracle => {
                let trues: Vec<Option<usize>> =
                    chunk.iter().map(|&i| ds.samples[i].domain).collect();
                let n_src = if is_source { chunk.len() } else { 0 };
                let cols = forced_columns_for(cfg, chunk, n_src, &trues, 0)?;
                for (i, &c) in cols.iter().enumerate() {
                    let local = if is_source { c } else { c - cfg.k_s };
                    out.set2(base + i, local, 1.0);
                }
            }
        }
    }
    Ok(out)
}

/// Inference-mode class predictions over a labeled target set.
fn predict_classes(
    net: &mut Network,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    indices: &[usize],
) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(512) {
        let rows: Vec<Vec<f64>> = chunk
            .iter()
            .map(|&i| ds.samples[i].features.clone())
            .collect();
        let x = Tensor::from_rows(&rows)?;
        let forced;
        let source = match cfg.mode {
            Mode::Ours | Mode::OursLambdab0 => AssignmentSource::Predicted { known: &[] },
            Mode::Unified => AssignmentSource::Unified,
            Mode::RandomAssign | Mode::Oracle => {
                let trues: Vec<Option<usize>> =
                    chunk.iter().map(|&i| ds.samples[i].domain).collect();
                forced = forced_columns_for(cfg, chunk, 0, &trues, 0)?;
                AssignmentSource::ForcedColumns(&forced)
            }
        };
        let fwd = net.forward(&x, 0, &source, false)?;
        for i in 0..chunk.len() {
            preds.push(argmax_row(fwd.class_probs.row(i)));
        }
    }
    Ok(preds)
}

fn purity_of(assignments: &Tensor, trues: &[Option<usize>]) -> f64 {
    let pairs: Vec<(usize, usize)> = trues
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.map(|t| (argmax_row(assignments.row(i)), t)))
        .collect();
    if pairs.is_empty() {
        return f64::NAN;
    }
    let (a, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    domain_purity(&a, &t).unwrap_or(f64::NAN)
}

fn mean_row_entropy_of_mean(assignments: &Tensor) -> f64 {
    let (rows, k) = (assignments.rows(), assignments.cols());
    if rows == 0 {
        return f64::NAN;
    }
    let mut mean = vec![0.0; k];
    for i in 0..rows {
        for j in 0..k {
            mean[j] += assignments.at2(i, j) / rows as f64;
        }
    }
    entropy(&mean).unwrap_or(f64::NAN)
}

/// Full evaluation pass: target accuracy (overall and per true target
/// domain), assignment purity on both pools, and the entropy of the
/// batch-averaged assignment distributions.
pub fn evaluate(
    net: &mut Network,
    cfg: &ExperimentConfig,
    train: &Dataset,
    eval: &Dataset,
) -> Result<EvalRow> {
    let eval_idx: Vec<usize> = (0..eval.samples.len()).collect();
    let labels: Vec<usize> = eval
        .samples
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::Config("eval samples need labels".into()))
        })
        .collect::<Result<_>>()?;
    let preds = predict_classes(net, cfg, eval, &eval_idx)?;
    let target_acc = accuracy(&preds, &labels)?;
    let n_true_tgt = eval
        .samples
        .iter()
        .filter_map(|s| s.domain)
        .max()
        .map(|d| d + 1)
        .unwrap_or(0);
    let mut per_domain = Vec::new();
    for d in 0..n_true_tgt {
        let (p, l): (Vec<usize>, Vec<usize>) = preds
            .iter()
            .zip(&labels)
            .zip(eval.samples.iter())
            .filter(|(_, s)| s.domain == Some(d))
            .map(|((p, l), _)| (*p, *l))
            .unzip();
        per_domain.push(if p.is_empty() {
            f64::NAN
        } else {
            accuracy(&p, &l)?
        });
    }
    let src_idx = train.source_indices();
    let tgt_idx = train.target_indices();
    let src_assign = pool_assignments(net, cfg, train, &src_idx, true)?;
    let tgt_assign = pool_assignments(net, cfg, train, &tgt_idx, false)?;
    let src_trues: Vec<Option<usize>> = src_idx.iter().map(|&i| train.samples[i].domain).collect();
    let tgt_trues: Vec<Option<usize>> = tgt_idx.iter().map(|&i| train.samples[i].domain).collect();
    Ok(EvalRow {
        step: 0,
        lr: 0.0,
        loss: LossReport::default(),
        target_acc,
        per_target_domain_acc: per_domain,
        src_purity: purity_of(&src_assign, &src_trues),
        tgt_purity: purity_of(&tgt_assign, &tgt_trues),
        h_fbar_src: mean_row_entropy_of_mean(&src_assign),
        h_fbar_tgt: mean_row_entropy_of_mean(&tgt_assign),
    })
}

fn csv_header(n_target_domains: usize) -> String {
    let mut cols = vec![
        "step",
        "lr",
        "total",
        "cls_supervised",
        "cls_target_entropy",
        "dom_supervised",
        "dom_sample_entropy_src",
        "dom_sample_entropy_tgt",
        "dom_balance_src",
        "dom_balance_tgt",
        "target_acc",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    for d in 0..n_target_domains {
        cols.push(format!("tgt_acc_d{}", d));
    }
    cols.extend(
        ["src_purity", "tgt_purity", "h_fbar_src", "h_fbar_tgt"]
            .into_iter()
            .map(String::from),
    );
    cols.join(",")
}

fn csv_row(row: &EvalRow) -> String {
    let mut cols = vec![
        row.step.to_string(),
        row.lr.to_string(),
        row.loss.total.to_string(),
        row.loss.cls_supervised.to_string(),
        row.loss.cls_target_entropy.to_string(),
        row.loss.dom_supervised.to_string(),
        row.loss.dom_sample_entropy_src.to_string(),
        row.loss.dom_sample_entropy_tgt.to_string(),
        row.loss.dom_balance_src.to_string(),
        row.loss.dom_balance_tgt.to_string(),
        row.target_acc.to_string(),
    ];
    for a in &row.per_target_domain_acc {
        cols.push(a.to_string());
    }
    cols.push(row.src_purity.to_string());
    cols.push(row.tgt_purity.to_string());
    cols.push(row.h_fbar_src.to_string());
    cols.push(row.h_fbar_tgt.to_string());
    cols.join(",")
}

/// Train per the config, writing `metrics.csv` and `checkpoint.mda1`
/// into `out_dir`.
pub fn run_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut train = crate::data::load_jsonl(&cfg.dataset)?;
    let eval = crate::data::load_jsonl(&cfg.eval_dataset)?;
    if cfg.domain_label_frac > 0.0 {
        train.reveal_domain_labels(cfg.domain_label_frac, cfg.seed)?;
    }
    let (input_dim, num_classes) = infer_dims(&train)?;
    let mut net = build_network(cfg, input_dim, num_classes)?;
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut schedule = cfg.schedule;
    schedule.total_steps = cfg.total_steps;
    let weights = cfg.effective_weights();
    let mut iter = BatchIter::new(&train, cfg.seed.wrapping_add(0x5eed))?;
    let mut rows: Vec<EvalRow> = Vec::new();
    for step in 0..cfg.total_steps {
        let lr = schedule.lr_at(step)?;
        let batch = iter.next_batch(cfg.batch_size)?;
        let outcome = train_step(&mut net, &mut opt, cfg, &weights, &batch, lr).map_err(|e| {
            match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("step {}: {}", step, msg)),
                other => other,
            }
        })?;
        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.total_steps {
            let mut row = evaluate(&mut net, cfg, &train, &eval)?;
            row.step = done;
            row.lr = lr;
            row.loss = outcome.report;
            rows.push(row);
        }
    }
    let n_true_tgt = rows.first().map(|r| r.per_target_domain_acc.len()).unwrap_or(0);
    let csv_path = out_dir.join("metrics.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(f, "{}", csv_header(n_true_tgt))?;
    for row in &rows {
        writeln!(f, "{}", csv_row(row))?;
    }
    f.flush()?;
    let checkpoint_path = out_dir.join("checkpoint.mda1");
    checkpoint::save(&mut net, &checkpoint_path)?;
    Ok(RunSummary {
        rows,
        csv_path,
        checkpoint_path,
    })
}

/// Evaluate a saved checkpoint on a dataset pair, writing `eval.csv` and
/// `histogram.csv` into `out_dir`.
pub fn run_eval(
    cfg: &ExperimentConfig,
    checkpoint_path: &Path,
    out_dir: &Path,
) -> Result<EvalRow> {
    std::fs::create_dir_all(out_dir)?;
    let mut train = crate::data::load_jsonl(&cfg.dataset)?;
    let eval = crate::data::load_jsonl(&cfg.eval_dataset)?;
    if cfg.domain_label_frac > 0.0 {
        train.reveal_domain_labels(cfg.domain_label_frac, cfg.seed)?;
    }
    let (input_dim, num_classes) = infer_dims(&train)?;
    let mut net = build_network(cfg, input_dim, num_classes)?;
    checkpoint::load(&mut net, checkpoint_path)?;
    let row = evaluate(&mut net, cfg, &train, &eval)?;
    let csv_path = out_dir.join("eval.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(f, "{}", csv_header(row.per_target_domain_acc.len()))?;
    writeln!(f, "{}", csv_row(&row))?;
    f.flush()?;
    // argmax assignment histograms by true domain, per pool
    let hist_path = out_dir.join("histogram.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&hist_path)?);
    writeln!(f, "pool,true_domain,counts")?;
    for (pool, indices, is_source) in [
        ("source", train.source_indices(), true),
        ("target", train.target_indices(), false),
    ] {
        let assign = pool_assignments(&mut net, cfg, &train, &indices, is_source)?;
        let trues: Vec<usize> = indices
            .iter()
            .filter_map(|&i| train.samples[i].domain)
            .collect();
        if trues.len() != indices.len() {
            continue; // no ground truth recorded for this pool
        }
        let hist = assignment_histogram(&assign, &trues)?;
        for (t, counts) in hist.counts.iter().enumerate() {
            let joined = counts
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(";");
            writeln!(f, "{},{},{}", pool, t, joined)?;
        }
    }
    f.flush()?;
    Ok(row)
}

/// Final-row target accuracies from a list of run-record CSVs.
pub fn final_accuracies(paths: &[PathBuf]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("{}: empty csv", p.display())))?;
        let col = header
            .split(',')
            .position(|c| c == "target_acc")
            .ok_or_else(|| Error::Parse(format!("{}: no target_acc column", p.display())))?;
        let last = lines
            .filter(|l| !l.trim().is_empty())
            .last()
            .ok_or_else(|| Error::Parse(format!("{}: no data rows", p.display())))?;
        let v: f64 = last
            .split(',')
            .nth(col)
            .ok_or_else(|| Error::Parse(format!("{}: short row", p.display())))?
            .parse()
            .map_err(|e| Error::Parse(format!("{}: {}", p.display(), e)))?;
        out.push(v);
    }
    Ok(out)
}

pub struct Comparison {
    pub p_star_a_over_b: f64,
    pub tie_fraction: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

pub fn run_compare(a_csvs: &[PathBuf], b_csvs: &[PathBuf]) -> Result<Comparison> {
    let a = final_accuracies(a_csvs)?;
    let b = final_accuracies(b_csvs)?;
    Ok(Comparison {
        p_star_a_over_b: p_star(&a, &b)?,
        tie_fraction: tie_fraction(&a, &b)?,
        mean_a: a.iter().sum::<f64>() / a.len() as f64,
        mean_b: b.iter().sum::<f64>() / b.len() as f64,
    })
}

/// The frozen reference synthetic benchmark: two source domains at
/// rotations 0 and 60 degrees, one target domain at 30 degrees, three
/// classes in a 16-D feature space (2 informative + 14 noise dims).
pub fn blobs2x1_spec(seed: u64) -> crate::data::SyntheticSpec {
    crate::data::SyntheticSpec {
        num_classes: 3,
        feature_dim: 16,
        source_transforms: vec![
            crate::data::DomainTransform {
                rotation_deg: 0.0,
                translation: vec![],
                scale: 1.0,
            },
            crate::data::DomainTransform {
                rotation_deg: 60.0,
                translation: vec![],
                scale: 1.0,
            },
        ],
        target_transforms: vec![crate::data::DomainTransform {
            rotation_deg: 30.0,
            translation: vec![],
            scale: 1.0,
        }],
        source_mix: vec![0.5, 0.5],
        target_mix: vec![1.0],
        noise_std: 0.15,
        proto_radius: 1.6,
        proto_angle_step_deg: 0.0,
        proto_radius_growth: 1.3,
        proto_base_angle_deg: 15.0,
        n_source: 2000,
        n_target: 2000,
        n_target_eval: 1000,
        seed,
    }
}

/// Collapse-prone variant: the two source rotations nearly coincide.
pub fn blobs_collapse_spec(seed: u64) -> crate::data::SyntheticSpec {
    let mut spec = blobs2x1_spec(seed);
    spec.source_transforms[1].rotation_deg = 10.0;
    spec
}
