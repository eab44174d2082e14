//! Acceptance gate: one test per release criterion, each printing a
//! single pass/fail line. Thresholds are frozen; do not loosen them to
//! make a failing build green.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mda_engine::data::{generate, load_jsonl, save_jsonl};
use mda_engine::gradcheck::run_gradcheck;
use mda_engine::harness::{
    blobs2x1_spec, blobs_collapse_spec, evaluate, run_eval, run_train, ExperimentConfig, Mode,
};
use mda_engine::layers::{softmax_forward, StandardBn};
use mda_engine::losses::{classification_loss, domain_loss, entropy, LossWeights};
use mda_engine::mda::MdaLayer;
use mda_engine::metrics::{p_star, tie_fraction};
use mda_engine::optim::Schedule;
use mda_engine::tensor::Tensor;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {}: {} ({})",
        criterion,
        if pass { "pass" } else { "FAIL" },
        detail
    );
    assert!(pass, "{}: {}", criterion, detail);
}

#[test]
fn criterion_1_gradcheck() {
    let start = Instant::now();
    let rep = run_gradcheck(0, 100).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = rep.pass && rep.max_rel_err <= 1e-4 && secs < 60.0;
    report(
        "1 gradcheck",
        pass,
        &format!("100 trials, max rel err {:.3e}, {:.1}s", rep.max_rel_err, secs),
    );
}

#[test]
fn criterion_2_bn_degeneration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let b = rng.gen_range(2..=16);
        let c = rng.gen_range(1..=8);
        let x = Tensor::rand_uniform(&[b, c], -2.0, 2.0, &mut rng);
        let dy = Tensor::rand_uniform(&[b, c], -1.0, 1.0, &mut rng);
        let gamma = Tensor::rand_uniform(&[c], 0.5, 1.5, &mut rng);
        let beta = Tensor::rand_uniform(&[c], -0.5, 0.5, &mut rng);

        let mut mda = MdaLayer::new(1, c, 1e-5, 0.1);
        mda.gamma = gamma.clone();
        mda.beta = beta.clone();
        let mut bn = StandardBn::new(c, 1e-5, 0.1);
        bn.gamma = gamma;
        bn.beta = beta;

        let ones = Tensor::full(&[b, 1], 1.0);
        let y_mda = mda.forward_train(&x, &ones).unwrap();
        let y_bn = bn.forward_train(&x).unwrap();
        let (dx_mda, _dw) = mda.backward(&dy).unwrap();
        let dx_bn = bn.backward(&dy).unwrap();

        for (a, e) in [
            (&y_mda, &y_bn),
            (&dx_mda, &dx_bn),
            (&mda.grad_gamma, &bn.grad_gamma),
            (&mda.grad_beta, &bn.grad_beta),
        ] {
            for (av, ev) in a.data().iter().zip(e.data()) {
                worst = worst.max((av - ev).abs());
            }
        }
    }
    report(
        "2 bn degeneration",
        worst <= 1e-10,
        &format!("50 cases, max abs diff {:.3e}", worst),
    );
}

fn direct_entropy(p: &[f64]) -> f64 {
    p.iter()
        .map(|&v| if v > 0.0 { -v * v.max(1e-12).ln() } else { 0.0 })
        .sum()
}

#[test]
fn criterion_3_loss_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(2..=12);
        let m = rng.gen_range(2..=12);
        let k = rng.gen_range(2..=5);
        let ks = rng.gen_range(2..=4);
        let kt = rng.gen_range(1..=3);
        let w = LossWeights {
            lambda_c: rng.gen_range(0.0..1.0),
            lambda_e: rng.gen_range(0.0..1.0),
            lambda_b: rng.gen_range(0.0..1.0),
            lambda_d: rng.gen_range(0.0..1.0),
        };
        let probs = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let logits = Tensor::rand_uniform(&[rows, cols], -3.0, 3.0, rng);
            softmax_forward(&logits).unwrap()
        };
        let src = probs(n, k, &mut rng);
        let tgt = probs(m, k, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let cls = classification_loss(&src, &labels, &tgt, &w).unwrap();

        // independent term-by-term evaluation of the classification loss
        let mut sup = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            sup -= src.at2(i, y).max(1e-12).ln();
        }
        sup /= n as f64;
        let mut tent = 0.0;
        for i in 0..m {
            tent += direct_entropy(tgt.row(i));
        }
        tent *= w.lambda_c / m as f64;
        worst = worst.max((cls.supervised - sup).abs());
        worst = worst.max((cls.target_entropy - tent).abs());

        let fs = probs(n, ks, &mut rng);
        let ft = probs(m, kt, &mut rng);
        let known: Vec<Option<usize>> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.4) {
                    Some(rng.gen_range(0..ks))
                } else {
                    None
                }
            })
            .collect();
        let dom = domain_loss(&fs, &ft, &known, &w).unwrap();

        // independent term-by-term evaluation of the domain loss
        let known_rows: Vec<(usize, usize)> = known
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|d| (i, d)))
            .collect();
        let mut dsup = 0.0;
        if !known_rows.is_empty() {
            for &(i, d) in &known_rows {
                dsup -= fs.at2(i, d).max(1e-12).ln();
            }
            dsup *= w.lambda_d / known_rows.len() as f64;
        }
        let unknown: Vec<usize> =
            (0..n).filter(|i| known[*i].is_none()).collect();
        let mut es = 0.0;
        if !unknown.is_empty() {
            for &i in &unknown {
                es += direct_entropy(fs.row(i));
            }
            es *= w.lambda_e / unknown.len() as f64;
        }
        let mut et = 0.0;
        for i in 0..m {
            et += direct_entropy(ft.row(i));
        }
        et *= w.lambda_e / m as f64;
        let mean_of = |p: &Tensor| {
            let mut mean = vec![0.0; p.cols()];
            for i in 0..p.rows() {
                for j in 0..p.cols() {
                    mean[j] += p.at2(i, j) / p.rows() as f64;
                }
            }
            mean
        };
        let bs = -w.lambda_b * direct_entropy(&mean_of(&fs));
        let bt = -w.lambda_b * direct_entropy(&mean_of(&ft));

        worst = worst.max((dom.supervised - dsup).abs());
        worst = worst.max((dom.sample_entropy_src - es).abs());
        worst = worst.max((dom.sample_entropy_tgt - et).abs());
        worst = worst.max((dom.balance_src - bs).abs());
        worst = worst.max((dom.balance_tgt - bt).abs());
    }

    let mut unit = 0.0f64;
    unit = unit.max(entropy(&[1.0, 0.0, 0.0]).unwrap().abs());
    for k in 2..=8 {
        let uniform = vec![1.0 / k as f64; k];
        unit = unit.max((entropy(&uniform).unwrap() - (k as f64).ln()).abs());
    }
    let pass = worst <= 1e-12 && unit <= 1e-12;
    report(
        "3 loss arithmetic",
        pass,
        &format!("20 batches, max diff {:.3e}, unit diff {:.3e}", worst, unit),
    );
}

#[test]
fn criterion_4_schedule() {
    let sched = Schedule {
        l0: 0.01,
        gamma: 10.0,
        beta: 0.75,
        total_steps: 1000,
        ..Schedule::default()
    };
    let mut worst = 0.0f64;
    for (step, p) in [(0usize, 0.0f64), (500, 0.5), (1000, 1.0)] {
        let expect = 0.01 / (1.0 + 10.0 * p).powf(0.75);
        worst = worst.max((sched.lr_at(step).unwrap() - expect).abs());
    }
    report(
        "4 schedule",
        worst <= 1e-12,
        &format!("closed form at p in {{0,0.5,1}}, max diff {:.3e}", worst),
    );
}

#[test]
fn criterion_5_p_star() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = true;
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let m = rng.gen_range(1..=8);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut wins = 0usize;
        let mut ties = 0usize;
        for &x in &a {
            for &y in &b {
                if x > y {
                    wins += 1;
                } else if x == y {
                    ties += 1;
                }
            }
        }
        let pairs = (n * m) as f64;
        ok &= p_star(&a, &b).unwrap() == wins as f64 / pairs;
        ok &= tie_fraction(&a, &b).unwrap() == ties as f64 / pairs;
        let partition =
            p_star(&a, &b).unwrap() + p_star(&b, &a).unwrap() + tie_fraction(&a, &b).unwrap();
        ok &= partition == 1.0;
    }
    report("5 p_star", ok, "100 random pairs vs brute force, partition exact");
}

/// The frozen benchmark training configuration used by the end-to-end
/// criteria. Calibrated once, then fixed.
fn bench_config(train: &Path, eval: &Path, mode: Mode, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: train.to_path_buf(),
        eval_dataset: eval.to_path_buf(),
        hidden: vec![32, 32],
        branch_width: 128,
        tap: 0,
        k_s: 2,
        k_t: 1,
        weights: LossWeights {
            lambda_c: 0.7,
            lambda_e: 0.2,
            lambda_b: 0.4,
            lambda_d: 0.5,
        },
        schedule: Schedule {
            l0: 0.03,
            ..Schedule::default()
        },
        momentum: 0.9,
        weight_decay: 5e-4,
        bn_momentum: 0.1,
        epsilon: 1e-5,
        batch_size: 48,
        total_steps: 2000,
        eval_every: 500,
        seed,
        mode,
        domain_label_frac: 0.0,
        branch_logit_bn: true,
    }
}

fn write_benchmark(dir: &Path, collapse: bool) -> (PathBuf, PathBuf) {
    let spec = if collapse {
        blobs_collapse_spec(7)
    } else {
        blobs2x1_spec(7)
    };
    let (train, eval) = generate(&spec).unwrap();
    let train_path = dir.join("train.jsonl");
    let eval_path = dir.join("eval.jsonl");
    save_jsonl(&train, &train_path).unwrap();
    save_jsonl(&eval, &eval_path).unwrap();
    (train_path, eval_path)
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[test]
fn criterion_6_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (train, eval) = write_benchmark(dir.path(), false);
    let mut means_acc = Vec::new();
    let mut ours_purity = 0.0;
    let mut max_arm_secs = 0.0f64;
    for mode in [Mode::Ours, Mode::RandomAssign, Mode::Unified] {
        let start = Instant::now();
        let mut acc = 0.0;
        let mut purity = 0.0;
        for &seed in &SEEDS {
            let cfg = bench_config(&train, &eval, mode, seed);
            let out = dir.path().join(format!("{:?}-{}", mode, seed));
            let summary = run_train(&cfg, &out).unwrap();
            acc += summary.final_row().target_acc / SEEDS.len() as f64;
            purity += summary.final_row().src_purity / SEEDS.len() as f64;
        }
        if mode == Mode::Ours {
            ours_purity = purity;
        }
        means_acc.push(acc);
        max_arm_secs = max_arm_secs.max(start.elapsed().as_secs_f64());
    }
    let (ours, random, unified) = (means_acc[0], means_acc[1], means_acc[2]);
    let pass = ours >= random
        && ours >= unified - 0.02
        && ours_purity >= 0.90
        && max_arm_secs < 600.0;
    report(
        "6 end-to-end",
        pass,
        &format!(
            "acc ours {:.4} random {:.4} unified {:.4}, ours purity {:.4}, slowest arm {:.0}s",
            ours, random, unified, ours_purity, max_arm_secs
        ),
    );
}

#[test]
fn criterion_7_balance_effect() {
    let dir = tempfile::tempdir().unwrap();
    let (train, eval) = write_benchmark(dir.path(), true);
    let mut means = Vec::new();
    for lambda_b in [0.1, 0.0] {
        let mut h = 0.0;
        for &seed in &SEEDS {
            let mut cfg = bench_config(&train, &eval, Mode::Ours, seed);
            cfg.weights.lambda_b = lambda_b;
            let out = dir.path().join(format!("lb{}-{}", lambda_b, seed));
            let summary = run_train(&cfg, &out).unwrap();
            h += summary.final_row().h_fbar_src / SEEDS.len() as f64;
        }
        means.push(h);
    }
    report(
        "7 balance effect",
        means[0] > means[1],
        &format!("H(fbar_src): lambda_b=0.1 {:.4} vs lambda_b=0 {:.4}", means[0], means[1]),
    );
}

#[test]
fn criterion_8_partial_supervision() {
    let dir = tempfile::tempdir().unwrap();
    let (train, eval) = write_benchmark(dir.path(), false);
    let mut means = Vec::new();
    for frac in [0.0, 0.05, 1.0] {
        let mut purity = 0.0;
        for &seed in &SEEDS {
            let mut cfg = bench_config(&train, &eval, Mode::Ours, seed);
            cfg.domain_label_frac = frac;
            let out = dir.path().join(format!("frac{}-{}", frac, seed));
            let summary = run_train(&cfg, &out).unwrap();
            purity += summary.final_row().src_purity / SEEDS.len() as f64;
        }
        means.push(purity);
    }
    let pass = means[0] <= means[1] && means[1] <= means[2];
    report(
        "8 partial supervision",
        pass,
        &format!("purity at frac 0/0.05/1: {:.4} {:.4} {:.4}", means[0], means[1], means[2]),
    );
}

#[test]
fn criterion_9_determinism_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let (train, eval) = write_benchmark(dir.path(), false);
    let mut cfg = bench_config(&train, &eval, Mode::Ours, 1);
    cfg.total_steps = 200;
    cfg.eval_every = 100;
    let a = run_train(&cfg, &dir.path().join("a")).unwrap();
    let b = run_train(&cfg, &dir.path().join("b")).unwrap();
    let csv_identical =
        std::fs::read(&a.csv_path).unwrap() == std::fs::read(&b.csv_path).unwrap();
    let ckpt_identical =
        std::fs::read(&a.checkpoint_path).unwrap() == std::fs::read(&b.checkpoint_path).unwrap();

    // load the checkpoint into a fresh network, save again, byte compare
    let train_ds = load_jsonl(&train).unwrap();
    let eval_ds = load_jsonl(&eval).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut net = mda_engine::network::Network::new(
        mda_engine::network::NetworkConfig {
            input_dim: 16,
            hidden: cfg.hidden.clone(),
            num_classes: 3,
            k_s: 2,
            k_t: 1,
            branch_width: cfg.branch_width,
            tap: cfg.tap,
            epsilon: cfg.epsilon,
            bn_momentum: cfg.bn_momentum,
            branch_logit_bn: cfg.branch_logit_bn,
            num_domains: 3,
        },
        &mut rng,
    )
    .unwrap();
    mda_engine::checkpoint::load(&mut net, &a.checkpoint_path).unwrap();
    let resaved = dir.path().join("resaved.mda1");
    mda_engine::checkpoint::save(&mut net, &resaved).unwrap();
    let roundtrip_identical =
        std::fs::read(&a.checkpoint_path).unwrap() == std::fs::read(&resaved).unwrap();

    // evaluating the loaded network reproduces the final training row
    let row = evaluate(&mut net, &cfg, &train_ds, &eval_ds).unwrap();
    let last = a.final_row();
    let eval_matches = (row.target_acc - last.target_acc).abs() <= 1e-9
        && (row.src_purity - last.src_purity).abs() <= 1e-9;

    // and cmd_eval's harness path agrees too
    let ev = run_eval(&cfg, &a.checkpoint_path, &dir.path().join("ev")).unwrap();
    let cmd_eval_matches = (ev.target_acc - last.target_acc).abs() <= 1e-9;

    let pass = csv_identical
        && ckpt_identical
        && roundtrip_identical
        && eval_matches
        && cmd_eval_matches;
    report(
        "9 determinism",
        pass,
        &format!(
            "csv {} checkpoint {} roundtrip {} eval {} cmd_eval {}",
            csv_identical, ckpt_identical, roundtrip_identical, eval_matches, cmd_eval_matches
        ),
    );
}
