//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Set `AKD_ACCEPTANCE_OUT=<dir>` to keep the pipeline runs.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use akd_core::autodiff::{grad_check, Tape, Tensor, Var};
use akd_core::corpus::{MiniBatch, SentencePair, RESERVED};
use akd_core::distillation::{
    adaptive_kd_loss, adaptive_temperature, combined_loss, contribution_weights, kd_loss, lambda2_schedule,
    softmax_scaled, AnnealShape, DistillConfig, TemperatureMode, WeightSmoother, WeightTrace,
};
use akd_core::model::{smoothed_nll, Mode, ModelConfig, Seq2SeqModel};
use akd_core::training::corpus_bleu;
use akd_harness::config::ExperimentConfig;
use akd_harness::data::load_data_dir;
use akd_harness::pipeline::{distill_stage, run_dir, run_pipeline, Layout};
use akd_harness::results::{median, transfer_name, ResultsTable, INDIVIDUAL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, id: u32, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let result = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let took = start.elapsed();
        let result = match (result, budget) {
            (Ok(_), Some(b)) if took > b => Err(format!("took {took:.1?}, budget {b:?}")),
            (r, _) => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.clone()),
            Err(e) => {
                self.failures += 1;
                ("FAIL", e.clone())
            }
        };
        println!("[{tag}] criterion {id:>2}: {name} ({:.2}s) {detail}", took.as_secs_f64());
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_pairs(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<SentencePair> {
    let b = rng.gen_range(1..=3);
    (0..b)
        .map(|_| {
            let s = rng.gen_range(1..=max_len);
            let t = rng.gen_range(1..=max_len);
            SentencePair {
                src: (0..s).map(|_| rng.gen_range(RESERVED.len()..vocab)).collect(),
                tgt: (0..t).map(|_| rng.gen_range(RESERVED.len()..vocab)).collect(),
            }
        })
        .collect()
}

fn batch_of(pairs: &[SentencePair]) -> MiniBatch {
    let refs: Vec<&SentencePair> = pairs.iter().collect();
    MiniBatch::from_pairs(&refs, (0..pairs.len()).collect()).unwrap()
}

fn random_probs(rows: usize, v: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = Vec::with_capacity(rows * v);
    for _ in 0..rows {
        let logits: Vec<f64> = (0..v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        data.extend(softmax_scaled(&logits, 1.0));
    }
    Tensor::new(vec![rows, v], data).unwrap()
}

fn random_simplex(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn value(tape: &Tape, v: Var) -> f64 {
    tape.value(v).item()
}

fn gradient_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut check = |name: &str, f: &dyn Fn(&mut Tape, &[Var]) -> akd_core::Result<Var>, params: &[Tensor], tol: f64| -> Result<(), String> {
        let r = ok(grad_check(f, params, 1e-5, 48, 5))?;
        ensure!(r.max_rel_error < tol, "{name}: relative error {:.2e} at {:?}", r.max_rel_error, r.worst);
        worst = worst.max(r.max_rel_error);
        count += 1;
        Ok(())
    };

    let a = random_tensor(&[3, 4], &mut rng);
    let b = random_tensor(&[4, 5], &mut rng);
    let p35 = random_tensor(&[3, 5], &mut rng);
    check("matmul", &|t, v| {
        let c = t.matmul(v[0], v[1], false)?;
        let p = t.constant(p35.clone());
        t.dot(c, p)
    }, &[a.clone(), b], 1e-4)?;

    let ba = random_tensor(&[2, 3, 4], &mut rng);
    let bb = random_tensor(&[2, 5, 4], &mut rng);
    let p235 = random_tensor(&[2, 3, 5], &mut rng);
    check("batched matmul (transposed)", &|t, v| {
        let c = t.matmul(v[0], v[1], true)?;
        let p = t.constant(p235.clone());
        t.dot(c, p)
    }, &[ba, bb], 1e-4)?;

    let x = random_tensor(&[3, 5], &mut rng);
    let y = random_tensor(&[3, 5], &mut rng);
    let bias = random_tensor(&[5], &mut rng);
    let probe = random_tensor(&[3, 5], &mut rng);
    let pr = &probe;
    check("add", &|t, v| {
        let s = t.add(v[0], v[1])?;
        let p = t.constant(pr.clone());
        t.dot(s, p)
    }, &[x.clone(), y.clone()], 1e-4)?;
    check("mul", &|t, v| {
        let s = t.mul(v[0], v[1])?;
        let p = t.constant(pr.clone());
        t.dot(s, p)
    }, &[x.clone(), y.clone()], 1e-4)?;
    check("add_bias", &|t, v| {
        let s = t.add_bias(v[0], v[1])?;
        let p = t.constant(pr.clone());
        t.dot(s, p)
    }, &[x.clone(), bias.clone()], 1e-4)?;
    check("scale", &|t, v| {
        let s = t.scale(v[0], -1.7);
        let p = t.constant(pr.clone());
        t.dot(s, p)
    }, &[x.clone()], 1e-4)?;
    let away_from_kink = Tensor::new(
        vec![3, 5],
        x.data().iter().map(|v| if v.abs() < 0.05 { v + 0.2 } else { *v }).collect(),
    )
    .unwrap();
    check("relu", &|t, v| {
        let s = t.relu(v[0]);
        let p = t.constant(pr.clone());
        t.dot(s, p)
    }, &[away_from_kink], 1e-4)?;
    for axis in [0, 1] {
        check("softmax", &|t, v| {
            let s = t.softmax(v[0], axis)?;
            let p = t.constant(pr.clone());
            t.dot(s, p)
        }, &[x.clone()], 1e-4)?;
        check("log_softmax", &|t, v| {
            let s = t.log_softmax(v[0], axis)?;
            let p = t.constant(pr.clone());
            t.dot(s, p)
        }, &[x.clone()], 1e-4)?;
    }
    let gamma = random_tensor(&[5], &mut rng);
    let beta = random_tensor(&[5], &mut rng);
    check("layer_norm", &|t, v| {
        let s = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
        let p = t.constant(pr.clone());
        t.dot(s, p)
    }, &[x.clone(), gamma, beta], 1e-4)?;
    let table = random_tensor(&[6, 3], &mut rng);
    let p223 = random_tensor(&[2, 2, 3], &mut rng);
    check("embedding", &|t, v| {
        let e = t.embedding(v[0], &[1, 4, 1, 5], &[2, 2])?;
        let p = t.constant(p223.clone());
        t.dot(e, p)
    }, &[table], 1e-4)?;
    let p513 = random_tensor(&[5, 1, 3], &mut rng);
    check("reshape + permute", &|t, v| {
        let r = t.reshape(v[0], &[3, 5, 1])?;
        let pm = t.permute(r, &[1, 2, 0])?;
        let p = t.constant(p513.clone());
        t.dot(pm, p)
    }, &[x.clone()], 1e-4)?;
    check("sum + dot", &|t, v| {
        let d = t.dot(v[0], v[1])?;
        let s = t.sum(v[0]);
        let sq = t.mul(d, s)?;
        Ok(sq)
    }, &[x.clone(), y.clone()], 1e-4)?;
    check("dropout", &|t, v| {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let d = t.dropout(v[0], 0.3, &mut r);
        let p = t.constant(pr.clone());
        t.dot(d, p)
    }, &[x.clone()], 1e-4)?;

    let v = 7;
    for trial in 0..5 {
        let pairs = random_pairs(&mut rng, v, 4);
        let batch = batch_of(&pairs);
        let rows = batch.batch_size * batch.tgt_len;
        let logits = random_tensor(&[batch.batch_size, batch.tgt_len, v], &mut rng);
        let teachers: Vec<Tensor> = (0..3).map(|_| random_probs(rows, v, &mut rng)).collect();
        let alpha = random_simplex(3, &mut rng);
        let eps = if trial % 2 == 0 { 0.0 } else { 0.1 };
        let bt = &batch;
        check("label-smoothed NLL", &|t, vs| smoothed_nll(t, vs[0], bt, eps), &[logits.clone()], 1e-4)?;
        check("KD loss", &|t, vs| kd_loss(t, vs[0], &teachers[0], bt), &[logits.clone()], 1e-4)?;
        check("adaptive KD loss", &|t, vs| adaptive_kd_loss(t, vs[0], &teachers, &alpha, bt), &[logits.clone()], 1e-4)?;
        check("combined loss", &|t, vs| {
            let nll = smoothed_nll(t, vs[0], bt, eps)?;
            let kd = adaptive_kd_loss(t, vs[0], &teachers, &alpha, bt)?;
            combined_loss(t, nll, kd, 0.5, 1.75)
        }, &[logits.clone()], 1e-4)?;
    }

    let cfg = ModelConfig {
        hidden_size: 8,
        ffn_size: 16,
        num_layers: 2,
        num_heads: 2,
        dropout_rate: 0.0,
        label_smoothing: 0.1,
        max_positions: 16,
        vocab_size: 11,
    };
    let model = ok(Seq2SeqModel::init(cfg.clone(), 7))?;
    let pairs: Vec<SentencePair> = loop {
        let p = random_pairs(&mut rng, cfg.vocab_size, 3);
        if p.len() == 2 {
            break p;
        }
    };
    let batch = batch_of(&pairs);
    let rows = batch.batch_size * batch.tgt_len;
    let teachers: Vec<Tensor> = (0..2).map(|_| random_probs(rows, cfg.vocab_size, &mut rng)).collect();
    let bt = &batch;
    let m = &model;
    let full_nll = |t: &mut Tape, vs: &[Var]| {
        let logits = m.forward(t, vs, bt, Mode::Eval)?;
        smoothed_nll(t, logits, bt, 0.1)
    };
    let r = ok(grad_check(full_nll, model.params(), 1e-4, usize::MAX, 11))?;
    ensure!(
        r.max_rel_error < 1e-3,
        "full model loss: relative error {:.2e} at {:?} over {} coordinates",
        r.max_rel_error,
        r.worst,
        r.coordinates_checked
    );
    let full_distill = |t: &mut Tape, vs: &[Var]| {
        let logits = m.forward(t, vs, bt, Mode::Eval)?;
        let nll = smoothed_nll(t, logits, bt, 0.1)?;
        let kd = adaptive_kd_loss(t, logits, &teachers, &[0.3, 0.7], bt)?;
        combined_loss(t, nll, kd, 0.5, 1.75)
    };
    let r2 = ok(grad_check(full_distill, model.params(), 1e-4, 4, 12))?;
    Ok(format!(
        "{count} checks, worst {worst:.1e} (<1e-4); full model {:.1e} over {} coordinates (<1e-3); \
         distillation through the model {:.1e} (not gated)",
        r.max_rel_error, r.coordinates_checked, r2.max_rel_error
    ))
}

fn kd_nll_degeneracy() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let v = rng.gen_range(6..20);
        let pairs = random_pairs(&mut rng, v, 6);
        let batch = batch_of(&pairs);
        let rows = batch.batch_size * batch.tgt_len;
        let mut onehot = vec![0.0; rows * v];
        for r in 0..rows {
            if batch.tgt_mask[r] {
                onehot[r * v + batch.tgt_out_ids[r]] = 1.0;
            }
        }
        let q = ok(Tensor::new(vec![rows, v], onehot))?;
        let mut tape = Tape::new();
        let logits = tape.param(random_tensor(&[batch.batch_size, batch.tgt_len, v], &mut rng));
        let kd = ok(kd_loss(&mut tape, logits, &q, &batch))?;
        let nll = ok(smoothed_nll(&mut tape, logits, &batch, 0.0))?;
        let diff = (value(&tape, kd) - value(&tape, nll)).abs();
        worst = worst.max(diff);
        ensure!(diff <= 1e-9, "difference {diff:.3e}");
    }
    Ok(format!("100 batches, max |KD - NLL| = {worst:.1e}"))
}

fn weight_semantics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for i in 0..1000 {
        let l = rng.gen_range(2..=6);
        let ppl: Vec<f64> = (0..l).map(|_| rng.gen_range(1.0..60.0)).collect();
        for mode in [TemperatureMode::Adaptive, TemperatureMode::None, TemperatureMode::Fixed(0.5)] {
            let w = ok(contribution_weights(&ppl, mode))?;
            let sum: f64 = w.raw.iter().sum();
            ensure!((sum - 1.0).abs() <= 1e-9, "vector {i} ({mode}): weights sum to {sum}");
            ensure!(w.raw.iter().all(|a| (0.0..=1.0).contains(a)), "vector {i}: weight outside [0, 1]");
            let argmax = (0..l).max_by(|&a, &b| w.raw[a].total_cmp(&w.raw[b])).unwrap();
            let argmin = (0..l).min_by(|&a, &b| ppl[a].total_cmp(&ppl[b])).unwrap();
            ensure!(argmax == argmin, "vector {i} ({mode}): argmax α {argmax} but argmin ppl {argmin}");
        }
        let same = vec![rng.gen_range(1.0..60.0); l];
        for mode in [TemperatureMode::Adaptive, TemperatureMode::None] {
            let w = ok(contribution_weights(&same, mode))?;
            ensure!(
                w.raw.iter().all(|a| (a - 1.0 / l as f64).abs() <= 1e-12),
                "equal perplexities gave {:?}",
                w.raw
            );
        }
    }
    Ok("1000 vectors, L in 2..=6".into())
}

fn temperature_checks() -> Check {
    for n in 1..=12 {
        let tau = ok(adaptive_temperature(&vec![1.0 / n as f64; n]))?;
        ensure!(tau == 1.0 / n as f64, "uniform length {n}: τ = {tau}");
    }
    for n in 2..=6 {
        let mut prev = f64::INFINITY;
        for k in 0..=200 {
            let spread = k as f64 / 200.0;
            let mut s = vec![(1.0 - spread) / n as f64; n];
            s[0] += spread;
            let tau = ok(adaptive_temperature(&s))?;
            ensure!(tau < prev, "n={n}: τ not strictly decreasing at spread {spread}");
            prev = tau;
        }
    }
    let tau = ok(adaptive_temperature(&[0.7, 0.2, 0.1]))?;
    ensure!((tau - 0.4 / 3.0).abs() <= 1e-9, "[0.7, 0.2, 0.1] gave {tau}");
    Ok(format!("τ([0.7, 0.2, 0.1]) = {tau:.12}"))
}

fn kd_linearity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let v = rng.gen_range(5..16);
        let l = rng.gen_range(1..=4);
        let pairs = random_pairs(&mut rng, v, 6);
        let batch = batch_of(&pairs);
        let rows = batch.batch_size * batch.tgt_len;
        let teachers: Vec<Tensor> = (0..l).map(|_| random_probs(rows, v, &mut rng)).collect();
        let alpha = random_simplex(l, &mut rng);
        let mut tape = Tape::new();
        let logits = tape.param(random_tensor(&[batch.batch_size, batch.tgt_len, v], &mut rng));
        let mixed = ok(adaptive_kd_loss(&mut tape, logits, &teachers, &alpha, &batch))?;
        let mut explicit = 0.0;
        for (q, a) in teachers.iter().zip(&alpha) {
            let k = ok(kd_loss(&mut tape, logits, q, &batch))?;
            explicit += a * value(&tape, k);
        }
        let diff = (value(&tape, mixed) - explicit).abs();
        worst = worst.max(diff);
        ensure!(diff <= 1e-9, "difference {diff:.3e}");
    }
    Ok(format!("300 ensembles, max difference {worst:.1e}"))
}

fn schedule_checks(trace: Option<&WeightTrace>) -> Check {
    let base = DistillConfig::default();
    for shape in [AnnealShape::Linear, AnnealShape::Logistic] {
        let cfg = DistillConfig {
            anneal_shape: shape,
            ..base.clone()
        };
        for total in [1usize, 2, 7, 100, 4321] {
            ensure!(ok(lambda2_schedule(0, total, &cfg))? == 0.5, "{shape:?}: λ2(0) != 0.5");
            ensure!(ok(lambda2_schedule(total, total, &cfg))? == 3.0, "{shape:?}: λ2(end) != 3.0");
            let mut prev = 0.0;
            for s in 0..=total {
                let l = ok(lambda2_schedule(s, total, &cfg))?;
                ensure!(l >= prev, "{shape:?}: λ2 decreases at step {s} of {total}");
                prev = l;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for _ in 0..1000 {
        let (n, k, l1, l2) = (
            rng.gen_range(0.0..10.0),
            rng.gen_range(0.0..10.0),
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.0..5.0),
        );
        let mut tape = Tape::new();
        let nv = tape.constant(Tensor::scalar(n));
        let kv = tape.constant(Tensor::scalar(k));
        let c = ok(combined_loss(&mut tape, nv, kv, l1, l2))?;
        let diff = (value(&tape, c) - (l1 * n + l2 * k)).abs();
        ensure!(diff <= 1e-12, "combined loss off by {diff:e}");
    }
    let detail = match trace {
        Some(t) => {
            let l: Vec<f64> = t.rows.iter().map(|r| r.lambda2).collect();
            ensure!(l.first() == Some(&0.5), "first traced λ2 is {:?}", l.first());
            ensure!(l.last() == Some(&3.0), "last traced λ2 is {:?}", l.last());
            ensure!(l.windows(2).all(|w| w[1] >= w[0]), "traced λ2 decreases");
            format!("traced run: {} steps from 0.5 to 3.0", l.len())
        }
        None => return Err("no distillation trace from the pipeline run".into()),
    };
    Ok(detail)
}

fn smoothing_fixed_point() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut slowest = 0;
    for _ in 0..500 {
        let l = rng.gen_range(2..=6);
        let raw = random_simplex(l, &mut rng);
        let mut s = ok(WeightSmoother::new(l, 0.7))?;
        let mut converged = None;
        for step in 1..=50 {
            let state = ok(s.update(&raw))?;
            if state.iter().zip(&raw).all(|(a, b)| (a - b).abs() <= 1e-6) {
                converged = Some(step);
                break;
            }
        }
        let step = converged.ok_or_else(|| format!("{raw:?} not reached in 50 steps"))?;
        slowest = slowest.max(step);
        let mut id = ok(WeightSmoother::new(l, 0.0))?;
        for _ in 0..5 {
            let r = random_simplex(l, &mut rng);
            ensure!(ok(id.update(&r))? == r.as_slice(), "β = 0 changed the weights");
        }
    }
    Ok(format!("500 vectors, converged within {slowest} steps"))
}

fn bleu_oracle() -> Check {
    const SACREBLEU_FIXTURE: f64 = 23.41812326184748;
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    let read = |f: &str| -> Result<Vec<Vec<String>>, String> {
        Ok(ok(fs::read_to_string(dir.join(f)))?
            .lines()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect())
    };
    let hyp = read("bleu_hyp.txt")?;
    let refs = read("bleu_ref.txt")?;
    let b = ok(corpus_bleu(&hyp, &refs))?;
    ensure!((b - SACREBLEU_FIXTURE).abs() <= 0.01, "fixture BLEU {b}, reference {SACREBLEU_FIXTURE}");
    let same = ok(corpus_bleu(&refs, &refs))?;
    ensure!((same - 100.0).abs() < 1e-9, "identical corpus scored {same}");
    Ok(format!("fixture {b:.4} vs reference {SACREBLEU_FIXTURE:.4}; identical = {same}"))
}

struct Experiment {
    cfg: ExperimentConfig,
    text: String,
    table: Result<ResultsTable, String>,
    took: Duration,
}

fn experiment_config(out: &Path) -> (ExperimentConfig, String) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/family.toml");
    let text = fs::read_to_string(&path).expect("acceptance config");
    let mut cfg = ExperimentConfig::from_toml(&text).expect("valid acceptance config");
    cfg.out_dir = out.to_path_buf();
    (cfg, text)
}

fn adaptive_trace(exp: &Experiment, seed: u64) -> Result<WeightTrace, String> {
    let dir = ok(run_dir(&exp.cfg, seed))?;
    ok(WeightTrace::read(&Layout::new(dir).trace("adaptive")))
}

fn contribution_finding(exp: &Experiment) -> Check {
    let t = exp.table.as_ref().map_err(Clone::clone)?;
    let seeds = t.seeds().len();
    ensure!(seeds >= 5, "only {seeds} seeds");
    ensure!(exp.took < Duration::from_secs(30 * 60), "experiment took {:.1?}", exp.took);
    let (ad, eq, ind) = (t.median_bleu("adaptive"), t.median_bleu("equal"), t.median_bleu(INDIVIDUAL));
    ensure!(ad >= eq, "median BLEU adaptive {ad:.2} < equal {eq:.2}");
    ensure!(ad - ind >= 1.0, "median BLEU adaptive {ad:.2} vs individual {ind:.2}: gain below 1");
    Ok(format!(
        "median BLEU over {seeds} seeds: adaptive {ad:.2}, equal {eq:.2}, individual {ind:.2}; experiment {:.0}s",
        exp.took.as_secs_f64()
    ))
}

fn temperature_finding(exp: &Experiment) -> Check {
    let t = exp.table.as_ref().map_err(Clone::clone)?;
    let seeds = t.seeds().len();
    ensure!(seeds >= 5, "only {seeds} seeds");
    let (with, without) = (t.median_bleu("adaptive_temp"), t.median_bleu("no_temp"));
    ensure!(with >= without, "median BLEU with temperature {with:.2} < without {without:.2}");
    Ok(format!("median BLEU over {seeds} seeds with 4 teachers: adaptive τ {with:.2}, no τ {without:.2}"))
}

fn weight_trace_finding(exp: &Experiment) -> Check {
    exp.table.as_ref().map_err(Clone::clone)?;
    let teachers = exp.cfg.system_teachers(&exp.cfg.systems()[0]);
    let related = teachers.iter().position(|t| t == "hr1").ok_or("hr1 not a teacher")?;
    let mut hits = 0;
    let mut means = Vec::new();
    for &seed in &exp.cfg.seeds {
        let trace = adaptive_trace(exp, seed)?;
        let m = trace.mean_smoothed();
        let top = (0..m.len()).max_by(|&a, &b| m[a].total_cmp(&m[b])).unwrap();
        hits += usize::from(top == related);
        means.push(format!("{:.3}", m[related]));

        let run = ok(run_dir(&exp.cfg, seed))?;
        let slice = ok(fs::read_to_string(run.join("traces/adaptive.first30.csv")))?;
        let rows: Vec<Vec<String>> = slice.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();
        ensure!(rows.len() == 30 * teachers.len(), "seed {seed}: slice has {} rows", rows.len());
        for it in rows.chunks(teachers.len()) {
            ensure!(it.iter().all(|r| r[0] == it[0][0]), "seed {seed}: iteration rows interleaved");
            for col in [2, 3] {
                let s: f64 = it.iter().map(|r| r[col].parse::<f64>().unwrap()).sum();
                ensure!((s - 1.0).abs() <= 1e-6, "seed {seed}, iteration {}: weights sum to {s}", it[0][0]);
            }
        }
    }
    let n = exp.cfg.seeds.len();
    ensure!(n >= 5 && hits >= 4, "most related teacher on top in {hits} of {n} seeds");
    Ok(format!("hr1 highest mean smoothed weight in {hits}/{n} seeds (means {})", means.join(", ")))
}

fn immutability_and_determinism(exp: &Experiment, out: &Path) -> Check {
    exp.table.as_ref().map_err(Clone::clone)?;
    let seed = exp.cfg.seeds[0];
    let first = Layout::new(ok(run_dir(&exp.cfg, seed))?);

    let mut again = exp.cfg.clone();
    again.seeds = vec![seed];
    again.out_dir = out.join("rerun");
    ok(run_pipeline(&again, &exp.text, 1))?;
    let second = Layout::new(ok(run_dir(&again, seed))?);
    let mut compared = 0;
    for system in exp.cfg.systems() {
        for (a, b) in [
            (first.model("student", &system.name), second.model("student", &system.name)),
            (first.trace(&system.name), second.trace(&system.name)),
        ] {
            let (x, y) = (ok(fs::read(&a))?, ok(fs::read(&b))?);
            ensure!(x == y, "{} differs between runs", a.display());
            compared += 1;
        }
    }

    let data = ok(load_data_dir(&first.data(), &exp.cfg.languages(), exp.cfg.data.ratio_filter))?;
    let names = exp.cfg.teachers.clone();
    let paths: Vec<PathBuf> = names.iter().map(|t| first.model("transfer", t)).collect();
    let teachers: Vec<Seq2SeqModel> =
        paths.iter().map(|p| ok(Seq2SeqModel::load_for_vocab(p, &data.vocab))).collect::<Result<_, _>>()?;
    let before: Vec<u64> = teachers.iter().map(Seq2SeqModel::checksum).collect();
    let scratch = Layout::new(out.join("immutability"));
    let dcfg = exp.cfg.distill.clone();
    let outcome = ok(distill_stage(&exp.cfg, &data, "check", teachers, &names, &dcfg, seed, 1, &scratch))?;
    ensure!(outcome.teacher_checksums_before == before, "ensemble saw different teachers");
    ensure!(outcome.teacher_checksums_after == before, "teacher checksums changed during distillation");
    let reloaded: Vec<u64> = paths
        .iter()
        .map(|p| ok(Seq2SeqModel::load(p)).map(|m| m.checksum()))
        .collect::<Result<_, _>>()?;
    ensure!(reloaded == before, "teacher files changed");
    Ok(format!(
        "{} teacher checksums unchanged; {compared} student checkpoints and traces bit-identical across runs",
        before.len()
    ))
}

fn print_table(exp: &Experiment) {
    if let Ok(t) = &exp.table {
        println!("{}", t.to_text());
        let teachers: Vec<String> = exp.cfg.teachers.iter().map(|t| transfer_name(t)).collect();
        let ppl: Vec<String> = teachers
            .iter()
            .map(|s| {
                let v: Vec<f64> = t.seed_rows(s).map(|r| r.dev_ppl).collect();
                format!("{s} {:.2}", median(&v))
            })
            .collect();
        println!("median low-resource dev perplexity after fine-tuning: {}\n", ppl.join(", "));
    }
}

fn main() {
    let keep = std::env::var_os("AKD_ACCEPTANCE_OUT").map(PathBuf::from);
    let tmp = tempfile::tempdir().expect("temp dir");
    let out = keep.unwrap_or_else(|| tmp.path().to_path_buf());

    println!("running the synthetic-family experiment (5 seeds)...");
    let (cfg, text) = experiment_config(&out.join("experiment"));
    let start = Instant::now();
    let table = run_pipeline(&cfg, &text, 1).map_err(|e| format!("pipeline failed: {e}"));
    let exp = Experiment {
        cfg,
        text,
        table,
        took: start.elapsed(),
    };
    print_table(&exp);
    let trace = adaptive_trace(&exp, exp.cfg.seeds[0]).ok();

    let mut suite = Suite { failures: 0 };
    let secs = Duration::from_secs;
    suite.run(1, "gradient suite", Some(secs(60)), gradient_suite);
    suite.run(2, "KD-NLL degeneracy", Some(secs(10)), kd_nll_degeneracy);
    suite.run(3, "weight semantics", Some(secs(5)), weight_semantics);
    suite.run(4, "adaptive temperature", Some(secs(1)), temperature_checks);
    suite.run(5, "adaptive KD linearity", Some(secs(30)), kd_linearity);
    suite.run(6, "λ2 schedule and combined loss", None, || schedule_checks(trace.as_ref()));
    suite.run(7, "smoothing fixed point", None, smoothing_fixed_point);
    suite.run(8, "teacher immutability and determinism", None, || immutability_and_determinism(&exp, &out));
    suite.run(9, "contribution ablation", None, || contribution_finding(&exp));
    suite.run(10, "temperature ablation", None, || temperature_finding(&exp));
    suite.run(11, "contribution weight trace", None, || weight_trace_finding(&exp));
    suite.run(12, "BLEU oracle", None, bleu_oracle);

    if suite.failures > 0 {
        println!("{} of 12 criteria failed", suite.failures);
        std::process::exit(1);
    }
    println!("all 12 criteria passed");
}
