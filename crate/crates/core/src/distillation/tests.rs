use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, Tape, Tensor};
use crate::corpus::{MiniBatch, ParallelCorpus, SentencePair, EOS};
use crate::model::tests::{pairs, tiny_config};
use crate::model::{smoothed_nll, Mode, Seq2SeqModel};
use crate::Error;

const SOFTMAX_2_4_8: [f64; 3] = [0.878878242732150895, 0.118943235910652081, 0.002178521357197023];

fn batch_of(p: &[SentencePair]) -> MiniBatch {
    let refs: Vec<&SentencePair> = p.iter().collect();
    MiniBatch::from_pairs(&refs, (0..p.len()).collect()).unwrap()
}

fn param_mut<'a>(m: &'a mut Seq2SeqModel, name: &str) -> &'a mut Tensor {
    let i = m.param_names().iter().position(|n| n == name).unwrap();
    &mut m.params_mut()[i]
}

fn random_probs(rows: usize, v: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = Vec::with_capacity(rows * v);
    for _ in 0..rows {
        let logits: Vec<f64> = (0..v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        data.extend(softmax_scaled(&logits, 1.0));
    }
    Tensor::new(vec![rows, v], data).unwrap()
}

fn random_logits(tape: &mut Tape, batch: &MiniBatch, v: usize, rng: &mut ChaCha8Rng) -> crate::autodiff::Var {
    let n = batch.batch_size * batch.tgt_len * v;
    let data = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    tape.param(Tensor::new(vec![batch.batch_size, batch.tgt_len, v], data).unwrap())
}

fn value(tape: &Tape, v: crate::autodiff::Var) -> f64 {
    tape.value(v).item()
}

#[test]
fn perfect_teacher_has_unit_perplexity() {
    let v = 10;
    let mut m = Seq2SeqModel::init(tiny_config(v), 0).unwrap();
    let d = m.config().hidden_size;
    m.embedding_mut().data_mut().fill(0.0);
    m.embedding_mut().data_mut()[EOS * d] = 1.0;
    param_mut(&mut m, "decoder.ln_final.gamma").data_mut().fill(0.0);
    param_mut(&mut m, "decoder.ln_final.beta").data_mut()[0] = 1000.0;
    let p = vec![
        SentencePair { src: vec![4, 5], tgt: vec![EOS, EOS] },
        SentencePair { src: vec![6], tgt: vec![EOS] },
    ];
    assert_eq!(teacher_minibatch_perplexity(&m, &batch_of(&p)).unwrap(), 1.0);
}

#[test]
fn uniform_teacher_has_vocabulary_size_perplexity() {
    let v = 17;
    let mut m = Seq2SeqModel::init(tiny_config(v), 0).unwrap();
    m.embedding_mut().data_mut().fill(0.0);
    let p = pairs(v, &[(3, 4), (2, 2)], 1);
    let ppl = teacher_minibatch_perplexity(&m, &batch_of(&p)).unwrap();
    assert!((ppl / v as f64 - 1.0).abs() < 1e-12, "{ppl}");
}

#[test]
fn perplexity_matches_per_token_oracle() {
    let v = 15;
    let m = Seq2SeqModel::init(tiny_config(v), 3).unwrap();
    let p = pairs(v, &[(4, 3), (2, 5)], 2);
    let batch = batch_of(&p);
    let logits = m.logits(&batch).unwrap();
    let mut nll = 0.0;
    let mut count = 0;
    for (pos, row) in logits.data().chunks(v).enumerate() {
        if !batch.tgt_mask[pos] {
            continue;
        }
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        nll -= (row[batch.tgt_out_ids[pos]].exp() / z).ln();
        count += 1;
    }
    let oracle = (nll / count as f64).exp();
    let ppl = teacher_minibatch_perplexity(&m, &batch).unwrap();
    assert!((ppl / oracle - 1.0).abs() < 1e-9, "{ppl} vs {oracle}");
}

#[test]
fn equal_perplexities_give_uniform_weights() {
    let w = contribution_weights(&[5.0, 5.0, 5.0], TemperatureMode::None).unwrap();
    for a in &w.raw {
        assert!((a - 1.0 / 3.0).abs() < 1e-12);
    }
    let w = contribution_weights(&[5.0, 5.0, 5.0], TemperatureMode::Adaptive).unwrap();
    assert!((w.temperature - 1.0 / 3.0).abs() < 1e-15);
    for a in &w.raw {
        assert!((a - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn weights_for_two_four_eight_match_high_precision_softmax() {
    let w = contribution_weights(&[2.0, 4.0, 8.0], TemperatureMode::None).unwrap();
    for (a, e) in w.raw.iter().zip(SOFTMAX_2_4_8) {
        assert!((a - e).abs() < 1e-15);
    }
    assert_eq!(w.temperature, 1.0);
    assert_eq!(w.raw, w.smoothed);
}

#[test]
fn non_finite_perplexity_names_the_teacher() {
    for bad in [f64::NAN, f64::INFINITY] {
        match contribution_weights(&[2.0, 3.0, bad, 1.0], TemperatureMode::Adaptive) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn temperature_modes_parse_and_validate() {
    assert_eq!("adaptive".parse::<TemperatureMode>().unwrap(), TemperatureMode::Adaptive);
    assert_eq!("none".parse::<TemperatureMode>().unwrap(), TemperatureMode::None);
    assert_eq!("fixed=0.5".parse::<TemperatureMode>().unwrap(), TemperatureMode::Fixed(0.5));
    assert!("fixed=0".parse::<TemperatureMode>().is_err());
    assert!("fixed=abc".parse::<TemperatureMode>().is_err());
    assert!("hot".parse::<TemperatureMode>().is_err());
    assert_eq!("equal".parse::<ContributionMode>().unwrap(), ContributionMode::Equal);
    assert!(contribution_weights(&[1.0], TemperatureMode::Fixed(-1.0)).is_err());
    for m in [TemperatureMode::Adaptive, TemperatureMode::None, TemperatureMode::Fixed(0.25)] {
        assert_eq!(m.to_string().parse::<TemperatureMode>().unwrap(), m);
    }
}

#[test]
fn adaptive_temperature_examples() {
    assert_eq!(adaptive_temperature(&[0.25; 4]).unwrap(), 0.25);
    assert!((adaptive_temperature(&[0.7, 0.2, 0.1]).unwrap() - 0.4 / 3.0).abs() < 1e-9);
    assert_eq!(adaptive_temperature(&[1.0]).unwrap(), 1.0);
    assert!(adaptive_temperature(&[]).is_err());
}

#[test]
fn vanishing_temperature_takes_the_limit() {
    let w = contribution_weights(&[1.0, 38.9], TemperatureMode::Adaptive).unwrap();
    assert_eq!(w.temperature, 0.0);
    assert_eq!(w.raw, vec![1.0, 0.0]);
}

#[test]
fn adaptive_temperature_decreases_with_spread() {
    for n in 2..=6 {
        let mut last = f64::INFINITY;
        for k in 0..=50 {
            let spread = k as f64 / 51.0;
            let mut s = vec![(1.0 - spread) / n as f64; n];
            s[0] += spread;
            let tau = adaptive_temperature(&s).unwrap();
            assert!(tau < last, "n={n} spread={spread}");
            assert!(tau > 0.0);
            last = tau;
        }
    }
}

#[test]
fn single_teacher_always_gets_full_weight() {
    let cfg = DistillConfig {
        smoothing: false,
        ..DistillConfig::default()
    };
    let m = Seq2SeqModel::init(tiny_config(12), 0).unwrap();
    let mut e = TeacherEnsemble::new(vec![m], &cfg).unwrap();
    for ppl in [1.0, 7.5, 300.0] {
        let w = e.weigh(&[ppl]).unwrap();
        assert_eq!(w.raw, vec![1.0]);
        assert_eq!(w.smoothed, vec![1.0]);
    }
}

#[test]
fn equal_contribution_ignores_perplexity() {
    let cfg = DistillConfig {
        contribution: ContributionMode::Equal,
        ..DistillConfig::default()
    };
    let models = (0..3).map(|s| Seq2SeqModel::init(tiny_config(12), s).unwrap()).collect();
    let mut e = TeacherEnsemble::new(models, &cfg).unwrap();
    for _ in 0..5 {
        let w = e.weigh(&[1.5, 20.0, 3.0]).unwrap();
        assert_eq!(w.raw, vec![1.0 / 3.0; 3]);
        for s in &w.smoothed {
            assert!((s - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}

#[test]
fn smoothing_without_memory_is_identity() {
    let mut s = WeightSmoother::new(3, 0.0).unwrap();
    let raw = [0.6, 0.3, 0.1];
    let out = s.update(&raw).unwrap();
    for (a, b) in out.iter().zip(raw) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn smoothing_starts_uniform_and_converges_to_constant_input() {
    let mut s = WeightSmoother::new(4, 0.7).unwrap();
    assert_eq!(s.state(), &[0.25; 4]);
    assert_eq!(s.update(&[0.25; 4]).unwrap(), &[0.25; 4]);

    let raw = [0.55, 0.3, 0.1, 0.05];
    let mut s = WeightSmoother::new(4, 0.7).unwrap();
    // oracle: log-space error shrinks by β each step
    let mut steps = 0;
    while steps < 50 {
        s.update(&raw).unwrap();
        steps += 1;
        let err = s.state().iter().zip(raw).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if err < 1e-6 {
            break;
        }
    }
    let err = s.state().iter().zip(raw).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "err {err} after {steps} steps");
    assert!(steps <= 50);
}

#[test]
fn floored_teacher_can_recover() {
    let mut s = WeightSmoother::new(2, 0.7).unwrap();
    for _ in 0..200 {
        s.update(&[1.0, 0.0]).unwrap();
    }
    assert!(s.state()[1] > 0.0);
    for _ in 0..200 {
        s.update(&[0.0, 1.0]).unwrap();
    }
    assert!(s.state()[1] > 0.99);
}

#[test]
fn smoother_rejects_bad_input() {
    assert!(WeightSmoother::new(0, 0.5).is_err());
    assert!(WeightSmoother::new(2, 1.0).is_err());
    assert!(WeightSmoother::new(2, 0.5).unwrap().update(&[1.0]).is_err());
}

#[test]
fn kd_with_one_hot_teacher_equals_plain_nll() {
    let v = 9;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seed in 0..10 {
        let p = pairs(v, &[(2, 3), (4, 1), (1, 5)], seed);
        let batch = batch_of(&p);
        let mut tape = Tape::new();
        let logits = random_logits(&mut tape, &batch, v, &mut rng);
        let mut onehot = vec![0.0; batch.batch_size * batch.tgt_len * v];
        for (pos, &g) in batch.tgt_out_ids.iter().enumerate() {
            onehot[pos * v + g] = 1.0;
        }
        let q = Tensor::new(vec![batch.batch_size, batch.tgt_len, v], onehot).unwrap();
        let kd = kd_loss(&mut tape, logits, &q, &batch).unwrap();
        let nll = smoothed_nll(&mut tape, logits, &batch, 0.0).unwrap();
        assert!((value(&tape, kd) - value(&tape, nll)).abs() < 1e-9);
    }
}

#[test]
fn kd_with_uniform_teacher_matches_naive_sum() {
    let v = 7;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = pairs(v, &[(2, 3), (3, 2)], 4);
    let batch = batch_of(&p);
    let mut tape = Tape::new();
    let logits = random_logits(&mut tape, &batch, v, &mut rng);
    let raw = tape.value(logits).data().to_vec();
    let mut total = 0.0;
    for (pos, row) in raw.chunks(v).enumerate() {
        if batch.tgt_mask[pos] {
            let z: f64 = row.iter().map(|x| x.exp()).sum::<f64>().ln();
            total += row.iter().map(|x| -(x - z) / v as f64).sum::<f64>();
        }
    }
    let q = Tensor::full(&[batch.batch_size * batch.tgt_len, v], 1.0 / v as f64);
    let kd = kd_loss(&mut tape, logits, &q, &batch).unwrap();
    assert!((value(&tape, kd) - total / batch.token_count as f64).abs() < 1e-9);
}

#[test]
fn kd_of_teacher_against_itself_is_its_entropy() {
    let v = 11;
    let teacher = Seq2SeqModel::init(tiny_config(v), 5).unwrap();
    let p = pairs(v, &[(3, 3), (2, 4)], 5);
    let batch = batch_of(&p);
    let e = TeacherEnsemble::new(vec![teacher.clone()], &DistillConfig::default()).unwrap();
    let q = e.signals(&batch).unwrap().remove(0).probs;

    let mut entropy = 0.0;
    for (pos, row) in q.data().chunks(v).enumerate() {
        if batch.tgt_mask[pos] {
            entropy -= row.iter().map(|p| p * p.ln()).sum::<f64>();
        }
    }
    entropy /= batch.token_count as f64;

    let mut tape = Tape::new();
    let vars = teacher.register(&mut tape, true);
    let logits = teacher.forward(&mut tape, &vars, &batch, Mode::Eval).unwrap();
    let kd = kd_loss(&mut tape, logits, &q, &batch).unwrap();
    assert!((value(&tape, kd) - entropy).abs() < 1e-9);
}

#[test]
fn kd_rejects_mismatched_shapes() {
    let v = 6;
    let p = pairs(v, &[(2, 2)], 0);
    let batch = batch_of(&p);
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let logits = random_logits(&mut tape, &batch, v, &mut rng);
    let q = Tensor::full(&[batch.tgt_len, v + 1], 0.1);
    assert!(matches!(kd_loss(&mut tape, logits, &q, &batch), Err(Error::Shape { .. })));
}

#[test]
fn kd_gradient_matches_finite_differences_on_one_token() {
    let v = 5;
    let p = vec![SentencePair { src: vec![4], tgt: vec![] }];
    let batch = batch_of(&p);
    assert_eq!(batch.token_count, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = random_probs(1, v, &mut rng);
    let x = Tensor::new(vec![1, 1, v], (0..v).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let report = grad_check(|tape, vars| kd_loss(tape, vars[0], &q, &batch), &[x], 1e-5, v, 0).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn adaptive_kd_with_one_hot_alpha_selects_one_teacher() {
    let v = 8;
    let p = pairs(v, &[(3, 2), (2, 3)], 6);
    let batch = batch_of(&p);
    let rows = batch.batch_size * batch.tgt_len;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let teachers: Vec<Tensor> = (0..3).map(|_| random_probs(rows, v, &mut rng)).collect();
    let mut tape = Tape::new();
    let logits = random_logits(&mut tape, &batch, v, &mut rng);
    for j in 0..3 {
        let mut alpha = vec![0.0; 3];
        alpha[j] = 1.0;
        let a = adaptive_kd_loss(&mut tape, logits, &teachers, &alpha, &batch).unwrap();
        let b = kd_loss(&mut tape, logits, &teachers[j], &batch).unwrap();
        assert!((value(&tape, a) - value(&tape, b)).abs() < 1e-12);
    }
}

#[test]
fn adaptive_kd_with_identical_teachers_is_single_teacher_kd() {
    let v = 8;
    let p = pairs(v, &[(3, 2), (2, 3)], 7);
    let batch = batch_of(&p);
    let rows = batch.batch_size * batch.tgt_len;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = random_probs(rows, v, &mut rng);
    let mut tape = Tape::new();
    let logits = random_logits(&mut tape, &batch, v, &mut rng);
    let single = kd_loss(&mut tape, logits, &q, &batch).unwrap();
    let alpha = [0.2, 0.5, 0.3];
    let all = adaptive_kd_loss(&mut tape, logits, &[q.clone(), q.clone(), q], &alpha, &batch).unwrap();
    assert!((value(&tape, single) - value(&tape, all)).abs() < 1e-9);
}

#[test]
fn adaptive_kd_matches_two_pass_combination() {
    let v = 10;
    let p = pairs(v, &[(3, 4), (2, 1)], 8);
    let batch = batch_of(&p);
    let rows = batch.batch_size * batch.tgt_len;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = [random_probs(rows, v, &mut rng), random_probs(rows, v, &mut rng)];
    let mut tape = Tape::new();
    let logits = random_logits(&mut tape, &batch, v, &mut rng);
    let k1 = kd_loss(&mut tape, logits, &t[0], &batch).unwrap();
    let k2 = kd_loss(&mut tape, logits, &t[1], &batch).unwrap();
    let both = adaptive_kd_loss(&mut tape, logits, &t, &[0.3, 0.7], &batch).unwrap();
    let oracle = 0.3 * value(&tape, k1) + 0.7 * value(&tape, k2);
    assert!((value(&tape, both) - oracle).abs() < 1e-9);
}

#[test]
fn adaptive_kd_rejects_unnormalized_alpha() {
    let v = 6;
    let p = pairs(v, &[(2, 2)], 9);
    let batch = batch_of(&p);
    let rows = batch.batch_size * batch.tgt_len;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = [random_probs(rows, v, &mut rng), random_probs(rows, v, &mut rng)];
    let mut tape = Tape::new();
    let logits = random_logits(&mut tape, &batch, v, &mut rng);
    for alpha in [[0.5, 0.6], [1.2, -0.2], [0.5, 0.5 - 2e-6]] {
        assert!(matches!(
            adaptive_kd_loss(&mut tape, logits, &t, &alpha, &batch),
            Err(Error::Contract(_))
        ));
    }
    assert!(adaptive_kd_loss(&mut tape, logits, &t, &[0.5, 0.5 - 1e-7], &batch).is_ok());
}

#[test]
fn gradients_reach_only_the_student() {
    let v = 12;
    let teachers: Vec<Seq2SeqModel> = (0..2).map(|s| Seq2SeqModel::init(tiny_config(v), 10 + s).unwrap()).collect();
    let before: Vec<u64> = teachers.iter().map(Seq2SeqModel::checksum).collect();
    let e = TeacherEnsemble::new(teachers, &DistillConfig::default()).unwrap();
    let student = Seq2SeqModel::init(tiny_config(v), 1).unwrap();
    let p = pairs(v, &[(3, 3), (4, 2)], 10);
    let batch = batch_of(&p);

    let mut tape = Tape::new();
    let vars = student.register(&mut tape, true);
    let logits = student.forward(&mut tape, &vars, &batch, Mode::Eval).unwrap();
    let kd = e.adaptive_kd_loss(&mut tape, logits, &[0.4, 0.6], &batch).unwrap();
    let grads = tape.backward(kd).unwrap();
    let leaves_with_grad = tape
        .vars()
        .filter(|&v| tape.is_leaf(v) && grads.get(v).is_some())
        .count();
    assert_eq!(leaves_with_grad, student.params().len());
    assert!(vars.iter().all(|&v| grads.get(v).is_some()));
    assert_eq!(e.checksums(), before);
}

#[test]
fn distillation_gradient_matches_finite_differences() {
    let v = 9;
    let teachers: Vec<Seq2SeqModel> = (0..2).map(|s| Seq2SeqModel::init(tiny_config(v), 20 + s).unwrap()).collect();
    let e = TeacherEnsemble::new(teachers, &DistillConfig::default()).unwrap();
    let student = Seq2SeqModel::init(tiny_config(v), 2).unwrap();
    let p = pairs(v, &[(2, 2), (3, 1)], 11);
    let batch = batch_of(&p);
    let report = grad_check(
        |tape, vars| {
            let logits = student.forward(tape, vars, &batch, Mode::Eval)?;
            let nll = smoothed_nll(tape, logits, &batch, 0.1)?;
            let kd = e.adaptive_kd_loss(tape, logits, &[0.25, 0.75], &batch)?;
            combined_loss(tape, nll, kd, 0.5, 1.75)
        },
        student.params(),
        1e-4,
        4,
        3,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn combined_loss_examples() {
    let mut tape = Tape::new();
    let nll = tape.constant(Tensor::scalar(2.0));
    let kd = tape.constant(Tensor::scalar(4.0));
    let c = combined_loss(&mut tape, nll, kd, 0.5, 0.5).unwrap();
    assert_eq!(value(&tape, c), 3.0);
    let nll = tape.constant(Tensor::scalar(1.2345678));
    let c = combined_loss(&mut tape, nll, kd, 0.5, 0.0).unwrap();
    assert_eq!(value(&tape, c), 0.5 * 1.2345678);
    assert!(combined_loss(&mut tape, nll, kd, -1.0, 0.0).is_err());
}

#[test]
fn lambda2_schedule_endpoints_and_midpoint() {
    let linear = DistillConfig::default();
    assert_eq!(lambda2_schedule(0, 100, &linear).unwrap(), 0.5);
    assert_eq!(lambda2_schedule(100, 100, &linear).unwrap(), 3.0);
    assert_eq!(lambda2_schedule(50, 100, &linear).unwrap(), 1.75);
    assert_eq!(lambda2_schedule(500, 100, &linear).unwrap(), 3.0);
    assert!(lambda2_schedule(0, 0, &linear).is_err());

    let logistic = DistillConfig {
        anneal_shape: AnnealShape::Logistic,
        ..DistillConfig::default()
    };
    assert_eq!(lambda2_schedule(0, 77, &logistic).unwrap(), 0.5);
    assert_eq!(lambda2_schedule(77, 77, &logistic).unwrap(), 3.0);
    for cfg in [&linear, &logistic] {
        let mut last = f64::NEG_INFINITY;
        for s in 0..=77 {
            let l = lambda2_schedule(s, 77, cfg).unwrap();
            assert!(l >= last);
            last = l;
        }
    }
}

#[test]
fn distill_config_validation() {
    assert!(DistillConfig::default().validate().is_ok());
    let bad = [
        DistillConfig { lambda2_start: 4.0, ..DistillConfig::default() },
        DistillConfig { lambda1: -0.1, ..DistillConfig::default() },
        DistillConfig { smoothing_decay: 1.0, ..DistillConfig::default() },
        DistillConfig { temperature: TemperatureMode::Fixed(0.0), ..DistillConfig::default() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
    }
}

#[test]
fn ensemble_rejects_mixed_vocabularies_and_train_mode() {
    let a = Seq2SeqModel::init(tiny_config(10), 0).unwrap().with_vocab_hash(1);
    let b = Seq2SeqModel::init(tiny_config(10), 1).unwrap().with_vocab_hash(2);
    let c = Seq2SeqModel::init(tiny_config(11), 1).unwrap().with_vocab_hash(1);
    let cfg = DistillConfig::default();
    assert!(matches!(
        TeacherEnsemble::new(vec![a.clone(), b], &cfg),
        Err(Error::VocabMismatch { .. })
    ));
    assert!(TeacherEnsemble::new(vec![a.clone(), c], &cfg).is_err());
    assert!(TeacherEnsemble::new(vec![], &cfg).is_err());
    let mut e = TeacherEnsemble::new(vec![a], &cfg).unwrap();
    assert!(e.check_frozen().is_ok());
    e.set_train_mode(0, true);
    assert!(matches!(e.check_frozen(), Err(Error::Contract(_))));
}

#[test]
fn cached_and_threaded_signals_are_bit_identical() {
    let v = 14;
    let teachers: Vec<Seq2SeqModel> = (0..3).map(|s| Seq2SeqModel::init(tiny_config(v), 30 + s).unwrap()).collect();
    let corpus = ParallelCorpus {
        name: "c".into(),
        pairs: pairs(v, &[(3, 4), (5, 2), (2, 2), (4, 6), (1, 3)], 12),
        vocab_hash: 0,
    };
    let mut plain = TeacherEnsemble::new(teachers, &DistillConfig::default()).unwrap();
    let mut cached = plain.clone();
    cached.precompute(&corpus).unwrap();
    cached.set_threads(3);
    let mut threaded = plain.clone();
    threaded.set_threads(2);
    plain.set_threads(1);
    for range in [0..2, 1..5, 3..4] {
        let batch = MiniBatch::from_corpus(&corpus, range).unwrap();
        let a = plain.signals(&batch).unwrap();
        let b = cached.signals(&batch).unwrap();
        let c = threaded.signals(&batch).unwrap();
        for ((x, y), z) in a.iter().zip(&b).zip(&c) {
            assert_eq!(x.perplexity.to_bits(), y.perplexity.to_bits());
            assert_eq!(x.perplexity.to_bits(), z.perplexity.to_bits());
            assert!(x.probs.data().iter().zip(y.probs.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
            assert!(x.probs.data().iter().zip(z.probs.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
    // a batch that does not come from the cached corpus is computed directly
    let other = pairs(v, &[(2, 2)], 99);
    let stray = MiniBatch::from_pairs(&[&other[0]], vec![0]).unwrap();
    let direct = plain.signals(&stray).unwrap();
    assert_eq!(cached.signals(&stray).unwrap(), direct);
}

#[test]
fn trace_round_trips_through_csv() {
    let mut t = WeightTrace::new(2);
    let w = contribution_weights(&[3.0, 1.5], TemperatureMode::Adaptive).unwrap();
    t.push(TraceRow::new(1, 0, &w, 0.5));
    t.push(TraceRow::new(2, 1, &w, 3.0));
    let csv = t.to_csv();
    assert!(csv.starts_with(
        "step,batch_id,teacher_0_ppl,teacher_1_ppl,alpha_raw_0,alpha_raw_1,alpha_smoothed_0,alpha_smoothed_1,tau,lambda2\n"
    ));
    assert_eq!(WeightTrace::parse(&csv).unwrap(), t);
    assert!(WeightTrace::parse("step,batch_id\n").is_err());
    let means = t.mean_smoothed();
    assert!(means[1] > means[0]);
}

proptest! {
    #[test]
    fn weights_are_probability_vectors_favoring_the_best_teacher(
        ppl in proptest::collection::vec(1.0f64..50.0, 2..=6),
        mode in prop_oneof![
            Just(TemperatureMode::None),
            Just(TemperatureMode::Adaptive),
            (0.05f64..5.0).prop_map(TemperatureMode::Fixed),
        ],
    ) {
        let w = contribution_weights(&ppl, mode).unwrap();
        prop_assert!((w.raw.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.raw.iter().all(|&a| a >= 0.0));
        let best = ppl.iter().copied().fold(f64::INFINITY, f64::min);
        let top = w.raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (a, p) in w.raw.iter().zip(&ppl) {
            if *a == top {
                prop_assert_eq!(*p, best);
            }
        }
    }

    #[test]
    fn lower_temperature_sharpens(
        ppl in proptest::collection::vec(1.0f64..20.0, 2..=5),
        t1 in 0.05f64..5.0,
        t2 in 0.05f64..5.0,
    ) {
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let max = |t| contribution_weights(&ppl, TemperatureMode::Fixed(t)).unwrap().raw.into_iter().fold(0.0, f64::max);
        prop_assert!(max(lo) >= max(hi) - 1e-15);
    }

    #[test]
    fn adaptive_kd_is_linear_in_alpha(seed in any::<u64>(), l in 1usize..=4) {
        let v = 6;
        let p = pairs(v, &[(2, 3), (1, 2)], seed);
        let batch = batch_of(&p);
        let rows = batch.batch_size * batch.tgt_len;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<Tensor> = (0..l).map(|_| random_probs(rows, v, &mut rng)).collect();
        let raw: Vec<f64> = (0..l).map(|_| rng.gen_range(0.0..1.0)).collect();
        let alpha = softmax_scaled(&raw, 0.3);
        let mut tape = Tape::new();
        let logits = random_logits(&mut tape, &batch, v, &mut rng);
        let mixed = adaptive_kd_loss(&mut tape, logits, &t, &alpha, &batch).unwrap();
        let mut oracle = 0.0;
        for (q, a) in t.iter().zip(&alpha) {
            let k = kd_loss(&mut tape, logits, q, &batch).unwrap();
            oracle += a * value(&tape, k);
        }
        prop_assert!((value(&tape, mixed) - oracle).abs() < 1e-9);
    }
}
