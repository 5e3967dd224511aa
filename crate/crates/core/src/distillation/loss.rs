use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::MiniBatch;
use crate::error::{Error, Result};
use crate::model::flatten_logits;

/// Tolerance on `Σ α = 1` accepted by [`adaptive_kd_loss`].
pub const ALPHA_TOLERANCE: f64 = 1e-6;

/// Cross entropy of the student against a teacher distribution, averaged
/// over valid target positions.
///
/// `teacher_probs` holds one row of `V` probabilities per padded target
/// position, shaped `[b·t, V]` or `[b, t, V]`. It enters as a constant,
/// so only the student receives gradients.
pub fn kd_loss(tape: &mut Tape, student_logits: Var, teacher_probs: &Tensor, batch: &MiniBatch) -> Result<Var> {
    let (flat, v) = flatten_logits(tape, student_logits, batch)?;
    let rows = batch.batch_size * batch.tgt_len;
    let ok = match *teacher_probs.shape() {
        [r, tv] => r == rows && tv == v,
        [b, t, tv] => b == batch.batch_size && t == batch.tgt_len && tv == v,
        _ => false,
    };
    if !ok {
        return Err(Error::shape("kd_loss", teacher_probs.shape(), &[rows, v]));
    }
    let mut q = teacher_probs.data().to_vec();
    for (pos, &valid) in batch.tgt_mask.iter().enumerate() {
        if !valid {
            q[pos * v..(pos + 1) * v].fill(0.0);
        }
    }
    let lp = tape.log_softmax(flat, 1)?;
    let q = tape.constant(Tensor::new(vec![rows, v], q)?);
    let total = tape.dot(lp, q)?;
    Ok(tape.scale(total, -1.0 / batch.token_count as f64))
}

/// `Σ_l α_l · kd_loss(student, teacher_l)`.
///
/// The loss is linear in the teacher distributions, so it is evaluated
/// once against the α-mixture of them.
pub fn adaptive_kd_loss(
    tape: &mut Tape,
    student_logits: Var,
    teacher_probs: &[Tensor],
    alpha: &[f64],
    batch: &MiniBatch,
) -> Result<Var> {
    if teacher_probs.is_empty() {
        return Err(Error::Contract("adaptive KD needs at least one teacher".into()));
    }
    if alpha.len() != teacher_probs.len() {
        return Err(Error::Contract(format!(
            "{} weights for {} teachers",
            alpha.len(),
            teacher_probs.len()
        )));
    }
    let sum: f64 = alpha.iter().sum();
    if (sum - 1.0).abs() > ALPHA_TOLERANCE || alpha.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::Contract(format!("contribution weights {alpha:?} are not a probability vector")));
    }
    let shape = teacher_probs[0].shape();
    if let Some(bad) = teacher_probs.iter().find(|t| t.shape() != shape) {
        return Err(Error::shape("adaptive_kd_loss", bad.shape(), shape));
    }
    let mut mix = vec![0.0; teacher_probs[0].numel()];
    for (t, &a) in teacher_probs.iter().zip(alpha) {
        if a == 0.0 {
            continue;
        }
        for (m, &q) in mix.iter_mut().zip(t.data()) {
            *m += a * q;
        }
    }
    kd_loss(tape, student_logits, &Tensor::new(shape.to_vec(), mix)?, batch)
}

/// `λ1·nll + λ2·kd`.
pub fn combined_loss(tape: &mut Tape, nll: Var, kd: Var, lambda1: f64, lambda2: f64) -> Result<Var> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(Error::Contract(format!("loss weights must be non-negative, got {lambda1}, {lambda2}")));
    }
    let a = tape.scale(nll, lambda1);
    let b = tape.scale(kd, lambda2);
    tape.add(a, b)
}
