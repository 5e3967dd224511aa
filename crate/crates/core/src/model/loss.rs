use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::MiniBatch;
use crate::error::{Error, Result};

/// Label-smoothed token cross entropy, averaged over valid target positions.
///
/// Per position the target is `(1 - ε)·onehot(gold) + ε/V`, so the loss is
/// `(1 - ε)·NLL(gold) + ε·mean_v(-log P(v))`. With `ε = 0` this is plain
/// per-token negative log-likelihood.
pub fn smoothed_nll(tape: &mut Tape, logits: Var, batch: &MiniBatch, epsilon: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!("label smoothing {epsilon} outside [0, 1)")));
    }
    let (flat, v) = flatten_logits(tape, logits, batch)?;
    let lp = tape.log_softmax(flat, 1)?;
    let mut target = vec![0.0; batch.batch_size * batch.tgt_len * v];
    for (pos, (&gold, &valid)) in batch.tgt_out_ids.iter().zip(&batch.tgt_mask).enumerate() {
        if !valid {
            continue;
        }
        let row = &mut target[pos * v..(pos + 1) * v];
        if epsilon > 0.0 {
            row.iter_mut().for_each(|q| *q = epsilon / v as f64);
        }
        row[gold] += 1.0 - epsilon;
    }
    let target = tape.constant(Tensor::new(vec![batch.batch_size * batch.tgt_len, v], target)?);
    let total = tape.dot(lp, target)?;
    Ok(tape.scale(total, -1.0 / batch.token_count as f64))
}

/// Reshapes `[b, t, V]` logits to `[b·t, V]` after checking them against `batch`.
pub(crate) fn flatten_logits(tape: &mut Tape, logits: Var, batch: &MiniBatch) -> Result<(Var, usize)> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 3 || shape[0] != batch.batch_size || shape[1] != batch.tgt_len {
        return Err(Error::shape("loss", &shape, &[batch.batch_size, batch.tgt_len]));
    }
    if batch.token_count == 0 {
        return Err(Error::Contract("batch has no valid target tokens".into()));
    }
    let v = shape[2];
    Ok((tape.reshape(logits, &[shape[0] * shape[1], v])?, v))
}
