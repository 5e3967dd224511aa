use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Worst coordinate found by [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub coordinates_checked: usize,
}

/// Compares reverse-mode gradients of `f` against central finite differences.
///
/// At most `coords_per_param` coordinates of each parameter are sampled (all
/// of them when the tensor is small enough). The relative error for one
/// coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// `f` must be deterministic: it is evaluated twice at the unperturbed point
/// and the check is rejected if the two losses differ in any bit.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor],
    epsilon: f64,
    coords_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let base = tape.value(loss).item();
    let grads = tape.backward(loss)?;

    let again = eval(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::GradCheck(format!(
            "function is not deterministic ({base} vs {again}); disable dropout"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates_checked: 0,
    };
    for (pi, var) in vars.iter().enumerate() {
        let numel = params[pi].numel();
        let analytic = grads.get(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; numel]);
        let coords: Vec<usize> = if numel <= coords_per_param {
            (0..numel).collect()
        } else {
            sample(&mut rng, numel, coords_per_param).into_vec()
        };
        for c in coords {
            let orig = work[pi].data()[c];
            work[pi].data_mut()[c] = orig + epsilon;
            let plus = eval(&work)?;
            work[pi].data_mut()[c] = orig - epsilon;
            let minus = eval(&work)?;
            work[pi].data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[c];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of param {pi}"),
                    index: c,
                });
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((pi, c));
            }
        }
    }
    Ok(report)
}
