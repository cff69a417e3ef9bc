use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Summed binary cross-entropy between pair scores and the gold indicator,
/// over entries whose row and column are both unmasked.
pub fn pair_loss(tape: &mut Tape, scores: Var, target: &[f64], clause_mask: &[f64]) -> Result<Var> {
    let c = clause_mask.len();
    let shape = tape.value(scores).shape().to_vec();
    if shape != [c, c] || target.len() != c * c {
        return Err(Error::dim("pair_loss", &shape, &[c, c]));
    }
    let weight: Vec<f64> = (0..c * c).map(|i| clause_mask[i / c] * clause_mask[i % c]).collect();
    tape.bce_sum(scores, target, &weight)
}

fn one_hot(labels: &[f64]) -> Vec<f64> {
    labels.iter().flat_map(|&y| [1.0 - y, y]).collect()
}

/// Summed two-class negative log-likelihood of both auxiliary heads.
pub fn aux_loss(
    tape: &mut Tape,
    emotion_probs: Var,
    cause_probs: Var,
    emotion_labels: &[f64],
    cause_labels: &[f64],
    clause_mask: &[f64],
) -> Result<Var> {
    let le = tape.nll_sum(emotion_probs, &one_hot(emotion_labels), clause_mask)?;
    let lc = tape.nll_sum(cause_probs, &one_hot(cause_labels), clause_mask)?;
    tape.add(le, lc)
}

/// `L_pair + β·L_aux + λ·Σθ²`. `regularized` lists each parameter leaf with
/// the count of leading elements to leave out of the penalty.
pub fn total_loss(
    tape: &mut Tape,
    pair: Var,
    aux: Var,
    regularized: &[(Var, usize)],
    beta: f64,
    lambda: f64,
) -> Result<Var> {
    let mut total = pair;
    if beta != 0.0 {
        let weighted = tape.scale(aux, beta);
        total = tape.add(total, weighted)?;
    }
    if lambda != 0.0 && !regularized.is_empty() {
        let mut norm = None;
        for &(v, skip) in regularized {
            let s = tape.sum_squares(v, skip);
            norm = Some(match norm {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
        }
        let penalty = tape.scale(norm.expect("non-empty"), lambda);
        total = tape.add(total, penalty)?;
    }
    Ok(total)
}
