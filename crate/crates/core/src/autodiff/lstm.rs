use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One direction's weights, gates stacked in `[input, forget, cell, output]` order.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `[4h × d_in]`
    pub w_ih: Var,
    /// `[4h × h]`
    pub w_hh: Var,
    /// `[4h]`
    pub bias: Var,
}

impl LstmWeights {
    pub fn hidden(&self, tape: &Tape) -> usize {
        tape.value(self.w_hh).shape()[1]
    }
}

/// One LSTM step: `i,f,o = σ(·)`, `g = tanh(·)`, `c = f⊙c' + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_step(tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let h = w.hidden(tape);
    if tape.value(h_prev).len() != h || tape.value(c_prev).len() != h {
        return Err(Error::dim("lstm_step", tape.value(h_prev).shape(), &[h]));
    }
    let from_x = tape.matvec(w.w_ih, x)?;
    let from_h = tape.matvec(w.w_hh, h_prev)?;
    let pre = tape.add(from_x, from_h)?;
    let pre = tape.add(pre, w.bias)?;
    let hc = tape.lstm_cell(pre, c_prev)?;
    let h_t = tape.slice(hc, 0, h)?;
    let c_t = tape.slice(hc, h, h)?;
    Ok((h_t, c_t))
}

/// Runs a direction over `inputs` from zero states and returns the hidden
/// state at every position, in input order.
pub fn lstm_sequence(tape: &mut Tape, inputs: &[Var], w: &LstmWeights, reverse: bool) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(Error::Degenerate("lstm over an empty sequence"));
    }
    let h = w.hidden(tape);
    let mut h_t = tape.constant(Tensor::zeros(&[h]));
    let mut c_t = tape.constant(Tensor::zeros(&[h]));
    let mut out = vec![h_t; inputs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..inputs.len()).rev())
    } else {
        Box::new(0..inputs.len())
    };
    for i in order {
        (h_t, c_t) = lstm_step(tape, inputs[i], h_t, c_t, w)?;
        out[i] = h_t;
    }
    Ok(out)
}
