use rand::Rng;

use super::{KernelError, Tape, Tensor, Var};

/// Gate weights of an LSTM cell with hidden width `H`.
///
/// Pre-activations are stacked as `[input, forget, candidate, output]`, each
/// block `H` wide: `w_x` is `4H × in`, `w_h` is `4H × H`, `b` has `4H` entries.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

/// One gated recurrent update, returning `(h, c)`.
pub fn lstm_step(
    tape: &mut Tape,
    weights: LstmWeights,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var), KernelError> {
    let hidden = tape.value(h_prev).len();
    let stacked = tape.value(weights.w_h).shape().first().copied().unwrap_or(0);
    if stacked != 4 * hidden || tape.value(c_prev).len() != hidden {
        return Err(KernelError::Shape(format!(
            "lstm: recurrent weight has {stacked} rows for hidden width {hidden}"
        )));
    }
    let from_x = tape.affine(weights.w_x, Some(weights.b), x_t)?;
    let from_h = tape.affine(weights.w_h, None, h_prev)?;
    let pre = tape.add(from_x, from_h)?;
    let i_pre = tape.slice_cols(pre, 0, hidden)?;
    let f_pre = tape.slice_cols(pre, hidden, 2 * hidden)?;
    let g_pre = tape.slice_cols(pre, 2 * hidden, 3 * hidden)?;
    let o_pre = tape.slice_cols(pre, 3 * hidden, 4 * hidden)?;
    let i = tape.sigmoid(i_pre)?;
    let f = tape.sigmoid(f_pre)?;
    let g = tape.tanh(g_pre)?;
    let o = tape.sigmoid(o_pre)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c)?;
    let h = tape.mul(o, c_act)?;
    Ok((h, c))
}

/// Inverted dropout: zeroes each entry with probability `rate` and rescales
/// survivors by `1/(1−rate)`. Identity when `rng` is `None` or `rate` is 0.
pub fn dropout<R: Rng>(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var, KernelError> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).len();
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
    let m = tape.input(Tensor::new(shape, mask)?)?;
    tape.mul(x, m)
}
