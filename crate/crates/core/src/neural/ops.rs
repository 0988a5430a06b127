use rand::Rng;

use super::params::{ParamId, ParamStore, Tensor};
use super::tape::{masked_softmax, Tape, Var};
use super::NeuralError;

/// Recurrent cell weights. Gate blocks are stacked as input, forget,
/// candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let w = store.add_uniform(&format!("{prefix}.w"), &[4 * hidden, input + hidden], scale, rng);
        let b = store.add_uniform(&format!("{prefix}.b"), &[4 * hidden], scale, rng);
        LstmParams { w, b, input, hidden }
    }
}

/// Cell and hidden state `(l, s)`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub cell: Var,
    pub hidden: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, hidden: usize) -> Self {
        LstmState {
            cell: tape.zeros(hidden),
            hidden: tape.zeros(hidden),
        }
    }
}

pub fn lstm_step(tape: &mut Tape, p: &LstmParams, state: LstmState, x: Var) -> Result<LstmState, NeuralError> {
    let h = p.hidden;
    if tape.dim(x) != p.input {
        return Err(NeuralError::ShapeMismatch {
            op: "lstm input",
            expected: p.input,
            found: tape.dim(x),
        });
    }
    if tape.dim(state.hidden) != h || tape.dim(state.cell) != h {
        return Err(NeuralError::ShapeMismatch {
            op: "lstm state",
            expected: h,
            found: tape.dim(state.hidden),
        });
    }
    let z = tape.concat_affine(p.w, p.b, &[x, state.hidden])?;
    let zi = tape.slice(z, 0, h)?;
    let zf = tape.slice(z, h, h)?;
    let zg = tape.slice(z, 2 * h, h)?;
    let zo = tape.slice(z, 3 * h, h)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let keep = tape.mul(f, state.cell)?;
    let write = tape.mul(i, g)?;
    let cell = tape.add(&[keep, write])?;
    let squashed = tape.tanh(cell);
    let hidden = tape.mul(o, squashed)?;
    Ok(LstmState { cell, hidden })
}

fn check_cols(op: &'static str, w: &Tensor, n: usize) -> Result<(usize, usize), NeuralError> {
    let (rows, cols) = w.dims2();
    if cols != n {
        return Err(NeuralError::ShapeMismatch {
            op,
            expected: cols,
            found: n,
        });
    }
    Ok((rows, cols))
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = w.dims2();
    (0..rows)
        .map(|r| w.data()[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `W x + b`.
pub fn affine(w: &Tensor, x: &[f64], b: &[f64]) -> Result<Vec<f64>, NeuralError> {
    let (rows, _) = check_cols("affine", w, x.len())?;
    if b.len() != rows {
        return Err(NeuralError::ShapeMismatch {
            op: "affine bias",
            expected: rows,
            found: b.len(),
        });
    }
    Ok(matvec(w, x).iter().zip(b).map(|(a, c)| a + c).collect())
}

/// `W [x_1; ...; x_n] + b`.
pub fn concat_affine(w: &Tensor, xs: &[&[f64]], b: &[f64]) -> Result<Vec<f64>, NeuralError> {
    let x: Vec<f64> = xs.iter().flat_map(|x| x.iter().copied()).collect();
    affine(w, &x, b)
}

/// `softmax(M U s)`: one probability per row of `M`.
pub fn bilinear_scores(m: &Tensor, u: &Tensor, s: &[f64]) -> Result<Vec<f64>, NeuralError> {
    let (urows, _) = check_cols("bilinear U", u, s.len())?;
    check_cols("bilinear M", m, urows)?;
    let us = matvec(u, s);
    Ok(softmax(&matvec(m, &us)))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    masked_softmax(logits, None)
}

/// `(-log softmax(logits)[target], softmax - onehot)`.
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>), NeuralError> {
    if target >= logits.len() {
        return Err(NeuralError::IndexOutOfRange {
            op: "softmax_xent",
            index: target,
            len: logits.len(),
        });
    }
    let mut grad = softmax(logits);
    let loss = -grad[target].ln();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_lstm_keeps_zero_state() {
        let mut store = ParamStore::new();
        let w = store.add_zeros("w", &[8, 5]);
        let b = store.add_zeros("b", &[8]);
        let p = LstmParams { w, b, input: 3, hidden: 2 };
        let mut tape = Tape::new(&store);
        let s0 = LstmState::zeros(&mut tape, 2);
        let x = tape.zeros(3);
        let s1 = lstm_step(&mut tape, &p, s0, x).unwrap();
        assert_eq!(tape.value(s1.cell), [0.0, 0.0]);
        assert_eq!(tape.value(s1.hidden), [0.0, 0.0]);
    }

    #[test]
    fn lstm_rejects_wrong_input_size() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::new(&mut store, "cell", 3, 2, 0.1, &mut rng);
        let mut tape = Tape::new(&store);
        let s0 = LstmState::zeros(&mut tape, 2);
        let x = tape.zeros(4);
        assert!(matches!(
            lstm_step(&mut tape, &p, s0, x),
            Err(NeuralError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn affine_identity_and_mismatch() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(affine(&w, &[3.0, -4.0], &[0.0, 0.0]).unwrap(), [3.0, -4.0]);
        assert!(affine(&w, &[1.0, 2.0, 3.0], &[0.0, 0.0]).is_err());
        assert!(affine(&w, &[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn affine_two_by_three_by_hand() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap();
        // [1*1 + 2*0 + 3*2, -1*1 + 0.5*0 + 2*2] + [0.5, -1]
        let y = concat_affine(&w, &[&[1.0], &[0.0, 2.0]], &[0.5, -1.0]).unwrap();
        assert_eq!(y, [7.5, 2.0]);
    }

    #[test]
    fn bilinear_identity_picks_first_row() {
        let id = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = bilinear_scores(&id, &id, &[1.0, 0.0]).unwrap();
        assert!(p[0] > p[1]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_two_by_two_by_hand() {
        let m = Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 0.0, 2.0]).unwrap();
        let u = Tensor::from_vec(&[2, 2], vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        // U s = [2, 1]; M U s = [3, 2].
        let p = bilinear_scores(&m, &u, &[1.0, 1.0]).unwrap();
        let e = 1.0f64.exp();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!(bilinear_scores(&m, &u, &[1.0]).is_err());
    }

    #[test]
    fn xent_closed_forms() {
        let (loss, grad) = softmax_xent(&[2.0, 0.0], 0).unwrap();
        assert!((loss - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        let (loss, _) = softmax_xent(&[0.3; 7], 4).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        assert!(softmax_xent(&[0.0, 1.0], 2).is_err());
    }
}
