//! Optional shared block between the encoder and the task heads: a
//! two-layer bidirectional LSTM with summed directions, or a single
//! Highway layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{dropout, linear, Mode};
use crate::params::{Init, Params};
use crate::tensor::{Scalar, Tensor};

pub const LSTM_LAYERS: usize = 2;
pub const LSTM_DROPOUT: f64 = 0.25;
pub const LSTM_PREFIX: &str = "post.lstm";
pub const HIGHWAY_PREFIX: &str = "post.highway";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostEncoder {
    #[default]
    Identity,
    Bilstm,
    Highway,
}

impl PostEncoder {
    pub fn init_params<S: Scalar, R: Rng>(self, d: usize, params: &mut Params<S>, rng: &mut R) {
        match self {
            PostEncoder::Identity => {}
            PostEncoder::Bilstm => init_bilstm(d, params, rng),
            PostEncoder::Highway => init_highway(d, params, rng),
        }
    }

    pub fn apply<S: Scalar>(
        self,
        g: &mut Graph<S>,
        params: &Params<S>,
        states: Var,
        mask: &[bool],
        mode: &mut Mode,
    ) -> Result<Var> {
        match self {
            PostEncoder::Identity => Ok(states),
            PostEncoder::Bilstm => bilstm_encode(g, params, LSTM_PREFIX, states, mask, mode),
            PostEncoder::Highway => highway_forward(g, params, HIGHWAY_PREFIX, states),
        }
    }

    /// Row used as the sequence-level classification input: the last
    /// unmasked step after recurrence, position 0 otherwise.
    pub fn class_vector<S: Scalar>(self, g: &mut Graph<S>, states: Var, mask: &[bool]) -> Result<Var> {
        match self {
            PostEncoder::Bilstm => last_step_representation(g, states, mask),
            _ => g.slice_rows(states, 0, 1),
        }
    }
}

fn lstm_prefix(layer: usize, dir: &str) -> String {
    format!("{LSTM_PREFIX}.layer{layer}.{dir}")
}

/// Input weights `{prefix}.x.{w,b}` (D×4D, gate order i, f, g, o) and
/// recurrent weights `{prefix}.h.w` (D×4D). Forget-gate bias starts at +1.
pub fn init_lstm_cell<S: Scalar, R: Rng>(prefix: &str, d: usize, params: &mut Params<S>, rng: &mut R) {
    params.init(&format!("{prefix}.x.w"), &[d, 4 * d], Init::XavierUniform, true, rng);
    params.init(&format!("{prefix}.h.w"), &[d, 4 * d], Init::XavierUniform, true, rng);
    let mut b = vec![0.0; 4 * d];
    b[d..2 * d].iter_mut().for_each(|v| *v = 1.0);
    params.insert(
        &format!("{prefix}.x.b"),
        Tensor::from_f64(&[4 * d], &b).expect("bias shape"),
        false,
    );
}

fn init_bilstm<S: Scalar, R: Rng>(d: usize, params: &mut Params<S>, rng: &mut R) {
    for l in 0..LSTM_LAYERS {
        for dir in ["fw", "bw"] {
            init_lstm_cell(&lstm_prefix(l, dir), d, params, rng);
        }
    }
}

fn init_highway<S: Scalar, R: Rng>(d: usize, params: &mut Params<S>, rng: &mut R) {
    let p = HIGHWAY_PREFIX;
    params.init(&format!("{p}.h.w"), &[d, d], Init::XavierUniform, true, rng);
    params.init(&format!("{p}.h.b"), &[d], Init::Zeros, false, rng);
    params.init(&format!("{p}.t.w"), &[d, d], Init::XavierUniform, true, rng);
    params.init(&format!("{p}.t.b"), &[d], Init::Const(-1.0), false, rng);
}

/// One LSTM step from a precomputed input projection `xw = x·W_x + b`
/// (1×4D) and the previous state (1×D each).
fn lstm_step<S: Scalar>(g: &mut Graph<S>, w_h: Var, xw: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let d = g.value(h_prev).len();
    let hw = g.matmul(h_prev, w_h)?;
    let z = g.add(xw, hw)?;
    let zi = g.slice_cols(z, 0, d)?;
    let zf = g.slice_cols(z, d, d)?;
    let zg = g.slice_cols(z, 2 * d, d)?;
    let zo = g.slice_cols(z, 3 * d, d)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// `c_t = f⊙c_prev + i⊙g`, `h_t = o⊙tanh(c_t)` for 1×D row vectors.
pub fn lstm_cell<S: Scalar>(
    g: &mut Graph<S>,
    params: &Params<S>,
    prefix: &str,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let xw = linear(g, params, &format!("{prefix}.x"), x_t)?;
    let w_h = g.param(params, &format!("{prefix}.h.w"))?;
    lstm_step(g, w_h, xw, h_prev, c_prev)
}

/// Runs one direction over the rows of `x` (already restricted to unmasked
/// positions) and returns the per-step hidden states in input order.
fn lstm_direction<S: Scalar>(
    g: &mut Graph<S>,
    params: &Params<S>,
    prefix: &str,
    x: Var,
    reverse: bool,
) -> Result<Vec<Var>> {
    let (t, d) = g.value(x).dims2();
    let xw = linear(g, params, &format!("{prefix}.x"), x)?;
    let w_h = g.param(params, &format!("{prefix}.h.w"))?;
    let mut h = g.constant(Tensor::zeros(&[1, d]));
    let mut c = h;
    let mut out = vec![h; t];
    let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
    for step in order {
        let xt = g.slice_rows(xw, step, 1)?;
        (h, c) = lstm_step(g, w_h, xt, h, c)?;
        out[step] = h;
    }
    Ok(out)
}

/// Stacked bidirectional LSTM over the unmasked positions of `states`,
/// forward and backward hidden states summed so the width stays D.
/// Padded rows of the output are zero.
pub fn bilstm_encode<S: Scalar>(
    g: &mut Graph<S>,
    params: &Params<S>,
    prefix: &str,
    states: Var,
    mask: &[bool],
    mode: &mut Mode,
) -> Result<Var> {
    let (t, d) = g.value(states).dims2();
    if mask.len() != t {
        return Err(Error::dim(format!("bilstm: mask length {} for {t} rows", mask.len())));
    }
    let live: Vec<usize> = (0..t).filter(|&i| mask[i]).collect();
    if live.is_empty() {
        return Err(Error::contract("bilstm: fully masked sequence"));
    }
    let mut x = if live.len() == t {
        states
    } else {
        let rows = live
            .iter()
            .map(|&i| g.slice_rows(states, i, 1))
            .collect::<Result<Vec<_>>>()?;
        g.concat_rows(&rows)?
    };
    for l in 0..LSTM_LAYERS {
        if l > 0 {
            x = dropout(g, x, LSTM_DROPOUT, mode)?;
        }
        let fw = lstm_direction(g, params, &format!("{prefix}.layer{l}.fw"), x, false)?;
        let bw = lstm_direction(g, params, &format!("{prefix}.layer{l}.bw"), x, true)?;
        let rows = fw
            .into_iter()
            .zip(bw)
            .map(|(a, b)| g.add(a, b))
            .collect::<Result<Vec<_>>>()?;
        x = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows)? };
    }
    if live.len() == t {
        return Ok(x);
    }
    let zero = g.constant(Tensor::zeros(&[1, d]));
    let mut rows = vec![zero; t];
    for (k, &i) in live.iter().enumerate() {
        rows[i] = g.slice_rows(x, k, 1)?;
    }
    g.concat_rows(&rows)
}

/// State at the final unmasked timestep, as a 1×D row.
pub fn last_step_representation<S: Scalar>(g: &mut Graph<S>, states: Var, mask: &[bool]) -> Result<Var> {
    let last = mask
        .iter()
        .rposition(|&m| m)
        .ok_or_else(|| Error::contract("last_step_representation: fully masked sequence"))?;
    g.slice_rows(states, last, 1)
}

/// `y = ReLU(zW_H + b_H) ⊙ T + z ⊙ (1 − T)` with `T = σ(zW_T + b_T)`.
pub fn highway_forward<S: Scalar>(g: &mut Graph<S>, params: &Params<S>, prefix: &str, z: Var) -> Result<Var> {
    let h = linear(g, params, &format!("{prefix}.h"), z)?;
    let h = g.relu(h);
    let t = linear(g, params, &format!("{prefix}.t"), z)?;
    let t = g.sigmoid(t);
    let carry = g.one_minus(t);
    let a = g.mul(h, t)?;
    let b = g.mul(z, carry)?;
    g.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![r, c], data).unwrap()
    }

    fn bilstm_params(d: usize, seed: u64) -> Params<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        PostEncoder::Bilstm.init_params(d, &mut p, &mut rng);
        p
    }

    fn fill(params: &mut Params<f64>, name: &str, v: f64) {
        params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|x| *x = v);
    }

    #[test]
    fn saturated_gates_carry_the_cell() {
        let d = 3;
        let mut p = bilstm_params(d, 1);
        let pre = lstm_prefix(0, "fw");
        fill(&mut p, &format!("{pre}.x.w"), 0.0);
        fill(&mut p, &format!("{pre}.h.w"), 0.0);
        let mut b = vec![0.0; 4 * d];
        b[..d].iter_mut().for_each(|v| *v = -1e4);
        b[d..2 * d].iter_mut().for_each(|v| *v = 1e4);
        *p.get_mut(&format!("{pre}.x.b")).unwrap() = Tensor::from_f64(&[4 * d], &b).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(&[&[0.3, -0.7, 1.1]]));
        let h0 = g.input(Tensor::matrix(&[&[0.1, 0.2, 0.3]]));
        let c0 = g.input(Tensor::matrix(&[&[0.5, -2.0, 4.0]]));
        let (_, c) = lstm_cell(&mut g, &p, &pre, x, h0, c0).unwrap();
        assert_eq!(g.value(c).data(), g.value(c0).data());
    }

    #[test]
    fn zero_parameters_give_zero_hidden_state() {
        let d = 4;
        let mut p = bilstm_params(d, 2);
        let pre = lstm_prefix(0, "fw");
        for n in ["x.w", "h.w", "x.b"] {
            fill(&mut p, &format!("{pre}.{n}"), 0.0);
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(&[&[1.0, -2.0, 0.5, 3.0]]));
        let z = g.constant(Tensor::zeros(&[1, d]));
        let (h, c) = lstm_cell(&mut g, &p, &pre, x, z, z).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_gradients_over_three_steps() {
        let d = 3;
        let p = bilstm_params(d, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs = random(&mut rng, 3, d);
        let pre = lstm_prefix(0, "fw");
        let report = grad_check_params(&p, |g, p| {
            let x = g.constant(xs.clone());
            let mut h = g.constant(Tensor::zeros(&[1, d]));
            let mut c = h;
            for t in 0..3 {
                let xt = g.slice_rows(x, t, 1)?;
                (h, c) = lstm_cell(g, p, &pre, xt, h, c)?;
            }
            let s = g.mul(h, h)?;
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }

    #[test]
    fn single_step_sums_both_directions() {
        let d = 3;
        let p = bilstm_params(d, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs = random(&mut rng, 1, d);
        let mut g = Graph::new();
        let x = g.input(xs.clone());
        let y = bilstm_encode(&mut g, &p, LSTM_PREFIX, x, &[true], &mut Mode::Eval).unwrap();
        // rebuild the two layers by hand
        let mut cur = g.input(xs);
        for l in 0..LSTM_LAYERS {
            let z = g.constant(Tensor::zeros(&[1, d]));
            let (hf, _) = lstm_cell(&mut g, &p, &lstm_prefix(l, "fw"), cur, z, z).unwrap();
            let (hb, _) = lstm_cell(&mut g, &p, &lstm_prefix(l, "bw"), cur, z, z).unwrap();
            cur = g.add(hf, hb).unwrap();
        }
        for (a, b) in g.value(y).data().iter().zip(g.value(cur).data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn keeps_width_and_is_deterministic_in_eval() {
        for (t, d) in [(1, 2), (4, 3), (7, 5)] {
            let p = bilstm_params(d, 7);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let xs = random(&mut rng, t, d);
            let run = || {
                let mut g = Graph::new();
                let x = g.input(xs.clone());
                let y = bilstm_encode(&mut g, &p, LSTM_PREFIX, x, &vec![true; t], &mut Mode::Eval).unwrap();
                g.value(y).clone()
            };
            let a = run();
            assert_eq!(a.shape(), &[t, d]);
            assert_eq!(a, run());
        }
    }

    #[test]
    fn reversed_input_with_swapped_directions_mirrors_output() {
        let (t, d) = (5, 3);
        let p = bilstm_params(d, 9);
        let mut swapped = Params::new();
        for (name, e) in p.iter() {
            let twin = if name.contains(".fw.") {
                name.replace(".fw.", ".bw.")
            } else {
                name.replace(".bw.", ".fw.")
            };
            swapped.insert(&twin, e.tensor.clone(), e.decay);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let xs = random(&mut rng, t, d);
        let rev_rows: Vec<f64> = (0..t).rev().flat_map(|r| xs.row(r).to_vec()).collect();
        let xr = Tensor::new(vec![t, d], rev_rows).unwrap();
        let mut g = Graph::new();
        let x = g.input(xs);
        let y = bilstm_encode(&mut g, &p, LSTM_PREFIX, x, &[true; 5], &mut Mode::Eval).unwrap();
        // a graph binds each parameter name once, so the twin needs its own
        let mut g2 = Graph::new();
        let x2 = g2.input(xr);
        let y2 = bilstm_encode(&mut g2, &swapped, LSTM_PREFIX, x2, &[true; 5], &mut Mode::Eval).unwrap();
        for r in 0..t {
            for (a, b) in g.value(y).row(r).iter().zip(g2.value(y2).row(t - 1 - r)) {
                assert!((a - b).abs() < 1e-12, "row {r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn padding_rows_are_zero_and_prefix_is_unchanged() {
        let d = 3;
        let p = bilstm_params(d, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xs = random(&mut rng, 5, d);
        let head: Vec<f64> = xs.data()[..3 * d].to_vec();
        let mut g = Graph::new();
        let x = g.input(xs);
        let y = bilstm_encode(&mut g, &p, LSTM_PREFIX, x, &[true, true, true, false, false], &mut Mode::Eval)
            .unwrap();
        let x3 = g.input(Tensor::new(vec![3, d], head).unwrap());
        let y3 = bilstm_encode(&mut g, &p, LSTM_PREFIX, x3, &[true; 3], &mut Mode::Eval).unwrap();
        assert_eq!(&g.value(y).data()[..3 * d], g.value(y3).data());
        assert!(g.value(y).data()[3 * d..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn last_step_follows_the_mask() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..10).map(f64::from).collect();
        let s = g.input(Tensor::new(vec![5, 2], data).unwrap());
        let a = last_step_representation(&mut g, s, &[true; 5]).unwrap();
        assert_eq!(g.value(a).data(), &[8.0, 9.0]);
        let b = last_step_representation(&mut g, s, &[true, true, true, false, false]).unwrap();
        assert_eq!(g.value(b).data(), &[4.0, 5.0]);
        assert!(matches!(
            last_step_representation(&mut g, s, &[false; 5]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn last_step_matches_final_bilstm_row() {
        let d = 2;
        let p = bilstm_params(d, 13);
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(&[&[0.1, 0.2], &[0.3, -0.4], &[0.9, 0.0]]));
        let y = bilstm_encode(&mut g, &p, LSTM_PREFIX, x, &[true; 3], &mut Mode::Eval).unwrap();
        let v = PostEncoder::Bilstm.class_vector(&mut g, y, &[true; 3]).unwrap();
        assert_eq!(g.value(v).data(), g.value(y).row(2));
    }

    fn highway_params(d: usize, seed: u64) -> Params<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        PostEncoder::Highway.init_params(d, &mut p, &mut rng);
        p
    }

    #[test]
    fn highway_gate_extremes() {
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let zs = random(&mut rng, 3, d);
        let mut p = highway_params(d, 15);
        fill(&mut p, "post.highway.t.b", -1e4);
        let mut g = Graph::new();
        let z = g.input(zs.clone());
        let y = highway_forward(&mut g, &p, HIGHWAY_PREFIX, z).unwrap();
        assert_eq!(g.value(y).data(), zs.data());

        fill(&mut p, "post.highway.t.b", 1e4);
        let mut g = Graph::new();
        let z = g.input(zs);
        let y = highway_forward(&mut g, &p, HIGHWAY_PREFIX, z).unwrap();
        let h = linear(&mut g, &p, "post.highway.h", z).unwrap();
        let h = g.relu(h);
        assert_eq!(g.value(y).data(), g.value(h).data());
    }

    #[test]
    fn highway_output_is_between_projection_and_input() {
        let d = 5;
        let p = highway_params(d, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut g = Graph::new();
        let z = g.input(random(&mut rng, 6, d));
        let y = highway_forward(&mut g, &p, HIGHWAY_PREFIX, z).unwrap();
        let h = linear(&mut g, &p, "post.highway.h", z).unwrap();
        let h = g.relu(h);
        let t = linear(&mut g, &p, "post.highway.t", z).unwrap();
        let t = g.sigmoid(t);
        assert!(g.value(t).data().iter().all(|&v| v > 0.0 && v < 1.0));
        for i in 0..6 * d {
            let (a, b, v) = (g.value(h).data()[i], g.value(z).data()[i], g.value(y).data()[i]);
            assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
        }
    }

    #[test]
    fn highway_gradients() {
        let d = 4;
        let p = highway_params(d, 18);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let zs = random(&mut rng, 3, d);
        let report = grad_check_params(&p, |g, p| {
            let z = g.constant(zs.clone());
            let y = highway_forward(g, p, HIGHWAY_PREFIX, z)?;
            let s = g.mul(y, y)?;
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
