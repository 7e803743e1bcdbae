//! Small building blocks shared by the encoder, post-encoders and heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::Params;
use crate::tensor::Scalar;

/// Forward-pass mode. Training carries the generator that drives dropout.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Inverted dropout: zero with probability `p`, scale survivors by `1/(1−p)`.
/// Identity in eval mode or when `p == 0`.
pub fn dropout<S: Scalar>(g: &mut Graph<S>, x: Var, p: f64, mode: &mut Mode) -> Result<Var> {
    let rng = match mode {
        Mode::Train(rng) if p > 0.0 => rng,
        _ => return Ok(x),
    };
    let keep = S::of(1.0 / (1.0 - p));
    let n = g.value(x).len();
    let m: Vec<S> = (0..n)
        .map(|_| if rng.random::<f64>() < p { S::zero() } else { keep })
        .collect();
    g.mul_const(x, m)
}

/// `x · W + b` with parameters `{prefix}.w` and `{prefix}.b`.
pub fn linear<S: Scalar>(g: &mut Graph<S>, params: &Params<S>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(params, &format!("{prefix}.w"))?;
    let b = g.param(params, &format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::vector(&[1.0, 2.0, 3.0]));
        let y = dropout(&mut g, x, 0.5, &mut Mode::Eval).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[1000], 1.0));
        let y = dropout(&mut g, x, 0.25, &mut Mode::Train(&mut rng)).unwrap();
        let vals = g.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
        let zeros = vals.iter().filter(|&&v| v == 0.0).count();
        assert!((200..300).contains(&zeros), "{zeros}");
    }
}
