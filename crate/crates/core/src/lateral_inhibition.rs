//! Lateral inhibition gating.
//!
//! For an embedding row `x` the layer computes a gate
//! `g = H(x · ZeroDiag(Wᵀ) + b)` and outputs `x ⊙ g`: each dimension is kept
//! or silenced by a linear vote of the *other* dimensions. `H` is the
//! Heaviside step with `H(0) = 0`. Its derivative is replaced during
//! backpropagation by that of `sigmoid(k·)`.

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};

pub const DEFAULT_STEEPNESS: f64 = 10.0;

/// Initial bias; positive so that every gate starts open.
pub const INITIAL_BIAS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct LateralInhibitionLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub steepness: f64,
    pub width: usize,
}

impl LateralInhibitionLayer {
    /// Registers `W = 0` (`width×width`) and `b = 0.1` under `prefix`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        steepness: f64,
    ) -> Result<Self, AutodiffError> {
        Self::with_values(
            store,
            prefix,
            Tensor::zeros(&[width, width]),
            Tensor::filled(&[width], INITIAL_BIAS),
            steepness,
        )
    }

    pub fn with_values(
        store: &mut ParamStore,
        prefix: &str,
        weight: Tensor,
        bias: Tensor,
        steepness: f64,
    ) -> Result<Self, AutodiffError> {
        if !weight.is_matrix() || weight.rows() != weight.cols() {
            return Err(AutodiffError::NotSquare(weight.shape().to_vec()));
        }
        let width = weight.rows();
        if bias.len() != width {
            return Err(AutodiffError::ShapeMismatch {
                op: "lateral_inhibition",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        if steepness.is_nan() || steepness <= 0.0 {
            return Err(AutodiffError::BadSteepness(steepness));
        }
        Ok(LateralInhibitionLayer {
            weight: store.add(format!("{prefix}.weight"), weight),
            bias: store.add(format!("{prefix}.bias"), Tensor::vector(bias.into_data())),
            steepness,
            width,
        })
    }

    fn pre_activation(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        let w = tape.param(store, self.weight);
        let wt = tape.transpose(w)?;
        let inhibit = tape.zero_diag(wt)?;
        let xw = tape.matmul(x, inhibit)?;
        let b = tape.param(store, self.bias);
        tape.add(xw, b)
    }

    /// Hard gating with surrogate gradient. `x` is `[n×width]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        let pre = self.pre_activation(tape, store, x)?;
        let gate = tape.heaviside_surrogate(pre, self.steepness)?;
        tape.mul(x, gate)
    }

    /// The smooth relative of [`forward`](Self::forward): the step is replaced
    /// by `sigmoid(k·)` in the forward pass too.
    pub fn forward_relaxed(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        let pre = self.pre_activation(tape, store, x)?;
        let scaled = tape.scale(pre, self.steepness);
        let gate = tape.sigmoid(scaled);
        tape.mul(x, gate)
    }

    /// `ZeroDiag(Wᵀ)` as currently stored.
    pub fn effective_weight(&self, store: &ParamStore) -> Tensor {
        let mut t = store.get(self.weight).value.transpose();
        let n = self.width;
        for i in 0..n {
            t.data_mut()[i * n + i] = 0.0;
        }
        t
    }
}

/// Evaluates the hard layer on `x` (`[n×d]`) outside of any training graph.
pub fn li_forward(
    layer: &LateralInhibitionLayer,
    store: &ParamStore,
    x: &Tensor,
) -> Result<Tensor, AutodiffError> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let y = layer.forward(&mut tape, store, xv)?;
    Ok(tape.value(y).clone())
}
