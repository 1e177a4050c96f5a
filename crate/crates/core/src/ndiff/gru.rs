use super::graph::Var;
use super::NdError;

/// Gated recurrent unit weights bound to a graph.
///
/// Gate layout along the last axis of `w_x` and `b` is `[z | r | n]`.
/// `u_zr` holds the recurrent weights of the update and reset gates,
/// `u_n` the recurrent weight of the candidate, which sees `r ⊙ h_prev`.
#[derive(Clone, Copy, Debug)]
pub struct GruVars<'g> {
    pub w_x: Var<'g>,
    pub u_zr: Var<'g>,
    pub u_n: Var<'g>,
    pub b: Var<'g>,
}

impl<'g> GruVars<'g> {
    pub fn hidden(&self) -> usize {
        self.u_n.shape()[0]
    }

    /// Input projection `x · w_x + b` for a batch of rows, `[n × 3·hidden]`.
    pub fn project(&self, x: Var<'g>) -> Result<Var<'g>, NdError> {
        x.matmul(self.w_x)?.add_row(self.b)
    }

    /// One recurrence step from pre-projected inputs.
    pub fn step(&self, xw: Var<'g>, h_prev: Var<'g>) -> Result<Var<'g>, NdError> {
        let d = self.hidden();
        let xw_shape = xw.shape();
        let h_shape = h_prev.shape();
        if xw_shape.len() != 2 || xw_shape[1] != 3 * d || h_shape != [xw_shape[0], d] {
            return Err(NdError::Shape(format!(
                "gru step: projected input {xw_shape:?} and state {h_shape:?} for hidden {d}"
            )));
        }
        let zr = xw
            .slice_cols(0, 2 * d)?
            .add(h_prev.matmul(self.u_zr)?)?
            .sigmoid();
        let z = zr.slice_cols(0, d)?;
        let r = zr.slice_cols(d, 2 * d)?;
        let cand = xw
            .slice_cols(2 * d, 3 * d)?
            .add(r.mul(h_prev)?.matmul(self.u_n)?)?
            .tanh();
        // h = (1 - z) ⊙ h_prev + z ⊙ cand
        h_prev.add(z.mul(cand.sub(h_prev)?)?)
    }

    /// Full cell: `x` is `[n × d_in]`, `h_prev` is `[n × hidden]`.
    pub fn cell(&self, x: Var<'g>, h_prev: Var<'g>) -> Result<Var<'g>, NdError> {
        let d_in = self.w_x.shape()[0];
        if x.shape().len() != 2 || x.shape()[1] != d_in {
            return Err(NdError::Shape(format!(
                "gru cell: input {:?} for d_in {d_in}",
                x.shape()
            )));
        }
        let xw = self.project(x)?;
        self.step(xw, h_prev)
    }
}

/// Shapes of a GRU bundle with input width `d_in` and hidden width `d`.
pub fn gru_shapes(d_in: usize, d: usize) -> [(&'static str, Vec<usize>); 4] {
    [
        ("w_x", vec![d_in, 3 * d]),
        ("u_zr", vec![d, 2 * d]),
        ("u_n", vec![d, d]),
        ("b", vec![3 * d]),
    ]
}
