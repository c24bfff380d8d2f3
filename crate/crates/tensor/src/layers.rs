//! Composite layers built from tape primitives.

use crate::{Real, Result, Tape, TensorError, Var};

/// Elementwise nonlinearity selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Relu,
}

impl<T: Real> Tape<T> {
    pub fn activate(&mut self, x: Var, act: Activation) -> Var {
        match act {
            Activation::Elu => self.elu(x),
            Activation::Relu => self.relu(x),
        }
    }

    /// One LSTM step over `N` independent rows.
    ///
    /// `x: [N, In]`, `h, c: [N, Hd]`, `w: [In + Hd, 4 Hd]`, `b: [4 Hd]`. Gate
    /// blocks in `w`'s columns are ordered input, forget, candidate, output.
    /// Returns `(h', c')` with `c' = f * c + i * g` and `h' = o * tanh(c')`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w: Var, b: Var) -> Result<(Var, Var)> {
        let hs = self.shape(h).to_vec();
        if hs.len() != 2 || self.shape(c) != hs.as_slice() {
            return Err(TensorError::shape("lstm_cell", &hs, self.shape(c)));
        }
        let xs = self.shape(x);
        if xs.len() != 2 || xs[0] != hs[0] {
            return Err(TensorError::shape("lstm_cell", format!("[{}, In]", hs[0]), xs));
        }
        let hd = hs[1];
        let ws = self.shape(w);
        if ws.len() != 2 || ws[1] != 4 * hd || ws[0] != xs[1] + hd {
            return Err(TensorError::shape("lstm_cell", [xs[1] + hd, 4 * hd], ws));
        }
        let xh = self.concat(&[x, h])?;
        let gates = self.linear(xh, w, Some(b))?;
        let i = self.slice(gates, 0, hd)?;
        let f = self.slice(gates, hd, hd)?;
        let g = self.slice(gates, 2 * hd, hd)?;
        let o = self.slice(gates, 3 * hd, hd)?;
        let i = self.sigmoid(i);
        let f = self.sigmoid(f);
        let g = self.tanh(g);
        let o = self.sigmoid(o);
        let keep = self.mul(f, c)?;
        let write = self.mul(i, g)?;
        let c_next = self.add(keep, write)?;
        let tc = self.tanh(c_next);
        let h_next = self.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}
