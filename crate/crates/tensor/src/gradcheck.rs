//! Central finite-difference gradient checks.
//!
//! The checker only ever evaluates the forward function; it shares no code
//! with [`Tape::backward`](crate::Tape::backward).

use crate::{ParamSet, Real};

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
    pub step: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rtol: 1e-3,
            atol: 1e-6,
            step: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checked: usize,
    pub worst_ratio: f64,
    pub mismatches: Vec<Mismatch>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// `|a - n| <= atol + rtol * max(|a|, |n|)`
pub fn close(analytic: f64, numeric: f64, tol: Tolerance) -> bool {
    (analytic - numeric).abs() <= tol.atol + tol.rtol * analytic.abs().max(numeric.abs())
}

/// Compares `analytic[p][i]` against the central difference of `loss` in
/// every coordinate of `params` (or every `stride`-th coordinate when the set
/// is large).
pub fn check_params<T: Real>(
    params: &ParamSet<T>,
    analytic: &[Vec<T>],
    stride: usize,
    tol: Tolerance,
    mut loss: impl FnMut(&ParamSet<T>) -> f64,
) -> Report {
    let mut report = Report::default();
    let mut probe = params.clone();
    let mut counter = 0usize;
    for (pi, name) in params.names().iter().enumerate() {
        let n = params.tensors()[pi].len();
        for i in 0..n {
            counter += 1;
            if stride > 1 && counter % stride != 0 {
                continue;
            }
            let orig = params.tensors()[pi].data()[i];
            let h = T::from_f64(tol.step);
            probe.iter_mut().nth(pi).unwrap().data_mut()[i] = orig + h;
            let up = loss(&probe);
            probe.iter_mut().nth(pi).unwrap().data_mut()[i] = orig - h;
            let down = loss(&probe);
            probe.iter_mut().nth(pi).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * tol.step);
            let a = analytic[pi][i].as_f64();
            report.checked += 1;
            let denom = tol.atol + tol.rtol * a.abs().max(numeric.abs());
            report.worst_ratio = report.worst_ratio.max((a - numeric).abs() / denom);
            if !close(a, numeric, tol) {
                report.mismatches.push(Mismatch {
                    param: name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    report
}

/// Checks the tape gradient of a scalar function of `inputs` in every
/// coordinate. `f` builds the graph from one leaf per input.
pub fn check_fn<T: Real>(
    inputs: &[crate::Tensor<T>],
    tol: Tolerance,
    f: impl Fn(&mut crate::Tape<T>, &[crate::Var]) -> crate::Result<crate::Var>,
) -> crate::Result<Report> {
    let mut params = ParamSet::new();
    for (i, t) in inputs.iter().enumerate() {
        params.add(format!("input{i}"), t.clone());
    }
    let mut tape = crate::Tape::new();
    let vars = tape.bind(&params);
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?.for_params(&vars, &params);
    let eval = |p: &ParamSet<T>| -> f64 {
        let mut tape = crate::Tape::new();
        let vars = tape.bind(p);
        let out = f(&mut tape, &vars).expect("forward succeeded once");
        tape.value(out).item().as_f64()
    };
    Ok(check_params(&params, &grads, 1, tol, eval))
}
