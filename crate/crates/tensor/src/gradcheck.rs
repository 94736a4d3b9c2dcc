//! Central finite-difference gradient checking.
//!
//! Relative error is `|a − n| / max(|a|, |n|, FLOOR)`. Components smaller
//! than `FLOOR` are therefore judged on absolute error, where finite
//! differences cannot resolve a relative one.

use crate::{Graph, Result, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst: Option<Mismatch>,
}

impl Report {
    pub fn record(&mut self, m: Mismatch) {
        self.checked += 1;
        let e = relative_error(m.analytic, m.numeric);
        if e > self.max_relative_error || self.worst.is_none() {
            self.max_relative_error = self.max_relative_error.max(e);
            self.worst = Some(m);
        }
    }
}

/// `(f(x+h) − f(x−h)) / 2h` for the scalar at `slot(state)`.
pub fn central_difference<S>(
    state: &mut S,
    slot: impl Fn(&mut S) -> &mut f64,
    eval: impl Fn(&S) -> Result<f64>,
    h: f64,
) -> Result<f64> {
    let x0 = *slot(state);
    *slot(state) = x0 + h;
    let plus = eval(state);
    *slot(state) = x0 - h;
    let minus = eval(state);
    *slot(state) = x0;
    Ok((plus? - minus?) / (2.0 * h))
}

/// Checks the gradient of the scalar built by `build` with respect to every
/// element of every input.
pub fn check_inputs<'p, F>(inputs: &[Tensor], build: F) -> Result<Report>
where
    F: Fn(&mut Graph<'p>, &[Var]) -> Result<Var>,
{
    let eval = |ins: &Vec<Tensor>| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone(), false)).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.scalar(out))
    };
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
        let out = build(&mut g, &vars)?;
        let grads = g.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    };
    let mut state = inputs.to_vec();
    let mut report = Report::default();
    for (input, grad) in analytic.iter().enumerate() {
        for (index, &a) in grad.iter().enumerate() {
            let numeric = central_difference(&mut state, |s| &mut s[input].data_mut()[index], eval, DEFAULT_STEP)?;
            report.record(Mismatch {
                input,
                index,
                analytic: a,
                numeric,
            });
        }
    }
    Ok(report)
}
