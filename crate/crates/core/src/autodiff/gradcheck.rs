//! Central finite-difference gradient checking.

use super::param::ParamRef;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor of the relative error, so that two near-zero
    /// gradients compare by absolute difference.
    pub floor: f64,
    /// Upper bound on perturbed entries per parameter; larger tensors are
    /// sampled with a fixed stride.
    pub max_entries: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-6,
            max_entries: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `param[index]` with the largest error.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn scalar_of<F>(f: &F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let out = f(&tape)?;
    out.item()
}

/// Compares backward-pass gradients of the scalar produced by `f` against
/// central differences, for every parameter in `params`.
pub fn check_gradients<F>(
    params: &[ParamRef<f64>],
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>) -> Result<Var<'t, f64>>,
{
    for p in params {
        p.zero_grad();
    }
    {
        let tape = Tape::new();
        let loss = f(&tape)?;
        tape.backward(loss)?;
    }
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for p in params {
        let n = p.numel();
        let analytic = p
            .grad()
            .map(|g| g.into_data())
            .unwrap_or_else(|| vec![0.0; n]);
        let stride = n.div_ceil(opts.max_entries.max(1)).max(1);
        for idx in (0..n).step_by(stride) {
            let orig = p.value().data()[idx];
            p.value_mut().data_mut()[idx] = orig + opts.step;
            let plus = scalar_of(&f);
            p.value_mut().data_mut()[idx] = orig - opts.step;
            let minus = scalar_of(&f);
            p.value_mut().data_mut()[idx] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.step);
            if !numeric.is_finite() || !analytic[idx].is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at {}[{idx}]",
                    p.name()
                )));
            }
            let err = relative_error(analytic[idx], numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_empty() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = format!("{}[{idx}]", p.name());
            }
        }
    }
    Ok(report)
}
