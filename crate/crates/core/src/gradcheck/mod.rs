//! Central-difference gradient checking at 64-bit precision.
//!
//! Analytic gradients come from one backward sweep over the recorded
//! function; numeric gradients from re-running the function forward with
//! each input coordinate nudged by ±eps. The error per coordinate is
//! `|a - n| / max(1, |a|, |n|)`.
//!
//! A nudge that flips the sign of any relu pre-activation straddles a kink
//! and the central difference no longer estimates the derivative. When that
//! happens the step is shrunk by 10× (at most four times) until both nudged
//! evaluations stay on the base evaluation's linear piece.

mod suite;

pub use suite::{run_suite, SuiteConfig, SuiteEntry, SUITE_TOLERANCE};

use crate::error::{Error, Result};
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-3;

const MAX_SHRINKS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

#[derive(Clone, Debug)]
pub struct GradChecker {
    pub eps: f64,
    /// Op whose backward rule is deliberately corrupted.
    pub fault: Option<OpKind>,
}

impl Default for GradChecker {
    fn default() -> Self {
        Self { eps: DEFAULT_EPS, fault: None }
    }
}

impl GradChecker {
    pub fn new(eps: f64) -> Self {
        Self { eps, fault: None }
    }

    pub fn with_fault(mut self, fault: Option<OpKind>) -> Self {
        self.fault = fault;
        self
    }

    /// Checks `f`, which records a scalar-valued function of `inputs` on the
    /// tape it is handed and returns the output var.
    pub fn check<F>(&self, f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        if !(self.eps > 0.0) {
            return Err(Error::Value(format!("eps must be positive, got {}", self.eps)));
        }
        let mut tape = Tape::new();
        if let Some(kind) = self.fault {
            tape = tape.with_fault(kind);
        }
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Shape(format!(
                "gradient check needs a scalar function, got output {:?}",
                tape.shape(out)
            )));
        }
        let base_pattern = tape.relu_pattern();
        let grads = tape.backward(out)?;

        let eval = |perturbed: &[Tensor<f64>]| -> Result<(f64, Vec<bool>)> {
            let mut t = Tape::new();
            let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
            let o = f(&mut t, &vs)?;
            Ok((t.value(o).data()[0], t.relu_pattern()))
        };

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
            coordinates: 0,
        };
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (idx, var) in vars.iter().enumerate() {
            let analytic = grads.wrt(*var);
            for coord in 0..inputs[idx].len() {
                let orig = inputs[idx].data()[coord];
                let mut step = self.eps;
                let mut numeric = 0.0;
                for attempt in 0..=MAX_SHRINKS {
                    work[idx].data_mut()[coord] = orig + step;
                    let (fp, pp) = eval(&work)?;
                    work[idx].data_mut()[coord] = orig - step;
                    let (fm, pm) = eval(&work)?;
                    numeric = (fp - fm) / (2.0 * step);
                    if (pp == base_pattern && pm == base_pattern) || attempt == MAX_SHRINKS {
                        break;
                    }
                    step /= 10.0;
                }
                work[idx].data_mut()[coord] = orig;
                let a = analytic.data()[coord];
                let err = relative_error(a, numeric);
                report.coordinates += 1;
                if err > report.max_rel_error || report.coordinates == 1 {
                    report.max_rel_error = err;
                    report.worst = (idx, coord);
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
        Ok(report)
    }
}

/// [`GradChecker::check`] with step `eps`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    GradChecker::new(eps).check(f, inputs)
}
