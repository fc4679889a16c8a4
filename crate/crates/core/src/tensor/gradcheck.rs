//! Central finite-difference gradient checking.

use super::{Tape, Tensor4, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Combine quotients at `step` and `step / 2` as `(4·D(h/2) − D(h)) / 3`,
    /// cancelling the `h²` truncation term.
    pub extrapolate: bool,
}

impl GradCheckOptions {
    /// Fourth-order scheme for deep composites whose curvature makes the
    /// plain quotient's `h²` error visible.
    pub const fn extrapolated(step: f64, tolerance: f64) -> Self {
        GradCheckOptions {
            step,
            tolerance,
            extrapolate: true,
        }
    }
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            tolerance: 1e-5,
            extrapolate: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (input index, element index) of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Elements left out because a probe changed a discrete selection
    /// (max winner, ReLU sign, sample cell), where no derivative exists.
    pub straddled: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, inputs: &[Tensor4], track: bool) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.set_requires_grad(track);
            tape.leaf(t)
        })
        .collect();
    let root = f(&mut tape, &vars)?;
    if tape.value(root).numel() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar output, got {}",
            tape.shape(root)
        )));
    }
    Ok((tape, vars, root))
}

/// Compares the tape gradient of the scalar `f(inputs)` with respect to every
/// input element against a central difference quotient.
pub fn grad_check<F>(f: F, inputs: &[Tensor4], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, root) = evaluate(&f, inputs, true)?;
    let base = tape.value(root).data()[0];
    let pieces = tape.selections();
    let (again, _, r2) = evaluate(&f, inputs, false)?;
    let repeat = again.value(r2).data()[0];
    if base.to_bits() != repeat.to_bits() {
        return Err(Error::Determinism(format!(
            "repeated evaluation gave {base} then {repeat}"
        )));
    }
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
        straddled: 0,
        tolerance: opts.tolerance,
    };
    let mut probe: Vec<Tensor4> = inputs.to_vec();
    for (ii, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let mut same_piece = true;
            let mut quotient = |h: f64| -> Result<f64> {
                let orig = t.data()[e];
                probe[ii].data_mut()[e] = orig + h;
                let (tp, _, rp) = evaluate(&f, &probe, false)?;
                let plus = tp.value(rp).data()[0];
                probe[ii].data_mut()[e] = orig - h;
                let (tm, _, rm) = evaluate(&f, &probe, false)?;
                let minus = tm.value(rm).data()[0];
                probe[ii].data_mut()[e] = orig;
                same_piece &= tp.selections() == pieces && tm.selections() == pieces;
                Ok((plus - minus) / (2.0 * h))
            };
            let coarse = quotient(opts.step)?;
            let numeric = if opts.extrapolate {
                (4.0 * quotient(0.5 * opts.step)? - coarse) / 3.0
            } else {
                coarse
            };
            if !same_piece {
                report.straddled += 1;
                continue;
            }
            let a = analytic[ii][e];
            let rel = relative_error(a, numeric);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((ii, e));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
