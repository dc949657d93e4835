//! Central finite-difference gradient oracle.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the maximum occurred.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Relative error used by the oracle: `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(x+h·e) - f(x-h·e)) / 2h` for every coordinate of every
/// input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, &var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(var)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[j], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, j);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

/// Single-input form of [`check_gradients`]; returns the maximum relative
/// error.
pub fn finite_diff_check<F>(x: &Tensor<f64>, h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    check_gradients(std::slice::from_ref(x), h, |tape, vars| f(tape, vars[0]))
        .map(|r| r.max_rel_error)
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::shape(format!(
            "gradient check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        // x·xᵀ for a 1×2 row is the sum of squares; analytic gradient [2, 4].
        let xm = Tensor::new([1, 2], vec![1.0, 2.0]).unwrap();
        let err = finite_diff_check(&xm, 1e-5, |t, v| {
            let s = t.matmul_nt(v, v)?;
            Ok(t.sum(s))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");

        let mut tape = Tape::new();
        let xv = tape.param(xm);
        let s = tape.matmul_nt(xv, xv).unwrap();
        let s = tape.sum(s);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(xv).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn l1_away_from_ties() {
        let x = Tensor::new([3], vec![0.3, -1.2, 2.0]).unwrap();
        let err = finite_diff_check(&x, 1e-5, |t, v| {
            let target = t.constant(Tensor::new([3], vec![1.0, 0.0, -0.5]).unwrap());
            t.l1_loss(v, target)
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
