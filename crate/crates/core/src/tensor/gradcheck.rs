use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Worst-case mismatch between autodiff and central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (input index, flat coordinate) of the worst coordinate
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Relative error floor; gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-3;

fn projection(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = crate::seed::rng(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Builds the fragment and reduces its output to a scalar with a fixed
/// random projection, so non-scalar fragments can be checked.
fn scalar_objective<F>(f: &F, inputs: &[Tensor<f64>], track: bool) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), track)).collect();
    let out = f(&mut tape, &vars)?;
    if let Some(i) = tape.value(out).first_non_finite() {
        return Err(Error::NonFinite {
            context: format!("fragment output coordinate {i}"),
        });
    }
    let w = projection(0x6772_6164, tape.value(out).len());
    let s = tape.weighted_sum(out, &w)?;
    Ok((tape, vars, s))
}

pub fn analytic_gradient<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, s) = scalar_objective(f, inputs, true)?;
    tape.backward(s)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect())
}

pub fn numeric_gradient<F>(f: &F, inputs: &[Tensor<f64>], epsilon: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let (tape, _, s) = scalar_objective(f, xs, false)?;
        Ok(tape.value(s).data()[0])
    };
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].len()];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + epsilon;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - epsilon;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *gj = (plus - minus) / (2.0 * epsilon);
            if !gj.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("numeric gradient of input {i} coordinate {j}"),
                });
            }
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest `|a - n| / max(|a|, |n|, 1e-3)` over all coordinates.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (j, (&x, &y)) in a.iter().zip(n).enumerate() {
            report.coordinates += 1;
            let err = (x - y).abs() / x.abs().max(y.abs()).max(FLOOR);
            if err > report.max_relative_error || !err.is_finite() {
                report.max_relative_error = err;
                report.worst = (i, j);
            }
        }
    }
    report
}

/// Compares reverse-mode gradients of a model fragment against central
/// differences with step `epsilon`. Always runs in f64.
pub fn finite_difference_check<F>(f: F, inputs: &[Tensor<f64>], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let a = analytic_gradient(&f, inputs)?;
    if let Some((i, j)) = a
        .iter()
        .enumerate()
        .find_map(|(i, g)| g.iter().position(|v| !v.is_finite()).map(|j| (i, j)))
    {
        return Err(Error::NonFinite {
            context: format!("analytic gradient of input {i} coordinate {j}"),
        });
    }
    let n = numeric_gradient(&f, inputs, epsilon)?;
    Ok(max_relative_error(&a, &n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = crate::seed::rng(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_map_is_exact() {
        let inputs = [random(&[5], 1), random(&[3, 5], 2), random(&[3], 3)];
        let r = finite_difference_check(|t, v| t.dense(v[0], v[1], v[2]), &inputs, 1e-5).unwrap();
        assert!(r.max_relative_error <= 1e-8, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let inputs = [random(&[5], 1), random(&[3, 5], 2), random(&[3], 3)];
        let f = |t: &mut Tape<f64>, v: &[Var]| t.dense(v[0], v[1], v[2]);
        let mut a = analytic_gradient(&f, &inputs).unwrap();
        let n = numeric_gradient(&f, &inputs, 1e-5).unwrap();
        a[1][4] += 0.1;
        let r = max_relative_error(&a, &n);
        assert!(r.max_relative_error > 1e-2);
        assert_eq!(r.worst, (1, 4));
    }

    #[test]
    fn non_finite_output_aborts() {
        let inputs = [Tensor::scalar(f64::NAN)];
        let err = finite_difference_check(|t, v| Ok(t.scale(v[0], 2.0)), &inputs, 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
