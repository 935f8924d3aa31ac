//! Central finite-difference gradient checking.

use super::{Result, Tensor, TensorError};

/// Compares the reverse-mode gradient of a scalar function against central
/// differences and returns the largest
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, shape: &[usize], x: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    grad_check_many(|xs| f(&xs[0]), &[(shape.to_vec(), x.to_vec())], eps)
}

/// Multi-input version of [`grad_check`]; every input is differentiated.
pub fn grad_check_many<F>(f: F, inputs: &[(Vec<usize>, Vec<f64>)], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if eps <= 0.0 {
        return Err(TensorError::Parameter {
            op: "grad_check",
            reason: "eps must be positive".into(),
        });
    }
    let leaves = inputs
        .iter()
        .map(|(s, v)| Tensor::param(s, v.clone()))
        .collect::<Result<Vec<_>>>()?;
    f(&leaves)?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.len()]))
        .collect();

    let eval = |which: usize, idx: usize, delta: f64| -> Result<f64> {
        let ts = inputs
            .iter()
            .enumerate()
            .map(|(i, (s, v))| {
                let mut v = v.clone();
                if i == which {
                    v[idx] += delta;
                }
                Tensor::new(s, v)
            })
            .collect::<Result<Vec<_>>>()?;
        f(&ts)?.item()
    };

    let mut worst = 0.0_f64;
    for (which, (_, v)) in inputs.iter().enumerate() {
        for idx in 0..v.len() {
            let numeric = (eval(which, idx, eps)? - eval(which, idx, -eps)?) / (2.0 * eps);
            let a = analytic[which][idx];
            let err = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
