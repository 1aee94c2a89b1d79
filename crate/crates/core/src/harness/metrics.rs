use crate::error::{invalid, Error, Result};

fn check(states: &[Vec<f64>]) -> Result<usize> {
    let d = states.first().ok_or_else(|| invalid("no agents"))?.len();
    if let Some(x) = states.iter().find(|x| x.len() != d) {
        return Err(Error::Shape { expected: d, got: x.len() });
    }
    Ok(d)
}

pub fn mean_state(states: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = check(states)?;
    let n = states.len() as f64;
    Ok((0..d).map(|l| states.iter().map(|x| x[l]).sum::<f64>() / n).collect())
}

/// `Σᵢ‖xᵢ - x*‖²`.
pub fn mse(states: &[Vec<f64>], x_star: &[f64]) -> Result<f64> {
    let d = check(states)?;
    if x_star.len() != d {
        return Err(Error::Shape { expected: d, got: x_star.len() });
    }
    Ok(states
        .iter()
        .map(|x| x.iter().zip(x_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum())
}

/// `Σᵢ‖xᵢ - x̄‖²`.
pub fn consensus_error(states: &[Vec<f64>]) -> Result<f64> {
    let mean = mean_state(states)?;
    mse(states, &mean)
}

/// Mean and population variance, summed in slice order.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}
