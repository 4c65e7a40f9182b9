use crate::error::{Error, Result};

/// Mean squared value.
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `10 log10(P(clean) / P(noisy - clean))`.
///
/// Returns `f64::INFINITY` when the residual is exactly zero.
pub fn snr_db(noisy: &[f64], clean: &[f64]) -> Result<f64> {
    if noisy.len() != clean.len() {
        return Err(Error::input(format!(
            "length mismatch: {} noisy vs {} clean samples",
            noisy.len(),
            clean.len()
        )));
    }
    let signal = power(clean);
    if signal == 0.0 {
        return Err(Error::input("clean reference has zero power"));
    }
    let residual: Vec<f64> = noisy.iter().zip(clean).map(|(n, c)| n - c).collect();
    let noise = power(&residual);
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Pointwise mean of equal-length cycles.
pub fn average_cycles<S: AsRef<[f64]>>(cycles: &[S]) -> Result<Vec<f64>> {
    let first = cycles
        .first()
        .ok_or_else(|| Error::input("no cycles to average"))?
        .as_ref();
    let mut acc = vec![0.0; first.len()];
    for c in cycles {
        let c = c.as_ref();
        if c.len() != acc.len() {
            return Err(Error::input(format!(
                "ragged cycles: {} vs {} samples",
                c.len(),
                acc.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    let k = cycles.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(acc)
}
