use crate::error::{Error, Result};

/// Centered moving average. Windows shrink at the edges, so every output
/// sample is the mean of the input samples actually covered.
///
/// For even windows the extra sample sits on the left: sample `i` averages
/// `[i - w/2, i + w - 1 - w/2]`.
pub fn moving_average(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 1 {
        return Err(Error::input("moving average window must be at least 1"));
    }
    if window > x.len() {
        return Err(Error::input(format!(
            "moving average window {window} exceeds signal length {}",
            x.len()
        )));
    }
    let left = window / 2;
    let right = window - 1 - left;
    let n = x.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right + 1).min(n);
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect())
}

/// Median with the even-length convention: mean of the two middle values.
pub fn median(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::input("median of an empty sequence"));
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Subtracts the median so the output has zero median.
pub fn median_detrend(x: &[f64]) -> Result<Vec<f64>> {
    let m = median(x)?;
    Ok(x.iter().map(|v| v - m).collect())
}
