use crate::error::{Error, Result};

/// Keep the `s` largest-magnitude entries and zero the rest.
///
/// Ties are resolved in favour of the lower index.
pub fn support_threshold(m: &[f64], s: usize) -> Vec<f64> {
    assert!(s <= m.len(), "cannot keep {s} of {} entries", m.len());
    let mut order: Vec<usize> = (0..m.len()).collect();
    order.sort_by(|&i, &j| m[j].abs().total_cmp(&m[i].abs()).then(i.cmp(&j)));
    let mut out = vec![0.0; m.len()];
    for &j in &order[..s] {
        out[j] = m[j];
    }
    out
}

/// `||x - x_hat||^2 / ||x||^2 / N`.
pub fn nmse(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Dimension(format!(
            "nmse of lengths {} and {}",
            x.len(),
            x_hat.len()
        )));
    }
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Err(Error::Domain("nmse of a zero signal".to_string()));
    }
    let err: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(err / energy / x.len() as f64)
}
