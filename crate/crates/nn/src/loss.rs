use accguard_core::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities `p` against labels `y`, and its gradient
/// w.r.t. `p`. Probabilities are clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p.len() != y.len() || p.is_empty() {
        return Err(Error::Shape(format!(
            "bce needs equal non-empty inputs, got {} probabilities and {} labels",
            p.len(),
            y.len()
        )));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(y) {
        let q = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= yi * q.ln() + (1.0 - yi) * (1.0 - q).ln();
        grad.push((-yi / q + (1.0 - yi) / (1.0 - q)) / n);
    }
    Ok((loss / n, grad))
}

/// Mean binary cross-entropy of `sigmoid(l)` against labels `y`, computed from the
/// logits `l` directly, and its gradient w.r.t. `l`. Same value as [`bce`] on the
/// probabilities while they stay inside the clamp, but the gradient `(sigmoid(l) - y) / n`
/// does not vanish when the sigmoid saturates.
pub fn bce_with_logits(l: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if l.len() != y.len() || l.is_empty() {
        return Err(Error::Shape(format!(
            "bce needs equal non-empty inputs, got {} logits and {} labels",
            l.len(),
            y.len()
        )));
    }
    let n = l.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(l.len());
    for (&li, &yi) in l.iter().zip(y) {
        // log(1 + e^l) - y l, written to avoid overflow for large |l|
        loss += li.max(0.0) - yi * li + (-li.abs()).exp().ln_1p();
        grad.push((crate::layers::sigmoid(li) - yi) / n);
    }
    Ok((loss / n, grad))
}
