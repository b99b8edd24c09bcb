//! Scaled dot-product attention.
//!
//! `Attention(Q, K, V) = softmax(Q K^T / sqrt(d_k)) V`: each output row is a
//! convex combination of the rows of `V`, weighted by the dot-product
//! compatibility of its query with every key.

use ndarray::{Array2, ArrayView2, Axis};

use super::ToyVitError;

fn check_finite(name: &str, m: &ArrayView2<f64>) -> Result<(), ToyVitError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ToyVitError::Numeric {
            block: None,
            what: format!("non-finite entry in {name}"),
        })
    }
}

/// In-place softmax over each row, with the row maximum subtracted first.
pub fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Row-stochastic weight matrix `softmax(Q K^T / sqrt(d_k))`.
pub fn attention_weights(q: ArrayView2<f64>, k: ArrayView2<f64>) -> Result<Array2<f64>, ToyVitError> {
    let d_k = q.ncols();
    if d_k == 0 {
        return Err(ToyVitError::Shape("d_k must be at least 1".into()));
    }
    if k.ncols() != d_k {
        return Err(ToyVitError::Shape(format!(
            "query width {d_k} differs from key width {}",
            k.ncols()
        )));
    }
    if k.nrows() == 0 {
        return Err(ToyVitError::Shape("no keys to attend to".into()));
    }
    check_finite("Q", &q)?;
    check_finite("K", &k)?;
    let mut scores = q.dot(&k.t()) / (d_k as f64).sqrt();
    softmax_rows(&mut scores);
    Ok(scores)
}

/// Scaled dot-product attention over `n` queries and `m` key/value rows.
pub fn attention(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<Array2<f64>, ToyVitError> {
    if k.nrows() != v.nrows() {
        return Err(ToyVitError::Shape(format!(
            "{} keys but {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    check_finite("V", &v)?;
    let weights = attention_weights(q, k)?;
    Ok(weights.dot(&v))
}
