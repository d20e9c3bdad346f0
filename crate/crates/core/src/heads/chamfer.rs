use crate::error::{arg_err, Result};
use crate::tensor::Matrix;

/// Chamfer value plus the nearest-neighbor matches that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ChamferMatch {
    pub value: f64,
    /// For each row of `a`, the index of its nearest row in `b`.
    pub a_to_b: Vec<usize>,
    /// For each row of `b`, the index of its nearest row in `a`.
    pub b_to_a: Vec<usize>,
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

// Returns (mean nearest squared distance, matches); lowest index wins ties.
fn directed(a: &Matrix, b: &Matrix) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let mut matches = Vec::with_capacity(a.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        let mut best = f64::INFINITY;
        let mut best_j = 0;
        for j in 0..b.rows() {
            let d = squared_distance(ai, b.row(j));
            if d < best {
                best = d;
                best_j = j;
            }
        }
        total += best;
        matches.push(best_j);
    }
    (total / a.rows() as f64, matches)
}

pub fn chamfer_matches(a: &Matrix, b: &Matrix) -> Result<ChamferMatch> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(arg_err!("chamfer distance of an empty point set"));
    }
    if a.cols() != b.cols() {
        return Err(arg_err!(
            "chamfer between {}-d and {}-d points",
            a.cols(),
            b.cols()
        ));
    }
    let (ab, a_to_b) = directed(a, b);
    let (ba, b_to_a) = directed(b, a);
    Ok(ChamferMatch {
        value: ab + ba,
        a_to_b,
        b_to_a,
    })
}

/// Symmetric chamfer distance with squared Euclidean distances and per-set
/// means: `mean_a min_b |a-b|² + mean_b min_a |b-a|²`.
pub fn chamfer(a: &Matrix, b: &Matrix) -> Result<f64> {
    chamfer_matches(a, b).map(|m| m.value)
}
