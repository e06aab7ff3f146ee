//! Success rate, SPL and sequence success.

use crate::BenchError;

/// Success weighted by path length.
pub fn spl(success: bool, shortest: f64, traveled: f64) -> Result<f64, BenchError> {
    if shortest < 0.0 || traveled < 0.0 || shortest.is_nan() || traveled.is_nan() {
        return Err(BenchError::Metric(format!("lengths must be non-negative: shortest {shortest}, traveled {traveled}")));
    }
    if !success {
        return Ok(0.0);
    }
    let denom = shortest.max(traveled);
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok(shortest / denom)
}

/// SPL of one episode; a missing shortest length means the target was gone.
pub fn episode_spl(success: bool, shortest: Option<f64>, traveled: f64) -> f64 {
    match shortest {
        Some(s) => spl(success, s, traveled).unwrap_or(0.0),
        None => 0.0,
    }
}

/// Fraction of sequences whose first `i` tasks all succeeded.
pub fn tasks_sr(sequences: &[Vec<bool>], i: usize) -> f64 {
    if sequences.is_empty() {
        return 0.0;
    }
    let ok = sequences
        .iter()
        .filter(|s| s.len() >= i && s[..i].iter().all(|b| *b))
        .count();
    ok as f64 / sequences.len() as f64
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
