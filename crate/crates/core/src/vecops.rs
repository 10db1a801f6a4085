//! Small dense-vector helpers over `[f64]`.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Formats a float so that parsing it back yields the same bits, switching
/// to exponent notation outside a readable range.
pub fn fmt_f64(x: f64) -> String {
    let ax = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&ax) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}
