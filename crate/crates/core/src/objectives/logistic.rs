use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::keyed_stream;
use crate::vecops::{dot, fmt_f64, norm, norm_sq};

pub const LOGISTIC_SEED: u64 = 20_190_117;
pub const LOGISTIC_POINTS: usize = 1000;
pub const LOGISTIC_DIM: usize = 20;
pub const LOGISTIC_FLIP_PROB: f64 = 0.1;

/// Binary-labelled dataset for mean logistic loss
/// `F(w) = (1/n) Σ [log(1 + exp(xᵢ·w)) − yᵢ·xᵢ·w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticData {
    dim: usize,
    /// Row-major `n × dim`.
    features: Vec<f64>,
    labels: Vec<f64>,
}

/// Constants derived by exhaustive evaluation over the dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConstants {
    /// `λ_max(XᵀX/n) / 4`, since the logistic curvature is at most 1/4.
    pub lipschitz_l: f64,
    /// `((1/n) Σ ‖xᵢ‖)²`; holds everywhere because `|σ(z) − y| ≤ 1`.
    pub grad_bound_m: f64,
    /// `(1/n) Σ ‖xᵢ‖²`, an upper bound on `E‖∇fᵢ(w)‖²` at every `w`.
    pub sigma2: f64,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticData {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() || labels.is_empty() {
            return Err(Error::argument("logistic dataset shape is inconsistent"));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::argument("logistic labels must be 0 or 1"));
        }
        Ok(LogisticData {
            dim,
            features,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        let total: f64 = (0..self.len())
            .map(|i| {
                let z = dot(self.row(i), w);
                softplus(z) - self.labels[i] * z
            })
            .sum();
        total / self.len() as f64
    }

    pub fn gradient_into(&self, w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.len() {
            let x = self.row(i);
            let r = sigmoid(dot(x, w)) - self.labels[i];
            for (o, xi) in out.iter_mut().zip(x) {
                *o += r * xi;
            }
        }
        let n = self.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }

    pub fn point_gradient_into(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let x = self.row(i);
        let r = sigmoid(dot(x, w)) - self.labels[i];
        for (o, xi) in out.iter_mut().zip(x) {
            *o = r * xi;
        }
    }

    pub fn constants(&self) -> LogisticConstants {
        let n = self.len();
        let x = DMatrix::from_row_slice(n, self.dim, &self.features);
        let gram = x.transpose() * &x / n as f64;
        let lambda_max = gram
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mean_norm = (0..n).map(|i| norm(self.row(i))).sum::<f64>() / n as f64;
        let mean_norm_sq = (0..n).map(|i| norm_sq(self.row(i))).sum::<f64>() / n as f64;
        LogisticConstants {
            lipschitz_l: lambda_max / 4.0,
            grad_bound_m: mean_norm * mean_norm,
            sigma2: mean_norm_sq,
        }
    }

    pub fn header(&self) -> String {
        let mut h: Vec<String> = (0..self.dim).map(|i| format!("feature_{i}")).collect();
        h.push("label".into());
        h.join(",")
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for i in 0..self.len() {
            for x in self.row(i) {
                out.push_str(&fmt_f64(*x));
                out.push(',');
            }
            let _ = writeln!(out, "{}", self.labels[i] as u8);
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        Self::from_reader(text.as_bytes())
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::parse(1, e.to_string()))?
            .clone();
        let dim = headers.len().saturating_sub(1);
        let expected_header: Vec<String> = (0..dim)
            .map(|i| format!("feature_{i}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        if dim == 0 || headers.iter().ne(expected_header.iter().map(|s| s.as_str())) {
            return Err(Error::parse(1, "expected header feature_0..feature_{d-1},label"));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::parse(line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad number '{field}'")))?;
                if j < dim {
                    features.push(v);
                } else if v == 0.0 || v == 1.0 {
                    labels.push(v);
                } else {
                    return Err(Error::parse(line, format!("label must be 0 or 1, got '{field}'")));
                }
            }
        }
        LogisticData::new(dim, features, labels)
    }
}

/// Standard-normal features, labels from the sign of a fixed random
/// ground-truth direction, each label flipped with probability
/// [`LOGISTIC_FLIP_PROB`].
pub fn generate_logistic_dataset(seed: u64) -> LogisticData {
    let mut rng = keyed_stream(b"logistic", seed, 0, 0);
    let truth: Vec<f64> = (0..LOGISTIC_DIM).map(|_| rng.sample(StandardNormal)).collect();
    let mut features = Vec::with_capacity(LOGISTIC_POINTS * LOGISTIC_DIM);
    let mut labels = Vec::with_capacity(LOGISTIC_POINTS);
    for _ in 0..LOGISTIC_POINTS {
        let x: Vec<f64> = (0..LOGISTIC_DIM).map(|_| rng.sample(StandardNormal)).collect();
        let mut y = if dot(&x, &truth) > 0.0 { 1.0 } else { 0.0 };
        if rng.gen::<f64>() < LOGISTIC_FLIP_PROB {
            y = 1.0 - y;
        }
        features.extend(x);
        labels.push(y);
    }
    LogisticData::new(LOGISTIC_DIM, features, labels).expect("generated shape is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::LOGISTIC_DATASET_CSV;

    /// Straight-line loss evaluation, kept separate from `LogisticData::loss`.
    fn reference_loss(data: &LogisticData, w: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..data.len() {
            let mut z = 0.0;
            for j in 0..data.dim() {
                z += data.row(i)[j] * w[j];
            }
            let p = 1.0 / (1.0 + (-z).exp());
            let y = data.label(i);
            total += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        }
        total / data.len() as f64
    }

    #[test]
    fn shipped_dataset_matches_generator() {
        let shipped = LogisticData::from_csv_str(LOGISTIC_DATASET_CSV).unwrap();
        let regenerated = generate_logistic_dataset(LOGISTIC_SEED);
        assert_eq!(shipped, regenerated);
        assert_eq!(regenerated.to_csv_string(), LOGISTIC_DATASET_CSV);
        assert_eq!(shipped.len(), LOGISTIC_POINTS);
        assert_eq!(shipped.dim(), LOGISTIC_DIM);
    }

    #[test]
    fn flip_rate_is_near_ten_percent() {
        let data = generate_logistic_dataset(LOGISTIC_SEED);
        let mut rng = keyed_stream(b"logistic", LOGISTIC_SEED, 0, 0);
        let truth: Vec<f64> = (0..LOGISTIC_DIM).map(|_| rng.sample(StandardNormal)).collect();
        let flips = (0..data.len())
            .filter(|&i| (dot(data.row(i), &truth) > 0.0) != (data.label(i) == 1.0))
            .count();
        assert!((60..=140).contains(&flips), "{flips}");
    }

    #[test]
    fn loss_matches_reference_at_generator_weights() {
        let data = LogisticData::from_csv_str(LOGISTIC_DATASET_CSV).unwrap();
        let mut rng = keyed_stream(b"logistic", LOGISTIC_SEED, 0, 0);
        let truth: Vec<f64> = (0..LOGISTIC_DIM).map(|_| rng.sample(StandardNormal)).collect();
        let a = data.loss(&truth);
        let b = reference_loss(&data, &truth);
        assert!((a - b).abs() <= 1e-12 * b.abs(), "{a} vs {b}");
        let zero = vec![0.0; LOGISTIC_DIM];
        assert!((data.loss(&zero) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn constants_dominate_sampled_estimates() {
        let data = LogisticData::from_csv_str(LOGISTIC_DATASET_CSV).unwrap();
        let c = data.constants();
        let mut rng = keyed_stream(b"unittest", 11, 0, 0);
        let d = data.dim();
        let mut g = vec![0.0; d];
        let mut gx = vec![0.0; d];
        let mut gy = vec![0.0; d];
        let mut pg = vec![0.0; d];
        let mut max_ratio: f64 = 0.0;
        for _ in 0..200 {
            let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let y: Vec<f64> = x.iter().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
            data.gradient_into(&x, &mut gx);
            data.gradient_into(&y, &mut gy);
            let num: f64 = gx.iter().zip(&gy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            max_ratio = max_ratio.max(num / den);

            // exhaustive per-sample variance at x
            data.gradient_into(&x, &mut g);
            let mut second = 0.0;
            for i in 0..data.len() {
                data.point_gradient_into(i, &x, &mut pg);
                second += norm_sq(&pg);
            }
            let var = second / data.len() as f64 - norm_sq(&g);
            assert!(var <= c.sigma2);
            assert!(norm_sq(&g) <= c.grad_bound_m);
        }
        assert!(max_ratio <= c.lipschitz_l, "{max_ratio} > {}", c.lipschitz_l);
        // the curvature bound should not be wildly loose either
        assert!(max_ratio > 0.2 * c.lipschitz_l);
    }

    #[test]
    fn malformed_csv_reports_line() {
        let bad = "feature_0,label\n0.5,1\nabc,0\n";
        match LogisticData::from_csv_str(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad_label = "feature_0,label\n0.5,2\n";
        assert!(matches!(LogisticData::from_csv_str(bad_label), Err(Error::Parse { line: 2, .. })));
        assert!(LogisticData::from_csv_str("x,label\n1,0\n").is_err());
    }
}
