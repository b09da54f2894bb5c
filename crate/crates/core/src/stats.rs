//! Order-stable summary statistics for Monte-Carlo reductions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Neumaier compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = CompensatedSum::default();
    for v in values {
        s.add(v);
    }
    s.value()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    sum(values.iter().copied()) / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator), two-pass.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    let ss = sum(values.iter().map(|v| (v - m) * (v - m)));
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Root mean square.
pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    (sum(values.iter().map(|v| v * v)) / values.len() as f64).sqrt()
}

/// Bootstrap standard error of the sample standard deviation.
pub fn bootstrap_std_error(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if values.len() < 2 || resamples < 2 {
        return f64::NAN;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; values.len()];
    let stds: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..values.len())];
            }
            std_dev(&buf)
        })
        .collect();
    std_dev(&stds)
}

/// Two-sided p-value of Welch's unequal-variance t test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (std_dev(a).powi(2) / na, std_dev(b).powi(2) / nb);
    let se = (va + vb).sqrt();
    if se == 0.0 {
        return if mean(a) == mean(b) { 1.0 } else { 0.0 };
    }
    let t = (mean(a) - mean(b)) / se;
    let dof = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

/// Two-sided standard-normal quantile for a confidence level, e.g. 0.95 → 1.96.
pub fn normal_two_sided(confidence: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("unit normal")
        .inverse_cdf(0.5 + confidence / 2.0)
}

/// Two-sided Student-t quantile; `None` (or very large dof) is the normal
/// limit. dof below 1 is clamped to 1.
pub fn t_two_sided(confidence: f64, dof: Option<f64>) -> f64 {
    match dof {
        Some(v) if v < 1e6 => StudentsT::new(0.0, 1.0, v.max(1.0))
            .expect("positive dof")
            .inverse_cdf(0.5 + confidence / 2.0),
        _ => normal_two_sided(confidence),
    }
}
