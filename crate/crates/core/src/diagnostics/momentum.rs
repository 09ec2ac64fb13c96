use num_traits::Float;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::DiagnosticsError;

pub const MIN_SAMPLES: usize = 10;
pub const DEFAULT_WINDOW: usize = 50;

/// Reliability observations `(t, y)` with `t` strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilitySeries<T> {
    samples: Vec<(T, T)>,
}

impl<T: Float> ReliabilitySeries<T> {
    pub fn new(samples: Vec<(T, T)>) -> Result<Self, DiagnosticsError> {
        for (i, (t, y)) in samples.iter().enumerate() {
            if !t.is_finite() || !y.is_finite() {
                return Err(DiagnosticsError::NonFinite(i));
            }
            if i > 0 && *t <= samples[i - 1].0 {
                return Err(DiagnosticsError::NonIncreasing(i));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(T, T)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumEstimate<T> {
    pub mu: T,
    pub intercept: T,
    pub sigma_hat: T,
    pub ci_mu: (T, T),
    pub residual_mean: T,
    pub n: usize,
}

impl<T: Float> MomentumEstimate<T> {
    pub fn ci_contains(&self, mu: T) -> bool {
        self.ci_mu.0 <= mu && mu <= self.ci_mu.1
    }
}

/// Ordinary least squares of `y` on `t` with a 95% Student-t interval on the slope.
pub fn estimate_momentum<T: Float>(
    series: &ReliabilitySeries<T>,
) -> Result<MomentumEstimate<T>, DiagnosticsError> {
    estimate_momentum_at(series, 0.95)
}

pub fn estimate_momentum_at<T: Float>(
    series: &ReliabilitySeries<T>,
    level: f64,
) -> Result<MomentumEstimate<T>, DiagnosticsError> {
    let n = series.len();
    if n < MIN_SAMPLES {
        return Err(DiagnosticsError::InsufficientData {
            have: n,
            need: MIN_SAMPLES,
        });
    }
    let nf = T::from(n).expect("sample count fits the scalar");
    let (st, sy) = series
        .samples
        .iter()
        .fold((T::zero(), T::zero()), |(a, b), (t, y)| (a + *t, b + *y));
    let (mt, my) = (st / nf, sy / nf);
    let (mut sxx, mut sxy) = (T::zero(), T::zero());
    for (t, y) in &series.samples {
        let dt = *t - mt;
        sxx = sxx + dt * dt;
        sxy = sxy + dt * (*y - my);
    }
    let mu = sxy / sxx;
    let intercept = my - mu * mt;
    let residuals: Vec<T> = series
        .samples
        .iter()
        .map(|(t, y)| *y - (intercept + mu * *t))
        .collect();
    let rsum = residuals.iter().fold(T::zero(), |a, r| a + *r);
    let residual_mean = rsum / nf;
    let sse = residuals.iter().fold(T::zero(), |a, r| a + *r * *r);
    let sigma_hat = (sse / nf).sqrt();

    let dof = (n - 2) as f64;
    let se_mu = (sse / T::from(dof).expect("dof") / sxx).sqrt();
    let tdist = StudentsT::new(0.0, 1.0, dof).expect("dof is positive");
    let q = T::from(tdist.inverse_cdf(0.5 + level / 2.0)).expect("quantile fits the scalar");
    let half = q * se_mu;
    Ok(MomentumEstimate {
        mu,
        intercept,
        sigma_hat,
        ci_mu: (mu - half, mu + half),
        residual_mean,
        n,
    })
}

/// Rolling success fraction over the last `window` units, one sample per unit
/// once the window is full. Units must be ordered by strictly increasing time.
pub fn rolling_reliability<T: Float>(
    outcomes: &[(T, bool)],
    window: usize,
) -> Result<ReliabilitySeries<T>, DiagnosticsError> {
    let window = window.max(1);
    let wf = T::from(window).expect("window fits the scalar");
    let mut hits = 0usize;
    let mut samples = Vec::new();
    for (i, (t, ok)) in outcomes.iter().enumerate() {
        hits += usize::from(*ok);
        if i >= window {
            hits -= usize::from(outcomes[i - window].1);
        }
        if i + 1 >= window {
            samples.push((*t, T::from(hits).expect("count fits the scalar") / wf));
        }
    }
    ReliabilitySeries::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn generated(mu: f64, sigma: f64, n: usize, seed: u64) -> ReliabilitySeries<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        ReliabilitySeries::new(
            (0..n)
                .map(|i| (i as f64, mu * i as f64 + sigma * noise.sample(&mut rng)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_series_is_flat() {
        let s = ReliabilitySeries::new((0..20).map(|i| (i as f64, 0.7)).collect()).unwrap();
        let e = estimate_momentum(&s).unwrap();
        assert!(e.mu.abs() < 1e-12 && e.sigma_hat.abs() < 1e-12);
        assert!((e.intercept - 0.7).abs() < 1e-12);
    }

    #[test]
    fn short_series_is_insufficient() {
        let s = ReliabilitySeries::new((0..9).map(|i| (i as f64, 0.5)).collect()).unwrap();
        assert_eq!(
            estimate_momentum(&s).unwrap_err(),
            DiagnosticsError::InsufficientData { have: 9, need: 10 }
        );
    }

    #[test]
    fn time_must_increase() {
        assert_eq!(
            ReliabilitySeries::new(vec![(0.0, 0.1), (0.0, 0.2)]).unwrap_err(),
            DiagnosticsError::NonIncreasing(1)
        );
        assert_eq!(
            ReliabilitySeries::new(vec![(0.0, f64::NAN)]).unwrap_err(),
            DiagnosticsError::NonFinite(0)
        );
    }

    #[test]
    fn exact_line_matches_closed_form() {
        let s = ReliabilitySeries::new(
            (0..50)
                .map(|i| (i as f64, 0.2 + 0.003 * i as f64))
                .collect(),
        )
        .unwrap();
        let e = estimate_momentum(&s).unwrap();
        assert!((e.mu - 0.003).abs() < 1e-12);
        assert!((e.intercept - 0.2).abs() < 1e-10);
    }

    #[test]
    fn slope_matches_independent_formula() {
        // Slope as cov(t, y) / var(t), computed the long way.
        let s = generated(0.02, 0.3, 200, 7);
        let n = s.len() as f64;
        let ts: Vec<f64> = s.samples().iter().map(|p| p.0).collect();
        let ys: Vec<f64> = s.samples().iter().map(|p| p.1).collect();
        let cov = ts.iter().zip(&ys).map(|(t, y)| t * y).sum::<f64>() / n
            - ts.iter().sum::<f64>() / n * ys.iter().sum::<f64>() / n;
        let var = ts.iter().map(|t| t * t).sum::<f64>() / n - (ts.iter().sum::<f64>() / n).powi(2);
        let e = estimate_momentum(&s).unwrap();
        assert!((e.mu - cov / var).abs() < 1e-9);
        assert!(e.residual_mean.abs() <= 3.0 * e.sigma_hat / n.sqrt());
    }

    #[test]
    fn f32_fit_agrees_with_f64() {
        let s64 = generated(0.01, 0.1, 100, 3);
        let s32 = ReliabilitySeries::new(
            s64.samples()
                .iter()
                .map(|(t, y)| (*t as f32, *y as f32))
                .collect(),
        )
        .unwrap();
        let a = estimate_momentum(&s64).unwrap();
        let b = estimate_momentum(&s32).unwrap();
        assert!((a.mu - b.mu as f64).abs() < 1e-4);
    }

    #[test]
    fn ci_covers_true_slope_mostly() {
        let covered = (0..40)
            .filter(|seed| {
                estimate_momentum(&generated(0.01, 0.5, 1000, *seed))
                    .unwrap()
                    .ci_contains(0.01)
            })
            .count();
        assert!(covered >= 34, "covered {covered}/40");
    }

    #[test]
    fn rolling_window_counts_successes() {
        let outcomes: Vec<(f64, bool)> = (0..6).map(|i| (i as f64, i % 2 == 0)).collect();
        let s = rolling_reliability(&outcomes, 2).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.samples().iter().all(|(_, y)| (*y - 0.5).abs() < 1e-12));
        let s = rolling_reliability(&outcomes, 3).unwrap();
        let ys: Vec<f64> = s.samples().iter().map(|p| p.1).collect();
        assert_eq!(ys, vec![2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0]);
    }
}
