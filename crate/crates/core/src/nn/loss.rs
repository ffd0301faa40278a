//! Gaussian log-likelihood, diagonal-Gaussian KL and reparameterized sampling.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{ensure_dim, CabiError, Result};
use crate::rng::SeededRng;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 5.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smoothly maps a raw log-variance head into `[LOGVAR_MIN, LOGVAR_MAX]`
/// (up to a softplus tail below 1e-6).
/// Returns the bounded value and its derivative with respect to `raw`.
pub fn bound_logvar(raw: f64) -> (f64, f64) {
    let upper = LOGVAR_MAX - softplus(LOGVAR_MAX - raw);
    let value = LOGVAR_MIN + softplus(upper - LOGVAR_MIN);
    let deriv = sigmoid(LOGVAR_MAX - raw) * sigmoid(upper - LOGVAR_MIN);
    (value, deriv)
}

/// Negative log-density of `target` under `N(mean, diag(exp(logvar)))`.
pub fn gaussian_nll(mean: &[f64], logvar: &[f64], target: &[f64]) -> Result<f64> {
    ensure_dim(mean.len(), logvar.len())?;
    ensure_dim(mean.len(), target.len())?;
    let mut total = 0.0;
    for ((&m, &l), &t) in mean.iter().zip(logvar).zip(target) {
        if !(m.is_finite() && l.is_finite() && t.is_finite()) {
            return Err(CabiError::NonFinite("gaussian_nll input".into()));
        }
        let d = t - m;
        total += 0.5 * d * d * (-l).exp() + 0.5 * l + HALF_LN_2PI;
    }
    Ok(total)
}

/// Batch NLL averaged over rows, with gradients of that average with respect
/// to `mean` and `logvar`.
pub fn gaussian_nll_batch(
    mean: ArrayView2<f64>,
    logvar: ArrayView2<f64>,
    target: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if mean.dim() != logvar.dim() || mean.dim() != target.dim() {
        return Err(CabiError::Dimension {
            expected: mean.len(),
            actual: target.len(),
        });
    }
    let b = mean.nrows().max(1) as f64;
    let mut d_mean = Array2::zeros(mean.raw_dim());
    let mut d_logvar = Array2::zeros(mean.raw_dim());
    let mut total = 0.0;
    Zip::from(&mut d_mean)
        .and(&mut d_logvar)
        .and(mean)
        .and(logvar)
        .and(target)
        .for_each(|dm, dl, &m, &l, &t| {
            let inv_var = (-l).exp();
            let d = t - m;
            total += 0.5 * d * d * inv_var + 0.5 * l + HALF_LN_2PI;
            *dm = -d * inv_var / b;
            *dl = (0.5 - 0.5 * d * d * inv_var) / b;
        });
    let loss = total / b;
    if !loss.is_finite() {
        return Err(CabiError::NonFinite("gaussian nll".into()));
    }
    Ok((loss, d_mean, d_logvar))
}

/// `KL(N(mu, diag(exp(logvar))) || N(0, I))`.
pub fn diag_gauss_kl(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    ensure_dim(mu.len(), logvar.len())?;
    let kl: f64 = mu
        .iter()
        .zip(logvar)
        .map(|(&m, &l)| 0.5 * (m * m + l.exp() - l - 1.0))
        .sum();
    if kl.is_finite() {
        Ok(kl)
    } else {
        Err(CabiError::NonFinite("kl divergence".into()))
    }
}

/// Gradient of [`diag_gauss_kl`] for one coordinate: `(d/dmu, d/dlogvar)`.
pub fn diag_gauss_kl_grad(mu: f64, logvar: f64) -> (f64, f64) {
    (mu, 0.5 * (logvar.exp() - 1.0))
}

/// Draws `mean + exp(logvar/2) ⊙ ε` with `ε ~ N(0, I)`. The log-variance is
/// clamped to `[LOGVAR_MIN, LOGVAR_MAX]` first.
pub fn sample_diag_gaussian(mean: &[f64], logvar: &[f64], rng: &mut SeededRng) -> Result<Vec<f64>> {
    ensure_dim(mean.len(), logvar.len())?;
    Ok(mean
        .iter()
        .zip(logvar)
        .map(|(&m, &l)| m + (0.5 * l.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * rng.normal())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn nll_known_values() {
        assert!((gaussian_nll(&[0.0], &[0.0], &[0.0]).unwrap() - 0.91894).abs() < 1e-5);
        assert!((gaussian_nll(&[0.0], &[0.0], &[1.0]).unwrap() - 1.41894).abs() < 1e-5);
    }

    #[test]
    fn nll_matches_scalar_oracle() {
        let mut rng = SeededRng::new(17);
        let m: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let l: Vec<f64> = (0..5).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let t: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        // log N(t; m, σ²) = −½ln(2πσ²) − (t−m)²/(2σ²)
        let mut oracle = 0.0;
        for d in 0..5 {
            let var = l[d].exp();
            let log_pdf = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (t[d] - m[d]).powi(2) / (2.0 * var);
            oracle -= log_pdf;
        }
        assert!((gaussian_nll(&m, &l, &t).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn nll_rejects_non_finite() {
        assert!(gaussian_nll(&[f64::NAN], &[0.0], &[0.0]).is_err());
        assert!(gaussian_nll(&[0.0, 1.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn nll_batch_gradient_vanishes_at_target() {
        let m = Array2::from_elem((2, 3), 0.4);
        let l = Array2::from_elem((2, 3), -0.3);
        let (_, dm, _) = gaussian_nll_batch(m.view(), l.view(), m.view()).unwrap();
        assert!(dm.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nll_batch_finite_difference() {
        let mut rng = SeededRng::new(3);
        let m = Array2::from_shape_fn((3, 2), |_| rng.normal());
        let l = Array2::from_shape_fn((3, 2), |_| rng.normal());
        let t = Array2::from_shape_fn((3, 2), |_| rng.normal());
        let (_, dm, dl) = gaussian_nll_batch(m.view(), l.view(), t.view()).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..2 {
                let mut mp = m.clone();
                mp[[i, j]] += h;
                let mut mm = m.clone();
                mm[[i, j]] -= h;
                let num = (gaussian_nll_batch(mp.view(), l.view(), t.view()).unwrap().0
                    - gaussian_nll_batch(mm.view(), l.view(), t.view()).unwrap().0)
                    / (2.0 * h);
                assert!((num - dm[[i, j]]).abs() < 1e-7);
                let mut lp = l.clone();
                lp[[i, j]] += h;
                let mut lm = l.clone();
                lm[[i, j]] -= h;
                let num = (gaussian_nll_batch(m.view(), lp.view(), t.view()).unwrap().0
                    - gaussian_nll_batch(m.view(), lm.view(), t.view()).unwrap().0)
                    / (2.0 * h);
                assert!((num - dl[[i, j]]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(diag_gauss_kl(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((diag_gauss_kl(&[1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bound_logvar_stays_inside_and_is_smooth() {
        for raw in [-100.0, -10.0, -3.0, 0.0, 2.0, 5.0, 50.0] {
            let (v, d) = bound_logvar(raw);
            // softplus tails overshoot by at most ln(1 + e^-15)
            assert!(v >= LOGVAR_MIN - 1e-6 && v <= LOGVAR_MAX + 1e-6, "{raw} -> {v}");
            let h = 1e-6;
            let num = (bound_logvar(raw + h).0 - bound_logvar(raw - h).0) / (2.0 * h);
            assert!((num - d).abs() < 1e-6);
        }
        // near-identity in the interior
        assert!((bound_logvar(0.0).0).abs() < 1e-2);
    }

    #[test]
    fn degenerate_variance_returns_mean() {
        let mut rng = SeededRng::new(0);
        let x = sample_diag_gaussian(&[1.0, -2.0], &[f64::NEG_INFINITY, -1e9], &mut rng).unwrap();
        assert!((x[0] - 1.0).abs() < 0.05 && (x[1] + 2.0).abs() < 0.05);
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_diag_gaussian(&[0.0; 4], &[0.0; 4], &mut SeededRng::new(9)).unwrap();
        let b = sample_diag_gaussian(&[0.0; 4], &[0.0; 4], &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_moments_law_of_large_numbers() {
        let mut rng = SeededRng::new(123);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_diag_gaussian(&[0.0], &[0.0], &mut rng).unwrap()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.05);
    }
}
