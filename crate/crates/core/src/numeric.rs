//! Small numerical kernels: stable softmax, sigmoid, covariance, KL estimator.

use crate::scalar::Real;

/// Numerically stable `log(sum(exp(xs)))`. Returns `-inf` for an empty slice.
pub fn log_sum_exp<S: Real>(xs: &[S]) -> S {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        return max;
    }
    let sum: S = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn log_softmax<S: Real>(scores: &[S]) -> Vec<S> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|&s| s - lse).collect()
}

pub fn softmax<S: Real>(scores: &[S]) -> Vec<S> {
    log_softmax(scores).into_iter().map(S::exp).collect()
}

pub fn sigmoid<S: Real>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// `log sigmoid(z)` without cancellation for large |z|.
pub fn log_sigmoid<S: Real>(z: S) -> S {
    if z >= S::zero() {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Expectation of `xs` under `weights` (weights are assumed to sum to one).
pub fn expectation<S: Real>(weights: &[S], xs: &[S]) -> S {
    dot(weights, xs)
}

/// `Cov(X, Y) = E[XY] - E[X]E[Y]` under the probability vector `weights`.
pub fn covariance<S: Real>(weights: &[S], xs: &[S], ys: &[S]) -> S {
    let exy: S = weights
        .iter()
        .zip(xs.iter().zip(ys))
        .map(|(&w, (&x, &y))| w * x * y)
        .sum();
    exy - expectation(weights, xs) * expectation(weights, ys)
}

/// Two-pass shifted covariance `E[(X - EX)(Y - EY)]`.
pub fn covariance_centered<S: Real>(weights: &[S], xs: &[S], ys: &[S]) -> S {
    let mx = expectation(weights, xs);
    let my = expectation(weights, ys);
    weights
        .iter()
        .zip(xs.iter().zip(ys))
        .map(|(&w, (&x, &y))| w * (x - mx) * (y - my))
        .sum()
}

/// Low-variance KL estimator `k3 = (rho - 1) - log rho` with
/// `log rho = logp_ref - logp`.
pub fn k3<S: Real>(log_rho: S) -> S {
    log_rho.exp() - S::one() - log_rho
}

/// Derivative of `k3` with respect to `logp` (the current policy's log-prob).
pub fn k3_dlogp<S: Real>(log_rho: S) -> S {
    S::one() - log_rho.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0f64; 4]);
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn log_softmax_survives_large_scores() {
        let lp = log_softmax(&[1000.0f64, 0.0]);
        assert!(lp[0].abs() < 1e-12);
        assert!((lp[1] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_and_log_sigmoid_agree() {
        for &z in &[-40.0f64, -3.0, -0.1, 0.0, 0.5, 7.0, 40.0] {
            assert!((sigmoid(z).ln() - log_sigmoid(z)).abs() < 1e-12);
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(0.0f64), 0.5);
    }

    #[test]
    fn covariance_forms_agree() {
        let w = [0.1f64, 0.2, 0.3, 0.4];
        let x = [1.0, -2.0, 0.5, 3.0];
        let y = [0.0, 1.0, 4.0, -1.0];
        let a = covariance(&w, &x, &y);
        let b = covariance_centered(&w, &x, &y);
        assert!((a - b).abs() < 1e-12);
        assert_eq!(covariance(&w, &[2.0; 4], &y), 0.0);
    }

    #[test]
    fn k3_vanishes_at_equal_policies() {
        assert_eq!(k3(0.0f64), 0.0);
        assert_eq!(k3_dlogp(0.0f64), 0.0);
        assert!(k3(0.3f64) > 0.0 && k3(-0.3f64) > 0.0);
    }
}
