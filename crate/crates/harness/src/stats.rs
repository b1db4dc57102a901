use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

/// One-sided paired sign test of "a beats b". Ties are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `P(W >= wins)` for `W ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

impl SignTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

pub fn sign_test(a: &[f64], b: &[f64]) -> SignTest {
    assert_eq!(a.len(), b.len(), "sign test needs paired samples");
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let ties = a.len() - wins - losses;
    let n = (wins + losses) as u64;
    let p_value = if wins == 0 {
        1.0
    } else {
        Binomial::new(0.5, n).expect("valid binomial").sf(wins as u64 - 1)
    };
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_by_hand() {
        // 18 of 20: (C(20,18) + C(20,19) + C(20,20)) / 2^20
        let a: Vec<f64> = (0..20).map(|i| if i < 18 { 1.0 } else { 0.0 }).collect();
        let b = vec![0.5; 20];
        let t = sign_test(&a, &b);
        assert_eq!((t.wins, t.losses, t.ties), (18, 2, 0));
        assert!((t.p_value - 211.0 / 1_048_576.0).abs() < 1e-12);
    }

    #[test]
    fn ties_are_dropped() {
        let t = sign_test(&[1.0, 1.0, 2.0, 0.0], &[1.0, 0.0, 1.0, 1.0]);
        assert_eq!((t.wins, t.losses, t.ties), (2, 1, 1));
        assert!((t.p_value - 0.5).abs() < 1e-12);
        assert_eq!(sign_test(&[0.0], &[1.0]).p_value, 1.0);
    }

    #[test]
    fn spread() {
        assert_eq!(std_dev(&[3.0]), 0.0);
        assert!((std_dev(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
