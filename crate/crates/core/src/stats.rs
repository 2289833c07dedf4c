//! Statistics kernel: Welch's t-test with Student-t tail probabilities from
//! the regularized incomplete beta function, and a streaming, mergeable
//! ordinary-least-squares accumulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Natural log of the gamma function (Lanczos, g = 7, n = 9), x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 200_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability `P(|T| ≥ |t|)` for Student's t with `df`
/// degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    inc_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

/// Welch's unequal-variance two-sample t-test.
///
/// When both samples have zero variance the standard error vanishes: equal
/// means give `t = 0, p = 1`, different means give `t = ±∞, p = 0`. In that
/// case `df` falls back to `n_a + n_b - 2`.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Insufficient(format!(
            "welch_t needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if ma == mb {
            WelchResult { t: 0.0, df, p_two_sided: 1.0 }
        } else {
            let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
            WelchResult { t, df, p_two_sided: 0.0 }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(WelchResult {
        t,
        df,
        p_two_sided: student_t_two_sided(t, df),
    })
}

/// Fitted line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: u64,
}

/// Single-pass least-squares accumulator. Means and co-moments are updated
/// incrementally (Welford) and partial accumulators merge exactly as if the
/// data had been seen in one stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OlsAccumulator {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c_xy: f64,
}

impl OlsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x += dx / n;
        self.mean_y += dy / n;
        let dx2 = x - self.mean_x;
        self.m2_x += dx * dx2;
        self.m2_y += dy * (y - self.mean_y);
        self.c_xy += dx * (y - self.mean_y);
    }

    pub fn merge(&mut self, other: &OlsAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let dx = other.mean_x - self.mean_x;
        let dy = other.mean_y - self.mean_y;
        self.mean_x += dx * nb / n;
        self.mean_y += dy * nb / n;
        self.m2_x += other.m2_x + dx * dx * na * nb / n;
        self.m2_y += other.m2_y + dy * dy * na * nb / n;
        self.c_xy += other.c_xy + dx * dy * na * nb / n;
        self.n += other.n;
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn finish(&self) -> Result<LineFit> {
        if self.n < 2 {
            return Err(Error::Insufficient(format!(
                "regression needs at least 2 points, got {}",
                self.n
            )));
        }
        if self.m2_x <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        let slope = self.c_xy / self.m2_x;
        let intercept = self.mean_y - slope * self.mean_x;
        // A constant response is fitted perfectly.
        let r_squared = if self.m2_y > 0.0 {
            (self.c_xy * self.c_xy / (self.m2_x * self.m2_y)).clamp(0.0, 1.0)
        } else {
            1.0
        };
        Ok(LineFit {
            slope,
            intercept,
            r_squared,
            n: self.n,
        })
    }
}

impl Extend<(f64, f64)> for OlsAccumulator {
    fn extend<T: IntoIterator<Item = (f64, f64)>>(&mut self, iter: T) {
        for (x, y) in iter {
            self.push(x, y);
        }
    }
}

pub fn ols_fit(points: impl IntoIterator<Item = (f64, f64)>) -> Result<LineFit> {
    let mut acc = OlsAccumulator::new();
    acc.extend(points);
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    /// Independent reference: statrs' Student-t CDF.
    fn oracle_two_sided(t: f64, df: f64) -> f64 {
        let d = StudentsT::new(0.0, 1.0, df).unwrap();
        2.0 * d.cdf(-t.abs())
    }

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(0.1), 2.252_712_651_734_206, epsilon = 1e-13);
    }

    #[test]
    fn inc_beta_edges_and_symmetry() {
        assert_eq!(inc_beta(2.0, 3.0, 0.0), 0.0);
        assert_eq!(inc_beta(2.0, 3.0, 1.0), 1.0);
        // I_x(1, 1) = x; I_x(a, 1) = x^a.
        assert_abs_diff_eq!(inc_beta(1.0, 1.0, 0.3), 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(inc_beta(3.0, 1.0, 0.4), 0.064, epsilon = 1e-14);
        let x = 0.37;
        assert_abs_diff_eq!(inc_beta(2.5, 4.0, x), 1.0 - inc_beta(4.0, 2.5, 1.0 - x), epsilon = 1e-14);
    }

    #[test]
    fn student_t_against_oracle() {
        for &df in &[1.0, 2.5, 4.0, 10.0, 57.3, 1_000.0, 120_000.0, 4_000_000.0] {
            for &t in &[0.0, 0.1, -0.7, 1.2247, 2.0, -3.5, 8.0, 25.0] {
                let got = student_t_two_sided(t, df);
                let want = oracle_two_sided(t, df);
                assert!((got - want).abs() <= 1e-8, "t={t} df={df}: {got} vs {want}");
            }
        }
        assert_eq!(student_t_two_sided(f64::INFINITY, 3.0), 0.0);
    }

    #[test]
    fn welch_hand_example() {
        let r = welch_t(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        let se = (2.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(r.t, -1.0 / se, epsilon = 1e-12);
        assert_abs_diff_eq!(r.t, -1.224_745, epsilon = 1e-5);
        assert_abs_diff_eq!(r.df, 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p_two_sided, oracle_two_sided(r.t, 4.0), epsilon = 1e-10);
        assert_abs_diff_eq!(r.p_two_sided, 0.2878, epsilon = 1e-3);
    }

    #[test]
    fn welch_degenerate_cases() {
        let r = welch_t(&[1.0, 2.0, 5.0], &[1.0, 2.0, 5.0]).unwrap();
        assert_eq!((r.t, r.p_two_sided), (0.0, 1.0));
        let r = welch_t(&[1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((r.t, r.p_two_sided), (0.0, 1.0));
        let r = welch_t(&[2.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!((r.t, r.p_two_sided), (f64::INFINITY, 0.0));
        let r = welch_t(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert_eq!(r.t, f64::NEG_INFINITY);
        assert!(welch_t(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ols_exact_line() {
        let fit = ols_fit((0..10).map(|i| (i as f64, 2.0 * i as f64 + 1.0))).unwrap();
        assert_abs_diff_eq!(fit.slope, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_hand_example() {
        let fit = ols_fit([(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(fit.slope, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fit.intercept, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fit.r_squared, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn ols_errors() {
        assert!(matches!(ols_fit([(1.0, 2.0), (1.0, 3.0)]), Err(Error::ZeroVariance)));
        assert!(matches!(ols_fit([(1.0, 2.0)]), Err(Error::Insufficient(_))));
    }

    proptest! {
        #[test]
        fn welch_antisymmetry(
            a in proptest::collection::vec(-5.0f64..5.0, 2..30),
            b in proptest::collection::vec(-5.0f64..5.0, 2..30),
        ) {
            let ab = welch_t(&a, &b).unwrap();
            let ba = welch_t(&b, &a).unwrap();
            prop_assert!((ab.t + ba.t).abs() <= 1e-12);
            prop_assert!((ab.df - ba.df).abs() <= 1e-12 * ab.df.abs().max(1.0));
            prop_assert!((ab.p_two_sided - ba.p_two_sided).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p_two_sided));
        }

        #[test]
        fn ols_matches_closed_form_and_order(
            pts in proptest::collection::vec((0.0f64..1e5, -1.0f64..1.0), 3..200),
            split in 0usize..200,
        ) {
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            prop_assume!(sxx > 1e-6);
            let slope = sxy / sxx;
            let fit = ols_fit(pts.iter().copied()).unwrap();
            let tol = 1e-9 * slope.abs().max(1e-9);
            prop_assert!((fit.slope - slope).abs() <= tol.max(1e-15));

            let rev = ols_fit(pts.iter().rev().copied()).unwrap();
            prop_assert!((fit.slope - rev.slope).abs() <= 1e-9 * fit.slope.abs().max(1e-9));
            prop_assert!((fit.intercept - rev.intercept).abs() <= 1e-9 * fit.intercept.abs().max(1e-9));

            let k = split.min(pts.len());
            let mut left = OlsAccumulator::new();
            left.extend(pts[..k].iter().copied());
            let mut right = OlsAccumulator::new();
            right.extend(pts[k..].iter().copied());
            left.merge(&right);
            let merged = left.finish().unwrap();
            prop_assert!((merged.slope - fit.slope).abs() <= 1e-9 * fit.slope.abs().max(1e-9));
            prop_assert_eq!(merged.n, fit.n);
        }
    }
}
