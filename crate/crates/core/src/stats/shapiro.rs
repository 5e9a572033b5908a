//! Shapiro-Wilk W with Royston's approximations for the coefficients and
//! the p-value (algorithm AS R94), valid for 3 ≤ n ≤ 5000.

use statrs::distribution::{ContinuousCDF, Normal};

use super::TestResult;
use crate::error::{Error, Result};

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

/// Coefficients `a_1 ≥ … ≥ a_{n/2} > 0` pairing the i-th largest with the i-th smallest value.
fn coefficients(n: usize, normal: &Normal) -> Vec<f64> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let an25 = n as f64 + 0.25;
    // expected normal order statistics (negative for the lower half)
    let m: Vec<f64> = (1..=half).map(|i| normal.inverse_cdf((i as f64 - 0.375) / an25)).collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / (n as f64).sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;

    let mut a = vec![0.0; half];
    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
        a[1] = a2;
        (2, fac)
    } else {
        ((1), ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt())
    };
    a[0] = a1;
    for i in first..half {
        a[i] = -m[i] / fac;
    }
    a
}

pub fn shapiro_wilk(x: &[f64]) -> Result<TestResult> {
    let n = x.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::Stats(format!("shapiro-wilk needs 3 to 5000 values, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Stats("shapiro-wilk input contains non-finite values".into()));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let range = s[n - 1] - s[0];
    if range <= 0.0 {
        return Err(Error::Stats("degenerate sample: zero variance".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let a = coefficients(n, &normal);

    // scale by the range for conditioning; W is scale-invariant
    let z: Vec<f64> = s.iter().map(|v| (v - s[0]) / range).collect();
    let mean = z.iter().sum::<f64>() / n as f64;
    let ssq: f64 = z.iter().map(|v| (v - mean) * (v - mean)).sum();
    let num: f64 = a.iter().enumerate().map(|(i, ai)| ai * (z[n - 1 - i] - z[i])).sum();
    let w = (num * num / ssq).min(1.0);

    let p = if n == 3 {
        const PI6: f64 = 6.0 / std::f64::consts::PI;
        const STQR: f64 = std::f64::consts::FRAC_PI_3;
        (PI6 * (w.sqrt().asin() - STQR)).clamp(0.0, 1.0)
    } else {
        let an = n as f64;
        let mut w1 = (1.0 - w).ln();
        let (mu, sigma) = if n <= 11 {
            let gamma = poly(&[-2.273, 0.459], an);
            if w1 >= gamma {
                return Ok(TestResult {
                    statistic: w,
                    p_value: 0.0,
                    n,
                    method_note: "Royston AS R94; p below representable range".into(),
                });
            }
            w1 = -(gamma - w1).ln();
            (
                poly(&[0.544, -0.39978, 0.025054, -6.714e-4], an),
                poly(&[1.3822, -0.77857, 0.062767, -0.0020322], an).exp(),
            )
        } else {
            let ln_n = an.ln();
            (
                poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], ln_n),
                poly(&[-0.4803, -0.082676, 0.0030302], ln_n).exp(),
            )
        };
        (1.0 - normal.cdf((w1 - mu) / sigma)).clamp(0.0, 1.0)
    };
    Ok(TestResult {
        statistic: w,
        p_value: p,
        n,
        method_note: "Royston AS R94 approximation".into(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    // Reference values from scipy.stats.shapiro (an independent AS R94 implementation).
    const CASES: &[(&[f64], f64, f64)] = &[
        (&[148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0, 182.0, 195.0, 236.0], 0.7888146948631716, 0.006703814061898823),
        (&[1.0, 2.0, 4.0], 0.9642857142857142, 0.6368868450289689),
        (&[2.1, 3.4, 1.9, 5.6, 4.4], 0.9320849391953863, 0.6106559022604845),
        (
            &[
                0.0, 3.174994, -0.366623, -2.177444, 2.28234, 3.395461, -0.899624, -0.454411, 4.177485, 2.990222, -0.884192, 1.753003,
                5.399379, 2.27409, -0.115395, 4.077175, 5.837819, 1.643088, 1.414918, 6.119984,
            ],
            0.9607947012153877,
            0.5598458251287812,
        ),
        (
            &[
                87.0, 84.4513, 78.6096, 73.9715, 74.1227, 79.0244, 85.0429, 87.699, 85.0585, 79.1952, 74.6221, 74.8757, 79.8397, 85.8332,
                88.396, 85.6644, 79.7813, 75.2745, 75.6304, 80.6553, 86.6222, 89.0911, 86.2693, 80.3679, 75.9287, 76.3869, 81.4713, 87.41,
                89.7842, 86.8729, 80.955, 76.5847, 77.1451, 82.2877, 88.1964, 90.4753, 87.4754,
            ],
            0.9256133360798373,
            0.016429328233617032,
        ),
        (
            &[
                1.0, 1.108988, 1.229855, 1.363895, 1.512544, 1.677394, 1.860211, 2.062952, 2.28779, 2.537132, 2.813651, 3.120306, 3.460383,
                3.837525, 4.255771, 4.7196, 5.233982, 5.804426, 6.437041, 7.138604, 7.916629, 8.77945, 9.736309, 10.797454, 11.974251,
                13.279306, 14.726597, 16.331626, 18.111584, 20.085537,
            ],
            0.8630617333196389,
            0.0011784901340413437,
        ),
    ];

    #[test]
    fn matches_reference_implementation() {
        for (x, w, p) in CASES {
            let r = shapiro_wilk(x).unwrap();
            assert!((r.statistic - w).abs() < 1e-6, "n={} W {} vs {w}", x.len(), r.statistic);
            assert!((r.p_value - p).abs() < 1e-4, "n={} p {} vs {p}", x.len(), r.p_value);
        }
    }

    #[test]
    fn bimodal_sample_is_rejected() {
        let mut x = vec![0.0; 20];
        x.extend([1.0; 20]);
        let r = shapiro_wilk(&x).unwrap();
        assert!(r.p_value < 0.01);
        assert!((r.statistic - 0.6372492336875555).abs() < 1e-6);
    }

    #[test]
    fn rejects_small_or_constant_samples() {
        assert!(shapiro_wilk(&[1.0, 2.0]).is_err());
        let e = shapiro_wilk(&[3.0; 10]).unwrap_err();
        assert!(e.to_string().contains("degenerate sample"));
    }

    proptest! {
        #[test]
        fn w_is_affine_invariant(x in proptest::collection::vec(-100.0f64..100.0, 3..60), a in 0.01f64..50.0, b in -1e3f64..1e3) {
            let base = shapiro_wilk(&x);
            prop_assume!(base.is_ok());
            let base = base.unwrap();
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r = shapiro_wilk(&y).unwrap();
            prop_assert!((r.statistic - base.statistic).abs() < 1e-9);
            prop_assert!(r.statistic > 0.0 && r.statistic <= 1.0);
        }
    }
}
