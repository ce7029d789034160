use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Mean and sample standard deviation (`n - 1` denominator). `std` is
/// `None` for a single value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: Option<f64>,
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = f.precision().unwrap_or(1);
        match self.std {
            Some(s) => write!(f, "{:.p$} ± {:.p$}", self.mean, s),
            None => write!(f, "{:.p$} ± n/a", self.mean),
        }
    }
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::EmptyData("no values to summarize".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Ok(Summary { n, mean, std })
}

/// Relative change of `cond` against `baseline`, in percent.
pub fn pct_delta(cond: f64, baseline: f64) -> f64 {
    100.0 * (cond - baseline) / baseline
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-tailed.
    pub p: f64,
    pub df: usize,
    /// Set when the differences have zero variance; `t` is then infinite
    /// (or 0 when every difference is 0).
    pub degenerate: bool,
}

/// Two-tailed p-value of Student's t with `df` degrees of freedom.
pub fn t_two_tailed_p(t: f64, df: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

pub fn t_cdf(t: f64, df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1").cdf(t)
}

/// Paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Config(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Config("paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = summarize(&d)?;
    let n = d.len();
    let sd = s.std.unwrap_or(0.0);
    let df = n - 1;
    if sd == 0.0 {
        let (t, p) = if s.mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(s.mean), 0.0)
        };
        return Ok(TTest { t, p, df, degenerate: true });
    }
    let t = s.mean / (sd / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: t_two_tailed_p(t, df),
        df,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RANDOM: [f64; 5] = [122.0, 117.9, 118.3, 122.3, 117.8];
    const PIPELINE: [f64; 5] = [112.9, 116.1, 114.9, 111.4, 109.8];

    /// Composite Simpson integration of the Student-t density.
    fn t_cdf_numeric(x: f64, df: f64) -> f64 {
        let c = statrs::function::gamma::ln_gamma((df + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln();
        let pdf = |t: f64| (c - (df + 1.0) / 2.0 * (1.0 + t * t / df).ln()).exp();
        let n = 20_000;
        let h = x.abs() / n as f64;
        let mut s = pdf(0.0) + pdf(x.abs());
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
        }
        let half = s * h / 3.0;
        if x >= 0.0 {
            0.5 + half
        } else {
            0.5 - half
        }
    }

    #[test]
    fn t_cdf_table_value() {
        assert!((t_cdf(2.776, 4) - 0.975).abs() < 1e-3);
        for (x, df) in [(2.776, 4.0), (1.0, 3.0), (-0.7, 9.0)] {
            assert!((t_cdf(x, df as usize) - t_cdf_numeric(x, df)).abs() < 1e-8);
        }
    }

    #[test]
    fn published_per_seed_values() {
        let r = paired_t_test(&RANDOM, &PIPELINE).unwrap();
        assert!((3.7..=4.0).contains(&r.t), "{}", r.t);
        assert!((0.015..=0.022).contains(&r.p), "{}", r.p);
        assert_eq!(r.df, 4);
        let a = summarize(&RANDOM).unwrap();
        let b = summarize(&PIPELINE).unwrap();
        assert_eq!(format!("{a:.1}"), "119.7 ± 2.3");
        assert_eq!(format!("{b:.1}"), "113.0 ± 2.6");
        let gap = pct_delta(b.mean, a.mean);
        assert!((gap + 5.5).abs() <= 0.1, "{gap}");
    }

    #[test]
    fn published_phase2_deltas() {
        let random = 423.0;
        for (cond, want) in [(373.2, -11.8), (371.5, -12.2), (349.0, -17.5)] {
            assert!((pct_delta(cond, random) - want).abs() < 0.1);
        }
    }

    #[test]
    fn degenerate_cases() {
        let r = paired_t_test(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((r.t, r.p, r.degenerate), (0.0, 1.0, true));
        let r = paired_t_test(&[2.0, 3.0], &[1.0, 2.0]).unwrap();
        assert!(r.t.is_infinite() && r.p == 0.0 && r.degenerate);
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
        assert_eq!(summarize(&[4.0]).unwrap().std, None);
        assert_eq!(summarize(&[4.0; 3]).unwrap().std, Some(0.0));
    }

    proptest! {
        #[test]
        fn antisymmetric(a in proptest::collection::vec(-100.0f64..100.0, 5), b in proptest::collection::vec(-100.0f64..100.0, 5)) {
            let x = paired_t_test(&a, &b).unwrap();
            let y = paired_t_test(&b, &a).unwrap();
            prop_assert!((x.t + y.t).abs() <= 1e-9 * x.t.abs().max(1.0));
            prop_assert!((x.p - y.p).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x.p));
        }
    }
}
