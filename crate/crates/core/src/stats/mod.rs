//! Correlation coefficients with p-values, error metrics, normalisation and
//! time-lagged cross-correlation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::timeseries::HourStamp;
use crate::{Error, Result};

pub mod special;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub coefficient: f64,
    pub p_value: f64,
    pub n: usize,
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson's r with a two-sided Student-t p-value on `n - 2` degrees of
/// freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    check_lengths(x, y)?;
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewObservations { needed: 3, got: n });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if !(sxx > 0.0) {
        return Err(Error::ZeroVariance("x"));
    }
    if !(syy > 0.0) {
        return Err(Error::ZeroVariance("y"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        special::student_t_two_sided(t, df)
    };
    Ok(CorrelationResult { coefficient: r, p_value: p, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KendallVariant {
    /// Ties contribute zero; denominator n(n-1)/2.
    #[default]
    TauA,
    /// Tie-corrected denominator.
    TauB,
}

/// Kendall's tau-a with the normal-approximation two-sided p-value.
pub fn kendall(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    kendall_with(x, y, KendallVariant::TauA)
}

pub fn kendall_with(x: &[f64], y: &[f64], variant: KendallVariant) -> Result<CorrelationResult> {
    check_lengths(x, y)?;
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewObservations { needed: 3, got: n });
    }
    let pairs = (n as i64) * (n as i64 - 1) / 2;
    let tau = match variant {
        KendallVariant::TauA => {
            let s = if has_ties(x) || has_ties(y) {
                concordance_quadratic(x, y).0
            } else {
                concordance_fast(x, y)
            };
            2.0 * s as f64 / (n as f64 * (n as f64 - 1.0))
        }
        KendallVariant::TauB => {
            let (s, tx, ty) = concordance_quadratic(x, y);
            let denom = (((pairs - tx) as f64) * ((pairs - ty) as f64)).sqrt();
            if denom == 0.0 {
                return Err(Error::ZeroVariance(if pairs == tx { "x" } else { "y" }));
            }
            s as f64 / denom
        }
    };
    let nf = n as f64;
    let z = 3.0 * tau * (nf * (nf - 1.0)).sqrt() / (2.0 * (2.0 * nf + 5.0)).sqrt();
    Ok(CorrelationResult {
        coefficient: tau,
        p_value: special::normal_two_sided(z),
        n,
    })
}

fn has_ties(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

/// `(concordant - discordant, pairs tied in x, pairs tied in y)` by direct
/// pair enumeration.
fn concordance_quadratic(x: &[f64], y: &[f64]) -> (i64, i64, i64) {
    let (mut s, mut tx, mut ty) = (0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let a = sign(x[i] - x[j]);
            let b = sign(y[i] - y[j]);
            s += a * b;
            tx += (a == 0) as i64;
            ty += (b == 0) as i64;
        }
    }
    (s, tx, ty)
}

fn sign(d: f64) -> i64 {
    if d > 0.0 {
        1
    } else if d < 0.0 {
        -1
    } else {
        0
    }
}

/// `concordant - discordant` for tie-free data in O(n log n): order by x,
/// then every inversion left in y is a discordant pair.
fn concordance_fast(x: &[f64], y: &[f64]) -> i64 {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let discordant = count_inversions(&mut ys, &mut buf) as i64;
    let pairs = (n as i64) * (n as i64 - 1) / 2;
    pairs - 2 * discordant
}

/// Bottom-up merge sort returning the number of strict inversions.
fn count_inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    let mut inversions = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo < n {
            let mid = (lo + width).min(n);
            let hi = (lo + 2 * width).min(n);
            let (mut i, mut j, mut k) = (lo, mid, lo);
            while i < mid && j < hi {
                if v[i] <= v[j] {
                    buf[k] = v[i];
                    i += 1;
                } else {
                    buf[k] = v[j];
                    j += 1;
                    inversions += (mid - i) as u64;
                }
                k += 1;
            }
            buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + (hi - j)].copy_from_slice(&v[j..hi]);
            lo = hi;
        }
        v.copy_from_slice(buf);
        width *= 2;
    }
    inversions
}

/// Root-mean-square error.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(predicted, actual)?;
    if predicted.is_empty() {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    let sse: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

/// `ln(count + 1)` elementwise.
pub fn log_normalize(counts: &[f64]) -> Result<Vec<f64>> {
    counts
        .iter()
        .enumerate()
        .map(|(index, &c)| {
            if c < 0.0 || c.is_nan() {
                Err(Error::NegativeValue { index, value: c })
            } else {
                Ok(c.ln_1p())
            }
        })
        .collect()
}

/// Mean and sample standard deviation of a training column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: f64,
    pub std: f64,
}

impl ZScore {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

pub fn z_normalize(train_column: &[f64]) -> Result<ZScore> {
    let n = train_column.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    let m = mean(train_column);
    let var = train_column.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance("column"));
    }
    Ok(ZScore { mean: m, std: var.sqrt() })
}

/// Lag correlations closer than this are treated as equal.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Correlation of `x` shifted against `y` for each lag in
/// `[-max_lag, max_lag]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagProfile {
    pub correlations: BTreeMap<i64, CorrelationResult>,
    pub best_lag: i64,
}

impl LagProfile {
    pub fn best(&self) -> &CorrelationResult {
        &self.correlations[&self.best_lag]
    }
}

/// Time-lagged cross-correlation. At lag `k` the pairs are
/// `(x[t + k], y[t])`, so `k = -1` means `x` leads `y` by one hour.
/// Lags with fewer than three overlapping hours, or a constant side, are
/// left out.
pub fn tlcc(
    x: &BTreeMap<HourStamp, f64>,
    y: &BTreeMap<HourStamp, f64>,
    max_lag: i64,
) -> Result<LagProfile> {
    if max_lag < 0 {
        return Err(Error::InvalidParameter("max_lag must be non-negative".into()));
    }
    let mut correlations = BTreeMap::new();
    for k in -max_lag..=max_lag {
        let (xs, ys): (Vec<f64>, Vec<f64>) = y
            .iter()
            .filter_map(|(t, yv)| x.get(&t.offset(k)).map(|xv| (*xv, *yv)))
            .unzip();
        if xs.len() < 3 {
            continue;
        }
        if let Ok(r) = pearson(&xs, &ys) {
            correlations.insert(k, r);
        }
    }
    // visit lags by distance from zero, negative first, so the first
    // strict maximum wins ties; |r| within TIE_TOLERANCE counts as a tie
    let mut order: Vec<i64> = correlations.keys().copied().collect();
    order.sort_by_key(|k| (k.abs(), *k));
    let mut best: Option<(i64, f64)> = None;
    for k in order {
        let a = correlations[&k].coefficient.abs();
        if best.is_none_or(|(_, b)| a > b + TIE_TOLERANCE) {
            best = Some((k, a));
        }
    }
    let (best_lag, _) = best.ok_or(Error::TooFewObservations { needed: 3, got: 0 })?;
    Ok(LagProfile { correlations, best_lag })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn distinct(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::hash_set(-1_000_000i64..1_000_000, len)
            .prop_map(|s| s.into_iter().map(|v| v as f64 / 7.0).collect())
    }

    proptest! {
        #[test]
        fn symmetric(x in prop::collection::vec(-100.0f64..100.0, 5..40), seed in any::<u64>()) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.sin() + ((seed >> (i % 60)) & 7) as f64).collect();
            if let (Ok(a), Ok(b)) = (pearson(&x, &y), pearson(&y, &x)) {
                prop_assert!((a.coefficient - b.coefficient).abs() < 1e-12);
            }
            let a = kendall(&x, &y).unwrap();
            let b = kendall(&y, &x).unwrap();
            prop_assert!((a.coefficient - b.coefficient).abs() < 1e-12);
        }

        #[test]
        fn invariances(x in distinct(30), y in distinct(30), scale in 0.1f64..10.0, shift in -50.0f64..50.0) {
            let a = pearson(&x, &y).unwrap();
            let xt: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
            let b = pearson(&xt, &y).unwrap();
            prop_assert!((a.coefficient - b.coefficient).abs() < 1e-9);
            let ka = kendall(&x, &y).unwrap();
            let xm: Vec<f64> = x.iter().map(|v| v.powi(3) + v).collect();
            let kb = kendall(&xm, &y).unwrap();
            prop_assert_eq!(ka.coefficient, kb.coefficient);
        }

        #[test]
        fn fast_path_matches_pairs(x in distinct(60), y in distinct(60)) {
            prop_assert_eq!(concordance_fast(&x, &y), concordance_quadratic(&x, &y).0);
        }

        #[test]
        fn rmse_symmetric_nonneg(a in prop::collection::vec(-1e3f64..1e3, 1..30), d in prop::collection::vec(-1.0f64..1.0, 30)) {
            let b: Vec<f64> = a.iter().zip(&d).map(|(x, e)| x + e).collect();
            let ab = rmse(&a, &b).unwrap();
            prop_assert_eq!(ab, rmse(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(ab == 0.0, a == b);
        }

        #[test]
        fn tlcc_recovers_shift(d in -5i64..=5, vals in prop::collection::vec(0.0f64..10.0, 80)) {
            let x: BTreeMap<HourStamp, f64> = vals.iter().enumerate().map(|(i, v)| (HourStamp(i as i64), *v)).collect();
            prop_assume!(pearson(&vals, &vals.iter().rev().copied().collect::<Vec<_>>()).is_ok());
            let y: BTreeMap<_, _> = x.iter().map(|(h, v)| (h.offset(d), *v)).collect();
            let p = tlcc(&x, &y, 5).unwrap();
            prop_assert!((p.best().coefficient - 1.0).abs() < 1e-9);
            prop_assert_eq!(p.best_lag, -d);
        }
    }
}
