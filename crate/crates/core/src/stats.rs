//! Summary statistics over censored samples and scaling tables.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Quantile of sorted data by linear interpolation between order statistics
/// (Hyndman-Fan type 7, the R and NumPy default).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Sorts a copy of `values` (NaNs rejected) and returns the quantile.
pub fn quantile(values: &[f64], p: f64) -> Option<f64> {
    let sorted = sorted_finite(values).ok()?;
    quantile_sorted(&sorted, p)
}

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|x| x.is_nan()) {
        return param("NaN in sample");
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Location and spread of one metric. Censored trials are counted but never
/// imputed: the quantiles describe the uncensored values only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub trials: usize,
    pub censored: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub p01: Option<f64>,
    pub p99: Option<f64>,
    /// More than half of the trials were censored.
    pub inconclusive: bool,
}

impl MetricSummary {
    /// `None` entries are censored trials.
    pub fn from_samples(samples: &[Option<f64>]) -> Result<Self> {
        let observed: Vec<f64> = samples.iter().flatten().copied().collect();
        let sorted = sorted_finite(&observed)?;
        let censored = samples.len() - sorted.len();
        // summing in sorted order makes the mean independent of record order
        let mean = (!sorted.is_empty()).then(|| sorted.iter().sum::<f64>() / sorted.len() as f64);
        Ok(MetricSummary {
            trials: samples.len(),
            censored,
            mean,
            median: quantile_sorted(&sorted, 0.5),
            p01: quantile_sorted(&sorted, 0.01),
            p99: quantile_sorted(&sorted, 0.99),
            inconclusive: 2 * censored > samples.len(),
        })
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.censored as f64 / self.trials as f64
        }
    }
}

/// Per-metric summaries plus measured/theoretical ratios.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub metrics: BTreeMap<String, MetricSummary>,
    pub bound_ratios: BTreeMap<String, MetricSummary>,
}

impl SummaryStats {
    pub fn any_inconclusive(&self) -> bool {
        self.metrics.values().any(|m| m.inconclusive)
    }

    /// CSV with one row per metric and ratio.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,metric,trials,censored,mean,median,p01,p99,inconclusive\n");
        let cell = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
        for (kind, map) in [("metric", &self.metrics), ("ratio", &self.bound_ratios)] {
            for (name, m) in map {
                out.push_str(&format!(
                    "{kind},{name},{},{},{},{},{},{},{}\n",
                    m.trials,
                    m.censored,
                    cell(m.mean),
                    cell(m.median),
                    cell(m.p01),
                    cell(m.p99),
                    m.inconclusive
                ));
            }
        }
        out
    }
}

/// One group of a scaling sweep: samples at size `n` and the theoretical
/// bound they are compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingGroup {
    pub n: usize,
    pub samples: Vec<Option<f64>>,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub median: f64,
    pub bound: f64,
    pub ratio: f64,
    pub censored: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Flat,
    Growing,
    Shrinking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// max ratio / min ratio.
    pub spread: f64,
    pub trend: Trend,
}

impl ScalingReport {
    pub fn verdict(&self) -> String {
        let word = match self.trend {
            Trend::Flat => "flat",
            Trend::Growing => "growing",
            Trend::Shrinking => "shrinking",
        };
        format!("{word} ({:.1})", self.spread)
    }
}

impl fmt::Display for ScalingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} {:>14} {:>14} {:>10}", "n", "median", "bound", "ratio")?;
        for r in &self.rows {
            writeln!(f, "{:>8} {:>14.1} {:>14.1} {:>10.4}", r.n, r.median, r.bound, r.ratio)?;
        }
        write!(f, "verdict: {}", self.verdict())
    }
}

/// Median-over-bound table across sizes. The trend is flat when the spread
/// of the ratio column is at most `flat_within`, otherwise the direction from
/// the smallest to the largest `n`.
pub fn scaling_report(groups: &[ScalingGroup], flat_within: f64) -> Result<ScalingReport> {
    if groups.len() < 2 {
        return param(format!("scaling needs at least 2 group sizes, got {}", groups.len()));
    }
    let mut rows = Vec::with_capacity(groups.len());
    for g in groups {
        let s = MetricSummary::from_samples(&g.samples)?;
        let median = s
            .median
            .ok_or_else(|| Error::Parameter(format!("group n={} has no uncensored samples", g.n)))?;
        if s.inconclusive {
            return param(format!(
                "group n={} is inconclusive ({} of {} censored)",
                g.n, s.censored, s.trials
            ));
        }
        if !(g.bound > 0.0 && g.bound.is_finite()) {
            return param(format!("group n={} has non-positive bound {}", g.n, g.bound));
        }
        rows.push(ScalingRow {
            n: g.n,
            median,
            bound: g.bound,
            ratio: median / g.bound,
            censored: s.censored,
        });
    }
    rows.sort_by_key(|r| r.n);
    let max = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return param("ratios must be positive");
    }
    let spread = max / min;
    let trend = if spread <= flat_within {
        Trend::Flat
    } else if rows[rows.len() - 1].ratio > rows[0].ratio {
        Trend::Growing
    } else {
        Trend::Shrinking
    };
    Ok(ScalingReport { rows, spread, trend })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn type7_matches_numpy() {
        // numpy.quantile([1, 2, 3, 4, 10], [0.5, 0.01, 0.99, 0.25])
        let x = [4.0, 1.0, 10.0, 3.0, 2.0];
        assert_eq!(quantile(&x, 0.5), Some(3.0));
        assert!((quantile(&x, 0.01).unwrap() - 1.04).abs() < 1e-12);
        assert!((quantile(&x, 0.99).unwrap() - 9.76).abs() < 1e-12);
        assert_eq!(quantile(&x, 0.25), Some(2.0));
        assert_eq!(quantile(&[], 0.5), None);
        assert_eq!(quantile(&[7.0], 0.3), Some(7.0));
    }

    #[test]
    fn censoring_is_counted_not_imputed() {
        let s = MetricSummary::from_samples(&[Some(1.0), None, Some(3.0), None, None]).unwrap();
        assert_eq!((s.trials, s.censored), (5, 3));
        assert_eq!(s.median, Some(2.0));
        assert!(s.inconclusive);
        let s = MetricSummary::from_samples(&[Some(1.0), None]).unwrap();
        assert!(!s.inconclusive);
        let s = MetricSummary::from_samples(&[None]).unwrap();
        assert_eq!(s.median, None);
        assert!(MetricSummary::from_samples(&[Some(f64::NAN)]).is_err());
    }

    #[test]
    fn constant_ratio_is_flat() {
        let groups: Vec<ScalingGroup> = [8usize, 16, 32]
            .iter()
            .map(|&n| ScalingGroup {
                n,
                samples: vec![Some(2.0 * n as f64); 3],
                bound: n as f64,
            })
            .collect();
        let r = scaling_report(&groups, 4.0).unwrap();
        assert_eq!(r.verdict(), "flat (1.0)");
        assert!(r.rows.iter().all(|row| row.ratio == 2.0));
    }

    #[test]
    fn growing_ratio_detected() {
        let groups: Vec<ScalingGroup> = [8usize, 64]
            .iter()
            .map(|&n| ScalingGroup {
                n,
                samples: vec![Some((n * n) as f64)],
                bound: n as f64,
            })
            .collect();
        let r = scaling_report(&groups, 4.0).unwrap();
        assert_eq!(r.trend, Trend::Growing);
        assert_eq!(r.verdict(), "growing (8.0)");
    }

    #[test]
    fn scaling_errors() {
        let one = ScalingGroup {
            n: 8,
            samples: vec![Some(1.0)],
            bound: 1.0,
        };
        assert!(scaling_report(&[one.clone()], 4.0).is_err());
        let empty = ScalingGroup {
            n: 16,
            samples: vec![],
            bound: 1.0,
        };
        assert!(scaling_report(&[one.clone(), empty], 4.0).is_err());
        let censored = ScalingGroup {
            n: 16,
            samples: vec![None, None, Some(1.0)],
            bound: 1.0,
        };
        assert!(scaling_report(&[one, censored], 4.0).is_err());
    }

    #[test]
    fn csv_has_a_row_per_entry() {
        let mut s = SummaryStats::default();
        s.metrics
            .insert("t".into(), MetricSummary::from_samples(&[Some(1.0)]).unwrap());
        s.bound_ratios
            .insert("t".into(), MetricSummary::from_samples(&[None]).unwrap());
        let csv = s.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("ratio,t,1,1,,,,,true"));
    }

    proptest! {
        #[test]
        fn quantiles_are_monotone(mut xs in prop::collection::vec(-1e6f64..1e6, 1..60), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let ql = quantile(&xs, lo).unwrap();
            let qh = quantile(&xs, hi).unwrap();
            prop_assert!(ql <= qh);
            xs.sort_by(f64::total_cmp);
            prop_assert!(xs[0] <= ql && qh <= xs[xs.len() - 1]);
        }

        #[test]
        fn summary_ignores_order(xs in prop::collection::vec(prop::option::of(0.0f64..1e9), 1..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = xs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(MetricSummary::from_samples(&xs).unwrap(), MetricSummary::from_samples(&shuffled).unwrap());
        }
    }
}
