//! Rank correlations between metric scores and oracle accuracy, and
//! top-model selection.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::registry::ModelRecord;
use crate::spectra::compensated_sum;

/// Metric scores `x` paired with oracle accuracies `y`, one entry per model.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    x: Vec<f64>,
    y: Vec<f64>,
    labels: Vec<String>,
}

impl PairedSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        if labels.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: labels.len() });
        }
        if x.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 pairs, got {}", x.len())));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("paired series".into()));
        }
        Ok(Self { x, y, labels })
    }

    /// Labels the pairs `0..n`.
    pub fn from_xy(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let labels = (0..x.len()).map(|i| i.to_string()).collect();
        Self::new(x, y, labels)
    }

    /// Pairs `metric` with `oracle_field` over the records that carry both,
    /// in model-id order.
    pub fn from_records(records: &[ModelRecord], metric: &str, oracle_field: &str) -> Result<Self> {
        let mut rows: Vec<(&str, f64, f64)> = records
            .iter()
            .filter_map(|r| Some((r.model_id.as_str(), *r.scores.get(metric)?, r.oracle(oracle_field)?)))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        Self::new(
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            rows.iter().map(|r| r.0.to_owned()).collect(),
        )
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CorrelationMethod {
    Spearman,
    KendallTauA,
    KendallTauB,
    /// `|C - D| / (C + D)`, unsigned and without tie correction.
    KendallAbs,
}

impl CorrelationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrelationMethod::Spearman => "spearman",
            CorrelationMethod::KendallTauA => "tau-a",
            CorrelationMethod::KendallTauB => "tau-b",
            CorrelationMethod::KendallAbs => "tau-abs",
        }
    }
}

impl fmt::Display for CorrelationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorrelationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "spearman" => Ok(Self::Spearman),
            "tau-a" | "kendall-tau-a" => Ok(Self::KendallTauA),
            "tau-b" | "kendall" | "kendall-tau-b" => Ok(Self::KendallTauB),
            "tau-abs" | "kendall-abs" => Ok(Self::KendallAbs),
            other => Err(Error::InvalidArgument(format!("unknown correlation method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub method: CorrelationMethod,
    pub coefficient: f64,
    pub n: usize,
    /// Number of groups of two or more tied values.
    pub tie_groups_x: usize,
    pub tie_groups_y: usize,
    pub concordant: Option<u64>,
    pub discordant: Option<u64>,
}

fn sorted_order(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    order
}

/// Ranks `1..=n`; tied values share the mean of the ranks they span.
pub fn rank_values(v: &[f64]) -> Vec<f64> {
    let order = sorted_order(v);
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let mid = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    ranks
}

fn tie_groups(v: &[f64]) -> usize {
    let order = sorted_order(v);
    let mut groups = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        if j - i > 1 {
            groups += 1;
        }
        i = j;
    }
    groups
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = compensated_sum(x.iter().copied()) / n;
    let my = compensated_sum(y.iter().copied()) / n;
    let sxy = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = compensated_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let syy = compensated_sum(y.iter().map(|b| (b - my) * (b - my)));
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of the midranks.
pub fn spearman(s: &PairedSeries) -> Result<CorrelationReport> {
    let coefficient = pearson(&rank_values(&s.x), &rank_values(&s.y))?;
    Ok(CorrelationReport {
        method: CorrelationMethod::Spearman,
        coefficient,
        n: s.len(),
        tie_groups_x: tie_groups(&s.x),
        tie_groups_y: tie_groups(&s.y),
        concordant: None,
        discordant: None,
    })
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub concordant: u64,
    pub discordant: u64,
    /// Pairs tied in x only.
    pub ties_x: u64,
    /// Pairs tied in y only.
    pub ties_y: u64,
    pub ties_both: u64,
}

pub fn pair_counts(x: &[f64], y: &[f64]) -> PairCounts {
    let mut c = PairCounts::default();
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            let dx = x[i].partial_cmp(&x[j]).unwrap_or(std::cmp::Ordering::Equal);
            let dy = y[i].partial_cmp(&y[j]).unwrap_or(std::cmp::Ordering::Equal);
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => c.ties_both += 1,
                (Equal, _) => c.ties_x += 1,
                (_, Equal) => c.ties_y += 1,
                (a, b) if a == b => c.concordant += 1,
                _ => c.discordant += 1,
            }
        }
    }
    c
}

/// Kendall rank correlation over all `n(n-1)/2` index pairs.
pub fn kendall(s: &PairedSeries, method: CorrelationMethod) -> Result<CorrelationReport> {
    let c = pair_counts(&s.x, &s.y);
    let n = s.len() as u64;
    let pairs = n * (n - 1) / 2;
    // x is constant iff every pair is tied in x
    if c.ties_x + c.ties_both == pairs {
        return Err(Error::ZeroVariance("x"));
    }
    if c.ties_y + c.ties_both == pairs {
        return Err(Error::ZeroVariance("y"));
    }
    let net = c.concordant as f64 - c.discordant as f64;
    let untied = (c.concordant + c.discordant) as f64;
    let coefficient = match method {
        CorrelationMethod::KendallTauA => net / pairs as f64,
        CorrelationMethod::KendallTauB => {
            net / ((untied + c.ties_x as f64) * (untied + c.ties_y as f64)).sqrt()
        }
        CorrelationMethod::KendallAbs => {
            if untied == 0.0 {
                return Err(Error::AllPairsTied);
            }
            net.abs() / untied
        }
        CorrelationMethod::Spearman => {
            return Err(Error::InvalidArgument("kendall called with spearman method".into()))
        }
    };
    Ok(CorrelationReport {
        method,
        coefficient: coefficient.clamp(-1.0, 1.0),
        n: s.len(),
        tie_groups_x: tie_groups(&s.x),
        tie_groups_y: tie_groups(&s.y),
        concordant: Some(c.concordant),
        discordant: Some(c.discordant),
    })
}

pub fn correlate(s: &PairedSeries, method: CorrelationMethod) -> Result<CorrelationReport> {
    match method {
        CorrelationMethod::Spearman => spearman(s),
        other => kendall(s, other),
    }
}

/// Outcome of picking the model with the highest metric value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub chosen_id: String,
    pub chosen_metric: f64,
    pub chosen_oracle: f64,
    pub oracle_best_id: String,
    pub oracle_best: f64,
    /// `oracle_best - chosen_oracle`, never negative.
    pub gap: f64,
    /// Another model shared the top metric value; the smallest id won.
    pub metric_tie: bool,
    pub eligible: usize,
}

/// Picks the argmax of `metric` among records that carry both the metric and
/// the oracle field. Ties go to the lexicographically smallest model id.
pub fn select_top(records: &[ModelRecord], metric: &str, oracle_field: &str) -> Result<SelectionReport> {
    let mut rows: Vec<(&str, f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.model_id.as_str(), *r.scores.get(metric)?, r.oracle(oracle_field)?)))
        .collect();
    if rows.is_empty() {
        return Err(Error::NoEligibleRecords);
    }
    rows.sort_by(|a, b| a.0.cmp(b.0));

    let argmax = |key: fn(&(&str, f64, f64)) -> f64| {
        let mut best = 0;
        for (i, row) in rows.iter().enumerate().skip(1) {
            if key(row) > key(&rows[best]) {
                best = i;
            }
        }
        best
    };
    let chosen = argmax(|r| r.1);
    let best = argmax(|r| r.2);
    let metric_tie = rows
        .iter()
        .enumerate()
        .any(|(i, r)| i != chosen && r.1 == rows[chosen].1);
    Ok(SelectionReport {
        chosen_id: rows[chosen].0.to_owned(),
        chosen_metric: rows[chosen].1,
        chosen_oracle: rows[chosen].2,
        oracle_best_id: rows[best].0.to_owned(),
        oracle_best: rows[best].2,
        gap: rows[best].2 - rows[chosen].2,
        metric_tie,
        eligible: rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(x: &[f64], y: &[f64]) -> PairedSeries {
        PairedSeries::from_xy(x.to_vec(), y.to_vec()).unwrap()
    }

    fn record(id: &str, metric: f64, oracle: f64) -> ModelRecord {
        let mut r = ModelRecord::new(id);
        r.scores.insert("lidar".into(), metric);
        r.oracle_accuracy = Some(oracle);
        r
    }

    #[test]
    fn midranks() {
        assert_eq!(rank_values(&[10.0, 20.0, 30.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(rank_values(&[5.0, 5.0, 1.0]), vec![2.5, 2.5, 1.0]);
        assert_eq!(rank_values(&[3.0, 1.0, 4.0, 1.0, 5.0]), vec![3.0, 1.5, 4.0, 1.5, 5.0]);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&series(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0])).unwrap().coefficient, 1.0);
        assert_eq!(spearman(&series(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0])).unwrap().coefficient, -1.0);
        let r = spearman(&series(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0])).unwrap();
        assert!((r.coefficient - 0.8).abs() < 1e-12);
        assert!(matches!(
            spearman(&series(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0])),
            Err(Error::ZeroVariance("x"))
        ));
    }

    #[test]
    fn kendall_examples() {
        let r = kendall(&series(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), CorrelationMethod::KendallTauB).unwrap();
        assert_eq!((r.coefficient, r.concordant, r.discordant), (1.0, Some(3), Some(0)));
        let r = kendall(&series(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), CorrelationMethod::KendallTauB).unwrap();
        assert_eq!((r.coefficient, r.concordant, r.discordant), (-1.0, Some(0), Some(3)));
        let s = series(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]);
        let r = kendall(&s, CorrelationMethod::KendallTauA).unwrap();
        assert_eq!((r.concordant, r.discordant), (Some(5), Some(1)));
        assert!((r.coefficient - 4.0 / 6.0).abs() < 1e-15);
        let r = kendall(&series(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), CorrelationMethod::KendallAbs).unwrap();
        assert_eq!(r.coefficient, 1.0);
    }

    #[test]
    fn kendall_tie_handling() {
        // x = [1,1,2,2], y = [1,2,1,2]: every untied-in-x pair is split evenly
        let s = series(&[1.0, 1.0, 2.0, 2.0], &[1.0, 2.0, 1.0, 2.0]);
        let r = kendall(&s, CorrelationMethod::KendallTauB).unwrap();
        assert_eq!(r.coefficient, 0.0);
        assert_eq!((r.tie_groups_x, r.tie_groups_y), (2, 2));
        // x = [1,1,2], y = [1,2,2]: C = 1, D = 0, one x-only tie, one y-only tie
        let s = series(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]);
        let r = kendall(&s, CorrelationMethod::KendallTauB).unwrap();
        assert!((r.coefficient - 0.5).abs() < 1e-15);
        assert!(matches!(kendall(&s, CorrelationMethod::KendallAbs), Ok(_)));
        let s = series(&[1.0, 1.0, 2.0, 2.0], &[5.0, 6.0, 6.0, 6.0]);
        // pairs: (0,1) x-tie, (0,2) C, (0,3) C, (1,2) y-tie, (1,3) y-tie, (2,3) both
        assert_eq!(pair_counts(s.x(), s.y()), PairCounts { concordant: 2, discordant: 0, ties_x: 1, ties_y: 2, ties_both: 1 });
        let s = series(&[1.0, 2.0], &[4.0, 4.0]);
        assert!(matches!(kendall(&s, CorrelationMethod::KendallTauB), Err(Error::ZeroVariance("y"))));
    }

    #[test]
    fn select_examples() {
        let one = vec![record("m1", 3.0, 50.0)];
        let r = select_top(&one, "lidar", "oracle_accuracy").unwrap();
        assert_eq!((r.chosen_id.as_str(), r.gap), ("m1", 0.0));

        let two = vec![record("a", 1.0, 60.0), record("b", 2.0, 70.0)];
        assert_eq!(select_top(&two, "lidar", "oracle_accuracy").unwrap().gap, 0.0);

        let three = vec![record("m1", 10.0, 0.70), record("m2", 20.0, 0.60), record("m3", 15.0, 0.68)];
        let r = select_top(&three, "lidar", "oracle_accuracy").unwrap();
        assert_eq!(r.chosen_id, "m2");
        assert_eq!(r.oracle_best_id, "m1");
        assert!((r.gap - 0.10).abs() < 1e-12);
        assert!(!r.metric_tie);

        assert!(matches!(select_top(&three, "rankme", "oracle_accuracy"), Err(Error::NoEligibleRecords)));
    }

    #[test]
    fn select_tie_goes_to_smallest_id() {
        let recs = vec![record("zeta", 5.0, 1.0), record("alpha", 5.0, 2.0)];
        let r = select_top(&recs, "lidar", "oracle_accuracy").unwrap();
        assert_eq!(r.chosen_id, "alpha");
        assert!(r.metric_tie);
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(
            pairs in prop::collection::vec((-100i32..100, -100i32..100), 3..12),
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let tx: Vec<f64> = x.iter().map(|v| (v / 10.0).exp() * 3.0 + 1.0).collect();
            let base = series(&x, &y);
            let moved = series(&tx, &y);
            for method in [CorrelationMethod::Spearman, CorrelationMethod::KendallTauA, CorrelationMethod::KendallTauB] {
                match (correlate(&base, method), correlate(&moved, method)) {
                    (Ok(a), Ok(b)) => prop_assert_eq!(a.coefficient, b.coefficient),
                    (Err(_), Err(_)) => {}
                    other => prop_assert!(false, "{:?}", other),
                }
            }
        }

        #[test]
        fn antisymmetry_without_ties(perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle()) {
            let x: Vec<f64> = (0..8).map(|v| v as f64).collect();
            let y: Vec<f64> = perm.iter().map(|&v| v as f64).collect();
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            for method in [CorrelationMethod::Spearman, CorrelationMethod::KendallTauA, CorrelationMethod::KendallTauB] {
                let a = correlate(&series(&x, &y), method).unwrap().coefficient;
                let b = correlate(&series(&x, &neg), method).unwrap().coefficient;
                prop_assert!((a + b).abs() < 1e-12);
            }
        }

        #[test]
        fn self_correlation_is_one(v in prop::collection::vec(-50i32..50, 2..15)) {
            let x: Vec<f64> = v.iter().map(|a| *a as f64).collect();
            prop_assume!(x.iter().any(|a| *a != x[0]));
            let s = series(&x, &x);
            prop_assert!((spearman(&s).unwrap().coefficient - 1.0).abs() < 1e-12);
            prop_assert!((kendall(&s, CorrelationMethod::KendallTauB).unwrap().coefficient - 1.0).abs() < 1e-12);
        }

        #[test]
        fn selection_argmax_invariance(metric in prop::collection::vec(0.1f64..100.0, 1..10)) {
            let recs: Vec<ModelRecord> = metric.iter().enumerate()
                .map(|(i, m)| record(&format!("m{i:02}"), *m, i as f64)).collect();
            let moved: Vec<ModelRecord> = metric.iter().enumerate()
                .map(|(i, m)| record(&format!("m{i:02}"), m.ln() * 7.0 - 2.0, i as f64)).collect();
            let a = select_top(&recs, "lidar", "oracle_accuracy").unwrap();
            let b = select_top(&moved, "lidar", "oracle_accuracy").unwrap();
            prop_assert_eq!(a.chosen_id, b.chosen_id);
            prop_assert!(a.gap >= 0.0);
        }
    }
}
