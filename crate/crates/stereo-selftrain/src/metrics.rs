//! Disparity error metrics and the consistency-vs-error analysis.
//!
//! Metric conventions (the public benchmarks use these but rarely define
//! them, so they are pinned here):
//! - `epe`: mean absolute disparity error over valid pixels.
//! - `bad_n`: percentage of valid pixels with error STRICTLY greater than
//!   the threshold; an error exactly at the threshold does not count.
//! - `d1`: percentage of valid pixels that are outliers by the two-sided
//!   rule: error > 3 px AND error > 5% of the ground-truth magnitude.
//! - `avgerr` is the same quantity as `epe`; both fields exist so reports
//!   mirror the usual table headers.
//!
//! The correlation analysis uses Spearman (rank) correlation because the
//! claimed relationship between prediction fluctuation and error is
//! monotone, not linear.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DisparityMap, Grid, Mask};

/// Standard per-run evaluation metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean absolute error, px.
    pub epe: f64,
    /// Outlier percentage (error > 3 px and > 5% of gt).
    pub d1: f64,
    /// bad-t percentages for t in {1.0, 2.0, 4.0}.
    pub bad: Vec<(f64, f64)>,
    /// Same as `epe`; kept to mirror table headers.
    pub avgerr: f64,
    pub n_valid: usize,
}

pub const BAD_THRESHOLDS: [f64; 3] = [1.0, 2.0, 4.0];

fn check_shapes(pred: &DisparityMap, gt: &DisparityMap, valid: &Mask) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::shape(
            gt.grid().shape_str(),
            pred.grid().shape_str(),
        ));
    }
    if valid.width() != gt.width() || valid.height() != gt.height() {
        return Err(Error::shape(
            gt.grid().shape_str(),
            format!("{}x{}", valid.height(), valid.width()),
        ));
    }
    Ok(())
}

fn valid_errors<'a>(
    pred: &'a DisparityMap,
    gt: &'a DisparityMap,
    valid: &'a Mask,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.grid()
        .values()
        .iter()
        .zip(gt.grid().values())
        .zip(valid.values())
        .filter(|(_, &v)| v)
        .map(|((&p, &g), _)| ((p - g).abs(), g))
}

/// End-point error: mean `|pred - gt|` over valid pixels.
pub fn epe(pred: &DisparityMap, gt: &DisparityMap, valid: &Mask) -> Result<f64> {
    check_shapes(pred, gt, valid)?;
    let n = valid.count_valid();
    if n == 0 {
        return Err(Error::invalid("epe over an empty valid set"));
    }
    let sum: f64 = valid_errors(pred, gt, valid).map(|(e, _)| e).sum();
    Ok(sum / n as f64)
}

/// Percentage of valid pixels with `|pred - gt| > t`.
pub fn bad_n(pred: &DisparityMap, gt: &DisparityMap, valid: &Mask, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!(
            "bad-t threshold must be positive, got {}",
            t
        )));
    }
    check_shapes(pred, gt, valid)?;
    let n = valid.count_valid();
    if n == 0 {
        return Err(Error::invalid("bad-t over an empty valid set"));
    }
    let outliers = valid_errors(pred, gt, valid).filter(|(e, _)| *e > t).count();
    Ok(100.0 * outliers as f64 / n as f64)
}

/// Outlier percentage: error > 3 px AND error > 5% of `|gt|`.
pub fn d1(pred: &DisparityMap, gt: &DisparityMap, valid: &Mask) -> Result<f64> {
    check_shapes(pred, gt, valid)?;
    let n = valid.count_valid();
    if n == 0 {
        return Err(Error::invalid("d1 over an empty valid set"));
    }
    let outliers = valid_errors(pred, gt, valid)
        .filter(|(e, g)| *e > 3.0 && *e > 0.05 * g.abs())
        .count();
    Ok(100.0 * outliers as f64 / n as f64)
}

/// All metrics at once.
pub fn eval_report(pred: &DisparityMap, gt: &DisparityMap, valid: &Mask) -> Result<EvalReport> {
    let e = epe(pred, gt, valid)?;
    let d = d1(pred, gt, valid)?;
    let bad = BAD_THRESHOLDS
        .iter()
        .map(|&t| bad_n(pred, gt, valid, t).map(|v| (t, v)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        epe: e,
        d1: d,
        bad,
        avgerr: e,
        n_valid: valid.count_valid(),
    })
}

/// Pools pixel errors across many (pred, gt, valid) triples into one report.
pub fn pooled_report(items: &[(DisparityMap, DisparityMap, Mask)]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::invalid("pooled report over an empty set"));
    }
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut d1_out = 0usize;
    let mut bad_out = [0usize; BAD_THRESHOLDS.len()];
    for (pred, gt, valid) in items {
        check_shapes(pred, gt, valid)?;
        for (e, g) in valid_errors(pred, gt, valid) {
            n += 1;
            sum += e;
            if e > 3.0 && e > 0.05 * g.abs() {
                d1_out += 1;
            }
            for (i, &t) in BAD_THRESHOLDS.iter().enumerate() {
                if e > t {
                    bad_out[i] += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("pooled report over an empty valid set"));
    }
    let epe = sum / n as f64;
    Ok(EvalReport {
        epe,
        d1: 100.0 * d1_out as f64 / n as f64,
        bad: BAD_THRESHOLDS
            .iter()
            .zip(bad_out)
            .map(|(&t, c)| (t, 100.0 * c as f64 / n as f64))
            .collect(),
        avgerr: epe,
        n_valid: n,
    })
}

/// Average ranks (1-based, ties share the mean rank).
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = mean_rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation between a per-pixel fluctuation statistic and
/// the per-pixel absolute error, over valid pixels.
///
/// A positive value means pixels that fluctuate more also err more.
pub fn consistency_error_correlation(
    consistency_map: &Grid,
    error_map: &Grid,
    valid: &Mask,
) -> Result<f64> {
    if !consistency_map.same_shape(error_map) {
        return Err(Error::shape(
            consistency_map.shape_str(),
            error_map.shape_str(),
        ));
    }
    if valid.width() != error_map.width() || valid.height() != error_map.height() {
        return Err(Error::shape(
            error_map.shape_str(),
            format!("{}x{}", valid.height(), valid.width()),
        ));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..consistency_map.len() {
        if valid.values()[i] {
            a.push(consistency_map.values()[i]);
            b.push(error_map.values()[i]);
        }
    }
    if a.len() < 2 {
        return Err(Error::invalid(
            "correlation needs at least 2 valid pixels",
        ));
    }
    let ra = ranks(&a);
    let rb = ranks(&b);
    let n = ra.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for i in 0..ra.len() {
        let da = ra[i] - mean;
        let db = rb[i] - mean;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "an input is constant over the valid set".into(),
        ));
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

/// One named row of an ablation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub report: EvalReport,
}

/// Aligned-text plus machine-readable ablation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Builds a table artifact from named evaluation reports.
pub fn ablation_report(runs: &[(String, EvalReport)]) -> Result<AblationTable> {
    if runs.is_empty() {
        return Err(Error::invalid("ablation report needs at least one run"));
    }
    Ok(AblationTable {
        rows: runs
            .iter()
            .map(|(name, report)| AblationRow {
                name: name.clone(),
                report: report.clone(),
            })
            .collect(),
    })
}

impl AblationTable {
    /// Fixed-width text rendering.
    pub fn to_text(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(4)
            .max(measure("config"));
        let mut out = String::new();
        out.push_str(&format!(
            "{:<name_w$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>9}\n",
            "config", "EPE", "D1", "bad1.0", "bad2.0", "bad4.0", "n_valid",
        ));
        for r in &self.rows {
            let bad: Vec<f64> = r.report.bad.iter().map(|(_, v)| *v).collect();
            out.push_str(&format!(
                "{:<name_w$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>9}\n",
                r.name,
                r.report.epe,
                r.report.d1,
                bad.first().copied().unwrap_or(f64::NAN),
                bad.get(1).copied().unwrap_or(f64::NAN),
                bad.get(2).copied().unwrap_or(f64::NAN),
                r.report.n_valid,
            ));
        }
        out
    }

    /// JSON rendering for downstream tooling.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

fn measure(s: &str) -> usize {
    s.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn map_of(vals: &[f64]) -> DisparityMap {
        DisparityMap::from_vec(vals.len(), 1, vals.to_vec()).unwrap()
    }

    fn all_valid(n: usize) -> Mask {
        Mask::filled(n, 1, true)
    }

    #[test]
    fn epe_examples() {
        let gt = map_of(&[1.0, 3.0]);
        assert_abs_diff_eq!(epe(&gt, &gt, &all_valid(2)).unwrap(), 0.0);
        let pred = map_of(&[1.0, 2.0]);
        assert_abs_diff_eq!(epe(&pred, &gt, &all_valid(2)).unwrap(), 0.5);
    }

    #[test]
    fn epe_excludes_invalid_pixels() {
        let pred = map_of(&[1.0, 101.0]);
        let gt = map_of(&[1.0, 1.0]);
        let mut mask = all_valid(2);
        mask.set(1, 0, false);
        assert_abs_diff_eq!(epe(&pred, &gt, &mask).unwrap(), 0.0);
    }

    #[test]
    fn epe_empty_valid_set_is_an_error() {
        let pred = map_of(&[1.0]);
        let mask = Mask::filled(1, 1, false);
        assert!(epe(&pred, &pred, &mask).is_err());
    }

    #[test]
    fn bad_n_counts_strictly_greater() {
        let gt = map_of(&[0.0, 0.0, 0.0, 0.0]);
        let pred = map_of(&[0.5, 1.5, 2.5, 3.5]);
        let pct = bad_n(&pred, &gt, &all_valid(4), 2.0).unwrap();
        assert_abs_diff_eq!(pct, 50.0);
        // error exactly at threshold is not an outlier
        let pred = map_of(&[2.0]);
        let gt = map_of(&[0.0]);
        assert_abs_diff_eq!(bad_n(&pred, &gt, &all_valid(1), 2.0).unwrap(), 0.0);
        assert_abs_diff_eq!(bad_n(&gt, &gt, &all_valid(1), 2.0).unwrap(), 0.0);
    }

    #[test]
    fn d1_requires_both_conditions() {
        // err=4 at gt=100: 4 > 3 but 4 < 5 -> not an outlier
        let pred = map_of(&[104.0]);
        let gt = map_of(&[100.0]);
        assert_abs_diff_eq!(d1(&pred, &gt, &all_valid(1)).unwrap(), 0.0);
        // err=4 at gt=10: 4 > 3 and 4 > 0.5 -> outlier
        let pred = map_of(&[14.0]);
        let gt = map_of(&[10.0]);
        assert_abs_diff_eq!(d1(&pred, &gt, &all_valid(1)).unwrap(), 100.0);
        assert_abs_diff_eq!(d1(&gt, &gt, &all_valid(1)).unwrap(), 0.0);
    }

    #[test]
    fn spearman_perfect_and_reversed() {
        let a = Grid::from_vec(4, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let rev = Grid::from_vec(4, 1, vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let m = Mask::filled(4, 1, true);
        assert_abs_diff_eq!(
            consistency_error_correlation(&a, &a, &m).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            consistency_error_correlation(&a, &rev, &m).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn spearman_constant_input_is_undefined() {
        let a = Grid::from_vec(3, 1, vec![1.0, 1.0, 1.0]).unwrap();
        let b = Grid::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let m = Mask::filled(3, 1, true);
        assert!(matches!(
            consistency_error_correlation(&a, &b, &m),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn spearman_matches_brute_force_oracle() {
        // Oracle: rank both arrays by sorting with midpoint ties, then
        // Pearson on the ranks, written as directly as possible.
        fn oracle(a: &[f64], b: &[f64]) -> f64 {
            fn rank(v: &[f64]) -> Vec<f64> {
                let mut r = vec![0.0; v.len()];
                for i in 0..v.len() {
                    let mut less = 0;
                    let mut equal = 0;
                    for j in 0..v.len() {
                        if v[j] < v[i] {
                            less += 1;
                        } else if v[j] == v[i] {
                            equal += 1;
                        }
                    }
                    r[i] = less as f64 + (equal as f64 + 1.0) / 2.0;
                }
                r
            }
            let ra = rank(a);
            let rb = rank(b);
            let n = a.len() as f64;
            let ma = ra.iter().sum::<f64>() / n;
            let mb = rb.iter().sum::<f64>() / n;
            let mut cov = 0.0;
            let mut va = 0.0;
            let mut vb = 0.0;
            for i in 0..a.len() {
                cov += (ra[i] - ma) * (rb[i] - mb);
                va += (ra[i] - ma).powi(2);
                vb += (rb[i] - mb).powi(2);
            }
            cov / (va.sqrt() * vb.sqrt())
        }
        let mut state = 12345u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let n = 64;
        let a: Vec<f64> = (0..n).map(|_| (next() * 8.0).round() / 8.0).collect();
        let b: Vec<f64> = (0..n).map(|_| (next() * 8.0).round() / 8.0).collect();
        let ga = Grid::from_vec(8, 8, a.clone()).unwrap();
        let gb = Grid::from_vec(8, 8, b.clone()).unwrap();
        let m = Mask::filled(8, 8, true);
        let got = consistency_error_correlation(&ga, &gb, &m).unwrap();
        assert_abs_diff_eq!(got, oracle(&a, &b), epsilon = 1e-9);
    }

    #[test]
    fn bad_is_monotone_in_threshold_and_d1_bounded_by_bad3() {
        let mut state = 99u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let gt_v: Vec<f64> = (0..64).map(|_| next() * 30.0).collect();
        let pred_v: Vec<f64> = gt_v.iter().map(|g| g + (next() - 0.5) * 12.0).collect();
        let gt = DisparityMap::from_vec(8, 8, gt_v).unwrap();
        let pred = DisparityMap::from_vec(8, 8, pred_v).unwrap();
        let m = Mask::filled(8, 8, true);
        let b1 = bad_n(&pred, &gt, &m, 1.0).unwrap();
        let b2 = bad_n(&pred, &gt, &m, 2.0).unwrap();
        let b3 = bad_n(&pred, &gt, &m, 3.0).unwrap();
        assert!(b2 <= b1 && b3 <= b2);
        let d = d1(&pred, &gt, &m).unwrap();
        assert!(d <= b3 + 1e-12);
    }

    #[test]
    fn epe_is_translation_equivariant() {
        let gt = map_of(&[1.0, 2.0, 5.0]);
        let pred = map_of(&[1.5, 1.0, 6.0]);
        let m = all_valid(3);
        let base = epe(&pred, &gt, &m).unwrap();
        let gt2 = map_of(&[4.0, 5.0, 8.0]);
        let pred2 = map_of(&[4.5, 4.0, 9.0]);
        assert_abs_diff_eq!(epe(&pred2, &gt2, &m).unwrap(), base, epsilon = 1e-12);
    }

    #[test]
    fn single_run_ablation_table() {
        let report = EvalReport {
            epe: 1.0,
            d1: 2.0,
            bad: vec![(1.0, 10.0), (2.0, 5.0), (4.0, 1.0)],
            avgerr: 1.0,
            n_valid: 100,
        };
        let table = ablation_report(&[("full".to_string(), report)]).unwrap();
        assert_eq!(table.rows.len(), 1);
        let text = table.to_text();
        assert!(text.contains("full"));
        assert!(text.lines().count() == 2);
        let parsed: AblationTable = serde_json::from_str(&table.to_json()).unwrap();
        assert_eq!(parsed.rows.len(), 1);
    }
}
