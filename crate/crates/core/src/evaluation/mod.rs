//! ROC/PR statistics over anomaly score files.

mod plot;
mod report;

pub use report::{render_report, EvalReport, Histogram, HISTOGRAM_BINS};

use crate::error::{invalid, Error, Result};

/// One ROC operating point: predictions are "anomalous" for `score >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub tp: usize,
    pub fp: usize,
}

/// Points from `(0,0)` at threshold `+∞` to `(1,1)` at the smallest score.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub positives: usize,
    pub negatives: usize,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(invalid!("{} scores but {} labels", scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::DegenerateInput("no scores".into()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(invalid!("non-finite score {s}"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateInput(format!(
            "both classes are required ({pos} anomalous, {neg} healthy)"
        )));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// ROC over every distinct score; `labels[i]` is true for anomalous.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let order = descending(scores);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
        tp: 0,
        fp: 0,
    }];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            tp,
            fp,
        });
    }
    Ok(RocCurve {
        points,
        positives: pos,
        negatives: neg,
    })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Error-free `a + b = s + e`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// `Σ (R_k − R_{k−1})·P_k` walking down the ranking; tied scores form one step.
/// Summed in double-double so the result is rounded once.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let curve = roc_points(scores, labels)?;
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for w in curve.points.windows(2) {
        let gained = w[1].tp - w[0].tp;
        if gained > 0 {
            let (a, b) = ((gained * w[1].tp) as f64, (w[1].tp + w[1].fp) as f64);
            let q = a / b;
            let r = (-q).mul_add(b, a);
            let (s, e) = two_sum(hi, q);
            hi = s;
            lo += e + r / b;
        }
    }
    let pos = curve.positives as f64;
    let q = hi / pos;
    let r = (-q).mul_add(pos, hi);
    Ok(q + (r + lo) / pos)
}

/// `(threshold, J)` maximizing `TPR − FPR`; ties go to the smallest threshold.
pub fn youden(curve: &RocCurve) -> (f64, f64) {
    let (p, n) = (curve.positives as i128, curve.negatives as i128);
    // J scaled by p·n is an exact integer, so ties are detected exactly
    let scaled = |pt: &RocPoint| pt.tp as i128 * n - pt.fp as i128 * p;
    let mut best = &curve.points[0];
    for pt in &curve.points[1..] {
        // thresholds descend along the curve, so `>=` keeps the smallest
        if scaled(pt) >= scaled(best) {
            best = pt;
        }
    }
    (best.threshold, best.tpr - best.fpr)
}

/// `(F1, CA)` when predicting anomalous for `score >= threshold`.
pub fn stats_at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(f64, f64)> {
    check_inputs(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fnn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fnn += 1,
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = tp as f64 / (tp + fnn) as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((f1, (tp + tn) as f64 / scores.len() as f64))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pairwise statistic with ½ credit for ties.
    pub(crate) fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    /// Best J over every candidate threshold, smallest threshold on ties.
    pub(crate) fn youden_brute(scores: &[f64], labels: &[bool]) -> (f64, f64) {
        let p = labels.iter().filter(|&&l| l).count() as f64;
        let n = labels.len() as f64 - p;
        let mut cands: Vec<f64> = scores.to_vec();
        cands.push(f64::INFINITY);
        cands.sort_by(|a, b| a.total_cmp(b));
        cands.dedup();
        let mut best = (f64::NAN, f64::NEG_INFINITY);
        for &t in &cands {
            let tp = scores.iter().zip(labels).filter(|(&s, &l)| l && s >= t).count() as f64;
            let fp = scores.iter().zip(labels).filter(|(&s, &l)| !l && s >= t).count() as f64;
            let j = tp / p - fp / n;
            if j > best.1 + 1e-12 {
                best = (t, j);
            }
        }
        best
    }

    /// Walk ranks top-down, adding precision at each positive hit.
    pub(crate) fn ap_rank_walk(scores: &[f64], labels: &[bool]) -> f64 {
        let order = descending(scores);
        let p = labels.iter().filter(|&&l| l).count() as f64;
        let (mut hits, mut ap) = (0.0, 0.0);
        for (rank, &i) in order.iter().enumerate() {
            if labels[i] {
                hits += 1.0;
                ap += hits / (rank + 1) as f64 / p;
            }
        }
        ap
    }

    const S4: [f64; 4] = [0.1, 0.4, 0.35, 0.8];
    const L4: [bool; 4] = [false, false, true, true];

    #[test]
    fn roc_examples() {
        let fp_tp = |c: RocCurve| c.points.iter().map(|p| (p.fpr, p.tpr)).collect::<Vec<_>>();
        assert_eq!(
            fp_tp(roc_points(&[0.0, 1.0], &[false, true]).unwrap()),
            vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
        );
        assert_eq!(
            fp_tp(roc_points(&[1.0, 0.0], &[false, true]).unwrap()),
            vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]
        );
        // explicit confusion matrix per threshold
        let c = roc_points(&S4, &L4).unwrap();
        for p in &c.points[1..] {
            let tp = S4.iter().zip(L4).filter(|(&s, l)| *l && s >= p.threshold).count();
            let fp = S4.iter().zip(L4).filter(|(&s, l)| !*l && s >= p.threshold).count();
            assert_eq!((p.tpr, p.fpr), (tp as f64 / 2.0, fp as f64 / 2.0));
        }
        assert!(matches!(roc_points(&[0.1, 0.2], &[true, true]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn auc_ap_youden_examples() {
        assert_eq!(auc(&roc_points(&[0.0, 1.0], &[false, true]).unwrap()), 1.0);
        assert_eq!(auc(&roc_points(&S4, &L4).unwrap()), 0.75);
        assert_eq!(average_precision(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(
            average_precision(&[0.8, 0.6, 0.4, 0.2], &[true, false, true, false]).unwrap(),
            5.0 / 6.0
        );
        let worst = average_precision(&[0.8, 0.6, 0.4, 0.2], &[false, false, true, true]).unwrap();
        // precision 1/3 and 2/4 at the two hits
        assert!((worst - 5.0 / 12.0).abs() < 1e-15);

        assert_eq!(youden(&roc_points(&[0.0, 1.0], &[false, true]).unwrap()), (1.0, 1.0));
        assert_eq!(youden(&roc_points(&S4, &L4).unwrap()), (0.35, 0.5));
        assert_eq!(youden(&roc_points(&[0.3; 4], &L4).unwrap()).1, 0.0);
    }

    #[test]
    fn threshold_stats_examples() {
        assert_eq!(stats_at_threshold(&[0.0, 1.0], &[false, true], 1.0).unwrap(), (1.0, 1.0));
        let (f1, ca) = stats_at_threshold(&[0.5; 4], &L4, 0.0).unwrap();
        assert_eq!(ca, 0.5);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(stats_at_threshold(&[0.1, 0.2], &[false, true], 5.0).unwrap(), (0.0, 0.5));
    }

    #[test]
    fn independent_labels_give_half() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let s: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let l: Vec<bool> = (0..1000).map(|_| rng.random()).collect();
        assert!((auc(&roc_points(&s, &l).unwrap()) - 0.5).abs() < 0.05);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..=200)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(prop_oneof![(0u8..20).prop_map(|v| v as f64 / 4.0), -5.0f64..5.0], n),
                    proptest::collection::vec(any::<bool>(), n),
                )
            })
            .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
    }

    proptest! {
        #[test]
        fn auc_equals_mann_whitney((s, l) in instance()) {
            let c = roc_points(&s, &l).unwrap();
            prop_assert!((auc(&c) - mann_whitney(&s, &l)).abs() < 1e-12);
        }

        #[test]
        fn roc_monotone_with_endpoints((s, l) in instance()) {
            let c = roc_points(&s, &l).unwrap();
            prop_assert_eq!((c.points[0].fpr, c.points[0].tpr), (0.0, 0.0));
            let last = c.points.last().unwrap();
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            for w in c.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr && w[1].threshold < w[0].threshold);
            }
        }

        #[test]
        fn youden_matches_sweep((s, l) in instance()) {
            prop_assume!(s.len() <= 100);
            let (t, j) = youden(&roc_points(&s, &l).unwrap());
            let (bt, bj) = youden_brute(&s, &l);
            prop_assert!((j - bj).abs() < 1e-12);
            prop_assert_eq!(t, bt);
        }

        #[test]
        fn ap_bounds_and_rank_walk(n in 2usize..200, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let mut l: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            l[0] = true;
            l[1] = false;
            let ap = average_precision(&s, &l).unwrap();
            prop_assert!((ap - ap_rank_walk(&s, &l)).abs() < 1e-12);
            // lower bound: every positive ranked after every negative
            let p = l.iter().filter(|&&b| b).count();
            let floor: f64 = (1..=p).map(|k| k as f64 / (n - p + k) as f64).sum::<f64>() / p as f64;
            prop_assert!(ap >= floor - 1e-12 && ap <= 1.0 + 1e-12);
            let perfect: Vec<f64> = l.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            prop_assert_eq!(average_precision(&perfect, &l).unwrap(), 1.0);
        }

        #[test]
        fn rank_invariance((s, l) in instance()) {
            let t: Vec<f64> = s.iter().map(|v| (v * 0.7).exp() * 3.0 + 1.0).collect();
            let (c1, c2) = (roc_points(&s, &l).unwrap(), roc_points(&t, &l).unwrap());
            prop_assert_eq!(auc(&c1), auc(&c2));
            prop_assert_eq!(average_precision(&s, &l).unwrap(), average_precision(&t, &l).unwrap());
            let (y1, y2) = (youden(&c1), youden(&c2));
            prop_assert_eq!(y1.1, y2.1);
            prop_assert_eq!(stats_at_threshold(&s, &l, y1.0).unwrap(), stats_at_threshold(&t, &l, y2.0).unwrap());
        }
    }
}
