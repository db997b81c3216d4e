//! Ranking and thresholding metrics for chunk scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `F_beta` from confusion counts, `(1 + b²)·tp / ((1 + b²)·tp + b²·fn + fp)`.
/// Zero when there are no true positives.
pub fn f_beta(tp: usize, fp: usize, fn_: usize, beta: f64) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let b2 = beta * beta;
    let num = (1.0 + b2) * tp as f64;
    num / (num + b2 * fn_ as f64 + fp as f64)
}

/// `F_beta` from precision and recall, `(1 + b²)·P·R / (b²·P + R)`.
pub fn f_beta_from_pr(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom > 0.0 {
        (1.0 + b2) * precision * recall / denom
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f_beta: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl ThresholdChoice {
    pub fn precision(&self) -> f64 {
        let retrieved = self.true_positives + self.false_positives;
        if retrieved == 0 {
            0.0
        } else {
            self.true_positives as f64 / retrieved as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let relevant = self.true_positives + self.false_negatives;
        self.true_positives as f64 / relevant as f64
    }
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidParams(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if !labels.iter().any(|&l| l) {
        return Err(Error::NoPositives);
    }
    Ok(())
}

/// Picks the decision threshold (predict positive when `score >= threshold`)
/// maximizing `F_beta`.
///
/// Candidates are the midpoints between adjacent distinct scores plus `0`,
/// which retrieves everything for probability scores. Ties go to the lower
/// threshold.
pub fn tune_threshold_f2(scores: &[f64], labels: &[bool], beta: f64) -> Result<ThresholdChoice> {
    check_inputs(scores, labels)?;
    let total_pos = labels.iter().filter(|&&l| l).count();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut best = ThresholdChoice {
        threshold: 0.0,
        f_beta: f_beta(total_pos, scores.len() - total_pos, 0, beta),
        true_positives: total_pos,
        false_positives: scores.len() - total_pos,
        false_negatives: 0,
    };
    let mut candidates = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let value = scores[order[i]];
        while i < order.len() && scores[order[i]] == value {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if i < order.len() {
            let next = scores[order[i]];
            let mut mid = (value + next) / 2.0;
            if mid <= next {
                mid = value;
            }
            candidates.push(ThresholdChoice {
                threshold: mid,
                f_beta: f_beta(tp, fp, total_pos - tp, beta),
                true_positives: tp,
                false_positives: fp,
                false_negatives: total_pos - tp,
            });
        }
    }
    // Candidates run from the highest threshold down; `>=` lets a lower
    // threshold win ties, and the zero threshold is compared last.
    let mut chosen: Option<ThresholdChoice> = None;
    for c in candidates.into_iter().chain(std::iter::once(best)) {
        if chosen.is_none_or(|b| c.f_beta >= b.f_beta) {
            chosen = Some(c);
        }
    }
    best = chosen.expect("at least the zero threshold is a candidate");
    Ok(best)
}

/// Mean, over positives ranked by descending score, of the precision at each
/// positive's rank. Equal scores keep their input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / hits as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_scores_pick_the_gap_midpoint() {
        let c = tune_threshold_f2(&[0.9, 0.6, 0.4, 0.2], &[true, true, false, false], 2.0).unwrap();
        assert!((c.threshold - 0.5).abs() < 1e-12);
        assert_eq!(c.f_beta, 1.0);
    }

    #[test]
    fn f2_formula_instance() {
        assert!((f_beta_from_pr(0.5, 1.0, 2.0) - 5.0 * 0.5 / 3.0).abs() < 1e-15);
        // tp=1, fp=1, fn=0 is P=.5, R=1.
        assert!((f_beta(1, 1, 0, 2.0) - 0.8333333333333334).abs() < 1e-15);
    }

    #[test]
    fn zero_threshold_wins_ties_toward_recall() {
        // All positives: retrieving everything is optimal and the lowest threshold.
        let c = tune_threshold_f2(&[0.3, 0.7], &[true, true], 2.0).unwrap();
        assert_eq!(c.threshold, 0.0);
        assert_eq!(c.f_beta, 1.0);
    }

    #[test]
    fn requires_a_positive() {
        assert!(matches!(tune_threshold_f2(&[0.1], &[false], 2.0), Err(Error::NoPositives)));
        assert!(matches!(average_precision(&[0.1], &[false]), Err(Error::NoPositives)));
        assert!(average_precision(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn average_precision_hand_computed() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let perfect = average_precision(&[0.9, 0.8, 0.1, 0.05], &[true, true, false, false]).unwrap();
        assert_eq!(perfect, 1.0);
    }

    #[test]
    fn average_precision_ties_keep_input_order() {
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn threshold_matches_exhaustive_scan_on_random_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let n = 200;
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * 20.0).round() / 20.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            labels[0] = true;
            let got = tune_threshold_f2(&scores, &labels, 2.0).unwrap();
            let mut cands: Vec<f64> = scores.clone();
            cands.sort_by(|a, b| b.total_cmp(a));
            cands.dedup();
            let mut best = (f64::NEG_INFINITY, f64::INFINITY);
            let mut thresholds: Vec<f64> = cands.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
            thresholds.push(0.0);
            for t in thresholds {
                let tp = (0..n).filter(|&i| scores[i] >= t && labels[i]).count();
                let fp = (0..n).filter(|&i| scores[i] >= t && !labels[i]).count();
                let pos = labels.iter().filter(|&&l| l).count();
                let f = f_beta(tp, fp, pos - tp, 2.0);
                if f > best.0 || (f == best.0 && t < best.1) {
                    best = (f, t);
                }
            }
            assert_eq!(got.f_beta, best.0);
            assert_eq!(got.threshold, best.1);
        }
    }
}
