//! Ranking and localization metrics.

use alloc::vec::Vec;

use crate::error::Error;
use crate::head::AttentionMap;
use crate::Result;

/// Scored examples for one attribute: `(score, label)` pairs where the
/// score is the predicted probability of the positive class.
#[derive(Debug, Clone)]
pub struct RankedPredictions {
    entries: Vec<(f64, bool)>,
}

impl RankedPredictions {
    pub fn new(entries: Vec<(f64, bool)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Contract("ranked predictions need at least one entry".into()));
        }
        if entries
            .iter()
            .any(|(s, _)| !s.is_finite() || *s < 0.0 || *s > 1.0)
        {
            return Err(Error::Contract("scores must lie in [0, 1]".into()));
        }
        Ok(RankedPredictions { entries })
    }

    pub fn entries(&self) -> &[(f64, bool)] {
        &self.entries
    }

    pub fn num_positives(&self) -> usize {
        self.entries.iter().filter(|(_, l)| *l).count()
    }
}

/// Average precision: mean of precision-at-rank over the positive examples,
/// ranking by descending score with ties broken by original index (stable).
///
/// Undefined without positives; that is an error, never 0.
pub fn average_precision(preds: &RankedPredictions) -> Result<f64> {
    if preds.num_positives() == 0 {
        return Err(Error::UndefinedMetric("average precision without positives"));
    }
    let mut order: Vec<usize> = (0..preds.entries.len()).collect();
    order.sort_by(|&a, &b| {
        preds.entries[b]
            .0
            .partial_cmp(&preds.entries[a].0)
            .expect("scores validated finite")
    });
    let mut true_positives = 0usize;
    let mut precision_sum = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if preds.entries[idx].1 {
            true_positives += 1;
            precision_sum += true_positives as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(precision_sum / true_positives as f64)
}

/// Average precision of a constant scorer on the same labels: the floor any
/// informative model has to beat.
pub fn prevalence_baseline_ap(labels: &[bool]) -> Result<f64> {
    let entries = labels.iter().map(|&l| (0.5, l)).collect();
    average_precision(&RankedPredictions::new(entries)?)
}

/// Fraction of attention probability falling on masked grid cells.
///
/// `mask` is row-major over the same `h x w` grid as the attention map.
pub fn localization_mass(attention: &AttentionMap, mask: &[bool]) -> Result<f64> {
    if mask.len() != attention.cells() {
        return Err(Error::ShapeMismatch {
            op: "localization_mass",
            lhs: alloc::vec![attention.h, attention.w],
            rhs: alloc::vec![mask.len()],
        });
    }
    if mask.iter().all(|&m| !m) {
        return Err(Error::UndefinedMetric("localization mass of an empty mask"));
    }
    Ok(attention
        .weights
        .data()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(w, _)| *w)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn preds(pairs: &[(f64, bool)]) -> RankedPredictions {
        RankedPredictions::new(pairs.to_vec()).unwrap()
    }

    #[test]
    fn ap_hand_computed_cases() {
        // scores [0.9, 0.8, 0.7], labels [1, 0, 1] -> (1/1 + 2/3) / 2
        let ap = average_precision(&preds(&[(0.9, true), (0.8, false), (0.7, true)])).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);

        // single positive at rank 3 -> 1/3
        let ap = average_precision(&preds(&[(0.9, false), (0.8, false), (0.7, true)])).unwrap();
        assert!((ap - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ap_all_positive_is_one() {
        let ap = average_precision(&preds(&[(0.1, true), (0.9, true), (0.4, true)])).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn ap_without_positives_is_undefined() {
        assert!(matches!(
            average_precision(&preds(&[(0.3, false), (0.9, false)])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ap_ties_break_by_original_index() {
        // equal scores: order stays 0,1,2; positives at 0 and 2
        let ap = average_precision(&preds(&[(0.5, true), (0.5, false), (0.5, true)])).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ap_invariant_under_monotone_transform() {
        let base = [(0.9, true), (0.2, false), (0.6, true), (0.4, false)];
        let ap1 = average_precision(&preds(&base)).unwrap();
        let squashed: Vec<(f64, bool)> = base.iter().map(|&(s, l)| (s * s, l)).collect();
        let ap2 = average_precision(&RankedPredictions::new(squashed).unwrap()).unwrap();
        assert_eq!(ap1, ap2);
    }

    #[test]
    fn scores_outside_unit_interval_rejected() {
        assert!(RankedPredictions::new(vec![(1.5, true)]).is_err());
        assert!(RankedPredictions::new(vec![]).is_err());
    }

    #[test]
    fn prevalence_baseline_matches_constant_scorer() {
        let labels = [true, false, false, true];
        let ap = prevalence_baseline_ap(&labels).unwrap();
        // constant scores keep original order: positives at ranks 1 and 4
        assert!((ap - (1.0 / 1.0 + 2.0 / 4.0) / 2.0).abs() < 1e-12);
    }

    fn uniform_map(h: usize, w: usize) -> AttentionMap {
        AttentionMap {
            weights: Tensor::filled(alloc::vec![h * w, 1], 1.0 / (h * w) as f64),
            h,
            w,
        }
    }

    #[test]
    fn localization_mass_uniform() {
        let att = uniform_map(6, 6);
        let mut mask = vec![false; 36];
        for m in mask.iter_mut().take(9) {
            *m = true;
        }
        let mass = localization_mass(&att, &mask).unwrap();
        assert!((mass - 0.25).abs() < 1e-12);
    }

    #[test]
    fn localization_mass_extremes() {
        let mut weights = vec![0.0; 4];
        weights[3] = 1.0;
        let att = AttentionMap {
            weights: Tensor::from_vec(alloc::vec![4, 1], weights).unwrap(),
            h: 2,
            w: 2,
        };
        let all = vec![true; 4];
        assert_eq!(localization_mass(&att, &all).unwrap(), 1.0);
        let miss = vec![true, true, true, false];
        assert_eq!(localization_mass(&att, &miss).unwrap(), 0.0);
        let empty = vec![false; 4];
        assert!(matches!(
            localization_mass(&att, &empty),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn mass_and_complement_sum_to_one() {
        let att = uniform_map(3, 3);
        let mask: Vec<bool> = (0..9).map(|i| i % 2 == 0).collect();
        let inv: Vec<bool> = mask.iter().map(|&m| !m).collect();
        let a = localization_mass(&att, &mask).unwrap();
        let b = localization_mass(&att, &inv).unwrap();
        assert!((a + b - 1.0).abs() < 1e-9);
    }
}
