//! Overlap metrics between label masks.
//!
//! All ratios are formed from exact integer pixel counts followed by a single
//! division, so results do not depend on evaluation order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{check_threshold, AuditConfig, ClassExclusion, ClassLabel, LabelMask, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("mask dimensions differ: {left:?} vs {right:?} (width, height)")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("neither mask contains a foreground class")]
    NoForeground,
    #[error("no scores to aggregate")]
    EmptyInput,
    #[error("iou threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("agreement needs at least two annotators sharing an image")]
    InsufficientAnnotators,
    #[error("annotator {annotator:?} has more than one mask for image {image:?}")]
    DuplicateAnnotation { annotator: String, image: String },
    #[error("image {image:?}: {source}")]
    Annotation {
        image: String,
        #[source]
        source: Box<MetricsError>,
    },
}

/// Integer pixel counts for one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PixelCounts {
    pub intersection: u64,
    pub gt: u64,
    pub pred: u64,
}

impl PixelCounts {
    pub fn union(&self) -> u64 {
        self.gt + self.pred - self.intersection
    }

    pub fn is_absent(&self) -> bool {
        self.gt == 0 && self.pred == 0
    }

    pub fn iou(&self) -> Option<f64> {
        let union = self.union();
        (union > 0).then(|| self.intersection as f64 / union as f64)
    }

    pub fn dice(&self) -> Option<f64> {
        let total = self.gt + self.pred;
        (total > 0).then(|| (2 * self.intersection) as f64 / total as f64)
    }
}

/// Per-class counts for every label code, in one pass over the pixels.
pub fn overlap_counts(
    gt: &LabelMask,
    pred: &LabelMask,
) -> Result<[PixelCounts; NUM_CLASSES], MetricsError> {
    if !gt.same_dims(pred) {
        return Err(MetricsError::DimensionMismatch {
            left: gt.dims(),
            right: pred.dims(),
        });
    }
    let mut counts = [PixelCounts::default(); NUM_CLASSES];
    for (&g, &p) in gt.data().iter().zip(pred.data()) {
        counts[usize::from(g)].gt += 1;
        counts[usize::from(p)].pred += 1;
        if g == p {
            counts[usize::from(g)].intersection += 1;
        }
    }
    Ok(counts)
}

fn class_counts(gt: &LabelMask, pred: &LabelMask, class: ClassLabel) -> Result<PixelCounts, MetricsError> {
    if !gt.same_dims(pred) {
        return Err(MetricsError::DimensionMismatch {
            left: gt.dims(),
            right: pred.dims(),
        });
    }
    let code = class.code();
    let mut counts = PixelCounts::default();
    for (&g, &p) in gt.data().iter().zip(pred.data()) {
        let (in_gt, in_pred) = (g == code, p == code);
        counts.gt += u64::from(in_gt);
        counts.pred += u64::from(in_pred);
        counts.intersection += u64::from(in_gt && in_pred);
    }
    Ok(counts)
}

/// Jaccard index of `class`; `None` when the class occurs in neither mask.
pub fn class_iou(gt: &LabelMask, pred: &LabelMask, class: ClassLabel) -> Result<Option<f64>, MetricsError> {
    Ok(class_counts(gt, pred, class)?.iou())
}

/// Dice coefficient of `class`; `None` when the class occurs in neither mask.
pub fn class_dice(gt: &LabelMask, pred: &LabelMask, class: ClassLabel) -> Result<Option<f64>, MetricsError> {
    Ok(class_counts(gt, pred, class)?.dice())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub counts: PixelCounts,
    /// `None` marks a class absent from both masks.
    pub iou: Option<f64>,
    pub dice: Option<f64>,
}

/// Per-class and mean scores for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub per_class: BTreeMap<ClassLabel, ClassScore>,
    pub mean_iou: f64,
    pub mean_dice: f64,
}

impl ClassScores {
    pub fn iou(&self, class: ClassLabel) -> Option<f64> {
        self.per_class.get(&class).and_then(|s| s.iou)
    }

    pub fn dice(&self, class: ClassLabel) -> Option<f64> {
        self.per_class.get(&class).and_then(|s| s.dice)
    }
}

/// Scores the four foreground classes and averages the ones that are not
/// absent. Under [`ClassExclusion::CountAbsentAsOne`] a doubly-absent class
/// scores 1.0 instead of being skipped.
pub fn mask_scores(gt: &LabelMask, pred: &LabelMask, cfg: &AuditConfig) -> Result<ClassScores, MetricsError> {
    let counts = overlap_counts(gt, pred)?;
    if ClassLabel::FOREGROUND
        .iter()
        .all(|c| counts[usize::from(c.code())].is_absent())
    {
        return Err(MetricsError::NoForeground);
    }

    let mut per_class = BTreeMap::new();
    let (mut iou_sum, mut dice_sum, mut n) = (0.0, 0.0, 0usize);
    for class in ClassLabel::FOREGROUND {
        let c = counts[usize::from(class.code())];
        let (iou, dice) = match (c.iou(), c.dice(), cfg.class_exclusion) {
            (Some(i), Some(d), _) => (Some(i), Some(d)),
            (_, _, ClassExclusion::CountAbsentAsOne) => (Some(1.0), Some(1.0)),
            _ => (None, None),
        };
        if let (Some(i), Some(d)) = (iou, dice) {
            iou_sum += i;
            dice_sum += d;
            n += 1;
        }
        per_class.insert(class, ClassScore { counts: c, iou, dice });
    }
    Ok(ClassScores {
        per_class,
        mean_iou: iou_sum / n as f64,
        mean_dice: dice_sum / n as f64,
    })
}

/// Fraction of images whose mean IoU reaches `tau` (inclusive).
pub fn pass_rate_at_iou(scores: &[ClassScores], tau: f64) -> Result<f64, MetricsError> {
    check_threshold(tau).map_err(|_| MetricsError::InvalidThreshold(tau))?;
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let passed = scores.iter().filter(|s| s.mean_iou >= tau).count();
    Ok(passed as f64 / scores.len() as f64)
}

/// One annotator's mask for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub annotator: String,
    pub image: String,
    pub mask: LabelMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub mean_iou: f64,
    pub mean_dice: f64,
    /// Number of (annotator pair, image) cells averaged.
    pub cells: usize,
    pub annotators: usize,
    pub images: usize,
}

/// Mean pairwise overlap between annotators. Every unordered annotator pair
/// contributes one cell per image both of them labeled; the result is the
/// grand mean of per-cell mean IoU and mean Dice.
pub fn pairwise_agreement(annotations: &[Annotation]) -> Result<Agreement, MetricsError> {
    let mut by_image: BTreeMap<&str, BTreeMap<&str, &LabelMask>> = BTreeMap::new();
    for a in annotations {
        let slot = by_image.entry(&a.image).or_default();
        if slot.insert(&a.annotator, &a.mask).is_some() {
            return Err(MetricsError::DuplicateAnnotation {
                annotator: a.annotator.clone(),
                image: a.image.clone(),
            });
        }
    }

    let cfg = AuditConfig::default();
    let (mut iou_sum, mut dice_sum, mut cells) = (0.0, 0.0, 0usize);
    let mut annotators = std::collections::BTreeSet::new();
    let mut images = 0;
    for (image, masks) in &by_image {
        let masks: Vec<(&str, &LabelMask)> = masks.iter().map(|(k, v)| (*k, *v)).collect();
        if masks.len() < 2 {
            continue;
        }
        images += 1;
        for (i, (a, left)) in masks.iter().enumerate() {
            annotators.insert(*a);
            for (_, right) in &masks[i + 1..] {
                let s = mask_scores(left, right, &cfg).map_err(|e| MetricsError::Annotation {
                    image: image.to_string(),
                    source: Box::new(e),
                })?;
                iou_sum += s.mean_iou;
                dice_sum += s.mean_dice;
                cells += 1;
            }
        }
    }
    if cells == 0 {
        return Err(MetricsError::InsufficientAnnotators);
    }
    Ok(Agreement {
        mean_iou: iou_sum / cells as f64,
        mean_dice: dice_sum / cells as f64,
        cells,
        annotators: annotators.len(),
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, data: Vec<u8>) -> LabelMask {
        LabelMask::new(w, h, data).unwrap()
    }

    /// 4x4 grid: gt has 8 femur pixels (rows 0-1); pred keeps 4 of them
    /// (row 0) and adds 4 more (row 2).
    fn third_case() -> (LabelMask, LabelMask) {
        let gt = mask(4, 4, [[1u8; 4], [1; 4], [0; 4], [0; 4]].concat());
        let pred = mask(4, 4, [[1u8; 4], [0; 4], [1; 4], [0; 4]].concat());
        (gt, pred)
    }

    #[test]
    fn identical_masks_score_one() {
        let m = mask(3, 1, vec![1, 2, 0]);
        assert_eq!(class_iou(&m, &m, ClassLabel::Femur).unwrap(), Some(1.0));
        assert_eq!(class_dice(&m, &m, ClassLabel::Tibia).unwrap(), Some(1.0));
    }

    #[test]
    fn partial_overlap_iou_and_dice() {
        let (gt, pred) = third_case();
        assert_eq!(class_iou(&gt, &pred, ClassLabel::Femur).unwrap(), Some(1.0 / 3.0));
        assert_eq!(class_dice(&gt, &pred, ClassLabel::Femur).unwrap(), Some(0.5));
    }

    #[test]
    fn absent_class() {
        let (gt, pred) = third_case();
        assert_eq!(class_iou(&gt, &pred, ClassLabel::Patella).unwrap(), None);
        assert_eq!(class_dice(&gt, &pred, ClassLabel::Patella).unwrap(), None);
    }

    #[test]
    fn disjoint_equal_size_dice_zero() {
        let gt = mask(4, 1, vec![1, 1, 0, 0]);
        let pred = mask(4, 1, vec![0, 0, 1, 1]);
        assert_eq!(class_dice(&gt, &pred, ClassLabel::Femur).unwrap(), Some(0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let a = mask(2, 1, vec![0, 1]);
        let b = mask(1, 2, vec![0, 1]);
        assert!(matches!(
            class_iou(&a, &b, ClassLabel::Femur),
            Err(MetricsError::DimensionMismatch { .. })
        ));
        assert!(mask_scores(&a, &b, &AuditConfig::default()).is_err());
    }

    #[test]
    fn mean_over_present_classes() {
        // 8x8: femur in rows 0-1 (pred keeps row 0 only -> IoU 0.5), tibia in
        // rows 4-5 identical (IoU 1.0); fibula and patella absent.
        let mut gt = vec![0u8; 64];
        let mut pred = vec![0u8; 64];
        gt[0..16].fill(1);
        pred[0..8].fill(1);
        gt[32..48].fill(2);
        pred[32..48].fill(2);
        let s = mask_scores(&mask(8, 8, gt), &mask(8, 8, pred), &AuditConfig::default()).unwrap();
        assert_eq!(s.iou(ClassLabel::Femur), Some(0.5));
        assert_eq!(s.iou(ClassLabel::Tibia), Some(1.0));
        assert_eq!(s.iou(ClassLabel::Fibula), None);
        assert_eq!(s.mean_iou, 0.75);
    }

    #[test]
    fn count_absent_as_one() {
        let gt = mask(4, 1, vec![1, 1, 0, 0]);
        let pred = mask(4, 1, vec![1, 0, 0, 0]);
        let cfg = AuditConfig::default().with_class_exclusion(ClassExclusion::CountAbsentAsOne);
        let s = mask_scores(&gt, &pred, &cfg).unwrap();
        assert_eq!(s.iou(ClassLabel::Patella), Some(1.0));
        assert_eq!(s.mean_iou, (0.5 + 3.0) / 4.0);
    }

    #[test]
    fn all_background_prediction() {
        let gt = mask(2, 2, vec![1, 1, 0, 0]);
        let pred = mask(2, 2, vec![0; 4]);
        let s = mask_scores(&gt, &pred, &AuditConfig::default()).unwrap();
        assert_eq!(s.iou(ClassLabel::Femur), Some(0.0));
        assert_eq!(s.mean_iou, 0.0);
    }

    #[test]
    fn no_foreground_is_an_error() {
        let m = mask(2, 2, vec![0; 4]);
        assert_eq!(
            mask_scores(&m, &m, &AuditConfig::default()),
            Err(MetricsError::NoForeground)
        );
    }

    fn with_mean(mean_iou: f64) -> ClassScores {
        ClassScores {
            per_class: BTreeMap::new(),
            mean_iou,
            mean_dice: mean_iou,
        }
    }

    #[test]
    fn pass_rate_cases() {
        assert_eq!(pass_rate_at_iou(&[with_mean(1.0), with_mean(1.0)], 0.5).unwrap(), 1.0);
        assert_eq!(pass_rate_at_iou(&[with_mean(0.4), with_mean(0.6)], 0.5).unwrap(), 0.5);
        assert_eq!(pass_rate_at_iou(&[with_mean(0.5)], 0.5).unwrap(), 1.0);
        assert_eq!(pass_rate_at_iou(&[], 0.5), Err(MetricsError::EmptyInput));
        assert_eq!(
            pass_rate_at_iou(&[with_mean(0.5)], 0.0),
            Err(MetricsError::InvalidThreshold(0.0))
        );
    }

    fn ann(annotator: &str, image: &str, mask: LabelMask) -> Annotation {
        Annotation {
            annotator: annotator.into(),
            image: image.into(),
            mask,
        }
    }

    #[test]
    fn identical_annotators_agree_fully() {
        let m = mask(3, 1, vec![1, 2, 3]);
        let anns: Vec<_> = ["a", "b", "c"]
            .iter()
            .flat_map(|a| (0..10).map(move |i| (a, i)))
            .map(|(a, i)| ann(a, &format!("img{i}"), m.clone()))
            .collect();
        let agr = pairwise_agreement(&anns).unwrap();
        assert_eq!((agr.mean_iou, agr.mean_dice), (1.0, 1.0));
        assert_eq!((agr.cells, agr.annotators, agr.images), (30, 3, 10));
    }

    #[test]
    fn two_annotators_two_images() {
        // img1: femur 5 px vs 3 px nested -> IoU 0.6, Dice 0.75.
        // img2: femur 5 px vs 4 px nested -> IoU 0.8, Dice 8/9.
        let a1 = mask(5, 1, vec![1; 5]);
        let b1 = mask(5, 1, vec![1, 1, 1, 0, 0]);
        let b2 = mask(5, 1, vec![1, 1, 1, 1, 0]);
        let agr = pairwise_agreement(&[
            ann("a", "1", a1.clone()),
            ann("b", "1", b1),
            ann("a", "2", a1),
            ann("b", "2", b2),
        ])
        .unwrap();
        assert!((agr.mean_iou - 0.7).abs() < 1e-15);
        assert!((agr.mean_dice - (0.75 + 8.0 / 9.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn agreement_errors() {
        let m = mask(2, 1, vec![1, 0]);
        assert_eq!(
            pairwise_agreement(&[ann("a", "1", m.clone()), ann("a", "2", m.clone())]),
            Err(MetricsError::InsufficientAnnotators)
        );
        assert!(matches!(
            pairwise_agreement(&[ann("a", "1", m.clone()), ann("a", "1", m.clone())]),
            Err(MetricsError::DuplicateAnnotation { .. })
        ));
        let other = mask(1, 2, vec![1, 0]);
        assert!(matches!(
            pairwise_agreement(&[ann("a", "1", m), ann("b", "1", other)]),
            Err(MetricsError::Annotation { .. })
        ));
    }
}
