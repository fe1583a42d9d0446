use serde::{Deserialize, Serialize};

use crate::codec::Detection;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// At most this many detections per image are scored.
pub const MAX_DETECTIONS: usize = 100;
/// Recall grid resolution: precision is sampled at recall `i / 100`.
const RECALL_STEPS: usize = 100;

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalGroundTruth {
    pub bbox: BBox,
    pub class_id: usize,
    /// Ignore region: detections matching it count as neither TP nor FP.
    pub crowd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub iou: f64,
    /// Mean over classes present in the ground truth.
    pub map: f64,
    /// `None` for classes without ground truth.
    pub per_class_ap: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// mAP at IoU 0.5, when 0.5 is among the thresholds.
    pub map_50: Option<f64>,
    /// mAP averaged over all thresholds.
    pub map: f64,
    pub thresholds: Vec<ThresholdResult>,
}

/// COCO-style mean average precision.
///
/// Per class and threshold, detections are visited in descending score
/// order; each claims the highest-IoU unmatched ground truth with IoU at
/// least the threshold. Precision is made monotone and averaged at recall
/// levels `1/100, 2/100, …, 1`.
pub fn eval_map(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<EvalGroundTruth>],
    thresholds: &[f64],
    num_classes: usize,
) -> Result<EvalResult> {
    if detections.len() != ground_truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} detection lists for {} images",
            detections.len(),
            ground_truth.len()
        )));
    }
    for (image, dets) in detections.iter().enumerate() {
        if dets.windows(2).any(|p| !(p[0].score >= p[1].score)) {
            return Err(Error::UnsortedDetections { image });
        }
        if let Some(d) = dets.iter().find(|d| d.class_id >= num_classes) {
            return Err(Error::InvalidArgument(format!("detection class {} ≥ {num_classes}", d.class_id)));
        }
    }
    let present: Vec<bool> = (0..num_classes)
        .map(|c| ground_truth.iter().flatten().any(|g| g.class_id == c && !g.crowd))
        .collect();

    let mut results = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let per_class_ap: Vec<Option<f64>> = (0..num_classes)
            .map(|c| present[c].then(|| class_ap(detections, ground_truth, c, t)))
            .collect();
        let aps: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
        let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
        results.push(ThresholdResult {
            iou: t,
            map,
            per_class_ap,
        });
    }
    let map = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|r| r.map).sum::<f64>() / results.len() as f64
    };
    let map_50 = results.iter().find(|r| (r.iou - 0.5).abs() < 1e-12).map(|r| r.map);
    Ok(EvalResult {
        map_50,
        map,
        thresholds: results,
    })
}

/// Intersection over the detection's own area, as used for crowd regions.
fn crowd_overlap(det: &BBox, region: &BBox) -> f64 {
    match det.intersect(region) {
        Some(i) if det.area() > 0.0 => i.area() / det.area(),
        _ => 0.0,
    }
}

fn class_ap(detections: &[Vec<Detection>], ground_truth: &[Vec<EvalGroundTruth>], class: usize, thresh: f64) -> f64 {
    let npos = ground_truth
        .iter()
        .flatten()
        .filter(|g| g.class_id == class && !g.crowd)
        .count();
    let mut ranked: Vec<(f64, usize, BBox)> = Vec::new();
    for (img, dets) in detections.iter().enumerate() {
        for d in dets.iter().take(MAX_DETECTIONS).filter(|d| d.class_id == class) {
            ranked.push((d.score, img, d.bbox));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut matched: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
    // (tp, fp) after each counted detection
    let mut curve: Vec<(usize, usize)> = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, img, bbox) in &ranked {
        let gts = &ground_truth[*img];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if g.class_id != class || g.crowd || matched[*img][j] {
                continue;
            }
            let v = iou(bbox, &g.bbox);
            if v >= thresh && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            matched[*img][j] = true;
            tp += 1;
        } else if gts
            .iter()
            .any(|g| g.class_id == class && g.crowd && crowd_overlap(bbox, &g.bbox) >= thresh)
        {
            continue;
        } else {
            fp += 1;
        }
        curve.push((tp, fp));
    }
    if npos == 0 {
        return 0.0;
    }

    // monotone envelope, right to left
    let mut precision: Vec<f64> = curve.iter().map(|&(t, f)| t as f64 / (t + f) as f64).collect();
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut total = 0.0;
    let mut k = 0;
    for step in 1..=RECALL_STEPS {
        // first curve point with recall ≥ step / RECALL_STEPS, in integers
        while k < curve.len() && curve[k].0 * RECALL_STEPS < step * npos {
            k += 1;
        }
        if k == curve.len() {
            break;
        }
        total += precision[k];
    }
    total / RECALL_STEPS as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(b: [f64; 4], c: usize) -> EvalGroundTruth {
        EvalGroundTruth {
            bbox: BBox::from_array(b),
            class_id: c,
            crowd: false,
        }
    }

    fn det(b: [f64; 4], c: usize, score: f64) -> Detection {
        Detection {
            bbox: BBox::from_array(b),
            class_id: c,
            score,
        }
    }

    #[test]
    fn perfect_and_empty() {
        let g = vec![vec![gt([0.0, 0.0, 10.0, 10.0], 0), gt([20.0, 20.0, 30.0, 40.0], 1)]];
        let d = vec![vec![det([0.0, 0.0, 10.0, 10.0], 0, 1.0), det([20.0, 20.0, 30.0, 40.0], 1, 1.0)]];
        let r = eval_map(&d, &g, &coco_thresholds(), 2).unwrap();
        assert_eq!(r.map, 1.0);
        assert!(r.thresholds.iter().all(|t| t.map == 1.0));
        let r = eval_map(&[vec![]], &g, &coco_thresholds(), 2).unwrap();
        assert_eq!(r.map, 0.0);
        assert_eq!(r.map_50, Some(0.0));
    }

    #[test]
    fn half_recall_gives_half_ap() {
        let g = vec![vec![gt([0.0, 0.0, 10.0, 10.0], 0), gt([50.0, 50.0, 60.0, 60.0], 0)]];
        let d = vec![vec![det([0.0, 0.0, 10.0, 9.0], 0, 0.8)]];
        let r = eval_map(&d, &g, &[0.5], 1).unwrap();
        assert_eq!(r.map_50, Some(0.5));
    }

    #[test]
    fn false_positive_ranked_first() {
        let g = vec![vec![gt([0.0, 0.0, 10.0, 10.0], 0)]];
        let d = vec![vec![det([40.0, 40.0, 50.0, 50.0], 0, 0.9), det([0.0, 0.0, 10.0, 10.0], 0, 0.5)]];
        let r = eval_map(&d, &g, &[0.5], 1).unwrap();
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let g = vec![vec![gt([0.0, 0.0, 10.0, 10.0], 1)]];
        let d = vec![vec![det([0.0, 0.0, 10.0, 10.0], 1, 0.7), det([0.0, 0.0, 5.0, 5.0], 0, 0.6)]];
        let r = eval_map(&d, &g, &[0.5], 3).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.thresholds[0].per_class_ap, vec![None, Some(1.0), None]);
    }

    #[test]
    fn crowd_matches_are_ignored() {
        let mut crowd = gt([30.0, 30.0, 60.0, 60.0], 0);
        crowd.crowd = true;
        let g = vec![vec![gt([0.0, 0.0, 10.0, 10.0], 0), crowd]];
        let d = vec![vec![det([35.0, 35.0, 45.0, 45.0], 0, 0.9), det([0.0, 0.0, 10.0, 10.0], 0, 0.5)]];
        assert_eq!(eval_map(&d, &g, &[0.5], 1).unwrap().map, 1.0);
    }

    #[test]
    fn unsorted_is_an_error() {
        let g = vec![vec![], vec![gt([0.0, 0.0, 1.0, 1.0], 0)]];
        let d = vec![vec![], vec![det([0.0; 4], 0, 0.1), det([0.0; 4], 0, 0.2)]];
        assert!(matches!(
            eval_map(&d, &g, &[0.5], 1),
            Err(Error::UnsortedDetections { image: 1 })
        ));
    }
}
