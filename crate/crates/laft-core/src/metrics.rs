//! Detection and localization metrics: AUROC, AU-PR, AUPRO.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scores with binary labels (true = anomalous).
#[derive(Debug, Clone, Default)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        Ok(Self { scores, labels })
    }

    pub fn push(&mut self, score: f64, anomalous: bool) {
        self.scores.push(score);
        self.labels.push(anomalous);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(score_anom > score_norm) + P(equal)/2`, computed by rank sums with
/// average ranks for ties.
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let n_pos = set.labels.iter().filter(|&&l| l).count();
    let n_neg = set.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs both classes present".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].partial_cmp(&set.scores[b]).unwrap());
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the average rank.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if set.labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Area under the precision-recall curve with step-wise interpolation over
/// all distinct thresholds (descending).
pub fn aupr(set: &ScoredSet) -> Result<f64> {
    let n_pos = set.labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("AU-PR needs positives".to_string()));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].partial_cmp(&set.scores[a]).unwrap());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0f64;
    let mut area = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if set.labels[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(area)
}

/// Connected components of the nonzero pixels of a binary `[h,w]` mask,
/// 8-connectivity, as lists of flat pixel indices.
pub fn connected_regions(mask: &Tensor) -> Result<Vec<Vec<usize>>> {
    let &[h, w] = mask.shape() else {
        return Err(Error::shape(format!("mask must be [h,w], got {:?}", mask.shape())));
    };
    let on = |i: usize| mask.data()[i] > 0.5;
    let mut seen = vec![false; h * w];
    let mut regions = Vec::new();
    for start in 0..h * w {
        if seen[start] || !on(start) {
            continue;
        }
        let mut stack = vec![start];
        let mut region = Vec::new();
        seen[start] = true;
        while let Some(p) = stack.pop() {
            region.push(p);
            let (y, x) = (p / w, p % w);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if !seen[q] && on(q) {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        region.sort_unstable();
        regions.push(region);
    }
    Ok(regions)
}

/// Area under the per-region-overlap vs false-positive-rate curve up to
/// `fpr_limit`, normalized by `fpr_limit`.
///
/// Inputs pair each score map with its ground-truth mask (`None` or an
/// all-zero mask for normal samples). Thresholds enumerate every distinct
/// score value; the curve is integrated by trapezoid with the crossing of
/// the limit interpolated linearly.
pub fn aupro(maps: &[(&Tensor, Option<&Tensor>)], fpr_limit: f64) -> Result<f64> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(Error::invalid(format!("fpr limit {fpr_limit} outside (0, 1]")));
    }
    // Pixel table: score, region id (or none).
    struct Pixel {
        score: f64,
        region: Option<usize>,
    }
    let mut pixels = Vec::new();
    let mut region_sizes = Vec::new();
    let mut normal_pixels = 0usize;
    for (map, mask) in maps {
        let &[h, w] = map.shape() else {
            return Err(Error::shape(format!("score map must be [h,w], got {:?}", map.shape())));
        };
        let regions = match mask {
            Some(m) => {
                if m.shape() != map.shape() {
                    return Err(Error::shape(format!(
                        "mask {:?} does not align with map {:?}",
                        m.shape(),
                        map.shape()
                    )));
                }
                connected_regions(m)?
            }
            None => Vec::new(),
        };
        let mut region_of = vec![None; h * w];
        for region in regions {
            let rid = region_sizes.len();
            region_sizes.push(region.len());
            for p in region {
                region_of[p] = Some(rid);
            }
        }
        for (p, owner) in region_of.iter().enumerate() {
            if owner.is_none() {
                normal_pixels += 1;
            }
            pixels.push(Pixel {
                score: map.data()[p] as f64,
                region: *owner,
            });
        }
    }
    if region_sizes.is_empty() {
        return Err(Error::UndefinedMetric(
            "AUPRO needs at least one anomalous region".to_string(),
        ));
    }
    if normal_pixels == 0 {
        return Err(Error::UndefinedMetric(
            "AUPRO needs normal pixels for the false-positive rate".to_string(),
        ));
    }

    pixels.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut hits = vec![0usize; region_sizes.len()];
    let mut fp = 0usize;
    let mut curve = vec![(0.0f64, 0.0f64)];
    let mut i = 0usize;
    while i < pixels.len() {
        let mut j = i;
        while j + 1 < pixels.len() && pixels[j + 1].score == pixels[i].score {
            j += 1;
        }
        for px in &pixels[i..=j] {
            match px.region {
                Some(r) => hits[r] += 1,
                None => fp += 1,
            }
        }
        let fpr = fp as f64 / normal_pixels as f64;
        let pro = hits
            .iter()
            .zip(&region_sizes)
            .map(|(&h, &n)| h as f64 / n as f64)
            .sum::<f64>()
            / region_sizes.len() as f64;
        curve.push((fpr, pro));
        i = j + 1;
    }

    // Trapezoid up to the limit, interpolating the crossing segment.
    let mut area = 0.0f64;
    for win in curve.windows(2) {
        let (x0, y0) = win[0];
        let (x1, y1) = win[1];
        if x0 >= fpr_limit {
            break;
        }
        if x1 <= fpr_limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let t = (fpr_limit - x0) / (x1 - x0);
            let y_cross = y0 + t * (y1 - y0);
            area += (fpr_limit - x0) * (y0 + y_cross) / 2.0;
            break;
        }
    }
    Ok(area / fpr_limit)
}
