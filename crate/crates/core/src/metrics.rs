//! Overlap and boundary precision/recall/F-measure with one-to-one instance
//! matching, and the correct-segment rate.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::Result;
use crate::grid::{BinaryMask, Grid, NEIGHBORS_4};
use crate::segmenter::LabelMask;

/// Default boundary tolerance (px, Chebyshev).
pub const BOUNDARY_DILATION: usize = 2;
/// Overlap F at or above which a ground-truth object counts as correctly segmented.
pub const CORRECT_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f_measure,
        }
    }

    /// Precision from counts; an empty prediction counts as precision 1 and an
    /// empty ground truth as recall 1.
    pub fn from_counts(tp_pred: usize, n_pred: usize, tp_gt: usize, n_gt: usize) -> Self {
        let p = if n_pred == 0 {
            1.0
        } else {
            tp_pred as f64 / n_pred as f64
        };
        let r = if n_gt == 0 {
            1.0
        } else {
            tp_gt as f64 / n_gt as f64
        };
        Self::new(p, r)
    }
}

/// Instance areas and pairwise intersections of two label masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlaps {
    pub pred_ids: Vec<u32>,
    pub gt_ids: Vec<u32>,
    pub pred_area: Vec<usize>,
    pub gt_area: Vec<usize>,
    /// `inter[i][j] = |pred_i ∩ gt_j|`.
    pub inter: Vec<Vec<usize>>,
}

impl Overlaps {
    pub fn compute(pred: &LabelMask, gt: &LabelMask) -> Result<Self> {
        pred.labels.same_dims(&gt.labels)?;
        let pa = pred.areas();
        let ga = gt.areas();
        let pred_ids: Vec<u32> = pa.keys().copied().collect();
        let gt_ids: Vec<u32> = ga.keys().copied().collect();
        let pi: BTreeMap<u32, usize> = pred_ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let gi: BTreeMap<u32, usize> = gt_ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let mut inter = vec![vec![0usize; gt_ids.len()]; pred_ids.len()];
        for (&p, &g) in pred.labels.as_slice().iter().zip(gt.labels.as_slice()) {
            if p > 0 && g > 0 {
                inter[pi[&p]][gi[&g]] += 1;
            }
        }
        Ok(Self {
            pred_area: pred_ids.iter().map(|l| pa[l]).collect(),
            gt_area: gt_ids.iter().map(|l| ga[l]).collect(),
            pred_ids,
            gt_ids,
            inter,
        })
    }

    /// Overlap F-measure of one pred/GT pair.
    pub fn f(&self, i: usize, j: usize) -> f64 {
        let denom = self.pred_area[i] + self.gt_area[j];
        if denom == 0 {
            0.0
        } else {
            2.0 * self.inter[i][j] as f64 / denom as f64
        }
    }
}

/// One-to-one matching as `(pred_id, gt_id)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    pub pairs: Vec<(u32, u32)>,
}

impl Assignment {
    pub fn gt_for(&self, pred_id: u32) -> Option<u32> {
        self.pairs.iter().find(|p| p.0 == pred_id).map(|p| p.1)
    }

    pub fn pred_for(&self, gt_id: u32) -> Option<u32> {
        self.pairs.iter().find(|p| p.1 == gt_id).map(|p| p.0)
    }
}

/// Minimum-cost assignment of every row of an `n × m` cost matrix (`n ≤ m`)
/// to a distinct column (shortest augmenting paths with potentials).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= columns");
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Assignment maximizing the summed pairwise overlap F; pairs with F = 0 are
/// left unmatched.
pub fn match_overlaps(ov: &Overlaps) -> Assignment {
    let (np, ng) = (ov.pred_ids.len(), ov.gt_ids.len());
    if np == 0 || ng == 0 {
        return Assignment::default();
    }
    let transpose = np > ng;
    let (rows, cols) = if transpose { (ng, np) } else { (np, ng) };
    let cost: Vec<Vec<f64>> = (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| if transpose { -ov.f(c, r) } else { -ov.f(r, c) })
                .collect()
        })
        .collect();
    let sol = hungarian(&cost);
    let mut pairs = Vec::new();
    for (r, &c) in sol.iter().enumerate() {
        let (i, j) = if transpose { (c, r) } else { (r, c) };
        if ov.f(i, j) > 0.0 {
            pairs.push((ov.pred_ids[i], ov.gt_ids[j]));
        }
    }
    pairs.sort();
    Assignment { pairs }
}

pub fn match_instances(pred: &LabelMask, gt: &LabelMask) -> Result<Assignment> {
    Ok(match_overlaps(&Overlaps::compute(pred, gt)?))
}

pub fn overlap_prf(pred: &LabelMask, gt: &LabelMask, assignment: &Assignment) -> Result<Prf> {
    pred.labels.same_dims(&gt.labels)?;
    let mut tp = 0;
    let (mut n_pred, mut n_gt) = (0, 0);
    for (&p, &g) in pred.labels.as_slice().iter().zip(gt.labels.as_slice()) {
        if p > 0 {
            n_pred += 1;
        }
        if g > 0 {
            n_gt += 1;
        }
        if p > 0 && g > 0 && assignment.gt_for(p) == Some(g) {
            tp += 1;
        }
    }
    Ok(Prf::from_counts(tp, n_pred, tp, n_gt))
}

/// Pixels of each instance with a 4-neighbor (inside the image) carrying a
/// different label.
pub fn instance_boundaries(mask: &LabelMask) -> Grid<bool> {
    let (w, h) = mask.labels.dims();
    Grid::from_fn(w, h, |u, v| {
        let l = mask.get(u, v);
        l > 0
            && NEIGHBORS_4.iter().any(|&(du, dv)| {
                mask.labels
                    .get_signed(u as i64 + du, v as i64 + dv)
                    .is_some_and(|&n| n != l)
            })
    })
}

/// True where a pixel of `target` lies within Chebyshev distance `r`.
fn dilate(target: &BinaryMask, r: usize) -> BinaryMask {
    let (w, h) = target.dims();
    let r = r as i64;
    // Separable max filter.
    let rows = Grid::from_fn(w, h, |u, v| {
        (-r..=r).any(|d| {
            target
                .get_signed(u as i64 + d, v as i64)
                .copied()
                .unwrap_or(false)
        })
    });
    Grid::from_fn(w, h, |u, v| {
        (-r..=r).any(|d| {
            rows.get_signed(u as i64, v as i64 + d)
                .copied()
                .unwrap_or(false)
        })
    })
}

pub fn boundary_prf(
    pred: &LabelMask,
    gt: &LabelMask,
    assignment: &Assignment,
    dilation: usize,
) -> Result<Prf> {
    pred.labels.same_dims(&gt.labels)?;
    let bp = instance_boundaries(pred);
    let bg = instance_boundaries(gt);
    let n_pred = bp.count();
    let n_gt = bg.count();
    let (mut tp_pred, mut tp_gt) = (0, 0);
    for &(pid, gid) in &assignment.pairs {
        let pb = Grid::from_fn(bp.width(), bp.height(), |u, v| {
            *bp.get(u, v) && pred.get(u, v) == pid
        });
        let gb = Grid::from_fn(bg.width(), bg.height(), |u, v| {
            *bg.get(u, v) && gt.get(u, v) == gid
        });
        let near_g = dilate(&gb, dilation);
        let near_p = dilate(&pb, dilation);
        tp_pred += pb
            .as_slice()
            .iter()
            .zip(near_g.as_slice())
            .filter(|(&a, &b)| a && b)
            .count();
        tp_gt += gb
            .as_slice()
            .iter()
            .zip(near_p.as_slice())
            .filter(|(&a, &b)| a && b)
            .count();
    }
    Ok(Prf::from_counts(tp_pred, n_pred, tp_gt, n_gt))
}

/// Fraction of GT instances whose matched prediction reaches overlap F ≥ `threshold`.
pub fn correct_segment_rate(pred: &LabelMask, gt: &LabelMask, threshold: f64) -> Result<f64> {
    let ov = Overlaps::compute(pred, gt)?;
    let a = match_overlaps(&ov);
    Ok(rate_from(&ov, &a, threshold))
}

fn rate_from(ov: &Overlaps, a: &Assignment, threshold: f64) -> f64 {
    if ov.gt_ids.is_empty() {
        return 1.0;
    }
    let correct = a
        .pairs
        .iter()
        .filter(|(p, g)| {
            let i = ov.pred_ids.binary_search(p).unwrap();
            let j = ov.gt_ids.binary_search(g).unwrap();
            ov.f(i, j) >= threshold
        })
        .count();
    correct as f64 / ov.gt_ids.len() as f64
}

/// All metrics of one prediction against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub overlap: Prf,
    pub boundary: Prf,
    pub correct_rate: f64,
}

pub fn evaluate(pred: &LabelMask, gt: &LabelMask) -> Result<Evaluation> {
    let ov = Overlaps::compute(pred, gt)?;
    let a = match_overlaps(&ov);
    Ok(Evaluation {
        overlap: overlap_prf(pred, gt, &a)?,
        boundary: boundary_prf(pred, gt, &a, BOUNDARY_DILATION)?,
        correct_rate: rate_from(&ov, &a, CORRECT_THRESHOLD),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scene: String,
    pub step: usize,
    pub eval: Evaluation,
}

/// Text table: a header, one row per (scene, step), and a mean row.
pub fn format_report(rows: &[ReportRow]) -> String {
    let mut s = String::from(
        "scene step overlap_P overlap_R overlap_F boundary_P boundary_R boundary_F correct_rate\n",
    );
    let line = |s: &mut String, scene: &str, step: &str, e: &Evaluation| {
        let _ = writeln!(
            s,
            "{scene} {step} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}",
            e.overlap.precision,
            e.overlap.recall,
            e.overlap.f_measure,
            e.boundary.precision,
            e.boundary.recall,
            e.boundary.f_measure,
            e.correct_rate
        );
    };
    for r in rows {
        line(&mut s, &r.scene, &r.step.to_string(), &r.eval);
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean =
            |f: &dyn Fn(&Evaluation) -> f64| rows.iter().map(|r| f(&r.eval)).sum::<f64>() / n;
        let avg = Evaluation {
            overlap: Prf {
                precision: mean(&|e| e.overlap.precision),
                recall: mean(&|e| e.overlap.recall),
                f_measure: mean(&|e| e.overlap.f_measure),
            },
            boundary: Prf {
                precision: mean(&|e| e.boundary.precision),
                recall: mean(&|e| e.boundary.recall),
                f_measure: mean(&|e| e.boundary.f_measure),
            },
            correct_rate: mean(&|e| e.correct_rate),
        };
        line(&mut s, "mean", "-", &avg);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, rects: &[(u32, usize, usize, usize, usize)]) -> LabelMask {
        let mut m = LabelMask::zeros(w, h);
        for &(id, u0, v0, uw, vh) in rects {
            for v in v0..v0 + vh {
                for u in u0..u0 + uw {
                    m.set(u, v, id);
                }
            }
        }
        m
    }

    #[test]
    fn perfect_prediction() {
        let gt = mask(40, 30, &[(1, 2, 2, 10, 10), (2, 20, 5, 8, 12)]);
        let pred = mask(40, 30, &[(7, 2, 2, 10, 10), (3, 20, 5, 8, 12)]);
        let a = match_instances(&pred, &gt).unwrap();
        assert_eq!(a.pairs, vec![(3, 2), (7, 1)]);
        let e = evaluate(&pred, &gt).unwrap();
        assert_eq!(e.overlap, Prf::new(1.0, 1.0));
        assert_eq!(e.boundary, Prf::new(1.0, 1.0));
        assert_eq!(e.correct_rate, 1.0);
    }

    #[test]
    fn half_coverage() {
        let gt = mask(20, 20, &[(1, 0, 0, 10, 10)]);
        let pred = mask(20, 20, &[(1, 0, 0, 5, 10)]);
        let a = match_instances(&pred, &gt).unwrap();
        let p = overlap_prf(&pred, &gt, &a).unwrap();
        assert_eq!((p.precision, p.recall), (1.0, 0.5));
        assert!((p.f_measure - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction_convention() {
        let gt = mask(20, 20, &[(1, 0, 0, 10, 10)]);
        let pred = LabelMask::zeros(20, 20);
        let a = match_instances(&pred, &gt).unwrap();
        assert!(a.pairs.is_empty());
        assert_eq!(overlap_prf(&pred, &gt, &a).unwrap(), Prf::new(1.0, 0.0));
        assert_eq!(correct_segment_rate(&pred, &gt, 0.75).unwrap(), 0.0);
    }

    #[test]
    fn merged_prediction_matches_one_object() {
        let gt = mask(40, 20, &[(1, 0, 0, 10, 10), (2, 10, 0, 6, 10)]);
        let pred = mask(40, 20, &[(5, 0, 0, 16, 10)]);
        let a = match_instances(&pred, &gt).unwrap();
        assert_eq!(a.pairs, vec![(5, 1)]);
    }

    #[test]
    fn boundary_shift_tolerance() {
        let gt = mask(40, 40, &[(1, 10, 10, 12, 12)]);
        let near = mask(40, 40, &[(1, 11, 10, 12, 12)]);
        let far = mask(40, 40, &[(1, 15, 10, 12, 12)]);
        let a = match_instances(&near, &gt).unwrap();
        assert_eq!(boundary_prf(&near, &gt, &a, 2).unwrap(), Prf::new(1.0, 1.0));
        let a = match_instances(&far, &gt).unwrap();
        let b = boundary_prf(&far, &gt, &a, 2).unwrap();
        assert!(b.precision < 1.0 && b.recall < 1.0);
    }

    #[test]
    fn counting_rate() {
        let gt = mask(
            60,
            20,
            &[
                (1, 0, 0, 10, 10),
                (2, 12, 0, 10, 10),
                (3, 24, 0, 10, 10),
                (4, 36, 0, 10, 10),
            ],
        );
        let pred = mask(
            60,
            20,
            &[(1, 0, 0, 10, 10), (2, 12, 0, 10, 10), (3, 24, 0, 10, 10)],
        );
        assert_eq!(correct_segment_rate(&pred, &gt, 0.75).unwrap(), 0.75);
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
        let rect = vec![vec![1.0, 0.0, 5.0]];
        assert_eq!(hungarian(&rect), vec![1]);
    }

    #[test]
    fn report_layout() {
        let e = Evaluation {
            overlap: Prf::new(1.0, 0.0),
            boundary: Prf::new(1.0, 0.0),
            correct_rate: 0.0,
        };
        let r = format_report(&[ReportRow {
            scene: "s0".into(),
            step: 0,
            eval: e,
        }]);
        let lines: Vec<&str> = r.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[1],
            "s0 0 1.0000 0.0000 0.0000 1.0000 0.0000 0.0000 0.0000"
        );
        assert!(lines[2].starts_with("mean -"));
    }
}
