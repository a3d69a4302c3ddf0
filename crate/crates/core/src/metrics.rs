//! Region similarity J (IoU), contour accuracy F (boundary
//! precision/recall), and their average J&F.

use crate::error::{Error, Result};
use crate::matching::{ObjectLabelMap, BACKGROUND_ID};
use serde::Serialize;

pub const DEFAULT_TOL_FRAC: f64 = 0.008;

/// Intersection-over-union of the object's binary masks; 1 if both empty.
pub fn j_measure(pred: &ObjectLabelMap, gt: &ObjectLabelMap, object_id: u32) -> f64 {
    assert_eq!((pred.h, pred.w), (gt.h, gt.w), "dimension mismatch");
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        let (bp, bg) = (p == object_id, g == object_id);
        if bp && bg {
            inter += 1;
        }
        if bp || bg {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Boundary pixels of the object's binary mask: foreground pixels with a
/// 4-neighbor background pixel, or foreground pixels on the image edge.
fn boundary(mask: &ObjectLabelMap, object_id: u32) -> Vec<bool> {
    let (h, w) = (mask.h, mask.w);
    let fg = |y: isize, x: isize| -> bool {
        y >= 0
            && x >= 0
            && (y as usize) < h
            && (x as usize) < w
            && mask.labels[y as usize * w + x as usize] == object_id
    };
    let mut out = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !fg(y, x) {
                continue;
            }
            if !fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1) {
                out[y as usize * w + x as usize] = true;
            }
        }
    }
    out
}

/// Mark every pixel within Euclidean distance `r` of a set pixel.
fn dilate_disk(src: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    let r2 = (r * r) as isize;
    for y in 0..h {
        for x in 0..w {
            if !src[y * w + x] {
                continue;
            }
            let y0 = y.saturating_sub(r);
            let y1 = (y + r).min(h - 1);
            let x0 = x.saturating_sub(r);
            let x1 = (x + r).min(w - 1);
            for ny in y0..=y1 {
                for nx in x0..=x1 {
                    let dy = ny as isize - y as isize;
                    let dx = nx as isize - x as isize;
                    if dy * dy + dx * dx <= r2 {
                        out[ny * w + nx] = true;
                    }
                }
            }
        }
    }
    out
}

/// Contour F-score with a pixel tolerance of ceil(tol_frac * diagonal).
pub fn f_measure(
    pred: &ObjectLabelMap,
    gt: &ObjectLabelMap,
    object_id: u32,
    tol_frac: f64,
) -> f64 {
    assert_eq!((pred.h, pred.w), (gt.h, gt.w), "dimension mismatch");
    let (h, w) = (pred.h, pred.w);
    let diag = ((h * h + w * w) as f64).sqrt();
    let r = (tol_frac * diag).ceil() as usize;
    let pb = boundary(pred, object_id);
    let gb = boundary(gt, object_id);
    let np = pb.iter().filter(|&&b| b).count();
    let ng = gb.iter().filter(|&&b| b).count();
    if np == 0 && ng == 0 {
        return 1.0;
    }
    if np == 0 || ng == 0 {
        return 0.0;
    }
    let gd = dilate_disk(&gb, h, w, r);
    let pd = dilate_disk(&pb, h, w, r);
    let tp_p = pb.iter().zip(&gd).filter(|(&p, &g)| p && g).count();
    let tp_g = gb.iter().zip(&pd).filter(|(&g, &p)| g && p).count();
    let precision = tp_p as f64 / np as f64;
    let recall = tp_g as f64 / ng as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ObjectScore {
    pub object: u32,
    pub j: f64,
    pub f: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SequenceReport {
    pub name: String,
    pub objects: Vec<ObjectScore>,
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf_mean: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub sequences: Vec<SequenceReport>,
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf_mean: f64,
    /// Whether the conditioning frame was scored (off by default).
    pub include_first: bool,
    pub tol_frac: f64,
}

/// Score one sequence: per-object J/F averaged over the evaluated frames
/// (the first frame is the ground-truth input and excluded unless
/// `include_first`), then averaged over the non-background objects.
pub fn evaluate_sequence(
    name: &str,
    preds: &[ObjectLabelMap],
    gts: &[ObjectLabelMap],
    include_first: bool,
    tol_frac: f64,
) -> Result<SequenceReport> {
    if preds.len() != gts.len() {
        return Err(Error::Data(format!(
            "sequence {name}: {} predictions vs {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data(format!("sequence {name}: empty")));
    }
    let start = if include_first || preds.len() == 1 { 0 } else { 1 };
    let ids: Vec<u32> =
        gts[0].objects.iter().copied().filter(|&o| o != BACKGROUND_ID).collect();
    let mut objects = Vec::with_capacity(ids.len());
    for &id in &ids {
        let frames = &preds[start..];
        let n = frames.len() as f64;
        let mut js = 0.0;
        let mut fs = 0.0;
        for (p, g) in frames.iter().zip(&gts[start..]) {
            js += j_measure(p, g, id);
            fs += f_measure(p, g, id, tol_frac);
        }
        objects.push(ObjectScore { object: id, j: js / n, f: fs / n });
    }
    let n = objects.len().max(1) as f64;
    let j_mean = objects.iter().map(|o| o.j).sum::<f64>() / n;
    let f_mean = objects.iter().map(|o| o.f).sum::<f64>() / n;
    Ok(SequenceReport {
        name: name.to_string(),
        objects,
        j_mean,
        f_mean,
        jf_mean: (j_mean + f_mean) / 2.0,
    })
}

/// Aggregate sequence reports into a dataset-level report.
pub fn aggregate(sequences: Vec<SequenceReport>, include_first: bool, tol_frac: f64) -> EvalReport {
    let n = sequences.len().max(1) as f64;
    let j_mean = sequences.iter().map(|s| s.j_mean).sum::<f64>() / n;
    let f_mean = sequences.iter().map(|s| s.f_mean).sum::<f64>() / n;
    EvalReport {
        sequences,
        j_mean,
        f_mean,
        jf_mean: (j_mean + f_mean) / 2.0,
        include_first,
        tol_frac,
    }
}

impl EvalReport {
    /// CSV table with one row per (sequence, object).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sequence,object,J,F\n");
        for s in &self.sequences {
            for o in &s.objects {
                out.push_str(&format!("{},{},{},{}\n", s.name, o.object, o.j, o.f));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, labels: Vec<u32>) -> ObjectLabelMap {
        ObjectLabelMap::from_labels(h, w, labels)
    }

    /// 8x8 map whose object-1 region is the given rectangle.
    fn rect(y0: usize, x0: usize, y1: usize, x1: usize) -> ObjectLabelMap {
        let mut labels = vec![0u32; 64];
        for y in y0..y1 {
            for x in x0..x1 {
                labels[y * 8 + x] = 1;
            }
        }
        map(8, 8, labels)
    }

    #[test]
    fn identical_masks_score_one() {
        let m = rect(2, 2, 6, 6);
        assert_eq!(j_measure(&m, &m, 1), 1.0);
        assert_eq!(f_measure(&m, &m, 1, DEFAULT_TOL_FRAC), 1.0);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let a = rect(0, 0, 2, 2);
        let b = rect(6, 6, 8, 8);
        assert_eq!(j_measure(&a, &b, 1), 0.0);
        // boundaries are far apart relative to the default tolerance
        assert!((f_measure(&a, &b, 1, DEFAULT_TOL_FRAC) - 0.0).abs() < 1e-9);
    }

    #[test]
    fn overlap_one_third() {
        // pred [0,4) x [0,4), gt [2,4) x [0,4): intersection 8, union 16+8-8=16
        let p = rect(0, 0, 4, 4);
        let g = rect(2, 0, 4, 4);
        assert!((j_measure(&p, &g, 1) - 0.5).abs() < 1e-9);
        // pred 2x2, gt 4x2 sharing a 2x2 block: inter 4, union 8+4-4=8
        let p2 = rect(0, 0, 2, 2);
        let g2 = rect(0, 0, 4, 2);
        assert!((j_measure(&p2, &g2, 1) - 0.5).abs() < 1e-9);
        // one-third: pred 2 cells, gt 2 cells, inter 1, union 3
        let p3 = map(1, 3, vec![1, 1, 0]);
        let g3 = map(1, 3, vec![0, 1, 1]);
        assert!((j_measure(&p3, &g3, 1) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn both_empty_is_one_and_one_empty_is_zero() {
        let empty = map(4, 4, vec![0; 16]);
        let full = map(4, 4, vec![1; 16]);
        assert_eq!(j_measure(&empty, &empty, 1), 1.0);
        assert_eq!(j_measure(&empty, &full, 1), 0.0);
        assert_eq!(f_measure(&empty, &empty, 1, DEFAULT_TOL_FRAC), 1.0);
        assert_eq!(f_measure(&empty, &full, 1, DEFAULT_TOL_FRAC), 0.0);
        assert_eq!(f_measure(&full, &empty, 1, DEFAULT_TOL_FRAC), 0.0);
    }

    #[test]
    fn one_pixel_shift_within_tolerance_keeps_f_at_one() {
        // 32x32 grid: diag ~45, tolerance ceil(0.05*45) = 3 pixels
        let mk = |x0: usize| {
            let mut labels = vec![0u32; 32 * 32];
            for y in 8..16 {
                for x in x0..x0 + 8 {
                    labels[y * 32 + x] = 1;
                }
            }
            map(32, 32, labels)
        };
        let f = f_measure(&mk(8), &mk(9), 1, 0.05);
        assert!((f - 1.0).abs() < 1e-9, "F = {f}");
        // same shift with a zero dilation radius drops below 1
        let f_tight = f_measure(&mk(8), &mk(9), 1, 0.0);
        assert!(f_tight < 1.0);
    }

    #[test]
    fn f_is_symmetric() {
        let a = rect(1, 1, 5, 4);
        let b = rect(2, 2, 7, 6);
        let fab = f_measure(&a, &b, 1, DEFAULT_TOL_FRAC);
        let fba = f_measure(&b, &a, 1, DEFAULT_TOL_FRAC);
        assert!((fab - fba).abs() < 1e-9);
    }

    #[test]
    fn f_is_monotone_in_tolerance() {
        let a = rect(1, 1, 5, 4);
        let b = rect(2, 2, 7, 6);
        let mut prev = 0.0;
        for tol in [0.001, 0.01, 0.05, 0.2, 0.5] {
            let f = f_measure(&a, &b, 1, tol);
            assert!(f >= prev - 1e-12, "tolerance {tol}: {f} < {prev}");
            prev = f;
        }
        assert!((prev - 1.0).abs() < 1e-9, "huge tolerance should reach 1");
    }

    #[test]
    fn sequence_report_averages_and_skips_first_frame() {
        let gt = rect(2, 2, 6, 6);
        let perfect = gt.clone();
        let off = rect(2, 2, 6, 5);
        // frame 0 (ignored) deliberately wrong
        let junk = rect(0, 0, 1, 1);
        let rep = evaluate_sequence(
            "seq",
            &[junk, perfect.clone(), off.clone()],
            &[gt.clone(), gt.clone(), gt.clone()],
            false,
            DEFAULT_TOL_FRAC,
        )
        .unwrap();
        let j_expect = (1.0 + j_measure(&off, &gt, 1)) / 2.0;
        assert!((rep.objects[0].j - j_expect).abs() < 1e-9);
        assert!((rep.jf_mean - (rep.j_mean + rep.f_mean) / 2.0).abs() < 1e-12);
        // background is never scored
        assert!(rep.objects.iter().all(|o| o.object != 0));
    }

    #[test]
    fn include_first_scores_frame_zero() {
        let gt = rect(2, 2, 6, 6);
        let junk = rect(0, 0, 1, 1);
        let rep = evaluate_sequence(
            "seq",
            &[junk.clone(), gt.clone()],
            &[gt.clone(), gt.clone()],
            true,
            DEFAULT_TOL_FRAC,
        )
        .unwrap();
        assert!(rep.objects[0].j < 1.0);
    }

    #[test]
    fn csv_has_expected_shape() {
        let gt = rect(2, 2, 6, 6);
        let rep =
            evaluate_sequence("s", &[gt.clone()], &[gt.clone()], false, DEFAULT_TOL_FRAC)
                .unwrap();
        let csv = aggregate(vec![rep], false, DEFAULT_TOL_FRAC).to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("sequence,object,J,F"));
        assert_eq!(lines.next(), Some("s,1,1,1"));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let gt = rect(2, 2, 6, 6);
        assert!(evaluate_sequence("s", &[gt.clone()], &[], false, DEFAULT_TOL_FRAC).is_err());
    }
}
