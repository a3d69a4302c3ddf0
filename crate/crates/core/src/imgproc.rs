//! Geometric image helpers: bilinear/nearest resizing, flips, crops, mask
//! downsampling to the stride grid, and posterior upsampling.

use crate::array::ArrayD;
use crate::matching::ObjectLabelMap;
use crate::scalar::Scalar;

/// Bilinear resize of an [H,W,C] array.
pub fn bilinear_resize<T: Scalar>(img: &ArrayD<T>, oh: usize, ow: usize) -> ArrayD<T> {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = ArrayD::zeros(&[oh, ow, c]);
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    for oy in 0..oh {
        // align sample points with pixel centers
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = T::from_f(fy - y0 as f64);
        for ox in 0..ow {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = T::from_f(fx - x0 as f64);
            for ch in 0..c {
                let v00 = img.at(&[y0, x0, ch]);
                let v01 = img.at(&[y0, x1, ch]);
                let v10 = img.at(&[y1, x0, ch]);
                let v11 = img.at(&[y1, x1, ch]);
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                *out.at_mut(&[oy, ox, ch]) = top + (bot - top) * wy;
            }
        }
    }
    out
}

/// Nearest-neighbor resize of a label map (keeps ids categorical).
pub fn nearest_resize_labels(mask: &ObjectLabelMap, oh: usize, ow: usize) -> ObjectLabelMap {
    let sy = mask.h as f64 / oh as f64;
    let sx = mask.w as f64 / ow as f64;
    let mut labels = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let iy = (((oy as f64 + 0.5) * sy).floor() as usize).min(mask.h - 1);
        for ox in 0..ow {
            let ix = (((ox as f64 + 0.5) * sx).floor() as usize).min(mask.w - 1);
            labels.push(mask.labels[iy * mask.w + ix]);
        }
    }
    ObjectLabelMap::with_objects(oh, ow, labels, mask.objects.clone())
}

pub fn flip_h_image<T: Scalar>(img: &ArrayD<T>) -> ArrayD<T> {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = ArrayD::zeros(&[h, w, c]);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                *out.at_mut(&[y, x, ch]) = img.at(&[y, w - 1 - x, ch]);
            }
        }
    }
    out
}

pub fn flip_h_labels(mask: &ObjectLabelMap) -> ObjectLabelMap {
    let mut labels = Vec::with_capacity(mask.h * mask.w);
    for y in 0..mask.h {
        for x in 0..mask.w {
            labels.push(mask.labels[y * mask.w + (mask.w - 1 - x)]);
        }
    }
    ObjectLabelMap::with_objects(mask.h, mask.w, labels, mask.objects.clone())
}

pub fn crop_image<T: Scalar>(
    img: &ArrayD<T>,
    y0: usize,
    x0: usize,
    ch_: usize,
    cw: usize,
) -> ArrayD<T> {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    assert!(y0 + ch_ <= h && x0 + cw <= w, "crop out of range");
    let mut out = ArrayD::zeros(&[ch_, cw, c]);
    for y in 0..ch_ {
        for x in 0..cw {
            for chn in 0..c {
                *out.at_mut(&[y, x, chn]) = img.at(&[y0 + y, x0 + x, chn]);
            }
        }
    }
    out
}

pub fn crop_labels(
    mask: &ObjectLabelMap,
    y0: usize,
    x0: usize,
    ch: usize,
    cw: usize,
) -> ObjectLabelMap {
    assert!(y0 + ch <= mask.h && x0 + cw <= mask.w, "crop out of range");
    let mut labels = Vec::with_capacity(ch * cw);
    for y in 0..ch {
        for x in 0..cw {
            labels.push(mask.labels[(y0 + y) * mask.w + (x0 + x)]);
        }
    }
    ObjectLabelMap::with_objects(ch, cw, labels, mask.objects.clone())
}

/// Downsample a full-resolution label map to the stride grid by sampling the
/// nearest pixel to each grid-cell center.
pub fn downsample_labels(mask: &ObjectLabelMap, stride: usize) -> ObjectLabelMap {
    assert!(mask.h % stride == 0 && mask.w % stride == 0);
    let (gh, gw) = (mask.h / stride, mask.w / stride);
    let off = stride / 2;
    let mut labels = Vec::with_capacity(gh * gw);
    for gy in 0..gh {
        for gx in 0..gw {
            labels.push(mask.labels[(gy * stride + off) * mask.w + gx * stride + off]);
        }
    }
    ObjectLabelMap::with_objects(gh, gw, labels, mask.objects.clone())
}

/// Bilinear upsampling of an [H',W',O] posterior back to full resolution.
/// Grid cell (gy,gx) is anchored at full-res pixel (gy*s + s/2, gx*s + s/2),
/// matching the sampling points of `downsample_labels`.
pub fn upsample_probs<T: Scalar>(probs: &ArrayD<T>, oh: usize, ow: usize) -> ArrayD<T> {
    let (gh, gw, c) = (probs.shape()[0], probs.shape()[1], probs.shape()[2]);
    let sy = oh as f64 / gh as f64;
    let sx = ow as f64 / gw as f64;
    let (offy, offx) = ((sy as usize / 2) as f64, (sx as usize / 2) as f64);
    let mut out = ArrayD::zeros(&[oh, ow, c]);
    for oy in 0..oh {
        let fy = ((oy as f64 - offy) / sy).clamp(0.0, (gh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(gh - 1);
        let wy = T::from_f(fy - y0 as f64);
        for ox in 0..ow {
            let fx = ((ox as f64 - offx) / sx).clamp(0.0, (gw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(gw - 1);
            let wx = T::from_f(fx - x0 as f64);
            for ch in 0..c {
                let v00 = probs.at(&[y0, x0, ch]);
                let v01 = probs.at(&[y0, x1, ch]);
                let v10 = probs.at(&[y1, x0, ch]);
                let v11 = probs.at(&[y1, x1, ch]);
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                *out.at_mut(&[oy, ox, ch]) = top + (bot - top) * wy;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::ObjectLabelMap;

    #[test]
    fn bilinear_identity_when_size_unchanged() {
        let img = ArrayD::<f64>::from_vec(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let out = bilinear_resize(&img, 2, 2);
        assert_eq!(out, img);
    }

    #[test]
    fn bilinear_upsample_of_constant_is_constant() {
        let img = ArrayD::<f64>::full(&[3, 3, 2], 0.4);
        let out = bilinear_resize(&img, 7, 5);
        assert!(out.iter().all(|&v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn bilinear_midpoint_interpolates() {
        let img = ArrayD::<f64>::from_vec(&[1, 2, 1], vec![0.0, 1.0]);
        let out = bilinear_resize(&img, 1, 4);
        // pixel centers at source coords -0.25, 0.25, 0.75, 1.25 (clamped)
        assert!((out.data()[1] - 0.25).abs() < 1e-12);
        assert!((out.data()[2] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = ArrayD::<f64>::from_vec(&[2, 3, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(flip_h_image(&flip_h_image(&img)), img);
        let m = ObjectLabelMap::from_labels(2, 3, vec![0, 1, 2, 2, 1, 0]);
        let ff = flip_h_labels(&flip_h_labels(&m));
        assert_eq!(ff.labels, m.labels);
    }

    #[test]
    fn flip_reverses_rows() {
        let img = ArrayD::<f64>::from_vec(&[1, 3, 1], vec![1.0, 2.0, 3.0]);
        assert_eq!(flip_h_image(&img).data(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn crop_extracts_window() {
        let img = ArrayD::<f64>::from_vec(&[3, 3, 1], (1..=9).map(|v| v as f64).collect());
        let c = crop_image(&img, 1, 1, 2, 2);
        assert_eq!(c.data(), &[5.0, 6.0, 8.0, 9.0]);
        let m = ObjectLabelMap::from_labels(3, 3, (1..=9).collect());
        let cm = crop_labels(&m, 1, 1, 2, 2);
        assert_eq!(cm.labels, vec![5, 6, 8, 9]);
    }

    #[test]
    fn downsample_labels_picks_cell_centers() {
        // 4x4 grid, stride 4: single cell, center at (2,2)
        let mut labels = vec![0u32; 16];
        labels[2 * 4 + 2] = 7;
        let m = ObjectLabelMap::from_labels(4, 4, labels);
        let d = downsample_labels(&m, 4);
        assert_eq!((d.h, d.w), (1, 1));
        assert_eq!(d.labels, vec![7]);
    }

    #[test]
    fn downsample_preserves_object_ids() {
        // blocky mask: every 4x4 cell constant, ids must survive exactly
        let mut labels = vec![0u32; 64];
        for y in 0..8 {
            for x in 0..8 {
                labels[y * 8 + x] = if x < 4 { 1 } else { 2 };
            }
        }
        let m = ObjectLabelMap::from_labels(8, 8, labels);
        let d = downsample_labels(&m, 4);
        assert_eq!(d.labels, vec![1, 2, 1, 2]);
    }

    #[test]
    fn upsample_probs_keeps_rows_normalized() {
        let probs = ArrayD::<f64>::from_vec(&[2, 2, 2], vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7]);
        let up = upsample_probs(&probs, 6, 6);
        assert_eq!(up.shape(), &[6, 6, 2]);
        for row in up.data().chunks_exact(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn nearest_resize_uses_only_existing_labels() {
        let m = ObjectLabelMap::from_labels(2, 2, vec![0, 3, 5, 3]);
        let r = nearest_resize_labels(&m, 5, 5);
        assert!(r.labels.iter().all(|l| [0, 3, 5].contains(l)));
        assert_eq!((r.h, r.w), (5, 5));
    }
}
