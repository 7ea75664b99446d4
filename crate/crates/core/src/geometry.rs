//! Box arithmetic and the pairwise spatial encodings used as positional
//! queries by the binary and ternary decoders.
//!
//! Pairwise layout (36 values): 18 base features followed by their log
//! transforms, in the order listed in [`SPATIAL_FEATURES`]. Signed entries
//! (`dx`, `dy`) use `sign(x) * ln(1 + |x|)`; all others use `ln(max(x, 0) + eps)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Mlp;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PAIR_FEATURES: usize = 36;
pub const TRIPLET_FEATURES: usize = 3 * PAIR_FEATURES;
pub const DEFAULT_EPS: f64 = 1e-3;

/// Names of the 18 base features, in output order.
pub const SPATIAL_FEATURES: [&str; 18] = [
    "cx_i",
    "cy_i",
    "w_i",
    "h_i",
    "area_i",
    "aspect_i",
    "cx_j",
    "cy_j",
    "w_j",
    "h_j",
    "area_j",
    "aspect_j",
    "iou",
    "area_ratio",
    "dx",
    "dy",
    "center_dist",
    "aspect_ratio_ratio",
];

const SIGNED: [usize; 2] = [14, 15];

/// Axis-aligned box in absolute pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(v: [T; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.to_array();
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("geometry", "box", "non-finite coordinate"));
        }
        if self.x2 < self.x1 || self.y2 < self.y1 {
            return Err(Error::validation(
                "geometry",
                "box",
                format!("inverted box [{}, {}, {}, {}]", c[0], c[1], c[2], c[3]),
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        BBox {
            x1: U::from_f64_lossy(self.x1.to_f64_lossy()),
            y1: U::from_f64_lossy(self.y1.to_f64_lossy()),
            x2: U::from_f64_lossy(self.x2.to_f64_lossy()),
            y2: U::from_f64_lossy(self.y2.to_f64_lossy()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        let s = ImageSize { width, height };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config(
                "geometry",
                format!("image size {}x{} must be positive", self.width, self.height),
            ));
        }
        Ok(())
    }
}

/// Intersection over union; 0 when the union has zero area.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(T::zero());
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(T::zero());
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).min(T::one())
}

struct BoxStats {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    area: f64,
    aspect: f64,
}

fn stats<T: Scalar>(b: &BBox<T>, eps: f64) -> BoxStats {
    let x1 = b.x1.to_f64_lossy();
    let y1 = b.y1.to_f64_lossy();
    let w = b.width().to_f64_lossy();
    let h = b.height().to_f64_lossy();
    BoxStats {
        cx: x1 + w / 2.0,
        cy: y1 + h / 2.0,
        w,
        h,
        area: w * h,
        aspect: w / (h + eps),
    }
}

/// The 36-value spatial encoding of an ordered box pair.
pub fn pairwise_spatial<T: Scalar>(bi: &BBox<T>, bj: &BBox<T>, img: ImageSize, eps: f64) -> Result<[T; PAIR_FEATURES]> {
    img.validate()?;
    let iw = img.width as f64;
    let ih = img.height as f64;
    let si = stats(bi, eps);
    let sj = stats(bj, eps);

    let mut base = [0.0f64; 18];
    for (k, s) in [&si, &sj].into_iter().enumerate() {
        let o = 6 * k;
        base[o] = s.cx / iw;
        base[o + 1] = s.cy / ih;
        base[o + 2] = s.w / iw;
        base[o + 3] = s.h / ih;
        base[o + 4] = s.area / (iw * ih);
        base[o + 5] = s.aspect;
    }
    base[12] = iou(&bi.cast::<f64>(), &bj.cast::<f64>());
    base[13] = si.area / (sj.area + eps);
    base[14] = (sj.cx - si.cx) / (si.w + eps);
    base[15] = (sj.cy - si.cy) / (si.h + eps);
    base[16] = ((sj.cx - si.cx).powi(2) + (sj.cy - si.cy).powi(2)).sqrt() / (iw * iw + ih * ih).sqrt();
    base[17] = si.aspect / (sj.aspect + eps);

    let mut out = [T::zero(); PAIR_FEATURES];
    for (k, &v) in base.iter().enumerate() {
        out[k] = T::from_f64_lossy(v);
        let logv = if SIGNED.contains(&k) {
            v.signum() * v.abs().ln_1p()
        } else {
            (v.max(0.0) + eps).ln()
        };
        out[18 + k] = T::from_f64_lossy(logv);
    }
    Ok(out)
}

fn check_index(i: usize, len: usize, what: &'static str) -> Result<()> {
    if i >= len {
        return Err(Error::IndexOutOfRange {
            module: "geometry",
            what,
            index: i,
            len,
        });
    }
    Ok(())
}

/// Raw `[m x 36]` spatial features for ordered pairs.
pub fn pair_features<T: Scalar>(
    pairs: &[(usize, usize)],
    boxes: &[BBox<T>],
    img: ImageSize,
    eps: f64,
) -> Result<Tensor<T>> {
    img.validate()?;
    let mut data = Vec::with_capacity(pairs.len() * PAIR_FEATURES);
    for &(i, j) in pairs {
        check_index(i, boxes.len(), "pair")?;
        check_index(j, boxes.len(), "pair")?;
        data.extend_from_slice(&pairwise_spatial(&boxes[i], &boxes[j], img, eps)?);
    }
    Tensor::new(vec![pairs.len(), PAIR_FEATURES], data)
}

/// Raw `[r x 108]` features: human-object, human-tool, object-tool blocks.
pub fn triplet_features<T: Scalar>(
    triplets: &[(usize, usize, usize)],
    boxes: &[BBox<T>],
    img: ImageSize,
    eps: f64,
) -> Result<Tensor<T>> {
    img.validate()?;
    let mut data = Vec::with_capacity(triplets.len() * TRIPLET_FEATURES);
    for &(h, o, t) in triplets {
        for idx in [h, o, t] {
            check_index(idx, boxes.len(), "triplet")?;
        }
        data.extend_from_slice(&pairwise_spatial(&boxes[h], &boxes[o], img, eps)?);
        data.extend_from_slice(&pairwise_spatial(&boxes[h], &boxes[t], img, eps)?);
        data.extend_from_slice(&pairwise_spatial(&boxes[o], &boxes[t], img, eps)?);
    }
    Tensor::new(vec![triplets.len(), TRIPLET_FEATURES], data)
}

/// Binary positional matrix: the pair MLP applied to each pair's encoding.
pub fn binary_positions<T: Scalar>(
    pairs: &[(usize, usize)],
    boxes: &[BBox<T>],
    img: ImageSize,
    mlp: &Mlp<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    mlp.forward(&pair_features(pairs, boxes, img, eps)?)
}

/// Ternary positional matrix.
pub fn ternary_positions<T: Scalar>(
    triplets: &[(usize, usize, usize)],
    boxes: &[BBox<T>],
    img: ImageSize,
    mlp: &Mlp<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    mlp.forward(&triplet_features(triplets, boxes, img, eps)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    const IMG: ImageSize = ImageSize {
        width: 640,
        height: 480,
    };

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((iou(&a, &b(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-12);
        let p = b(3.0, 3.0, 3.0, 3.0);
        assert_eq!(iou(&p, &p), 0.0);
    }

    #[test]
    fn inverted_box_rejected() {
        assert!(BBox::new(2.0, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn identical_boxes_have_unit_iou_and_zero_offsets() {
        let a = b(10.0, 20.0, 110.0, 220.0);
        let f = pairwise_spatial(&a, &a, IMG, DEFAULT_EPS).unwrap();
        assert_eq!(f[12], 1.0);
        assert_eq!(f[14], 0.0);
        assert_eq!(f[15], 0.0);
        assert_eq!(f[16], 0.0);
        assert_eq!(f[32], 0.0);
        assert_eq!(f[33], 0.0);
    }

    #[test]
    fn zero_size_image_is_config_error() {
        let a = b(0.0, 0.0, 1.0, 1.0);
        let err = pairwise_spatial(&a, &a, ImageSize { width: 0, height: 4 }, DEFAULT_EPS).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn empty_pair_set_gives_empty_positions() {
        let mlp = Mlp::<f32>::zeros(PAIR_FEATURES, 8);
        let x = binary_positions(&[], &[], IMG, &mlp, DEFAULT_EPS).unwrap();
        assert_eq!(x.dims(), &[0, 8]);
        let w = ternary_positions::<f64>(&[], &[], IMG, &Mlp::zeros(TRIPLET_FEATURES, 8), DEFAULT_EPS).unwrap();
        assert_eq!(w.dims(), &[0, 8]);
    }

    #[test]
    fn out_of_range_pair_index() {
        let boxes = [b(0.0, 0.0, 1.0, 1.0)];
        let err = pair_features(&[(0, 1)], &boxes, IMG, DEFAULT_EPS).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { .. }));
        let err = triplet_features(&[(0, 0, 3)], &boxes, IMG, DEFAULT_EPS).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { .. }));
    }

    #[test]
    fn identical_triplet_blocks_match() {
        let a = b(5.0, 5.0, 50.0, 80.0);
        let f = triplet_features(&[(0, 1, 2)], &[a, a, a], IMG, DEFAULT_EPS).unwrap();
        let row = f.row(0);
        assert_eq!(&row[..36], &row[36..72]);
        assert_eq!(&row[..36], &row[72..]);
    }
}
