//! Integer-pixel boxes, binary masks and crop transforms.
//!
//! All boxes use inclusive endpoints: `[x1, y1, x2, y2]` covers
//! `(x2 - x1 + 1) * (y2 - y1 + 1)` pixels. Ratios are computed in `f64`,
//! pixel counts in `u64`.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GeometryError {
    #[error("inverted box [{0}, {1}, {2}, {3}]")]
    Inverted(i64, i64, i64, i64),
    #[error("box {bbox} lies outside the {width}x{height} frame")]
    OutOfFrame { bbox: BBox, width: u32, height: u32 },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("frame dimensions must be positive, got {0}x{1}")]
    EmptyFrame(u32, u32),
    #[error("mask run [{start}, {len}] exceeds {total} pixels")]
    RunOutOfRange { start: u64, len: u64, total: u64 },
}

/// Width and height of an image in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
}

impl Frame {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyFrame(width, height));
        }
        Ok(Self { width, height })
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn full_box(&self) -> BBox {
        BBox {
            x1: 0,
            y1: 0,
            x2: self.width as i64 - 1,
            y2: self.height as i64 - 1,
        }
    }

    pub fn shorter_side(&self) -> u32 {
        self.width.min(self.height)
    }
}

/// Axis-aligned box with inclusive integer corners. Zero-area boxes cannot be
/// constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct BBox {
    x1: i64,
    y1: i64,
    x2: i64,
    y2: i64,
}

impl BBox {
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Result<Self, GeometryError> {
        if x1 > x2 || y1 > y2 {
            return Err(GeometryError::Inverted(x1, y1, x2, y2));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Box with its top-left corner at `(x, y)` spanning `w` by `h` pixels.
    pub fn from_xywh(x: i64, y: i64, w: i64, h: i64) -> Result<Self, GeometryError> {
        Self::new(x, y, x + w - 1, y + h - 1)
    }

    pub fn x1(&self) -> i64 {
        self.x1
    }
    pub fn y1(&self) -> i64 {
        self.y1
    }
    pub fn x2(&self) -> i64 {
        self.x2
    }
    pub fn y2(&self) -> i64 {
        self.y2
    }

    pub fn width(&self) -> u64 {
        (self.x2 - self.x1 + 1) as u64
    }

    pub fn height(&self) -> u64 {
        (self.y2 - self.y1 + 1) as u64
    }

    pub fn area(&self) -> u64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) as f64 / 2.0, (self.y1 + self.y2) as f64 / 2.0)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 as f64 && x <= self.x2 as f64 && y >= self.y1 as f64 && y <= self.y2 as f64
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x1 >= self.x1 && other.y1 >= self.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x1 <= x2 && y1 <= y2).then_some(BBox { x1, y1, x2, y2 })
    }

    /// Smallest box containing both.
    pub fn union_hull(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn in_frame(&self, frame: Frame) -> bool {
        self.x1 >= 0 && self.y1 >= 0 && self.x2 < frame.width as i64 && self.y2 < frame.height as i64
    }

    pub fn check_in_frame(&self, frame: Frame) -> Result<(), GeometryError> {
        if self.in_frame(frame) {
            Ok(())
        } else {
            Err(GeometryError::OutOfFrame {
                bbox: *self,
                width: frame.width,
                height: frame.height,
            })
        }
    }

    /// Grows the box by `pad` pixels on every side, then clips it to `frame`.
    pub fn padded_within(&self, pad: i64, frame: Frame) -> BBox {
        BBox {
            x1: (self.x1 - pad).max(0),
            y1: (self.y1 - pad).max(0),
            x2: (self.x2 + pad).min(frame.width as i64 - 1),
            y2: (self.y2 + pad).min(frame.height as i64 - 1),
        }
    }

    pub fn to_array(&self) -> [i64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[i64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [i64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [i64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Intersection over union with inclusive pixel areas.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Box area as a fraction of the frame area.
pub fn area_ratio(b: &BBox, frame: Frame) -> Result<f64, GeometryError> {
    b.check_in_frame(frame)?;
    Ok(b.area() as f64 / frame.area() as f64)
}

/// Fraction of the pixels of `b` that are set in `m`.
pub fn mask_density_in_box(b: &BBox, m: &BitMask) -> Result<f64, GeometryError> {
    b.check_in_frame(m.frame())?;
    Ok(m.count_in_box(b) as f64 / b.area() as f64)
}

/// `|a ∩ b| / |a ∪ b|`; two empty masks agree perfectly and score 1.
pub fn mask_iou(a: &BitMask, b: &BitMask) -> Result<f64, GeometryError> {
    a.check_same_frame(b)?;
    let inter = a.intersection_count(b);
    let union = a.count_ones() + b.count_ones() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// `2|a ∩ b| / (|a| + |b|)`; two empty masks score 1.
pub fn mask_dice(a: &BitMask, b: &BitMask) -> Result<f64, GeometryError> {
    a.check_same_frame(b)?;
    let total = a.count_ones() + b.count_ones();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * a.intersection_count(b) as f64 / total as f64)
}

/// Row-major binary raster packed into 64-bit words. Padding bits past
/// `width * height` are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl fmt::Debug for BitMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BitMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("ones", &self.count_ones())
            .finish()
    }
}

impl BitMask {
    pub fn zeros(frame: Frame) -> Self {
        let len = frame.area() as usize;
        Self {
            width: frame.width,
            height: frame.height,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn ones(frame: Frame) -> Self {
        let mut m = Self::zeros(frame);
        m.words.iter_mut().for_each(|w| *w = u64::MAX);
        m.clear_padding();
        m
    }

    pub fn from_fn(frame: Frame, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::zeros(frame);
        for y in 0..frame.height {
            for x in 0..frame.width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Decodes `[start, len]` runs of set pixels over the row-major index.
    pub fn from_runs(frame: Frame, runs: &[[u64; 2]]) -> Result<Self, GeometryError> {
        let mut m = Self::zeros(frame);
        let total = frame.area();
        for &[start, len] in runs {
            if start.checked_add(len).is_none_or(|end| end > total) {
                return Err(GeometryError::RunOutOfRange { start, len, total });
            }
            m.set_range(start as usize, (start + len) as usize, true);
        }
        Ok(m)
    }

    /// Maximal runs of set pixels as `[start, len]` pairs in row-major order.
    pub fn to_runs(&self) -> Vec<[u64; 2]> {
        let mut runs = Vec::new();
        let total = self.len();
        let mut i = 0;
        while i < total {
            if self.get_index(i) {
                let start = i;
                while i < total && self.get_index(i) {
                    i += 1;
                }
                runs.push([start as u64, (i - start) as u64]);
            } else {
                i += 1;
            }
        }
        runs
    }

    pub fn frame(&self) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    fn clear_padding(&mut self) {
        let rem = self.len() % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    fn get_index(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.get_index(y as usize * self.width as usize + x as usize)
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = y as usize * self.width as usize + x as usize;
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    fn set_range(&mut self, start: usize, end: usize, value: bool) {
        let mut i = start;
        while i < end {
            let word = i / 64;
            let lo = i % 64;
            let hi = (end - word * 64).min(64);
            let bits = range_mask(lo, hi);
            if value {
                self.words[word] |= bits;
            } else {
                self.words[word] &= !bits;
            }
            i = word * 64 + hi;
        }
    }

    fn count_range(&self, start: usize, end: usize) -> u64 {
        let mut count = 0u64;
        let mut i = start;
        while i < end {
            let word = i / 64;
            let lo = i % 64;
            let hi = (end - word * 64).min(64);
            count += (self.words[word] & range_mask(lo, hi)).count_ones() as u64;
            i = word * 64 + hi;
        }
        count
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Set pixels inside `b`; the box must already be known to lie in frame.
    pub fn count_in_box(&self, b: &BBox) -> u64 {
        let w = self.width as usize;
        (b.y1..=b.y2)
            .map(|y| {
                let row = y as usize * w;
                self.count_range(row + b.x1 as usize, row + b.x2 as usize + 1)
            })
            .sum()
    }

    pub fn fill_box(&mut self, b: &BBox, value: bool) {
        let w = self.width as usize;
        for y in b.y1..=b.y2 {
            let row = y as usize * w;
            self.set_range(row + b.x1 as usize, row + b.x2 as usize + 1, value);
        }
    }

    /// Overwrites the pixels inside `b` with those of `src`.
    pub fn copy_box_from(&mut self, src: &BitMask, b: &BBox) {
        for y in b.y1..=b.y2 {
            for x in b.x1..=b.x2 {
                self.set(x as u32, y as u32, src.get(x as u32, y as u32));
            }
        }
    }

    pub fn check_same_frame(&self, other: &BitMask) -> Result<(), GeometryError> {
        if self.width != other.width || self.height != other.height {
            return Err(GeometryError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BitMask) -> u64 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum()
    }

    /// Pixels where the two masks disagree.
    pub fn xor(&self, other: &BitMask) -> Result<BitMask, GeometryError> {
        self.check_same_frame(other)?;
        Ok(BitMask {
            width: self.width,
            height: self.height,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
        })
    }

    pub fn or(&self, other: &BitMask) -> Result<BitMask, GeometryError> {
        self.check_same_frame(other)?;
        Ok(BitMask {
            width: self.width,
            height: self.height,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a | b).collect(),
        })
    }

    /// Tight bounding box of the set pixels.
    pub fn bounding_box(&self) -> Option<BBox> {
        let mut hull: Option<BBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    let p = BBox {
                        x1: x as i64,
                        y1: y as i64,
                        x2: x as i64,
                        y2: y as i64,
                    };
                    hull = Some(hull.map_or(p, |h| h.union_hull(&p)));
                }
            }
        }
        hull
    }
}

fn range_mask(lo: usize, hi: usize) -> u64 {
    let upper = if hi == 64 { u64::MAX } else { (1u64 << hi) - 1 };
    upper & !((1u64 << lo) - 1)
}

/// Affine map between full-image pixels and a crop resized to a fixed target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    source: BBox,
    target_w: u32,
    target_h: u32,
    scale_x: f64,
    scale_y: f64,
}

impl CropTransform {
    pub fn new(source: BBox, target_w: u32, target_h: u32) -> Result<Self, GeometryError> {
        if target_w == 0 || target_h == 0 {
            return Err(GeometryError::EmptyFrame(target_w, target_h));
        }
        Ok(Self {
            source,
            target_w,
            target_h,
            scale_x: target_w as f64 / source.width() as f64,
            scale_y: target_h as f64 / source.height() as f64,
        })
    }

    pub fn source(&self) -> BBox {
        self.source
    }

    pub fn target_frame(&self) -> Frame {
        Frame {
            width: self.target_w,
            height: self.target_h,
        }
    }

    pub fn scale_x(&self) -> f64 {
        self.scale_x
    }

    pub fn scale_y(&self) -> f64 {
        self.scale_y
    }

    /// Maps a full-image box into crop-local pixels, clamped to the target.
    /// Pixel edges are mapped, so the inclusive far corner `x2` maps through
    /// the edge at `x2 + 1`.
    pub fn remap_to_crop(&self, b: &BBox) -> BBox {
        let s = self.source;
        let (w, h) = (self.target_w as i64 - 1, self.target_h as i64 - 1);
        let x1 = clamp_round((b.x1 - s.x1) as f64 * self.scale_x, 0, w);
        let y1 = clamp_round((b.y1 - s.y1) as f64 * self.scale_y, 0, h);
        let x2 = clamp_round((b.x2 - s.x1 + 1) as f64 * self.scale_x - 1.0, 0, w).max(x1);
        let y2 = clamp_round((b.y2 - s.y1 + 1) as f64 * self.scale_y - 1.0, 0, h).max(y1);
        BBox { x1, y1, x2, y2 }
    }

    /// Maps a crop-local box back to full-image pixels, clamped into the source box.
    pub fn remap_to_full(&self, b_local: &BBox) -> BBox {
        let s = self.source;
        let x1 = clamp_round(b_local.x1 as f64 / self.scale_x + s.x1 as f64, s.x1, s.x2);
        let y1 = clamp_round(b_local.y1 as f64 / self.scale_y + s.y1 as f64, s.y1, s.y2);
        let x2 = clamp_round((b_local.x2 + 1) as f64 / self.scale_x - 1.0 + s.x1 as f64, s.x1, s.x2).max(x1);
        let y2 = clamp_round((b_local.y2 + 1) as f64 / self.scale_y - 1.0 + s.y1 as f64, s.y1, s.y2).max(y1);
        BBox { x1, y1, x2, y2 }
    }
}

// f64::round rounds half away from zero.
fn clamp_round(v: f64, lo: i64, hi: i64) -> i64 {
    (v.round() as i64).clamp(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bb(x1: i64, y1: i64, x2: i64, y2: i64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn frame(w: u32, h: u32) -> Frame {
        Frame::new(w, h).unwrap()
    }

    fn raster(b: &BBox, f: Frame) -> Vec<bool> {
        (0..f.height as i64)
            .flat_map(|y| (0..f.width as i64).map(move |x| (x, y)))
            .map(|(x, y)| x >= b.x1 && x <= b.x2 && y >= b.y1 && y <= b.y2)
            .collect()
    }

    fn all_boxes(f: Frame) -> Vec<BBox> {
        let (w, h) = (f.width as i64, f.height as i64);
        let mut out = Vec::new();
        for x1 in 0..w {
            for x2 in x1..w {
                for y1 in 0..h {
                    for y2 in y1..h {
                        out.push(bb(x1, y1, x2, y2));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn inverted_box_is_rejected() {
        assert!(matches!(BBox::new(5, 0, 4, 0), Err(GeometryError::Inverted(..))));
        assert_eq!(bb(3, 3, 3, 3).area(), 1);
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bb(0, 0, 9, 9), &bb(0, 0, 9, 9)), 1.0);
        assert_eq!(iou(&bb(0, 0, 9, 9), &bb(20, 20, 29, 29)), 0.0);
        assert_eq!(iou(&bb(0, 0, 9, 9), &bb(5, 0, 14, 9)), 50.0 / 150.0);
    }

    #[test]
    fn iou_matches_rasterization_exhaustively() {
        let f = frame(6, 6);
        let boxes = all_boxes(f);
        let rasters: Vec<_> = boxes.iter().map(|b| raster(b, f)).collect();
        for (i, a) in boxes.iter().enumerate() {
            for (j, b) in boxes.iter().enumerate() {
                let inter = rasters[i].iter().zip(&rasters[j]).filter(|(p, q)| **p && **q).count();
                let union = rasters[i].iter().zip(&rasters[j]).filter(|(p, q)| **p || **q).count();
                let expected = inter as f64 / union as f64;
                let got = iou(a, b);
                assert_eq!(got, expected, "{a} vs {b}");
                assert_eq!(got, iou(b, a));
                assert!((0.0..=1.0).contains(&got));
            }
        }
    }

    #[test]
    fn area_ratio_examples() {
        let f = frame(1000, 1000);
        assert_eq!(area_ratio(&bb(0, 0, 99, 99), f).unwrap(), 0.01);
        assert_eq!(area_ratio(&f.full_box(), f).unwrap(), 1.0);
        assert_eq!(area_ratio(&bb(3, 7, 3, 7), frame(10, 10)).unwrap(), 0.01);
        assert!(matches!(
            area_ratio(&bb(0, 0, 10, 10), frame(10, 10)),
            Err(GeometryError::OutOfFrame { .. })
        ));
    }

    #[test]
    fn area_ratio_counts_pixels_exhaustively() {
        let f = frame(8, 8);
        for b in all_boxes(f) {
            let pixels = raster(&b, f).iter().filter(|p| **p).count() as f64;
            let scaled = area_ratio(&b, f).unwrap() * f.area() as f64;
            assert_eq!(scaled.round(), pixels);
            assert!((scaled - pixels).abs() < 1e-9);
        }
    }

    #[test]
    fn density_examples() {
        let f = frame(20, 10);
        let b = bb(0, 0, 19, 9);
        assert_eq!(mask_density_in_box(&b, &BitMask::ones(f)).unwrap(), 1.0);
        assert_eq!(mask_density_in_box(&b, &BitMask::zeros(f)).unwrap(), 0.0);
        let mut m = BitMask::zeros(f);
        m.fill_box(&bb(0, 0, 9, 9), true);
        assert_eq!(mask_density_in_box(&b, &m).unwrap(), 0.5);
    }

    #[test]
    fn mask_overlap_examples() {
        let f = frame(30, 10);
        let mut a = BitMask::zeros(f);
        a.fill_box(&bb(0, 0, 9, 9), true);
        let mut b = BitMask::zeros(f);
        b.fill_box(&bb(5, 0, 14, 9), true);
        assert_eq!(a.count_ones(), 100);
        assert_eq!(a.intersection_count(&b), 50);
        assert_eq!(mask_iou(&a, &b).unwrap(), 50.0 / 150.0);
        assert_eq!(mask_dice(&a, &b).unwrap(), 0.5);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_dice(&a, &a).unwrap(), 1.0);

        let mut c = BitMask::zeros(f);
        c.fill_box(&bb(20, 0, 29, 9), true);
        assert_eq!(mask_iou(&a, &c).unwrap(), 0.0);
        assert_eq!(mask_dice(&a, &c).unwrap(), 0.0);

        let empty = BitMask::zeros(f);
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 1.0);
        assert_eq!(mask_dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(mask_iou(&empty, &a).unwrap(), 0.0);
        assert_eq!(mask_dice(&a, &empty).unwrap(), 0.0);

        let other = BitMask::zeros(frame(10, 30));
        assert!(matches!(
            mask_iou(&a, &other),
            Err(GeometryError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn mask_iou_never_exceeds_dice() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let f = frame(rng.random_range(1..12), rng.random_range(1..12));
            let pa: f64 = rng.random();
            let pb: f64 = rng.random();
            let a = BitMask::from_fn(f, |_, _| rng.random::<f64>() < pa);
            let b = BitMask::from_fn(f, |_, _| rng.random::<f64>() < pb);
            if a.count_ones() + b.count_ones() == 0 {
                continue;
            }
            assert!(mask_iou(&a, &b).unwrap() <= mask_dice(&a, &b).unwrap() + 1e-15);
        }
    }

    #[test]
    fn count_in_box_matches_per_pixel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let f = frame(rng.random_range(1..100), rng.random_range(1..20));
            let m = BitMask::from_fn(f, |_, _| rng.random::<bool>());
            let x1 = rng.random_range(0..f.width as i64);
            let x2 = rng.random_range(x1..f.width as i64);
            let y1 = rng.random_range(0..f.height as i64);
            let y2 = rng.random_range(y1..f.height as i64);
            let b = bb(x1, y1, x2, y2);
            let naive = (y1..=y2)
                .flat_map(|y| (x1..=x2).map(move |x| (x, y)))
                .filter(|&(x, y)| m.get(x as u32, y as u32))
                .count() as u64;
            assert_eq!(m.count_in_box(&b), naive);
        }
    }

    #[test]
    fn runs_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let f = frame(rng.random_range(1..40), rng.random_range(1..40));
            let m = BitMask::from_fn(f, |_, _| rng.random::<f64>() < 0.3);
            assert_eq!(BitMask::from_runs(f, &m.to_runs()).unwrap(), m);
        }
        assert!(BitMask::from_runs(frame(2, 2), &[[3, 2]]).is_err());
    }

    #[test]
    fn remap_examples() {
        let f = frame(640, 480);
        let id = CropTransform::new(f.full_box(), 640, 480).unwrap();
        let b = bb(13, 17, 200, 301);
        assert_eq!(id.remap_to_full(&b), b);

        let t = CropTransform::new(bb(100, 100, 299, 299), 100, 100).unwrap();
        assert_eq!(t.scale_x(), 0.5);
        assert_eq!(t.remap_to_full(&bb(0, 0, 49, 49)), bb(100, 100, 199, 199));
    }

    fn random_box_in(rng: &mut ChaCha8Rng, s: BBox) -> BBox {
        let x1 = rng.random_range(s.x1..=s.x2);
        let x2 = rng.random_range(x1..=s.x2);
        let y1 = rng.random_range(s.y1..=s.y2);
        let y2 = rng.random_range(y1..=s.y2);
        bb(x1, y1, x2, y2)
    }

    #[test]
    fn remap_round_trip_is_exact_when_zooming_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let src = random_box_in(&mut rng, bb(0, 0, 1023, 1023));
            let t = CropTransform::new(src, 840, 840).unwrap();
            let p = random_box_in(&mut rng, src);
            let back = t.remap_to_full(&t.remap_to_crop(&p));
            if t.scale_x() >= 1.0 && t.scale_y() >= 1.0 {
                assert_eq!(back, p);
            }
            // Downsampling loses resolution: one crop pixel spans 1/scale source pixels.
            let tol_x = (0.5 / t.scale_x() + 0.5).max(1.0);
            let tol_y = (0.5 / t.scale_y() + 0.5).max(1.0);
            for (a, b, tol) in [
                (back.x1, p.x1, tol_x),
                (back.x2, p.x2, tol_x),
                (back.y1, p.y1, tol_y),
                (back.y2, p.y2, tol_y),
            ] {
                assert!(((a - b).abs() as f64) <= tol, "{p} -> {back} at {t:?}");
            }
        }
    }

    #[test]
    fn remap_to_full_stays_inside_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let src = random_box_in(&mut rng, bb(0, 0, 2047, 2047));
            let tw = rng.random_range(1..1200);
            let th = rng.random_range(1..1200);
            let t = CropTransform::new(src, tw, th).unwrap();
            let local = random_box_in(&mut rng, bb(0, 0, tw as i64 - 1, th as i64 - 1));
            assert!(src.contains(&t.remap_to_full(&local)));
        }
    }
}
