//! Decoding of single-scale YOLO grid tensors into detections.
//!
//! Each grid cell predicts `B` boxes, each described by
//! `(tx, ty, tw, th, objectness, class logits...)`:
//!
//! ```text
//! cx = (col + σ(tx)) / S        w = anchor_w · exp(tw)
//! cy = (row + σ(ty)) / S        h = anchor_h · exp(th)
//! confidence = σ(objectness) · max softmax(class logits)
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geometry::{nms, BBox, Detection};
use crate::scalar::{argmax, sigmoid, softmax, Real};

/// Channels preceding the class logits in each box slot.
pub const BOX_CHANNELS: usize = 5;

/// Default grid side: 512-pixel inputs at stride 32.
pub const DEFAULT_GRID_SIZE: usize = 16;

const GRID_MAGIC: &[u8; 4] = b"MGRD";

/// Raw `S×S×B×(5+C)` backbone output, row-major over `(row, col, box, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor<T> {
    pub grid_size: usize,
    pub boxes_per_cell: usize,
    pub num_classes: usize,
    pub values: Vec<T>,
}

impl<T: Real> GridTensor<T> {
    pub fn zeros(grid_size: usize, boxes_per_cell: usize, num_classes: usize) -> Self {
        let len = grid_size * grid_size * boxes_per_cell * (BOX_CHANNELS + num_classes);
        Self {
            grid_size,
            boxes_per_cell,
            num_classes,
            values: vec![T::zero(); len],
        }
    }

    pub fn from_values(grid_size: usize, boxes_per_cell: usize, num_classes: usize, values: Vec<T>) -> Result<Self> {
        let expected = grid_size * grid_size * boxes_per_cell * (BOX_CHANNELS + num_classes);
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            grid_size,
            boxes_per_cell,
            num_classes,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        BOX_CHANNELS + self.num_classes
    }

    pub fn slot_count(&self) -> usize {
        self.grid_size * self.grid_size * self.boxes_per_cell
    }

    /// Offset of the first channel of a box slot.
    pub fn slot_offset(&self, row: usize, col: usize, slot: usize) -> usize {
        ((row * self.grid_size + col) * self.boxes_per_cell + slot) * self.channels()
    }

    pub fn slot(&self, row: usize, col: usize, slot: usize) -> &[T] {
        let at = self.slot_offset(row, col, slot);
        &self.values[at..at + self.channels()]
    }

    pub fn slot_mut(&mut self, row: usize, col: usize, slot: usize) -> &mut [T] {
        let at = self.slot_offset(row, col, slot);
        let ch = self.channels();
        &mut self.values[at..at + ch]
    }

    /// `(row, col, slot)` for a flat slot index.
    pub fn slot_position(&self, index: usize) -> (usize, usize, usize) {
        let slot = index % self.boxes_per_cell;
        let cell = index / self.boxes_per_cell;
        (cell / self.grid_size, cell % self.grid_size, slot)
    }

    /// Serializes to the `MGRD` tensor file layout (f32 payload).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        for n in [self.grid_size, self.boxes_per_cell, self.num_classes] {
            let n = u32::try_from(n).map_err(|_| Error::config("grid dimension exceeds u32"))?;
            w.write_all(&n.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads an `MGRD` tensor file.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        read_exact_at(&mut r, &mut header, 0)?;
        if &header[..4] != GRID_MAGIC {
            return Err(Error::format(0, "bad magic, expected MGRD"));
        }
        let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (s, b, c) = (dim(0), dim(1), dim(2));
        let count = s
            .checked_mul(s)
            .and_then(|n| n.checked_mul(b))
            .and_then(|n| n.checked_mul(BOX_CHANNELS + c))
            .ok_or_else(|| Error::format(4, "grid dimensions overflow"))?;
        let mut payload = vec![0u8; count * 4];
        read_exact_at(&mut r, &mut payload, 16)?;
        let values = payload
            .chunks_exact(4)
            .map(|ch| T::lit(f32::from_le_bytes(ch.try_into().unwrap()) as f64))
            .collect();
        Self::from_values(s, b, c, values)
    }
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::format(
                    offset + filled as u64,
                    format!("truncated: expected {} more bytes", buf.len() - filled),
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Anchor priors `(w, h)`, normalized to the image, one per box slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet<T>(Vec<(T, T)>);

impl<T: Real> AnchorSet<T> {
    pub fn new(anchors: Vec<(T, T)>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::config("anchor set is empty"));
        }
        if let Some(bad) = anchors
            .iter()
            .find(|(w, h)| !(w.is_finite() && h.is_finite() && *w > T::zero() && *h > T::zero()))
        {
            return Err(Error::config(format!("anchor {bad:?} must be positive and finite")));
        }
        Ok(Self(anchors))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, slot: usize) -> (T, T) {
        self.0[slot]
    }

    pub fn iter(&self) -> impl Iterator<Item = &(T, T)> {
        self.0.iter()
    }

    /// Index of the anchor whose shape best overlaps `(w, h)` when both are
    /// centered at the origin. The first anchor wins ties.
    pub fn best_match(&self, w: T, h: T) -> usize {
        let shape_iou = |&(aw, ah): &(T, T)| {
            let inter = w.min(aw) * h.min(ah);
            inter / (w * h + aw * ah - inter)
        };
        let scores: Vec<T> = self.0.iter().map(shape_iou).collect();
        argmax(&scores).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig<T> {
    pub conf_threshold: T,
    pub iou_threshold: T,
    pub class_aware: bool,
}

impl<T: Real> Default for DecodeConfig<T> {
    fn default() -> Self {
        Self {
            conf_threshold: T::lit(0.25),
            iou_threshold: T::lit(0.45),
            class_aware: true,
        }
    }
}

/// Decodes one box slot located at `(row, col)` of an `S×S` grid.
pub fn decode_cell<T: Real>(
    raw: &[T],
    row: usize,
    col: usize,
    slot: usize,
    grid_size: usize,
    anchor: (T, T),
) -> Result<Detection<T>> {
    let fail = |reason: String| Error::Decode { row, col, slot, reason };
    if grid_size == 0 {
        return Err(fail("grid size must be at least 1".into()));
    }
    if raw.len() <= BOX_CHANNELS {
        return Err(fail(format!(
            "slot has {} channels, need at least {}",
            raw.len(),
            BOX_CHANNELS + 1
        )));
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(fail(format!("channel {i} is not finite")));
    }
    let s = T::of_usize(grid_size);
    let cx = (T::of_usize(col) + sigmoid(raw[0])) / s;
    let cy = (T::of_usize(row) + sigmoid(raw[1])) / s;
    let w = anchor.0 * raw[2].exp();
    let h = anchor.1 * raw[3].exp();

    let probs = softmax(&raw[BOX_CHANNELS..]);
    let class_id = argmax(&raw[BOX_CHANNELS..]).unwrap_or(0);
    let confidence = sigmoid(raw[4]) * probs[class_id];

    let bbox = BBox::from_center(cx, cy, w, h)
        .clip_to_unit()
        .map_err(|e| fail(e.to_string()))?;
    Ok(Detection::new(bbox, confidence, class_id))
}

/// Inverse of the offset/anchor transform: the `(tx, ty, tw, th)` that make
/// [`decode_cell`] reproduce the given center and size in `(row, col)`.
///
/// The in-cell fraction is kept strictly inside `(0, 1)` so centers lying on
/// a cell edge map to large but finite logits.
pub fn encode_box<T: Real>(
    (cx, cy): (T, T),
    (w, h): (T, T),
    (row, col): (usize, usize),
    grid_size: usize,
    anchor: (T, T),
) -> [T; 4] {
    let s = T::of_usize(grid_size);
    let eps = T::epsilon().sqrt();
    let logit = |p: T| {
        let p = p.max(eps).min(T::one() - eps);
        (p / (T::one() - p)).ln()
    };
    [
        logit(cx * s - T::of_usize(col)),
        logit(cy * s - T::of_usize(row)),
        (w / anchor.0).ln(),
        (h / anchor.1).ln(),
    ]
}

/// Grid cell `(row, col)` containing a normalized point.
pub fn cell_of<T: Real>(cx: T, cy: T, grid_size: usize) -> (usize, usize) {
    let s = T::of_usize(grid_size);
    let idx = |v: T| (v * s).floor().to_usize().unwrap_or(0).min(grid_size - 1);
    (idx(cy), idx(cx))
}

fn check_shape<T: Real>(grid: &GridTensor<T>, anchors: &AnchorSet<T>) -> Result<()> {
    if grid.grid_size == 0 {
        return Err(Error::config("grid size must be at least 1"));
    }
    if anchors.len() != grid.boxes_per_cell {
        return Err(Error::config(format!(
            "grid has {} boxes per cell but {} anchors were supplied",
            grid.boxes_per_cell,
            anchors.len()
        )));
    }
    if grid.num_classes == 0 {
        return Err(Error::config("grid must carry at least one class"));
    }
    Ok(())
}

/// Decodes every slot, drops detections below the confidence threshold and
/// applies class-aware NMS.
pub fn decode_grid<T: Real>(
    grid: &GridTensor<T>,
    anchors: &AnchorSet<T>,
    conf_threshold: T,
    iou_threshold: T,
) -> Result<Vec<Detection<T>>> {
    decode_grid_with(
        grid,
        anchors,
        &DecodeConfig {
            conf_threshold,
            iou_threshold,
            class_aware: true,
        },
    )
}

pub fn decode_grid_with<T: Real>(
    grid: &GridTensor<T>,
    anchors: &AnchorSet<T>,
    cfg: &DecodeConfig<T>,
) -> Result<Vec<Detection<T>>> {
    check_shape(grid, anchors)?;
    let unit = |v: T| v >= T::zero() && v <= T::one();
    if !unit(cfg.conf_threshold) || !unit(cfg.iou_threshold) {
        return Err(Error::config("thresholds must lie in [0, 1]"));
    }
    let mut candidates = Vec::new();
    for index in 0..grid.slot_count() {
        let (row, col, slot) = grid.slot_position(index);
        let det = decode_cell(
            grid.slot(row, col, slot),
            row,
            col,
            slot,
            grid.grid_size,
            anchors.get(slot),
        )?;
        if det.confidence >= cfg.conf_threshold {
            candidates.push(det);
        }
    }
    Ok(nms(&candidates, cfg.iou_threshold, cfg.class_aware))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchors1() -> AnchorSet<f64> {
        AnchorSet::new(vec![(0.2, 0.3)]).unwrap()
    }

    #[test]
    fn center_of_first_cell() {
        // σ(0) = 0.5 → (0 + 0.5) / 2
        let raw = [0.0f64, 0.0, 0.0, 0.0, 5.0, 1.0, 0.0, 0.0];
        let d = decode_cell(&raw, 0, 0, 0, 2, (0.2, 0.3)).unwrap();
        let (cx, cy) = d.bbox.center();
        assert!((cx - 0.25).abs() < 1e-12 && (cy - 0.25).abs() < 1e-12);
        assert!((d.bbox.width() - 0.2).abs() < 1e-12);
        assert!((d.bbox.height() - 0.3).abs() < 1e-12);
        assert_eq!(d.class_id, 0);
    }

    #[test]
    fn saturated_objectness_gives_tiny_confidence() {
        let raw = [0.0, 0.0, 0.0, 0.0, -20.0, 1.0, 0.0, 0.0];
        let d = decode_cell(&raw, 0, 0, 0, 2, (0.2, 0.3)).unwrap();
        assert!(d.confidence < 1e-8);
    }

    #[test]
    fn non_finite_values_name_the_cell() {
        let raw = [0.0, f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let err = decode_cell(&raw, 3, 4, 1, 8, (0.2, 0.3)).unwrap_err();
        match err {
            Error::Decode { row, col, slot, .. } => assert_eq!((row, col, slot), (3, 4, 1)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn cold_grid_decodes_to_nothing() {
        let mut g = GridTensor::<f64>::zeros(4, 1, 3);
        for i in 0..g.slot_count() {
            let (r, c, s) = g.slot_position(i);
            g.slot_mut(r, c, s)[4] = -100.0;
        }
        assert!(decode_grid(&g, &anchors1(), 0.1, 0.5).unwrap().is_empty());
    }

    #[test]
    fn single_hot_cell() {
        let mut g = GridTensor::<f64>::zeros(2, 1, 3);
        for i in 0..g.slot_count() {
            let (r, c, s) = g.slot_position(i);
            g.slot_mut(r, c, s)[4] = -100.0;
        }
        g.slot_mut(0, 0, 0)
            .copy_from_slice(&[0.0, 0.0, 0.0, 0.0, 10.0, 8.0, 0.0, 0.0]);
        let dets = decode_grid(&g, &anchors1(), 0.1, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        let (cx, cy) = dets[0].bbox.center();
        assert!((cx - 0.25).abs() < 1e-12 && (cy - 0.25).abs() < 1e-12);
    }

    #[test]
    fn adjacent_cells_with_identical_boxes_collapse() {
        let mut g = GridTensor::<f64>::zeros(2, 1, 3);
        for i in 0..g.slot_count() {
            let (r, c, s) = g.slot_position(i);
            g.slot_mut(r, c, s)[4] = -100.0;
        }
        // Both slots decode to the box centered at (0.5, 0.25).
        let left = encode_box((0.5, 0.25), (0.2, 0.3), (0, 0), 2, (0.2, 0.3));
        let right = encode_box((0.5, 0.25), (0.2, 0.3), (0, 1), 2, (0.2, 0.3));
        let fill = |s: &mut [f64], t: [f64; 4], obj: f64| {
            s[..4].copy_from_slice(&t);
            s[4] = obj;
            s[5] = 6.0;
        };
        fill(g.slot_mut(0, 0, 0), left, 4.0);
        fill(g.slot_mut(0, 1, 0), right, 3.0);
        let dets = decode_grid(&g, &anchors1(), 0.1, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        assert!(dets[0].confidence > 0.9);
    }

    #[test]
    fn anchor_count_must_match() {
        let g = GridTensor::<f64>::zeros(2, 2, 3);
        assert!(matches!(decode_grid(&g, &anchors1(), 0.1, 0.5), Err(Error::Config(_))));
    }

    #[test]
    fn encode_decode_round_trip() {
        let anchor = (0.1, 0.15);
        for &(cx, cy, w, h) in &[
            (0.33f64, 0.71, 0.12, 0.2),
            (0.52, 0.08, 0.05, 0.1),
            (0.9, 0.4, 0.1, 0.3),
        ] {
            let (row, col) = cell_of(cx, cy, 13);
            let t = encode_box((cx, cy), (w, h), (row, col), 13, anchor);
            let raw = [t[0], t[1], t[2], t[3], 0.0, 1.0];
            let d = decode_cell(&raw, row, col, 0, 13, anchor).unwrap();
            let (dx, dy) = d.bbox.center();
            let rel = |a: f64, b: f64| (a - b).abs() / b;
            assert!(rel(dx, cx) < 1e-9 && rel(dy, cy) < 1e-9);
            assert!(rel(d.bbox.width(), w) < 1e-9 && rel(d.bbox.height(), h) < 1e-9);
        }
    }

    #[test]
    fn tensor_file_round_trip_and_truncation() {
        let mut g = GridTensor::<f32>::zeros(3, 2, 3);
        for (i, v) in g.values.iter_mut().enumerate() {
            *v = i as f32 * 0.25 - 3.0;
        }
        let mut bytes = Vec::new();
        g.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"MGRD");
        assert_eq!(bytes.len(), 16 + g.values.len() * 4);
        assert_eq!(GridTensor::<f32>::read_from(&bytes[..]).unwrap(), g);

        let err = GridTensor::<f32>::read_from(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            GridTensor::<f32>::read_from(&bad[..]),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}
