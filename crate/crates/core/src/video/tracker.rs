//! IoU instance tracking with constant-velocity extrapolation.

use image::RgbImage;

use crate::geometry::{BBox, Detection};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Minimum IoU for a detection to continue a track.
    pub iou_threshold: f32,
    /// Tracks unseen for more than this many frames are dropped.
    pub max_age: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            max_age: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub bbox: BBox<f32>,
    pub class_id: usize,
    pub confidence: f32,
    pub first_seen: usize,
    pub last_seen: usize,
    /// Observation before the latest one, used for the velocity estimate.
    previous: Option<(usize, BBox<f32>)>,
}

impl Track {
    /// Frames since the track was created.
    pub fn age(&self, frame: usize) -> usize {
        frame.saturating_sub(self.first_seen)
    }

    /// Per-frame corner velocity from the last two observations.
    pub fn velocity(&self) -> [f32; 4] {
        match self.previous {
            Some((f, p)) if self.last_seen > f => {
                let dt = (self.last_seen - f) as f32;
                let b = self.bbox;
                [
                    (b.x1 - p.x1) / dt,
                    (b.y1 - p.y1) / dt,
                    (b.x2 - p.x2) / dt,
                    (b.y2 - p.y2) / dt,
                ]
            }
            _ => [0.0; 4],
        }
    }

    /// Extrapolated box at `frame`, before clipping.
    pub fn predict(&self, frame: usize) -> BBox<f32> {
        let dt = frame as f32 - self.last_seen as f32;
        let v = self.velocity();
        let b = self.bbox;
        BBox::new(b.x1 + v[0] * dt, b.y1 + v[1] * dt, b.x2 + v[2] * dt, b.y2 + v[3] * dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedDetection {
    pub detection: Detection<f32>,
    pub track_id: u64,
}

/// Adjusts extrapolated boxes using pixel content.
pub trait BoxRefiner: Send {
    /// Sees every frame the model ran on, after association.
    fn observe(&mut self, frame: &RgbImage, tracks: &[Track]);

    fn refine(&mut self, frame: &RgbImage, track: &Track, predicted: BBox<f32>) -> BBox<f32>;
}

/// Searches integer pixel shifts of the predicted box for the best
/// normalized cross-correlation with the track's last observed content.
#[derive(Debug, Clone)]
pub struct NccRefiner {
    pub radius: i32,
    last: Option<RgbImage>,
}

impl NccRefiner {
    pub fn new(radius: i32) -> Self {
        Self { radius, last: None }
    }
}

fn luma(img: &RgbImage, x: i64, y: i64) -> Option<f32> {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
        return None;
    }
    let p = img.get_pixel(x as u32, y as u32);
    Some(0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
}

fn ncc(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len() as f32;
    let (ma, mb) = (a.iter().sum::<f32>() / n, b.iter().sum::<f32>() / n);
    let mut num = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        num / (va * vb).sqrt()
    }
}

impl BoxRefiner for NccRefiner {
    fn observe(&mut self, frame: &RgbImage, _tracks: &[Track]) {
        self.last = Some(frame.clone());
    }

    fn refine(&mut self, frame: &RgbImage, track: &Track, predicted: BBox<f32>) -> BBox<f32> {
        let Some(last) = &self.last else { return predicted };
        let (w, h) = (frame.width() as f32, frame.height() as f32);
        let px = |b: &BBox<f32>| {
            (
                (b.x1 * w).round() as i64,
                (b.y1 * h).round() as i64,
                (b.x2 * w).round() as i64,
                (b.y2 * h).round() as i64,
            )
        };
        let (tx1, ty1, tx2, ty2) = px(&track.bbox);
        let template: Vec<f32> = (ty1..ty2)
            .flat_map(|y| (tx1..tx2).map(move |x| (x, y)))
            .filter_map(|(x, y)| luma(last, x, y))
            .collect();
        if template.len() < 4 || template.len() as i64 != (tx2 - tx1) * (ty2 - ty1) {
            return predicted;
        }
        let (px1, py1, _, _) = px(&predicted);
        let mut best = (f32::NEG_INFINITY, 0i64, 0i64);
        for dy in -self.radius as i64..=self.radius as i64 {
            for dx in -self.radius as i64..=self.radius as i64 {
                let (ox, oy) = (px1 + dx, py1 + dy);
                let window: Option<Vec<f32>> = (0..ty2 - ty1)
                    .flat_map(|y| (0..tx2 - tx1).map(move |x| (x, y)))
                    .map(|(x, y)| luma(frame, ox + x, oy + y))
                    .collect();
                let Some(window) = window else { continue };
                let score = ncc(&template, &window);
                let closer = dx.abs() + dy.abs() < best.1.abs() + best.2.abs();
                if score > best.0 || (score == best.0 && closer) {
                    best = (score, dx, dy);
                }
            }
        }
        if best.0 == f32::NEG_INFINITY {
            return predicted;
        }
        let (sx, sy) = (best.1 as f32 / w, best.2 as f32 / h);
        BBox::new(
            predicted.x1 + sx,
            predicted.y1 + sy,
            predicted.x2 + sx,
            predicted.y2 + sy,
        )
    }
}

#[derive(Default)]
pub struct Tracker {
    pub config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_update: Option<usize>,
    refiner: Option<Box<dyn BoxRefiner>>,
}

impl std::fmt::Debug for Tracker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tracker")
            .field("config", &self.config)
            .field("tracks", &self.tracks)
            .field("next_id", &self.next_id)
            .field("refiner", &self.refiner.is_some())
            .finish()
    }
}

fn clipped(b: BBox<f32>) -> Option<BBox<f32>> {
    let c = b.clip_to_unit().ok()?;
    (c.width() > 0.0 && c.height() > 0.0).then_some(c)
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    pub fn with_refiner(mut self, refiner: Box<dyn BoxRefiner>) -> Self {
        self.refiner = Some(refiner);
        self
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Associates fresh detections with tracks. Pairs are taken greedily in
    /// order of descending IoU between a detection and the track's
    /// extrapolated box; unmatched detections open new tracks.
    pub fn update(
        &mut self,
        dets: &[Detection<f32>],
        frame: usize,
        pixels: Option<&RgbImage>,
    ) -> Vec<TrackedDetection> {
        let max_age = self.config.max_age;
        self.tracks.retain(|t| frame.saturating_sub(t.last_seen) <= max_age);

        let mut pairs: Vec<(f32, usize, usize)> = Vec::new();
        for (ti, t) in self.tracks.iter().enumerate() {
            let predicted = t.predict(frame);
            for (di, d) in dets.iter().enumerate() {
                let iou = predicted.iou(&d.bbox);
                if iou >= self.config.iou_threshold && iou > 0.0 {
                    pairs.push((iou, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut track_used = vec![false; self.tracks.len()];
        let mut assigned: Vec<Option<usize>> = vec![None; dets.len()];
        for (_, ti, di) in pairs {
            if !track_used[ti] && assigned[di].is_none() {
                track_used[ti] = true;
                assigned[di] = Some(ti);
            }
        }

        let mut out = Vec::with_capacity(dets.len());
        for (d, slot) in dets.iter().zip(assigned) {
            let track_id = match slot {
                Some(ti) => {
                    let t = &mut self.tracks[ti];
                    t.previous = Some((t.last_seen, t.bbox));
                    t.bbox = d.bbox;
                    t.class_id = d.class_id;
                    t.confidence = d.confidence;
                    t.last_seen = frame;
                    t.id
                }
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.tracks.push(Track {
                        id,
                        bbox: d.bbox,
                        class_id: d.class_id,
                        confidence: d.confidence,
                        first_seen: frame,
                        last_seen: frame,
                        previous: None,
                    });
                    id
                }
            };
            out.push(TrackedDetection {
                detection: *d,
                track_id,
            });
        }
        self.last_update = Some(frame);
        if let (Some(r), Some(px)) = (self.refiner.as_mut(), pixels) {
            r.observe(px, &self.tracks);
        }
        out
    }

    /// Boxes for a frame the model skipped: every track seen at the last
    /// update, moved along its velocity. Boxes pushed out of the frame are
    /// omitted.
    pub fn predict(&mut self, frame: usize, pixels: Option<&RgbImage>) -> Vec<TrackedDetection> {
        let Some(last) = self.last_update else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for t in self.tracks.iter().filter(|t| t.last_seen == last) {
            let mut b = t.predict(frame);
            if let (Some(r), Some(px)) = (self.refiner.as_mut(), pixels) {
                b = r.refine(px, t, b);
            }
            if let Some(b) = clipped(b) {
                out.push(TrackedDetection {
                    detection: Detection::new(b, t.confidence, t.class_id),
                    track_id: t.id,
                });
            }
        }
        out
    }
}
