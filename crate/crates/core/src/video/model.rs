//! Detector interface and the built-in detectors.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};
use crate::yolo_head::{decode_grid_with, AnchorSet, DecodeConfig, GridTensor};

/// A per-frame detector with a fixed label list.
pub trait DetectorModel: Send {
    fn labels(&self) -> &[String];

    /// Detections in normalized corner form.
    fn detect(&mut self, frame: &RgbImage, index: usize) -> Result<Vec<Detection<f32>>>;
}

/// Replays raw head outputs stored as `<dir>/<index:06>.mgrd`.
#[derive(Debug, Clone)]
pub struct PlaybackModel {
    pub dir: PathBuf,
    pub anchors: AnchorSet<f32>,
    pub decode: DecodeConfig<f32>,
    labels: Vec<String>,
}

impl PlaybackModel {
    pub fn new(
        dir: impl Into<PathBuf>,
        anchors: AnchorSet<f32>,
        decode: DecodeConfig<f32>,
        labels: Vec<String>,
    ) -> Self {
        Self {
            dir: dir.into(),
            anchors,
            decode,
            labels,
        }
    }

    pub fn tensor_path(&self, index: usize) -> PathBuf {
        self.dir.join(format!("{index:06}.mgrd"))
    }
}

impl DetectorModel for PlaybackModel {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn detect(&mut self, _frame: &RgbImage, index: usize) -> Result<Vec<Detection<f32>>> {
        let path = self.tensor_path(index);
        let file = File::open(&path).map_err(|e| Error::Model {
            frame: index,
            message: format!("{}: {e}", path.display()),
        })?;
        let grid = GridTensor::<f32>::read_from(BufReader::new(file))?;
        if grid.num_classes != self.labels.len() {
            return Err(Error::Model {
                frame: index,
                message: format!(
                    "tensor has {} classes, model declares {}",
                    grid.num_classes,
                    self.labels.len()
                ),
            });
        }
        decode_grid_with(&grid, &self.anchors, &self.decode)
    }
}

/// Solid marker colors the synthetic detector looks for, by class.
pub const MARKERS: [[u8; 3]; 3] = [[40, 180, 60], [200, 40, 40], [230, 160, 20]];

/// Minimum component size, in pixels, for the synthetic detector.
const MIN_COMPONENT: usize = 4;

/// Finds 4-connected regions of exact marker colors. Each region yields
/// its bounding box with confidence equal to the fraction of the box it
/// fills.
#[derive(Debug, Clone)]
pub struct SyntheticDetector {
    labels: Vec<String>,
}

impl SyntheticDetector {
    pub fn new(labels: Vec<String>) -> Self {
        Self { labels }
    }
}

impl DetectorModel for SyntheticDetector {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn detect(&mut self, frame: &RgbImage, _index: usize) -> Result<Vec<Detection<f32>>> {
        let (w, h) = (frame.width() as usize, frame.height() as usize);
        let class_at = |i: usize| {
            let p = frame.as_raw();
            let px = [p[3 * i], p[3 * i + 1], p[3 * i + 2]];
            MARKERS.iter().take(self.labels.len()).position(|m| *m == px)
        };
        let mut seen = vec![false; w * h];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if seen[start] {
                continue;
            }
            let Some(k) = class_at(start) else { continue };
            seen[start] = true;
            stack.push(start);
            let (mut x1, mut y1, mut x2, mut y2) = (w, h, 0, 0);
            let mut count = 0usize;
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                count += 1;
                (x1, y1, x2, y2) = (x1.min(x), y1.min(y), x2.max(x), y2.max(y));
                let mut visit = |j: usize| {
                    if !seen[j] && class_at(j) == Some(k) {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            if count < MIN_COMPONENT {
                continue;
            }
            let area = (x2 - x1 + 1) * (y2 - y1 + 1);
            let b = BBox::new(
                x1 as f32 / w as f32,
                y1 as f32 / h as f32,
                (x2 + 1) as f32 / w as f32,
                (y2 + 1) as f32 / h as f32,
            );
            out.push(Detection::new(b, count as f32 / area as f32, k));
        }
        Ok(out)
    }
}

/// Returns no detections after a fixed busy-wait; a benchmarking stub.
#[derive(Debug, Clone)]
pub struct FixedCostModel {
    pub cost: Duration,
    labels: Vec<String>,
}

impl FixedCostModel {
    pub fn new(cost: Duration, labels: Vec<String>) -> Self {
        Self { cost, labels }
    }
}

impl DetectorModel for FixedCostModel {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn detect(&mut self, _frame: &RgbImage, _index: usize) -> Result<Vec<Detection<f32>>> {
        let start = Instant::now();
        while start.elapsed() < self.cost {
            std::hint::spin_loop();
        }
        Ok(Vec::new())
    }
}

/// A marker rectangle moving at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_id: usize,
    /// Top-left corner at frame 0, in pixels.
    pub x: f64,
    pub y: f64,
    pub width: u32,
    pub height: u32,
    /// Pixels per frame.
    pub dx: f64,
    pub dy: f64,
}

/// Procedural test video: gray noise with marker rectangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub frame_count: u64,
    pub seed: u64,
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    /// `count` objects of cycling classes at seeded positions and speeds.
    pub fn random(width: u32, height: u32, frame_count: u64, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let objects = (0..count)
            .map(|i| {
                let ow = rng.random_range(width / 10..=width / 4).max(2);
                let oh = rng.random_range(height / 10..=height / 4).max(2);
                SceneObject {
                    class_id: i % MARKERS.len(),
                    x: rng.random_range(0.0..(width - ow) as f64),
                    y: rng.random_range(0.0..(height - oh) as f64),
                    width: ow,
                    height: oh,
                    dx: rng.random_range(-1.5..1.5),
                    dy: rng.random_range(-1.0..1.0),
                }
            })
            .collect();
        Self {
            width,
            height,
            frame_count,
            seed,
            objects,
        }
    }

    pub fn render(&self, index: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let mut img = RgbImage::from_fn(self.width, self.height, |_, _| {
            let v: u8 = rng.random_range(90..=130);
            Rgb([v, v, v])
        });
        for o in &self.objects {
            let x0 = (o.x + o.dx * index as f64).round() as i64;
            let y0 = (o.y + o.dy * index as f64).round() as i64;
            let color = Rgb(MARKERS[o.class_id % MARKERS.len()]);
            for y in y0.max(0)..(y0 + o.height as i64).min(self.height as i64) {
                for x in x0.max(0)..(x0 + o.width as i64).min(self.width as i64) {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
        img
    }

    pub fn frames(&self) -> impl Iterator<Item = RgbImage> + '_ {
        (0..self.frame_count).map(|i| self.render(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        ["with_mask", "without_mask", "mask_weared_incorrect"]
            .map(String::from)
            .to_vec()
    }

    #[test]
    fn synthetic_detector_finds_rectangles() {
        let scene = SceneSpec {
            width: 64,
            height: 48,
            frame_count: 1,
            seed: 3,
            objects: vec![
                SceneObject {
                    class_id: 0,
                    x: 4.0,
                    y: 6.0,
                    width: 10,
                    height: 8,
                    dx: 0.0,
                    dy: 0.0,
                },
                SceneObject {
                    class_id: 2,
                    x: 40.0,
                    y: 20.0,
                    width: 16,
                    height: 12,
                    dx: 0.0,
                    dy: 0.0,
                },
            ],
        };
        let mut m = SyntheticDetector::new(labels());
        let dets = m.detect(&scene.render(0), 0).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].class_id, 0);
        assert_eq!(
            dets[0].bbox,
            BBox::new(4.0 / 64.0, 6.0 / 48.0, 14.0 / 64.0, 14.0 / 48.0)
        );
        assert_eq!(dets[0].confidence, 1.0);
        assert_eq!(dets[1].class_id, 2);
    }

    #[test]
    fn scenes_are_deterministic() {
        let s = SceneSpec::random(80, 60, 5, 3, 11);
        assert_eq!(s.render(4), s.render(4));
        assert_ne!(s.render(3), s.render(4));
    }

    #[test]
    fn playback_decodes_tensor_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = GridTensor::<f32>::zeros(2, 1, 3);
        for v in g.values.iter_mut() {
            *v = -8.0;
        }
        let s = g.slot_mut(1, 0, 0);
        s.copy_from_slice(&[0.0, 0.0, 0.0, 0.0, 6.0, 0.0, 5.0, 0.0]);
        g.write_to(File::create(dir.path().join("000002.mgrd")).unwrap())
            .unwrap();
        let anchors = AnchorSet::new(vec![(0.25, 0.25)]).unwrap();
        let mut m = PlaybackModel::new(dir.path(), anchors, DecodeConfig::default(), labels());
        let dets = m.detect(&RgbImage::new(1, 1), 2).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].class_id, 1);
        assert!(matches!(
            m.detect(&RgbImage::new(1, 1), 3),
            Err(Error::Model { frame: 3, .. })
        ));
    }
}
