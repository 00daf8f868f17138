use image::RgbImage;

use crate::dataset::SliceSample;
use crate::error::Result;

/// Deterministic map from an image slice to a feature vector.
pub trait Embedder {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed(&self, img: &RgbImage) -> Vec<f64>;

    /// Optional adaptation to a task's support slices. The default does
    /// nothing.
    fn finetune(&mut self, _supports: &[SliceSample]) -> Result<()> {
        Ok(())
    }
}

const HIST_BINS: usize = 16;
const POOL: usize = 8;

/// Hand-crafted features: per-channel color histograms, a pooled grayscale
/// thumbnail and pooled gradient magnitudes, L2-normalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BaselineEmbedder;

impl BaselineEmbedder {
    pub const DIM: usize = 3 * HIST_BINS + 2 * POOL * POOL;
}

fn gray(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
        .collect()
}

/// Average of `values` (w×h) over an 8×8 grid of cells. Cells of images
/// smaller than the grid reuse the nearest pixel.
fn pool(values: &[f64], w: usize, h: usize) -> [f64; POOL * POOL] {
    let mut out = [0.0; POOL * POOL];
    for gy in 0..POOL {
        let y0 = gy * h / POOL;
        let y1 = ((gy + 1) * h / POOL).max(y0 + 1).min(h);
        for gx in 0..POOL {
            let x0 = gx * w / POOL;
            let x1 = ((gx + 1) * w / POOL).max(x0 + 1).min(w);
            let (y0, x0) = (y0.min(h - 1), x0.min(w - 1));
            let mut s = 0.0;
            let mut n = 0usize;
            for y in y0..y1.max(y0 + 1) {
                for x in x0..x1.max(x0 + 1) {
                    s += values[y * w + x];
                    n += 1;
                }
            }
            out[gy * POOL + gx] = s / n as f64;
        }
    }
    out
}

impl Embedder for BaselineEmbedder {
    fn name(&self) -> &str {
        "baseline"
    }

    fn dim(&self) -> usize {
        Self::DIM
    }

    fn embed(&self, img: &RgbImage) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::DIM);
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w == 0 || h == 0 {
            return vec![0.0; Self::DIM];
        }
        let n = (w * h) as f64;

        let mut hist = [[0u32; HIST_BINS]; 3];
        for p in img.pixels() {
            for c in 0..3 {
                hist[c][p[c] as usize * HIST_BINS / 256] += 1;
            }
        }
        v.extend(hist.iter().flatten().map(|&c| c as f64 / n));

        let g = gray(img);
        v.extend(pool(&g, w, h));

        let at = |x: usize, y: usize| g[y.min(h - 1) * w + x.min(w - 1)];
        let grad: Vec<f64> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| {
                let dx = at(x + 1, y) - at(x.saturating_sub(1), y);
                let dy = at(x, y + 1) - at(x, y.saturating_sub(1));
                dx.hypot(dy)
            })
            .collect();
        v.extend(pool(&grad, w, h));

        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}
