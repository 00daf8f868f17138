//! Seeded image augmentation: rotation, translation, scaling, flips, hue,
//! brightness, saturation, inversion and Gaussian blur.
//!
//! Boxes are `(BBox, class_id)` pairs in normalized coordinates. Random
//! parameters come from a ChaCha stream keyed by `(seed, index)`, so the
//! result for sample `index` does not depend on which other samples were
//! augmented before it.

use std::fmt::Write as _;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::SliceSample;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::train_config::{format_list, parse_list, parse_value, ConfigWarning, Section};

pub type Boxes = Vec<(BBox<f64>, usize)>;

/// Transform switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transforms {
    pub rotation: bool,
    pub translation: bool,
    pub scaling: bool,
    pub flip: bool,
    pub hue: bool,
    pub brightness: bool,
    pub saturation: bool,
    pub invert: bool,
    pub blur: bool,
}

const TRANSFORM_NAMES: [&str; 9] = [
    "rotation",
    "translation",
    "scaling",
    "flip",
    "hue",
    "brightness",
    "saturation",
    "invert",
    "blur",
];

impl Transforms {
    pub const ALL: Self = Self {
        rotation: true,
        translation: true,
        scaling: true,
        flip: true,
        hue: true,
        brightness: true,
        saturation: true,
        invert: true,
        blur: true,
    };

    pub const NONE: Self = Self {
        rotation: false,
        translation: false,
        scaling: false,
        flip: false,
        hue: false,
        brightness: false,
        saturation: false,
        invert: false,
        blur: false,
    };

    fn flags(&self) -> [bool; 9] {
        [
            self.rotation,
            self.translation,
            self.scaling,
            self.flip,
            self.hue,
            self.brightness,
            self.saturation,
            self.invert,
            self.blur,
        ]
    }

    fn flag_mut(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "rotation" => &mut self.rotation,
            "translation" => &mut self.translation,
            "scaling" => &mut self.scaling,
            "flip" => &mut self.flip,
            "hue" => &mut self.hue,
            "brightness" => &mut self.brightness,
            "saturation" => &mut self.saturation,
            "invert" => &mut self.invert,
            "blur" => &mut self.blur,
            _ => return None,
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        TRANSFORM_NAMES
            .iter()
            .zip(self.flags())
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPlan {
    pub seed: u64,
    pub enabled: Transforms,
    /// Rotation drawn from `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    /// Shift drawn per axis from `±max_translation` (fraction of the side).
    pub max_translation: f64,
    pub scale: (f64, f64),
    pub max_hue_deg: f64,
    pub brightness: (f64, f64),
    pub saturation: (f64, f64),
    pub blur_sigma: (f64, f64),
    pub flip_probability: f64,
    pub invert_probability: f64,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            enabled: Transforms::ALL,
            max_rotation_deg: 15.0,
            max_translation: 0.1,
            scale: (0.9, 1.1),
            max_hue_deg: 18.0,
            brightness: (0.7, 1.5),
            saturation: (0.7, 1.5),
            blur_sigma: (0.0, 2.0),
            flip_probability: 0.5,
            invert_probability: 0.05,
        }
    }
}

/// Concrete parameters for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub translation: (f64, f64),
    pub scale: f64,
    pub flip: bool,
    pub hue_deg: f64,
    pub brightness: f64,
    pub saturation: f64,
    pub invert: bool,
    pub blur_sigma: f64,
}

impl AugmentParams {
    pub const NEUTRAL: Self = Self {
        rotation_deg: 0.0,
        translation: (0.0, 0.0),
        scale: 1.0,
        flip: false,
        hue_deg: 0.0,
        brightness: 1.0,
        saturation: 1.0,
        invert: false,
        blur_sigma: 0.0,
    };
}

fn range_ok(r: (f64, f64), min: f64) -> bool {
    r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 && r.0 >= min
}

fn draw_in<R: Rng>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        // still consume a draw so later parameters keep their position
        let _: f64 = rng.random();
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

impl AugmentPlan {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let ok = nonneg(self.max_rotation_deg)
            && nonneg(self.max_translation)
            && nonneg(self.max_hue_deg)
            && range_ok(self.scale, f64::MIN_POSITIVE)
            && range_ok(self.brightness, f64::MIN_POSITIVE)
            && range_ok(self.saturation, f64::MIN_POSITIVE)
            && range_ok(self.blur_sigma, 0.0)
            && prob(self.flip_probability)
            && prob(self.invert_probability);
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid augmentation plan {self:?}")))
        }
    }

    /// Parameters for sample `index`. All nine draws happen in a fixed
    /// order whether or not a transform is enabled.
    pub fn draw(&self, index: u64) -> AugmentParams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let sym = |rng: &mut ChaCha8Rng, m: f64| draw_in(rng, (-m, m));
        let rotation = sym(&mut rng, self.max_rotation_deg);
        let tx = sym(&mut rng, self.max_translation);
        let ty = sym(&mut rng, self.max_translation);
        let scale = draw_in(&mut rng, self.scale);
        let flip = rng.random::<f64>() < self.flip_probability;
        let hue = sym(&mut rng, self.max_hue_deg);
        let brightness = draw_in(&mut rng, self.brightness);
        let saturation = draw_in(&mut rng, self.saturation);
        let invert = rng.random::<f64>() < self.invert_probability;
        let sigma = draw_in(&mut rng, self.blur_sigma);

        let e = self.enabled;
        let n = AugmentParams::NEUTRAL;
        AugmentParams {
            rotation_deg: if e.rotation { rotation } else { n.rotation_deg },
            translation: if e.translation { (tx, ty) } else { n.translation },
            scale: if e.scaling { scale } else { n.scale },
            flip: e.flip && flip,
            hue_deg: if e.hue { hue } else { n.hue_deg },
            brightness: if e.brightness { brightness } else { n.brightness },
            saturation: if e.saturation { saturation } else { n.saturation },
            invert: e.invert && invert,
            blur_sigma: if e.blur { sigma } else { n.blur_sigma },
        }
    }

    /// `[augment]` section text.
    pub fn to_section(&self) -> String {
        let mut s = String::from("[augment]\n");
        let pair = |r: (f64, f64)| format_list(&[r.0, r.1]);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "transforms={}", self.enabled.names().join(","));
        let _ = writeln!(s, "rotation={}", self.max_rotation_deg);
        let _ = writeln!(s, "translation={}", self.max_translation);
        let _ = writeln!(s, "scale={}", pair(self.scale));
        let _ = writeln!(s, "hue={}", self.max_hue_deg);
        let _ = writeln!(s, "brightness={}", pair(self.brightness));
        let _ = writeln!(s, "saturation={}", pair(self.saturation));
        let _ = writeln!(s, "blur={}", pair(self.blur_sigma));
        let _ = writeln!(s, "flip={}", self.flip_probability);
        let _ = writeln!(s, "invert={}", self.invert_probability);
        s
    }

    pub fn from_section(section: &Section) -> Result<(Self, Vec<ConfigWarning>)> {
        let mut plan = Self::default();
        let mut warnings = Vec::new();
        for e in &section.entries {
            let pair = || -> Result<(f64, f64)> {
                match parse_list::<f64>(e)?[..] {
                    [a, b] => Ok((a, b)),
                    [a] => Ok((a, a)),
                    _ => Err(Error::Parse {
                        line: e.line,
                        message: format!("{} takes one or two numbers", e.key),
                    }),
                }
            };
            match e.key.as_str() {
                "seed" => plan.seed = parse_value(e)?,
                "transforms" => {
                    plan.enabled = Transforms::NONE;
                    for name in parse_list::<String>(e)? {
                        *plan.enabled.flag_mut(&name).ok_or_else(|| Error::Parse {
                            line: e.line,
                            message: format!("unknown transform {name:?}"),
                        })? = true;
                    }
                }
                "rotation" => plan.max_rotation_deg = parse_value(e)?,
                "translation" => plan.max_translation = parse_value(e)?,
                "scale" => plan.scale = pair()?,
                "hue" => plan.max_hue_deg = parse_value(e)?,
                "brightness" => plan.brightness = pair()?,
                "saturation" => plan.saturation = pair()?,
                "blur" => plan.blur_sigma = pair()?,
                "flip" => plan.flip_probability = parse_value(e)?,
                "invert" => plan.invert_probability = parse_value(e)?,
                _ => warnings.push(ConfigWarning {
                    line: e.line,
                    section: section.name.clone(),
                    key: e.key.clone(),
                }),
            }
        }
        plan.validate()?;
        Ok((plan, warnings))
    }
}

fn hflip(img: &RgbImage) -> RgbImage {
    let w = img.width();
    RgbImage::from_fn(w, img.height(), |x, y| *img.get_pixel(w - 1 - x, y))
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    // (x, y) is in pixel-center coordinates
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let (ax, ay) = (fx - x0, fy - y0);
    let px = |xi: i64, yi: i64| img.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let v = (1.0 - ax) * (1.0 - ay) * px(x0, y0)[c] as f64
            + ax * (1.0 - ay) * px(x0 + 1, y0)[c] as f64
            + (1.0 - ax) * ay * px(x0, y0 + 1)[c] as f64
            + ax * ay * px(x0 + 1, y0 + 1)[c] as f64;
        *o = v.round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Forward map in pixel coordinates: optional mirror, then rotation and
/// scaling about the image center, then translation.
struct AffineMap {
    w: f64,
    h: f64,
    cos: f64,
    sin: f64,
    scale: f64,
    shift: (f64, f64),
    flip: bool,
}

impl AffineMap {
    fn new(w: u32, h: u32, rotation_deg: f64, translation: (f64, f64), scale: f64, flip: bool) -> Self {
        let (sin, cos) = rotation_deg.to_radians().sin_cos();
        Self {
            w: w as f64,
            h: h as f64,
            cos,
            sin,
            scale,
            shift: (translation.0 * w as f64, translation.1 * h as f64),
            flip,
        }
    }

    fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        let x = if self.flip { self.w - x } else { x };
        let (dx, dy) = (x - self.w / 2.0, y - self.h / 2.0);
        (
            self.w / 2.0 + self.scale * (self.cos * dx - self.sin * dy) + self.shift.0,
            self.h / 2.0 + self.scale * (self.sin * dx + self.cos * dy) + self.shift.1,
        )
    }

    fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (
            (x - self.w / 2.0 - self.shift.0) / self.scale,
            (y - self.h / 2.0 - self.shift.1) / self.scale,
        );
        let sx = self.w / 2.0 + self.cos * dx + self.sin * dy;
        let sy = self.h / 2.0 - self.sin * dx + self.cos * dy;
        (if self.flip { self.w - sx } else { sx }, sy)
    }
}

fn keep_box(b: BBox<f64>) -> Option<BBox<f64>> {
    let c = b.clip_to_unit().ok()?;
    (c.width() > 0.0 && c.height() > 0.0).then_some(c)
}

/// Geometric augmentation. Pixels that map from outside the source image
/// are black. Boxes become the hull of their transformed corners, clipped;
/// boxes left with no area are dropped.
pub fn affine(
    img: &RgbImage,
    boxes: &[(BBox<f64>, usize)],
    rotation_deg: f64,
    translation: (f64, f64),
    scale: f64,
    flip: bool,
) -> (RgbImage, Boxes) {
    let geometric = rotation_deg != 0.0 || translation != (0.0, 0.0) || scale != 1.0;
    if !geometric {
        if !flip {
            return (
                img.clone(),
                boxes.iter().filter_map(|&(b, k)| Some((keep_box(b)?, k))).collect(),
            );
        }
        let flipped = boxes
            .iter()
            .filter_map(|&(b, k)| Some((keep_box(BBox::new(1.0 - b.x2, b.y1, 1.0 - b.x1, b.y2))?, k)))
            .collect();
        return (hflip(img), flipped);
    }

    let (w, h) = img.dimensions();
    let map = AffineMap::new(w, h, rotation_deg, translation, scale, flip);
    let out = RgbImage::from_fn(w, h, |x, y| {
        let (sx, sy) = map.inverse(x as f64 + 0.5, y as f64 + 0.5);
        if sx < 0.0 || sy < 0.0 || sx > map.w || sy > map.h {
            Rgb([0, 0, 0])
        } else {
            bilinear(img, sx, sy)
        }
    });

    let moved = boxes
        .iter()
        .filter_map(|&(b, k)| {
            let corners = [(b.x1, b.y1), (b.x2, b.y1), (b.x1, b.y2), (b.x2, b.y2)]
                .map(|(x, y)| map.forward(x * map.w, y * map.h))
                .map(|(x, y)| (x / map.w, y / map.h));
            let xs = corners.map(|c| c.0);
            let ys = corners.map(|c| c.1);
            let fold = |v: [f64; 4], f: fn(f64, f64) -> f64| v.into_iter().reduce(f).unwrap_or(0.0);
            let hull = BBox::new(
                fold(xs, f64::min),
                fold(ys, f64::min),
                fold(xs, f64::max),
                fold(ys, f64::max),
            );
            let inside = hull.x2 > 0.0 && hull.y2 > 0.0 && hull.x1 < 1.0 && hull.y1 < 1.0;
            if inside {
                Some((keep_box(hull)?, k))
            } else {
                None
            }
        })
        .collect();
    (out, moved)
}

fn rgb_to_hsv(p: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = p.map(|v| v as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0).rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r, g, b].map(|u| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Photometric augmentation: hue rotation and saturation scaling in HSV,
/// brightness scaling with clamping, then optional inversion `v → 255 − v`.
pub fn color(img: &RgbImage, hue_deg: f64, brightness: f64, saturation: f64, invert: bool) -> RgbImage {
    let mut out = img.clone();
    let hsv = hue_deg != 0.0 || saturation != 1.0;
    for p in out.pixels_mut() {
        if hsv {
            let (h, s, v) = rgb_to_hsv(p.0);
            p.0 = hsv_to_rgb(h + hue_deg, (s * saturation).min(1.0), v);
        }
        if brightness != 1.0 {
            p.0 = p.0.map(|c| (c as f64 * brightness).round().clamp(0.0, 255.0) as u8);
        }
        if invert {
            p.0 = p.0.map(|c| 255 - c);
        }
    }
    out
}

/// Normalized kernel of radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Mirror index into `0..n` with the edge sample repeated (`-1 → 0`).
fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

pub fn gaussian_blur(img: &RgbImage, sigma: f64) -> RgbImage {
    if sigma <= 0.0 || img.width() == 0 || img.height() == 0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src = img.as_raw();

    let mut tmp = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                tmp[(y * w + x) * 3 + c] = k
                    .iter()
                    .enumerate()
                    .map(|(j, &kv)| kv * src[(y * w + reflect(x as i64 + j as i64 - r, w as i64)) * 3 + c] as f64)
                    .sum();
            }
        }
    }
    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(j, &kv)| kv * tmp[(reflect(y as i64 + j as i64 - r, h as i64) * w + x) * 3 + c])
                    .sum();
                out[(y * w + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage::from_raw(w as u32, h as u32, out).expect("buffer sized to image")
}

/// Applies explicit parameters: affine, then color, then blur.
pub fn apply_params(img: &RgbImage, boxes: &[(BBox<f64>, usize)], p: &AugmentParams) -> (RgbImage, Boxes) {
    let (img, boxes) = affine(img, boxes, p.rotation_deg, p.translation, p.scale, p.flip);
    let img = color(&img, p.hue_deg, p.brightness, p.saturation, p.invert);
    (gaussian_blur(&img, p.blur_sigma), boxes)
}

/// Augments sample `index` of a stream under `plan`.
pub fn apply_plan(img: &RgbImage, boxes: &[(BBox<f64>, usize)], plan: &AugmentPlan, index: u64) -> (RgbImage, Boxes) {
    apply_params(img, boxes, &plan.draw(index))
}

/// Augments a slice's pixels; its label and source box are unchanged.
pub fn apply_plan_to_slice(slice: &SliceSample, plan: &AugmentPlan, index: u64) -> SliceSample {
    let (pixels, _) = apply_plan(&slice.pixels, &[], plan, index);
    SliceSample {
        pixels,
        ..slice.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn noise(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
    }

    fn boxes() -> Boxes {
        vec![(BBox::new(0.1, 0.2, 0.4, 0.6), 0), (BBox::new(0.5, 0.5, 0.9, 0.8), 2)]
    }

    #[test]
    fn neutral_affine_is_identity() {
        let img = noise(17, 11, 1);
        let (out, b) = affine(&img, &boxes(), 0.0, (0.0, 0.0), 1.0, false);
        assert_eq!(out, img);
        assert_eq!(b, boxes());
    }

    #[test]
    fn flip_mirrors_boxes_and_is_an_involution() {
        let img = noise(17, 11, 2);
        let (once, b) = affine(&img, &boxes(), 0.0, (0.0, 0.0), 1.0, true);
        assert_eq!(once.get_pixel(0, 3), img.get_pixel(16, 3));
        assert_eq!(b[0].0, BBox::new(1.0 - 0.4, 0.2, 1.0 - 0.1, 0.6));
        let (twice, _) = affine(&once, &b, 0.0, (0.0, 0.0), 1.0, true);
        assert_eq!(twice, img);
    }

    #[test]
    fn translation_moves_boxes_and_drops_escapees() {
        let img = noise(20, 20, 3);
        let (_, b) = affine(&img, &boxes(), 0.0, (0.3, 0.0), 1.0, false);
        assert_eq!(b.len(), 2);
        assert!((b[0].0.x1 - 0.4).abs() < 1e-12);
        assert!((b[1].0.x2 - 1.0).abs() < 1e-12);
        let (_, b) = affine(&img, &boxes(), 0.0, (-0.6, 0.0), 1.0, false);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].1, 2);
    }

    #[test]
    fn rotation_by_90_on_square_image_moves_pixels() {
        let img = noise(8, 8, 4);
        let (out, b) = affine(
            &img,
            &[(BBox::new(0.0, 0.0, 0.5, 0.25), 1)],
            90.0,
            (0.0, 0.0),
            1.0,
            false,
        );
        // output (x, y) samples source (y, 7 − x)
        assert_eq!(out.get_pixel(2, 5), img.get_pixel(5, 5));
        assert_eq!(out.get_pixel(0, 0), img.get_pixel(0, 7));
        let r = b[0].0;
        assert!((r.x1 - 0.75).abs() < 1e-12 && (r.x2 - 1.0).abs() < 1e-12);
        assert!(r.y1.abs() < 1e-12 && (r.y2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn color_neutral_invert_and_brightness() {
        let img = noise(9, 7, 5);
        assert_eq!(color(&img, 0.0, 1.0, 1.0, false), img);
        let inv = color(&img, 0.0, 1.0, 1.0, true);
        assert_eq!(inv.get_pixel(0, 0).0, img.get_pixel(0, 0).0.map(|v| 255 - v));
        assert_eq!(color(&inv, 0.0, 1.0, 1.0, true), img);
        let gray = RgbImage::from_pixel(4, 4, Rgb([128, 128, 128]));
        assert!(color(&gray, 0.0, 2.0, 1.0, false)
            .pixels()
            .all(|p| p.0 == [255, 255, 255]));
    }

    #[test]
    fn hue_rotation_cycles_primaries() {
        let red = RgbImage::from_pixel(1, 1, Rgb([255, 0, 0]));
        assert_eq!(color(&red, 120.0, 1.0, 1.0, false).get_pixel(0, 0).0, [0, 255, 0]);
        assert_eq!(color(&red, -120.0, 1.0, 1.0, false).get_pixel(0, 0).0, [0, 0, 255]);
        assert_eq!(color(&red, 0.0, 1.0, 0.0, false).get_pixel(0, 0).0, [255, 255, 255]);
    }

    #[test]
    fn hsv_round_trip_is_exact_on_bytes() {
        let img = noise(32, 32, 6);
        for p in img.pixels() {
            let (h, s, v) = rgb_to_hsv(p.0);
            assert_eq!(hsv_to_rgb(h, s, v), p.0);
        }
    }

    #[test]
    fn blur_identity_and_constant() {
        let img = noise(13, 9, 7);
        assert_eq!(gaussian_blur(&img, 0.0), img);
        let flat = RgbImage::from_pixel(10, 10, Rgb([37, 200, 91]));
        assert_eq!(gaussian_blur(&flat, 1.7), flat);
        let tiny = noise(1, 2, 8);
        assert_eq!(gaussian_blur(&tiny, 3.0).dimensions(), (1, 2));
    }

    #[test]
    fn blur_preserves_mean() {
        for seed in 0..5 {
            let img = noise(40, 30, seed);
            let mean = |i: &RgbImage| i.as_raw().iter().map(|&v| v as f64).sum::<f64>() / i.as_raw().len() as f64;
            let out = gaussian_blur(&img, 0.5 + seed as f64 * 0.4);
            assert!((mean(&out) - mean(&img)).abs() < 0.5);
        }
    }

    #[test]
    fn plan_is_deterministic_per_index() {
        let plan = AugmentPlan {
            seed: 42,
            ..Default::default()
        };
        let img = noise(24, 16, 9);
        assert_eq!(
            apply_plan(&img, &boxes(), &plan, 3),
            apply_plan(&img, &boxes(), &plan, 3)
        );
        assert_ne!(plan.draw(3), plan.draw(4));
        let off = AugmentPlan {
            enabled: Transforms::NONE,
            ..plan
        };
        assert_eq!(apply_plan(&img, &boxes(), &off, 3), (img, boxes()));
    }

    #[test]
    fn draws_across_indices_are_uncorrelated() {
        let plan = AugmentPlan::default();
        let r: Vec<f64> = (0..1001).map(|i| plan.draw(i).rotation_deg).collect();
        let (a, b) = (&r[..1000], &r[1..]);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(a), mean(b));
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        assert!((cov / (va * vb).sqrt()).abs() < 0.1);
        assert!(r.iter().all(|v| v.abs() <= 15.0));
    }

    #[test]
    fn plan_validation() {
        assert!(AugmentPlan::default().validate().is_ok());
        let bad = AugmentPlan {
            flip_probability: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentPlan {
            scale: (1.2, 0.8),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn plan_section_round_trip() {
        let plan = AugmentPlan {
            seed: 7,
            enabled: Transforms {
                invert: false,
                blur: false,
                ..Transforms::ALL
            },
            scale: (0.8, 1.25),
            ..Default::default()
        };
        let sections = crate::train_config::parse_sections(&plan.to_section()).unwrap();
        let (back, warnings) = AugmentPlan::from_section(&sections[0]).unwrap();
        assert_eq!(back, plan);
        assert!(warnings.is_empty());
    }

    proptest! {
        #[test]
        fn output_boxes_stay_valid(seed in 0u64..1000, index in 0u64..1000) {
            let plan = AugmentPlan { seed, ..Default::default() };
            let (_, out) = apply_plan(&noise(12, 10, seed), &boxes(), &plan, index);
            for (b, _) in out {
                prop_assert!(b.is_valid());
                prop_assert!(b.width() > 0.0 && b.height() > 0.0);
            }
        }

        #[test]
        fn kernel_is_normalized(sigma in 0.0f64..6.0) {
            let k = gaussian_kernel(sigma);
            prop_assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(k.len() % 2, 1);
        }
    }
}
