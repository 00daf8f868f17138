//! Box and label rendering onto frames.

use image::{Rgb, RgbImage};

use crate::geometry::Detection;

/// Box colors by class id: green, red, amber.
pub const PALETTE: [[u8; 3]; 3] = [[0, 255, 0], [255, 0, 0], [255, 191, 0]];

pub const LINE_WIDTH: i64 = 2;
pub const GLYPH_WIDTH: i64 = 5;
pub const GLYPH_HEIGHT: i64 = 7;
const TAG_PAD: i64 = 1;
const TEXT_COLOR: [u8; 3] = [0, 0, 0];

pub fn class_color(class_id: usize) -> [u8; 3] {
    PALETTE[class_id % PALETTE.len()]
}

/// 5×7 glyph rows, most significant of the low five bits leftmost.
/// Lowercase letters use the uppercase glyphs; unknown characters draw `?`.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        ' ' => [0x00; 7],
        _ => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04],
    }
}

struct Canvas<'a>(&'a mut RgbImage);

impl Canvas<'_> {
    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && x < self.0.width() as i64 && y < self.0.height() as i64 {
            self.0.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn fill(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: [u8; 3]) {
        let (w, h) = (self.0.width() as i64, self.0.height() as i64);
        for y in y0.max(0)..=y1.min(h - 1) {
            for x in x0.max(0)..=x1.min(w - 1) {
                self.put(x, y, c);
            }
        }
    }

    fn text(&mut self, x: i64, y: i64, s: &str, c: [u8; 3]) {
        for (i, ch) in s.chars().enumerate() {
            let gx = x + i as i64 * (GLYPH_WIDTH + 1);
            for (row, bits) in glyph(ch).iter().enumerate() {
                for col in 0..GLYPH_WIDTH {
                    if bits >> (GLYPH_WIDTH - 1 - col) & 1 == 1 {
                        self.put(gx + col, y + row as i64, c);
                    }
                }
            }
        }
    }
}

/// `"<name> <confidence to two decimals>"`.
pub fn tag_text(name: &str, confidence: f32) -> String {
    format!("{name} {confidence:.2}")
}

/// Pixel rectangle `(x1, y1, x2, y2)`, inclusive, covered by a normalized
/// box on a `w`×`h` frame.
pub fn pixel_rect(d: &Detection<f32>, w: u32, h: u32) -> (i64, i64, i64, i64) {
    let b = d.bbox;
    let x1 = (b.x1 as f64 * w as f64).floor() as i64;
    let y1 = (b.y1 as f64 * h as f64).floor() as i64;
    let x2 = ((b.x2 as f64 * w as f64).ceil() as i64 - 1).max(x1);
    let y2 = ((b.y2 as f64 * h as f64).ceil() as i64 - 1).max(y1);
    (x1, y1, x2, y2)
}

/// Tag rectangle `(x1, y1, x2, y2)`, inclusive: above the box when there
/// is room, otherwise just inside its top edge.
pub fn tag_rect(d: &Detection<f32>, text: &str, w: u32, h: u32) -> (i64, i64, i64, i64) {
    let (x1, y1, _, _) = pixel_rect(d, w, h);
    let tw = text.chars().count() as i64 * (GLYPH_WIDTH + 1) - 1 + 2 * TAG_PAD;
    let th = GLYPH_HEIGHT + 2 * TAG_PAD;
    let ty = if y1 >= th { y1 - th } else { y1 };
    (x1, ty, x1 + tw - 1, ty + th - 1)
}

/// Copy of `frame` with a 2-pixel class-colored rectangle and a label tag
/// per detection. Drawing outside the frame is clipped.
pub fn draw_annotations(frame: &RgbImage, dets: &[Detection<f32>], labels: &[String]) -> RgbImage {
    let mut out = frame.clone();
    let (w, h) = frame.dimensions();
    let mut canvas = Canvas(&mut out);
    for d in dets {
        let color = class_color(d.class_id);
        let (x1, y1, x2, y2) = pixel_rect(d, w, h);
        for t in 0..LINE_WIDTH {
            canvas.fill(x1, y1 + t, x2, y1 + t, color);
            canvas.fill(x1, y2 - t, x2, y2 - t, color);
            canvas.fill(x1 + t, y1, x1 + t, y2, color);
            canvas.fill(x2 - t, y1, x2 - t, y2, color);
        }
        let name = labels
            .get(d.class_id)
            .cloned()
            .unwrap_or_else(|| d.class_id.to_string());
        let text = tag_text(&name, d.confidence);
        let (tx1, ty1, tx2, ty2) = tag_rect(d, &text, w, h);
        canvas.fill(tx1, ty1, tx2, ty2, color);
        canvas.text(tx1 + TAG_PAD, ty1 + TAG_PAD, &text, TEXT_COLOR);
    }
    out
}
