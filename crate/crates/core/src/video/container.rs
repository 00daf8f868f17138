//! MDVS raw video container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MDVS"
//! 4       4     version (1)
//! 8       4     width
//! 12      4     height
//! 16      4     fps numerator
//! 20      4     fps denominator
//! 24      8     frame count
//! 32      ...   frames, RGB24 row-major, width·height·3 bytes each
//! ```
//!
//! All integers are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MDVS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub width: u32,
    pub height: u32,
    pub fps_num: u32,
    pub fps_den: u32,
    pub frame_count: u64,
}

impl StreamInfo {
    pub fn frame_bytes(&self) -> u64 {
        self.width as u64 * self.height as u64 * 3
    }

    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::format(
                8,
                format!("frame size {}x{} is empty", self.width, self.height),
            ));
        }
        if self.fps_num == 0 || self.fps_den == 0 {
            return Err(Error::format(
                16,
                format!("frame rate {}/{} is invalid", self.fps_num, self.fps_den),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN as usize] {
        let mut h = [0u8; HEADER_LEN as usize];
        h[0..4].copy_from_slice(MAGIC);
        h[4..8].copy_from_slice(&VERSION.to_le_bytes());
        h[8..12].copy_from_slice(&self.width.to_le_bytes());
        h[12..16].copy_from_slice(&self.height.to_le_bytes());
        h[16..20].copy_from_slice(&self.fps_num.to_le_bytes());
        h[20..24].copy_from_slice(&self.fps_den.to_le_bytes());
        h[24..32].copy_from_slice(&self.frame_count.to_le_bytes());
        h
    }

    pub fn from_bytes(h: &[u8]) -> Result<Self> {
        if h.len() < HEADER_LEN as usize {
            return Err(Error::format(h.len() as u64, "truncated stream header"));
        }
        if &h[0..4] != MAGIC {
            return Err(Error::format(0, "not an MDVS stream (bad magic)"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported MDVS version {version}")));
        }
        let info = Self {
            width: u32_at(8),
            height: u32_at(12),
            fps_num: u32_at(16),
            fps_den: u32_at(20),
            frame_count: u64::from_le_bytes(h[24..32].try_into().expect("8 bytes")),
        };
        info.validate()?;
        Ok(info)
    }
}

/// Reads `buf.len()` bytes unless the input ends first; returns the count.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(got)
}

/// Sequential frame reader; also an iterator of frames.
pub struct StreamReader<R> {
    inner: R,
    info: StreamInfo,
    next: u64,
}

impl<R: Read> StreamReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut h = [0u8; HEADER_LEN as usize];
        let got = read_full(&mut inner, &mut h)?;
        let info = StreamInfo::from_bytes(&h[..got])?;
        Ok(Self { inner, info, next: 0 })
    }

    pub fn info(&self) -> StreamInfo {
        self.info
    }

    /// Index of the next frame to be read.
    pub fn position(&self) -> u64 {
        self.next
    }

    pub fn read_frame(&mut self) -> Result<Option<RgbImage>> {
        if self.next >= self.info.frame_count {
            return Ok(None);
        }
        let size = self.info.frame_bytes();
        let start = HEADER_LEN + self.next * size;
        let mut buf = vec![0u8; size as usize];
        let got = read_full(&mut self.inner, &mut buf)?;
        if got < buf.len() {
            return Err(Error::format(
                start + got as u64,
                format!("truncated frame {} of {}", self.next, self.info.frame_count),
            ));
        }
        self.next += 1;
        Ok(Some(
            RgbImage::from_raw(self.info.width, self.info.height, buf).expect("buffer sized to frame"),
        ))
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<RgbImage>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_frame().transpose()
    }
}

pub fn open_stream(path: impl AsRef<Path>) -> Result<StreamReader<BufReader<File>>> {
    StreamReader::new(BufReader::new(File::open(path)?))
}

/// Frame writer for a stream whose length is known up front.
pub struct StreamWriter<W> {
    inner: W,
    info: StreamInfo,
    written: u64,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut inner: W, info: StreamInfo) -> Result<Self> {
        info.validate().map_err(|e| Error::config(e.to_string()))?;
        inner.write_all(&info.to_bytes())?;
        Ok(Self {
            inner,
            info,
            written: 0,
        })
    }

    pub fn info(&self) -> StreamInfo {
        self.info
    }

    pub fn write_frame(&mut self, frame: &RgbImage) -> Result<()> {
        let offset = HEADER_LEN + self.written * self.info.frame_bytes();
        if frame.dimensions() != (self.info.width, self.info.height) {
            return Err(Error::format(
                offset,
                format!(
                    "frame {} is {}x{}, stream is {}x{}",
                    self.written,
                    frame.width(),
                    frame.height(),
                    self.info.width,
                    self.info.height
                ),
            ));
        }
        if self.written >= self.info.frame_count {
            return Err(Error::format(offset, "more frames than the header declares"));
        }
        self.inner.write_all(frame.as_raw())?;
        self.written += 1;
        Ok(())
    }

    /// Flushes and checks that every declared frame was written.
    pub fn finish(mut self) -> Result<W> {
        if self.written != self.info.frame_count {
            return Err(Error::format(
                HEADER_LEN + self.written * self.info.frame_bytes(),
                format!("wrote {} of {} declared frames", self.written, self.info.frame_count),
            ));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn write_stream<'a>(
    path: impl AsRef<Path>,
    info: StreamInfo,
    frames: impl IntoIterator<Item = &'a RgbImage>,
) -> Result<()> {
    let mut w = StreamWriter::new(BufWriter::new(File::create(path)?), info)?;
    for f in frames {
        w.write_frame(f)?;
    }
    w.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn info(w: u32, h: u32, n: u64) -> StreamInfo {
        StreamInfo {
            width: w,
            height: h,
            fps_num: 30000,
            fps_den: 1001,
            frame_count: n,
        }
    }

    fn random_frames(n: usize) -> Vec<RgbImage> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        (0..n)
            .map(|_| RgbImage::from_fn(7, 5, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()])))
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let frames = random_frames(3);
        let mut w = StreamWriter::new(Vec::new(), info(7, 5, 3)).unwrap();
        for f in &frames {
            w.write_frame(f).unwrap();
        }
        let bytes = w.finish().unwrap();
        assert_eq!(bytes.len() as u64, HEADER_LEN + 3 * 7 * 5 * 3);
        let r = StreamReader::new(&bytes[..]).unwrap();
        assert_eq!(r.info(), info(7, 5, 3));
        let back: Vec<RgbImage> = r.collect::<Result<_>>().unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn full_hd_header_fields() {
        let hd = StreamInfo {
            width: 1920,
            height: 1080,
            fps_num: 30,
            fps_den: 1,
            frame_count: 9000,
        };
        let bytes = hd.to_bytes();
        assert_eq!(&bytes[8..12], &1920u32.to_le_bytes());
        assert_eq!(StreamInfo::from_bytes(&bytes).unwrap(), hd);
        assert_eq!(hd.frame_bytes(), 1920 * 1080 * 3);
    }

    #[test]
    fn corrupt_streams_report_offsets() {
        let frames = random_frames(2);
        let mut w = StreamWriter::new(Vec::new(), info(7, 5, 2)).unwrap();
        for f in &frames {
            w.write_frame(f).unwrap();
        }
        let mut bytes = w.finish().unwrap();
        bytes.truncate(bytes.len() - 10);
        let mut r = StreamReader::new(&bytes[..]).unwrap();
        assert!(r.read_frame().unwrap().is_some());
        match r.read_frame() {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len() as u64),
            other => panic!("{other:?}"),
        }

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            StreamReader::new(&bad[..]),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            StreamReader::new(&bytes[..20]),
            Err(Error::Format { offset: 20, .. })
        ));
    }

    #[test]
    fn writer_rejects_size_changes_and_short_streams() {
        let mut w = StreamWriter::new(Vec::new(), info(7, 5, 2)).unwrap();
        assert!(matches!(
            w.write_frame(&RgbImage::new(5, 7)),
            Err(Error::Format { offset: HEADER_LEN, .. })
        ));
        w.write_frame(&RgbImage::new(7, 5)).unwrap();
        assert!(w.finish().is_err());
    }
}
