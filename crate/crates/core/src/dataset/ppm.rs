//! Binary PPM (P6, maxval 255) encoding.

use std::io::{Read, Write};

use image::RgbImage;

use crate::error::{Error, Result};

pub fn write_ppm<W: Write>(mut w: W, img: &RgbImage) -> Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width(), img.height())?;
    w.write_all(img.as_raw())?;
    Ok(())
}

pub fn read_ppm<R: Read>(mut r: R) -> Result<RgbImage> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format(start as u64, "truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    if token(&mut pos)? != "P6" {
        return Err(Error::format(0, "not a binary PPM (P6)"));
    }
    let dim = |pos: &mut usize| -> Result<u32> {
        let at = *pos as u64;
        let t = token(pos)?;
        t.parse()
            .map_err(|_| Error::format(at, format!("bad PPM header field {t:?}")))
    };
    let (w, h, maxval) = (dim(&mut pos)?, dim(&mut pos)?, dim(&mut pos)?);
    if maxval != 255 {
        return Err(Error::format(pos as u64, format!("unsupported PPM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w as usize * h as usize * 3;
    if bytes.len() < pos + need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated PPM raster: need {need} bytes"),
        ));
    }
    RgbImage::from_raw(w, h, bytes[pos..pos + need].to_vec())
        .ok_or_else(|| Error::format(pos as u64, "raster size mismatch"))
}
