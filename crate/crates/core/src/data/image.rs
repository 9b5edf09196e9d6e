//! Netpbm image IO (binary `P6` colour, `P5` grey) and bilinear resizing.
//!
//! Decoded images are `3×H×W` tensors with values `byte / 255`.

use std::path::Path;

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::Decode("not a binary P5/P6 image".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and `#` comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Decode("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let digits = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = digits.parse().map_err(|_| Error::Decode(format!("bad header field at byte {start}")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Decode("missing separator after header".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Decode(format!("only 8-bit images are supported, maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Decode(format!("empty image {width}×{height}")));
    }
    Ok(Header { channels, width, height, data_start: pos })
}

/// Decodes a P6 (or P5, replicated to three channels) image.
pub fn decode_pnm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let h = parse_header(bytes)?;
    let plane = h.width * h.height;
    let need = plane * h.channels;
    let payload = &bytes[h.data_start..];
    if payload.len() < need {
        return Err(Error::Decode(format!("payload holds {} of {need} bytes", payload.len())));
    }
    let inv = T::of(1.0 / 255.0);
    let mut data = vec![T::zero(); 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            let b = payload[p * h.channels + c.min(h.channels - 1)];
            data[c * plane + p] = T::of(b as f64) * inv;
        }
    }
    Tensor::new(&[3, h.height, h.width], data)
}

pub fn decode_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path)?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::Decode(m) => Error::Decode(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn to_byte<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `3×H×W` tensor in `[0, 1]` as P6, rounding to the nearest byte.
pub fn encode_ppm<T: Scalar>(img: &Tensor<T>) -> Result<Vec<u8>> {
    img.expect_rank(3, "ppm image")?;
    if img.dim(0) != 3 {
        return Err(Error::dim(format!("ppm needs 3 channels, got {}", img.dim(0))));
    }
    let (hh, ww) = (img.dim(1), img.dim(2));
    let plane = hh * ww;
    let mut out = format!("P6\n{ww} {hh}\n255\n").into_bytes();
    let d = img.data();
    out.reserve(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            out.push(to_byte(d[c * plane + p]));
        }
    }
    Ok(out)
}

/// Encodes an `H×W` map in `[0, 1]` as P5.
pub fn encode_pgm<T: Scalar>(map: &Tensor<T>) -> Result<Vec<u8>> {
    map.expect_rank(2, "pgm image")?;
    let mut out = format!("P5\n{} {}\n255\n", map.dim(1), map.dim(0)).into_bytes();
    out.extend(map.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

/// Bilinear resize of a `C×H×W` image with half-pixel centres.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    img.expect_rank(3, "image")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::dim("resize target must be non-empty"));
    }
    let (c, h, w) = (img.dim(0), img.dim(1), img.dim(2));
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = src.floor() as usize;
                (lo, (lo + 1).min(n_in - 1), src - lo as f64)
            })
            .collect()
    };
    let (ys, xs) = (axis(h, out_h), axis(w, out_w));
    let d = img.data();
    Ok(Tensor::from_fn(&[c, out_h, out_w], |i| {
        let (ch, y, x) = (i / (out_h * out_w), (i / out_w) % out_h, i % out_w);
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let at = |yy: usize, xx: usize| d[(ch * h + yy) * w + xx].as_f64();
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        T::of(top * (1.0 - fy) + bottom * fy)
    }))
}
