//! Binary PPM (P6, maxval 255) images and masks.

use cpsplat_core::render::{AlphaMask, Image};

use crate::{Error, Result};

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn header(width: usize, height: usize) -> Vec<u8> {
    format!("P6\n{width} {height}\n255\n").into_bytes()
}

pub fn encode_image(img: &Image) -> Vec<u8> {
    let mut out = header(img.width, img.height);
    out.extend(img.data.iter().map(|&v| quantize(v)));
    out
}

/// Masks are stored as gray RGB.
pub fn encode_mask(mask: &AlphaMask) -> Vec<u8> {
    let mut out = header(mask.width, mask.height);
    for &v in &mask.data {
        let q = quantize(v);
        out.extend([q, q, q]);
    }
    out
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("PPM", "truncated header"));
    }
    Ok(&bytes[start..*pos])
}

fn number(tok: &[u8]) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("PPM", "bad header number"))
}

/// Width, height and the raw RGB bytes.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let mut pos = 0;
    if next_token(bytes, &mut pos)? != b"P6" {
        return Err(Error::format("PPM", "expected P6 magic"));
    }
    let width = number(next_token(bytes, &mut pos)?)?;
    let height = number(next_token(bytes, &mut pos)?)?;
    if number(next_token(bytes, &mut pos)?)? != 255 {
        return Err(Error::format("PPM", "only maxval 255 is supported"));
    }
    pos += 1;
    let len = width * height * 3;
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != len {
        return Err(Error::format(
            "PPM",
            format!("expected {len} pixel bytes, found {}", body.len()),
        ));
    }
    Ok((width, height, body))
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let (w, h, body) = decode(bytes)?;
    Ok(Image::from_vec(
        w,
        h,
        body.iter().map(|&b| b as f64 / 255.0).collect(),
    )?)
}

/// Reads the red channel as the mask value.
pub fn decode_mask(bytes: &[u8]) -> Result<AlphaMask> {
    let (w, h, body) = decode(bytes)?;
    Ok(AlphaMask::from_vec(
        w,
        h,
        body.chunks_exact(3).map(|c| c[0] as f64 / 255.0).collect(),
    )?)
}
