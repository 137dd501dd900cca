//! Single-channel PFM depth maps (little-endian, bottom row first).

use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

pub fn write_pfm(path: &Path, width: u32, height: u32, data: &[f32]) -> Result<()> {
    if data.len() != (width * height) as usize {
        return Err(Error::InvalidArgument("depth map size mismatch".into()));
    }
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for row in (0..height as usize).rev() {
        for v in &data[row * width as usize..(row + 1) * width as usize] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).with_path(path)
}

/// Returns `(width, height, rows top to bottom)`.
pub fn read_pfm(path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let bytes = fs::read(path).with_path(path)?;
    let bad = || Error::Schema(format!("{}: malformed PFM", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    if fields[0] != "Pf" {
        return Err(bad());
    }
    let w: u32 = fields[1].parse().map_err(|_| bad())?;
    let h: u32 = fields[2].parse().map_err(|_| bad())?;
    let scale: f32 = fields[3].parse().map_err(|_| bad())?;
    let n = (w * h) as usize;
    if bytes.len() < pos + 4 * n {
        return Err(bad());
    }
    let word = |i: usize| -> [u8; 4] { bytes[pos + 4 * i..pos + 4 * i + 4].try_into().unwrap() };
    let mut data = vec![0.0f32; n];
    for row in 0..h as usize {
        let src_row = h as usize - 1 - row;
        for col in 0..w as usize {
            let b = word(src_row * w as usize + col);
            data[row * w as usize + col] = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Ok((w, h, data))
}
