//! File formats: PGM/PNG gray images, CSV fields and heat maps, PBM masks and
//! JSON sidecars.
//!
//! Images are read as `value / maxval`. A 16-bit PGM written by
//! [`write_field_pgm`] carries an affine sidecar `{offset, scale}` that maps
//! codes back to field values; [`read_field`] applies it when present.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, LumaA};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScanError};
use crate::field::GrayField;
use crate::stats::{HeatMap, SignificanceMask};

/// Sidecar path for a data file: `name.ext` becomes `name.ext.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| load_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| load_err(path, e))
}

fn load_err(path: &Path, e: impl std::fmt::Display) -> ScanError {
    ScanError::Load { path: path.to_path_buf(), reason: e.to_string() }
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> ScanError {
    ScanError::Data(format!("{}: {msg}", path.display()))
}

/// A decoded gray image: raw codes and the maximal code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub codes: Vec<u32>,
}

impl GrayImage {
    /// `code / maxval` as a square field.
    pub fn to_field(&self, path: &Path) -> Result<GrayField> {
        self.to_field_affine(path, 0.0, 1.0 / self.maxval as f64)
    }

    fn to_field_affine(&self, path: &Path, offset: f64, scale: f64) -> Result<GrayField> {
        if self.width != self.height {
            return Err(data_err(path, format!("image is {}x{}, expected a square image", self.width, self.height)));
        }
        GrayField::new(self.width, self.codes.iter().map(|&c| offset + scale * c as f64).collect())
    }
}

/// Reads the next whitespace-separated header token, skipping `#` comments.
fn pnm_token<R: BufRead>(r: &mut R) -> std::io::Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut line = Vec::new();
                r.read_until(b'\n', &mut line)?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
    }
    Ok(String::from_utf8_lossy(&tok).into_owned())
}

/// Reads a P2 (ASCII) or P5 (binary, 8 or 16 bit big-endian) PGM.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let file = fs::File::open(path).map_err(|e| load_err(path, e))?;
    let mut r = BufReader::new(file);
    let magic = pnm_token(&mut r)?;
    if magic != "P2" && magic != "P5" {
        let what = if magic == "P3" || magic == "P6" { "color PPM images are not supported" } else { "not a PGM file" };
        return Err(data_err(path, what));
    }
    let mut num = |name: &str| -> Result<u32> {
        let tok = pnm_token(&mut r)?;
        tok.parse().map_err(|_| data_err(path, format!("bad {name} '{tok}'")))
    };
    let width = num("width")? as usize;
    let height = num("height")? as usize;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(data_err(path, format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width * height;
    let mut codes = Vec::with_capacity(n);
    if magic == "P2" {
        for _ in 0..n {
            let tok = pnm_token(&mut r)?;
            codes.push(tok.parse::<u32>().map_err(|_| data_err(path, format!("bad sample '{tok}'")))?);
        }
    } else {
        let bytes = if maxval < 256 { 1 } else { 2 };
        let mut buf = vec![0u8; n * bytes];
        r.read_exact(&mut buf).map_err(|_| data_err(path, "truncated pixel data"))?;
        if bytes == 1 {
            codes.extend(buf.iter().map(|&b| b as u32));
        } else {
            codes.extend(buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32));
        }
    }
    if let Some(c) = codes.iter().find(|&&c| c > maxval) {
        return Err(data_err(path, format!("sample {c} exceeds maxval {maxval}")));
    }
    Ok(GrayImage { width, height, maxval, codes })
}

/// Writes a binary PGM; 16-bit samples are big-endian.
pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut out = Vec::with_capacity(img.codes.len() * 2 + 32);
    write!(out, "P5\n{} {}\n{}\n", img.width, img.height, img.maxval)?;
    for &c in &img.codes {
        if img.maxval < 256 {
            out.push(c as u8);
        } else {
            out.extend_from_slice(&(c as u16).to_be_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a grayscale PNG (8 or 16 bit). Color images are rejected.
pub fn read_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| load_err(path, e))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(b) => Ok(GrayImage { width, height, maxval: 255, codes: b.into_raw().into_iter().map(u32::from).collect() }),
        DynamicImage::ImageLuma16(b) => Ok(GrayImage { width, height, maxval: 65535, codes: b.into_raw().into_iter().map(u32::from).collect() }),
        other => Err(data_err(path, format!("expected a grayscale image, found {:?}", other.color()))),
    }
}

/// Reads a PGM or PNG by extension (PGM otherwise).
pub fn read_gray_image(path: &Path) -> Result<GrayImage> {
    let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        read_png(path)
    } else {
        read_pgm(path)
    }
}

/// Affine mapping between 16-bit codes and field values, plus the resulting
/// quantization error bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FieldSidecar {
    /// `value = offset + scale * code`.
    pub offset: f64,
    pub scale: f64,
    pub maxval: u32,
    /// Largest per-pixel rounding error, `scale / 2`.
    pub max_pixel_error: f64,
    /// Bound on the change of any statistic times sigma: every segment mean
    /// moves by at most `T * max_pixel_error`, a contrast by twice that, and
    /// FnB terms combine two contrasts. Independent of the number of angles.
    pub max_stat_error_times_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

/// Writes the field as a 16-bit PGM with its affine sidecar next to it.
pub fn write_field_pgm(path: &Path, field: &GrayField, extra: Option<serde_json::Value>) -> Result<FieldSidecar> {
    let (lo, hi) = field.min_max();
    let maxval = 65535u32;
    let scale = if hi > lo { (hi - lo) / maxval as f64 } else { 1.0 };
    let codes = field
        .values()
        .iter()
        .map(|&v| ((v - lo) / scale).round().clamp(0.0, maxval as f64) as u32)
        .collect();
    write_pgm(path, &GrayImage { width: field.t(), height: field.t(), maxval, codes })?;
    let half = scale / 2.0;
    let sidecar = FieldSidecar {
        offset: lo,
        scale,
        maxval,
        max_pixel_error: half,
        max_stat_error_times_sigma: 4.0 * field.t() as f64 * half,
        extra,
    };
    write_json(&sidecar_path(path), &sidecar)?;
    Ok(sidecar)
}

/// Loads an image as a field: through its sidecar when one exists, as
/// `value / maxval` otherwise.
pub fn read_field(path: &Path) -> Result<(GrayField, Option<FieldSidecar>)> {
    let img = read_gray_image(path)?;
    let side = sidecar_path(path);
    if side.exists() {
        let sc: FieldSidecar = read_json(&side)?;
        Ok((img.to_field_affine(path, sc.offset, sc.scale)?, Some(sc)))
    } else {
        Ok((img.to_field(path)?, None))
    }
}

/// Row-major CSV, one image row per line.
pub fn field_to_csv(field: &GrayField) -> String {
    let t = field.t();
    let mut s = String::new();
    for row in field.values().chunks(t) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn field_from_csv(text: &str) -> Result<GrayField> {
    let mut values = Vec::new();
    let mut rows = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        rows += 1;
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| ScanError::Data(format!("bad CSV cell '{cell}' in row {rows}")))?;
            values.push(v);
        }
    }
    GrayField::new(rows, values)
}

/// Heat map CSV; non-anchor pixels are empty cells.
pub fn heatmap_to_csv(hm: &HeatMap) -> String {
    let mut s = String::new();
    for row in hm.values.chunks(hm.t) {
        let cells: Vec<String> = row.iter().map(|v| if v.is_finite() { v.to_string() } else { String::new() }).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HeatmapSidecar {
    pub min: f64,
    pub max: f64,
    /// Gray value written where there is no anchor (alpha is 0 there too).
    pub missing_value: u16,
}

/// 16-bit gray-alpha PNG: gray spans `[min, max]`, alpha marks anchors.
pub fn write_heatmap_png(path: &Path, hm: &HeatMap) -> Result<HeatmapSidecar> {
    let (min, max) = (hm.min(), hm.max());
    let span = if max > min { max - min } else { 1.0 };
    let t = hm.t as u32;
    let buf = ImageBuffer::<LumaA<u16>, Vec<u16>>::from_fn(t, t, |x, y| {
        let v = hm.values[(y * t + x) as usize];
        if v.is_finite() {
            LumaA([((v - min) / span * 65535.0).round() as u16, u16::MAX])
        } else {
            LumaA([0, 0])
        }
    });
    buf.save(path)?;
    let sidecar = HeatmapSidecar { min, max, missing_value: 0 };
    write_json(&sidecar_path(path), &sidecar)?;
    Ok(sidecar)
}

/// Binary PBM (P4); set bits are significant anchors.
pub fn write_mask_pbm(path: &Path, mask: &SignificanceMask) -> Result<()> {
    let t = mask.t;
    let mut out = Vec::new();
    write!(out, "P4\n{t} {t}\n")?;
    for row in mask.bits.chunks(t) {
        for byte in row.chunks(8) {
            let mut b = 0u8;
            for (i, &bit) in byte.iter().enumerate() {
                if bit {
                    b |= 0x80 >> i;
                }
            }
            out.push(b);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_mask_pbm(path: &Path) -> Result<SignificanceMask> {
    let file = fs::File::open(path).map_err(|e| load_err(path, e))?;
    let mut r = BufReader::new(file);
    if pnm_token(&mut r)? != "P4" {
        return Err(data_err(path, "not a binary PBM"));
    }
    let w: usize = pnm_token(&mut r)?.parse().map_err(|_| data_err(path, "bad width"))?;
    let h: usize = pnm_token(&mut r)?.parse().map_err(|_| data_err(path, "bad height"))?;
    if w != h {
        return Err(data_err(path, "mask is not square"));
    }
    let row_bytes = w.div_ceil(8);
    let mut buf = vec![0u8; row_bytes * h];
    r.read_exact(&mut buf).map_err(|_| data_err(path, "truncated mask"))?;
    let mut mask = SignificanceMask::empty(w);
    for y in 0..h {
        for x in 0..w {
            if buf[y * row_bytes + x / 8] & (0x80 >> (x % 8)) != 0 {
                mask.set([x + 1, y + 1]);
            }
        }
    }
    Ok(mask)
}
