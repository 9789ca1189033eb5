//! On-disk formats: the binary grid file, CSV and windowed 8-bit PNG.
//!
//! Grid file layout, all little-endian:
//!
//! | offset | size | field                                    |
//! |--------|------|------------------------------------------|
//! | 0      | 4    | magic `MARG`                             |
//! | 4      | 2    | version, u16 = 1                         |
//! | 6      | 1    | kind, u8 (0 image, 1 sinogram)           |
//! | 7      | 4    | rows, u32                                |
//! | 11     | 4    | cols, u32                                |
//! | 15     | 32   | f64 slots: h, C, first angle, angle step |
//! | 47     | 8·rows·cols | f64 payload, row-major            |
//!
//! Unused slots hold NaN.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{MarError, Result};
use crate::image::Image;
use crate::proximal::SaturationMask;
use crate::radon::{Geometry, Sinogram};

pub const MAGIC: &[u8; 4] = b"MARG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 47;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum GridKind {
    Image = 0,
    Sinogram = 1,
}

/// Header slot indices.
pub mod slot {
    pub const SPACING: usize = 0;
    pub const CAP: usize = 1;
    pub const ANGLE_START: usize = 2;
    pub const ANGLE_STEP: usize = 3;
}

#[derive(Clone, Debug)]
pub struct GridFile {
    pub kind: GridKind,
    pub slots: [f64; 4],
    pub values: Array2<f64>,
}

impl GridFile {
    pub fn from_image(img: &Image) -> Self {
        let mut slots = [f64::NAN; 4];
        slots[slot::SPACING] = img.spacing();
        GridFile { kind: GridKind::Image, slots, values: img.values().clone() }
    }

    pub fn from_sinogram(sino: &Sinogram, cap: Option<f64>) -> Self {
        GridFile {
            kind: GridKind::Sinogram,
            slots: sinogram_slots(sino.geometry(), cap),
            values: sino.values().clone(),
        }
    }

    /// Mask stored as a sinogram-kind grid of 0/1.
    pub fn from_mask(mask: &SaturationMask, geometry: &Geometry, cap: Option<f64>) -> Self {
        GridFile {
            kind: GridKind::Sinogram,
            slots: sinogram_slots(geometry, cap),
            values: mask.as_array().mapv(|m| if m { 1.0 } else { 0.0 }),
        }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// Stored cap, if the slot is set.
    pub fn cap(&self) -> Option<f64> {
        let c = self.slots[slot::CAP];
        (!c.is_nan()).then_some(c)
    }

    pub fn to_image(&self) -> Result<Image> {
        if self.kind != GridKind::Image {
            return Err(MarError::invalid("grid file holds a sinogram, expected an image"));
        }
        let h = self.slots[slot::SPACING];
        Image::new(self.values.clone(), if h.is_nan() { 1.0 } else { h })
    }

    /// Rebuilds the sinogram with unit bins centred on the rotation axis.
    pub fn to_sinogram(&self) -> Result<Sinogram> {
        let geometry = self.geometry()?;
        Sinogram::new(geometry, self.values.clone())
    }

    pub fn to_mask(&self) -> Result<SaturationMask> {
        if self.kind != GridKind::Sinogram {
            return Err(MarError::invalid("mask file must be a sinogram-kind grid"));
        }
        if let Some(v) = self.values.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(MarError::invalid(format!("mask entries must be 0 or 1, found {v}")));
        }
        Ok(SaturationMask::new(self.values.mapv(|v| v == 1.0)))
    }

    pub fn geometry(&self) -> Result<Geometry> {
        if self.kind != GridKind::Sinogram {
            return Err(MarError::invalid("grid file holds an image, expected a sinogram"));
        }
        let (n, m) = self.values.dim();
        let start = self.slots[slot::ANGLE_START];
        let step = self.slots[slot::ANGLE_STEP];
        if start.is_nan() || step.is_nan() {
            return Geometry::uniform(n, m);
        }
        Geometry::new(n, start, step, m, 1.0, (m as f64 - 1.0) / 2.0)
    }

    pub fn encode(&self) -> Vec<u8> {
        let (rows, cols) = self.values.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * rows * cols);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for s in self.slots {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for v in self.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, message: String| MarError::Format { offset: offset as u64, message };
        if bytes.len() < HEADER_LEN {
            return Err(fmt(
                bytes.len(),
                format!("truncated header: expected {HEADER_LEN} bytes, found {}", bytes.len()),
            ));
        }
        if &bytes[0..4] != MAGIC {
            return Err(fmt(0, format!("bad magic {:?}", &bytes[0..4])));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(fmt(4, format!("unsupported version {version}")));
        }
        let kind = match bytes[6] {
            0 => GridKind::Image,
            1 => GridKind::Sinogram,
            k => return Err(fmt(6, format!("unknown grid kind {k}"))),
        };
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let rows = u32_at(7);
        let cols = u32_at(11);
        let mut slots = [0.0; 4];
        for (k, s) in slots.iter_mut().enumerate() {
            *s = f64_at(15 + 8 * k);
        }
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| fmt(7, format!("grid {rows}x{cols} too large")))?;
        let actual = bytes.len() - HEADER_LEN;
        if actual != expected {
            return Err(fmt(
                HEADER_LEN + actual.min(expected),
                format!("payload length mismatch: expected {expected} bytes for {rows}x{cols}, found {actual}"),
            ));
        }
        let data: Vec<f64> =
            bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let values = Array2::from_shape_vec((rows, cols), data).expect("length checked");
        Ok(GridFile { kind, slots, values })
    }
}

fn sinogram_slots(geometry: &Geometry, cap: Option<f64>) -> [f64; 4] {
    let mut slots = [f64::NAN; 4];
    slots[slot::CAP] = cap.unwrap_or(f64::NAN);
    slots[slot::ANGLE_START] = geometry.angle_start();
    slots[slot::ANGLE_STEP] = geometry.angle_step();
    slots
}

pub fn write_grid(path: impl AsRef<Path>, grid: &GridFile) -> Result<()> {
    fs::write(path, grid.encode())?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<GridFile> {
    GridFile::decode(&fs::read(path)?)
}

/// Row-major CSV with 17 significant digits per value.
pub fn write_csv(path: impl AsRef<Path>, values: &Array2<f64>) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 24);
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Gray level for `v` under the window `[lo, hi]`; half-way values round
/// away from zero, so the window midpoint maps to 128.
pub fn window_level(v: f64, lo: f64, hi: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes an 8-bit grayscale PNG with `[lo, hi]` mapped linearly to
/// `[0, 255]` and values outside clamped.
pub fn export_png(path: impl AsRef<Path>, values: &Array2<f64>, window: (f64, f64)) -> Result<()> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(MarError::invalid(format!("empty display window [{lo}, {hi}]")));
    }
    let (rows, cols) = values.dim();
    let pixels: Vec<u8> = values.iter().map(|&v| window_level(v, lo, hi)).collect();
    let buf = image::GrayImage::from_raw(cols as u32, rows as u32, pixels).expect("buffer sized from grid");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => MarError::Io(io),
        other => MarError::Png(other.to_string()),
    })
}
