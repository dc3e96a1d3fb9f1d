use std::fs;
use std::path::Path;

use image::{imageops::FilterType, GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

/// Square grid of cell activations in `[0, 1]` used while simulating.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternState {
    size: usize,
    cells: Vec<f64>,
}

impl PatternState {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            cells: vec![0.0; size * size],
        }
    }

    pub fn from_cells(size: usize, cells: Vec<f64>) -> Result<Self> {
        if cells.len() != size * size {
            return Err(Error::Shape(format!(
                "{} cells for a {size}x{size} grid",
                cells.len()
            )));
        }
        if let Some(bad) = cells.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("cell value {bad} outside [0, 1]")));
        }
        Ok(Self { size, cells })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub(crate) fn cells_mut(&mut self) -> &mut Vec<f64> {
        &mut self.cells
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.cells[y * self.size + x]
    }

    pub fn to_observation(&self) -> Observation {
        Observation {
            size: self.size,
            cells: self.cells.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Final frame of a rollout, the raw observation `o` the representation
/// modules encode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    size: usize,
    cells: Vec<f32>,
}

impl Observation {
    pub fn new(size: usize, cells: Vec<f32>) -> Result<Self> {
        if cells.len() != size * size {
            return Err(Error::Shape(format!(
                "{} cells for a {size}x{size} observation",
                cells.len()
            )));
        }
        if let Some(bad) = cells.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "observation value {bad} outside [0, 1]"
            )));
        }
        Ok(Self { size, cells })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            cells: vec![0.0; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cells(&self) -> &[f32] {
        &self.cells
    }

    pub fn total_activity(&self) -> f64 {
        self.cells.iter().map(|&v| v as f64).sum()
    }

    pub fn to_gray_image(&self) -> GrayImage {
        let px = self
            .cells
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        GrayImage::from_raw(self.size as u32, self.size as u32, px).expect("square buffer")
    }

    /// 8-bit grayscale PNG, optionally downscaled to `thumb x thumb`.
    pub fn to_png(&self, thumb: Option<u32>) -> Result<Vec<u8>> {
        let mut img = self.to_gray_image();
        if let Some(t) = thumb {
            if t != img.width() {
                img = image::imageops::resize(&img, t, t, FilterType::Triangle);
            }
        }
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_png(None)?).at(path)
    }

    /// Raw little-endian `f32`, row-major, no header.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.cells.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).at(path)
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        let n = bytes.len() / 4;
        let size = (n as f64).sqrt().round() as usize;
        if size * size * 4 != bytes.len() {
            return Err(Error::Shape(format!(
                "{}: {} bytes is not a square f32 grid",
                path.display(),
                bytes.len()
            )));
        }
        let cells = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::new(size, cells)
    }
}
