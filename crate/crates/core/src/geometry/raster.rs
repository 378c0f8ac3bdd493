//! Grayscale rasters over a physical rectangle: inside/outside masks and
//! per-pixel target intensities.
//!
//! Row 0 is the top of the image (largest `y`), column 0 the left edge.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Physical rectangle `[x_lo, x_hi] x [y_lo, y_hi]` covered by a raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl Extent {
    pub fn new(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Result<Self, GeometryError> {
        if !(x_lo < x_hi && y_lo < y_hi) {
            return Err(GeometryError::InvalidSpec(format!(
                "raster extent [{x_lo}, {x_hi}] x [{y_lo}, {y_hi}] is empty"
            )));
        }
        Ok(Extent { x_lo, x_hi, y_lo, y_hi })
    }

    pub fn square(half: f64) -> Self {
        Extent { x_lo: -half, x_hi: half, y_lo: -half, y_hi: half }
    }

    pub fn area(&self) -> f64 {
        (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)
    }
}

/// Real-valued raster; values are typically in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    pub width: usize,
    pub height: usize,
    pub extent: Extent,
    pub values: Vec<f64>,
}

impl GrayRaster {
    pub fn from_fn<F: Fn(f64, f64) -> f64>(width: usize, height: usize, extent: Extent, f: F) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                let (x, y) = cell_center(&extent, width, height, i, j);
                values.push(f(x, y));
            }
        }
        GrayRaster { width, height, extent, values }
    }

    /// Loads an 8-bit grayscale image, scaling pixel values to `[0, 1]`.
    pub fn from_png(path: &Path, extent: Extent) -> Result<Self, GeometryError> {
        let img = image::open(path)
            .map_err(|e| GeometryError::Image(format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err(GeometryError::Image(format!("{}: image is empty", path.display())));
        }
        let values = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        Ok(GrayRaster { width: w as usize, height: h as usize, extent, values })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        cell_center(&self.extent, self.width, self.height, i, j)
    }

    /// Bilinear interpolation between cell centers; zero outside the extent.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let e = &self.extent;
        if !(x >= e.x_lo && x <= e.x_hi && y >= e.y_lo && y <= e.y_hi) {
            return 0.0;
        }
        let fx = (x - e.x_lo) / (e.x_hi - e.x_lo) * self.width as f64 - 0.5;
        let fy = (e.y_hi - y) / (e.y_hi - e.y_lo) * self.height as f64 - 0.5;
        let clamp = |v: f64, n: usize| v.max(0.0).min((n - 1) as f64);
        let (fx, fy) = (clamp(fx, self.width), clamp(fy, self.height));
        let (j0, i0) = (fx.floor() as usize, fy.floor() as usize);
        let (j1, i1) = ((j0 + 1).min(self.width - 1), (i0 + 1).min(self.height - 1));
        let (ax, ay) = (fx - j0 as f64, fy - i0 as f64);
        let top = self.at(i0, j0) * (1.0 - ax) + self.at(i0, j1) * ax;
        let bottom = self.at(i1, j0) * (1.0 - ax) + self.at(i1, j1) * ax;
        top * (1.0 - ay) + bottom * ay
    }

    /// Box blur with a `(2r+1) x (2r+1)` window, edges clamped.
    pub fn box_blur(&self, r: usize) -> GrayRaster {
        let (w, h) = (self.width, self.height);
        let mut out = vec![0.0; w * h];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for di in -(r as isize)..=(r as isize) {
                    for dj in -(r as isize)..=(r as isize) {
                        let ii = (i as isize + di).clamp(0, h as isize - 1) as usize;
                        let jj = (j as isize + dj).clamp(0, w as isize - 1) as usize;
                        acc += self.at(ii, jj);
                    }
                }
                out[i * w + j] = acc / ((2 * r + 1) * (2 * r + 1)) as f64;
            }
        }
        GrayRaster { width: w, height: h, extent: self.extent, values: out }
    }

    /// Integral of the raster as a piecewise-constant function.
    pub fn integral(&self) -> f64 {
        let cell = self.extent.area() / (self.width * self.height) as f64;
        self.values.iter().sum::<f64>() * cell
    }
}

/// Inside/outside raster; a cell is inside when its source pixel exceeds 127.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterMask {
    pub width: usize,
    pub height: usize,
    pub extent: Extent,
    /// One character per cell, row-major from the top row: `'1'` inside, `'0'` outside.
    pub cells: String,
}

impl RasterMask {
    pub fn from_fn<F: Fn(f64, f64) -> bool>(width: usize, height: usize, extent: Extent, f: F) -> Self {
        let mut cells = String::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                let (x, y) = cell_center(&extent, width, height, i, j);
                cells.push(if f(x, y) { '1' } else { '0' });
            }
        }
        RasterMask { width, height, extent, cells }
    }

    pub fn from_png(path: &Path, extent: Extent) -> Result<Self, GeometryError> {
        let img = image::open(path)
            .map_err(|e| GeometryError::Image(format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err(GeometryError::Image(format!("{}: image is empty", path.display())));
        }
        let cells = img.pixels().map(|p| if p.0[0] > 127 { '1' } else { '0' }).collect();
        Ok(RasterMask { width: w as usize, height: h as usize, extent, cells })
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.width == 0 || self.height == 0 || self.cells.len() != self.width * self.height {
            return Err(GeometryError::InvalidSpec(format!(
                "mask has {} cells, expected {} x {}",
                self.cells.len(),
                self.width,
                self.height
            )));
        }
        if self.cells.bytes().any(|c| c != b'0' && c != b'1') {
            return Err(GeometryError::InvalidSpec("mask cells must be '0' or '1'".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn inside(&self, i: usize, j: usize) -> bool {
        self.cells.as_bytes()[i * self.width + j] == b'1'
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        cell_center(&self.extent, self.width, self.height, i, j)
    }

    /// Cell containing `(x, y)`, if inside the extent.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let e = &self.extent;
        if !(x >= e.x_lo && x <= e.x_hi && y >= e.y_lo && y <= e.y_hi) {
            return None;
        }
        let j = ((x - e.x_lo) / (e.x_hi - e.x_lo) * self.width as f64).floor() as usize;
        let i = ((e.y_hi - y) / (e.y_hi - e.y_lo) * self.height as f64).floor() as usize;
        Some((i.min(self.height - 1), j.min(self.width - 1)))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.locate(x, y).is_some_and(|(i, j)| self.inside(i, j))
    }

    pub fn inside_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.height {
            for j in 0..self.width {
                if self.inside(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Inside cells with at least one outside 4-neighbour (or on the raster edge),
    /// paired with the outward unit normal from the blurred mask gradient.
    pub fn edge_cells(&self) -> Vec<((usize, usize), [f64; 2])> {
        let (w, h) = (self.width, self.height);
        let as_gray = GrayRaster {
            width: w,
            height: h,
            extent: self.extent,
            values: self.cells.bytes().map(|c| if c == b'1' { 1.0 } else { 0.0 }).collect(),
        };
        // Pad by one outside cell so edge cells on the raster border get a gradient.
        let blurred = as_gray.box_blur(1);
        let value = |i: isize, j: isize| -> f64 {
            if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
                0.0
            } else {
                blurred.at(i as usize, j as usize)
            }
        };
        let dx = (self.extent.x_hi - self.extent.x_lo) / w as f64;
        let dy = (self.extent.y_hi - self.extent.y_lo) / h as f64;
        let mut out = Vec::new();
        for i in 0..h {
            for j in 0..w {
                if !self.inside(i, j) {
                    continue;
                }
                let neighbours = [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)];
                let is_edge = neighbours.iter().any(|&(di, dj)| {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize || !self.inside(ii as usize, jj as usize)
                });
                if !is_edge {
                    continue;
                }
                let (ii, jj) = (i as isize, j as isize);
                let gx = (value(ii, jj + 1) - value(ii, jj - 1)) / (2.0 * dx);
                // Row index grows downward, so +y is row - 1.
                let gy = (value(ii - 1, jj) - value(ii + 1, jj)) / (2.0 * dy);
                let norm = gx.hypot(gy);
                if norm > 0.0 {
                    out.push(((i, j), [-gx / norm, -gy / norm]));
                }
            }
        }
        out
    }

    pub fn area(&self) -> f64 {
        let count = self.cells.bytes().filter(|&c| c == b'1').count();
        self.extent.area() * count as f64 / (self.width * self.height) as f64
    }
}

fn cell_center(e: &Extent, w: usize, h: usize, i: usize, j: usize) -> (f64, f64) {
    let dx = (e.x_hi - e.x_lo) / w as f64;
    let dy = (e.y_hi - e.y_lo) / h as f64;
    (e.x_lo + (j as f64 + 0.5) * dx, e.y_hi - (i as f64 + 0.5) * dy)
}
