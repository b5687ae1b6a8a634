//! Truncated Euclidean distance field over an edge map.
//!
//! The field is the exact distance (in pixels) from every grid node to the
//! nearest edge pixel, computed with the separable lower-envelope-of-parabolas
//! transform, then clamped at the truncation radius `τ`. Between nodes it is
//! sampled bilinearly, which gives a piecewise-constant gradient per cell.

use crate::geometry::Pixel;
use crate::imaging::EdgeMap;
use thiserror::Error;

/// Default truncation radius in pixels.
pub const DEFAULT_TRUNCATION: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostMapError {
    #[error("cost map needs at least 2x2 cells, got {width}x{height}")]
    Degenerate { width: usize, height: usize },
    #[error("truncation radius must be positive, got {0}")]
    BadTruncation(f64),
    #[error("sample ({u}, {v}) outside the cost map")]
    OutOfBounds { u: f64, v: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    width: usize,
    height: usize,
    truncation: f64,
    offset: f64,
    cost: Vec<f64>,
}

/// Squared distance of a 1-D lower envelope. `f` holds squared distances with
/// `INFINITY` for "no site"; `out` receives `min_q f(q) + (p - q)²`.
fn envelope_1d(f: &[f64], out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&top) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let tf = top as f64;
            let s = ((fq + qf * qf) - (f[top] + tf * tf)) / (2.0 * qf - 2.0 * tf);
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let pf = p as f64;
        while k + 1 < v.len() && z[k + 1] < pf {
            k += 1;
        }
        let d = pf - v[k] as f64;
        *o = f[v[k]] + d * d;
    }
}

/// Exact squared Euclidean distance to the nearest `true` cell.
pub fn squared_distance_transform(width: usize, height: usize, sites: &[bool]) -> Vec<f64> {
    let mut grid: Vec<f64> = sites
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());

    let mut col = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = grid[y * width + x];
        }
        envelope_1d(&col, &mut col_out, &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; width];
    for y in 0..height {
        let row = &grid[y * width..(y + 1) * width];
        envelope_1d(row, &mut row_out, &mut v, &mut z);
        grid[y * width..(y + 1) * width].copy_from_slice(&row_out);
    }
    grid
}

impl CostMap {
    /// Distance transform of `edges`, clamped at `truncation`. The map shares
    /// the edge map's grid offset.
    pub fn build(edges: &EdgeMap, truncation: f64) -> Result<Self, CostMapError> {
        let (w, h) = (edges.width(), edges.height());
        if w < 2 || h < 2 {
            return Err(CostMapError::Degenerate {
                width: w,
                height: h,
            });
        }
        if !(truncation.is_finite() && truncation > 0.0) {
            return Err(CostMapError::BadTruncation(truncation));
        }
        let cost = squared_distance_transform(w, h, edges.grid())
            .into_iter()
            .map(|d2| d2.sqrt().min(truncation))
            .collect();
        Ok(Self {
            width: w,
            height: h,
            truncation,
            offset: edges.offset(),
            cost,
        })
    }

    /// Wraps a precomputed grid; values are clamped into `[0, truncation]`.
    pub fn from_grid(
        width: usize,
        height: usize,
        cost: Vec<f64>,
        truncation: f64,
    ) -> Result<Self, CostMapError> {
        if width < 2 || height < 2 || cost.len() != width * height {
            return Err(CostMapError::Degenerate { width, height });
        }
        if !(truncation.is_finite() && truncation > 0.0) {
            return Err(CostMapError::BadTruncation(truncation));
        }
        Ok(Self {
            width,
            height,
            truncation,
            offset: 0.0,
            cost: cost.into_iter().map(|c| c.clamp(0.0, truncation)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn grid(&self) -> &[f64] {
        &self.cost
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.cost[y * self.width + x]
    }

    /// Grid coordinates of an image-plane pixel, if it falls inside the map.
    pub fn to_grid(&self, p: &Pixel) -> Option<(f64, f64)> {
        let gx = p.u - self.offset;
        let gy = p.v - self.offset;
        let inside = gx >= 0.0
            && gy >= 0.0
            && gx <= (self.width - 1) as f64
            && gy <= (self.height - 1) as f64;
        inside.then_some((gx, gy))
    }

    pub fn contains(&self, p: &Pixel) -> bool {
        self.to_grid(p).is_some()
    }

    /// Corner costs and fractional position of the cell holding `p`.
    fn cell(&self, p: &Pixel) -> Result<([f64; 4], f64, f64), CostMapError> {
        let (gx, gy) = self
            .to_grid(p)
            .ok_or(CostMapError::OutOfBounds { u: p.u, v: p.v })?;
        let x0 = (gx.floor() as usize).min(self.width - 2);
        let y0 = (gy.floor() as usize).min(self.height - 2);
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        let c = [
            self.at(x0, y0),
            self.at(x0 + 1, y0),
            self.at(x0, y0 + 1),
            self.at(x0 + 1, y0 + 1),
        ];
        Ok((c, fx, fy))
    }

    /// Bilinear interpolation of the four surrounding nodes.
    pub fn sample(&self, p: &Pixel) -> Result<f64, CostMapError> {
        let ([c00, c10, c01, c11], fx, fy) = self.cell(p)?;
        let top = c00 + fx * (c10 - c00);
        let bottom = c01 + fx * (c11 - c01);
        Ok(top + fy * (bottom - top))
    }

    /// Analytic gradient `(∂/∂u, ∂/∂v)` of the bilinear surface.
    pub fn sample_gradient(&self, p: &Pixel) -> Result<[f64; 2], CostMapError> {
        let ([c00, c10, c01, c11], fx, fy) = self.cell(p)?;
        let du = (1.0 - fy) * (c10 - c00) + fy * (c11 - c01);
        let dv = (1.0 - fx) * (c01 - c00) + fx * (c11 - c10);
        Ok([du, dv])
    }

    /// 8-bit rendering with `[0, τ]` mapped linearly onto `[0, 255]`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.cost
            .iter()
            .map(|c| (c / self.truncation * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}
