//! Grayscale images and the Canny edge detector.
//!
//! The detector runs four stages: Gaussian smoothing, 2×2 finite-difference
//! gradients, non-maximum suppression along the quantized gradient direction,
//! and hysteresis tracking.
//!
//! The 2×2 stencil at `(row i, col j)` spans pixels `i..=i+1 × j..=j+1`, so
//! every gradient cell (and every edge pixel derived from it) sits half a
//! pixel down and right of the pixel centre it is indexed by. [`EdgeMap`]
//! records that as its `offset`.

mod pnm;

pub use pnm::{
    decode_pnm, encode_pgm16, encode_pgm8, encode_ppm, read_pnm, write_pgm16, write_pgm8, write_ppm, PnmImage, RgbImage,
};

use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_4, PI};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("invalid aperture {0}: must be 3, 5 or 7")]
    InvalidAperture(usize),
    #[error("image too small: {width}x{height} (need at least 2x2)")]
    ImageTooSmall { width: usize, height: usize },
    #[error("invalid canny parameters: {0}")]
    InvalidParams(String),
    #[error("pixel buffer has {len} values, expected {width}x{height}")]
    BadBuffer { len: usize, width: usize, height: usize },
    #[error("PNM error: {0}")]
    Pnm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Gain between the 2×2 stencil magnitude and the 3×3 Sobel magnitude for an
/// unsmoothed unit step. Hysteresis thresholds are quoted on the Sobel scale
/// and divided by this before being compared with stencil magnitudes.
pub const STENCIL_TO_SOBEL_GAIN: f64 = 4.0;

/// Row-major grayscale image with real-valued intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if data.len() != width * height {
            return Err(ImagingError::BadBuffer {
                len: data.len(),
                width,
                height,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImagingError::Pnm("non-finite intensity".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, ImagingError> {
        Self::from_vec(width, height, bytes.iter().map(|&b| f64::from(b)).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Rounded and clamped to 8 bits.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Gradient magnitude and direction per 2×2 stencil cell.
///
/// `direction` holds `atan(I_y / I_x) - 3π/4` reduced into `[0, π)`.
/// Cells in the last row and column have no stencil and are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub ix: Vec<f64>,
    pub iy: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub direction: Vec<f64>,
    pub valid: Vec<bool>,
}

impl GradientField {
    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn magnitude_at(&self, x: usize, y: usize) -> f64 {
        self.magnitude[self.idx(x, y)]
    }

    /// Count of cells with non-zero magnitude.
    pub fn nonzero_count(&self) -> usize {
        self.magnitude.iter().filter(|m| **m > 0.0).count()
    }
}

/// Binary edge image plus the list of edge pixels, in row-major order.
///
/// `offset` is the image-plane coordinate of grid node `(0, 0)`: edge pixel
/// `(x, y)` sits at continuous pixel `(x + offset, y + offset)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    grid: Vec<bool>,
    pixels: Vec<(usize, usize)>,
    offset: f64,
}

impl EdgeMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            grid: vec![false; width * height],
            pixels: Vec::new(),
            offset: 0.0,
        }
    }

    /// Builds from a boolean grid; the pixel list is derived from it.
    pub fn from_grid(width: usize, height: usize, grid: Vec<bool>, offset: f64) -> Self {
        assert_eq!(grid.len(), width * height, "edge grid size mismatch");
        let pixels = grid
            .iter()
            .enumerate()
            .filter(|(_, e)| **e)
            .map(|(i, _)| (i % width, i / width))
            .collect();
        Self {
            width,
            height,
            grid,
            pixels,
            offset,
        }
    }

    /// Builds from `(x, y)` coordinates; out-of-bounds entries are dropped.
    pub fn from_pixels(width: usize, height: usize, pts: &[(usize, usize)]) -> Self {
        let mut grid = vec![false; width * height];
        for &(x, y) in pts {
            if x < width && y < height {
                grid[y * width + x] = true;
            }
        }
        Self::from_grid(width, height, grid, 0.0)
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn grid(&self) -> &[bool] {
        &self.grid
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.grid[y * self.width + x]
    }

    /// True when every edge in `other` is also an edge here.
    pub fn is_superset_of(&self, other: &EdgeMap) -> bool {
        other.pixels.iter().all(|&(x, y)| self.is_edge(x, y))
    }
}

/// Canny tunables. `high = ratio * low`; both thresholds are on the Sobel
/// scale (see [`STENCIL_TO_SOBEL_GAIN`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub low_threshold: f64,
    pub ratio: f64,
    pub aperture: usize,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            low_threshold: 50.0,
            ratio: 3.0,
            aperture: 3,
        }
    }
}

impl CannyParams {
    pub fn high_threshold(&self) -> f64 {
        self.ratio * self.low_threshold
    }

    pub fn validate(&self) -> Result<(), ImagingError> {
        check_aperture(self.aperture)?;
        if !(self.low_threshold.is_finite() && self.low_threshold > 0.0) {
            return Err(ImagingError::InvalidParams(format!(
                "low threshold must be positive, got {}",
                self.low_threshold
            )));
        }
        if !(2.0..=3.0).contains(&self.ratio) {
            return Err(ImagingError::InvalidParams(format!(
                "high/low ratio must lie in [2, 3], got {}",
                self.ratio
            )));
        }
        Ok(())
    }
}

fn check_aperture(aperture: usize) -> Result<(), ImagingError> {
    match aperture {
        3 | 5 | 7 => Ok(()),
        other => Err(ImagingError::InvalidAperture(other)),
    }
}

/// Sigma used for a given aperture: `0.3 ((k - 1) / 2 - 1) + 0.8`.
pub fn aperture_sigma(aperture: usize) -> f64 {
    0.3 * ((aperture as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

/// Normalized 1-D Gaussian taps for an aperture.
pub fn gaussian_kernel(aperture: usize) -> Result<Vec<f64>, ImagingError> {
    check_aperture(aperture)?;
    let sigma = aperture_sigma(aperture);
    let half = (aperture / 2) as isize;
    let taps: Vec<f64> = (-half..=half)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / sum).collect())
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_smooth(img: &GrayImage, aperture: usize) -> Result<GrayImage, ImagingError> {
    let kernel = gaussian_kernel(aperture)?;
    let half = (aperture / 2) as isize;
    let (w, h) = (img.width, img.height);
    if w == 0 || h == 0 {
        return Ok(img.clone());
    }
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut horiz = vec![0.0; w * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, tap) in kernel.iter().enumerate() {
                acc += tap * row[clampi(x as isize + k as isize - half, w)];
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, tap) in kernel.iter().enumerate() {
                acc += tap * horiz[clampi(y as isize + k as isize - half, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    Ok(GrayImage {
        width: w,
        height: h,
        data: out,
    })
}

/// 2×2 finite-difference gradients:
///
/// ```text
/// I_x(i,j) = (I(i,j+1) - I(i,j) + I(i+1,j+1) - I(i+1,j)) / 2
/// I_y(i,j) = (I(i,j+1) - I(i+1,j+1) + I(i,j) - I(i+1,j)) / 2
/// M = sqrt(I_x² + I_y²),  θ = atan(I_y / I_x) - 3π/4  (mod π)
/// ```
///
/// with `i` the row and `j` the column.
pub fn gradients(img: &GrayImage) -> Result<GradientField, ImagingError> {
    let (w, h) = (img.width, img.height);
    if w < 2 || h < 2 {
        return Err(ImagingError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let n = w * h;
    let mut g = GradientField {
        width: w,
        height: h,
        ix: vec![0.0; n],
        iy: vec![0.0; n],
        magnitude: vec![0.0; n],
        direction: vec![0.0; n],
        valid: vec![false; n],
    };
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let a = img.get(j, i);
            let b = img.get(j + 1, i);
            let c = img.get(j, i + 1);
            let d = img.get(j + 1, i + 1);
            let ix = (b - a + d - c) / 2.0;
            let iy = (b - d + a - c) / 2.0;
            let k = i * w + j;
            g.ix[k] = ix;
            g.iy[k] = iy;
            g.magnitude[k] = (ix * ix + iy * iy).sqrt();
            // atan2 differs from atan(I_y/I_x) by multiples of π only
            g.direction[k] = (iy.atan2(ix) - 0.75 * PI).rem_euclid(PI);
            g.valid[k] = true;
        }
    }
    Ok(g)
}

/// Direction bin 0..4 (0°, 45°, 90°, 135° in image axes, rows pointing down)
/// from a stored θ.
///
/// θ carries the `-3π/4` offset and the upward sign of `I_y`; undoing both
/// gives the gradient angle `α = -θ - 3π/4 (mod π)` in column/row axes.
pub fn direction_bin(theta: f64) -> usize {
    let alpha = (-theta - 0.75 * PI).rem_euclid(PI);
    ((alpha / FRAC_PI_4).round() as usize) % 4
}

/// `(dx, dy)` step toward the positive-direction neighbour of a bin.
fn bin_step(bin: usize) -> (isize, isize) {
    match bin {
        0 => (1, 0),
        1 => (1, 1),
        2 => (0, 1),
        _ => (-1, 1),
    }
}

/// Non-maximum suppression.
///
/// A cell survives when its magnitude is strictly greater than the neighbour
/// in the positive gradient direction and at least the neighbour in the
/// negative direction. Cells without both neighbours are zeroed.
pub fn non_max_suppress(g: &GradientField) -> GradientField {
    let (w, h) = (g.width, g.height);
    let mut out = g.clone();
    out.magnitude.iter_mut().for_each(|m| *m = 0.0);
    for y in 0..h {
        for x in 0..w {
            let k = g.idx(x, y);
            let m = g.magnitude[k];
            if !g.valid[k] || m <= 0.0 {
                continue;
            }
            let (dx, dy) = bin_step(direction_bin(g.direction[k]));
            let pos = neighbour(g, x, y, dx, dy);
            let neg = neighbour(g, x, y, -dx, -dy);
            if let (Some(pos), Some(neg)) = (pos, neg) {
                if m > pos && m >= neg {
                    out.magnitude[k] = m;
                }
            }
        }
    }
    out
}

fn neighbour(g: &GradientField, x: usize, y: usize, dx: isize, dy: isize) -> Option<f64> {
    let nx = x as isize + dx;
    let ny = y as isize + dy;
    if nx < 0 || ny < 0 || nx >= g.width as isize || ny >= g.height as isize {
        return None;
    }
    let k = g.idx(nx as usize, ny as usize);
    g.valid[k].then_some(g.magnitude[k])
}

/// Hysteresis with thresholds compared directly against the field magnitude.
///
/// Cells above `high` seed; cells in `(low, high]` are kept when 8-connected to
/// a seed through cells above `low`.
pub fn hysteresis_raw(g: &GradientField, low: f64, high: f64) -> EdgeMap {
    let (w, h) = (g.width, g.height);
    let mut keep = vec![false; w * h];
    let mut queue = VecDeque::new();
    for k in 0..w * h {
        if g.magnitude[k] > high && !keep[k] {
            keep[k] = true;
            queue.push_back(k);
            while let Some(c) = queue.pop_front() {
                let (cx, cy) = ((c % w) as isize, (c / w) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (cx + dx, cy + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let nk = ny as usize * w + nx as usize;
                        if !keep[nk] && g.magnitude[nk] > low {
                            keep[nk] = true;
                            queue.push_back(nk);
                        }
                    }
                }
            }
        }
    }
    EdgeMap::from_grid(w, h, keep, 0.5)
}

/// Hysteresis with thresholds taken from `p` as-is (stencil scale).
pub fn hysteresis(g: &GradientField, p: &CannyParams) -> EdgeMap {
    hysteresis_raw(g, p.low_threshold, p.high_threshold())
}

/// Zeroes magnitudes within `margin` cells of the image border.
fn suppress_border(g: &mut GradientField, margin: usize) {
    let (w, h) = (g.width, g.height);
    for y in 0..h {
        for x in 0..w {
            let interior = x >= margin && y >= margin && x + 1 + margin < w && y + 1 + margin < h;
            if !interior {
                let k = g.idx(x, y);
                g.magnitude[k] = 0.0;
            }
        }
    }
}

/// NMS output before hysteresis, with the border band cleared.
pub fn canny_candidates(img: &GrayImage, p: &CannyParams) -> Result<GradientField, ImagingError> {
    p.validate()?;
    let smoothed = gaussian_smooth(img, p.aperture)?;
    let g = gradients(&smoothed)?;
    let mut thin = non_max_suppress(&g);
    suppress_border(&mut thin, (p.aperture / 2).max(1));
    Ok(thin)
}

/// Full detector: smooth, gradients, NMS, hysteresis.
pub fn canny(img: &GrayImage, p: &CannyParams) -> Result<EdgeMap, ImagingError> {
    let thin = canny_candidates(img, p)?;
    Ok(hysteresis_raw(
        &thin,
        p.low_threshold / STENCIL_TO_SOBEL_GAIN,
        p.high_threshold() / STENCIL_TO_SOBEL_GAIN,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn step_image(w: usize, h: usize, step_col: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, _| if x < step_col { 0.0 } else { 255.0 })
    }

    #[test]
    fn smoothing_constant_is_identity() {
        let img = GrayImage::new(9, 7, 128.0);
        for k in [3, 5, 7] {
            let out = gaussian_smooth(&img, k).unwrap();
            assert!(out.data().iter().all(|v| (v - 128.0).abs() < 1e-12));
        }
    }

    #[test]
    fn smoothing_impulse_mass_is_preserved() {
        let mut img = GrayImage::new(9, 9, 0.0);
        img.set(4, 4, 1000.0);
        let out = gaussian_smooth(&img, 3).unwrap();
        let total: f64 = out.data().iter().sum();
        assert_relative_eq!(total, 1000.0, epsilon = 1e-6);
        let stamp: f64 = (3..=5)
            .flat_map(|y| (3..=5).map(move |x| (x, y)))
            .map(|(x, y)| out.get(x, y))
            .sum();
        assert_relative_eq!(stamp, 1000.0, epsilon = 1e-6);
        assert_eq!(out.get(2, 4), 0.0);
    }

    #[test]
    fn smoothing_rejects_bad_aperture() {
        let img = GrayImage::new(4, 4, 0.0);
        for k in [0, 1, 2, 4, 9] {
            assert!(matches!(
                gaussian_smooth(&img, k),
                Err(ImagingError::InvalidAperture(_))
            ));
        }
    }

    /// Brute-force 2-D convolution with the outer-product kernel.
    fn convolve_2d(img: &GrayImage, aperture: usize) -> GrayImage {
        let sigma = aperture_sigma(aperture);
        let half = (aperture / 2) as isize;
        let mut weights = Vec::new();
        for dy in -half..=half {
            for dx in -half..=half {
                weights.push((dx, dy, (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()));
            }
        }
        let norm: f64 = weights.iter().map(|w| w.2).sum();
        GrayImage::from_fn(img.width(), img.height(), |x, y| {
            weights
                .iter()
                .map(|&(dx, dy, wt)| {
                    let sx = (x as isize + dx).clamp(0, img.width() as isize - 1) as usize;
                    let sy = (y as isize + dy).clamp(0, img.height() as isize - 1) as usize;
                    wt * img.get(sx, sy)
                })
                .sum::<f64>()
                / norm
        })
    }

    #[test]
    fn smoothing_step_is_monotone_ramp_and_matches_2d_convolution() {
        let img = step_image(16, 6, 8);
        for k in [3, 5, 7] {
            let out = gaussian_smooth(&img, k).unwrap();
            let oracle = convolve_2d(&img, k);
            for (a, b) in out.data().iter().zip(oracle.data()) {
                assert!((a - b).abs() < 1e-9);
            }
            for y in 0..6 {
                for x in 1..16 {
                    assert!(out.get(x, y) >= out.get(x - 1, y));
                }
                assert!(out.get(0, y) >= -1e-9 && out.get(15, y) <= 255.0 + 1e-9);
            }
        }
    }

    #[test]
    fn gradients_of_constant_are_zero() {
        let g = gradients(&GrayImage::new(5, 5, 77.0)).unwrap();
        assert!(g.magnitude.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn gradients_vertical_step_by_hand() {
        // columns 0,1 dark; 2,3 bright
        let img = step_image(4, 4, 2);
        let g = gradients(&img).unwrap();
        for i in 0..3 {
            assert_eq!(g.iy[g.idx(1, i)], 0.0);
            assert_eq!(g.ix[g.idx(1, i)], 255.0);
            assert_eq!(g.ix[g.idx(0, i)], 0.0);
            assert_eq!(g.ix[g.idx(2, i)], 0.0);
        }
        assert!(!g.valid[g.idx(3, 0)]);
        assert!(!g.valid[g.idx(0, 3)]);
    }

    #[test]
    fn gradients_diagonal_ramp_constant_on_interior() {
        let img = GrayImage::from_fn(8, 8, |x, y| 10.0 * (x + y) as f64);
        let g = gradients(&img).unwrap();
        // brute-force stencil on the ramp: I_x = 10, I_y = (10 - 20 + 0 - 10)/2 = -10
        for i in 0..7 {
            for j in 0..7 {
                let k = g.idx(j, i);
                assert_relative_eq!(g.ix[k], 10.0);
                assert_relative_eq!(g.iy[k], -10.0);
                assert_relative_eq!(g.magnitude[k], 200f64.sqrt());
                assert_relative_eq!(g.direction[k], g.direction[0]);
            }
        }
        // down-right gradient lands in the 45° bin
        assert_eq!(direction_bin(g.direction[0]), 1);
    }

    #[test]
    fn gradients_too_small() {
        assert!(matches!(
            gradients(&GrayImage::new(1, 5, 0.0)),
            Err(ImagingError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn direction_bins_cover_axes() {
        let horizontal_step = GrayImage::from_fn(4, 4, |_, y| if y < 2 { 0.0 } else { 255.0 });
        let g = gradients(&horizontal_step).unwrap();
        assert_eq!(direction_bin(g.direction[g.idx(1, 1)]), 2);
        let g = gradients(&step_image(4, 4, 2)).unwrap();
        assert_eq!(direction_bin(g.direction[g.idx(1, 1)]), 0);
        // intensity rising toward lower-left
        let anti = GrayImage::from_fn(6, 6, |x, y| 10.0 * (y as f64 - x as f64) + 100.0);
        let g = gradients(&anti).unwrap();
        assert_eq!(direction_bin(g.direction[g.idx(2, 2)]), 3);
    }

    fn field_from(w: usize, h: usize, mags: &[f64], bin: usize) -> GradientField {
        // pick (ix, iy) pointing along the requested bin
        let (ix, iy) = match bin {
            0 => (1.0, 0.0),
            1 => (1.0, -1.0),
            2 => (0.0, -1.0),
            _ => (-1.0, -1.0),
        };
        let theta = (f64::atan2(iy, ix) - 0.75 * PI).rem_euclid(PI);
        GradientField {
            width: w,
            height: h,
            ix: vec![ix; w * h],
            iy: vec![iy; w * h],
            magnitude: mags.to_vec(),
            direction: vec![theta; w * h],
            valid: vec![true; w * h],
        }
    }

    #[test]
    fn nms_keeps_isolated_maximum() {
        let mut m = vec![0.0; 25];
        m[12] = 9.0;
        for bin in 0..4 {
            let out = non_max_suppress(&field_from(5, 5, &m, bin));
            assert_eq!(out.magnitude[12], 9.0);
            assert_eq!(out.nonzero_count(), 1);
        }
    }

    /// Enumerates every ordering of (neg, centre, pos) along each bin and
    /// checks the tie rule `centre > pos && centre >= neg`.
    #[test]
    fn nms_tie_rule_enumeration() {
        let levels = [1.0, 2.0, 3.0];
        for bin in 0..4 {
            let (dx, dy) = bin_step(bin);
            for &neg in &levels {
                for &c in &levels {
                    for &pos in &levels {
                        let mut m = vec![0.0; 9];
                        m[4] = c;
                        m[((1 + dy) * 3 + 1 + dx) as usize] = pos;
                        m[((1 - dy) * 3 + 1 - dx) as usize] = neg;
                        let out = non_max_suppress(&field_from(3, 3, &m, bin));
                        let kept = out.magnitude[4] > 0.0;
                        assert_eq!(kept, c > pos && c >= neg, "bin {bin} {neg} {c} {pos}");
                    }
                }
            }
        }
    }

    #[test]
    fn nms_plateau_is_thinned_to_one() {
        // plateau of three equal cells across a vertical ridge
        let w = 7;
        let mags: Vec<f64> = (0..w * 3)
            .map(|k| if (2..=4).contains(&(k % w)) { 5.0 } else { 0.0 })
            .collect();
        let out = non_max_suppress(&field_from(w, 3, &mags, 0));
        assert_eq!(out.magnitude[w + 4], 5.0);
        assert_eq!(out.magnitude[w + 2], 0.0);
        assert_eq!(out.magnitude[w + 3], 0.0);
    }

    #[test]
    fn nms_smoothed_step_leaves_one_column() {
        let img = step_image(20, 10, 9);
        let g = gradients(&gaussian_smooth(&img, 3).unwrap()).unwrap();
        let thin = non_max_suppress(&g);
        let cols: std::collections::BTreeSet<usize> = (0..20 * 10)
            .filter(|&k| thin.magnitude[k] > 0.0)
            .map(|k| k % 20)
            .collect();
        assert_eq!(cols.into_iter().collect::<Vec<_>>(), vec![8]);
    }

    #[test]
    fn hysteresis_examples() {
        let w = 8;
        let field = |m: Vec<f64>| field_from(w, 3, &m, 0);
        // all below low
        let e = hysteresis_raw(&field(vec![1.0; 24]), 5.0, 10.0);
        assert!(e.is_empty());

        // single chain on row 1 with one strong pixel
        let mut m = vec![0.0; 24];
        for x in 1..7 {
            m[w + x] = 6.0;
        }
        m[w + 3] = 12.0;
        let e = hysteresis_raw(&field(m.clone()), 5.0, 10.0);
        assert_eq!(e.pixels(), &[(1, 1), (2, 1), (3, 1), (4, 1), (5, 1), (6, 1)]);

        // two chains, only one seeded
        let mut m = vec![0.0; 24];
        m[1] = 6.0;
        m[2] = 12.0;
        m[2 * w + 5] = 6.0;
        m[2 * w + 6] = 7.0;
        let e = hysteresis_raw(&field(m), 5.0, 10.0);
        assert_eq!(e.pixels(), &[(1, 0), (2, 0)]);
    }

    #[test]
    fn canny_constant_image_is_empty() {
        let e = canny(&GrayImage::new(32, 32, 200.0), &CannyParams::default()).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn canny_finds_box_outline() {
        let img = GrayImage::from_fn(40, 40, |x, y| {
            if (10..30).contains(&x) && (10..30).contains(&y) {
                220.0
            } else {
                40.0
            }
        });
        let e = canny(&img, &CannyParams::default()).unwrap();
        assert!(!e.is_empty());
        // stencil cells straddle the boundary between pixel 9 and 10 (and 29/30)
        assert!(e.is_edge(9, 20));
        assert!(e.is_edge(29, 20));
        assert!(e.is_edge(20, 9));
        assert!(e.is_edge(20, 29));
        assert_eq!(e.offset(), 0.5);
    }

    #[test]
    fn canny_rejects_bad_params() {
        let img = GrayImage::new(8, 8, 0.0);
        let bad = [
            CannyParams {
                aperture: 4,
                ..Default::default()
            },
            CannyParams {
                ratio: 5.0,
                ..Default::default()
            },
            CannyParams {
                low_threshold: -1.0,
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(canny(&img, &p).is_err());
        }
    }

    fn texture_candidates(aperture: usize) -> usize {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data = (0..96 * 96).map(|_| rng.random_range(0.0..255.0)).collect();
        let img = GrayImage::from_vec(96, 96, data).unwrap();
        let p = CannyParams { aperture, ..CannyParams::default() };
        let thin = canny_candidates(&img, &p).unwrap();
        thin.magnitude.iter().filter(|m| **m > p.low_threshold / STENCIL_TO_SOBEL_GAIN).count()
    }

    #[test]
    fn larger_aperture_keeps_at_least_as_many_texture_candidates() {
        let counts: Vec<usize> = [3, 5, 7].into_iter().map(texture_candidates).collect();
        assert!(counts.windows(2).all(|c| c[1] >= c[0]), "candidates by aperture 3/5/7: {counts:?}");
    }

    #[test]
    fn border_pixels_never_edges() {
        // strong step right at the image border
        let img = GrayImage::from_fn(12, 12, |x, _| if x == 0 { 255.0 } else { 0.0 });
        let e = canny(&img, &CannyParams::default()).unwrap();
        for &(x, y) in e.pixels() {
            assert!(x >= 1 && y >= 1 && x + 2 < 12 && y + 2 < 12);
        }
    }
}
