//! Binary PGM (P5) and PPM (P6) reading and writing.

use std::io::Write;
use std::path::Path;

use super::{GrayImage, ImagingError};

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0; 3]; width * height],
        }
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.to_u8().into_iter().map(|g| [g, g, g]).collect(),
        }
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B`, rounded to nearest.
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .iter()
            .map(|[r, g, b]| {
                (0.299 * f64::from(*r) + 0.587 * f64::from(*g) + 0.114 * f64::from(*b)).round()
            })
            .collect();
        GrayImage::from_vec(self.width, self.height, data).expect("dimensions preserved")
    }

    pub fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            self.data[y * self.width + x] = c;
        }
    }

    /// Filled square of side `2 * half + 1` centred on the nearest pixel.
    pub fn draw_square(&mut self, u: f64, v: f64, half: isize, c: [u8; 3]) {
        let (cx, cy) = (u.round() as isize, v.round() as isize);
        for dy in -half..=half {
            for dx in -half..=half {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 {
                    self.put(x as usize, y as usize, c);
                }
            }
        }
    }
}

/// A decoded PNM file.
#[derive(Debug, Clone, PartialEq)]
pub enum PnmImage {
    /// P5 samples; 16-bit files keep their full range.
    Gray {
        width: usize,
        height: usize,
        maxval: u16,
        samples: Vec<u16>,
    },
    Rgb(RgbImage),
}

impl PnmImage {
    pub fn width(&self) -> usize {
        match self {
            PnmImage::Gray { width, .. } => *width,
            PnmImage::Rgb(img) => img.width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            PnmImage::Gray { height, .. } => *height,
            PnmImage::Rgb(img) => img.height,
        }
    }

    /// Grayscale view; 8-bit gray is taken as-is, RGB goes through luma.
    pub fn to_gray(&self) -> GrayImage {
        match self {
            PnmImage::Gray {
                width,
                height,
                samples,
                ..
            } => GrayImage::from_vec(*width, *height, samples.iter().map(|&s| f64::from(s)).collect())
                .expect("dimensions preserved"),
            PnmImage::Rgb(img) => img.to_gray(),
        }
    }

    /// RGB view for drawing overlays.
    pub fn to_rgb(&self) -> RgbImage {
        match self {
            PnmImage::Rgb(img) => img.clone(),
            PnmImage::Gray {
                width,
                height,
                maxval,
                samples,
            } => {
                let scale = 255.0 / f64::from(*maxval);
                RgbImage {
                    width: *width,
                    height: *height,
                    data: samples
                        .iter()
                        .map(|&s| {
                            let g = (f64::from(s) * scale).round().clamp(0.0, 255.0) as u8;
                            [g, g, g]
                        })
                        .collect(),
                }
            }
        }
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&str, ImagingError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImagingError::Pnm("truncated header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| ImagingError::Pnm("header is not ASCII".into()))
    }

    fn number(&mut self) -> Result<usize, ImagingError> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| ImagingError::Pnm(format!("bad header field {tok:?}")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<PnmImage, ImagingError> {
    let mut hdr = HeaderReader { bytes, pos: 0 };
    let magic = hdr.token()?.to_owned();
    let width = hdr.number()?;
    let height = hdr.number()?;
    let maxval = hdr.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(ImagingError::Pnm(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates header and raster
    hdr.pos += 1;
    let raster = bytes.get(hdr.pos..).unwrap_or(&[]);
    let wide = maxval > 255;
    let sample_bytes = if wide { 2 } else { 1 };
    match magic.as_str() {
        "P5" => {
            let need = width * height * sample_bytes;
            if raster.len() < need {
                return Err(ImagingError::Pnm(format!(
                    "raster holds {} bytes, expected {need}",
                    raster.len()
                )));
            }
            let samples = if wide {
                raster[..need]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]))
                    .collect()
            } else {
                raster[..need].iter().map(|&b| u16::from(b)).collect()
            };
            Ok(PnmImage::Gray {
                width,
                height,
                maxval: maxval as u16,
                samples,
            })
        }
        "P6" => {
            if wide {
                return Err(ImagingError::Pnm("16-bit PPM not supported".into()));
            }
            let need = width * height * 3;
            if raster.len() < need {
                return Err(ImagingError::Pnm(format!(
                    "raster holds {} bytes, expected {need}",
                    raster.len()
                )));
            }
            let data = raster[..need]
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect();
            Ok(PnmImage::Rgb(RgbImage {
                width,
                height,
                data,
            }))
        }
        other => Err(ImagingError::Pnm(format!("unsupported magic {other:?}"))),
    }
}

pub fn read_pnm(path: &Path) -> Result<PnmImage, ImagingError> {
    let bytes = std::fs::read(path)?;
    decode_pnm(&bytes).map_err(|e| match e {
        ImagingError::Pnm(msg) => ImagingError::Pnm(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn encode_pgm8(width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    out
}

pub fn encode_pgm16(width: usize, height: usize, samples: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for px in &img.data {
        out.extend_from_slice(px);
    }
    out
}

pub fn write_pgm8(w: &mut impl Write, width: usize, height: usize, samples: &[u8]) -> std::io::Result<()> {
    w.write_all(&encode_pgm8(width, height, samples))
}

pub fn write_pgm16(
    w: &mut impl Write,
    width: usize,
    height: usize,
    samples: &[u16],
) -> std::io::Result<()> {
    w.write_all(&encode_pgm16(width, height, samples))
}

pub fn write_ppm(w: &mut impl Write, img: &RgbImage) -> std::io::Result<()> {
    w.write_all(&encode_ppm(img))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm8_round_trip_with_comment() {
        let mut bytes = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 10, 20, 30, 40, 255]);
        let img = decode_pnm(&bytes).unwrap();
        let gray = img.to_gray();
        assert_eq!(gray.get(2, 1), 255.0);
        assert_eq!(encode_pgm8(3, 2, &gray.to_u8()), {
            let mut e = b"P5\n3 2\n255\n".to_vec();
            e.extend_from_slice(&[0, 10, 20, 30, 40, 255]);
            e
        });
    }

    #[test]
    fn pgm16_round_trip() {
        let samples = [0u16, 1, 65535, 1234];
        let img = decode_pnm(&encode_pgm16(2, 2, &samples)).unwrap();
        match img {
            PnmImage::Gray { maxval, samples: s, .. } => {
                assert_eq!(maxval, 65535);
                assert_eq!(s, samples);
            }
            _ => panic!("expected gray"),
        }
    }

    #[test]
    fn ppm_luma_rounds_to_nearest() {
        let rgb = RgbImage {
            width: 2,
            height: 1,
            data: vec![[255, 0, 0], [10, 200, 30]],
        };
        let back = decode_pnm(&encode_ppm(&rgb)).unwrap();
        assert_eq!(back, PnmImage::Rgb(rgb.clone()));
        let gray = rgb.to_gray();
        // 0.299*255 = 76.245 ; 0.299*10 + 0.587*200 + 0.114*30 = 123.81
        assert_eq!(gray.data(), &[76.0, 124.0]);
    }

    #[test]
    fn truncated_raster_is_an_error() {
        let bytes = b"P5\n4 4\n255\n\x00\x01".to_vec();
        assert!(decode_pnm(&bytes).is_err());
        assert!(decode_pnm(b"P3\n1 1\n255\n0").is_err());
    }
}
