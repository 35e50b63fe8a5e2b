//! Portable graymap/pixmap output and the top-down evaluation error raster.

use std::io::Write;
use std::path::Path;

use crate::bev::BevConfig;
use crate::error::{Error, Result};
use crate::label::{LabelCode, Point};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Min-max rescales `values` (row-major) to `0..=255`. A constant input maps to all zeros.
    /// Returns the image and the `(min, max)` it was scaled from.
    pub fn from_scaled(height: usize, width: usize, values: &[f64]) -> (Self, f64, f64) {
        assert_eq!(values.len(), height * width);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let pixels = values
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        let (lo, hi) = if values.is_empty() { (0.0, 0.0) } else { (lo, hi) };
        (
            GrayImage {
                height,
                width,
                pixels,
            },
            lo,
            hi,
        )
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_pgm_bytes())
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (width, height, body) = parse_pnm(&bytes, b"P5", path)?;
        if body.len() != width * height {
            return Err(Error::format(path, "pixel data length mismatch"));
        }
        Ok(GrayImage {
            height,
            width,
            pixels: body.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        RgbImage {
            height,
            width,
            pixels: vec![[0, 0, 0]; height * width],
        }
    }

    pub fn count(&self, color: [u8; 3]) -> usize {
        self.pixels.iter().filter(|&&p| p == color).count()
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_ppm_bytes())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (width, height, body) = parse_pnm(&bytes, b"P6", path)?;
        if body.len() != 3 * width * height {
            return Err(Error::format(path, "pixel data length mismatch"));
        }
        Ok(RgbImage {
            height,
            width,
            pixels: body.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn parse_pnm<'a>(bytes: &'a [u8], magic: &[u8], path: &Path) -> Result<(usize, usize, &'a [u8])> {
    // Header is four whitespace-separated tokens: magic, width, height, maxval.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated header"));
        }
        tokens.push(&bytes[start..pos]);
    }
    pos += 1;
    if tokens[0] != magic {
        return Err(Error::format(path, "unexpected magic"));
    }
    let num = |t: &[u8]| {
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::format(path, "bad header number"))
    };
    let (w, h) = (num(tokens[1])?, num(tokens[2])?);
    if num(tokens[3])? != 255 || pos > bytes.len() {
        return Err(Error::format(path, "unsupported maxval"));
    }
    Ok((w, h, &bytes[pos..]))
}

pub const GRAY: [u8; 3] = [128, 128, 128];
pub const RED: [u8; 3] = [255, 0, 0];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ErrorMapLegend {
    pub correct_points: usize,
    pub incorrect_points: usize,
    pub gray_pixels: usize,
    pub red_pixels: usize,
    pub out_of_extent_points: usize,
}

impl ErrorMapLegend {
    pub fn to_text(&self) -> String {
        format!(
            "correct_points {}\nincorrect_points {}\ngray_pixels {}\nred_pixels {}\nout_of_extent_points {}\n",
            self.correct_points,
            self.incorrect_points,
            self.gray_pixels,
            self.red_pixels,
            self.out_of_extent_points
        )
    }
}

/// Top-down raster of labeled points: a pillar is red if any point in it is mispredicted,
/// gray if all its points are correct, black if empty. Row 0 is the top of the image
/// (largest y), so the picture reads like a map.
pub fn error_map(
    points: &[Point],
    truth: &[LabelCode],
    predicted: &[LabelCode],
    config: &BevConfig,
) -> Result<(RgbImage, ErrorMapLegend)> {
    if truth.len() != points.len() || predicted.len() != points.len() {
        return Err(Error::Arity {
            what: "labels per point",
            expected: points.len(),
            actual: truth.len().min(predicted.len()),
        });
    }
    let mut img = RgbImage::new(config.height, config.width);
    let mut legend = ErrorMapLegend::default();
    for ((p, t), q) in points.iter().zip(truth).zip(predicted) {
        let Some((row, col)) = crate::bev::point_to_pixel(p.x, p.y, config) else {
            legend.out_of_extent_points += 1;
            continue;
        };
        let idx = (config.height - 1 - row) * config.width + col;
        if t == q {
            legend.correct_points += 1;
            if img.pixels[idx] != RED {
                img.pixels[idx] = GRAY;
            }
        } else {
            legend.incorrect_points += 1;
            img.pixels[idx] = RED;
        }
    }
    legend.gray_pixels = img.count(GRAY);
    legend.red_pixels = img.count(RED);
    Ok((img, legend))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_plane_scales_to_single_level() {
        let (img, lo, hi) = GrayImage::from_scaled(2, 3, &[4.0; 6]);
        assert!(img.pixels.iter().all(|&p| p == img.pixels[0]));
        assert_eq!((lo, hi), (4.0, 4.0));
    }

    #[test]
    fn min_max_rescale() {
        let (img, lo, hi) = GrayImage::from_scaled(1, 3, &[-1.0, 0.0, 1.0]);
        assert_eq!(img.pixels, vec![0, 128, 255]);
        assert_eq!((lo, hi), (-1.0, 1.0));
    }

    #[test]
    fn pgm_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (g, _, _) = GrayImage::from_scaled(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        let p = dir.path().join("a.pgm");
        g.write_pgm(&p).unwrap();
        assert_eq!(GrayImage::read_pgm(&p).unwrap(), g);
        let mut c = RgbImage::new(2, 3);
        c.pixels[4] = RED;
        let p = dir.path().join("a.ppm");
        c.write_ppm(&p).unwrap();
        assert_eq!(RgbImage::read_ppm(&p).unwrap(), c);
    }

    fn grid_points() -> (Vec<Point>, BevConfig) {
        let cfg = BevConfig::centered(4, 4, 1.0).unwrap();
        // Two points share pillar (row 2, col 2); one other pillar; one outside.
        let pts = vec![
            Point::new(0.2, 0.2, 0.0, 0.1),
            Point::new(0.7, 0.4, 0.0, 0.1),
            Point::new(-1.5, -1.5, 0.0, 0.1),
            Point::new(9.0, 9.0, 0.0, 0.1),
        ];
        (pts, cfg)
    }

    #[test]
    fn perfect_predictions_have_no_red() {
        let (pts, cfg) = grid_points();
        let gt = vec![1, 2, 3, 4];
        let (img, legend) = error_map(&pts, &gt, &gt, &cfg).unwrap();
        assert_eq!(img.count(RED), 0);
        assert_eq!(legend.gray_pixels, 2);
        assert_eq!(legend.out_of_extent_points, 1);
    }

    #[test]
    fn all_wrong_marks_every_occupied_pillar() {
        let (pts, cfg) = grid_points();
        let gt = vec![1, 2, 3, 4];
        let pred = vec![0, 0, 0, 0];
        let (_, legend) = error_map(&pts, &gt, &pred, &cfg).unwrap();
        assert_eq!(legend.red_pixels, 2);
        assert_eq!(legend.gray_pixels, 0);
    }

    #[test]
    fn one_wrong_point_turns_shared_pillar_red() {
        let (pts, cfg) = grid_points();
        let gt = vec![1, 2, 3, 4];
        let pred = vec![1, 0, 3, 4];
        let (_, legend) = error_map(&pts, &gt, &pred, &cfg).unwrap();
        assert_eq!((legend.red_pixels, legend.gray_pixels), (1, 1));
    }
}
