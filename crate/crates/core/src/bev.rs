//! Bird's-eye-view pillarization.
//!
//! Each occupied pillar carries `[mean 2Δx/l, mean 2Δy/l, Σ intensity]`, where Δ is the
//! point's offset from the pillar center and `l` the cell size. Cells are half-open
//! `[lo, hi)`, so a point exactly on the high edge of the grid is dropped.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Point;
use crate::render::GrayImage;

pub const BEV_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevConfig {
    pub height: usize,
    pub width: usize,
    /// Cell edge length in meters.
    pub cell: f64,
    /// x of the (row 0, col 0) cell corner, target-frame meters.
    pub origin_x: f64,
    /// y of the (row 0, col 0) cell corner, target-frame meters.
    pub origin_y: f64,
}

impl BevConfig {
    /// Grid centered on the target-frame sensor.
    pub fn centered(height: usize, width: usize, cell: f64) -> Result<Self> {
        let cfg = BevConfig {
            height,
            width,
            cell,
            origin_x: -(width as f64) * cell / 2.0,
            origin_y: -(height as f64) * cell / 2.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "BEV size must be at least 1x1, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.cell > 0.0 && self.cell.is_finite()) {
            return Err(Error::Config(format!("BEV cell size must be > 0, got {}", self.cell)));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::Config("BEV origin must be finite".into()));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Center of the pillar at `(row, col)`.
    pub fn pillar_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell,
            self.origin_y + (row as f64 + 0.5) * self.cell,
        )
    }

    /// Fractional grid coordinates `(u, v)` = cells from the origin along x and y.
    fn grid_coords(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let u = (x - self.origin_x) / self.cell;
        let v = (y - self.origin_y) / self.cell;
        let inside = u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64;
        inside.then_some((u, v))
    }

    /// Linear pixel index `row * width + col` for an in-extent point.
    pub fn pixel_index(&self, x: f64, y: f64) -> Option<usize> {
        point_to_pixel(x, y, self).map(|(r, c)| r * self.width + c)
    }
}

/// Pillar containing `(x, y)`, or `None` when outside the grid. Never wraps.
pub fn point_to_pixel(x: f64, y: f64, config: &BevConfig) -> Option<(usize, usize)> {
    let (u, v) = config.grid_coords(x, y)?;
    Some((v.floor() as usize, u.floor() as usize))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PillarStats {
    pub occupied: usize,
    pub binned: usize,
    pub dropped: usize,
}

/// Three-channel pillar map stored channel-major (`[3][H][W]`).
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid {
    pub data: Vec<f64>,
    pub config: BevConfig,
    pub frame_index: u32,
    pub stats: PillarStats,
}

impl BevGrid {
    pub fn zeros(config: BevConfig, frame_index: u32) -> Self {
        BevGrid {
            data: vec![0.0; BEV_CHANNELS * config.num_pixels()],
            config,
            frame_index,
            stats: PillarStats::default(),
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.config.num_pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn pillar(&self, row: usize, col: usize) -> [f64; 3] {
        let n = self.config.num_pixels();
        let i = row * self.config.width + col;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    /// Writes one binary PGM per channel (`<stem>_c{0,1,2}.pgm`) plus `<stem>_scale.txt`
    /// recording the min/max that each plane was rescaled from.
    pub fn dump_pgm(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let mut sidecar = String::from("# channel min max\n");
        for c in 0..BEV_CHANNELS {
            let (img, lo, hi) =
                GrayImage::from_scaled(self.config.height, self.config.width, self.channel(c));
            let path = dir.join(format!("{stem}_c{c}.pgm"));
            img.write_pgm(&path)?;
            written.push(path);
            let _ = writeln!(sidecar, "{c} {lo:e} {hi:e}");
        }
        let path = dir.join(format!("{stem}_scale.txt"));
        std::fs::write(&path, sidecar).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(written)
    }
}

/// Pillarizes a set of points (typically one aligned frame).
pub fn pillarize_points<'a>(
    points: impl IntoIterator<Item = &'a Point>,
    config: &BevConfig,
    frame_index: u32,
) -> BevGrid {
    let n = config.num_pixels();
    let mut sum_dx = vec![0.0; n];
    let mut sum_dy = vec![0.0; n];
    let mut sum_i = vec![0.0; n];
    let mut count = vec![0u32; n];
    let mut stats = PillarStats::default();
    for p in points {
        let Some((u, v)) = config.grid_coords(p.x, p.y) else {
            stats.dropped += 1;
            continue;
        };
        let (col, row) = (u.floor(), v.floor());
        let idx = row as usize * config.width + col as usize;
        // 2Δ/l from the fractional cell position, which keeps the value in [-1, 1).
        sum_dx[idx] += 2.0 * (u - col) - 1.0;
        sum_dy[idx] += 2.0 * (v - row) - 1.0;
        sum_i[idx] += p.intensity;
        count[idx] += 1;
        stats.binned += 1;
    }
    let mut grid = BevGrid::zeros(*config, frame_index);
    for i in 0..n {
        if count[i] > 0 {
            let c = f64::from(count[i]);
            grid.data[i] = sum_dx[i] / c;
            grid.data[n + i] = sum_dy[i] / c;
            grid.data[2 * n + i] = sum_i[i];
            stats.occupied += 1;
        }
    }
    grid.stats = stats;
    grid
}

pub fn pillarize(cloud: &crate::label::PointCloud, config: &BevConfig) -> BevGrid {
    pillarize_points(&cloud.points, config, cloud.frame_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::PointCloud;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> BevConfig {
        BevConfig {
            height: 4,
            width: 6,
            cell: 0.5,
            origin_x: -1.5,
            origin_y: -1.0,
        }
    }

    #[test]
    fn empty_pillar_is_zero() {
        let g = pillarize(&PointCloud::new(vec![], 0), &cfg());
        assert!(g.data.iter().all(|&v| v == 0.0));
        assert_eq!(g.stats.occupied, 0);
    }

    #[test]
    fn point_at_center() {
        let c = cfg();
        let (x, y) = c.pillar_center(2, 3);
        let g = pillarize(&PointCloud::new(vec![Point::new(x, y, 0.3, 0.7)], 0), &c);
        assert_eq!(g.pillar(2, 3), [0.0, 0.0, 0.7]);
    }

    #[test]
    fn pixel_examples() {
        let c = cfg();
        assert_eq!(point_to_pixel(c.origin_x, c.origin_y, &c), Some((0, 0)));
        assert_eq!(point_to_pixel(c.origin_x + 1.5 * c.cell, c.origin_y, &c), Some((0, 1)));
        // High edge is excluded, low edge included.
        assert_eq!(point_to_pixel(c.origin_x + 6.0 * c.cell, c.origin_y, &c), None);
        assert_eq!(point_to_pixel(c.origin_x - 1e-9, c.origin_y, &c), None);
        assert_eq!(point_to_pixel(0.0, f64::NAN, &c), None);
    }

    #[test]
    fn out_of_extent_points_are_counted() {
        let c = cfg();
        let pts = vec![Point::new(100.0, 0.0, 0.0, 0.5), Point::new(0.0, 0.0, 0.0, 0.5)];
        let g = pillarize(&PointCloud::new(pts, 0), &c);
        assert_eq!(g.stats.dropped, 1);
        assert_eq!(g.stats.binned, 1);
    }

    #[test]
    fn invalid_configs() {
        assert!(BevConfig::centered(0, 4, 0.5).is_err());
        assert!(BevConfig::centered(4, 4, 0.0).is_err());
        assert!(BevConfig::centered(4, 4, -1.0).is_err());
    }

    #[test]
    fn pillarize_bins_match_point_to_pixel_histogram() {
        let c = BevConfig::centered(16, 12, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point> = (0..10_000)
            .map(|_| Point::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.5..2.5), 0.0, 0.5))
            .collect();
        let mut hist = vec![0usize; c.num_pixels()];
        for p in &pts {
            if let Some((r, col)) = point_to_pixel(p.x, p.y, &c) {
                hist[r * c.width + col] += 1;
            }
        }
        let g = pillarize_points(&pts, &c, 0);
        // Channel 2 is 0.5 * count, exactly representable.
        for (i, &h) in hist.iter().enumerate() {
            assert_eq!(g.channel(2)[i], 0.5 * h as f64);
        }
        assert_eq!(g.stats.binned, hist.iter().sum::<usize>());
        assert_eq!(g.stats.binned + g.stats.dropped, pts.len());
    }

    #[test]
    fn intensity_channel_is_additive() {
        let c = BevConfig::centered(8, 8, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut gen = |n| {
            (0..n)
                .map(|_| {
                    Point::new(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                        0.0,
                        rng.gen_range(0.0..1.0),
                    )
                })
                .collect::<Vec<_>>()
        };
        let a = gen(200);
        let b = gen(150);
        let ga = pillarize_points(&a, &c, 0);
        let gb = pillarize_points(&b, &c, 0);
        let gab = pillarize_points(a.iter().chain(&b), &c, 0);
        for i in 0..c.num_pixels() {
            let sum = ga.channel(2)[i] + gb.channel(2)[i];
            assert!((gab.channel(2)[i] - sum).abs() < 1e-12);
        }
    }
}
