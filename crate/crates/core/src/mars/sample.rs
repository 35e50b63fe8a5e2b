use std::collections::HashMap;

use crate::align::{align_sequence, AlignedSequence, Pose};
use crate::bev::{pillarize, pillarize_points, BevConfig, BevGrid};
use crate::error::{Error, Result};
use crate::label::{ClassTaxonomy, LabelCode, Point, PointCloud};
use crate::nn::Tensor;

/// Supervision for the target frame's points.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetLabels {
    pub codes: Vec<LabelCode>,
    pub semantic: Vec<usize>,
    pub moving: Vec<f64>,
    /// Points whose ground-truth class is movable; the motion loss only sees these.
    pub movable: Vec<bool>,
}

/// A k-frame window with every parameter-independent quantity precomputed.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub k: usize,
    /// `[N, 4]` scaled (x, y, z, intensity) over the fused cloud, frames in time order.
    pub descriptors: Tensor,
    /// Frame position 0..k of each fused point.
    pub frame_of: Vec<usize>,
    pub voxel_of: Vec<usize>,
    pub num_voxels: usize,
    /// Rows of the fused cloud that belong to the target frame.
    pub target_rows: Vec<usize>,
    pub target_points: Vec<Point>,
    /// Pillar of each target point, `None` outside the grid.
    pub target_pixels: Vec<Option<usize>>,
    /// Per aligned frame, in time order.
    pub bev_frames: Vec<BevGrid>,
    /// All aligned frames pillarized together.
    pub bev_fused: BevGrid,
    pub labels: Option<TargetLabels>,
    pub aligned: AlignedSequence,
}

fn voxel_key(p: &Point, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

impl PreparedSample {
    pub fn new(
        frames: &[PointCloud],
        poses: &[Pose],
        bev: &BevConfig,
        voxel: f64,
        descriptor_scale: f64,
        tax: &ClassTaxonomy,
    ) -> Result<Self> {
        let aligned = align_sequence(frames, poses)?;
        let k = aligned.k();
        let total: usize = aligned.frames.iter().map(PointCloud::len).sum();
        let target_len = aligned.target().len();
        if target_len == 0 {
            return Err(Error::UnsupportedSample("target frame has no points".into()));
        }
        let mut desc = Vec::with_capacity(total * 4);
        let mut frame_of = Vec::with_capacity(total);
        let mut voxel_of = Vec::with_capacity(total);
        let mut voxels: HashMap<(i64, i64, i64), usize> = HashMap::new();
        for (i, f) in aligned.frames.iter().enumerate() {
            for p in &f.points {
                desc.extend_from_slice(&[
                    p.x / descriptor_scale,
                    p.y / descriptor_scale,
                    p.z / descriptor_scale,
                    p.intensity,
                ]);
                frame_of.push(i);
                let next = voxels.len();
                voxel_of.push(*voxels.entry(voxel_key(p, voxel)).or_insert(next));
            }
        }
        let target_rows: Vec<usize> = (total - target_len..total).collect();
        let target = aligned.target();
        let target_pixels = target.points.iter().map(|p| bev.pixel_index(p.x, p.y)).collect();
        let bev_frames = aligned.frames.iter().map(|f| pillarize(f, bev)).collect();
        let bev_fused = pillarize_points(
            aligned.frames.iter().flat_map(|f| f.points.iter()),
            bev,
            target.frame_index,
        );
        let labels = match &target.labels {
            None => None,
            Some(ls) => {
                let mut out = TargetLabels {
                    codes: Vec::with_capacity(ls.len()),
                    semantic: Vec::with_capacity(ls.len()),
                    moving: Vec::with_capacity(ls.len()),
                    movable: Vec::with_capacity(ls.len()),
                };
                for l in ls {
                    out.codes.push(l.code(tax)?);
                    out.semantic.push(l.semantic_id as usize);
                    out.moving.push(if l.moving { 1.0 } else { 0.0 });
                    out.movable.push(tax.is_movable(l.semantic_id));
                }
                Some(out)
            }
        };
        Ok(PreparedSample {
            k,
            descriptors: Tensor::new(vec![total, 4], desc)?,
            frame_of,
            voxel_of,
            num_voxels: voxels.len(),
            target_rows,
            target_points: target.points.clone(),
            target_pixels,
            bev_frames,
            bev_fused,
            labels,
            aligned,
        })
    }

    pub fn num_points(&self) -> usize {
        self.frame_of.len()
    }

    pub fn require_labels(&self) -> Result<&TargetLabels> {
        self.labels
            .as_ref()
            .ok_or_else(|| Error::UnsupportedSample("sample is unlabeled".into()))
    }

    /// Pillars holding a moving point in any aligned frame, and pillars holding only static points.
    pub fn motion_pillars(&self) -> Result<(Vec<bool>, Vec<bool>)> {
        let cfg = &self.bev_fused.config;
        let n = cfg.num_pixels();
        let mut moving = vec![false; n];
        let mut occupied = vec![false; n];
        for f in &self.aligned.frames {
            let labels = f
                .labels
                .as_ref()
                .ok_or_else(|| Error::UnsupportedSample(format!("frame {} is unlabeled", f.frame_index)))?;
            for (p, l) in f.points.iter().zip(labels) {
                if let Some(px) = cfg.pixel_index(p.x, p.y) {
                    occupied[px] = true;
                    moving[px] |= l.moving;
                }
            }
        }
        let static_only = occupied.iter().zip(&moving).map(|(&o, &m)| o && !m).collect();
        Ok((moving, static_only))
    }
}

pub fn bev_tensor(grid: &BevGrid) -> Tensor {
    Tensor::new(
        vec![crate::bev::BEV_CHANNELS, grid.config.height, grid.config.width],
        grid.data.clone(),
    )
    .expect("grid data matches its config")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::CompositeLabel;

    #[test]
    fn layout_and_voxels() {
        let tax = ClassTaxonomy::default_synthetic();
        let bev = BevConfig::centered(4, 4, 1.0).unwrap();
        let f0 = PointCloud::with_labels(
            vec![Point::new(0.1, 0.1, 0.1, 0.5), Point::new(1.6, 0.1, 0.1, 0.5)],
            vec![CompositeLabel::new(3, false); 2],
            0,
        )
        .unwrap();
        let f1 = PointCloud::with_labels(
            vec![Point::new(0.2, 0.2, 0.2, 0.5), Point::new(9.0, 0.0, 0.0, 0.1)],
            vec![CompositeLabel::new(0, true), CompositeLabel::new(3, false)],
            1,
        )
        .unwrap();
        let poses = vec![Pose::identity(); 2];
        let s = PreparedSample::new(&[f0, f1], &poses, &bev, 0.5, 2.0, &tax).unwrap();
        assert_eq!(s.frame_of, vec![0, 0, 1, 1]);
        assert_eq!(s.voxel_of, vec![0, 1, 0, 2]);
        assert_eq!(s.target_rows, vec![2, 3]);
        assert_eq!(s.target_pixels[1], None);
        assert_eq!(s.descriptors.data()[4], 0.8);
        let l = s.labels.as_ref().unwrap();
        assert_eq!(l.codes, vec![7, 3]);
        assert_eq!(l.movable, vec![true, false]);
        let (moving, stat) = s.motion_pillars().unwrap();
        assert_eq!(moving.iter().filter(|&&m| m).count(), 1);
        assert_eq!(stat.iter().filter(|&&m| m).count(), 1);
    }
}
