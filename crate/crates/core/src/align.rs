//! Rigid poses and alignment of a frame window into the target frame's coordinates.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::label::{Point, PointCloud};

const ORTHO_TOL: f64 = 1e-9;

/// Sensor-to-world rigid transform, `p_world = R p_sensor + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation about +z by `yaw` radians, then translation.
    pub fn from_yaw(yaw: f64, x: f64, y: f64, z: f64) -> Self {
        Pose {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, t: [f64; 3]) -> Self {
        Pose {
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation: Vector3::from(t),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let residual = (r.transpose() * r - Matrix3::identity()).abs().max();
        if residual > ORTHO_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation not orthonormal (|R^T R - I|_max = {residual:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidPose(format!("rotation determinant {det} != +1")));
        }
        Ok(())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Point) -> Point {
        let v = self.rotation * Vector3::new(p.x, p.y, p.z) + self.translation;
        Point::new(v.x, v.y, v.z, p.intensity)
    }

    /// Row-major `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vector3::new(v[3], v[7], v[11]);
        Pose::new(rotation, translation)
    }
}

pub fn invert_pose(pose: &Pose) -> Result<Pose> {
    pose.validate()?;
    Ok(pose.inverse())
}

pub fn transform_cloud(cloud: &PointCloud, pose: &Pose) -> Result<PointCloud> {
    pose.validate()?;
    Ok(PointCloud {
        points: cloud.points.iter().map(|p| pose.apply(p)).collect(),
        labels: cloud.labels.clone(),
        frame_index: cloud.frame_index,
    })
}

/// A window of `k` frames expressed in the last frame's sensor coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSequence {
    pub frames: Vec<PointCloud>,
}

impl AlignedSequence {
    pub fn k(&self) -> usize {
        self.frames.len()
    }

    pub fn target_index(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn target(&self) -> &PointCloud {
        &self.frames[self.target_index()]
    }
}

/// Map frame `i` by `pose(target)^-1 ∘ pose(i)`; the target frame is copied unchanged.
pub fn align_sequence(frames: &[PointCloud], poses: &[Pose]) -> Result<AlignedSequence> {
    if frames.len() != poses.len() {
        return Err(Error::Arity {
            what: "poses per frame",
            expected: frames.len(),
            actual: poses.len(),
        });
    }
    if frames.is_empty() {
        return Err(Error::Arity {
            what: "frames in window",
            expected: 1,
            actual: 0,
        });
    }
    for w in frames.windows(2) {
        if w[1].frame_index <= w[0].frame_index {
            return Err(Error::Config(format!(
                "frames out of time order: {} then {}",
                w[0].frame_index, w[1].frame_index
            )));
        }
    }
    let target = frames.len() - 1;
    let to_target = invert_pose(&poses[target])?;
    let aligned = frames
        .iter()
        .zip(poses)
        .enumerate()
        .map(|(i, (frame, pose))| {
            if i == target {
                Ok(frame.clone())
            } else {
                transform_cloud(frame, &to_target.compose(pose))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignedSequence { frames: aligned })
}

pub fn poses_to_text(poses: &[Pose]) -> String {
    let mut out = String::new();
    for pose in poses {
        let row = pose.to_row_major();
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn poses_from_text(text: &str, origin: &Path) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(origin, format!("line {}: {e}", lineno + 1)))?;
        let row: [f64; 12] = values.try_into().map_err(|v: Vec<f64>| {
            Error::format(
                origin,
                format!("line {}: expected 12 numbers, found {}", lineno + 1, v.len()),
            )
        })?;
        poses.push(Pose::from_row_major(&row)?);
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn cloud(points: &[[f64; 3]], index: u32) -> PointCloud {
        PointCloud::new(
            points.iter().map(|p| Point::new(p[0], p[1], p[2], 0.5)).collect(),
            index,
        )
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        Pose::from_euler(
            rng.gen_range(-3.1..3.1),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-3.1..3.1),
            [
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-5.0..5.0),
            ],
        )
    }

    #[test]
    fn identity_transform_is_noop() {
        let c = cloud(&[[1.0, 2.0, 3.0], [-4.0, 0.5, 0.0]], 0);
        assert_eq!(transform_cloud(&c, &Pose::identity()).unwrap(), c);
    }

    #[test]
    fn pure_translation() {
        let c = cloud(&[[0.0, 0.0, 0.0]], 0);
        let out = transform_cloud(&c, &Pose::from_translation(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(out.points[0], Point::new(1.0, 2.0, 3.0, 0.5));
    }

    #[test]
    fn quarter_turn_yaw() {
        // Closed form: R_z(90°) = [[0,-1,0],[1,0,0],[0,0,1]] so (1,0,0) -> (0,1,0).
        let c = cloud(&[[1.0, 0.0, 0.0]], 0);
        let out = transform_cloud(&c, &Pose::from_yaw(FRAC_PI_2, 0.0, 0.0, 0.0)).unwrap();
        let p = out.points[0];
        assert!(p.x.abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12 && p.z.abs() < 1e-12);
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(Pose::new(bad, Vector3::zeros()), Err(Error::InvalidPose(_))));
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn invert_examples() {
        assert_eq!(invert_pose(&Pose::identity()).unwrap(), Pose::identity());
        let inv = invert_pose(&Pose::from_translation(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(*inv.translation(), Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(*inv.rotation(), Matrix3::identity());
    }

    #[test]
    fn inverse_round_trip_over_1000_seeds() {
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_pose(&mut rng);
            let id = p.compose(&invert_pose(&p).unwrap());
            let r = (id.rotation() - Matrix3::identity()).abs().max();
            let t = id.translation().abs().max();
            assert!(r < 1e-9 && t < 1e-9, "seed {seed}: {r:e} {t:e}");
        }
    }

    #[test]
    fn align_identity_poses_is_noop() {
        let frames = vec![cloud(&[[1.0, 1.0, 0.0]], 0), cloud(&[[2.0, 0.0, 1.0]], 1)];
        let out = align_sequence(&frames, &[Pose::identity(), Pose::identity()]).unwrap();
        assert_eq!(out.frames, frames);
    }

    #[test]
    fn align_fixes_target_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frames = vec![
            cloud(&[[1.0, 1.0, 0.0]], 0),
            cloud(&[[2.0, 0.3, 1.0], [0.1, 0.2, 0.3]], 1),
        ];
        let poses = vec![random_pose(&mut rng), random_pose(&mut rng)];
        let out = align_sequence(&frames, &poses).unwrap();
        assert_eq!(out.target(), &frames[1]);
        assert_eq!(out.target_index(), 1);
    }

    #[test]
    fn align_static_point_seen_from_two_sensor_positions() {
        // World point W observed from two sensor poses; after alignment both land on the
        // target-frame observation.
        let w = Point::new(5.0, 3.0, 1.0, 0.4);
        let p0 = Pose::from_yaw(0.1, -2.0, 0.5, 0.0);
        let p1 = Pose::from_yaw(-0.05, 0.0, 0.0, 0.0);
        let s0 = p0.inverse().apply(&w);
        let s1 = p1.inverse().apply(&w);
        let frames = vec![PointCloud::new(vec![s0], 0), PointCloud::new(vec![s1], 1)];
        let out = align_sequence(&frames, &[p0, p1]).unwrap();
        let a = out.frames[0].points[0];
        let b = out.frames[1].points[0];
        assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12 && (a.z - b.z).abs() < 1e-12);
    }

    #[test]
    fn align_arity_and_order_errors() {
        let frames = vec![cloud(&[[0.0; 3]], 0), cloud(&[[0.0; 3]], 1)];
        assert!(matches!(
            align_sequence(&frames, &[Pose::identity()]),
            Err(Error::Arity { .. })
        ));
        assert!(align_sequence(&[], &[]).is_err());
        let swapped = vec![frames[1].clone(), frames[0].clone()];
        assert!(align_sequence(&swapped, &[Pose::identity(); 2]).is_err());
    }

    #[test]
    fn pose_text_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let poses: Vec<Pose> = (0..5).map(|_| random_pose(&mut rng)).collect();
        let text = poses_to_text(&poses);
        let back = poses_from_text(&text, Path::new("poses.txt")).unwrap();
        assert_eq!(back, poses);
        assert!(poses_from_text("1 2 3\n", Path::new("p")).is_err());
    }

    proptest! {
        #[test]
        fn transform_preserves_pairwise_distances(
            seed in 0u64..10_000,
            a in prop::array::uniform3(-100.0f64..100.0),
            b in prop::array::uniform3(-100.0f64..100.0),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pose = random_pose(&mut rng);
            let c = cloud(&[a, b], 0);
            let out = transform_cloud(&c, &pose).unwrap();
            let d = |p: &Point, q: &Point| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt();
            let before = d(&c.points[0], &c.points[1]);
            let after = d(&out.points[0], &out.points[1]);
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
