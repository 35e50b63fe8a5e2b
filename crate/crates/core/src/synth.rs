//! Seeded synthetic LiDAR sequences: boxes on a ground plane, some of them moving,
//! seen by a sensor that drives toward the scene origin.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::align::Pose;
use crate::error::{Error, Result};
use crate::label::{ClassTaxonomy, CompositeLabel, Point, PointCloud};

pub const DEFAULT_MOTION_THRESHOLD: f64 = 0.5;

/// Share of each frame's points that land on the ground plane.
const GROUND_SHARE: f64 = 0.35;

/// Axis-aligned box standing on the ground, moving in the xy-plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class_id: u16,
    /// Footprint center at frame 0, meters.
    pub center: [f64; 2],
    /// Extent along x, y, z, meters.
    pub size: [f64; 3],
    /// Meters per frame.
    pub velocity: [f64; 2],
}

impl ObjectSpec {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    pub fn center_at(&self, t: usize) -> [f64; 2] {
        [
            self.center[0] + self.velocity[0] * t as f64,
            self.center[1] + self.velocity[1] * t as f64,
        ]
    }

    fn contains_xy(&self, t: usize, x: f64, y: f64, margin: f64) -> bool {
        let c = self.center_at(t);
        (x - c[0]).abs() <= self.size[0] / 2.0 + margin && (y - c[1]).abs() <= self.size[1] / 2.0 + margin
    }

    /// Area of the four sides and the top.
    fn visible_area(&self) -> f64 {
        let [sx, sy, sz] = self.size;
        2.0 * (sx + sy) * sz + sx * sy
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    /// Half-width of the square ground region, meters.
    pub extent: f64,
    pub objects: Vec<ObjectSpec>,
    /// Sensor-to-world pose per frame; its length is k.
    pub sensor_path: Vec<Pose>,
    pub points_per_frame: usize,
    pub noise_sigma: f64,
    /// Total displacement over the sequence above which a movable object counts as moving.
    pub motion_threshold: f64,
}

impl SceneSpec {
    pub fn k(&self) -> usize {
        self.sensor_path.len()
    }

    pub fn validate(&self, tax: &ClassTaxonomy) -> Result<()> {
        if !(self.extent > 0.0) || !self.extent.is_finite() {
            return Err(Error::Config(format!("scene extent must be positive, got {}", self.extent)));
        }
        if self.sensor_path.is_empty() {
            return Err(Error::Config("scene needs at least one frame".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.motion_threshold >= 0.0) {
            return Err(Error::Config("noise sigma and motion threshold must be non-negative".into()));
        }
        for pose in &self.sensor_path {
            pose.validate()?;
        }
        for (i, o) in self.objects.iter().enumerate() {
            let class = tax
                .class(o.class_id)
                .ok_or_else(|| Error::Config(format!("object {i}: unknown class {}", o.class_id)))?;
            if o.size.iter().any(|&s| !(s > 0.0)) {
                return Err(Error::Config(format!("object {i}: sizes must be positive")));
            }
            if !class.movable && o.speed() != 0.0 {
                return Err(Error::Config(format!(
                    "object {i}: non-movable class {} cannot have a velocity",
                    class.name
                )));
            }
        }
        Ok(())
    }

    /// The labeling rule: movable and displaced by more than the threshold over the sequence.
    pub fn is_moving(&self, object: &ObjectSpec, tax: &ClassTaxonomy) -> bool {
        tax.is_movable(object.class_id)
            && object.speed() * (self.k().saturating_sub(1)) as f64 > self.motion_threshold
    }
}

/// Where a sampled point came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Ground,
    Object(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub frames: Vec<PointCloud>,
    pub poses: Vec<Pose>,
    pub taxonomy: ClassTaxonomy,
    /// Per frame, per point.
    pub sources: Vec<Vec<Source>>,
}

fn intensity_range(name: &str) -> (f64, f64) {
    match name {
        "car" => (0.6, 0.9),
        "pedestrian" => (0.3, 0.5),
        "cyclist" => (0.4, 0.6),
        "ground" => (0.05, 0.2),
        "building" => (0.2, 0.4),
        "vegetation" => (0.1, 0.3),
        "pole" => (0.5, 0.7),
        _ => (0.0, 1.0),
    }
}

fn frame_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64 + 1);
    rng
}

/// Splits `total` proportionally to `weights`, largest remainder first, so the parts sum exactly.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || !(sum > 0.0) {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let short = total - parts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        parts[i] += 1;
    }
    parts
}

struct Sampler<'a> {
    spec: &'a SceneSpec,
    tax: &'a ClassTaxonomy,
    noise: Option<Normal<f64>>,
}

impl Sampler<'_> {
    fn jitter(&self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.noise {
            Some(n) => {
                let s = self.spec.noise_sigma;
                n.sample(rng).clamp(-3.0 * s, 3.0 * s)
            }
            None => 0.0,
        }
    }

    fn intensity(&self, class_id: u16, rng: &mut ChaCha8Rng) -> f64 {
        let name = self.tax.class(class_id).map(|c| c.name.as_str()).unwrap_or("");
        let (lo, hi) = intensity_range(name);
        rng.gen_range(lo..=hi)
    }

    fn ground_point(&self, t: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let e = self.spec.extent;
        let mut xy = [0.0, 0.0];
        // Ground under an object is hidden; resample a few times before giving up.
        for _ in 0..16 {
            xy = [rng.gen_range(-e..e), rng.gen_range(-e..e)];
            if !self.spec.objects.iter().any(|o| o.contains_xy(t, xy[0], xy[1], 0.0)) {
                break;
            }
        }
        [xy[0], xy[1], 0.0]
    }

    fn surface_point(&self, o: &ObjectSpec, t: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let [sx, sy, sz] = o.size;
        let c = o.center_at(t);
        let faces = [sx * sz, sx * sz, sy * sz, sy * sz, sx * sy];
        let total: f64 = faces.iter().sum();
        let mut pick = rng.gen_range(0.0..total);
        let mut face = faces.len() - 1;
        for (i, a) in faces.iter().enumerate() {
            if pick < *a {
                face = i;
                break;
            }
            pick -= a;
        }
        let (u, v) = (rng.gen_range(-0.5..0.5), rng.gen_range(0.0..1.0));
        let (dx, dy, z) = match face {
            0 => (u * sx, -sy / 2.0, v * sz),
            1 => (u * sx, sy / 2.0, v * sz),
            2 => (-sx / 2.0, u * sy, v * sz),
            3 => (sx / 2.0, u * sy, v * sz),
            _ => (u * sx, (v - 0.5) * sy, sz),
        };
        [c[0] + dx, c[1] + dy, z]
    }

    fn frame(&self, t: usize, sensor: &Pose, seed: u64) -> (PointCloud, Vec<Source>) {
        let mut rng = frame_rng(seed, t);
        let n = self.spec.points_per_frame;
        let mut weights = vec![if self.spec.objects.is_empty() { 1.0 } else { GROUND_SHARE }];
        let object_area: f64 = self.spec.objects.iter().map(ObjectSpec::visible_area).sum();
        for o in &self.spec.objects {
            weights.push((1.0 - GROUND_SHARE) * o.visible_area() / object_area);
        }
        let counts = apportion(n, &weights);
        let world_to_sensor = sensor.inverse();
        let ground_id = self.tax.id_of("ground").unwrap_or(0);

        let mut points = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut sources = Vec::with_capacity(n);
        for (slot, &count) in counts.iter().enumerate() {
            let (source, class_id, moving) = if slot == 0 {
                (Source::Ground, ground_id, false)
            } else {
                let o = &self.spec.objects[slot - 1];
                (Source::Object(slot - 1), o.class_id, self.spec.is_moving(o, self.tax))
            };
            for _ in 0..count {
                let p = match source {
                    Source::Ground => self.ground_point(t, &mut rng),
                    Source::Object(i) => self.surface_point(&self.spec.objects[i], t, &mut rng),
                };
                let noisy = Point::new(
                    p[0] + self.jitter(&mut rng),
                    p[1] + self.jitter(&mut rng),
                    p[2] + self.jitter(&mut rng),
                    self.intensity(class_id, &mut rng),
                );
                let local = world_to_sensor.apply(&noisy);
                // Stored as f32 on disk; rounding here makes the round trip exact.
                points.push(Point::new(
                    local.x as f32 as f64,
                    local.y as f32 as f64,
                    local.z as f32 as f64,
                    local.intensity as f32 as f64,
                ));
                labels.push(CompositeLabel::new(class_id, moving));
                sources.push(source);
            }
        }
        let cloud = PointCloud {
            points,
            labels: Some(labels),
            frame_index: t as u32,
        };
        (cloud, sources)
    }
}

/// Samples frame `t` of `spec` as seen from `sensor`, in the sensor's coordinates.
pub fn sample_surfaces(spec: &SceneSpec, t: usize, sensor: &Pose, seed: u64) -> Result<PointCloud> {
    let tax = ClassTaxonomy::default_synthetic();
    spec.validate(&tax)?;
    if t >= spec.k() {
        return Err(Error::Config(format!("frame {t} outside a {}-frame scene", spec.k())));
    }
    let sampler = Sampler {
        spec,
        tax: &tax,
        noise: noise(spec)?,
    };
    Ok(sampler.frame(t, sensor, seed).0)
}

fn noise(spec: &SceneSpec) -> Result<Option<Normal<f64>>> {
    if spec.noise_sigma > 0.0 {
        Normal::new(0.0, spec.noise_sigma)
            .map(Some)
            .map_err(|e| Error::Config(format!("noise sigma: {e}")))
    } else {
        Ok(None)
    }
}

/// Samples all k frames of `spec` with the default synthetic taxonomy.
pub fn generate_sequence(spec: &SceneSpec, seed: u64) -> Result<SyntheticSequence> {
    let tax = ClassTaxonomy::default_synthetic();
    if spec.objects.is_empty() {
        return Err(Error::EmptyScene("scene has no objects".into()));
    }
    spec.validate(&tax)?;
    let sampler = Sampler {
        spec,
        tax: &tax,
        noise: noise(spec)?,
    };
    let mut frames = Vec::with_capacity(spec.k());
    let mut sources = Vec::with_capacity(spec.k());
    for (t, pose) in spec.sensor_path.iter().enumerate() {
        let (cloud, src) = sampler.frame(t, pose, seed);
        frames.push(cloud);
        sources.push(src);
    }
    Ok(SyntheticSequence {
        frames,
        poses: spec.sensor_path.clone(),
        taxonomy: tax,
        sources,
    })
}

/// Knobs for [`random_scene`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub frames: usize,
    pub extent: f64,
    pub points_per_frame: usize,
    pub noise_sigma: f64,
    pub motion_threshold: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            frames: 3,
            extent: 40.0,
            points_per_frame: 4000,
            noise_sigma: 0.02,
            motion_threshold: DEFAULT_MOTION_THRESHOLD,
        }
    }
}

struct Template {
    class: &'static str,
    size: [(f64, f64); 3],
    count: (usize, usize),
    /// Speed range in meters per frame when moving; `None` for non-movable classes.
    speed: Option<(f64, f64)>,
}

const TEMPLATES: &[Template] = &[
    Template {
        class: "building",
        size: [(3.0, 6.0), (3.0, 6.0), (3.0, 6.0)],
        count: (2, 3),
        speed: None,
    },
    Template {
        class: "vegetation",
        size: [(1.0, 2.5), (1.0, 2.5), (1.0, 3.0)],
        count: (2, 3),
        speed: None,
    },
    Template {
        class: "pole",
        size: [(0.2, 0.4), (0.2, 0.4), (3.0, 5.0)],
        count: (1, 3),
        speed: None,
    },
    Template {
        class: "car",
        size: [(3.8, 4.6), (1.6, 2.0), (1.4, 1.7)],
        count: (1, 3),
        speed: Some((0.8, 1.5)),
    },
    Template {
        class: "pedestrian",
        size: [(0.5, 0.8), (0.5, 0.8), (1.6, 1.9)],
        count: (1, 2),
        speed: Some((0.35, 0.6)),
    },
    Template {
        class: "cyclist",
        size: [(1.6, 1.9), (0.5, 0.8), (1.5, 1.8)],
        count: (0, 2),
        speed: Some((0.5, 0.9)),
    },
];

/// A random street-like scene. At least one object moves; movable objects are parked
/// (zero velocity) with probability 0.4.
pub fn random_scene(params: &SceneParams, seed: u64) -> Result<SceneSpec> {
    if params.frames == 0 {
        return Err(Error::Config("scenes need at least one frame".into()));
    }
    let tax = ClassTaxonomy::default_synthetic();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = params.extent;
    let k = params.frames;

    let mut objects: Vec<ObjectSpec> = Vec::new();
    let mut moving_any = false;
    for tpl in TEMPLATES {
        let class_id = tax.id_of(tpl.class).expect("default taxonomy class");
        let n = rng.gen_range(tpl.count.0..=tpl.count.1);
        for _ in 0..n {
            let size = tpl.size.map(|(lo, hi)| rng.gen_range(lo..=hi));
            let velocity = match tpl.speed {
                Some((lo, hi)) if rng.gen_bool(0.6) || (!moving_any && tpl.class == "car") => {
                    moving_any = true;
                    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
                    let s = rng.gen_range(lo..=hi);
                    [s * heading.cos(), s * heading.sin()]
                }
                _ => [0.0, 0.0],
            };
            if let Some(center) = place(&objects, size, velocity, k, e, &mut rng) {
                objects.push(ObjectSpec {
                    class_id,
                    center,
                    size,
                    velocity,
                });
            }
        }
    }
    if !objects.iter().any(|o| o.speed() > 0.0) {
        // Placement can fail for the only moving car; fall back to a guaranteed mover.
        let size = [4.2, 1.8, 1.5];
        let velocity = [1.0, 0.0];
        let center = place(&objects, size, velocity, k, e, &mut rng).unwrap_or([0.0, e / 2.0]);
        objects.push(ObjectSpec {
            class_id: tax.id_of("car").expect("car"),
            center,
            size,
            velocity,
        });
    }
    objects.shuffle(&mut rng);

    // Ego drives toward the origin along a random heading with a slight yaw drift.
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let ego_speed = rng.gen_range(0.5..1.2);
    let yaw_rate = rng.gen_range(-0.05..0.05);
    let sensor_path = (0..k)
        .map(|t| {
            let back = (k - 1 - t) as f64 * ego_speed;
            let yaw = heading + yaw_rate * t as f64;
            Pose::from_yaw(yaw, -back * heading.cos(), -back * heading.sin(), 0.0)
        })
        .collect();

    Ok(SceneSpec {
        extent: e,
        objects,
        sensor_path,
        points_per_frame: params.points_per_frame,
        noise_sigma: params.noise_sigma,
        motion_threshold: params.motion_threshold,
    })
}

/// Finds a footprint center whose swept box stays inside the scene and clear of the
/// sensor and other objects over all frames.
fn place(
    existing: &[ObjectSpec],
    size: [f64; 3],
    velocity: [f64; 2],
    k: usize,
    extent: f64,
    rng: &mut ChaCha8Rng,
) -> Option<[f64; 2]> {
    let margin = 0.5;
    let travel = [velocity[0] * (k - 1) as f64, velocity[1] * (k - 1) as f64];
    for _ in 0..64 {
        let c = [rng.gen_range(-extent..extent), rng.gen_range(-extent..extent)];
        let end = [c[0] + travel[0], c[1] + travel[1]];
        let inside = |p: [f64; 2]| {
            p[0].abs() + size[0] / 2.0 + margin <= extent && p[1].abs() + size[1] / 2.0 + margin <= extent
        };
        if !inside(c) || !inside(end) {
            continue;
        }
        // Keep a clear radius around the sensor's final position.
        let clear = 2.0 + size[0].max(size[1]) / 2.0;
        if c[0].hypot(c[1]) < clear || end[0].hypot(end[1]) < clear {
            continue;
        }
        let candidate = ObjectSpec {
            class_id: 0,
            center: c,
            size,
            velocity,
        };
        let overlaps = existing.iter().any(|o| {
            (0..k).any(|t| {
                let (a, b) = (o.center_at(t), candidate.center_at(t));
                (a[0] - b[0]).abs() < (o.size[0] + size[0]) / 2.0 + margin
                    && (a[1] - b[1]).abs() < (o.size[1] + size[1]) / 2.0 + margin
            })
        });
        if !overlaps {
            return Some(c);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::align_sequence;

    fn params() -> SceneParams {
        SceneParams {
            frames: 3,
            extent: 12.0,
            points_per_frame: 600,
            noise_sigma: 0.02,
            motion_threshold: 0.5,
        }
    }

    fn one_object(class: &str, velocity: [f64; 2], k: usize) -> SceneSpec {
        let tax = ClassTaxonomy::default_synthetic();
        SceneSpec {
            extent: 10.0,
            objects: vec![ObjectSpec {
                class_id: tax.id_of(class).unwrap(),
                center: [3.0, 2.0],
                size: [4.0, 2.0, 1.5],
                velocity,
            }],
            sensor_path: (0..k).map(|t| Pose::from_yaw(0.01 * t as f64, t as f64 - 2.0, 0.0, 0.0)).collect(),
            points_per_frame: 500,
            noise_sigma: 0.02,
            motion_threshold: 0.5,
        }
    }

    #[test]
    fn zero_velocity_means_nothing_moves() {
        let seq = generate_sequence(&one_object("car", [0.0, 0.0], 3), 1).unwrap();
        for f in &seq.frames {
            assert!(f.labels.as_ref().unwrap().iter().all(|l| !l.moving));
        }
    }

    #[test]
    fn fast_car_is_moving_car() {
        let spec = one_object("car", [1.0, 0.0], 3);
        let seq = generate_sequence(&spec, 1).unwrap();
        for (f, src) in seq.frames.iter().zip(&seq.sources) {
            for (l, s) in f.labels.as_ref().unwrap().iter().zip(src) {
                if *s == Source::Object(0) {
                    assert_eq!((l.semantic_id, l.moving), (0, true));
                }
            }
        }
    }

    #[test]
    fn deterministic_and_exact_count() {
        let spec = random_scene(&params(), 5).unwrap();
        let a = generate_sequence(&spec, 9).unwrap();
        let b = generate_sequence(&spec, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.frames.iter().all(|f| f.len() == 600));
        assert_ne!(a, generate_sequence(&spec, 10).unwrap());
    }

    #[test]
    fn errors() {
        let mut spec = one_object("car", [1.0, 0.0], 3);
        spec.objects.clear();
        assert!(matches!(generate_sequence(&spec, 0), Err(Error::EmptyScene(_))));
        let spec = one_object("building", [1.0, 0.0], 3);
        assert!(matches!(generate_sequence(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn box_height_bound() {
        let mut spec = one_object("building", [0.0, 0.0], 1);
        spec.sensor_path = vec![Pose::identity()];
        let cloud = sample_surfaces(&spec, 0, &Pose::identity(), 3).unwrap();
        let max_z = cloud.points.iter().map(|p| p.z).fold(f64::MIN, f64::max);
        assert!(max_z <= 1.5 + 3.0 * 0.02 + 1e-6);
    }

    #[test]
    fn labels_follow_source_objects() {
        let tax = ClassTaxonomy::default_synthetic();
        for seed in 0..20 {
            let spec = random_scene(&params(), seed).unwrap();
            assert!(spec.objects.iter().any(|o| spec.is_moving(o, &tax)));
            let seq = generate_sequence(&spec, seed).unwrap();
            for (f, src) in seq.frames.iter().zip(&seq.sources) {
                for (l, s) in f.labels.as_ref().unwrap().iter().zip(src) {
                    match s {
                        Source::Ground => assert_eq!(*l, CompositeLabel::new(3, false)),
                        Source::Object(i) => {
                            let o = &spec.objects[*i];
                            assert_eq!(*l, CompositeLabel::new(o.class_id, spec.is_moving(o, &tax)));
                        }
                    }
                }
            }
        }
    }

    fn world_centroids(spec: &SceneSpec, seq: &SyntheticSequence) -> Vec<[f64; 2]> {
        let aligned = align_sequence(&seq.frames, &seq.poses).unwrap();
        aligned
            .frames
            .iter()
            .zip(&seq.sources)
            .map(|(f, src)| {
                let pts: Vec<_> = f.points.iter().zip(src).filter(|(_, s)| **s == Source::Object(0)).collect();
                let n = pts.len() as f64;
                let _ = spec;
                [pts.iter().map(|(p, _)| p.x).sum::<f64>() / n, pts.iter().map(|(p, _)| p.y).sum::<f64>() / n]
            })
            .collect()
    }

    #[test]
    fn aligned_centroids_track_velocity() {
        // Many points so sampling scatter of the centroid is well below the noise level.
        let mut spec = one_object("car", [0.0, 0.0], 3);
        spec.points_per_frame = 400_000;
        let c = world_centroids(&spec, &generate_sequence(&spec, 2).unwrap());
        for w in c.windows(2) {
            assert!((w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) < 2.0 * spec.noise_sigma);
        }
        let mut spec = one_object("car", [0.8, 0.6], 3);
        spec.points_per_frame = 20_000;
        let c = world_centroids(&spec, &generate_sequence(&spec, 2).unwrap());
        for w in c.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            assert!((d - 1.0).abs() < 0.2, "drift {d}");
        }
    }

    #[test]
    fn points_stay_in_extent() {
        for seed in 0..10 {
            let spec = random_scene(&params(), seed).unwrap();
            let seq = generate_sequence(&spec, seed).unwrap();
            let margin = spec.objects.iter().map(|o| o.size[0].max(o.size[1])).fold(0.0, f64::max);
            for (f, pose) in seq.frames.iter().zip(&seq.poses) {
                for p in &f.points {
                    let w = pose.apply(p);
                    assert!(w.x.abs() <= spec.extent + margin && w.y.abs() <= spec.extent + margin);
                    assert!((0.0..=1.0).contains(&p.intensity));
                }
            }
        }
    }

    #[test]
    fn apportion_sums_exactly() {
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(apportion(7, &[0.35, 0.65]).iter().sum::<usize>(), 7);
    }
}
