//! Points, clouds, the class taxonomy and composite (semantic, motion) labels.
//!
//! A composite code is `semantic_id + C * moving`, where `C` is the number of
//! semantic classes. Non-movable classes only ever use the lower half.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Integer form of a composite label, as stored in `.lbl` files.
pub type LabelCode = u16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Reflectance in `[0, 1]`.
    pub intensity: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Point { x, y, z, intensity }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && (0.0..=1.0).contains(&self.intensity)
    }
}

/// One LiDAR frame. `labels`, when present, has one entry per point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub labels: Option<Vec<CompositeLabel>>,
    pub frame_index: u32,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, frame_index: u32) -> Self {
        PointCloud {
            points,
            labels: None,
            frame_index,
        }
    }

    pub fn with_labels(
        points: Vec<Point>,
        labels: Vec<CompositeLabel>,
        frame_index: u32,
    ) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::Arity {
                what: "labels per point",
                expected: points.len(),
                actual: labels.len(),
            });
        }
        Ok(PointCloud {
            points,
            labels: Some(labels),
            frame_index,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassInfo {
    pub id: u16,
    pub name: String,
    pub movable: bool,
}

/// Semantic classes with their movability flags. Ids are dense `0..C`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassTaxonomy {
    classes: Vec<ClassInfo>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CompositeLabel {
    pub semantic_id: u16,
    pub moving: bool,
}

impl CompositeLabel {
    pub fn new(semantic_id: u16, moving: bool) -> Self {
        CompositeLabel {
            semantic_id,
            moving,
        }
    }
}

impl ClassTaxonomy {
    pub fn new(classes: Vec<ClassInfo>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidTaxonomy("no classes".into()));
        }
        if classes.len() * 2 > usize::from(LabelCode::MAX) {
            return Err(Error::InvalidTaxonomy(format!(
                "{} classes do not fit 16-bit composite codes",
                classes.len()
            )));
        }
        for (i, c) in classes.iter().enumerate() {
            if usize::from(c.id) != i {
                return Err(Error::InvalidTaxonomy(format!(
                    "class ids must be dense 0..C-1; position {i} holds id {}",
                    c.id
                )));
            }
            if c.name.is_empty() || c.name.chars().any(char::is_whitespace) {
                return Err(Error::InvalidTaxonomy(format!(
                    "class {i} name {:?} must be a non-empty word",
                    c.name
                )));
            }
        }
        if !classes.iter().any(|c| c.movable) || classes.iter().all(|c| c.movable) {
            return Err(Error::InvalidTaxonomy(
                "need at least one movable and one non-movable class".into(),
            ));
        }
        Ok(ClassTaxonomy { classes })
    }

    /// car, pedestrian, cyclist (movable); ground, building, vegetation, pole.
    pub fn default_synthetic() -> Self {
        let spec = [
            ("car", true),
            ("pedestrian", true),
            ("cyclist", true),
            ("ground", false),
            ("building", false),
            ("vegetation", false),
            ("pole", false),
        ];
        let classes = spec
            .iter()
            .enumerate()
            .map(|(i, &(name, movable))| ClassInfo {
                id: i as u16,
                name: name.to_string(),
                movable,
            })
            .collect();
        ClassTaxonomy::new(classes).expect("built-in taxonomy is valid")
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn class(&self, id: u16) -> Option<&ClassInfo> {
        self.classes.get(usize::from(id))
    }

    pub fn id_of(&self, name: &str) -> Option<u16> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }

    pub fn is_movable(&self, id: u16) -> bool {
        self.class(id).is_some_and(|c| c.movable)
    }

    /// Number of distinct composite codes: every class static, plus movable classes moving.
    pub fn num_composite(&self) -> usize {
        self.classes.len() + self.classes.iter().filter(|c| c.movable).count()
    }

    /// All valid composite codes in ascending order.
    pub fn valid_codes(&self) -> Vec<LabelCode> {
        let c = self.classes.len() as LabelCode;
        let mut codes: Vec<LabelCode> = (0..c).collect();
        codes.extend(self.classes.iter().filter(|k| k.movable).map(|k| k.id + c));
        codes
    }

    /// Human-readable name for a composite code, e.g. `moving-car`.
    pub fn code_name(&self, code: LabelCode) -> Result<String> {
        let label = decompose_label(code, self)?;
        let name = &self.classes[usize::from(label.semantic_id)].name;
        Ok(if label.moving {
            format!("moving-{name}")
        } else {
            name.clone()
        })
    }

    /// Plain-text table, one `id name movable` line per class.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# id name movable\n");
        for c in &self.classes {
            let _ = writeln!(out, "{} {} {}", c.id, c.name, u8::from(c.movable));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut classes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |why: &str| {
                Error::InvalidTaxonomy(format!("line {}: {why}: {raw:?}", lineno + 1))
            };
            if fields.len() != 3 {
                return Err(bad("expected `id name movable`"));
            }
            let id: u16 = fields[0].parse().map_err(|_| bad("bad id"))?;
            let movable = match fields[2] {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return Err(bad("movable flag must be 0/1")),
            };
            classes.push(ClassInfo {
                id,
                name: fields[1].to_string(),
                movable,
            });
        }
        ClassTaxonomy::new(classes)
    }

    /// Short stable digest of the canonical text form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&digest[..8])
    }
}

pub fn compose_label(semantic_id: u16, moving: bool, tax: &ClassTaxonomy) -> Result<LabelCode> {
    let c = tax.num_classes();
    if usize::from(semantic_id) >= c {
        return Err(Error::InvalidLabel(format!(
            "semantic id {semantic_id} out of range for {c} classes"
        )));
    }
    if moving && !tax.is_movable(semantic_id) {
        return Err(Error::InvalidLabel(format!(
            "class {} ({}) cannot be moving",
            semantic_id,
            tax.classes[usize::from(semantic_id)].name
        )));
    }
    Ok(semantic_id + if moving { c as LabelCode } else { 0 })
}

pub fn decompose_label(code: LabelCode, tax: &ClassTaxonomy) -> Result<CompositeLabel> {
    let c = tax.num_classes() as LabelCode;
    if code >= 2 * c {
        return Err(Error::InvalidLabel(format!(
            "code {code} out of range for {c} classes"
        )));
    }
    let label = CompositeLabel::new(code % c, code >= c);
    if label.moving && !tax.is_movable(label.semantic_id) {
        return Err(Error::InvalidLabel(format!(
            "code {code} marks non-movable class {} as moving",
            label.semantic_id
        )));
    }
    Ok(label)
}

impl CompositeLabel {
    pub fn code(&self, tax: &ClassTaxonomy) -> Result<LabelCode> {
        compose_label(self.semantic_id, self.moving, tax)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> ClassTaxonomy {
        ClassTaxonomy::default_synthetic()
    }

    #[test]
    fn compose_examples() {
        let t = tax();
        assert_eq!(compose_label(0, false, &t).unwrap(), 0);
        assert_eq!(compose_label(0, true, &t).unwrap(), 7);
        let building = t.id_of("building").unwrap();
        assert_eq!(building, 4);
        assert!(matches!(
            compose_label(building, true, &t),
            Err(Error::InvalidLabel(_))
        ));
        assert!(compose_label(7, false, &t).is_err());
    }

    #[test]
    fn decompose_examples() {
        let t = tax();
        assert_eq!(decompose_label(0, &t).unwrap(), CompositeLabel::new(0, false));
        assert_eq!(decompose_label(7, &t).unwrap(), CompositeLabel::new(0, true));
        assert!(decompose_label(13, &t).is_err());
        assert!(decompose_label(14, &t).is_err());
    }

    // Enumerate every code below 2C and check it against a direct reading of the taxonomy.
    #[test]
    fn decompose_matches_enumeration_oracle() {
        let t = tax();
        let c = t.num_classes() as u16;
        let movable = [true, true, true, false, false, false, false];
        for code in 0..(2 * c + 3) {
            let expected = if code < c {
                Some((code, false))
            } else if code < 2 * c && movable[usize::from(code - c)] {
                Some((code - c, true))
            } else {
                None
            };
            let got = decompose_label(code, &t)
                .ok()
                .map(|l| (l.semantic_id, l.moving));
            assert_eq!(got, expected, "code {code}");
        }
    }

    #[test]
    fn round_trip_and_code_counts_for_random_taxonomies() {
        // Exhaustive over C <= 32 with a deterministic movability pattern.
        for c in 2..=32u16 {
            let classes = (0..c)
                .map(|i| ClassInfo {
                    id: i,
                    name: format!("c{i}"),
                    movable: (i * 7 + c) % 3 == 0 || i == 0,
                })
                .collect::<Vec<_>>();
            let mut classes = classes;
            classes[1].movable = false;
            let t = ClassTaxonomy::new(classes).unwrap();
            let mut valid = 0;
            for s in 0..c {
                let mut codes_for_s = 0;
                for m in [false, true] {
                    if let Ok(code) = compose_label(s, m, &t) {
                        codes_for_s += 1;
                        assert_eq!(decompose_label(code, &t).unwrap(), CompositeLabel::new(s, m));
                    }
                }
                assert_eq!(codes_for_s, if t.is_movable(s) { 2 } else { 1 });
                valid += codes_for_s;
            }
            assert_eq!(valid, t.num_composite());
            assert_eq!(t.valid_codes().len(), valid);
        }
    }

    #[test]
    fn taxonomy_text_round_trip() {
        let t = tax();
        let text = t.to_text();
        assert_eq!(ClassTaxonomy::from_text(&text).unwrap(), t);
        assert_eq!(t.hash().len(), 16);
    }

    #[test]
    fn taxonomy_rejects_bad_tables() {
        assert!(ClassTaxonomy::from_text("0 car 1\n2 pole 0\n").is_err());
        assert!(ClassTaxonomy::from_text("0 car 1\n1 truck 1\n").is_err());
        assert!(ClassTaxonomy::from_text("0 car yes\n1 pole 0\n").is_err());
        assert!(ClassTaxonomy::from_text("").is_err());
    }

    #[test]
    fn code_names() {
        let t = tax();
        assert_eq!(t.code_name(7).unwrap(), "moving-car");
        assert_eq!(t.code_name(3).unwrap(), "ground");
    }
}
