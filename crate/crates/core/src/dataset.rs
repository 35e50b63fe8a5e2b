//! On-disk sequence datasets.
//!
//! ```text
//! <root>/manifest.json
//! <root>/taxonomy.txt
//! <root>/seq_<id>/frame_<i>.bin   magic "MARSPTS\0", u8 version, u32 N, N × (x, y, z, intensity) f32, u32 CRC-32
//! <root>/seq_<id>/frame_<i>.lbl   N × u16 composite label code
//! <root>/seq_<id>/poses.txt       one row-major 3×4 [R|t] per frame
//! ```
//!
//! All integers and floats are little-endian.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{poses_from_text, poses_to_text, Pose};
use crate::error::{Error, Result};
use crate::label::{compose_label, decompose_label, ClassTaxonomy, Point, PointCloud};
use crate::synth::{generate_sequence, random_scene, SceneParams};

pub const POINTS_MAGIC: &[u8; 8] = b"MARSPTS\0";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 8 + 1 + 4;
const RECORD_LEN: usize = 16;
const TRAILER_LEN: usize = 4;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TAXONOMY_FILE: &str = "taxonomy.txt";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: u32,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub format_version: u8,
    pub taxonomy_hash: String,
    pub sequences: Vec<SequenceEntry>,
    /// How the dataset was produced, when it was generated by this crate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub scenes: usize,
    pub params: SceneParams,
}

pub fn seq_dir(root: &Path, id: u32) -> PathBuf {
    root.join(format!("seq_{id}"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_points(points: &[Point]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * points.len() + TRAILER_LEN);
    out.extend_from_slice(POINTS_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_points(bytes: &[u8], path: &Path) -> Result<Vec<Point>> {
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(Error::format(path, "truncated point file"));
    }
    if &bytes[..8] != POINTS_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    if bytes[8] != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported format version {}", bytes[8])));
    }
    let n = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    let expected = n
        .checked_mul(RECORD_LEN)
        .and_then(|b| b.checked_add(HEADER_LEN + TRAILER_LEN));
    if expected != Some(bytes.len()) {
        return Err(Error::format(
            path,
            format!("header promises {n} points but file has {} bytes", bytes.len()),
        ));
    }
    let payload = &bytes[HEADER_LEN..bytes.len() - TRAILER_LEN];
    let stored = u32::from_le_bytes(bytes[bytes.len() - TRAILER_LEN..].try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored {
        return Err(Error::format(path, "checksum mismatch"));
    }
    payload
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().expect("4 bytes")) as f64;
            let p = Point::new(f(0), f(4), f(8), f(12));
            if p.is_valid() {
                Ok(p)
            } else {
                Err(Error::format(path, format!("point {i} is not finite or has intensity outside [0, 1]")))
            }
        })
        .collect()
}

/// Writes one sequence directory. The root taxonomy file is created if missing and must
/// otherwise match `tax`.
pub fn write_sequence(
    root: &Path,
    id: u32,
    frames: &[PointCloud],
    poses: &[Pose],
    tax: &ClassTaxonomy,
) -> Result<SequenceEntry> {
    if frames.is_empty() {
        return Err(Error::EmptyDataset(format!("sequence {id} has no frames")));
    }
    if frames.len() != poses.len() {
        return Err(Error::Arity {
            what: "poses per frame",
            expected: frames.len(),
            actual: poses.len(),
        });
    }
    for (i, f) in frames.iter().enumerate() {
        if f.frame_index as usize != i {
            return Err(Error::Config(format!(
                "sequence {id}: frame at position {i} has index {}",
                f.frame_index
            )));
        }
    }
    ensure_taxonomy(root, tax)?;
    let dir = seq_dir(root, id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for f in frames {
        let labels = f
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidLabel(format!("sequence {id} frame {} is unlabeled", f.frame_index)))?;
        let mut lbl = Vec::with_capacity(2 * labels.len());
        for l in labels {
            lbl.extend_from_slice(&l.code(tax)?.to_le_bytes());
        }
        write(&dir.join(format!("frame_{}.bin", f.frame_index)), &encode_points(&f.points))?;
        write(&dir.join(format!("frame_{}.lbl", f.frame_index)), &lbl)?;
    }
    write(&dir.join("poses.txt"), poses_to_text(poses).as_bytes())?;
    Ok(SequenceEntry {
        id,
        frames: frames.len(),
    })
}

fn ensure_taxonomy(root: &Path, tax: &ClassTaxonomy) -> Result<()> {
    let path = root.join(TAXONOMY_FILE);
    if path.exists() {
        let existing = read_taxonomy(root)?;
        if existing != *tax {
            return Err(Error::ManifestMismatch(format!(
                "{} holds a different taxonomy",
                path.display()
            )));
        }
        return Ok(());
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write(&path, tax.to_text().as_bytes())
}

pub fn read_taxonomy(root: &Path) -> Result<ClassTaxonomy> {
    let path = root.join(TAXONOMY_FILE);
    let bytes = read(&path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(&path, "not UTF-8"))?;
    ClassTaxonomy::from_text(&text)
}

/// Reads the `k` consecutive frames ending at `target` (inclusive), target last.
pub fn read_sequence(
    root: &Path,
    id: u32,
    k: usize,
    target: usize,
    tax: &ClassTaxonomy,
) -> Result<(Vec<PointCloud>, Vec<Pose>)> {
    if k == 0 || target + 1 < k {
        return Err(Error::Config(format!(
            "cannot take {k} frames ending at frame {target}"
        )));
    }
    let dir = seq_dir(root, id);
    let poses_path = dir.join("poses.txt");
    let text = String::from_utf8(read(&poses_path)?).map_err(|_| Error::format(&poses_path, "not UTF-8"))?;
    let all_poses = poses_from_text(&text, &poses_path)?;
    if all_poses.len() <= target {
        return Err(Error::format(
            &poses_path,
            format!("{} poses, need frame {target}", all_poses.len()),
        ));
    }
    let first = target + 1 - k;
    let mut frames = Vec::with_capacity(k);
    for i in first..=target {
        let bin = dir.join(format!("frame_{i}.bin"));
        let lbl = dir.join(format!("frame_{i}.lbl"));
        let points = decode_points(&read(&bin)?, &bin)?;
        let raw = read(&lbl)?;
        if raw.len() != 2 * points.len() {
            return Err(Error::format(
                &lbl,
                format!("{} bytes of labels for {} points", raw.len(), points.len()),
            ));
        }
        let labels = raw
            .chunks_exact(2)
            .map(|c| decompose_label(u16::from_le_bytes([c[0], c[1]]), tax))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::format(&lbl, e.to_string()))?;
        frames.push(PointCloud::with_labels(points, labels, i as u32)?);
    }
    Ok((frames, all_poses[first..=target].to_vec()))
}

pub fn write_manifest(root: &Path, manifest: &SequenceManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write(&root.join(MANIFEST_FILE), text.as_bytes())
}

/// An opened dataset with a validated manifest and taxonomy.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: SequenceManifest,
    pub taxonomy: ClassTaxonomy,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let manifest: SequenceManifest = serde_json::from_slice(&read(&path)?)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::ManifestMismatch(format!(
                "dataset format version {} (this build reads {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let taxonomy = read_taxonomy(root)?;
        if taxonomy.hash() != manifest.taxonomy_hash {
            return Err(Error::ManifestMismatch(format!(
                "taxonomy hash {} does not match manifest {}",
                taxonomy.hash(),
                manifest.taxonomy_hash
            )));
        }
        if manifest.sequences.is_empty() {
            return Err(Error::EmptyDataset(format!("{} lists no sequences", path.display())));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
            taxonomy,
        })
    }

    /// One sample per sequence: the last `k` frames, target last.
    pub fn read_sample(&self, index: usize, k: usize) -> Result<(Vec<PointCloud>, Vec<Pose>)> {
        let entry = &self.manifest.sequences[index];
        if entry.frames < k {
            return Err(Error::ManifestMismatch(format!(
                "sequence {} has {} frames, model needs {k}",
                entry.id, entry.frames
            )));
        }
        read_sequence(&self.root, entry.id, k, entry.frames - 1, &self.taxonomy)
    }

    pub fn len(&self) -> usize {
        self.manifest.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.sequences.is_empty()
    }

    pub fn hash(&self) -> Result<String> {
        dataset_hash(&self.root)
    }
}

/// Generates `scenes` random sequences under `root`; scene seeds are drawn from `seed`.
pub fn generate_dataset(root: &Path, params: &SceneParams, scenes: usize, seed: u64) -> Result<SequenceManifest> {
    if scenes == 0 {
        return Err(Error::EmptyDataset("asked for zero scenes".into()));
    }
    let tax = ClassTaxonomy::default_synthetic();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    ensure_taxonomy(root, &tax)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..scenes).map(|_| rng.gen()).collect();
    let sequences = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let spec = random_scene(params, s)?;
            let seq = generate_sequence(&spec, s)?;
            write_sequence(root, i as u32, &seq.frames, &seq.poses, &tax)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = SequenceManifest {
        format_version: FORMAT_VERSION,
        taxonomy_hash: tax.hash(),
        sequences,
        generator: Some(GeneratorInfo {
            seed,
            scenes,
            params: params.clone(),
        }),
    };
    write_manifest(root, &manifest)?;
    Ok(manifest)
}

/// SHA-256 over every file under `root`, in sorted relative-path order, hex encoded.
pub fn dataset_hash(root: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let bytes = read(&root.join(&rel))?;
        h.update(rel.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Composite code per point of a labeled cloud.
pub fn label_codes(cloud: &PointCloud, tax: &ClassTaxonomy) -> Result<Vec<u16>> {
    let labels = cloud
        .labels
        .as_ref()
        .ok_or_else(|| Error::UnsupportedSample(format!("frame {} is unlabeled", cloud.frame_index)))?;
    labels
        .iter()
        .map(|l| compose_label(l.semantic_id, l.moving, tax))
        .collect()
}
