//! The five-configuration ablation over a fixed train/eval split.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bev::BevConfig;
use crate::dataset::{generate_dataset, Dataset};
use crate::error::{Error, Result};
use crate::eval::evaluate_samples;
use crate::mars::{MarsConfig, MarsModel};
use crate::synth::SceneParams;
use crate::train::{prepare_dataset, train_samples, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub name: &'static str,
    pub use_cffe: bool,
    pub use_bev: bool,
    pub use_mafl: bool,
}

/// Row order of the results table.
pub const VARIANTS: [Variant; 5] = [
    Variant { name: "baseline", use_cffe: false, use_bev: false, use_mafl: false },
    Variant { name: "+cffe", use_cffe: true, use_bev: false, use_mafl: false },
    Variant { name: "+bev", use_cffe: false, use_bev: true, use_mafl: false },
    Variant { name: "+cffe+bev", use_cffe: true, use_bev: true, use_mafl: false },
    Variant { name: "full", use_cffe: true, use_bev: true, use_mafl: true },
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSetup {
    /// Architecture shared by every row; its flags are overridden per variant.
    pub base: MarsConfig,
    /// Training settings; `seed` is overridden per run.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub seed: u64,
    pub miou: f64,
    pub moving_miou: Option<f64>,
    pub static_miou: Option<f64>,
    pub gating_violations: u64,
    pub config_hash: String,
    pub train_hash: String,
    pub eval_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub config: String,
    pub mean_miou: f64,
    pub mean_moving_miou: Option<f64>,
    pub mean_static_miou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<AblationSummary>,
    pub seeds: Vec<u64>,
    pub elapsed_seconds: f64,
}

/// Differences the results table is judged on, in IoU points (×100).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    /// Full minus baseline, mean moving-class IoU.
    pub moving_gain: f64,
    /// Seeds in which the full model has the highest mIoU (ties count).
    pub full_best_seeds: usize,
    pub cffe_delta: f64,
    pub bev_delta: f64,
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Trains and evaluates every variant for every seed. `on_row` sees each row, with the
/// model that produced it, as soon as it finishes.
pub fn ablation_suite(
    train: &Dataset,
    eval: &Dataset,
    setup: &AblationSetup,
    mut on_row: impl FnMut(&AblationRow, &MarsModel),
) -> Result<AblationReport> {
    if setup.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if train.taxonomy != eval.taxonomy {
        return Err(Error::ManifestMismatch("train and eval datasets use different taxonomies".into()));
    }
    let start = Instant::now();
    let tax = &train.taxonomy;
    let (train_hash, eval_hash) = (train.hash()?, eval.hash()?);
    let train_samples_ = prepare_dataset(train, &setup.base)?;
    let eval_samples = prepare_dataset(eval, &setup.base)?;
    let mut rows = Vec::new();
    for &seed in &setup.seeds {
        for v in &VARIANTS {
            let cfg = setup.base.clone().with_flags(v.use_cffe, v.use_bev, v.use_mafl);
            let mut model = MarsModel::new(cfg.clone(), seed)?;
            let tc = TrainConfig { seed, ..setup.train.clone() };
            train_samples(&mut model, &train_samples_, &tc, |_| {})?;
            let report = evaluate_samples(&model, &eval_samples, tax)?;
            let row = AblationRow {
                config: v.name.to_string(),
                seed,
                miou: report.miou,
                moving_miou: report.moving_miou,
                static_miou: report.static_miou,
                gating_violations: report.gating_violations,
                config_hash: cfg.hash(),
                train_hash: train_hash.clone(),
                eval_hash: eval_hash.clone(),
            };
            on_row(&row, &model);
            rows.push(row);
        }
    }
    let summary = VARIANTS
        .iter()
        .map(|v| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.config == v.name).collect();
            AblationSummary {
                config: v.name.to_string(),
                mean_miou: mine.iter().map(|r| r.miou).sum::<f64>() / mine.len() as f64,
                mean_moving_miou: mean_opt(mine.iter().map(|r| r.moving_miou)),
                mean_static_miou: mean_opt(mine.iter().map(|r| r.static_miou)),
            }
        })
        .collect();
    Ok(AblationReport {
        rows,
        summary,
        seeds: setup.seeds.clone(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

impl AblationReport {
    pub fn summary_of(&self, config: &str) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.config == config)
    }

    pub fn trend(&self) -> Result<Trend> {
        let get = |name: &str| {
            self.summary_of(name)
                .ok_or_else(|| Error::State(format!("no `{name}` row in ablation report")))
        };
        let (base, full) = (get("baseline")?, get("full")?);
        let moving_gain = match (full.mean_moving_miou, base.mean_moving_miou) {
            (Some(f), Some(b)) => 100.0 * (f - b),
            _ => f64::NAN,
        };
        let full_best_seeds = self
            .seeds
            .iter()
            .filter(|&&seed| {
                let of_seed: Vec<&AblationRow> = self.rows.iter().filter(|r| r.seed == seed).collect();
                let best = of_seed.iter().map(|r| r.miou).fold(f64::NEG_INFINITY, f64::max);
                of_seed.iter().any(|r| r.config == "full" && r.miou >= best)
            })
            .count();
        Ok(Trend {
            moving_gain,
            full_best_seeds,
            cffe_delta: 100.0 * (get("+cffe")?.mean_miou - base.mean_miou),
            bev_delta: 100.0 * (get("+bev")?.mean_miou - base.mean_miou),
        })
    }

    /// Per-seed rows then one `mean` row per configuration.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "nan".into());
        let mut out = String::from("config,seed,miou,moving_miou,static_miou,gating_violations,config_hash,train_hash,eval_hash\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{},{},{},{},{}",
                r.config,
                r.seed,
                r.miou,
                opt(r.moving_miou),
                opt(r.static_miou),
                r.gating_violations,
                r.config_hash,
                r.train_hash,
                r.eval_hash
            );
        }
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},mean,{:.6},{},{},,,,",
                s.config,
                s.mean_miou,
                opt(s.mean_moving_miou),
                opt(s.mean_static_miou)
            );
        }
        out
    }
}

/// A data recipe plus an ablation setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub scene: SceneParams,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    /// Train data uses this seed, eval data the next one.
    pub data_seed: u64,
    pub setup: AblationSetup,
}

impl Benchmark {
    /// 200 train / 50 eval scenes, 3 frames, 3 seeds; sized to finish in well under
    /// half an hour on one core.
    pub fn standard() -> Self {
        let bev = BevConfig::centered(16, 16, 1.5).expect("valid grid");
        Benchmark {
            scene: SceneParams {
                frames: 3,
                extent: 12.0,
                points_per_frame: 300,
                ..SceneParams::default()
            },
            train_scenes: 200,
            eval_scenes: 50,
            data_seed: 2024,
            setup: AblationSetup {
                base: MarsConfig::new(7, 3, bev),
                train: TrainConfig {
                    epochs: 20,
                    lr: 3e-3,
                    batch: 4,
                    ..TrainConfig::default()
                },
                seeds: vec![0, 1, 2],
            },
        }
    }

    /// Writes `root/train` and `root/eval`.
    pub fn generate(&self, root: &Path) -> Result<(Dataset, Dataset)> {
        let (tr, ev) = (root.join("train"), root.join("eval"));
        generate_dataset(&tr, &self.scene, self.train_scenes, self.data_seed)?;
        generate_dataset(&ev, &self.scene, self.eval_scenes, self.data_seed.wrapping_add(1))?;
        Ok((Dataset::open(&tr)?, Dataset::open(&ev)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Benchmark {
        let mut b = Benchmark::standard();
        b.scene.points_per_frame = 60;
        b.train_scenes = 3;
        b.eval_scenes = 2;
        b.setup.base.bev = BevConfig::centered(8, 8, 3.0).unwrap();
        b.setup.train.epochs = 1;
        b.setup.seeds = vec![5];
        b
    }

    #[test]
    fn one_row_per_config_with_shared_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let b = tiny();
        let (tr, ev) = b.generate(dir.path()).unwrap();
        let report = ablation_suite(&tr, &ev, &b.setup, |_, _| {}).unwrap();
        assert_eq!(report.rows.len(), VARIANTS.len());
        assert!(report.rows.iter().all(|r| r.train_hash == report.rows[0].train_hash));
        assert!(report.rows.iter().all(|r| r.eval_hash == report.rows[0].eval_hash));
        assert!(report.rows.iter().all(|r| r.gating_violations == 0));
        assert_eq!(report.to_csv().lines().count(), 1 + 5 + 5);

        // The baseline row is exactly a standalone all-flags-off run.
        let cfg = b.setup.base.clone().with_flags(false, false, false);
        let mut m = MarsModel::new(cfg.clone(), 5).unwrap();
        let samples = prepare_dataset(&tr, &cfg).unwrap();
        train_samples(&mut m, &samples, &TrainConfig { seed: 5, ..b.setup.train.clone() }, |_| {}).unwrap();
        let r = evaluate_samples(&m, &prepare_dataset(&ev, &cfg).unwrap(), &tr.taxonomy).unwrap();
        assert_eq!(r.miou, report.rows[0].miou);
        let t = report.trend().unwrap();
        assert!(t.full_best_seeds <= 1);
    }
}
