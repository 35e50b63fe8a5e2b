use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use marseg::ablation::{ablation_suite, AblationSetup, Benchmark};
use marseg::bev::BevConfig;
use marseg::dataset::{dataset_hash, generate_dataset, Dataset};
use marseg::eval::evaluate_samples;
use marseg::mars::{load_model, save_model, MarsConfig, MarsModel, ParamReport, PreparedSample};
use marseg::render::{error_map, GrayImage};
use marseg::synth::SceneParams;
use marseg::train::{prepare_dataset, train_samples, write_train_log, RunHeader, TrainConfig};
use marseg::{Error, Result};

#[derive(Parser)]
#[command(name = "marseg", version, about = "Motion-aware multi-scan LiDAR segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence dataset.
    Gen(GenArgs),
    /// Train a model and write a checkpoint, manifest and training log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train and evaluate the five ablation configurations over several seeds.
    Ablate(AblateArgs),
    /// Render the mean absolute motion-difference activation of one sample.
    RenderBev(RenderArgs),
    /// Render a top-down map of mispredicted target-frame points.
    RenderErrors(RenderArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frames per sequence.
    #[arg(long, default_value_t = 3)]
    frames: usize,
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    /// Points per frame.
    #[arg(long, default_value_t = 4000)]
    points: usize,
    /// Half-width of the square scene, meters.
    #[arg(long, default_value_t = 40.0)]
    extent: f64,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Frames per sample, k.
    #[arg(long, default_value_t = 3)]
    frames: usize,
    /// BEV grid as HxW pillars.
    #[arg(long, default_value = "160x160", value_parser = parse_size)]
    bev_size: (usize, usize),
    /// Pillar edge, meters.
    #[arg(long, default_value_t = 0.5)]
    cell: f64,
    #[arg(long)]
    no_cffe: bool,
    /// Also disables MAFL, which needs the BEV branch.
    #[arg(long)]
    no_bev: bool,
    #[arg(long)]
    no_mafl: bool,
}

#[derive(Args, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    wc: f64,
    #[arg(long, default_value_t = 1.0)]
    wm: f64,
    #[arg(long, default_value_t = 4)]
    batch: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Training dataset. Not needed with --standard.
    #[arg(long, required_unless_present = "standard")]
    dataset: Option<PathBuf>,
    /// Evaluation dataset. Not needed with --standard.
    #[arg(long, required_unless_present = "standard")]
    eval_dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// First model seed; runs use `seed`, `seed + 1`, ...
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Generate the standard benchmark under `out/data` and run it with its own settings.
    #[arg(long, conflicts_with_all = ["dataset", "eval_dataset"])]
    standard: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Sequence index within the dataset.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    /// Image path.
    #[arg(long)]
    out: PathBuf,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    Ok((h, w))
}

impl ModelArgs {
    fn config(&self, num_classes: usize) -> Result<MarsConfig> {
        let bev = BevConfig::centered(self.bev_size.0, self.bev_size.1, self.cell)?;
        let use_bev = !self.no_bev;
        let cfg = MarsConfig::new(num_classes, self.frames, bev).with_flags(
            !self.no_cffe,
            use_bev,
            use_bev && !self.no_mafl,
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

impl OptimArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            seed,
            wc: self.wc,
            wm: self.wm,
            batch: self.batch,
        }
    }
}

fn short_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_vec(value).expect("serializable");
    hex::encode(&Sha256::digest(&json)[..8])
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io { path: path.into(), source: e })
}

/// The training run a checkpoint came from, stored as `<checkpoint stem>.run.json`.
fn run_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("run.json")
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let params = SceneParams {
        frames: a.frames,
        extent: a.extent,
        points_per_frame: a.points,
        noise_sigma: a.noise,
        ..SceneParams::default()
    };
    generate_dataset(&a.out, &params, a.scenes, a.seed)?;
    let header = RunHeader {
        seed: a.seed,
        config_hash: short_hash(&(&params, a.scenes)),
        dataset_hash: dataset_hash(&a.out)?,
    };
    print!("{}", header.to_comment());
    println!("wrote {} sequences to {}", a.scenes, a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let cfg = a.model.config(ds.taxonomy.num_classes())?;
    let tc = a.optim.config(a.seed);
    tc.validate()?;
    let header = RunHeader {
        seed: a.seed,
        config_hash: short_hash(&(&cfg, &tc)),
        dataset_hash: ds.hash()?,
    };
    print!("{}", header.to_comment());
    let samples = prepare_dataset(&ds, &cfg)?;
    let mut model = MarsModel::new(cfg, a.seed)?;
    let logs = train_samples(&mut model, &samples, &tc, |l| {
        eprintln!("epoch {:>4}  loss {:.6}  (c {:.6}, m {:.6})", l.epoch, l.loss, l.loss_c, l.loss_m);
    })?;
    create_dir(&a.out)?;
    let ckpt = a.out.join("model.ckpt");
    save_model(&model, &ds.taxonomy, &ckpt)?;
    let mut run = serde_json::to_string_pretty(&header)?;
    run.push('\n');
    write(&run_path(&ckpt), run)?;
    write_train_log(&a.out.join("train_log.csv"), &header, &logs)?;
    let report = ParamReport::from_params(&model.params);
    write(&a.out.join("params.txt"), format!("{}{}", header.to_comment(), report.to_text()))?;
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

fn load_with_header(checkpoint: &Path, ds: &Dataset) -> Result<(MarsModel, RunHeader)> {
    let model = load_model(checkpoint, &ds.taxonomy)?;
    let seed = match std::fs::read(run_path(checkpoint)) {
        Ok(bytes) => serde_json::from_slice::<RunHeader>(&bytes)?.seed,
        Err(_) => 0,
    };
    let header = RunHeader {
        seed,
        config_hash: model.config.hash(),
        dataset_hash: ds.hash()?,
    };
    Ok((model, header))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let (model, header) = load_with_header(&a.checkpoint, &ds)?;
    let samples = prepare_dataset(&ds, &model.config)?;
    let report = evaluate_samples(&model, &samples, &ds.taxonomy)?;
    create_dir(&a.out)?;
    let ckpt = format!("# checkpoint={}\n", file_hash(&a.checkpoint)?);
    write(
        &a.out.join("eval.csv"),
        format!("{}{ckpt}{}", header.to_comment(), report.to_csv()),
    )?;
    write(
        &a.out.join("confusion.csv"),
        format!("{}{ckpt}{}", header.to_comment(), report.confusion_csv()),
    )?;
    print!("{}", header.to_comment());
    println!(
        "miou {:.4}  moving {}  static {}  points {}",
        report.miou,
        report.moving_miou.map_or("nan".into(), |v| format!("{v:.4}")),
        report.static_miou.map_or("nan".into(), |v| format!("{v:.4}")),
        report.points
    );
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    create_dir(&a.out)?;
    let (train, eval, setup) = if a.standard {
        let bench = Benchmark::standard();
        let (tr, ev) = bench.generate(&a.out.join("data"))?;
        (tr, ev, bench.setup)
    } else {
        let tr = Dataset::open(a.dataset.as_deref().expect("required by clap"))?;
        let ev = Dataset::open(a.eval_dataset.as_deref().expect("required by clap"))?;
        let base = a.model.config(tr.taxonomy.num_classes())?;
        let setup = AblationSetup {
            base,
            train: a.optim.config(a.seed),
            seeds: (0..a.seeds).map(|i| a.seed + i).collect(),
        };
        (tr, ev, setup)
    };
    setup.train.validate()?;
    let header = RunHeader {
        seed: setup.seeds[0],
        config_hash: short_hash(&setup),
        dataset_hash: train.hash()?,
    };
    print!("{}", header.to_comment());
    let report = ablation_suite(&train, &eval, &setup, |r, _| {
        eprintln!("{:<10} seed {:<3} miou {:.4}", r.config, r.seed, r.miou);
    })?;
    write(&a.out.join("ablation.csv"), format!("{}{}", header.to_comment(), report.to_csv()))?;
    #[derive(Serialize)]
    struct Out<'a> {
        header: &'a RunHeader,
        setup: &'a AblationSetup,
        report: &'a marseg::ablation::AblationReport,
    }
    let mut json = serde_json::to_string_pretty(&Out { header: &header, setup: &setup, report: &report })?;
    json.push('\n');
    write(&a.out.join("ablation.json"), json)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn render_inputs(a: &RenderArgs) -> Result<(MarsModel, RunHeader, PreparedSample)> {
    let ds = Dataset::open(&a.dataset)?;
    if a.sample >= ds.len() {
        return Err(Error::UnsupportedSample(format!(
            "sample {} out of range, dataset has {}",
            a.sample,
            ds.len()
        )));
    }
    let (model, header) = load_with_header(&a.checkpoint, &ds)?;
    let cfg = &model.config;
    let (frames, poses) = ds.read_sample(a.sample, cfg.frames)?;
    let s = PreparedSample::new(&frames, &poses, &cfg.bev, cfg.voxel, cfg.descriptor_scale(), &ds.taxonomy)?;
    Ok((model, header, s))
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn cmd_render_bev(a: &RenderArgs) -> Result<()> {
    let (model, header, s) = render_inputs(a)?;
    let map = model.discrepancy_map(&s)?;
    let (h, w) = (model.config.bev.height, model.config.bev.width);
    // Grid row 0 is the smallest y; flip so the image reads like a map.
    let flipped: Vec<f64> = (0..h).rev().flat_map(|r| map[r * w..(r + 1) * w].iter().copied()).collect();
    let (img, lo, hi) = GrayImage::from_scaled(h, w, &flipped);
    img.write_pgm(&a.out)?;
    write(
        &sidecar(&a.out, ".scale.txt"),
        format!("{}sample {}\nmin {lo:.9e}\nmax {hi:.9e}\n", header.to_comment(), a.sample),
    )?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_render_errors(a: &RenderArgs) -> Result<()> {
    let (model, header, s) = render_inputs(a)?;
    let ds = Dataset::open(&a.dataset)?;
    let truth = &s.require_labels()?.codes;
    let predicted = model.infer(&s, &ds.taxonomy)?;
    let (img, legend) = error_map(&s.target_points, truth, &predicted, &model.config.bev)?;
    img.write_ppm(&a.out)?;
    write(
        &sidecar(&a.out, ".legend.txt"),
        format!(
            "{}sample {}\ngray = correct, red = incorrect, black = empty\n{}",
            header.to_comment(),
            a.sample,
            legend.to_text()
        ),
    )?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("MARSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("MARSEG_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::RenderBev(a) => cmd_render_bev(a),
        Command::RenderErrors(a) => cmd_render_errors(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) => 1,
                _ if e.is_data_error() => 2,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}
