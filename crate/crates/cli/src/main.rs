use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use posedepth::datagen::{generate_dataset, render_sequence, sequence_seed, simulate_stage1, MotionGenConfig, Stage1NoiseModel};
use posedepth::metrics::make_report;
use posedepth::plot::{loss_curve_svg, rf_error_svg, skeleton_overlay_svg};
use posedepth::stage2::{receptive_field, InputMode, TemporalModelConfig};
use posedepth::training::{
    evaluate_model, refine_sequence, run_ablation_grid, train_with_progress, AblationTable, AugmentationConfig,
    Checkpoint, EpochRecord, GridSpec, TrainConfig,
};
use posedepth::{
    read_sequence, write_sequence, CameraIntrinsics, DatasetManifest, Error, NormalizationSpec, Pose3D, PoseSequence,
    SkeletonSpec,
};

#[derive(Parser)]
#[command(name = "posedepth", version, about = "Two-stage 3D pose pipeline on synthetic data")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground-truth motion sequences and a dataset manifest.
    Synth(SynthArgs),
    /// Add simulated first-stage observations to every sequence of a manifest.
    Simulate(SimulateArgs),
    /// Train a temporal refiner and write a checkpoint.
    Train(TrainArgs),
    /// Score predictions under both protocols and write an EvalReport.
    Eval(EvalArgs),
    /// Run a checkpoint over one sequence and store the refined poses in `pred`.
    Refine(RefineArgs),
    /// Train and evaluate the input-mode x receptive-field ablation table.
    Grid(GridArgs),
    /// Write SVG figures: loss curves, error-vs-RF bars, skeleton overlays.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Random seed (falls back to $POSE3D_SEED, then 0).
    #[arg(long, env = "POSE3D_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for poseseq files and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Number of sequences.
    #[arg(long, default_value_t = 25)]
    sequences: usize,
    /// Frames per sequence.
    #[arg(long, default_value_t = 600)]
    frames: usize,
    #[arg(long, default_value_t = 50.0)]
    fps: f64,
    /// Sequences placed in the test split (default: one in five, at least one when N >= 2).
    #[arg(long)]
    test: Option<usize>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// Input manifest with ground-truth sequences.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the noisy sequences and their manifest.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    sigma_uv: f64,
    #[arg(long, default_value_t = 46.7)]
    sigma_depth: f64,
    #[arg(long, default_value_t = 0.02)]
    outlier_rate: f64,
    #[arg(long, default_value_t = 3.0)]
    outlier_scale: f64,
    /// AR(1) coefficient of the depth noise.
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// Extra isotropic noise, in normalized units, added to the test split only.
    #[arg(long, default_value_t = 0.0)]
    test_gap: f64,
    /// Also render every test sequence as PPM frames under this directory.
    #[arg(long)]
    render: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    render_size: usize,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Network input: 2d or 2d+depth.
    #[arg(long, default_value = "2d+depth", value_parser = parse_input_mode)]
    input_mode: InputMode,
    /// Kernel width and block count as W,B.
    #[arg(long, default_value = "3,4", value_parser = parse_wb)]
    wb: (usize, usize),
    #[arg(long, default_value_t = 1024)]
    channels: usize,
    #[arg(long, default_value_t = 0.25)]
    dropout: f64,
}

#[derive(Args, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 80)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    #[arg(long, default_value_t = 0.95)]
    lr_decay: f64,
    /// Input frames per window beyond the receptive field.
    #[arg(long, default_value_t = 63)]
    window_margin: usize,
    /// Epochs trained with batch statistics before batch norm is frozen.
    #[arg(long, default_value_t = 5)]
    bn_warmup: usize,
    /// Trailing train sequences held out for checkpoint selection.
    #[arg(long, default_value_t = 0)]
    val: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Gaussian augmentation sigma in normalized units; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Checkpoint path; the sidecar goes to CKPT.json and the history to CKPT.history.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct EvalArgs {
    /// Manifest whose test split is evaluated.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    data: Option<PathBuf>,
    /// Sequence files to evaluate instead of a manifest's test split.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Checkpoint to run; without it the sequences' `pred` fields are scored.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// EvalReport output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1024)]
    channels: usize,
    #[arg(long, default_value_t = 0.25)]
    dropout: f64,
    #[command(flatten)]
    optim: OptimArgs,
    /// Augmentation sigmas, comma separated; 0 means off.
    #[arg(long, default_value = "0,0.1", value_delimiter = ',')]
    sigmas: Vec<f64>,
    /// Input modes, comma separated.
    #[arg(long, default_value = "2d,2d+depth", value_delimiter = ',', value_parser = parse_input_mode)]
    input_modes: Vec<InputMode>,
    /// Rendered text table.
    #[arg(long)]
    out: PathBuf,
    /// Machine-readable table for `plot --grid`.
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct PlotArgs {
    /// Output directory for SVG files.
    #[arg(long)]
    out: PathBuf,
    /// Training history JSON written by `train`.
    #[arg(long)]
    history: Vec<PathBuf>,
    /// Ablation table JSON written by `grid --json`.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Sequence whose frames are drawn as 2D skeleton overlays.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Frame indices for the overlay.
    #[arg(long, default_value = "0", value_delimiter = ',')]
    frames: Vec<usize>,
    /// Manifest supplying the camera for overlays (default: benchmark camera).
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

fn parse_input_mode(s: &str) -> Result<InputMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_wb(s: &str) -> Result<(usize, usize), String> {
    let (w, b) = s.split_once(',').ok_or_else(|| format!("expected W,B, got {s:?}"))?;
    let w = w.trim().parse().map_err(|_| format!("bad kernel width {w:?}"))?;
    let b = b.trim().parse().map_err(|_| format!("bad block count {b:?}"))?;
    Ok((w, b))
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::InvalidConfig(_)) => 2,
            Failure::Core(e) => core_code(e),
        }
    }
}

fn core_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) | Error::Numerical(_) | Error::Degenerate(_) => 4,
        Error::AtFrame { source, .. } => core_code(source),
        _ => 3,
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type Outcome = Result<(), Failure>;

fn show_config(name: &str, seed: u64, value: serde_json::Value) {
    println!("{name}: seed {seed}");
    println!("config: {value}");
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn synth(a: SynthArgs) -> Outcome {
    let test = a.test.unwrap_or(if a.sequences >= 2 { (a.sequences / 5).max(1) } else { 0 });
    if test > a.sequences {
        return Err(Failure::Usage(format!("--test {test} exceeds --sequences {}", a.sequences)));
    }
    let cfg = MotionGenConfig {
        frames: a.frames,
        fps: a.fps,
        seed: a.seed.seed,
        ..Default::default()
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    show_config(
        "synth",
        a.seed.seed,
        serde_json::json!({"sequences": a.sequences, "test": test, "frames": a.frames, "fps": a.fps}),
    );
    let seqs = generate_dataset(&SkeletonSpec::h36m17(), &cfg, a.sequences)?;
    create_dir(&a.out)?;
    let mut names = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        let name = PathBuf::from(format!("seq_{i:03}.poseseq"));
        write_sequence(s, a.out.join(&name))?;
        names.push(name);
    }
    let split = a.sequences - test;
    let test_names = names.split_off(split);
    DatasetManifest::new(names, test_names, CameraIntrinsics::benchmark()).write(a.out.join("manifest.json"))?;
    println!("wrote {} sequences and {}", a.sequences, a.out.join("manifest.json").display());
    Ok(())
}

fn simulate(a: SimulateArgs) -> Outcome {
    let m = DatasetManifest::read(&a.data)?;
    let base = Stage1NoiseModel {
        sigma_uv_px: a.sigma_uv,
        sigma_depth_mm: a.sigma_depth,
        outlier_rate: a.outlier_rate,
        outlier_scale: a.outlier_scale,
        rho: a.rho,
        seed: a.seed.seed,
    };
    base.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if !(a.test_gap >= 0.0 && a.test_gap.is_finite()) {
        return Err(Failure::Usage("--test-gap must be >= 0".into()));
    }
    let wide = base.widened(a.test_gap, &m.camera, &NormalizationSpec::default());
    show_config(
        "simulate",
        a.seed.seed,
        serde_json::json!({"train_noise": format!("{base:?}"), "test_noise": format!("{wide:?}"), "test_gap": a.test_gap}),
    );
    create_dir(&a.out)?;
    let mut k = 0u64;
    let mut run = |paths: &[PathBuf], nm: &Stage1NoiseModel, tag: &str| -> Result<Vec<PathBuf>, Error> {
        let mut out = Vec::new();
        for (i, p) in paths.iter().enumerate() {
            let seq = read_sequence(m.resolve(p))?;
            let sim = simulate_stage1(&seq, &m.camera, &nm.with_seed(sequence_seed(a.seed.seed, k)))?;
            k += 1;
            let name = PathBuf::from(format!("{tag}_{i:03}.poseseq"));
            write_sequence(&sim, a.out.join(&name))?;
            out.push(name);
        }
        Ok(out)
    };
    let train = run(&m.train, &base, "train")?;
    let test = run(&m.test, &wide, "test")?;
    DatasetManifest::new(train, test.clone(), m.camera).write(a.out.join("manifest.json"))?;
    if let Some(dir) = &a.render {
        for (i, p) in test.iter().enumerate() {
            let seq = read_sequence(a.out.join(p))?;
            let files = render_sequence(&seq, &m.camera, dir.join(format!("test_{i:03}")), a.render_size, a.render_size)?;
            println!("rendered {} frames of test_{i:03}", files.len());
        }
    }
    println!("wrote {} train and {} test sequences to {}", m.train.len(), test.len(), a.out.display());
    Ok(())
}

fn model_config(m: &ModelArgs) -> TemporalModelConfig {
    TemporalModelConfig {
        kernel_width: m.wb.0,
        blocks: m.wb.1,
        channels: m.channels,
        dropout: m.dropout,
        input_mode: m.input_mode,
        ..TemporalModelConfig::default()
    }
}

fn train_config(o: &OptimArgs, mcfg: &TemporalModelConfig, sigma: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: o.epochs,
        batch_size: o.batch_size,
        window_length: receptive_field(mcfg) + o.window_margin,
        learning_rate: o.lr,
        lr_decay: o.lr_decay,
        seed,
        augmentation: AugmentationConfig::gaussian(sigma),
        input_mode: mcfg.input_mode,
        bn_warmup_epochs: o.bn_warmup,
    }
}

fn split_val(mut train: Vec<PoseSequence>, val: usize) -> Result<(Vec<PoseSequence>, Vec<PoseSequence>), Failure> {
    if val >= train.len() && val > 0 {
        return Err(Failure::Usage(format!("--val {val} leaves no training sequences out of {}", train.len())));
    }
    let held = train.split_off(train.len() - val);
    Ok((train, held))
}

fn history_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".history.json");
    PathBuf::from(s)
}

fn train(a: TrainArgs) -> Outcome {
    let mcfg = model_config(&a.model);
    let tcfg = train_config(&a.optim, &mcfg, a.sigma, a.seed.seed);
    mcfg.validate()?;
    tcfg.validate(&mcfg)?;
    show_config(
        "train",
        a.seed.seed,
        serde_json::json!({"model": mcfg, "train": tcfg, "val_sequences": a.optim.val}),
    );
    println!("receptive field: {}", receptive_field(&mcfg));
    if tcfg.augmentation.is_active() {
        println!("augmentation: gaussian, sigma = {}", a.sigma);
    } else {
        println!("augmentation: disabled (sigma = 0)");
    }
    let m = DatasetManifest::read(&a.data)?;
    let (tr, val) = split_val(m.load_train()?, a.optim.val)?;
    let ckpt = train_with_progress(&tr, &val, &m.camera, &mcfg, &tcfg, |r: &EpochRecord| {
        match r.val_mpjpe_mm {
            Some(v) => println!("epoch {:>4}  lr {:.3e}  train {:.3} mm  val {:.3} mm", r.epoch, r.learning_rate, r.train_loss_mm, v),
            None => println!("epoch {:>4}  lr {:.3e}  train {:.3} mm", r.epoch, r.learning_rate, r.train_loss_mm),
        }
    })?;
    ckpt.save(&a.out)?;
    write_text(&history_path(&a.out), &ckpt.history_json()?)?;
    println!("final train loss: {:.6} mm", ckpt.loss_curve.last().copied().unwrap_or(f64::NAN));
    if let Some(v) = ckpt.history.get(ckpt.best_epoch).and_then(|r| r.val_mpjpe_mm) {
        println!("best epoch: {} (val {:.3} mm)", ckpt.best_epoch, v);
    }
    println!("checkpoint: {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    show_config(
        "eval",
        a.seed.seed,
        serde_json::json!({"data": a.data, "input": a.input, "ckpt": a.ckpt, "out": a.out}),
    );
    let seqs = match &a.data {
        Some(d) => DatasetManifest::read(d)?.load_test()?,
        None => a.input.iter().map(read_sequence).collect::<Result<Vec<_>, _>>()?,
    };
    if seqs.is_empty() {
        return Err(Failure::Core(Error::Missing("no sequences to evaluate".into())));
    }
    let report = match &a.ckpt {
        Some(c) => evaluate_model(&Checkpoint::load(c)?, &seqs)?,
        None => {
            let mut names = Vec::new();
            let mut preds = Vec::new();
            let mut gts = Vec::new();
            for (i, s) in seqs.iter().enumerate() {
                names.push(format!("seq{i:03}"));
                let p: Option<Vec<Pose3D>> = s.frames.iter().map(|f| f.pred.clone()).collect();
                preds.push(p.ok_or_else(|| Error::Missing(format!("seq{i:03}: frames without pred; pass --ckpt")))?);
                gts.push(s.gt_poses()?.into_iter().cloned().collect());
            }
            make_report(&names, &seqs[0].skeleton.joint_names, &preds, &gts)?
        }
    };
    print!("{}", report.table());
    if let Some(out) = &a.out {
        report.write(out)?;
        println!("report: {}", out.display());
    }
    Ok(())
}

fn refine(a: RefineArgs) -> Outcome {
    show_config(
        "refine",
        a.seed.seed,
        serde_json::json!({"ckpt": a.ckpt, "input": a.input, "out": a.out}),
    );
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let seq = read_sequence(&a.input)?;
    let refined = refine_sequence(&ckpt, &seq)?;
    write_sequence(&refined, &a.out)?;
    println!("refined {} frames -> {}", refined.len(), a.out.display());
    Ok(())
}

fn grid(a: GridArgs) -> Outcome {
    let model = TemporalModelConfig {
        channels: a.channels,
        dropout: a.dropout,
        ..TemporalModelConfig::default()
    };
    let mut spec = GridSpec::standard(model.clone(), train_config(&a.optim, &model, 0.0, a.seed.seed));
    spec.sigmas = a.sigmas.clone();
    spec.input_modes = a.input_modes.clone();
    spec.window_margin = a.optim.window_margin;
    if spec.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Failure::Usage("--sigmas must be >= 0".into()));
    }
    show_config("grid", a.seed.seed, serde_json::json!(spec));
    let m = DatasetManifest::read(&a.data)?;
    let (tr, val) = split_val(m.load_train()?, a.optim.val)?;
    let test = m.load_test()?;
    let table = run_ablation_grid(&tr, &val, &test, &m.camera, &spec, |row, cell| match (cell.protocol1_mm, &cell.error) {
        (Some(v), _) => println!("{} rf {:>3}: {:.2} mm", row.label(), cell.receptive_field, v),
        (None, Some(e)) => println!("{} rf {:>3}: failed ({e})", row.label(), cell.receptive_field),
        (None, None) => {}
    });
    let text = table.render();
    print!("{text}");
    write_text(&a.out, &text)?;
    if let Some(j) = &a.json {
        write_text(j, &serde_json::to_string_pretty(&table).map_err(Error::from)?)?;
    }
    Ok(())
}

fn plot(a: PlotArgs) -> Outcome {
    show_config(
        "plot",
        a.seed.seed,
        serde_json::json!({"history": a.history, "grid": a.grid, "overlay": a.overlay, "frames": a.frames}),
    );
    if a.history.is_empty() && a.grid.is_none() && a.overlay.is_none() {
        return Err(Failure::Usage("nothing to plot: pass --history, --grid or --overlay".into()));
    }
    create_dir(&a.out)?;
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })
    };
    if !a.history.is_empty() {
        let mut series = Vec::new();
        for p in &a.history {
            let hist: Vec<EpochRecord> = serde_json::from_str(&read(p)?).map_err(Error::from)?;
            let stem = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let stem = stem.trim_end_matches(".history.json").to_string();
            series.push((format!("{stem} train"), hist.iter().map(|r| r.train_loss_mm).collect()));
            if hist.iter().all(|r| r.val_mpjpe_mm.is_some()) && !hist.is_empty() {
                series.push((format!("{stem} val"), hist.iter().filter_map(|r| r.val_mpjpe_mm).collect()));
            }
        }
        let path = a.out.join("loss_curves.svg");
        write_text(&path, &loss_curve_svg("Training loss", &series))?;
        println!("wrote {}", path.display());
    }
    if let Some(g) = &a.grid {
        let table: AblationTable = serde_json::from_str(&read(g)?).map_err(Error::from)?;
        let path = a.out.join("error_vs_rf.svg");
        write_text(&path, &rf_error_svg("MPJPE by input and receptive field", &table))?;
        println!("wrote {}", path.display());
    }
    if let Some(o) = &a.overlay {
        let cam = match &a.data {
            Some(d) => DatasetManifest::read(d)?.camera,
            None => CameraIntrinsics::benchmark(),
        };
        let seq = read_sequence(o)?;
        let mut panels = Vec::new();
        for &t in &a.frames {
            let f = seq
                .frames
                .get(t)
                .ok_or_else(|| Failure::Usage(format!("frame {t} out of range ({} frames)", seq.len())))?;
            let mut layers = Vec::new();
            if let Some(abs) = f.absolute_gt() {
                layers.push(("ground truth".to_string(), cam.project(&abs, seq.skeleton.root_index)?));
            }
            if let Some(obs) = &f.obs {
                layers.push(("observation".to_string(), obs.clone()));
            }
            if let (Some(p), Some(r)) = (&f.pred, f.root_abs_mm) {
                let abs: Vec<[f64; 3]> = p.coords_mm.iter().map(|q| [q[0] + r[0], q[1] + r[1], q[2] + r[2]]).collect();
                layers.push(("refined".to_string(), cam.project(&abs, seq.skeleton.root_index)?));
            }
            panels.push((t, layers));
        }
        let path = a.out.join("skeleton_overlay.svg");
        write_text(&path, &skeleton_overlay_svg("2D skeleton overlay", &seq.skeleton, &cam, &panels))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Synth(a) => synth(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Refine(a) => refine(a),
        Command::Grid(a) => grid(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
