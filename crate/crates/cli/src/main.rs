//! `cellstn` — train and evaluate the spatial-transformer cell classifier.
//!
//! Subcommands: `synth` (generate a labeled corpus), `crop` (materialize
//! patches), `train` (three-stage transformer schedule), `baseline` (plain
//! CNN), `eval` (score a checkpoint), `cv` (k-fold cross-validation), and
//! `gradcheck` (finite-difference suite). Artifact-producing commands write
//! into a fresh run directory named by timestamp and seed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use cellstn::data::{crop_centered, crop_random_offset, save_png, Dataset};
use cellstn::error::{Error, Result};
use cellstn::gradsuite;
use cellstn::img::ImageU8;
use cellstn::networks::checkpoint;
use cellstn::pipeline::{
    build_train_set, cross_validate, evaluate_net, evaluate_stn, init_models, render_report,
    save_focus_dumps, stage1_train_classifier, stage2_train_localizer, stage3_joint_refine,
    test_samples, train_baseline, write_metrics_csv, StageReport, TrainConfig,
};
use cellstn::seeding;
use cellstn::Scalar;

#[derive(Parser)]
#[command(name = "cellstn", version, about = "Spatial-transformer cell classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus (PNG canvases + manifest.csv)
    Synth(SynthArgs),
    /// Materialize training patches from a corpus (PNG crops + crops.csv)
    Crop(CropArgs),
    /// Run the three-stage transformer training on a corpus
    Train(TrainArgs),
    /// Train the plain CNN baseline on a corpus
    Baseline(TrainArgs),
    /// Evaluate a checkpoint on a corpus
    Eval(EvalArgs),
    /// k-fold cross-validation: full pipeline per fold, ensemble metrics
    Cv(CvArgs),
    /// Run the finite-difference gradient suite, one line per op
    Gradcheck,
}

/// Config-file plumbing shared by every training-adjacent subcommand.
/// Flags override file keys; the configured epoch counts are divided by
/// ten for desk runs unless `--paper-schedule` keeps them literal.
#[derive(Args)]
struct ConfigOpts {
    /// TOML config file; omitted keys use the reference schedule
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Use the configured epoch counts literally (no ÷10 desk scaling)
    #[arg(long)]
    paper_schedule: bool,
    /// Override the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the fold count
    #[arg(long)]
    k: Option<usize>,
    /// Override the batch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override the loss-mixing weight kappa
    #[arg(long)]
    kappa: Option<f64>,
}

impl ConfigOpts {
    fn load(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_path(path)?,
            None => TrainConfig::default(),
        };
        if !self.paper_schedule {
            cfg = cfg.desk_scaled();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(batch) = self.batch_size {
            cfg.batch_size = batch;
        }
        if let Some(kappa) = self.kappa {
            cfg.kappa = kappa;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Records to generate per class
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Corpus directory to create
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum CropMode {
    /// Cell-centered crop of side d_c (stage-1 style)
    Centered,
    /// Randomly displaced patch of side d_i (stage-2 style)
    Offset,
}

#[derive(Args)]
struct CropArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Corpus directory (with manifest.csv)
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Directory for the materialized patches
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = CropMode::Centered)]
    mode: CropMode,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Corpus directory (with manifest.csv)
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Parent directory for the run directory
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    /// Write side-by-side focus-crop PNGs for this many samples
    #[arg(long, value_name = "N", default_value_t = 0)]
    dump_focus: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    /// Localizer + classifier on off-center patches
    Stn,
    /// Baseline CNN on off-center patches
    Baseline,
    /// Baseline CNN on centered patches
    BaselineCentered,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Corpus directory (with manifest.csv)
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Checkpoint produced by `train`, `baseline`, or `cv`
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalMode::Stn)]
    mode: EvalMode,
    /// Also write metrics.csv into a run directory under this parent
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Corpus directory (with manifest.csv)
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Parent directory for the run directory
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    /// Write side-by-side focus-crop PNGs for this many fold-0 test samples
    #[arg(long, value_name = "N", default_value_t = 0)]
    dump_focus: usize,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(&args),
        Command::Crop(args) => cmd_crop(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Baseline(args) => cmd_baseline(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Cv(args) => cmd_cv(&args),
        Command::Gradcheck => cmd_gradcheck(),
    }
}

fn load_corpus(dir: &Path) -> Result<Dataset> {
    let ds = Dataset::load(&dir.join("manifest.csv"), dir)?;
    if ds.is_empty() {
        return Err(Error::contract(
            "load_corpus",
            format!("corpus at {} has no records", dir.display()),
        ));
    }
    Ok(ds)
}

/// Create `<out>/run-<timestamp>-seed<seed>`, uniquified if a run lands on
/// the same second.
fn make_run_dir(out: &Path, seed: u64) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("run-{stamp}-seed{seed}");
    for attempt in 0..100u32 {
        let name = if attempt == 0 {
            base.clone()
        } else {
            format!("{base}-{}", attempt + 1)
        };
        let dir = out.join(name);
        match fs::create_dir_all(out).and_then(|()| fs::create_dir(&dir)) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    Err(Error::contract(
        "make_run_dir",
        format!("could not find a free run directory under {}", out.display()),
    ))
}

fn print_stage(report: &StageReport) {
    println!(
        "{:<9} epochs={:<4} loss {:.6} -> {:.6}",
        report.stage,
        report.epoch_losses.len(),
        report.first(),
        report.last(),
    );
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = args.config.load()?;
    if args.n == 0 {
        return Err(Error::contract("synth", "--n must be at least 1"));
    }
    let ds = Dataset::synthetic(args.n, &cfg.geometry(), cfg.seed);
    let manifest = ds.save(&args.out)?;
    println!(
        "wrote {} records ({} per class, seed {}) to {}",
        ds.len(),
        args.n,
        cfg.seed,
        manifest.display(),
    );
    Ok(())
}

fn cmd_crop(args: &CropArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let geom = cfg.geometry();
    let ds = load_corpus(&args.data)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut rng = seeding::stream(cfg.seed, "crop-offsets", 0);
    let csv_path = args.out.join("crops.csv");
    let mut rows = String::from("image,class,dx,dy\n");
    for rec in &ds.records {
        let sample = match args.mode {
            CropMode::Centered => crop_centered::<Scalar>(rec, cfg.d_c)?,
            CropMode::Offset => crop_random_offset::<Scalar, _>(rec, &geom, &mut rng)?,
        };
        let name = format!("{}-crop.png", rec.source_id);
        save_png(
            &ImageU8::from_planar(&sample.image)?,
            &args.out.join(&name),
        )?;
        rows.push_str(&format!(
            "{},{},{},{}\n",
            name,
            sample.label.name(),
            sample.dx,
            sample.dy
        ));
    }
    fs::write(&csv_path, rows).map_err(|e| Error::io(&csv_path, e))?;
    println!("wrote {} crops to {}", ds.len(), args.out.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let ds = load_corpus(&args.data)?;
    let run_dir = make_run_dir(&args.out, cfg.seed)?;
    println!("run directory: {}", run_dir.display());

    let indices: Vec<usize> = (0..ds.len()).collect();
    let set = build_train_set(&ds, &indices, seeding::derive(cfg.seed, "train-set", 0))?;
    let mut models = init_models(&cfg, cfg.seed)?;

    let centered = set.centered_all(cfg.d_c)?;
    print_stage(&stage1_train_classifier(
        &cfg,
        &centered,
        &mut models,
        seeding::derive(cfg.seed, "stage1", 0),
    )?);
    print_stage(&stage2_train_localizer(
        &cfg,
        &set,
        &mut models,
        seeding::derive(cfg.seed, "stage2", 0),
    )?);
    print_stage(&stage3_joint_refine(
        &cfg,
        &set,
        &mut models,
        seeding::derive(cfg.seed, "stage3", 0),
    )?);

    let ckpt = run_dir.join("model.ckpt");
    checkpoint::save_to_path(&models, &ckpt)?;
    println!("checkpoint: {}", ckpt.display());
    dump_focus_crops(&run_dir, &cfg, &models, &ds, args.dump_focus)?;
    Ok(())
}

fn cmd_baseline(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let ds = load_corpus(&args.data)?;
    let run_dir = make_run_dir(&args.out, cfg.seed)?;
    println!("run directory: {}", run_dir.display());

    let indices: Vec<usize> = (0..ds.len()).collect();
    let set = build_train_set(&ds, &indices, seeding::derive(cfg.seed, "train-set", 0))?;
    let mut models = init_models(&cfg, cfg.seed)?;
    print_stage(&train_baseline(
        &cfg,
        &set,
        &mut models,
        seeding::derive(cfg.seed, "baseline", 0),
    )?);

    let ckpt = run_dir.join("model.ckpt");
    checkpoint::save_to_path(&models, &ckpt)?;
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let ds = load_corpus(&args.data)?;
    let models = checkpoint::load_from_path::<Scalar>(&args.model)?;

    let indices: Vec<usize> = (0..ds.len()).collect();
    let (off_center, centered) = test_samples(
        &ds.records,
        &indices,
        &cfg.geometry(),
        seeding::derive(cfg.seed, "test", 0),
    )?;

    let (title, report) = match args.mode {
        EvalMode::Stn => (
            "CNN-STN (off-center test)",
            evaluate_stn(
                models.group("localizer")?,
                models.group("classifier")?,
                &off_center,
                cfg.batch_size,
            )?,
        ),
        EvalMode::Baseline => (
            "CNN baseline (off-center test)",
            evaluate_net(models.group("baseline")?, &off_center, cfg.batch_size)?,
        ),
        EvalMode::BaselineCentered => (
            "CNN baseline (centered test)",
            evaluate_net(models.group("baseline")?, &centered, cfg.batch_size)?,
        ),
    };

    print!("{}", render_report(&[(title, &report)]));
    if let Some(out) = &args.out {
        let run_dir = make_run_dir(out, cfg.seed)?;
        let csv = run_dir.join("metrics.csv");
        let key = match args.mode {
            EvalMode::Stn => "stn",
            EvalMode::Baseline => "baseline",
            EvalMode::BaselineCentered => "baseline-centered",
        };
        write_metrics_csv(&csv, &[(key, &report)])?;
        println!("metrics: {}", csv.display());
    }
    Ok(())
}

fn cmd_cv(args: &CvArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let ds = load_corpus(&args.data)?;
    let run_dir = make_run_dir(&args.out, cfg.seed)?;
    println!("run directory: {}", run_dir.display());
    println!(
        "cross-validating {} records, k={}, seed {}",
        ds.len(),
        cfg.k,
        cfg.seed
    );

    let outcome = cross_validate(&cfg, &ds)?;
    for fold in &outcome.folds {
        println!(
            "fold {}: stn accuracy {:.3}, baseline accuracy {:.3}",
            fold.fold,
            fold.stn.accuracy(),
            fold.baseline.accuracy(),
        );
        checkpoint::save_to_path(
            &fold.models,
            &run_dir.join(format!("fold-{}.ckpt", fold.fold)),
        )?;
    }

    let blocks = [
        ("CNN-STN (off-center test)", &outcome.stn),
        ("CNN baseline (off-center test)", &outcome.baseline),
        ("CNN baseline (centered test)", &outcome.baseline_centered),
    ];
    let rendered = render_report(&blocks);
    print!("{rendered}");

    let report_path = run_dir.join("report.txt");
    fs::write(&report_path, &rendered).map_err(|e| Error::io(&report_path, e))?;
    let csv_blocks = [
        ("stn", &outcome.stn),
        ("baseline", &outcome.baseline),
        ("baseline-centered", &outcome.baseline_centered),
    ];
    write_metrics_csv(&run_dir.join("metrics.csv"), &csv_blocks)?;
    println!("metrics: {}", run_dir.join("metrics.csv").display());

    if args.dump_focus > 0 {
        let fold0 = &outcome.folds[0];
        let (off_center, _) = test_samples(
            &ds.records,
            outcome.plan.test_indices(0),
            &cfg.geometry(),
            seeding::derive(seeding::derive(cfg.seed, "fold", 0), "test", 0),
        )?;
        let dumps = save_focus_dumps(
            &run_dir.join("focus"),
            fold0.models.group("localizer")?,
            cfg.d_c,
            &off_center,
            args.dump_focus,
            cfg.batch_size,
        )?;
        println!("focus dumps: {} files in {}", dumps.len(), run_dir.join("focus").display());
    }
    Ok(())
}

fn dump_focus_crops(
    run_dir: &Path,
    cfg: &TrainConfig,
    models: &cellstn::networks::ModelParams<Scalar>,
    ds: &Dataset,
    limit: usize,
) -> Result<()> {
    if limit == 0 {
        return Ok(());
    }
    let indices: Vec<usize> = (0..ds.len()).collect();
    let (off_center, _) = test_samples(
        &ds.records,
        &indices,
        &cfg.geometry(),
        seeding::derive(cfg.seed, "focus-dump", 0),
    )?;
    let dumps = save_focus_dumps(
        &run_dir.join("focus"),
        models.group("localizer")?,
        cfg.d_c,
        &off_center,
        limit,
        cfg.batch_size,
    )?;
    println!(
        "focus dumps: {} files in {}",
        dumps.len(),
        run_dir.join("focus").display()
    );
    Ok(())
}

fn cmd_gradcheck() -> Result<()> {
    let reports = gradsuite::full_suite()?;
    let (text, all_pass) = gradsuite::render_suite(&reports);
    print!("{text}");
    if all_pass {
        println!("all {} ops pass", reports.len());
        Ok(())
    } else {
        let failed: Vec<&str> = reports
            .iter()
            .filter(|r| !r.pass())
            .map(|r| r.op.as_str())
            .collect();
        Err(Error::contract(
            "gradcheck",
            format!("{} op(s) failed: {}", failed.len(), failed.join(", ")),
        ))
    }
}
