use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pcreal_core::cloud::PointCloud;
use pcreal_core::config::{CloudFormat, Settings};
use pcreal_core::eval::{baseline_csv, noise_sweep, noise_sweep_csv, upsampling_baseline};
use pcreal_core::net::Checkpoint;
use pcreal_core::pcgen::{inject_patch_anomaly, AzimuthInterval, DatasetSuite, GeneratorKind};
use pcreal_core::score::{interpolate, score_cloud};
use pcreal_core::train::{lambda_sweep, sweep_csv, write_report, EvalSet, Trainer};
use pcreal_core::Error;

const VERSION: &str = env!("BUILD_VERSION");

#[derive(Parser, Debug)]
#[command(name = "pcreal", version = VERSION, about = "Learned realism metric for LiDAR point clouds")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Configuration override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write dataset samples and a manifest.
    Generate,
    /// Train the metric network.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score point-cloud files (.xyz/.txt ASCII, .bin 4-column float32, others 3-column float32).
    Score {
        #[command(flatten)]
        model: ModelArg,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Per-point anomaly map of one cloud as a coloured PLY.
    Anomaly {
        #[command(flatten)]
        model: ModelArg,
        input: PathBuf,
        /// Inject a noise patch starting at this azimuth (degrees) before scoring.
        #[arg(long)]
        patch_start: Option<f64>,
        #[arg(long, default_value_t = 45.0)]
        patch_width: f64,
        #[arg(long, default_value_t = 1.0)]
        patch_sigma: f64,
    },
    /// Lambda or noise sweep.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
    /// Up-sampling baselines (MSE, MAE, Chamfer and, with a model, realism).
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Repeat a run from its metadata file.
    Rerun { metadata: PathBuf },
}

#[derive(Subcommand, Debug)]
enum SweepKind {
    Lambda,
    Noise {
        #[command(flatten)]
        model: ModelArg,
    },
}

#[derive(Args, Debug)]
struct ModelArg {
    /// Checkpoint file.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct RunMetadata {
    version: String,
    command: String,
    argv: Vec<String>,
    seed: u64,
    config_sha256: String,
    config: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), String> {
    if let Command::Rerun { metadata } = &cli.command {
        return rerun(metadata, &cli);
    }
    let mut settings = Settings::default();
    if let Some(path) = &cli.config {
        settings
            .apply_file(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    settings
        .apply_env(std::env::vars())
        .map_err(|e| format!("environment: {e}"))?;
    for kv in &cli.overrides {
        settings.apply_override(kv).map_err(|e| e.to_string())?;
    }
    if let Some(seed) = cli.seed {
        settings.seed = seed;
    }
    execute(&cli, &settings, &argv)
}

fn rerun(path: &Path, outer: &Cli) -> Result<(), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let meta: RunMetadata = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut settings = Settings::default();
    settings.apply_text(&meta.config).map_err(|e| e.to_string())?;
    let mut cli = Cli::try_parse_from(&meta.argv).map_err(|e| e.to_string())?;
    cli.out = outer.out.clone();
    cli.threads = outer.threads.or(cli.threads);
    if meta.version != VERSION {
        log::warn!("run was recorded by version {}, this is {VERSION}", meta.version);
    }
    execute(&cli, &settings, &meta.argv)
}

fn execute(cli: &Cli, settings: &Settings, argv: &[String]) -> Result<(), String> {
    settings.validate().map_err(|e| e.to_string())?;
    if let Some(n) = cli.threads {
        // fails only if a pool already exists, which keeps the first setting
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let out = &cli.out;
    fs::create_dir_all(out).map_err(|e| format!("cannot create {}: {e}", out.display()))?;
    let name = command_name(&cli.command);
    let meta = RunMetadata {
        version: VERSION.to_string(),
        command: name.to_string(),
        argv: argv.to_vec(),
        seed: settings.seed,
        config_sha256: settings.hash(),
        config: settings.to_kv(),
    };
    write(
        &out.join("run.json"),
        serde_json::to_string_pretty(&meta).unwrap(),
    )?;
    write(&out.join("config.resolved"), settings.to_kv())?;

    match &cli.command {
        Command::Generate => cmd_generate(settings, out),
        Command::Train { resume } => cmd_train(settings, out, resume.as_deref()),
        Command::Score { model, inputs } => cmd_score(settings, out, &model.model, inputs),
        Command::Anomaly {
            model,
            input,
            patch_start,
            patch_width,
            patch_sigma,
        } => cmd_anomaly(
            settings,
            out,
            &model.model,
            input,
            patch_start.map(|s| (s, *patch_width, *patch_sigma)),
        ),
        Command::Sweep {
            kind: SweepKind::Lambda,
        } => cmd_sweep_lambda(settings, out),
        Command::Sweep {
            kind: SweepKind::Noise { model },
        } => cmd_sweep_noise(settings, out, &model.model),
        Command::Eval { model } => cmd_eval(settings, out, model.as_deref()),
        Command::Rerun { .. } => unreachable!(),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate => "generate",
        Command::Train { .. } => "train",
        Command::Score { .. } => "score",
        Command::Anomaly { .. } => "anomaly",
        Command::Sweep {
            kind: SweepKind::Lambda,
        } => "sweep-lambda",
        Command::Sweep { .. } => "sweep-noise",
        Command::Eval { .. } => "eval",
        Command::Rerun { .. } => "rerun",
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn load_model(path: &Path) -> Result<Checkpoint, String> {
    if !path.exists() {
        return Err(format!("checkpoint {} does not exist", path.display()));
    }
    Checkpoint::load(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_cloud(path: &Path) -> Result<PointCloud, String> {
    PointCloud::load_auto(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cloud".into())
}

fn cmd_generate(settings: &Settings, out: &Path) -> Result<(), String> {
    let suite = DatasetSuite::standard(settings.scan.clone());
    let dir = out.join("clouds");
    fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let ext = settings.generate_format.extension();
    let mut manifest = String::from("file,dataset,name,category,index,seed\n");
    for d in &suite.datasets {
        for i in 0..settings.generate_per_dataset as u64 {
            let pc = suite
                .generate(d.id, settings.seed, i)
                .map_err(|e| e.to_string())?;
            let file = format!("{}_{i:05}.{ext}", d.name);
            let path = dir.join(&file);
            let res = match settings.generate_format {
                CloudFormat::Xyz => pc.save_xyz(&path),
                CloudFormat::Bin => pc.save_bin(&path),
                CloudFormat::Ply => pc.save_ply(&path, &vec![[255, 255, 255]; pc.len()]),
            };
            res.map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            manifest.push_str(&format!(
                "clouds/{file},{},{},{},{i},{}\n",
                d.id,
                d.name,
                d.category.name(),
                DatasetSuite::sample_seed(settings.seed, d.id, i)
            ));
        }
    }
    write(&out.join("manifest.csv"), manifest)?;
    log::info!(
        "wrote {} clouds to {}",
        settings.generate_per_dataset * suite.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train(settings: &Settings, out: &Path, resume: Option<&Path>) -> Result<(), String> {
    let cfg = settings.train_config();
    let mut trainer = match resume {
        Some(p) => Trainer::from_checkpoint(cfg, load_model(p)?),
        None => Trainer::new(cfg),
    }
    .map_err(|e| e.to_string())?;
    let eval = if trainer.config.steps > trainer.step_count() {
        log::info!(
            "generating {} held-out clouds per dataset",
            trainer.config.eval_per_dataset
        );
        Some(EvalSet::generate(&trainer.config, trainer.config.eval_per_dataset).map_err(|e| e.to_string())?)
    } else {
        None
    };
    log::info!(
        "training {} parameters for {} steps",
        trainer.model.parameter_count(),
        trainer.config.steps.saturating_sub(trainer.step_count())
    );
    trainer.run(eval.as_ref()).map_err(|e| e.to_string())?;
    if let Some(e) = trainer.report.last_evaluation() {
        log::info!("held-out ACC_C {:.4} ACC_A {:?}", e.acc_c, e.acc_a);
    }
    trainer
        .checkpoint()
        .save(out.join("model.ckpt"))
        .map_err(|e| format!("cannot write checkpoint: {e}"))?;
    write_report(&trainer.report, &trainer.config.suite, out).map_err(|e| e.to_string())
}

fn cmd_score(_settings: &Settings, out: &Path, model: &Path, inputs: &[PathBuf]) -> Result<(), String> {
    let ck = load_model(model)?;
    for input in inputs {
        let pc = load_cloud(input)?;
        let scores = score_cloud(&ck.model, &pc).map_err(|e| format!("{}: {e}", input.display()))?;
        let name = stem(input);
        write(
            &out.join(format!("{name}.scores.json")),
            scores.to_json().map_err(|e| e.to_string())?,
        )?;
        write(&out.join(format!("{name}.scores.csv")), scores.to_csv())?;
        println!(
            "{}\treal {:.4}\tsynthetic {:.4}\tmisc {:.4}\t{}",
            input.display(),
            scores.scene[0],
            scores.scene[1],
            scores.scene[2],
            scores.scene_category()
        );
    }
    Ok(())
}

fn cmd_anomaly(
    settings: &Settings,
    out: &Path,
    model: &Path,
    input: &Path,
    patch: Option<(f64, f64, f64)>,
) -> Result<(), String> {
    let ck = load_model(model)?;
    let mut pc = load_cloud(input)?;
    let name = stem(input);
    if let Some((start, width, sigma)) = patch {
        let interval =
            AzimuthInterval::new(start.to_radians(), width.to_radians()).map_err(|e| e.to_string())?;
        let injected =
            inject_patch_anomaly(&pc, interval, sigma, settings.seed).map_err(|e| e.to_string())?;
        let mask: String = injected
            .mask
            .iter()
            .map(|m| if *m { "1\n" } else { "0\n" })
            .collect();
        write(&out.join(format!("{name}.patch_mask.txt")), mask)?;
        pc = injected.cloud;
    }
    let scores = score_cloud(&ck.model, &pc).map_err(|e| format!("{}: {e}", input.display()))?;
    let map = interpolate(&scores, &pc.points).map_err(|e| e.to_string())?;
    map.save_ply(out.join(format!("{name}.anomaly.ply")))
        .map_err(|e| format!("cannot write map: {e}"))?;
    write(
        &out.join(format!("{name}.scores.json")),
        scores.to_json().map_err(|e| e.to_string())?,
    )?;
    Ok(())
}

fn cmd_sweep_lambda(settings: &Settings, out: &Path) -> Result<(), String> {
    let cfg = settings.train_config();
    let eval = EvalSet::generate(&cfg, cfg.eval_per_dataset).map_err(|e| e.to_string())?;
    let (rows, trainers) = lambda_sweep(&cfg, &settings.sweep_lambdas, &eval).map_err(|e| e.to_string())?;
    write(&out.join("lambda_sweep.csv"), sweep_csv(&rows))?;
    for t in &trainers {
        let dir = out.join(format!("lambda_{}", t.lambda()));
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        t.checkpoint()
            .save(dir.join("model.ckpt"))
            .map_err(|e| format!("cannot write checkpoint: {e}"))?;
        write_report(&t.report, &t.config.suite, &dir).map_err(|e| e.to_string())?;
    }
    print!("{}", sweep_csv(&rows));
    Ok(())
}

fn generator(name: &str) -> Result<GeneratorKind, Error> {
    GeneratorKind::from_name(name).ok_or_else(|| Error::InvalidValue {
        key: "sweep.generator".into(),
        msg: format!("unknown generator `{name}`"),
    })
}

fn cmd_sweep_noise(settings: &Settings, out: &Path, model: &Path) -> Result<(), String> {
    let ck = load_model(model)?;
    let g = generator(&settings.sweep_generator).map_err(|e| e.to_string())?;
    let rows = noise_sweep(
        &ck.model,
        &g,
        &settings.scan,
        &settings.sweep_sigmas,
        settings.sweep_clouds,
        settings.seed,
    )
    .map_err(|e| e.to_string())?;
    write(&out.join("noise_sweep.csv"), noise_sweep_csv(&rows))?;
    print!("{}", noise_sweep_csv(&rows));
    Ok(())
}

fn cmd_eval(settings: &Settings, out: &Path, model: Option<&Path>) -> Result<(), String> {
    let ck = model.map(load_model).transpose()?;
    let suite = DatasetSuite::standard(settings.scan.clone());
    let d = suite.get(settings.eval_dataset).map_err(|e| e.to_string())?;
    let rows = upsampling_baseline(
        ck.as_ref().map(|c| &c.model),
        &d.generator,
        &settings.scan,
        settings.eval_factor,
        settings.eval_scans,
        settings.seed,
    )
    .map_err(|e| e.to_string())?;
    write(&out.join("baselines.csv"), baseline_csv(&rows))?;
    let n = rows.len().max(1) as f64;
    let mse = rows.iter().map(|r| r.mse).sum::<f64>() / n;
    let mae = rows.iter().map(|r| r.mae).sum::<f64>() / n;
    let cd = rows.iter().map(|r| r.chamfer).sum::<f64>() / n;
    println!("mean MSE {mse:.6}  MAE {mae:.6}  Chamfer {cd:.6}");
    Ok(())
}
