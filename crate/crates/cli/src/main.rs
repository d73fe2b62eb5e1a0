//! `strokescript` command-line harness.
//!
//! Every command prints its report as pretty JSON on stdout and writes the
//! same report to `<out>/<command>.json`. Exit codes: 0 success, 1 a failed
//! gradient check, 2 configuration error, 3 data error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use strokescript::blstm::{gradient_check, GradCheckReport};
use strokescript::harness::{
    combine_models, dataset_stats, evaluate, evaluation_set, load_data, train_model, CombineReport,
    ExperimentConfig, GroupStats, MetricsReport, Pipeline, TrainSummary,
};
use strokescript::model::Model;
use strokescript::raster::{load_pgm, rasterize, save_pgm, skeletonize};
use strokescript::strokerec::{prune_spurs, recover, render_svg};
use strokescript::{io, Error, Granularity, Result, StrokeSample};

#[derive(Parser)]
#[command(name = "strokescript", version, about = "Script identification from pen trajectories")]
struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, replacing the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic stroke data.
    Gen {
        /// Also write one PGM image per sample.
        #[arg(long)]
        rasterize: bool,
    },
    /// Train the configured model and write `model.json`.
    Train {
        /// Stroke file to train on instead of the configured data.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report of a character-level run, for the word/char training
        /// time ratio.
        #[arg(long)]
        char_report: Option<PathBuf>,
    },
    /// Evaluate a model on the configured evaluation set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Defaults to the config's pipeline.
        #[arg(long)]
        pipeline: Option<Pipeline>,
    },
    /// Recover pen trajectories from stroke files (via rendering) or PGM images.
    Recover {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        /// Write an SVG of every recovered skeleton.
        #[arg(long)]
        svg: bool,
    },
    /// Evaluate two binary models and their error-based combination.
    Combine {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        second: PathBuf,
        #[arg(long, default_value = "online")]
        first_pipeline: Pipeline,
        #[arg(long, default_value = "online")]
        second_pipeline: Pipeline,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Stroke and point count statistics.
    Stats {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare backpropagated gradients with finite differences.
    Gradcheck,
}

#[derive(Serialize)]
struct GenReport {
    config_digest: String,
    samples: usize,
    characters: usize,
    words: usize,
    stroke_file: PathBuf,
    images: Option<usize>,
}

#[derive(Serialize)]
struct TrainOutput {
    #[serde(flatten)]
    summary: TrainSummary,
    model_file: PathBuf,
    /// This run's training time over the character-level run's.
    wall_time_ratio_to_char: Option<f64>,
}

#[derive(Serialize)]
struct RecoveredItem {
    id: String,
    source: PathBuf,
    strokes: usize,
    coverage: f64,
}

#[derive(Serialize)]
struct RecoverReport {
    config_digest: String,
    items: Vec<RecoveredItem>,
    stroke_file: PathBuf,
}

#[derive(Serialize)]
struct StatsReport {
    config_digest: String,
    groups: Vec<GroupStats>,
}

#[derive(Serialize)]
struct GradCheckOutput {
    config_digest: String,
    tolerance: f64,
    #[serde(flatten)]
    report: GradCheckReport,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn with_data(mut config: ExperimentConfig, data: &Option<PathBuf>) -> ExperimentConfig {
    if let Some(path) = data {
        config.samples = vec![path.clone()];
    }
    config
}

fn emit<T: Serialize>(out: &Path, name: &str, report: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("{name}.json")), format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

fn cmd_gen(config: &ExperimentConfig, out: &Path, raster: bool) -> Result<()> {
    let data = load_data(config)?;
    fs::create_dir_all(out)?;
    let stroke_file = out.join("samples.jsonl");
    io::save_samples(&stroke_file, &data)?;
    let images = if raster {
        let dir = out.join("images");
        fs::create_dir_all(&dir)?;
        for s in &data {
            let img = rasterize(s, config.raster.canvas_for(s), config.raster.pen_width)?.image;
            save_pgm(&dir.join(format!("{}.pgm", s.id)), &img)?;
        }
        Some(data.len())
    } else {
        None
    };
    let count = |g| data.iter().filter(|s| s.granularity == g).count();
    emit(
        out,
        "gen",
        &GenReport {
            config_digest: config.digest(),
            samples: data.len(),
            characters: count(Granularity::Character),
            words: count(Granularity::Word),
            stroke_file,
            images,
        },
    )
}

fn cmd_train(config: &ExperimentConfig, out: &Path, char_report: Option<&Path>) -> Result<()> {
    let data = load_data(config)?;
    let outcome = train_model(config, &data)?;
    fs::create_dir_all(out)?;
    let model_file = out.join("model.json");
    outcome.model.save(&model_file)?;
    let ratio = match char_report {
        Some(path) => {
            let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
            let base = value
                .get("wall_time_secs")
                .and_then(serde_json::Value::as_f64)
                .filter(|&t| t > 0.0)
                .ok_or_else(|| Error::Format(format!("{} has no wall_time_secs", path.display())))?;
            Some(outcome.summary.wall_time_secs / base)
        }
        None => None,
    };
    emit(
        out,
        "train",
        &TrainOutput {
            summary: outcome.summary,
            model_file,
            wall_time_ratio_to_char: ratio,
        },
    )
}

fn cmd_eval(config: &ExperimentConfig, out: &Path, model: &Path, pipeline: Option<Pipeline>) -> Result<()> {
    let model = Model::load(model)?;
    let data = load_data(config)?;
    let samples = evaluation_set(config, &data)?;
    let report: MetricsReport = evaluate(&model, pipeline.unwrap_or(config.pipeline), &samples, config)?;
    emit(out, "eval", &report)
}

fn sample_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn cmd_recover(config: &ExperimentConfig, out: &Path, inputs: &[PathBuf], svg: bool) -> Result<()> {
    let mut items = Vec::new();
    let mut recovered: Vec<StrokeSample> = Vec::new();
    let mut drawings = Vec::new();
    for path in inputs {
        let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        let pairs: Vec<(StrokeSample, f64, _)> = if is_pgm {
            let skel = prune_spurs(&skeletonize(&load_pgm(path)?)?, config.recovery.spur_length)?;
            let result = recover(&skel, &config.recovery)?;
            let id = sample_id(path);
            let sample = result.to_sample(&id, "unknown", Granularity::Character);
            vec![(sample, result.coverage, (skel.image, result))]
        } else {
            let mut v = Vec::new();
            for s in io::load_samples(path)? {
                let img = rasterize(&s, config.raster.canvas_for(&s), config.raster.pen_width)?.image;
                let skel = prune_spurs(&skeletonize(&img)?, config.recovery.spur_length)?;
                let result = recover(&skel, &config.recovery)?;
                let sample = result.to_sample(&s.id, &s.label, s.granularity);
                v.push((sample, result.coverage, (skel.image, result)));
            }
            v
        };
        for (sample, coverage, drawing) in pairs {
            items.push(RecoveredItem {
                id: sample.id.clone(),
                source: path.clone(),
                strokes: sample.strokes.len(),
                coverage,
            });
            if svg {
                drawings.push((sample.id.clone(), drawing));
            }
            recovered.push(sample);
        }
    }
    fs::create_dir_all(out)?;
    let stroke_file = out.join("recovered.jsonl");
    io::save_samples(&stroke_file, &recovered)?;
    if svg {
        let dir = out.join("svg");
        fs::create_dir_all(&dir)?;
        for (id, (skeleton, result)) in &drawings {
            fs::write(dir.join(format!("{id}.svg")), render_svg(skeleton, result, 8.0))?;
        }
    }
    emit(
        out,
        "recover",
        &RecoverReport {
            config_digest: config.digest(),
            items,
            stroke_file,
        },
    )
}

fn cmd_combine(
    config: &ExperimentConfig,
    out: &Path,
    first: (&Path, Pipeline),
    second: (&Path, Pipeline),
) -> Result<()> {
    let a = Model::load(first.0)?;
    let b = Model::load(second.0)?;
    let data = load_data(config)?;
    let samples = evaluation_set(config, &data)?;
    let report: CombineReport = combine_models((&a, first.1), (&b, second.1), &samples, config)?;
    emit(out, "combine", &report)
}

fn cmd_stats(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = load_data(config)?;
    emit(
        out,
        "stats",
        &StatsReport {
            config_digest: config.digest(),
            groups: dataset_stats(&data),
        },
    )
}

fn cmd_gradcheck(config: &ExperimentConfig, out: &Path) -> Result<bool> {
    let g = &config.gradcheck;
    let report = gradient_check(&config.gradcheck_config(), g.trials, g.tolerance)?;
    let passed = report.passed;
    emit(
        out,
        "gradcheck",
        &GradCheckOutput {
            config_digest: config.digest(),
            tolerance: g.tolerance,
            report,
        },
    )?;
    Ok(passed)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let Format::Json = cli.format;
    let config = load_config(cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Gen { rasterize } => cmd_gen(&config, out, *rasterize)?,
        Command::Train { data, char_report } => cmd_train(&with_data(config, data), out, char_report.as_deref())?,
        Command::Eval { model, data, pipeline } => cmd_eval(&with_data(config, data), out, model, *pipeline)?,
        Command::Recover { input, svg } => cmd_recover(&config, out, input, *svg)?,
        Command::Combine {
            first,
            second,
            first_pipeline,
            second_pipeline,
            data,
        } => cmd_combine(
            &with_data(config, data),
            out,
            (first, *first_pipeline),
            (second, *second_pipeline),
        )?,
        Command::Stats { data } => cmd_stats(&with_data(config, data), out)?,
        Command::Gradcheck => {
            if !cmd_gradcheck(&config, out)? {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
