use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use walkdir::WalkDir;

use malimg_core::binimg::{convert_with_meta, write_png, WidthRule};
use malimg_core::harness::synth::{generate, SynthSpec};
use malimg_core::harness::{
    ablate, evaluate, ingest, render_table, run, table3_grid, AblationReport, Layout, RunConfig, Split,
};
use malimg_core::nn::Checkpoint;

#[derive(Parser)]
#[command(name = "malimg", version, about = "Malware image conversion, training and ablation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert binaries (files or directories) to PNG images with JSON sidecars.
    Convert {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        /// JSON width table: {"thresholds": [[max_bytes, width], ...], "fallback": width}.
        #[arg(long)]
        width_rule: Option<PathBuf>,
    },
    /// Train one configuration and evaluate it on the test split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Defaults to the size stored in the checkpoint metadata.
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Also write report.json here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run a grid of configurations and write table.csv and report.json.
    Ablate {
        /// JSON array of run configs, or a single base config with --table3.
        #[arg(long)]
        config: PathBuf,
        /// Expand the base config into the fifteen-row staged ablation.
        #[arg(long)]
        table3: bool,
        /// Initialization checkpoint for pretrained rows (with --table3).
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print the table of a finished ablation directory.
    Report {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Generate the synthetic DEX-like corpus.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        train_per_class: usize,
        #[arg(long, default_value_t = 40)]
        val_per_class: usize,
        #[arg(long, default_value_t = 40)]
        test_per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

fn collect_inputs(inputs: &[PathBuf]) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            files.extend(
                WalkDir::new(input)
                    .sort_by_file_name()
                    .into_iter()
                    .filter_map(|e| e.ok())
                    .filter(|e| e.file_type().is_file())
                    .map(|e| e.into_path()),
            );
        } else {
            files.push(input.clone());
        }
    }
    files
}

fn cmd_convert(inputs: &[PathBuf], out_dir: &Path, channels: usize, size: usize, rule: Option<&Path>) -> Result<()> {
    let rule = match rule {
        Some(p) => WidthRule::from_json(&std::fs::read_to_string(p)?)?,
        None => WidthRule::default(),
    };
    std::fs::create_dir_all(out_dir)?;
    let files = collect_inputs(inputs);
    if files.is_empty() {
        bail!("no input files");
    }
    let mut failed = 0;
    for file in &files {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
        let result = std::fs::read(file)
            .map_err(anyhow::Error::from)
            .and_then(|bytes| Ok(convert_with_meta(&bytes, channels, &rule, size)?));
        match result {
            Ok(conv) => {
                write_png(&out_dir.join(format!("{stem}.png")), &conv.image)?;
                std::fs::write(
                    out_dir.join(format!("{stem}.json")),
                    serde_json::to_vec_pretty(&conv.sidecar)?,
                )?;
            }
            Err(e) => {
                failed += 1;
                log::error!("{}: {e}", file.display());
            }
        }
    }
    println!("converted {} of {} files", files.len() - failed, files.len());
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    data_root: &Path,
    split: &str,
    image_size: Option<usize>,
    batch_size: usize,
    out_dir: Option<&Path>,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let size = image_size
        .or_else(|| ckpt.metadata["image_size"].as_u64().map(|v| v as usize))
        .context("image size not in checkpoint metadata; pass --image-size")?;
    let index = ingest(data_root, Layout::Auto)?;
    let split: Split = split.parse()?;
    let report = evaluate(&ckpt.to_model()?, &index, split, size, batch_size)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), &json)?;
    }
    println!("{json}");
    Ok(())
}

fn load_grid(path: &Path, table3: bool, pretrained: Option<&Path>) -> Result<Vec<RunConfig>> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let grid = if table3 {
        let base = RunConfig::from_json(&text)?;
        let pt = pretrained.context("--table3 needs --pretrained")?;
        table3_grid(&base, pt)
    } else {
        let values: Vec<serde_json::Value> = serde_json::from_str(&text)?;
        values
            .into_iter()
            .map(|v| RunConfig::from_json(&v.to_string()))
            .collect::<std::result::Result<_, _>>()?
    };
    Ok(grid)
}

fn print_table(report: &AblationReport, format: Format) -> Result<()> {
    let csv = render_table(&report.rows)?;
    match format {
        Format::Csv => print!("{csv}"),
        Format::Markdown => {
            for (i, line) in csv.lines().enumerate() {
                println!("| {} |", line.split(',').collect::<Vec<_>>().join(" | "));
                if i == 0 {
                    println!("|{}", "---|".repeat(line.split(',').count()));
                }
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Convert {
            inputs,
            out_dir,
            channels,
            size,
            width_rule,
        } => cmd_convert(&inputs, &out_dir, channels, size, width_rule.as_deref()),
        Command::Train { config, seed, out_dir } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run(&cfg, &out_dir)?;
            println!(
                "{}: best epoch {} test f1_macro {:.6} auc_macro {:.6} loss {:.6}",
                report.id, report.best_epoch, report.test.f1_macro, report.test.auc_macro, report.test.mean_loss
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data_root,
            split,
            image_size,
            batch_size,
            out_dir,
        } => cmd_eval(
            &checkpoint,
            &data_root,
            &split,
            image_size,
            batch_size,
            out_dir.as_deref(),
        ),
        Command::Ablate {
            config,
            table3,
            pretrained,
            seed,
            out_dir,
        } => {
            let mut grid = load_grid(&config, table3, pretrained.as_deref())?;
            if let Some(s) = seed {
                grid.iter_mut().for_each(|c| c.seed = s);
            }
            let report = ablate(&grid, &out_dir)?;
            print_table(&report, Format::Csv)
        }
        Command::Report { out_dir, format } => {
            let text = std::fs::read_to_string(out_dir.join("report.json"))?;
            print_table(&serde_json::from_str(&text)?, format)
        }
        Command::Synth {
            out_dir,
            classes,
            train_per_class,
            val_per_class,
            test_per_class,
            size,
            channels,
            seed,
        } => {
            let spec = SynthSpec {
                classes,
                train_per_class,
                val_per_class,
                test_per_class,
                size,
                channels,
                seed,
            };
            generate(&out_dir, &spec)?;
            println!("wrote synthetic corpus to {}", out_dir.display());
            Ok(())
        }
    }
}
