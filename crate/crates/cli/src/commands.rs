//! Subcommand implementations. Each returns the process exit code on
//! success; hard failures come back as [`CliError`] with the code
//! already classified (usage 2, backend 3, validation 4).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use ctxcal_core::calibration::{
    estimate_content_free, fit_additive, fit_diagonal, CalibrationError, ProbVector,
    DEFAULT_CF_INPUTS,
};
use ctxcal_core::diagnostics::{
    common_token_correlation, majority_label_curve, recency_overprediction, threshold_scan,
    BiasReport, ThresholdBest,
};
use ctxcal_core::harness::sweep::training_sets;
use ctxcal_core::harness::{
    aggregate, plan_cells, read_records, run_sweep, summary_csv, to_prediction_log, GroupKey,
    RecordWriter, SweepConfig, TaskDataset, TaskKind, FAILURE_THRESHOLD,
};
use ctxcal_core::prompt::{
    apply_permutation, find_format, nth_permutation, render, LabelSpace, LabeledExample, PromptSpec,
};

use crate::config::LoadedConfig;
use crate::{CliError, CANCEL};

// ─── Shared cell selection ───────────────────────────────────────────────────

/// Flags selecting one sweep cell's prompt context: which format, how
/// many shots, which seeded training set, and which ordering of it.
#[derive(Debug, Args)]
pub struct CellArgs {
    /// Format id from the corpus
    #[arg(long)]
    pub format: String,
    /// Number of training examples in the prompt
    #[arg(long)]
    pub shots: usize,
    /// Index of the seeded training set
    #[arg(long, default_value_t = 0)]
    pub set: usize,
    /// Lexicographic index of the example ordering
    #[arg(long, default_value_t = 0)]
    pub permutation: u64,
}

fn resolve_examples(
    dataset: &TaskDataset,
    seed: u64,
    cell: &CellArgs,
) -> Result<Vec<LabeledExample>, CliError> {
    let sets = training_sets(dataset, cell.shots, cell.set + 1, seed)
        .map_err(|e| CliError::validation(e.to_string()))?;
    let examples = sets
        .into_iter()
        .nth(cell.set)
        .ok_or_else(|| CliError::validation(format!("no training set {}", cell.set)))?;
    // Index 0 is the sampled order itself, valid at any shot count.
    if cell.permutation == 0 {
        return Ok(examples);
    }
    let perm = nth_permutation(examples.len(), cell.permutation)
        .map_err(|e| CliError::validation(e.to_string()))?;
    apply_permutation(&examples, &perm).map_err(|e| CliError::validation(e.to_string()))
}

fn spec_for_cell(
    loaded: &LoadedConfig,
    dataset: &TaskDataset,
    cell: &CellArgs,
    seed: u64,
    test_input: String,
) -> Result<PromptSpec, CliError> {
    let corpus = loaded.corpus()?;
    let format =
        find_format(&corpus, &cell.format).map_err(|e| CliError::validation(e.to_string()))?;
    Ok(PromptSpec {
        format: format.format.clone(),
        examples: resolve_examples(dataset, seed, cell)?,
        test_input,
        label_space: dataset.label_space.clone(),
    })
}

fn load_dataset(loaded: &LoadedConfig) -> Result<TaskDataset, CliError> {
    TaskDataset::load(&loaded.manifest_path()).map_err(|e| CliError::validation(e.to_string()))
}

// ─── render ──────────────────────────────────────────────────────────────────

/// Render one prompt exactly as a sweep would send it; no backend calls.
#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Run config (TOML)
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub cell: CellArgs,
    /// Seed override (defaults to the config's seed)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use this dataset item's text as the test input
    #[arg(long, conflicts_with = "test_input")]
    pub item: Option<String>,
    /// Use this literal text as the test input
    #[arg(long)]
    pub test_input: Option<String>,
    /// Print the prompt bytes only, without a trailing newline
    #[arg(long)]
    pub raw: bool,
}

pub fn cmd_render(args: &RenderArgs) -> Result<u8, CliError> {
    let loaded = LoadedConfig::load(&args.config)?;
    let dataset = load_dataset(&loaded)?;
    let seed = args.seed.unwrap_or(loaded.config.seed);
    let test_input = match (&args.item, &args.test_input) {
        (Some(id), _) => dataset
            .item(id)
            .map_err(|e| CliError::validation(e.to_string()))?
            .text
            .clone(),
        (None, Some(text)) => text.clone(),
        (None, None) => dataset
            .test_items()
            .first()
            .map(|item| item.text.clone())
            .ok_or_else(|| CliError::validation("dataset has no test items"))?,
    };
    let spec = spec_for_cell(&loaded, &dataset, &args.cell, seed, test_input)?;
    let prompt = render(&spec).map_err(|e| CliError::validation(e.to_string()))?;
    if args.raw {
        let mut stdout = std::io::stdout().lock();
        stdout
            .write_all(prompt.as_bytes())
            .and_then(|_| stdout.flush())
            .map_err(|e| CliError::validation(format!("writing prompt: {e}")))?;
    } else {
        println!("{prompt}");
    }
    Ok(0)
}

// ─── calibrate ───────────────────────────────────────────────────────────────

/// Probe the content-free inputs for one cell and print the fitted
/// calibration parameters.
#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Run config (TOML)
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub cell: CellArgs,
    /// Backend name override (defaults to the config's choice)
    #[arg(long)]
    pub backend: Option<String>,
    /// Seed override
    #[arg(long)]
    pub seed: Option<u64>,
    /// Content-free input (repeatable; defaults to `N/A`, `[MASK]`, and
    /// the empty string)
    #[arg(long = "cf")]
    pub cf: Vec<String>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn probs_by_name(space: &LabelSpace, v: &ProbVector) -> BTreeMap<String, f64> {
    space.names().iter().cloned().zip(v.probs()).collect()
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<u8, CliError> {
    let loaded = LoadedConfig::load(&args.config)?;
    let dataset = load_dataset(&loaded)?;
    if dataset.kind != TaskKind::Classification {
        return Err(CliError::validation(
            "calibrate requires a classification dataset",
        ));
    }
    let space = dataset
        .label_space
        .clone()
        .expect("classification has a label space");
    let seed = args.seed.unwrap_or(loaded.config.seed);
    let spec = spec_for_cell(&loaded, &dataset, &args.cell, seed, String::new())?;
    let backend = loaded.backend(args.backend.as_deref())?;

    let cf_raw: Vec<String> = if args.cf.is_empty() {
        DEFAULT_CF_INPUTS.iter().map(|s| s.to_string()).collect()
    } else {
        args.cf.clone()
    };
    let cf_inputs: Vec<String> = cf_raw.iter().map(|cf| dataset.cf_input(cf)).collect();
    let estimate =
        estimate_content_free(backend.as_ref(), &spec, &cf_inputs).map_err(|e| match e {
            CalibrationError::AllContentFreeInputsFailed { .. } => CliError::backend(e.to_string()),
            other => CliError::validation(other.to_string()),
        })?;

    let diagonal = fit_diagonal(&estimate.ensemble);
    let additive = fit_additive(&estimate.ensemble);
    let report = serde_json::json!({
        "cf_inputs": cf_inputs,
        "failed_inputs": estimate.failed_inputs,
        "per_input": estimate
            .per_input
            .iter()
            .map(|(cf, v)| serde_json::json!({ "input": cf, "probs": probs_by_name(&space, v) }))
            .collect::<Vec<_>>(),
        "ensemble": probs_by_name(&space, &estimate.ensemble),
        "diagonal": diagonal.as_ref().ok(),
        "diagonal_error": diagonal.as_ref().err().map(|e| e.to_string()),
        "additive": additive,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.out {
        Some(path) => {
            std::fs::write(path, text)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
            println!("calibration report written to {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(0)
}

// ─── sweep ───────────────────────────────────────────────────────────────────

/// Run the configured sweep, appending run records and writing a
/// summary CSV.
#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Run config (TOML)
    #[arg(long)]
    pub config: PathBuf,
    /// Backend name override (defaults to the config's choice)
    #[arg(long)]
    pub backend: Option<String>,
    /// Seed override
    #[arg(long)]
    pub seed: Option<u64>,
    /// Records path override (defaults to the config's output.records)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-item evaluation
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Plan the grid, print its size, and exit without backend calls
    #[arg(long)]
    pub dry_run: bool,
    /// Continue an interrupted run (skips already-recorded work)
    #[arg(long)]
    pub resume: bool,
    /// Summary grouping: comma-separated record fields
    #[arg(long, default_value = "calibration_mode", value_delimiter = ',')]
    pub group_by: Vec<String>,
}

fn parse_group_keys(names: &[String]) -> Result<Vec<GroupKey>, CliError> {
    names
        .iter()
        .map(|name| name.parse::<GroupKey>().map_err(CliError::usage))
        .collect()
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<u8, CliError> {
    let group_keys = parse_group_keys(&args.group_by)?;
    let loaded = LoadedConfig::load(&args.config)?;
    let dataset = load_dataset(&loaded)?;
    let corpus = loaded.corpus()?;
    let sweep_config = SweepConfig {
        run_id: loaded.config.run_id.clone(),
        seed: args.seed.unwrap_or(loaded.config.seed),
        budget: loaded.config.sweep.budget,
        axes: loaded.config.sweep.axes.clone(),
    };

    // Planning validates the grid and the budget before anything is
    // created on disk or sent to a backend. The backend name is checked
    // here too, so a dry run catches a typo without needing credentials.
    loaded.backend_section(args.backend.as_deref())?;
    let cells = plan_cells(&dataset, &corpus, &sweep_config)
        .map_err(|e| CliError::validation(e.to_string()))?;
    if args.dry_run {
        let test_items = dataset.test_items().len();
        println!(
            "planned {} cells over {} test items ({} records when complete)",
            cells.len(),
            test_items,
            cells.len() * test_items
        );
        return Ok(0);
    }

    let backend = loaded.backend(args.backend.as_deref())?;
    if let Some(threads) = args.parallel {
        // Ignored when a global pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let records_path = args
        .out
        .clone()
        .unwrap_or_else(|| loaded.config.output.records.clone());
    let existing = if records_path.exists() {
        if !args.resume {
            return Err(CliError::usage(format!(
                "{} already exists; pass --resume to continue it or remove the file",
                records_path.display()
            )));
        }
        read_records(&records_path).map_err(|e| CliError::validation(e.to_string()))?
    } else {
        Vec::new()
    };
    if let Some(parent) = records_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::validation(format!("{}: {e}", parent.display())))?;
        }
    }
    let mut writer = RecordWriter::create(&records_path, args.resume)
        .map_err(|e| CliError::validation(e.to_string()))?;

    crate::install_interrupt_handler();
    let outcome = run_sweep(
        backend.as_ref(),
        &dataset,
        &corpus,
        &sweep_config,
        &mut writer,
        &existing,
        &CANCEL,
    )
    .map_err(|e| CliError::validation(e.to_string()))?;
    drop(writer);

    println!(
        "cells: {} planned, {} already complete; records: {} written, {} failed",
        outcome.cells_planned,
        outcome.cells_skipped,
        outcome.records_written,
        outcome.failed_records
    );
    println!("records: {}", records_path.display());

    let all_records =
        read_records(&records_path).map_err(|e| CliError::validation(e.to_string()))?;
    if !all_records.is_empty() {
        let rows = aggregate(&all_records, &group_keys);
        let csv = summary_csv(&rows, &group_keys);
        let summary_path = match (&args.out, &loaded.config.output.summary) {
            // An explicit records override moves the summary next to it.
            (Some(out), _) => out.with_extension("csv"),
            (None, Some(path)) => path.clone(),
            (None, None) => loaded.config.output.records.with_extension("csv"),
        };
        std::fs::write(&summary_path, &csv)
            .map_err(|e| CliError::validation(format!("{}: {e}", summary_path.display())))?;
        println!("summary: {}", summary_path.display());
        print!("{csv}");
    }

    if outcome.cancelled {
        eprintln!("interrupted; resume with --resume to finish the remaining cells");
        return Ok(130);
    }
    if outcome.records_written > 0 && outcome.failure_fraction() > FAILURE_THRESHOLD {
        eprintln!(
            "backend failures quarantined {:.1}% of written records (threshold {:.0}%)",
            outcome.failure_fraction() * 100.0,
            FAILURE_THRESHOLD * 100.0
        );
        return Ok(3);
    }
    Ok(0)
}

// ─── diagnose ────────────────────────────────────────────────────────────────

/// Compute bias diagnostics over a records file.
#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Run records (JSONL) produced by `sweep`
    #[arg(long)]
    pub records: PathBuf,
    /// Run config, used for the dataset's label space
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated label names (overrides the config's label space)
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// JSON table of label-name frequencies for the common-token
    /// correlation
    #[arg(long)]
    pub freq_table: Option<PathBuf>,
    /// Positive label name for the binary threshold scan (defaults to
    /// the first label)
    #[arg(long)]
    pub positive: Option<String>,
    /// Keep only records with this shot count
    #[arg(long)]
    pub shots: Option<usize>,
    /// Keep only records with this format id
    #[arg(long)]
    pub format: Option<String>,
    /// Keep only records with this calibration mode
    #[arg(long)]
    pub mode: Option<String>,
    /// Write the JSON report here (the text rendering always prints)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<u8, CliError> {
    let mode = args
        .mode
        .as_deref()
        .map(|m| m.parse::<ctxcal_core::calibration::CalibrationMode>())
        .transpose()
        .map_err(CliError::usage)?;
    let mut records =
        read_records(&args.records).map_err(|e| CliError::validation(e.to_string()))?;
    if let Some(shots) = args.shots {
        records.retain(|r| r.shots == shots);
    }
    if let Some(format) = &args.format {
        records.retain(|r| &r.format_id == format);
    }
    if let Some(mode) = mode {
        records.retain(|r| r.calibration_mode == mode);
    }

    let label_space = match (&args.labels, &args.config) {
        (Some(names), _) => {
            Some(LabelSpace::new(names.clone()).map_err(|e| CliError::usage(e.to_string()))?)
        }
        (None, Some(config)) => {
            let loaded = LoadedConfig::load(config)?;
            load_dataset(&loaded)?.label_space
        }
        (None, None) => None,
    };
    let log = to_prediction_log(&records, label_space);

    let common_token_r = match &args.freq_table {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            let table: BTreeMap<String, f64> = serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            Some(
                common_token_correlation(&log, &table)
                    .map_err(|e| CliError::validation(e.to_string()))?,
            )
        }
        None => None,
    };
    let threshold_best = match &log.label_space {
        Some(space) if space.len() == 2 => {
            let positive = match &args.positive {
                Some(name) => space.class_of_name(name).ok_or_else(|| {
                    CliError::usage(format!("label `{name}` is not in the label space"))
                })?,
                None => ctxcal_core::ClassId(0),
            };
            match threshold_scan(&log, positive) {
                Ok((threshold, accuracy)) => Some(ThresholdBest {
                    threshold,
                    accuracy,
                }),
                // Only a hard failure when the scan was explicitly
                // requested via --positive.
                Err(e) if args.positive.is_some() => {
                    return Err(CliError::validation(e.to_string()))
                }
                Err(_) => None,
            }
        }
        _ => None,
    };

    let report = BiasReport {
        majority_curve: majority_label_curve(&log).ok(),
        recency_overprediction: recency_overprediction(&log).ok(),
        common_token_r,
        threshold_best,
    };
    print!("{}", report.render_text());
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(path, json)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        println!("report written to {}", path.display());
    }
    Ok(0)
}
