//! Command-line entry point.
//!
//! `attrib <subcommand> [--config FILE] [--out DIR] [--KEY VALUE ...]`
//! where every `--KEY VALUE` mirrors a config key (`--loss.tau 0.2`).
//! Precedence: built-in defaults, then the config file, then flags.
//! Every run writes a manifest (resolved config, seed, input hashes) to
//! the output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{load_config, parse_setting, DataKind, RunConfig};
use crate::data::{
    assign_splits, default_settings, filter_by_similarity, load_documents, save_documents,
    Dataset, DomainSetting, Split,
};
use crate::error::{Error, Result};
use crate::evaluator::{
    render_report, run_protocol, BaselineSource, BaselineTable, EvalReport, ProtocolConfig,
    ReportFormat,
};
use crate::projection::{
    export_scatter, pca_embed, sample_for_projection, tsne_embed, ScatterFormat,
};
use crate::rng::fnv1a64;
use crate::synth::generate;
use crate::trainer::{
    select_checkpoint, sweep_temperature, train, TrainedModel,
};

const USAGE: &str = "usage: attrib <subcommand> [--config FILE] [--out DIR] [--KEY VALUE ...]

subcommands:
  ingest    load (or synthesize) a dataset, validate it, write dataset.jsonl
  filter    keep per-domain documents with similarity above the domain mean
  split     assign seeded train/val/test splits
  train     train on the configured source domains, write checkpoints
  sweep     grid-search the contrastive temperature
  eval      run the full cross-domain protocol, write report files
  project   2-D projection (t-SNE or PCA) of learned features
  probe     in-context-learning probe against a chat endpoint
  report    re-render saved eval reports (text, csv, json)

Flags mirror config keys: e.g. --loss.tau 0.2 --train.epochs 5.
See README for the full key list.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    Ingest,
    Filter,
    Split,
    Train,
    Sweep,
    Eval,
    Project,
    Probe,
    Report,
}

impl Command {
    fn parse(s: &str) -> Option<Command> {
        match s {
            "ingest" => Some(Command::Ingest),
            "filter" => Some(Command::Filter),
            "split" => Some(Command::Split),
            "train" => Some(Command::Train),
            "sweep" => Some(Command::Sweep),
            "eval" => Some(Command::Eval),
            "project" => Some(Command::Project),
            "probe" => Some(Command::Probe),
            "report" => Some(Command::Report),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Filter => "filter",
            Command::Split => "split",
            Command::Train => "train",
            Command::Sweep => "sweep",
            Command::Eval => "eval",
            Command::Project => "project",
            Command::Probe => "probe",
            Command::Report => "report",
        }
    }
}

/// Reports file schema: domain names plus the report list, lossless.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportsFile {
    pub domain_names: Vec<String>,
    pub reports: Vec<EvalReport>,
}

/// Parse argv (without the binary name), run, and map errors to exit
/// codes: 0 success, 1 validation, 2 runtime failure.
pub fn dispatch(args: &[String]) -> i32 {
    let command = match args.first().map(|s| Command::parse(s)) {
        Some(Some(c)) => c,
        Some(None) => {
            eprintln!("unknown subcommand {:?}\n{USAGE}", args[0]);
            return 1;
        }
        None => {
            eprintln!("{USAGE}");
            return 1;
        }
    };
    match parse_flags(&args[1..]).and_then(|(config, out)| run(command, &config, &out)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn parse_flags(args: &[String]) -> Result<(RunConfig, PathBuf)> {
    // First pass: find --config so file values sit under the flags.
    let mut config_path: Option<String> = None;
    let mut out = PathBuf::from("attrib_out");
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let key = arg.strip_prefix("--").ok_or_else(|| {
            Error::InvalidConfig(format!("unexpected argument {arg:?}\n{USAGE}"))
        })?;
        let value = args
            .get(i + 1)
            .ok_or_else(|| Error::InvalidConfig(format!("flag --{key} needs a value")))?
            .clone();
        match key {
            "config" => config_path = Some(value),
            "out" => out = PathBuf::from(value),
            _ => overrides.push((key.to_string(), value)),
        }
        i += 2;
    }
    let mut config = match &config_path {
        Some(p) => load_config(Path::new(p))?,
        None => RunConfig::default(),
    };
    for (key, value) in &overrides {
        config.set(key, value)?;
    }
    config.validate()?;
    Ok((config, out))
}

fn load_dataset(config: &RunConfig) -> Result<(Dataset, String)> {
    match config.data_kind {
        DataKind::Jsonl => {
            let path = config.data_path.as_ref().expect("validated");
            let bytes = std::fs::read(path)?;
            let hash = format!("{:016x}", fnv1a64(&bytes));
            Ok((load_documents(Path::new(path))?, hash))
        }
        DataKind::Synthetic => {
            let dataset = generate(&config.synth)?;
            Ok((dataset, format!("synthetic:{}", config.synth.seed)))
        }
    }
}

/// Filter (when enabled) and make sure splits exist: a dataset with no
/// assignments at all gets seeded splits from the config.
fn prepare(config: &RunConfig, dataset: Dataset) -> Result<Dataset> {
    let dataset = if config.filter_enabled {
        let outcome = filter_by_similarity(&dataset)?;
        for d in &outcome.passthrough_domains {
            eprintln!(
                "warning: similarity filter would empty domain {}; passed through unchanged",
                outcome.dataset.domain_names[*d]
            );
        }
        outcome.dataset
    } else {
        dataset
    };
    let any_assigned = dataset.documents.iter().any(|d| d.split != Split::Unassigned);
    if any_assigned {
        Ok(dataset)
    } else {
        assign_splits(&dataset, &config.split_counts, config.split_seed)
    }
}

fn single_setting(config: &RunConfig, dataset: &Dataset) -> Result<DomainSetting> {
    if config.setting.is_empty() {
        let k = dataset.domain_count();
        if k < 2 {
            return Err(Error::InvalidConfig(
                "need at least 2 domains for a source/target setting".into(),
            ));
        }
        Ok(DomainSetting::new(0..k - 1, [k - 1]))
    } else {
        parse_setting(&config.setting, &dataset.domain_names)
    }
}

fn write_manifest(
    command: Command,
    config: &RunConfig,
    out: &Path,
    input_hash: &str,
) -> Result<()> {
    let flat: BTreeMap<String, String> = config.to_flat_pairs().into_iter().collect();
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = serde_json::json!({
        "command": command.as_str(),
        "timestamp": timestamp,
        "config": flat,
        "input_hash": input_hash,
        "train_seed": config.train.seed,
        "split_seed": config.split_seed,
    });
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn run(command: Command, config: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;

    // `report` re-renders saved output and needs no dataset.
    if command == Command::Report {
        let input = config
            .report_input
            .clone()
            .unwrap_or_else(|| out.join("reports.json").to_string_lossy().into_owned());
        let text = std::fs::read_to_string(&input)?;
        let file: ReportsFile = serde_json::from_str(&text)?;
        let format = match config.report_format.as_str() {
            "csv" => ReportFormat::Csv,
            "json" => ReportFormat::Json,
            _ => ReportFormat::TextTable,
        };
        let rendered = render_report(&file.reports, &file.domain_names, format)?;
        println!("{rendered}");
        write_manifest(command, config, out, "reports")?;
        return Ok(());
    }

    let (raw_dataset, input_hash) = load_dataset(config)?;
    write_manifest(command, config, out, &input_hash)?;

    match command {
        Command::Ingest => {
            raw_dataset.validate()?;
            let path = out.join("dataset.jsonl");
            save_documents(&raw_dataset, &path)?;
            println!(
                "ingested {} documents, {} classes, {} domains -> {}",
                raw_dataset.documents.len(),
                raw_dataset.class_count(),
                raw_dataset.domain_count(),
                path.display()
            );
        }
        Command::Filter => {
            let outcome = filter_by_similarity(&raw_dataset)?;
            for d in &outcome.passthrough_domains {
                eprintln!(
                    "warning: similarity filter would empty domain {}; passed through unchanged",
                    outcome.dataset.domain_names[*d]
                );
            }
            let path = out.join("filtered.jsonl");
            save_documents(&outcome.dataset, &path)?;
            println!(
                "filtered {} -> {} documents -> {}",
                raw_dataset.documents.len(),
                outcome.dataset.documents.len(),
                path.display()
            );
        }
        Command::Split => {
            let dataset = if config.filter_enabled {
                filter_by_similarity(&raw_dataset)?.dataset
            } else {
                raw_dataset
            };
            let dataset = assign_splits(&dataset, &config.split_counts, config.split_seed)?;
            let path = out.join("split.jsonl");
            save_documents(&dataset, &path)?;
            println!(
                "assigned splits (seed {}, hash {:016x}) -> {}",
                config.split_seed,
                dataset.split_hash(),
                path.display()
            );
        }
        Command::Train => {
            let dataset = prepare(config, raw_dataset)?;
            let setting = single_setting(config, &dataset)?;
            let pools = crate::data::select_domains(&dataset, &setting)?;
            let encoder = config.resolve_encoder(dataset.embedding_dim)?;
            let ckpt_dir = out.join("checkpoints");
            let output = train(
                &pools,
                &encoder,
                &config.train,
                dataset.class_count(),
                Some(&ckpt_dir),
            )?;
            for r in &output.history.records {
                println!(
                    "epoch {}: loss {:.4} (ce {:.4}, scl {:.4}), val acc {:.2}%",
                    r.epoch, r.mean_loss, r.mean_ce, r.mean_scl, r.val_accuracy
                );
            }
            let selected = select_checkpoint(&output.history)?;
            std::fs::write(
                out.join("history.json"),
                serde_json::to_string_pretty(&output.history)?,
            )?;
            std::fs::write(
                out.join("selected.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "selected_epoch": selected,
                    "val_accuracy": output.history.records[selected - 1].val_accuracy,
                    "checkpoint": output.history.records[selected - 1].checkpoint_path,
                }))?,
            )?;
            println!(
                "selected epoch {selected} (val acc {:.2}%)",
                output.history.records[selected - 1].val_accuracy
            );
        }
        Command::Sweep => {
            let dataset = prepare(config, raw_dataset)?;
            let setting = single_setting(config, &dataset)?;
            let pools = crate::data::select_domains(&dataset, &setting)?;
            let encoder = config.resolve_encoder(dataset.embedding_dim)?;
            let rows = sweep_temperature(
                &pools,
                &encoder,
                &config.train,
                &config.sweep_grid,
                dataset.class_count(),
            )?;
            println!("tau     val_acc  target_acc  epoch  seed");
            for row in &rows {
                println!(
                    "{:<7} {:<8.2} {:<11} {:<6} {}",
                    row.tau,
                    row.val_accuracy,
                    row.target_accuracy
                        .map(|a| format!("{a:.2}"))
                        .unwrap_or_else(|| "-".into()),
                    row.selected_epoch,
                    row.seed
                );
            }
            std::fs::write(
                out.join("sweep.json"),
                serde_json::to_string_pretty(&rows)?,
            )?;
        }
        Command::Eval => {
            let dataset = prepare(config, raw_dataset)?;
            let settings: Vec<DomainSetting> = if config.eval_settings == "default" {
                default_settings(dataset.domain_count())
            } else {
                config
                    .eval_settings
                    .split(';')
                    .map(|s| parse_setting(s.trim(), &dataset.domain_names))
                    .collect::<Result<_>>()?
            };
            let protocol = ProtocolConfig {
                seeds: config.eval_seeds.clone(),
                modes: config.eval_modes.clone(),
            };
            let baseline = match config.eval_baseline.as_str() {
                "none" => BaselineSource::None,
                "ce_only" => BaselineSource::CeOnly,
                path => BaselineSource::Table(BaselineTable::load(Path::new(path))?),
            };
            let encoder = config.resolve_encoder(dataset.embedding_dim)?;
            let reports = run_protocol(
                &dataset,
                &settings,
                &protocol,
                &encoder,
                &config.train,
                &baseline,
            )?;
            let file = ReportsFile {
                domain_names: dataset.domain_names.clone(),
                reports,
            };
            std::fs::write(
                out.join("reports.json"),
                serde_json::to_string_pretty(&file)?,
            )?;
            let text = render_report(&file.reports, &file.domain_names, ReportFormat::TextTable)?;
            std::fs::write(out.join("reports.txt"), &text)?;
            let csv = render_report(&file.reports, &file.domain_names, ReportFormat::Csv)?;
            std::fs::write(out.join("reports.csv"), csv)?;
            println!("{text}");
        }
        Command::Project => {
            let dataset = prepare(config, raw_dataset)?;
            let setting = single_setting(config, &dataset)?;
            let pools = crate::data::select_domains(&dataset, &setting)?;
            let encoder = config.resolve_encoder(dataset.embedding_dim)?;
            let output = train(&pools, &encoder, &config.train, dataset.class_count(), None)?;
            let epoch = select_checkpoint(&output.history)?;
            let model = TrainedModel {
                encoder_config: encoder,
                state: output.checkpoints[epoch - 1].model.clone(),
            };
            let sample = sample_for_projection(
                &dataset,
                &model,
                config.project_per_domain,
                config.tsne.seed,
            )?;
            let emb = match config.project_method.as_str() {
                "pca" => pca_embed(&sample.features)?,
                _ => tsne_embed(&sample.features, &config.tsne)?,
            }
            .with_metadata(sample.labels, sample.domains);
            if emb.degenerate {
                eprintln!("warning: degenerate input, projection collapsed to the origin");
            }
            let svg = out.join("scatter.svg");
            let csv = out.join("scatter.csv");
            export_scatter(&emb, &dataset.class_names, &dataset.domain_names, &svg, ScatterFormat::Svg)?;
            export_scatter(&emb, &dataset.class_names, &dataset.domain_names, &csv, ScatterFormat::Csv)?;
            println!("projected {} points -> {} / {}", emb.coords.rows(), svg.display(), csv.display());
        }
        Command::Probe => {
            let dataset = prepare(config, raw_dataset)?;
            let setting = single_setting(config, &dataset)?;
            let pools = crate::data::select_domains(&dataset, &setting)?;
            let mut queries: Vec<crate::data::Document> =
                pools.target_test.values().flatten().cloned().collect();
            if queries.is_empty() {
                // Upper-bound settings probe the source test split.
                queries = pools.source_test.clone();
            }
            if config.probe_max_queries > 0 && queries.len() > config.probe_max_queries {
                queries.truncate(config.probe_max_queries);
            }
            let results_path = out.join("probe_results.jsonl");
            let outcome = crate::probe::run_probe_suite(
                &queries,
                &pools.source_train,
                &dataset.class_names,
                &config.probe,
                Some(&results_path),
            )?;
            std::fs::write(
                out.join("probe_summary.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "accuracy": outcome.accuracy,
                    "confusion": outcome.confusion,
                    "queries": outcome.results.len(),
                }))?,
            )?;
            println!(
                "probe accuracy {:.2}% over {} queries -> {}",
                outcome.accuracy,
                outcome.results.len(),
                results_path.display()
            );
        }
        Command::Report => unreachable!("handled above"),
    }
    Ok(())
}
