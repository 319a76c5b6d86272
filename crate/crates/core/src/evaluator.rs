//! Cross-domain protocol execution and reporting.
//!
//! For every domain setting and mode the protocol trains on the source
//! pools, selects the best epoch by source validation accuracy, then
//! scores the source test union (in-domain) and each held-out target
//! domain. Reports carry, per cell, the accuracy, the absolute
//! difference against a baseline, and the relative improvement
//! percentage, in the three-row layout of the reference results table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{select_domains, Dataset, DomainSetting};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::trainer::{accuracy, select_checkpoint, train, TrainConfig, TrainMode, TrainedModel};

pub use crate::trainer::accuracy as accuracy_on_pool;

/// Eq-style absolute gain in accuracy points. Inputs are percentages.
pub fn actual_difference(acc_tar: f64, acc_bert: f64) -> f64 {
    acc_tar - acc_bert
}

/// Relative gain over the baseline, in percent.
pub fn improvement_percentage(acc_tar: f64, acc_bert: f64) -> Result<f64> {
    if acc_bert == 0.0 {
        return Err(Error::InvalidConfig(
            "improvement percentage undefined for a zero baseline".into(),
        ));
    }
    Ok((acc_tar - acc_bert) / acc_bert * 100.0)
}

/// One row of Table-style cells: the in-domain value, one value per
/// target domain, and the OOD average.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCells {
    pub in_domain: Option<f64>,
    pub per_target: BTreeMap<String, f64>,
    pub ood_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: DomainSetting,
    pub setting_label: String,
    pub mode: TrainMode,
    pub seeds: Vec<u64>,
    /// Mean accuracy per cell across seeds.
    pub accuracy: MetricCells,
    /// Per-seed accuracies (run metadata).
    pub per_seed: Vec<MetricCells>,
    /// Population standard deviation per cell (run metadata).
    pub accuracy_std: MetricCells,
    pub act_diff: Option<MetricCells>,
    pub imp: Option<MetricCells>,
}

/// Baseline accuracies keyed by (setting label, mode, cell). Cells are
/// `in_domain`, `target:<domain>`, or `ood_avg`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub cells: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BaselineEntry {
    setting: String,
    mode: String,
    cell: String,
    accuracy: f64,
}

fn baseline_key(setting: &str, mode: &str, cell: &str) -> String {
    format!("{setting}|{mode}|{cell}")
}

impl BaselineTable {
    pub fn insert(&mut self, setting: &str, mode: &str, cell: &str, acc: f64) -> Result<()> {
        let key = baseline_key(setting, mode, cell);
        if self.cells.contains_key(&key) {
            return Err(Error::InvalidConfig(format!(
                "duplicate baseline cell {key}"
            )));
        }
        self.cells.insert(key, acc);
        Ok(())
    }

    pub fn get(&self, setting: &str, mode: &str, cell: &str) -> Option<f64> {
        self.cells.get(&baseline_key(setting, mode, cell)).copied()
    }

    /// Load from a JSON array of `{setting, mode, cell, accuracy}`.
    pub fn load(path: &Path) -> Result<BaselineTable> {
        let text = std::fs::read_to_string(path)?;
        let entries: Vec<BaselineEntry> = serde_json::from_str(&text)?;
        let mut table = BaselineTable::default();
        for e in entries {
            table.insert(&e.setting, &e.mode, &e.cell, e.accuracy)?;
        }
        Ok(table)
    }
}

/// Where the baseline accuracies come from.
#[derive(Debug, Clone)]
pub enum BaselineSource {
    /// Accuracy rows only.
    None,
    /// Train a cross-entropy-only twin with the same seeds and modes and
    /// compare against it.
    CeOnly,
    /// Externally supplied table.
    Table(BaselineTable),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub seeds: Vec<u64>,
    pub modes: Vec<TrainMode>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            modes: vec![TrainMode::Full, TrainMode::Probing],
        }
    }
}

/// Cells for one trained model on one setting.
fn eval_cells(
    model: &TrainedModel,
    pools: &crate::data::DocumentPools,
    domain_names: &[String],
) -> Result<MetricCells> {
    let mut cells = MetricCells {
        in_domain: Some(accuracy(model, &pools.source_test)?),
        ..MetricCells::default()
    };
    for (&d, pool) in &pools.target_test {
        cells
            .per_target
            .insert(domain_names[d].clone(), accuracy(model, pool)?);
    }
    if !cells.per_target.is_empty() {
        let sum: f64 = cells.per_target.values().sum();
        cells.ood_avg = Some(sum / cells.per_target.len() as f64);
    }
    Ok(cells)
}

fn mean_cells(per_seed: &[MetricCells]) -> MetricCells {
    let n = per_seed.len() as f64;
    let mut mean = MetricCells::default();
    if let Some(first) = per_seed.first() {
        if first.in_domain.is_some() {
            let sum: f64 = per_seed.iter().filter_map(|c| c.in_domain).sum();
            mean.in_domain = Some(sum / n);
        }
        for name in first.per_target.keys() {
            let sum: f64 = per_seed.iter().map(|c| c.per_target[name]).sum();
            mean.per_target.insert(name.clone(), sum / n);
        }
        if !mean.per_target.is_empty() {
            let sum: f64 = mean.per_target.values().sum();
            mean.ood_avg = Some(sum / mean.per_target.len() as f64);
        }
    }
    mean
}

fn std_cells(per_seed: &[MetricCells], mean: &MetricCells) -> MetricCells {
    let n = per_seed.len() as f64;
    let mut out = MetricCells::default();
    let spread = |get: &dyn Fn(&MetricCells) -> Option<f64>, m: f64| -> f64 {
        let var = per_seed
            .iter()
            .filter_map(get)
            .map(|v| (v - m) * (v - m))
            .sum::<f64>()
            / n;
        var.sqrt()
    };
    if let Some(m) = mean.in_domain {
        out.in_domain = Some(spread(&|c| c.in_domain, m));
    }
    for (name, &m) in &mean.per_target {
        let name_owned = name.clone();
        out.per_target.insert(
            name.clone(),
            spread(&move |c| c.per_target.get(&name_owned).copied(), m),
        );
    }
    if let Some(m) = mean.ood_avg {
        out.ood_avg = Some(spread(&|c| c.ood_avg, m));
    }
    out
}

fn diff_cells(
    acc: &MetricCells,
    setting: &str,
    mode: &str,
    baseline: &BaselineTable,
) -> Result<(MetricCells, MetricCells)> {
    let mut act = MetricCells::default();
    let mut imp = MetricCells::default();
    if let (Some(a), Some(b)) = (
        acc.in_domain,
        baseline.get(setting, mode, "in_domain"),
    ) {
        act.in_domain = Some(actual_difference(a, b));
        imp.in_domain = Some(improvement_percentage(a, b)?);
    }
    for (name, &a) in &acc.per_target {
        if let Some(b) = baseline.get(setting, mode, &format!("target:{name}")) {
            act.per_target.insert(name.clone(), actual_difference(a, b));
            imp.per_target
                .insert(name.clone(), improvement_percentage(a, b)?);
        }
    }
    if let (Some(a), Some(b)) = (acc.ood_avg, baseline.get(setting, mode, "ood_avg")) {
        act.ood_avg = Some(actual_difference(a, b));
        imp.ood_avg = Some(improvement_percentage(a, b)?);
    }
    Ok((act, imp))
}

fn baseline_from_cells(
    table: &mut BaselineTable,
    setting: &str,
    mode: &str,
    cells: &MetricCells,
) -> Result<()> {
    if let Some(v) = cells.in_domain {
        table.insert(setting, mode, "in_domain", v)?;
    }
    for (name, &v) in &cells.per_target {
        table.insert(setting, mode, &format!("target:{name}"), v)?;
    }
    if let Some(v) = cells.ood_avg {
        table.insert(setting, mode, "ood_avg", v)?;
    }
    Ok(())
}

/// Mean accuracy cells for one setting x mode across seeds.
fn run_setting(
    dataset: &Dataset,
    setting: &DomainSetting,
    mode: TrainMode,
    seeds: &[u64],
    encoder: &EncoderConfig,
    base: &TrainConfig,
) -> Result<(MetricCells, Vec<MetricCells>)> {
    let pools = select_domains(dataset, setting)?;
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut config = base.clone();
        config.seed = seed;
        config.mode = mode;
        let output = train(&pools, encoder, &config, dataset.class_count(), None)?;
        let epoch = select_checkpoint(&output.history)?;
        let model = TrainedModel {
            encoder_config: encoder.clone(),
            state: output.checkpoints[epoch - 1].model.clone(),
        };
        per_seed.push(eval_cells(&model, &pools, &dataset.domain_names)?);
    }
    Ok((mean_cells(&per_seed), per_seed))
}

/// Execute the protocol: every setting x mode, averaged across seeds,
/// with optional baseline comparison rows.
pub fn run_protocol(
    dataset: &Dataset,
    settings: &[DomainSetting],
    protocol: &ProtocolConfig,
    encoder: &EncoderConfig,
    train_config: &TrainConfig,
    baseline: &BaselineSource,
) -> Result<Vec<EvalReport>> {
    if protocol.seeds.is_empty() {
        return Err(Error::InvalidConfig("protocol needs at least one seed".into()));
    }
    if protocol.modes.is_empty() {
        return Err(Error::InvalidConfig("protocol needs at least one mode".into()));
    }
    let mut reports = Vec::new();
    for setting in settings {
        setting.validate(dataset.domain_count())?;
        for &mode in &protocol.modes {
            let label = setting.label(&dataset.domain_names);
            let (acc, per_seed) =
                run_setting(dataset, setting, mode, &protocol.seeds, encoder, train_config)?;

            let baseline_table = match baseline {
                BaselineSource::None => None,
                BaselineSource::Table(table) => Some(table.clone()),
                BaselineSource::CeOnly => {
                    let mut ce_config = train_config.clone();
                    ce_config.loss.scl_weight = 0.0;
                    let (ce_acc, _) = run_setting(
                        dataset,
                        setting,
                        mode,
                        &protocol.seeds,
                        encoder,
                        &ce_config,
                    )?;
                    let mut table = BaselineTable::default();
                    baseline_from_cells(&mut table, &label, mode.as_str(), &ce_acc)?;
                    Some(table)
                }
            };
            let (act_diff, imp) = match &baseline_table {
                Some(table) => {
                    let (a, i) = diff_cells(&acc, &label, mode.as_str(), table)?;
                    (Some(a), Some(i))
                }
                None => (None, None),
            };

            let accuracy_std = std_cells(&per_seed, &acc);
            reports.push(EvalReport {
                setting: setting.clone(),
                setting_label: label,
                mode,
                seeds: protocol.seeds.clone(),
                accuracy: acc,
                per_seed,
                accuracy_std,
                act_diff,
                imp,
            });
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TextTable,
    Csv,
    Json,
}

fn fmt_cell(v: Option<f64>, signed: bool) -> String {
    match v {
        None => "-".to_string(),
        Some(x) if signed => format!("{x:+.2}"),
        Some(x) => format!("{x:.2}"),
    }
}

fn text_row(
    label: &str,
    cells: &MetricCells,
    domain_names: &[String],
    signed: bool,
) -> Vec<String> {
    let mut row = vec![label.to_string(), fmt_cell(cells.in_domain, signed)];
    for name in domain_names {
        row.push(fmt_cell(cells.per_target.get(name).copied(), signed));
    }
    row.push(fmt_cell(cells.ood_avg, signed));
    row
}

/// Render reports as a text table (three-row blocks per setting), CSV,
/// or lossless JSON.
pub fn render_report(
    reports: &[EvalReport],
    domain_names: &[String],
    format: ReportFormat,
) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::InvalidConfig("no reports to render".into()));
    }
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(reports)?),
        ReportFormat::Csv => {
            let mut out = String::from("setting,mode,seed,split,domain,accuracy,act_diff,imp\n");
            for r in reports {
                let mut push = |seed: &str, split: &str, domain: &str, acc: Option<f64>, ad: Option<f64>, im: Option<f64>| {
                    let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        r.setting_label,
                        r.mode.as_str(),
                        seed,
                        split,
                        domain,
                        f(acc),
                        f(ad),
                        f(im)
                    ));
                };
                for (i, cells) in r.per_seed.iter().enumerate() {
                    let seed = r.seeds[i].to_string();
                    push(&seed, "in_domain", "", cells.in_domain, None, None);
                    for (name, &v) in &cells.per_target {
                        push(&seed, "target", name, Some(v), None, None);
                    }
                    push(&seed, "ood_avg", "", cells.ood_avg, None, None);
                }
                let ad = r.act_diff.clone().unwrap_or_default();
                let im = r.imp.clone().unwrap_or_default();
                push("mean", "in_domain", "", r.accuracy.in_domain, ad.in_domain, im.in_domain);
                for (name, &v) in &r.accuracy.per_target {
                    push(
                        "mean",
                        "target",
                        name,
                        Some(v),
                        ad.per_target.get(name).copied(),
                        im.per_target.get(name).copied(),
                    );
                }
                push("mean", "ood_avg", "", r.accuracy.ood_avg, ad.ood_avg, im.ood_avg);
            }
            Ok(out)
        }
        ReportFormat::TextTable => {
            let mut header = vec!["setting/metric".to_string(), "in_domain".to_string()];
            header.extend(domain_names.iter().cloned());
            header.push("ood_avg".to_string());
            let mut rows: Vec<Vec<String>> = vec![header];
            for r in reports {
                let label = format!("{} [{}]", r.setting_label, r.mode.as_str());
                rows.push(text_row(
                    &format!("{label} accuracy"),
                    &r.accuracy,
                    domain_names,
                    false,
                ));
                if let Some(ad) = &r.act_diff {
                    rows.push(text_row("  act_diff", ad, domain_names, true));
                }
                if let Some(im) = &r.imp {
                    rows.push(text_row("  imp%", im, domain_names, true));
                }
            }
            // Column-aligned plain text.
            let cols = rows[0].len();
            let mut widths = vec![0usize; cols];
            for row in &rows {
                for (i, cell) in row.iter().enumerate() {
                    widths[i] = widths[i].max(cell.len());
                }
            }
            let mut out = String::new();
            for row in &rows {
                let line: Vec<String> = row
                    .iter()
                    .enumerate()
                    .map(|(i, c)| format!("{:width$}", c, width = widths[i]))
                    .collect();
                out.push_str(line.join(" | ").trim_end());
                out.push('\n');
            }
            Ok(out)
        }
    }
}
