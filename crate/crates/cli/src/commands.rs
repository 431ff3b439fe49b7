use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use mmcl::data::mmf::Dtype;
use mmcl::data::{
    generate_synthetic, load_dataset, save_dataset, Dataset, Modality, Sample, SyntheticSpec,
};
use mmcl::diffcore::primitive_suite;
use mmcl::eval::{
    evaluate, info_gain_protocol, BinaryRule, InfoGainReport, MetricsReport, ProbeConfig,
};
use mmcl::mining::{Task, TdContext};
use mmcl::model::{
    end_to_end_grad_check, load_checkpoint, save_checkpoint, train, EpochStats, MmclConfig,
    MmclModel,
};

use crate::exit::{CliError, CliResult, Stage, CONFIG, DATA, NUMERIC};
use crate::variant::Variant;

/// Largest relative error `gradcheck` accepts.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config: MmclConfig,
    pub seed: u64,
    pub history: Vec<EpochStats>,
    /// Which split `metrics` was computed on: "train" or "valid".
    pub metrics_on: String,
    pub metrics: MetricsReport,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub config: MmclConfig,
    pub metrics: MetricsReport,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub train_count: usize,
    pub valid_count: usize,
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub name: String,
    pub max_relative_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

pub fn read_config(path: &Path, seed: Option<u64>) -> CliResult<MmclConfig> {
    let text =
        fs::read_to_string(path).stage(CONFIG, &format!("reading config {}", path.display()))?;
    let mut cfg =
        MmclConfig::from_json(&text).stage(CONFIG, &format!("config {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn read_data(path: &Path) -> CliResult<Dataset> {
    load_dataset(path).stage(DATA, &format!("dataset {}", path.display()))
}

pub fn read_model(path: &Path) -> CliResult<MmclModel> {
    load_checkpoint(path).stage(CONFIG, &format!("checkpoint {}", path.display()))
}

fn make_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).stage(DATA, &format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::new(DATA, e.to_string()))?;
    fs::write(path, text + "\n").stage(DATA, &format!("writing {}", path.display()))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).stage(DATA, &format!("writing {}", path.display()))
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::new(DATA, format!("csv: {e}"))
}

/// Fails with exit code 1 when `model` cannot score `data`.
pub fn check_compatible(model: &MmclModel, data: &Dataset) -> CliResult<()> {
    if model.config.task != data.task {
        return Err(CliError::config(format!(
            "checkpoint task {:?} does not match dataset task {:?}",
            model.config.task, data.task
        )));
    }
    for b in &model.branches {
        let (want, got) = (
            model.input_dims[b.modality.index()],
            data.dims[b.modality.index()],
        );
        if want != got {
            return Err(CliError::config(format!(
                "checkpoint expects modality {} width {want}, dataset has {got}",
                b.modality.key()
            )));
        }
    }
    Ok(())
}

fn train_model(cfg: &MmclConfig, data: &Dataset) -> CliResult<(mmcl::model::TrainOutcome, f64)> {
    if cfg.task != data.task {
        return Err(CliError::config(format!(
            "config task {:?} does not match dataset task {:?}",
            cfg.task, data.task
        )));
    }
    let start = Instant::now();
    let out = train(cfg, data)?;
    Ok((out, start.elapsed().as_secs_f64()))
}

pub fn cmd_train(
    config: &Path,
    data: &Path,
    valid: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> CliResult<RunReport> {
    let cfg = read_config(config, seed)?;
    let train_set = read_data(data)?;
    let valid_set = valid.map(read_data).transpose()?;
    let (outcome, secs) = train_model(&cfg, &train_set)?;
    let (metrics_on, scored) = match &valid_set {
        Some(v) => ("valid", v),
        None => ("train", &train_set),
    };
    check_compatible(&outcome.model, scored)?;
    let metrics = evaluate(&outcome.model, scored, BinaryRule::Positive)?;
    make_dir(out)?;
    save_checkpoint(&outcome.model, out.join("model.ckpt")).stage(DATA, "writing checkpoint")?;
    let report = RunReport {
        seed: cfg.seed,
        config: cfg,
        history: outcome.history.epochs,
        metrics_on: metrics_on.into(),
        metrics,
        wall_clock_secs: secs,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

pub fn cmd_eval(
    model: &Path,
    data: &Path,
    out: &Path,
    rule: BinaryRule,
    with_info_gain: bool,
) -> CliResult<MetricsReport> {
    let model = read_model(model)?;
    let data = read_data(data)?;
    check_compatible(&model, &data)?;
    let mut report = evaluate(&model, &data, rule)?;
    if with_info_gain {
        report.info_gain = Some(info_gain_protocol(&model, &data, &ProbeConfig::default())?);
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        make_dir(dir)?;
    }
    write_json(out, &report)?;
    Ok(report)
}

pub struct AblateArgs<'a> {
    pub config: &'a Path,
    pub data: &'a Path,
    pub valid: Option<&'a Path>,
    pub valid_fraction: f64,
    pub out: &'a Path,
    pub seed: Option<u64>,
    pub variants: &'a [Variant],
}

pub fn cmd_ablate(args: &AblateArgs) -> CliResult<AblationReport> {
    let base = read_config(args.config, args.seed)?;
    let data = read_data(args.data)?;
    let (train_set, valid_set) = match args.valid {
        Some(v) => (data, read_data(v)?),
        None => {
            if !(args.valid_fraction > 0.0 && args.valid_fraction < 1.0) {
                return Err(CliError::config("--valid-fraction must lie in (0, 1)"));
            }
            data.split(args.valid_fraction, base.seed)
        }
    };
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(CliError::data(
            "training and validation splits must both be non-empty",
        ));
    }
    let mut rows = Vec::with_capacity(args.variants.len());
    for v in args.variants {
        let cfg = v.apply(&base);
        let (outcome, secs) = train_model(&cfg, &train_set)?;
        let metrics = evaluate(&outcome.model, &valid_set, BinaryRule::Positive)?;
        rows.push(AblationRow {
            variant: v.to_string(),
            config: cfg,
            metrics,
            wall_clock_secs: secs,
        });
    }
    let report = AblationReport {
        seed: base.seed,
        train_count: train_set.len(),
        valid_count: valid_set.len(),
        rows,
    };
    make_dir(args.out)?;
    write_json(&args.out.join("ablation.json"), &report)?;
    let mut w = csv_writer(&args.out.join("ablation.csv"))?;
    w.write_record([
        "variant", "mae", "rmse", "pearson", "acc2", "acc7", "f1", "accuracy",
    ])
    .map_err(csv_err)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.rows {
        let m = &r.metrics;
        w.write_record([
            r.variant.clone(),
            cell(m.mae),
            cell(m.rmse),
            cell(m.pearson),
            cell(m.acc2),
            cell(m.acc7),
            cell(m.f1),
            cell(m.accuracy),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum InspectWhat {
    Actions,
    Weights,
    Features,
}

fn selected<'a>(data: &'a Dataset, ids: &[String]) -> CliResult<Vec<&'a Sample>> {
    if ids.is_empty() {
        return Ok(data.samples.iter().collect());
    }
    ids.iter()
        .map(|id| {
            data.find(id)
                .ok_or_else(|| CliError::data(format!("sample '{id}' not found")))
        })
        .collect()
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes the requested dumps and returns the files created.
pub fn cmd_inspect(
    model: &Path,
    data: &Path,
    what: InspectWhat,
    ids: &[String],
    out: &Path,
) -> CliResult<Vec<PathBuf>> {
    let model = read_model(model)?;
    let data = read_data(data)?;
    check_compatible(&model, &data)?;
    let samples = selected(&data, ids)?;
    match what {
        InspectWhat::Actions if !model.config.ablation.uses_csm() => {
            return Err(CliError::config(
                "model has no mining policies, so there are no actions to dump",
            ));
        }
        InspectWhat::Weights if !model.config.ablation.csd || model.branches.len() < 2 => {
            return Err(CliError::config(
                "model does not decouple features, so there are no weights to dump",
            ));
        }
        _ => {}
    }
    make_dir(out)?;
    let mut written = Vec::new();
    match what {
        InspectWhat::Actions => {
            for s in samples {
                let trace = model.forward(s)?;
                let path = out.join(format!("{}_actions.csv", safe_name(&s.id)));
                let mut w = csv_writer(&path)?;
                let active: Vec<_> = trace.modalities.iter().collect();
                let mut header = vec!["step".to_string()];
                header.extend(active.iter().map(|m| m.modality.key().to_string()));
                w.write_record(&header).map_err(csv_err)?;
                for t in 0..s.length() {
                    let mut row = vec![t.to_string()];
                    for m in &active {
                        let a = m.action.as_ref().expect("mining enabled");
                        row.push(a.values()[t].to_string());
                    }
                    w.write_record(&row).map_err(csv_err)?;
                }
                w.flush().map_err(csv_err)?;
                written.push(path);
            }
        }
        InspectWhat::Weights => {
            for s in samples {
                let trace = model.forward(s)?;
                for m in &trace.modalities {
                    let pair = m.decoupled.as_ref().expect("decoupling enabled");
                    for (kind, w) in [("common", &pair.w_common), ("specific", &pair.w_specific)] {
                        let path = out.join(format!(
                            "{}_{}_w_{kind}.csv",
                            safe_name(&s.id),
                            m.modality.key()
                        ));
                        let mut csv = csv_writer(&path)?;
                        let header: Vec<String> = (0..w.cols()).map(|j| format!("t{j}")).collect();
                        csv.write_record(&header).map_err(csv_err)?;
                        for i in 0..w.rows() {
                            csv.write_record(w.row(i).iter().map(|v| v.to_string()))
                                .map_err(csv_err)?;
                        }
                        csv.flush().map_err(csv_err)?;
                        written.push(path);
                    }
                }
            }
        }
        InspectWhat::Features => {
            let path = out.join("features.csv");
            let mut w = csv_writer(&path)?;
            let d = model.config.d;
            let mut header = vec!["sample".to_string(), "modality".into(), "kind".into()];
            header.extend((0..d).map(|j| format!("f{j}")));
            w.write_record(&header).map_err(csv_err)?;
            for s in samples {
                let trace = model.forward(s)?;
                for m in &trace.modalities {
                    let mut families = vec![("common", &m.common), ("specific", &m.specific)];
                    if let Some(c) = &m.complementary {
                        families.push(("complementary", c));
                    }
                    for (kind, t) in families {
                        let mut row =
                            vec![s.id.clone(), m.modality.key().to_string(), kind.to_string()];
                        row.extend(mean_rows(t).iter().map(|v| v.to_string()));
                        w.write_record(&row).map_err(csv_err)?;
                    }
                }
            }
            w.flush().map_err(csv_err)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn mean_rows(t: &mmcl::diffcore::Tensor) -> Vec<f64> {
    let (l, d) = (t.rows(), t.cols());
    (0..d)
        .map(|j| (0..l).map(|i| t.get(i, j)).sum::<f64>() / l.max(1) as f64)
        .collect()
}

/// Runs the primitive catalog plus an end-to-end check of a tiny model.
pub fn cmd_gradcheck(points: usize, seed: u64) -> CliResult<Vec<GradcheckRow>> {
    let mut rows: Vec<GradcheckRow> = primitive_suite(points, seed)?
        .into_iter()
        .map(|e| GradcheckRow {
            name: e.name,
            max_relative_error: e.report.max_relative_error,
            checked: e.report.checked,
            excluded: e.report.excluded,
        })
        .collect();
    let spec = SyntheticSpec::segmented(3, 4, 3, seed);
    let samples = generate_synthetic(&spec)?.dataset.samples;
    let batch: Vec<&Sample> = samples.iter().collect();
    for (name, task) in [
        ("end_to_end_regression", Task::Regression),
        (
            "end_to_end_classification",
            Task::Classification { num_classes: 3 },
        ),
    ] {
        let cfg = MmclConfig {
            d: 8,
            d_ff: Some(16),
            critic_dim: Some(8),
            critic_heads: 8,
            task,
            seed,
            ..MmclConfig::default()
        };
        let model = MmclModel::new(cfg, spec.dims)?;
        let batch: Vec<Sample> = batch
            .iter()
            .enumerate()
            .map(|(i, s)| match task {
                Task::Regression => (*s).clone(),
                Task::Classification { num_classes } => Sample {
                    label: (i % num_classes) as f64,
                    ..(*s).clone()
                },
            })
            .collect();
        let refs: Vec<&Sample> = batch.iter().collect();
        let r = end_to_end_grad_check(&model, &refs, TdContext::bootstrap(-0.25))?;
        rows.push(GradcheckRow {
            name: name.into(),
            max_relative_error: r.max_relative_error,
            checked: r.checked,
            excluded: r.excluded,
        });
    }
    Ok(rows)
}

pub fn gradcheck_passed(rows: &[GradcheckRow]) -> bool {
    rows.iter()
        .all(|r| r.max_relative_error < GRAD_TOLERANCE && r.checked > 0)
}

pub fn cmd_synth(spec: SyntheticSpec, out: &Path, dtype: Dtype) -> CliResult<PathBuf> {
    let synth = generate_synthetic(&spec).stage(CONFIG, "synthetic spec")?;
    make_dir(out)?;
    let manifest = save_dataset(&synth.dataset, out, dtype).stage(DATA, "writing dataset")?;
    write_json(&out.join("spec.json"), &spec)?;
    let mut w = csv_writer(&out.join("mask.csv"))?;
    let mut header = vec!["step".to_string()];
    header.extend(Modality::ALL.iter().map(|m| m.key().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (t, row) in synth.mask.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|b| u8::from(*b).to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    Ok(manifest)
}

pub fn read_spec(path: &Path) -> CliResult<SyntheticSpec> {
    let text =
        fs::read_to_string(path).stage(CONFIG, &format!("reading spec {}", path.display()))?;
    serde_json::from_str(&text).stage(CONFIG, &format!("spec {}", path.display()))
}

pub fn cmd_infogain(
    model: &Path,
    data: &Path,
    out: &Path,
    probe: &ProbeConfig,
) -> CliResult<InfoGainReport> {
    let model = read_model(model)?;
    let data = read_data(data)?;
    check_compatible(&model, &data)?;
    if !matches!(data.task, Task::Classification { .. }) {
        return Err(CliError::data(
            "information gain needs a classification dataset",
        ));
    }
    let report = info_gain_protocol(&model, &data, probe)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        make_dir(dir)?;
    }
    write_json(out, &report)?;
    Ok(report)
}

/// Exit code for a gradient check that ran but did not pass.
pub fn gradcheck_failure(rows: &[GradcheckRow]) -> CliError {
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| !(r.max_relative_error < GRAD_TOLERANCE && r.checked > 0))
        .map(|r| format!("{} ({:.2e})", r.name, r.max_relative_error))
        .collect();
    CliError::new(
        NUMERIC,
        format!("gradient check failed: {}", bad.join(", ")),
    )
}
