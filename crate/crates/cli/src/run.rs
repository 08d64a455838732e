use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use monde::data::{
    assemble_classification_dataset, gen_synthetic, load_csv, log_losses, split_standardize, CsvSchema, Dataset,
    GeneratorSpec, RawData,
};
use monde::eval::{
    all_pairs, auc_permutation_null, default_u_grid, empirical_tail_dep, model_mutual_information, model_tail_dep,
    pair_mean_lls, pairwise_ll_wins, pr_ap, roc_auc, tail_labels_scores,
};
use monde::models::{load_model, load_model_as, save_model, Family, Model, ModelSpec, FORMAT_VERSION};
use monde::training::{evaluate_split, train, TrainConfig};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{DatasetConfig, ExperimentConfig, Metric};
use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: u32 = 1;
pub const MODEL_FILE: &str = "model.monde";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Eval,
    TailClassify,
    TailDep,
    Mi,
    PairwiseLl,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::TailClassify => "tail-classify",
            Command::TailDep => "tail-dep",
            Command::Mi => "mi",
            Command::PairwiseLl => "pairwise-ll",
        }
    }

    fn metric(self) -> Option<Metric> {
        match self {
            Command::TailClassify => Some(Metric::TailClassify),
            Command::TailDep => Some(Metric::TailDep),
            Command::Mi => Some(Metric::Mi),
            Command::PairwiseLl => Some(Metric::PairwiseLl),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub models: Vec<PathBuf>,
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: PathBuf) -> CliResult<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(path, e))
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> monde::Result<()>) -> CliResult<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn build_raw(cfg: &DatasetConfig, seed: u64) -> CliResult<RawData> {
    if let Some(g) = &cfg.generator {
        return Ok(gen_synthetic(&GeneratorSpec {
            generator: g.generator.clone(),
            n: g.n,
            seed: g.seed.unwrap_or(seed),
        })?);
    }
    let csv = cfg
        .csv
        .as_ref()
        .ok_or_else(|| CliError::config("dataset", "no data source"))?;
    let table = load_csv(
        &csv.path,
        &CsvSchema {
            has_header: csv.has_header,
            columns: None,
        },
    )?;
    if csv.prices {
        return Ok(assemble_classification_dataset(&log_losses(&table)?, &csv.responses, csv.lag)?);
    }
    let covariates = csv
        .covariates
        .clone()
        .unwrap_or_else(|| (0..table.cols).filter(|c| !csv.responses.contains(c)).collect());
    Ok(RawData::new(
        table.select_cols(&covariates)?,
        table.select_cols(&csv.responses)?,
        format!("csv {} responses={:?} covariates={covariates:?}", csv.path.display(), csv.responses),
    )?)
}

fn resolve(opts: &RunOptions) -> CliResult<(ExperimentConfig, Vec<u8>, u64, Output)> {
    let (cfg, bytes) = ExperimentConfig::load(&opts.config)?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let dir = opts
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::config("out", "no output directory: pass --out or set `out`"))?;
    Ok((cfg, bytes, seed, Output::new(dir)?))
}

/// Runs one subcommand and returns the output directory.
pub fn run(cmd: Command, opts: &RunOptions) -> CliResult<PathBuf> {
    let (mut cfg, cfg_bytes, seed, mut out) = resolve(opts)?;
    let raw = build_raw(&cfg.dataset, seed)?;
    let mut manifest = Map::new();
    if cmd == Command::Generate {
        out.write("data.csv", raw_to_csv(&raw).as_bytes())?;
    } else {
        let dataset = split_standardize(&raw, cfg.dataset.split, seed)?;
        if let Some(m) = cmd.metric() {
            cfg.eval.metrics = vec![m];
        }
        let models = if cmd == Command::Eval || !opts.models.is_empty() {
            if opts.models.is_empty() || (cmd != Command::PairwiseLl && opts.models.len() > 1) {
                return Err(CliError::config("--model", "eval needs exactly one --model"));
            }
            // A single model fills the configured family's slot; a comparison may mix families.
            let family = (opts.models.len() == 1).then(|| cfg.model.family());
            opts.models
                .iter()
                .map(|p| {
                    let model = load_checked(p, &dataset, family)?;
                    let name = if family.is_some() { model.family().name().to_string() } else { name_of(p) };
                    Ok((name, model))
                })
                .collect::<CliResult<Vec<_>>>()?
        } else {
            let mut model = Model::new(&cfg.model, dataset.d(), dataset.k(), seed)?;
            let tcfg = TrainConfig {
                seed,
                ..cfg.training.clone()
            };
            let history = train(&mut model, &dataset, &tcfg)?;
            save_model(&model, out.path(MODEL_FILE))?;
            out.write_with("history.csv", |b| history.write_csv(b))?;
            manifest.insert("best_epoch".into(), json!(history.best_epoch));
            manifest.insert("epochs".into(), json!(history.records.len()));
            vec![(model.family().name().to_string(), model)]
        };
        let metrics = compute_metrics(&models, &dataset, &cfg, seed, &mut out)?;
        out.write("metrics.json", pretty(&Value::Object(metrics)).as_bytes())?;
        manifest.insert("dataset_dims".into(), json!({"d": dataset.d(), "k": dataset.k(), "dropped_x": dataset.dropped_x, "dropped_y": dataset.dropped_y}));
    }
    out.files.sort();
    manifest.insert("manifest_version".into(), json!(MANIFEST_VERSION));
    manifest.insert("model_format_version".into(), json!(FORMAT_VERSION));
    manifest.insert("tool_version".into(), json!(env!("CARGO_PKG_VERSION")));
    manifest.insert("command".into(), json!(cmd.name()));
    manifest.insert("config_sha256".into(), json!(hex(&Sha256::digest(&cfg_bytes))));
    manifest.insert("seed".into(), json!(seed));
    manifest.insert("dataset".into(), json!(raw.provenance));
    manifest.insert("models".into(), json!(opts.models));
    manifest.insert("files".into(), json!(out.files));
    manifest.insert("config".into(), serde_json::to_value(&cfg).map_err(monde::Error::from)?);
    let dir = out.dir.clone();
    out.write("manifest.json", pretty(&Value::Object(manifest)).as_bytes())?;
    Ok(dir)
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialise");
    s.push('\n');
    s
}

fn name_of(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn load_checked(path: &Path, ds: &Dataset, family: Option<Family>) -> CliResult<Model> {
    let model = match family {
        Some(f) => load_model_as(path, f)?,
        None => load_model(path)?,
    };
    if model.d() != ds.d() || model.k() != ds.k() {
        return Err(CliError::config(
            "dataset",
            format!(
                "model expects D={} K={}, dataset has D={} K={}",
                model.d(),
                model.k(),
                ds.d(),
                ds.k()
            ),
        ));
    }
    Ok(model)
}

fn raw_to_csv(raw: &RawData) -> String {
    let mut s = String::new();
    let mut header: Vec<String> = (0..raw.x.cols).map(|j| format!("x{j}")).collect();
    header.extend((0..raw.y.cols).map(|j| format!("y{j}")));
    if raw.groups.is_some() {
        header.push("group".into());
    }
    s.push_str(&header.join(","));
    s.push('\n');
    for r in 0..raw.len() {
        let mut fields: Vec<String> = raw.x.row(r).iter().chain(raw.y.row(r)).map(f64::to_string).collect();
        if let Some(g) = &raw.groups {
            fields.push(g[r].to_string());
        }
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

fn pair_key(i: usize, j: usize) -> String {
    format!("{i}-{j}")
}

fn level_key(q: f64) -> String {
    format!("q{}", (q * 1000.0).round() as u64)
}

fn compute_metrics(
    models: &[(String, Model)],
    ds: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    out: &mut Output,
) -> CliResult<Map<String, Value>> {
    let ev = &cfg.eval;
    let (name, model) = &models[0];
    let pairs: Vec<(usize, usize)> = match &ev.pairs {
        Some(p) => p.iter().map(|&[i, j]| (i, j)).collect(),
        None => all_pairs(ds.k()),
    };
    let condition = match &ev.condition {
        Some(c) if c.len() != ds.d() => {
            return Err(CliError::config("eval.condition", format!("needs {} values", ds.d())));
        }
        Some(c) => ds.x_stats.apply(c),
        None => vec![0.0; ds.d()],
    };
    let u_grid = ev.u_grid.clone().unwrap_or_else(default_u_grid);
    let mut metrics = Map::new();
    metrics.insert("model".into(), json!(name));
    metrics.insert("split".into(), json!(ev.split));
    let mut requested = ev.metrics.clone();
    requested.sort();
    requested.dedup();
    for metric in requested {
        match metric {
            Metric::TestLl => {
                let s = evaluate_split(model, ds, ev.split)?;
                metrics.insert("log_likelihood".into(), json!({"mean": s.mean, "stderr": s.stderr, "n": s.n}));
            }
            Metric::TailClassify => {
                let mut m = Map::new();
                for &q in &ev.q {
                    let t = tail_labels_scores(model, ds, ev.split, q)?;
                    let roc = roc_auc(&t.labels, &t.scores)?;
                    let pr = pr_ap(&t.labels, &t.scores)?;
                    let (null_mean, null_sd) = auc_permutation_null(&t.labels, &t.scores, ev.permutations.max(2), seed)?;
                    let key = level_key(q);
                    out.write_with(&format!("roc_{key}.csv"), |b| roc.write_csv(b))?;
                    out.write_with(&format!("pr_{key}.csv"), |b| pr.write_csv(b))?;
                    m.insert(
                        key,
                        json!({
                            "q": q,
                            "auc": roc.summary,
                            "average_precision": pr.summary,
                            "null_auc_mean": null_mean,
                            "null_auc_sd": null_sd,
                            "positives": t.labels.iter().filter(|&&l| l).count(),
                            "rows": t.labels.len(),
                        }),
                    );
                }
                metrics.insert("tail_classify".into(), Value::Object(m));
            }
            Metric::TailDep => {
                let (_, y) = ds.split_xy(ev.split);
                let mut m = Map::new();
                for &(i, j) in &pairs {
                    let emp = empirical_tail_dep(&y.column(i), &y.column(j), &u_grid)?;
                    out.write_with(&format!("taildep_empirical_{i}_{j}.csv"), |b| emp.write_csv(b))?;
                    let lo = u_grid.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = u_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut entry = json!({
                        "u_low": lo,
                        "u_high": hi,
                        "empirical_low": emp.at(lo),
                        "empirical_high": emp.at(hi),
                    });
                    match model_tail_dep(model, i, j, &condition, &u_grid) {
                        Ok(modl) => {
                            out.write_with(&format!("taildep_model_{i}_{j}.csv"), |b| modl.write_csv(b))?;
                            entry["model_low"] = json!(modl.at(lo));
                            entry["model_high"] = json!(modl.at(hi));
                        }
                        Err(e) => {
                            log::warn!("model tail dependence for pair ({i}, {j}) failed: {e}");
                            entry["model_error"] = json!(e.to_string());
                        }
                    }
                    m.insert(pair_key(i, j), entry);
                }
                metrics.insert("tail_dependence".into(), Value::Object(m));
            }
            Metric::Mi => {
                let mut m = Map::new();
                let mut csv = String::from("i,j,mi,mass\n");
                for &(i, j) in &pairs {
                    match model_mutual_information(model, i, j, &condition, ev.quad_box, ev.quad_n) {
                        Ok(r) => {
                            let _ = writeln!(csv, "{i},{j},{},{}", r.mi, r.mass);
                            m.insert(pair_key(i, j), json!({"mi": r.mi, "mass": r.mass}));
                        }
                        Err(e) => {
                            log::warn!("mutual information for pair ({i}, {j}) failed: {e}");
                            m.insert(pair_key(i, j), json!({"error": e.to_string()}));
                        }
                    }
                }
                out.write("mi.csv", csv.as_bytes())?;
                metrics.insert("mutual_information".into(), Value::Object(m));
            }
            Metric::PairwiseLl => {
                let mut baseline = Model::new(&ModelSpec::DiagonalGaussian, ds.d(), ds.k(), seed)?;
                train(&mut baseline, ds, &TrainConfig::default())?;
                let mut names: Vec<String> = models.iter().map(|(n, _)| n.clone()).collect();
                names.push("diagonal-gaussian".into());
                let scores = models
                    .iter()
                    .map(|(_, m)| m)
                    .chain(std::iter::once(&baseline))
                    .map(|m| pair_mean_lls(m, ds, ev.split, &pairs))
                    .collect::<monde::Result<Vec<_>>>()?;
                let wins = pairwise_ll_wins(&names, &scores)?;
                out.write_with("pairwise_wins.csv", |b| wins.write_csv(b))?;
                let mut csv = format!("pair,{}\n", names.join(","));
                for (p, &(i, j)) in pairs.iter().enumerate() {
                    let row: Vec<String> = scores.iter().map(|s| s[p].to_string()).collect();
                    let _ = writeln!(csv, "{},{}", pair_key(i, j), row.join(","));
                }
                out.write("pair_ll.csv", csv.as_bytes())?;
                metrics.insert("pairwise_wins".into(), json!({"models": names, "wins": wins.wins}));
            }
        }
    }
    Ok(metrics)
}
