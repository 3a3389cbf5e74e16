//! `graphsim` command-line front end.
//!
//! Exit status: 0 on success, 2 on input failures (I/O, parse, schema,
//! usage), 3 on domain rejections. Diagnostics go to stderr as one JSON
//! object per line; stdout carries only the requested artifact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use graphsim::baselines::{evaluate_baselines, BaselineMetric, BaselineResult};
use graphsim::color::{ColorSpace, ColorSpaceConfig};
use graphsim::distort::{apply, DistortionKind, DistortionSpec, DistortionStep};
use graphsim::error::{Error, ErrorClass};
use graphsim::eval::{evaluate_samples, format_table, FitScope, MetricEvaluation, Sample};
use graphsim::graph::SignalKind;
use graphsim::mos::load_mos_csv;
use graphsim::ply::{load_ply, save_ply, PlyFormat};
use graphsim::report::serde_f64_inf;
use graphsim::resample::{resample, write_keypoints_csv, KeypointCount, ResampleConfig, ResampleMethod};
use graphsim::similarity::{GraphSimConfig, GraphSimScorer, PoolingPreset, SeedScore, SimilarityScore, TauScope};
use graphsim::spatial::SpatialIndex;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "graphsim", version, about = "Point cloud quality assessment by local graph similarity")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a distorted cloud against its reference.
    Score(ScoreArgs),
    /// Point-wise PSNR metrics.
    Baseline(BaselineArgs),
    /// Write a seeded impaired copy of a cloud.
    Distort(DistortArgs),
    /// Dump the keypoints drawn from a cloud as CSV.
    Resample(ResampleArgs),
    /// Correlate score reports with MOS.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ColorSpaceArg {
    Gcm,
    Yuv,
    Rgb,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Highpass,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    C1,
    C2,
    C3,
    C4,
}

#[derive(Clone, Copy, ValueEnum)]
enum TauScopeArg {
    Union,
    Reference,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Ascii,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitArg {
    Global,
    PerGroup,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalFormat {
    Table,
    Json,
}

#[derive(Args, Clone)]
struct KeypointArgs {
    /// Keypoints as a fraction of the reference size (floor, at least 1).
    #[arg(long, default_value_t = 0.001, conflicts_with = "beta")]
    beta_ratio: f64,
    /// Exact keypoint count.
    #[arg(long)]
    beta: Option<usize>,
    /// Length L of the high-pass filter (I − A)^(L−1).
    #[arg(long, default_value_t = 4)]
    filter_length: usize,
    /// Neighbors per point in the filter graph.
    #[arg(long, default_value_t = 10)]
    knn_k: usize,
    #[arg(long = "resample", value_enum, default_value = "highpass")]
    method: MethodArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl KeypointArgs {
    fn config(&self) -> ResampleConfig {
        ResampleConfig {
            count: match self.beta {
                Some(b) => KeypointCount::Exact(b),
                None => KeypointCount::Ratio(self.beta_ratio),
            },
            filter_length: self.filter_length,
            knn_k: self.knn_k,
            method: match self.method {
                MethodArg::Highpass => ResampleMethod::HighPass,
                MethodArg::Random => ResampleMethod::Random,
            },
            seed: self.seed,
        }
    }
}

#[derive(Args, Clone)]
struct LabelArgs {
    /// Content label recorded in the report.
    #[arg(long)]
    content: Option<String>,
    /// Distortion label recorded in the report.
    #[arg(long)]
    distortion: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    reference: PathBuf,
    distorted: PathBuf,
    #[arg(long, value_enum, default_value = "gcm")]
    color_space: ColorSpaceArg,
    /// Channel weights, e.g. `6,1,1` (default depends on the color space).
    #[arg(long, value_delimiter = ',', value_name = "W1,W2,W3")]
    channel_weights: Option<Vec<f64>>,
    /// color, coord, normal, mixed (= color,coord), m2 (= color,normal), or a comma list.
    #[arg(long, default_value = "color")]
    signal: String,
    /// θ as a fraction of the smallest bounding-box extent.
    #[arg(long, default_value_t = 0.1)]
    theta_fraction: f64,
    /// k defining τ as the k-th nearest distance to the keypoint.
    #[arg(long, default_value_t = 50)]
    matching_k: usize,
    #[arg(long, value_enum, default_value = "c2")]
    pooling: PoolingArg,
    #[arg(long, value_enum, default_value = "union")]
    tau_scope: TauScopeArg,
    /// Blend color distance into edge weights (experimental).
    #[arg(long)]
    mixed_graph: bool,
    /// Score under this many consecutive seeds starting at --seed and average.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[command(flatten)]
    keypoints: KeypointArgs,
    #[command(flatten)]
    labels: LabelArgs,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    reference: PathBuf,
    distorted: PathBuf,
    /// Metric ids (m-p2po, m-p2pl, h-p2po, h-p2pl, psnr-yuv) or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    metric: Vec<String>,
    #[command(flatten)]
    labels: LabelArgs,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DistortArgs {
    input: PathBuf,
    /// Single distortion kind (cn, ggn, ds, ot); use with --level or --preset.
    #[arg(long, conflicts_with = "step")]
    kind: Option<String>,
    #[arg(long, conflicts_with = "preset")]
    level: Option<f64>,
    /// Preset level 1 (mildest) to 6.
    #[arg(long)]
    preset: Option<usize>,
    /// Composite step `kind:level`, repeatable, applied in order.
    #[arg(long)]
    step: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    format: FormatArg,
    /// Manifest path (default: output with a .json extension).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ResampleArgs {
    input: PathBuf,
    #[command(flatten)]
    keypoints: KeypointArgs,
    /// CSV path (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of JSON score reports.
    scores: PathBuf,
    mos: PathBuf,
    /// Evaluate only the MOS rows that have scores.
    #[arg(long)]
    allow_partial: bool,
    #[arg(long, value_enum, default_value = "global")]
    fit: FitArg,
    /// What to print on stdout.
    #[arg(long, value_enum, default_value = "table")]
    format: EvalFormat,
    /// Also write the JSON report here.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Also write the text table here.
    #[arg(long)]
    table: Option<PathBuf>,
}

/// CLI-level failure carrying its exit class.
struct Failure {
    class: ErrorClass,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            class: e.class(),
            kind: e.tag(),
            message: e.to_string(),
        }
    }
}

fn domain(message: impl Into<String>) -> Failure {
    Failure {
        class: ErrorClass::Domain,
        kind: "domain",
        message: message.into(),
    }
}

fn input(kind: &'static str, message: impl Into<String>) -> Failure {
    Failure {
        class: ErrorClass::Input,
        kind,
        message: message.into(),
    }
}

fn warn(message: &str) {
    eprintln!("{}", json!({"level": "warning", "message": message}));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            warn(&format!("could not size the worker pool: {e}"));
        }
    }
    let result = match cli.command {
        Command::Score(a) => cmd_score(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Distort(a) => cmd_distort(a),
        Command::Resample(a) => cmd_resample(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({"level": "error", "kind": f.kind, "message": f.message}));
            ExitCode::from(match f.class {
                ErrorClass::Input => 2,
                ErrorClass::Domain => 3,
            })
        }
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(path) => fs::write(path, text).map_err(|e| input("io", format!("cannot write {path:?}: {e}"))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| input("io", format!("cannot write stdout: {e}")))
        }
    }
}

fn to_json(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report values serialize");
    s.push('\n');
    s
}

fn parse_signals(spec: &str) -> Result<Vec<SignalKind>, Failure> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kinds: &[SignalKind] = match part.to_ascii_lowercase().as_str() {
            "color" => &[SignalKind::Color],
            "coord" | "coordinate" | "g1" => &[SignalKind::Coordinate],
            "normal" | "g2" => &[SignalKind::Normal],
            "mixed" | "m1" => &[SignalKind::Color, SignalKind::Coordinate],
            "m2" => &[SignalKind::Color, SignalKind::Normal],
            other => return Err(domain(format!("unknown signal kind '{other}'"))),
        };
        out.extend_from_slice(kinds);
    }
    if out.is_empty() {
        return Err(domain("no signal kind given"));
    }
    Ok(out)
}

#[derive(Serialize)]
struct ScoreReport<'a> {
    content: Option<&'a str>,
    distortion: Option<&'a str>,
    scores: BTreeMap<&'static str, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<SeedSummary>,
    graphsim: SimilarityScore,
    config: &'a GraphSimConfig,
}

#[derive(Serialize)]
struct SeedSummary {
    mean_q: f64,
    per_seed: Vec<SeedScore>,
}

fn cmd_score(a: ScoreArgs) -> Result<(), Failure> {
    let space = match a.color_space {
        ColorSpaceArg::Gcm => ColorSpace::Gcm,
        ColorSpaceArg::Yuv => ColorSpace::Yuv,
        ColorSpaceArg::Rgb => ColorSpace::Rgb,
    };
    let color = match &a.channel_weights {
        Some(w) => match w[..] {
            [a, b, c] => ColorSpaceConfig::with_weights(space, [a, b, c])?,
            _ => return Err(domain("--channel-weights takes exactly three values")),
        },
        None => ColorSpaceConfig::new(space),
    };
    let preset = match a.pooling {
        PoolingArg::C1 => PoolingPreset::C1,
        PoolingArg::C2 => PoolingPreset::C2,
        PoolingArg::C3 => PoolingPreset::C3,
        PoolingArg::C4 => PoolingPreset::C4,
    };
    let config = GraphSimConfig {
        theta_fraction: a.theta_fraction,
        matching_k: a.matching_k,
        color,
        signals: parse_signals(&a.signal)?,
        tau_scope: match a.tau_scope {
            TauScopeArg::Union => TauScope::Union,
            TauScopeArg::Reference => TauScope::Reference,
        },
        mixed_graph: a.mixed_graph,
        resample: a.keypoints.config(),
        ..GraphSimConfig::default()
    }
    .with_pooling(preset);
    config.validate()?;
    if a.seeds == 0 {
        return Err(domain("--seeds must be at least 1"));
    }

    let reference = load_ply(&a.reference)?;
    let distorted = load_ply(&a.distorted)?;
    let scorer = GraphSimScorer::new(&reference, &distorted, &config)?;
    let base = config.resample.seed;
    let detail = scorer.score_seed(base)?;
    let seeds = if a.seeds > 1 {
        let mut per_seed = vec![SeedScore { seed: base, q: detail.q }];
        for i in 1..a.seeds {
            let seed = base.wrapping_add(i);
            per_seed.push(SeedScore {
                seed,
                q: scorer.score_seed(seed)?.q,
            });
        }
        let mean_q = per_seed.iter().map(|s| s.q).sum::<f64>() / per_seed.len() as f64;
        Some(SeedSummary { mean_q, per_seed })
    } else {
        None
    };
    for w in &detail.warnings {
        warn(w);
    }
    let q = seeds.as_ref().map_or(detail.q, |s| s.mean_q);
    let report = ScoreReport {
        content: a.labels.content.as_deref(),
        distortion: a.labels.distortion.as_deref(),
        scores: BTreeMap::from([("graphsim", q)]),
        seeds,
        graphsim: detail,
        config: &config,
    };
    emit(&to_json(&report), a.output.as_deref())
}

#[derive(Serialize)]
struct BaselineReport<'a> {
    content: Option<&'a str>,
    distortion: Option<&'a str>,
    scores: BTreeMap<&'static str, InfF64>,
    baselines: Vec<BaselineResult>,
    geometry_peak: &'static str,
    color_model: &'static str,
}

#[derive(Serialize)]
struct InfF64(#[serde(with = "serde_f64_inf")] f64);

fn cmd_baseline(a: BaselineArgs) -> Result<(), Failure> {
    let metrics: Vec<BaselineMetric> = if a.metric.iter().any(|m| m.eq_ignore_ascii_case("all")) {
        BaselineMetric::ALL.to_vec()
    } else {
        a.metric.iter().map(|m| m.parse()).collect::<Result<_, _>>()?
    };
    let reference = load_ply(&a.reference)?;
    let distorted = load_ply(&a.distorted)?;
    let results = evaluate_baselines(&reference, &distorted, &metrics)?;
    let report = BaselineReport {
        content: a.labels.content.as_deref(),
        distortion: a.labels.distortion.as_deref(),
        scores: results.iter().map(|r| (r.metric.id(), InfF64(r.value))).collect(),
        baselines: results,
        geometry_peak: "10*log10(3*p^2/error), p = largest reference bounding-box extent; worse direction",
        color_model: "BT.709 full-range YUV scaled to 0-255; (6*Y+U+V)/8; worse direction per channel",
    };
    emit(&to_json(&report), a.output.as_deref())
}

fn parse_step(s: &str) -> Result<DistortionStep, Failure> {
    let (kind, level) = s
        .split_once(':')
        .ok_or_else(|| domain(format!("step '{s}' is not of the form kind:level")))?;
    let level = level
        .parse::<f64>()
        .map_err(|_| domain(format!("step '{s}' has a non-numeric level")))?;
    Ok(DistortionStep {
        kind: kind.parse()?,
        level,
    })
}

fn cmd_distort(a: DistortArgs) -> Result<(), Failure> {
    let steps = if !a.step.is_empty() {
        a.step.iter().map(|s| parse_step(s)).collect::<Result<Vec<_>, _>>()?
    } else {
        let kind: DistortionKind = a
            .kind
            .as_deref()
            .ok_or_else(|| domain("give --kind with --level or --preset, or one or more --step"))?
            .parse()?;
        let level = match (a.level, a.preset) {
            (Some(l), _) => l,
            (None, Some(p @ 1..=6)) => kind.presets()[p - 1],
            (None, Some(p)) => return Err(domain(format!("preset {p} is not in 1..=6"))),
            (None, None) => return Err(domain("give --level or --preset")),
        };
        vec![DistortionStep { kind, level }]
    };
    let spec = DistortionSpec { steps, seed: a.seed };
    spec.validate()?;
    let cloud = load_ply(&a.input)?;
    let out = apply(&cloud, &spec)?;
    let format = match a.format {
        FormatArg::Ascii => PlyFormat::Ascii,
        FormatArg::Binary => PlyFormat::BinaryLittleEndian,
    };
    save_ply(&out, &a.output, format)?;
    let mut manifest = json!({
        "input": a.input,
        "output": a.output,
        "spec": spec,
        "points_in": cloud.len(),
        "points_out": out.len(),
    });
    if spec.steps.iter().any(|s| s.kind == DistortionKind::Ot) {
        manifest["note"] = json!("ot is a voxel quantization approximation, not an octree codec");
    }
    let path = a.manifest.unwrap_or_else(|| a.output.with_extension("json"));
    emit(&to_json(&manifest), Some(&path))
}

fn cmd_resample(a: ResampleArgs) -> Result<(), Failure> {
    let config = a.keypoints.config();
    config.validate()?;
    let cloud = load_ply(&a.input)?;
    let index = SpatialIndex::build(&cloud)?;
    let set = resample(&cloud, &index, &config)?;
    for w in &set.warnings {
        warn(w);
    }
    let mut buf = Vec::new();
    write_keypoints_csv(&mut buf, &cloud, &set)?;
    emit(&String::from_utf8(buf).expect("csv is utf-8"), a.output.as_deref())?;
    if let Some(path) = a.manifest {
        let manifest = json!({
            "input": a.input,
            "points": cloud.len(),
            "keypoints": set.len(),
            "config": config,
        });
        emit(&to_json(&manifest), Some(&path))?;
    }
    Ok(())
}

/// Scores found in a directory, keyed by (content, distortion) then metric.
type ScoreTable = BTreeMap<(String, String), BTreeMap<String, f64>>;

fn read_scores(dir: &Path) -> Result<ScoreTable, Failure> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| input("io", format!("cannot read {dir:?}: {e}")))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    let mut table = ScoreTable::new();
    for path in entries {
        let text = fs::read_to_string(&path).map_err(|e| input("io", format!("cannot read {path:?}: {e}")))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| input("parse", format!("{path:?}: {e}")))?;
        let Some(scores) = v.get("scores").and_then(Value::as_object) else {
            continue;
        };
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let from_stem = stem.split_once("__");
        let label = |field: &str, fallback: Option<&str>| -> Result<String, Failure> {
            v.get(field)
                .and_then(Value::as_str)
                .or(fallback)
                .map(str::to_string)
                .ok_or_else(|| {
                    input(
                        "schema",
                        format!("{path:?} has no {field} label and its name is not <content>__<distortion>.json"),
                    )
                })
        };
        let key = (
            label("content", from_stem.map(|s| s.0))?,
            label("distortion", from_stem.map(|s| s.1))?,
        );
        let slot = table.entry(key.clone()).or_default();
        for (metric, value) in scores {
            let parsed = match value {
                Value::Number(n) => n.as_f64(),
                Value::String(s) => serde_f64_inf::parse_str(s),
                _ => None,
            }
            .ok_or_else(|| input("schema", format!("{path:?}: score '{metric}' is not a number")))?;
            if slot.insert(metric.clone(), parsed).is_some() {
                return Err(input(
                    "schema",
                    format!("duplicate score '{metric}' for ({}, {})", key.0, key.1),
                ));
            }
        }
    }
    Ok(table)
}

#[derive(Serialize)]
struct EvalOutput {
    fit: FitScope,
    logistic: &'static str,
    metrics: BTreeMap<String, MetricEvaluation>,
    missing: Vec<BTreeMap<&'static str, String>>,
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let mos = load_mos_csv(&a.mos)?;
    let scores = read_scores(&a.scores)?;
    let metric_names: Vec<String> = {
        let mut names: Vec<String> = scores.values().flat_map(|m| m.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    };
    if metric_names.is_empty() {
        return Err(domain(format!("no score reports found in {:?}", a.scores)));
    }
    let mut missing = Vec::new();
    for row in mos.rows() {
        let have = scores.get(&(row.content.clone(), row.distortion.clone()));
        for m in &metric_names {
            if have.is_none_or(|h| !h.contains_key(m)) {
                missing.push(BTreeMap::from([
                    ("content", row.content.clone()),
                    ("distortion", row.distortion.clone()),
                    ("metric", m.clone()),
                ]));
            }
        }
    }
    if !missing.is_empty() && !a.allow_partial {
        let keys: Vec<String> = missing
            .iter()
            .map(|m| format!("{}/{}:{}", m["content"], m["distortion"], m["metric"]))
            .collect();
        return Err(domain(format!("missing scores for MOS rows: {}", keys.join(", "))));
    }
    for m in &missing {
        warn(&format!("no {} score for ({}, {})", m["metric"], m["content"], m["distortion"]));
    }
    let scope = match a.fit {
        FitArg::Global => FitScope::Global,
        FitArg::PerGroup => FitScope::PerGroup,
    };
    let mut metrics = BTreeMap::new();
    for name in &metric_names {
        let samples: Vec<Sample> = mos
            .rows()
            .iter()
            .filter_map(|row| {
                let v = scores.get(&(row.content.clone(), row.distortion.clone()))?.get(name)?;
                Some(Sample {
                    content: row.content.clone(),
                    distortion: row.distortion.clone(),
                    prediction: *v,
                    mos: row.mos,
                })
            })
            .collect();
        let evaluation = evaluate_samples(&samples, scope).map_err(|e| domain(format!("metric {name}: {e}")))?;
        metrics.insert(name.clone(), evaluation);
    }
    let table = format_table(&metrics.iter().map(|(k, v)| (k.clone(), v.clone())).collect::<Vec<_>>());
    let report = EvalOutput {
        fit: scope,
        logistic: "b1*(0.5 - 1/(1+exp(b2*(x-b3)))) + b4*x + b5",
        metrics,
        missing,
    };
    let json_text = to_json(&report);
    if let Some(path) = &a.output {
        emit(&json_text, Some(path))?;
    }
    if let Some(path) = &a.table {
        emit(&table, Some(path))?;
    }
    match a.format {
        EvalFormat::Table => emit(&table, None),
        EvalFormat::Json => emit(&json_text, None),
    }
}
