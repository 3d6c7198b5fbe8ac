use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use distlr::eval::{evaluate_method, MethodEvaluation};
use distlr::method::{FittedModel, MethodConfig, MethodKind};
use distlr::pairs::{
    compute_distances_with_budget, enumerate_pairs, write_vectorial_csv, DistanceKind,
    DEFAULT_MEMORY_BUDGET,
};
use distlr::persist::{load_model, save_model, write_atomic, SavedModel};
use distlr::report::{
    evaluation_json, format_lr, format_table, manifest_path, ReportRow, RunManifest,
};
use distlr::select::{default_grid, rank_features, select_count_cv};
use distlr::synth::{generate_panel, panel_comments, PanelConfig};
use distlr::trace::{
    dichotomize_with_threshold, ingest_csv, normalize_log, repeatability, split_calibration_test,
    CsvSchema, Mode, SplitConfig, TraceMatrix,
};
use distlr::Error;

#[derive(Parser)]
#[command(
    name = "distlr",
    version,
    about = "Distance-based likelihood ratios for trace comparison"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic raw panel.
    Synth(SynthArgs),
    /// Validate a panel CSV and re-emit it in canonical form.
    Ingest(IngestArgs),
    /// Apply x_k = ln(1 + a_k) / Σ_j ln(1 + a_j) to every trace.
    Normalize(InOut),
    /// Replace every feature by presence (area > threshold).
    Dichotomize(DichotomizeArgs),
    /// Split subjects into calibration and test panels.
    Split(SplitArgs),
    /// Enumerate pairs and optionally their distances.
    Pairs(PairsArgs),
    /// Fit a method on a calibration panel and save the model.
    Fit(FitArgs),
    /// Rank features and choose the feature count by grouped cross-validation.
    Select(SelectArgs),
    /// Fit on calibration, report AUC / threshold / Sn / Sp on both sets.
    Evaluate(EvaluateArgs),
    /// LR and posterior for one pair of traces.
    Compare(CompareArgs),
    /// Relative standard deviation of features across replicates.
    Repeatability(RepeatabilityArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    subjects: usize,
    #[arg(long, default_value_t = 3)]
    replicates: usize,
    /// Replicate profile as `count:subjects,...`, e.g. `1:44,2:77`; overrides
    /// --subjects and --replicates.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long, default_value_t = 50)]
    features: usize,
    #[arg(long, default_value_t = 10)]
    informative: usize,
    #[arg(long, default_value_t = 1.0)]
    between_sd: f64,
    #[arg(long, default_value_t = 0.3)]
    within_sd: f64,
    #[arg(long, default_value_t = 0.0)]
    sparsity: f64,
    #[arg(long, default_value_t = 0.5)]
    gender_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    heterogeneity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "subject_id")]
    subject_col: String,
    #[arg(long, default_value = "replicate_id")]
    replicate_col: String,
    #[arg(long, default_value = "gender")]
    gender_col: String,
    #[arg(long, default_value = "age")]
    age_col: String,
}

#[derive(Args)]
struct InOut {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DichotomizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    cal_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
    /// Fraction of subjects assigned to calibration.
    #[arg(long, default_value_t = 0.77)]
    fraction: f64,
    #[arg(long)]
    stratify_gender: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Pair list `i,j,label,d`, or the distance matrix for --distance vectorial.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    distance: Option<DistanceKind>,
    /// Pair index `i,j,label` written alongside a vectorial matrix.
    #[arg(long)]
    index_out: Option<PathBuf>,
    #[arg(long)]
    features: Option<String>,
    #[arg(long, default_value_t = DEFAULT_MEMORY_BUDGET)]
    memory_budget: usize,
}

#[derive(Args, Clone)]
struct MethodArgs {
    #[arg(long, value_parser = parse_method)]
    method: MethodKind,
    /// Defaults to spearman for the scalar methods, vectorial otherwise.
    #[arg(long)]
    distance: Option<DistanceKind>,
    /// Zero-based feature indices, e.g. `0,3,10-19`.
    #[arg(long)]
    features: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    /// Keep each different-source pair with this probability when fitting.
    #[arg(long)]
    ds_subsample: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    method: MethodArgs,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    input: PathBuf,
    /// Selection result as JSON.
    #[arg(long)]
    out: PathBuf,
    /// Feature ranking on the whole panel as CSV.
    #[arg(long)]
    ranking_out: Option<PathBuf>,
    /// Candidate feature counts, e.g. `1,2,5,10`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[command(flatten)]
    method: MethodArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// JSON report.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated methods; all three by default.
    #[arg(long, default_value = "direct,indirect-scalar,indirect-vectorial")]
    methods: String,
    /// Scalar distance for the direct and indirect-scalar methods.
    #[arg(long, default_value = "spearman")]
    distance: DistanceKind,
    #[arg(long, default_value_t = 0.5)]
    prior: f64,
    #[arg(long)]
    features: Option<String>,
    /// Choose the feature count per method by cross-validation first.
    #[arg(long)]
    select: bool,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long)]
    ds_subsample: Option<f64>,
    /// Directory for per-method ROC curves as CSV.
    #[arg(long)]
    roc_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    /// Panel CSV holding trace A; `PATH@SUBJECT/REPLICATE` picks one row of
    /// a larger panel.
    #[arg(long)]
    trace_a: String,
    #[arg(long)]
    trace_b: String,
    #[arg(long)]
    model: PathBuf,
    /// Prior probability of the same-source hypothesis.
    #[arg(long)]
    prior: f64,
}

#[derive(Args)]
struct RepeatabilityArgs {
    #[arg(long)]
    input: PathBuf,
    /// Per-feature RSD as CSV.
    #[arg(long)]
    per_feature_out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<MethodKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let args: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Synth(a) => synth(a, args),
        Command::Ingest(a) => ingest(a, args),
        Command::Normalize(a) => transform(a.input, a.out, "normalize", args, normalize_log),
        Command::Dichotomize(a) => {
            let t = a.threshold;
            transform(a.input, a.out, "dichotomize", args, |m| {
                dichotomize_with_threshold(m, t)
            })
        }
        Command::Split(a) => split(a, args),
        Command::Pairs(a) => pairs(a, args),
        Command::Fit(a) => fit(a, args),
        Command::Select(a) => select(a, args),
        Command::Evaluate(a) => evaluate(a, args),
        Command::Compare(a) => compare(a),
        Command::Repeatability(a) => repeatability_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

struct Run {
    manifest: RunManifest,
    start: Instant,
    path: PathBuf,
}

impl Run {
    fn new(
        command: &str,
        args: Vec<String>,
        config: Value,
        seed: Option<u64>,
        primary: &Path,
    ) -> Self {
        Run {
            manifest: RunManifest::new(command, args, config, seed),
            start: Instant::now(),
            path: manifest_path(primary),
        }
    }

    fn reference(&self) -> String {
        self.path.display().to_string()
    }

    fn finish(mut self) -> Result<(), Error> {
        self.manifest.wall_time_s = self.start.elapsed().as_secs_f64();
        self.manifest.save(&self.path)
    }
}

fn load_panel(path: &Path, run: Option<&mut Run>) -> Result<TraceMatrix, Error> {
    let m = ingest_csv(path, &CsvSchema::default())?;
    if let Some(r) = run {
        r.manifest.add_input(path, m.fingerprint());
    }
    Ok(m)
}

fn write_panel(
    m: &TraceMatrix,
    path: &Path,
    run: &mut Run,
    extra: &[(&str, String)],
) -> Result<(), Error> {
    let mut comments = vec![("manifest", run.reference())];
    comments.extend(extra.iter().cloned());
    let mut buf = Vec::new();
    m.write_csv(&mut buf, &comments)?;
    write_atomic(path, &buf)?;
    run.manifest.add_output(path);
    Ok(())
}

/// Writes CSV produced by `body` behind a `#manifest:` comment line.
fn write_csv_output(
    path: &Path,
    run: &mut Run,
    body: impl FnOnce(&mut Vec<u8>) -> Result<(), Error>,
) -> Result<(), Error> {
    let mut buf = format!("#manifest: {}\n", run.reference()).into_bytes();
    body(&mut buf)?;
    write_atomic(path, &buf)?;
    run.manifest.add_output(path);
    Ok(())
}

fn write_json_output(path: &Path, run: &mut Run, mut value: Value) -> Result<(), Error> {
    if let Value::Object(o) = &mut value {
        o.insert("manifest".into(), Value::from(run.reference()));
    }
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    run.manifest.add_output(path);
    Ok(())
}

fn parse_profile(s: &str) -> Result<BTreeMap<usize, usize>, Failure> {
    let mut out = BTreeMap::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let (r, n) = part.split_once(':').ok_or_else(|| {
            usage(format!(
                "bad profile entry '{part}', expected count:subjects"
            ))
        })?;
        let r: usize = r
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad replicate count '{r}'")))?;
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad subject count '{n}'")))?;
        *out.entry(r).or_insert(0) += n;
    }
    Ok(out)
}

fn parse_list(s: &str) -> Result<Vec<usize>, Failure> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || usage(format!("bad index or range '{part}'"));
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn parse_features(s: Option<&str>, n: usize) -> Result<Option<Vec<usize>>, Failure> {
    let Some(s) = s else { return Ok(None) };
    let v = parse_list(s)?;
    if v.is_empty() {
        return Err(usage("--features selects no feature"));
    }
    if let Some(&k) = v.iter().find(|&&k| k >= n) {
        return Err(usage(format!(
            "feature index {k} out of range (panel has {n} features)"
        )));
    }
    Ok(Some(v))
}

fn method_config(a: &MethodArgs, n_features: usize) -> Result<MethodConfig, Failure> {
    let distance = a.distance.unwrap_or(match a.method {
        MethodKind::IndirectVectorial => DistanceKind::Vectorial,
        _ => DistanceKind::Spearman,
    });
    let mut cfg = MethodConfig::new(a.method, distance).map_err(|e| usage(e.to_string()))?;
    cfg.feature_subset = parse_features(a.features.as_deref(), n_features)?;
    cfg.seed = a.seed;
    cfg.restarts = a.restarts;
    cfg.logistic.ridge = a.ridge;
    cfg.logistic.max_iter = a.max_iter;
    cfg.ds_subsample = a.ds_subsample;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if a.ridge.is_nan() || a.ridge < 0.0 {
        return Err(usage("--ridge must be non-negative"));
    }
    Ok(cfg)
}

fn synth(a: SynthArgs, args: Vec<String>) -> CmdResult {
    let (n_subjects, profile) = match &a.profile {
        Some(p) => {
            let prof = parse_profile(p)?;
            (prof.values().sum(), prof)
        }
        None => (a.subjects, BTreeMap::from([(a.replicates, a.subjects)])),
    };
    let cfg = PanelConfig {
        n_subjects,
        replicate_profile: profile,
        n_features: a.features,
        n_informative: a.informative,
        between_subject_sd: a.between_sd,
        within_subject_sd: a.within_sd,
        sparsity: a.sparsity,
        gender_fraction: a.gender_fraction,
        heterogeneity: a.heterogeneity,
        seed: a.seed,
    };
    let mut run = Run::new(
        "synth",
        args,
        serde_json::to_value(&cfg).map_err(Error::from)?,
        Some(a.seed),
        &a.out,
    );
    let panel = generate_panel(&cfg)?;
    let mut extra = panel_comments(&cfg)?;
    extra.push((
        "informative",
        panel
            .informative
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(","),
    ));
    write_panel(&panel.matrix, &a.out, &mut run, &extra)?;
    println!(
        "{} subjects, {} traces, {} features ({} informative)",
        panel.matrix.subjects().len(),
        panel.matrix.len(),
        panel.matrix.n_features(),
        panel.informative.len()
    );
    Ok(run.finish()?)
}

fn ingest(a: IngestArgs, args: Vec<String>) -> CmdResult {
    let schema = CsvSchema {
        subject: a.subject_col.clone(),
        replicate: a.replicate_col.clone(),
        gender: a.gender_col.clone(),
        age: a.age_col.clone(),
    };
    let config = json!({ "schema": [a.subject_col, a.replicate_col, a.gender_col, a.age_col] });
    let mut run = Run::new("ingest", args, config, None, &a.out);
    let m = ingest_csv(&a.input, &schema)?;
    run.manifest.add_input(&a.input, m.fingerprint());
    write_panel(&m, &a.out, &mut run, &[])?;
    println!(
        "{} subjects, {} traces, {} features, mode {}",
        m.subjects().len(),
        m.len(),
        m.n_features(),
        m.mode()
    );
    Ok(run.finish()?)
}

fn transform(
    input: PathBuf,
    out: PathBuf,
    name: &str,
    args: Vec<String>,
    f: impl FnOnce(&TraceMatrix) -> Result<TraceMatrix, Error>,
) -> CmdResult {
    let mut run = Run::new(name, args, Value::Null, None, &out);
    let m = load_panel(&input, Some(&mut run))?;
    let t = f(&m)?;
    write_panel(&t, &out, &mut run, &[])?;
    Ok(run.finish()?)
}

fn split(a: SplitArgs, args: Vec<String>) -> CmdResult {
    let cfg = SplitConfig {
        calibration_fraction: a.fraction,
        stratify_gender: a.stratify_gender,
        seed: a.seed,
    };
    let mut run = Run::new(
        "split",
        args,
        serde_json::to_value(cfg).map_err(Error::from)?,
        Some(a.seed),
        &a.cal_out,
    );
    let m = load_panel(&a.input, Some(&mut run))?;
    let (cal, test) = split_calibration_test(&m, &cfg)?;
    write_panel(&cal, &a.cal_out, &mut run, &[])?;
    write_panel(&test, &a.test_out, &mut run, &[])?;
    println!(
        "calibration: {} subjects, {} traces; test: {} subjects, {} traces",
        cal.subjects().len(),
        cal.len(),
        test.subjects().len(),
        test.len()
    );
    Ok(run.finish()?)
}

fn pairs(a: PairsArgs, args: Vec<String>) -> CmdResult {
    let config = json!({
        "distance": a.distance.map(|d| d.to_string()),
        "features": a.features,
        "memory_budget": a.memory_budget,
    });
    let mut run = Run::new("pairs", args, config, None, &a.out);
    let m = load_panel(&a.input, Some(&mut run))?;
    let subset = parse_features(a.features.as_deref(), m.n_features())?;
    let p = enumerate_pairs(&m)?;
    match a.distance {
        None => write_csv_output(&a.out, &mut run, |b| p.write_csv(b, None))?,
        Some(kind) if kind.is_scalar() => {
            let recs =
                compute_distances_with_budget(&m, &p, kind, subset.as_deref(), a.memory_budget)?;
            let d: Vec<f64> = recs.iter().map(|r| r.scalar.unwrap_or(f64::NAN)).collect();
            write_csv_output(&a.out, &mut run, |b| p.write_csv(b, Some(&d)))?;
        }
        Some(kind) => {
            let index = a
                .index_out
                .clone()
                .ok_or_else(|| usage("--distance vectorial needs --index-out"))?;
            let recs =
                compute_distances_with_budget(&m, &p, kind, subset.as_deref(), a.memory_budget)?;
            let mut matrix = Vec::new();
            let mut idx = format!("#manifest: {}\n", run.reference()).into_bytes();
            write_vectorial_csv(&p, &recs, &mut matrix, &mut idx)?;
            write_csv_output(&a.out, &mut run, |b| {
                b.extend_from_slice(&matrix);
                Ok(())
            })?;
            write_atomic(&index, &idx)?;
            run.manifest.add_output(&index);
        }
    }
    println!(
        "{} pairs: {} same-source, {} different-source",
        p.len(),
        p.n_ss(),
        p.n_ds()
    );
    Ok(run.finish()?)
}

fn fit(a: FitArgs, args: Vec<String>) -> CmdResult {
    let mut run = Run::new("fit", args, Value::Null, Some(a.method.seed), &a.out);
    let m = load_panel(&a.input, Some(&mut run))?;
    let cfg = method_config(&a.method, m.n_features())?;
    run.manifest.config = serde_json::to_value(&cfg).map_err(Error::from)?;
    let p = enumerate_pairs(&m)?;
    let model = FittedModel::fit(&m, &p, &cfg)?;
    if let FittedModel::Indirect(i) = &model {
        if let Some(d) = &i.diagnostics {
            if d.separation_suspected {
                eprintln!(
                    "warning: classes look separated; coefficients diverge, consider --ridge > 0"
                );
            } else if !i.logistic.converged {
                eprintln!(
                    "warning: logistic fit did not converge in {} iterations",
                    i.logistic.iterations
                );
            }
        }
    }
    let saved = SavedModel {
        model,
        input_mode: m.mode(),
        n_features: m.n_features(),
        manifest: Some(run.reference()),
    };
    save_model(&saved, &a.out)?;
    run.manifest.add_output(&a.out);
    println!(
        "fitted {} ({} distance) on {} pairs ({} same-source)",
        cfg.method,
        cfg.distance,
        p.len(),
        p.n_ss()
    );
    Ok(run.finish()?)
}

fn grid_for(s: Option<&str>, n: usize) -> Result<Vec<usize>, Failure> {
    match s {
        None => Ok(default_grid(n)),
        Some(s) => {
            let g = parse_list(s)?;
            if g.is_empty() || g.iter().any(|&c| c == 0 || c > n) {
                return Err(usage(format!("--grid counts must lie in 1..={n}")));
            }
            Ok(g)
        }
    }
}

fn select(a: SelectArgs, args: Vec<String>) -> CmdResult {
    let mut run = Run::new("select", args, Value::Null, Some(a.method.seed), &a.out);
    let m = load_panel(&a.input, Some(&mut run))?;
    let cfg = method_config(&a.method, m.n_features())?;
    let grid = grid_for(a.grid.as_deref(), m.n_features())?;
    run.manifest.config = json!({ "method": cfg, "grid": grid, "folds": a.folds });
    let res = select_count_cv(&m, &cfg, &grid, a.folds, a.method.seed)?;
    let p = enumerate_pairs(&m)?;
    let ranking = rank_features(&m, &p)?;
    let selected = ranking.top(res.best_count);
    if let Some(path) = &a.ranking_out {
        write_csv_output(path, &mut run, |b| ranking.write_csv(b, &m))?;
    }
    for (c, why) in &res.skipped {
        eprintln!("warning: count {c} skipped: {why}");
    }
    println!("{:>8} {:>10} {:>10}", "count", "cv_auc", "sd");
    for (c, s) in &res.cv_auc_by_count {
        println!("{c:>8} {:>10.4} {:>10.4}", s.mean, s.sd);
    }
    println!("best count: {}", res.best_count);
    let value = json!({
        "schema": distlr::SCHEMA_VERSION,
        "best_count": res.best_count,
        "selected_features": selected,
        "test": ranking.test_kind,
        "cv_auc_by_count": res.cv_auc_by_count,
        "skipped": res.skipped,
        "folds": res.folds,
    });
    write_json_output(&a.out, &mut run, value)?;
    Ok(run.finish()?)
}

fn evaluate(a: EvaluateArgs, args: Vec<String>) -> CmdResult {
    if !(a.prior > 0.0 && a.prior < 1.0) {
        return Err(usage("--prior must lie in (0, 1)"));
    }
    let methods: Vec<MethodKind> = a
        .methods
        .split(',')
        .map(|s| parse_method(s.trim()).map_err(usage))
        .collect::<Result<_, _>>()?;
    let mut run = Run::new("evaluate", args, Value::Null, Some(a.seed), &a.out);
    let cal = load_panel(&a.calibration, Some(&mut run))?;
    let test = load_panel(&a.test, Some(&mut run))?;
    if cal.n_features() != test.n_features() {
        return Err(Error::Dimension {
            expected: cal.n_features(),
            got: test.n_features(),
        }
        .into());
    }
    let fixed = parse_features(a.features.as_deref(), cal.n_features())?;
    let grid = grid_for(a.grid.as_deref(), cal.n_features())?;
    let mut configs = Vec::new();
    let mut rows = Vec::new();
    let cal_pairs = if a.select {
        Some(enumerate_pairs(&cal)?)
    } else {
        None
    };
    for &method in &methods {
        let distance = match method {
            MethodKind::IndirectVectorial => DistanceKind::Vectorial,
            _ => a.distance,
        };
        let mut cfg = MethodConfig::new(method, distance).map_err(|e| usage(e.to_string()))?;
        cfg.seed = a.seed;
        cfg.logistic.ridge = a.ridge;
        cfg.ds_subsample = a.ds_subsample;
        cfg.feature_subset = fixed.clone();
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        let mut cv_auc = None;
        if let Some(cp) = &cal_pairs {
            let res = select_count_cv(&cal, &cfg, &grid, a.folds, a.seed)?;
            let stat = &res.cv_auc_by_count[&res.best_count];
            cv_auc = Some((100.0 * stat.mean, 100.0 * stat.sd));
            cfg.feature_subset = Some(rank_features(&cal, cp)?.top(res.best_count));
        }
        let ev: MethodEvaluation = evaluate_method(&cal, &test, &cfg, a.prior)?;
        if let Some(dir) = &a.roc_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            for (set, scores) in [
                ("calibration", &ev.calibration_scores),
                ("test", &ev.test_scores),
            ] {
                let roc = scores.roc(a.prior)?;
                let path = dir.join(format!("roc_{method}_{set}.csv"));
                write_csv_output(&path, &mut run, |b| roc.write_csv(b))?;
            }
        }
        rows.push(ReportRow {
            method,
            feature_count: cfg.feature_count(cal.n_features()),
            cv_auc,
            calibration: ev.calibration,
            test: ev.test,
        });
        configs.push(cfg);
    }
    run.manifest.config = json!({
        "methods": configs,
        "prior_ss": a.prior,
        "select": a.select,
        "grid": if a.select { Some(&grid) } else { None },
        "folds": a.folds,
    });
    print!("{}", format_table(&rows));
    println!(
        "(AUC, Sn, Sp in %; threshold is the posterior at prior P(ss) = {})",
        a.prior
    );
    let report = evaluation_json(&rows, a.prior, None);
    write_json_output(&a.out, &mut run, report)?;
    Ok(run.finish()?)
}

/// Loads `PATH` (single-trace panel) or `PATH@SUBJECT/REPLICATE`.
fn load_trace(spec: &str) -> Result<(TraceMatrix, usize), Failure> {
    let (path, pick) = match spec.rsplit_once('@') {
        Some((p, sel)) if sel.contains('/') => (p, Some(sel)),
        _ => (spec, None),
    };
    let m = ingest_csv(path, &CsvSchema::default())?;
    let idx = match pick {
        None if m.len() == 1 => 0,
        None => {
            return Err(usage(format!(
                "{path} holds {} traces; pick one with {path}@SUBJECT/REPLICATE",
                m.len()
            )))
        }
        Some(sel) => {
            let (s, r) = sel.split_once('/').expect("checked above");
            m.traces()
                .iter()
                .position(|t| t.subject_id == s && t.replicate_id == r)
                .ok_or_else(|| {
                    Failure::Runtime(Error::Invalid(format!("no trace {sel} in {path}")))
                })?
        }
    };
    Ok((m, idx))
}

/// Brings a raw trace to the mode the model was fitted on.
fn prepare(m: TraceMatrix, want: Mode) -> Result<TraceMatrix, Error> {
    match (m.mode(), want) {
        (a, b) if a == b => Ok(m),
        (Mode::Raw, Mode::NormalizedLog) => normalize_log(&m),
        (Mode::Raw, Mode::Dichotomized) => dichotomize_with_threshold(&m, 0.0),
        (a, b) => Err(Error::Mode(format!("trace is {a}, model expects {b}"))),
    }
}

fn compare(a: CompareArgs) -> CmdResult {
    if !(a.prior > 0.0 && a.prior < 1.0) {
        return Err(usage("--prior must lie in (0, 1)"));
    }
    let saved = load_model(&a.model)?;
    let (ma, ia) = load_trace(&a.trace_a)?;
    let (mb, ib) = load_trace(&a.trace_b)?;
    let ma = prepare(ma, saved.input_mode)?;
    let mb = prepare(mb, saved.input_mode)?;
    for m in [&ma, &mb] {
        if m.n_features() != saved.n_features {
            return Err(Error::Dimension {
                expected: saved.n_features,
                got: m.n_features(),
            }
            .into());
        }
    }
    let (x, y) = (ma.row(ia), mb.row(ib));
    let lr = saved.model.compare(x, y)?;
    let post = saved.model.posterior(x, y, a.prior)?;
    println!("{}", format_lr(&lr));
    println!("posterior P(ss | d)={post:.6} at prior P(ss)={}", a.prior);
    Ok(())
}

fn repeatability_cmd(a: RepeatabilityArgs) -> CmdResult {
    let m = load_panel(&a.input, None)?;
    let rep = repeatability(&m)?;
    println!(
        "RSD (%) median [IQI] over {} features, {} subjects: {rep}",
        m.n_features(),
        rep.n_subjects
    );
    if let Some(path) = &a.per_feature_out {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["feature_index", "feature_name", "rsd_percent"])
            .map_err(Error::from)?;
        for (k, v) in rep.per_feature_rsd.iter().enumerate() {
            w.write_record([
                k.to_string(),
                m.feature_name(k),
                v.map(|x| x.to_string()).unwrap_or_default(),
            ])
            .map_err(Error::from)?;
        }
        let buf = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        write_atomic(path, &buf)?;
    }
    Ok(())
}
