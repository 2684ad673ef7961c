//! The `boxplain` command-line front end.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::adapters::{default_timeout, HttpModel, SubprocessModel, DEFAULT_MAX_BATCH};
use crate::data::{load_csv, parse_number, ColumnKind, GridStrategy, Observation, TabularDataset, Value};
use crate::error::{Error, Result};
use crate::local_explainers::{break_down, ceteris_paribus, normalize_cp, Direction};
use crate::model::{explain, fit_linear, fit_tree, BuiltinModel, Explainer, Predictor};
use crate::performance::{model_performance, LossKind};
use crate::variable_importance::variable_importance;
use crate::variable_response::{accumulated_local_effects, factor_merge, partial_dependence};
use crate::viz::{export_json_many, render, Explanation, RenderOptions};

pub const DEFAULT_TREE_DEPTH: usize = 6;
pub const DEFAULT_TREE_MIN_LEAF: usize = 5;
pub const DEFAULT_REPEATS: usize = 10;

#[derive(Parser, Debug)]
#[command(name = "boxplain", version, about = "Model-agnostic explanations for tabular regression models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Validation data (CSV with a header row).
    #[arg(long)]
    data: PathBuf,
    /// Name of the numeric target column.
    #[arg(long)]
    target: String,
    /// Model spec: builtin:ols, builtin:tree[:maxdepth=D,minleaf=M], cmd:<shell command>,
    /// http:<url> or file:<saved model JSON>. Repeat to overlay models.
    #[arg(long = "model", required = true)]
    model: Vec<String>,
    /// Label for the preceding --model.
    #[arg(long = "label")]
    label: Vec<String>,
    /// Separate training CSV for built-in models.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Columns to read as categorical even if they look numeric.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: logical CPU count).
    #[arg(long)]
    jobs: Option<usize>,
    /// Adapter timeout; overrides BOXPLAIN_ADAPTER_TIMEOUT_MS.
    #[arg(long = "timeout-ms")]
    timeout_ms: Option<u64>,
    /// Rows per HTTP request.
    #[arg(long = "batch-size", default_value_t = DEFAULT_MAX_BATCH)]
    batch_size: usize,
    /// Extra HTTP header, "Name: value". Repeatable.
    #[arg(long = "header")]
    header: Vec<String>,
    #[arg(long, default_value_t = 800)]
    width: u32,
    #[arg(long, default_value_t = 500)]
    height: u32,
    #[arg(long)]
    title: Option<String>,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct ObservationArgs {
    /// One-row CSV in the dataset's format (the target column may be present).
    #[arg(long)]
    observation: Option<PathBuf>,
    /// 0-based row of the validation data.
    #[arg(long = "row-index")]
    row_index: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Residual distributions (reverse ECDF and boxplots).
    Perf {
        #[command(flatten)]
        common: Common,
        /// Logarithmic survival axis.
        #[arg(long = "log-y")]
        log_y: bool,
    },
    /// Partial dependence of a numeric variable.
    Pdp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variable: String,
        /// quantile:K, uniform:K or unique.
        #[arg(long, default_value = "quantile:21")]
        grid: GridStrategy,
    },
    /// Accumulated local effects of a numeric variable.
    Ale {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variable: String,
        #[arg(long, default_value_t = crate::variable_response::DEFAULT_ALE_BINS)]
        bins: usize,
    },
    /// Merging path of a categorical variable's levels.
    Merge {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variable: String,
        /// Number of groups to report.
        #[arg(long)]
        cut: Option<usize>,
    },
    /// Permutation variable importance.
    Importance {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_REPEATS)]
        repeats: usize,
        #[arg(long, default_value = "rmse")]
        loss: LossKind,
        #[arg(long, value_delimiter = ',')]
        variables: Vec<String>,
    },
    /// Ceteris paribus profiles for one observation.
    Cp {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        observation: ObservationArgs,
        #[arg(long, value_delimiter = ',')]
        variables: Vec<String>,
        #[arg(long, default_value = "quantile:21")]
        grid: GridStrategy,
        /// Draw all numeric profiles on one quantile-scaled axis.
        #[arg(long)]
        normalized: bool,
    },
    /// Sequential additive attribution for one observation.
    Breakdown {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        observation: ObservationArgs,
        #[arg(long, default_value = "up")]
        direction: Direction,
    },
    /// Fit a built-in model and save it as JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, value_delimiter = ',')]
        categorical: Vec<String>,
        /// builtin:ols or builtin:tree[:maxdepth=D,minleaf=M].
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A parsed `--model` argument.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Ols,
    Tree { max_depth: usize, min_leaf: usize },
    Command(String),
    Http(String),
    File(PathBuf),
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (scheme, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::usage(format!("model spec '{s}' lacks a scheme (builtin:, cmd:, http:, file:)")))?;
        match scheme {
            "builtin" => {
                let (name, params) = match rest.split_once(':') {
                    Some((n, p)) => (n, Some(p)),
                    None => (rest, None),
                };
                match (name, params) {
                    ("ols", None) => Ok(ModelSpec::Ols),
                    ("ols", Some(_)) => Err(Error::usage("builtin:ols takes no parameters")),
                    ("tree", params) => {
                        let mut max_depth = DEFAULT_TREE_DEPTH;
                        let mut min_leaf = DEFAULT_TREE_MIN_LEAF;
                        for kv in params.into_iter().flat_map(|p| p.split(',')) {
                            let (k, v) = kv
                                .split_once('=')
                                .ok_or_else(|| Error::usage(format!("tree parameter '{kv}' is not key=value")))?;
                            let v: usize = v
                                .trim()
                                .parse()
                                .map_err(|_| Error::usage(format!("tree parameter '{k}' needs a positive integer, got '{v}'")))?;
                            match k.trim() {
                                "maxdepth" => max_depth = v,
                                "minleaf" => min_leaf = v,
                                other => return Err(Error::usage(format!("unknown tree parameter '{other}'"))),
                            }
                        }
                        Ok(ModelSpec::Tree { max_depth, min_leaf })
                    }
                    (other, _) => Err(Error::usage(format!("unknown builtin model '{other}'"))),
                }
            }
            "cmd" if !rest.trim().is_empty() => Ok(ModelSpec::Command(rest.to_string())),
            "http" if !rest.is_empty() => Ok(ModelSpec::Http(rest.to_string())),
            "file" if !rest.is_empty() => Ok(ModelSpec::File(PathBuf::from(rest))),
            "cmd" | "http" | "file" => Err(Error::usage(format!("model spec '{s}' is empty after the scheme"))),
            other => Err(Error::usage(format!("unknown model scheme '{other}'"))),
        }
    }
}

/// Where a single observation comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationSource {
    File(PathBuf),
    RowIndex(usize),
}

/// Reads one observation matching the feature schema of `features`.
pub fn parse_observation(source: &ObservationSource, features: &TabularDataset, target: &str) -> Result<Observation> {
    match source {
        ObservationSource::RowIndex(i) => {
            let n = features.n_rows();
            if *i >= n {
                return Err(Error::usage(format!("index {i} out of range 0..{}", n - 1)));
            }
            Ok(features.row(*i))
        }
        ObservationSource::File(path) => {
            let file = open(path)?;
            observation_from_csv(file, features, target)
                .map_err(|e| e.context(format!("observation file '{}'", path.display())))
        }
    }
}

fn observation_from_csv<R: std::io::Read>(source: R, features: &TabularDataset, target: &str) -> Result<Observation> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(format!("cannot read CSV header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let records = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::data(e.to_string()))?;
    if records.len() != 1 {
        return Err(Error::usage(format!("expected exactly one data row, found {}", records.len())));
    }
    let record = &records[0];
    if record.len() != header.len() {
        return Err(Error::data(format!("row 1 has {} fields, expected {}", record.len(), header.len())));
    }
    let mut values = std::collections::BTreeMap::new();
    for (name, cell) in header.iter().zip(record.iter()) {
        if name == target {
            continue;
        }
        let value = match features.column(name).map(|c| c.kind()) {
            Some(ColumnKind::Numeric) => Value::Num(parse_number(cell).ok_or_else(|| {
                Error::usage(format!("value '{cell}' for numeric column '{name}' is not a number"))
            })?),
            Some(ColumnKind::Categorical) => Value::Cat(cell.to_string()),
            None => return Err(Error::usage(format!("observation has unexpected column '{name}'"))),
        };
        values.insert(name.clone(), value);
    }
    let obs = Observation::new(values);
    obs.validate(features)?;
    Ok(obs)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(format!("cannot open '{}': {e}", path.display())))
}

fn load_table(path: &Path, target: &str, categorical: &[String]) -> Result<(TabularDataset, Vec<f64>)> {
    let hints: HashMap<String, ColumnKind> = categorical
        .iter()
        .map(|c| (c.clone(), ColumnKind::Categorical))
        .collect();
    load_csv(open(path)?, target, &hints)
        .and_then(|d| d.split_target())
        .map_err(|e| e.context(format!("'{}'", path.display())))
}

fn fit_builtin(spec: &ModelSpec, x: &TabularDataset, y: &[f64]) -> Result<BuiltinModel> {
    match spec {
        ModelSpec::Ols => Ok(BuiltinModel::Ols(fit_linear(x, y)?)),
        ModelSpec::Tree { max_depth, min_leaf } => Ok(BuiltinModel::Tree(fit_tree(x, y, *max_depth, *min_leaf)?)),
        _ => Err(Error::usage("only builtin:ols and builtin:tree can be fitted")),
    }
}

/// Pairs every `--label` with the closest preceding `--model`.
fn labelled_models(matches: &ArgMatches, common: &Common) -> Result<Vec<(ModelSpec, String)>> {
    let model_idx: Vec<usize> = matches.indices_of("model").map(|i| i.collect()).unwrap_or_default();
    let label_idx: Vec<usize> = matches.indices_of("label").map(|i| i.collect()).unwrap_or_default();
    let mut labels: Vec<Option<String>> = vec![None; common.model.len()];
    for (li, pos) in label_idx.iter().enumerate() {
        let owner = model_idx
            .iter()
            .rposition(|m| m < pos)
            .ok_or_else(|| Error::usage(format!("--label '{}' must follow a --model", common.label[li])))?;
        if labels[owner].is_some() {
            return Err(Error::usage(format!("model '{}' has more than one --label", common.model[owner])));
        }
        labels[owner] = Some(common.label[li].clone());
    }
    let out: Vec<(ModelSpec, String)> = common
        .model
        .iter()
        .zip(labels)
        .map(|(spec, label)| Ok((spec.parse()?, label.unwrap_or_else(|| spec.clone()))))
        .collect::<Result<_>>()?;
    let mut seen = std::collections::HashSet::new();
    for (_, label) in &out {
        if !seen.insert(label.as_str()) {
            return Err(Error::usage(format!("duplicate model label '{label}'")));
        }
    }
    Ok(out)
}

fn build_explainers(matches: &ArgMatches, common: &Common) -> Result<Vec<Explainer>> {
    let models = labelled_models(matches, common)?;
    let (x, y) = load_table(&common.data, &common.target, &common.categorical)?;
    let train = match &common.train {
        Some(path) => {
            let (tx, ty) = load_table(path, &common.target, &common.categorical)?;
            x.check_schema(&tx)
                .map_err(|e| e.context("training data does not match validation data"))?;
            Some((tx, ty))
        }
        None => None,
    };
    let timeout = common.timeout_ms.map(Duration::from_millis).unwrap_or_else(default_timeout);
    let mut explainers = Vec::with_capacity(models.len());
    for (spec, label) in models {
        let predictor: Arc<dyn Predictor> = match &spec {
            ModelSpec::Ols | ModelSpec::Tree { .. } => {
                let (tx, ty) = train.as_ref().map_or((&x, &y[..]), |(a, b)| (a, &b[..]));
                Arc::new(fit_builtin(&spec, tx, ty).map_err(|e| e.context(format!("model '{label}'")))?)
            }
            ModelSpec::File(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Io(format!("cannot read '{}': {e}", path.display())))?;
                Arc::new(BuiltinModel::from_json(&text).map_err(|e| e.context(format!("'{}'", path.display())))?)
            }
            ModelSpec::Command(cmd) => Arc::new(SubprocessModel::shell(cmd)?.with_timeout(timeout)),
            ModelSpec::Http(url) => {
                let mut model = HttpModel::new(url.clone())?
                    .with_timeout(timeout)
                    .with_max_batch(common.batch_size)?;
                for h in &common.header {
                    let (name, value) = h
                        .split_once(':')
                        .ok_or_else(|| Error::usage(format!("header '{h}' is not 'Name: value'")))?;
                    model = model.with_header(name.trim(), value.trim());
                }
                Arc::new(model)
            }
        };
        explainers.push(explain(predictor, x.clone(), y.clone(), label)?);
    }
    Ok(explainers)
}

fn observation_source(args: &ObservationArgs) -> ObservationSource {
    match (&args.observation, args.row_index) {
        (Some(path), _) => ObservationSource::File(path.clone()),
        (None, Some(i)) => ObservationSource::RowIndex(i),
        (None, None) => unreachable!("clap requires one observation source"),
    }
}

fn optional(variables: &[String]) -> Option<&[String]> {
    (!variables.is_empty()).then_some(variables)
}

/// Writes every output to a temporary file beside its destination first and
/// renames them into place only once all are ready.
fn write_outputs(outputs: &[(&Path, &[u8])]) -> Result<()> {
    let io = |path: &Path, e: &dyn std::fmt::Display| Error::Io(format!("cannot write '{}': {e}", path.display()));
    let mut staged = Vec::with_capacity(outputs.len());
    for (path, bytes) in outputs {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io(path, &e))?;
        tmp.write_all(bytes).map_err(|e| io(path, &e))?;
        tmp.as_file().sync_all().map_err(|e| io(path, &e))?;
        staged.push((tmp, *path));
    }
    let mut done: Vec<&Path> = Vec::new();
    for (tmp, path) in staged {
        if let Err(e) = tmp.persist(path) {
            for p in done {
                let _ = std::fs::remove_file(p);
            }
            return Err(io(path, &e.error));
        }
        done.push(path);
    }
    Ok(())
}

fn emit(common: &Common, results: &[Explanation], log_y: bool) -> Result<Option<String>> {
    let json = export_json_many(results);
    let svg = match &common.svg {
        Some(_) => Some(
            render(
                results,
                &RenderOptions {
                    width: common.width,
                    height: common.height,
                    title: common.title.clone(),
                    log_y,
                },
            )?
            .svg,
        ),
        None => None,
    };
    let mut outputs: Vec<(&Path, &[u8])> = Vec::new();
    if let Some(path) = &common.json {
        outputs.push((path, json.as_bytes()));
    }
    if let (Some(path), Some(svg)) = (&common.svg, &svg) {
        outputs.push((path, svg.as_bytes()));
    }
    if outputs.is_empty() {
        return Ok(Some(json));
    }
    write_outputs(&outputs)?;
    Ok(None)
}

fn each<T>(explainers: &[Explainer], f: impl Fn(&Explainer) -> Result<T>) -> Result<Vec<T>> {
    explainers
        .iter()
        .map(|e| f(e).map_err(|err| err.context(format!("model '{}'", e.label()))))
        .collect()
}

fn dispatch(command: &Command, matches: &ArgMatches) -> Result<Option<String>> {
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    let (common, log_y) = match command {
        Command::Fit {
            data,
            target,
            categorical,
            model,
            out,
        } => {
            let spec: ModelSpec = model.parse()?;
            let (x, y) = load_table(data, target, categorical)?;
            let fitted = fit_builtin(&spec, &x, &y)?;
            write_outputs(&[(out, fitted.to_json().as_bytes())])?;
            return Ok(None);
        }
        Command::Perf { common, log_y } => (common, *log_y),
        Command::Pdp { common, .. }
        | Command::Ale { common, .. }
        | Command::Merge { common, .. }
        | Command::Importance { common, .. }
        | Command::Cp { common, .. }
        | Command::Breakdown { common, .. } => (common, false),
    };
    let explainers = build_explainers(sub, common)?;
    let results: Vec<Explanation> = match command {
        Command::Perf { .. } => each(&explainers, |e| model_performance(e).map(Explanation::Performance))?,
        Command::Pdp { variable, grid, .. } => {
            each(&explainers, |e| partial_dependence(e, variable, *grid).map(Explanation::Profile))?
        }
        Command::Ale { variable, bins, .. } => {
            each(&explainers, |e| accumulated_local_effects(e, variable, *bins).map(Explanation::Profile))?
        }
        Command::Merge { variable, cut, .. } => {
            each(&explainers, |e| factor_merge(e, variable, *cut).map(Explanation::FactorMerge))?
        }
        Command::Importance {
            repeats,
            loss,
            variables,
            ..
        } => each(&explainers, |e| {
            variable_importance(e, *loss, *repeats, common.seed, optional(variables)).map(Explanation::Importance)
        })?,
        Command::Cp {
            observation,
            variables,
            grid,
            normalized,
            ..
        } => {
            let obs = parse_observation(&observation_source(observation), explainers[0].data(), &common.target)?;
            each(&explainers, |e| {
                let profile = ceteris_paribus(e, &obs, optional(variables), *grid)?;
                let profile = if *normalized { normalize_cp(&profile, e)? } else { profile };
                Ok(Explanation::Cp(profile))
            })?
        }
        Command::Breakdown {
            observation, direction, ..
        } => {
            let obs = parse_observation(&observation_source(observation), explainers[0].data(), &common.target)?;
            each(&explainers, |e| break_down(e, &obs, *direction).map(Explanation::Breakdown))?
        }
        Command::Fit { .. } => unreachable!("handled above"),
    };
    emit(common, &results, log_y)
}

fn jobs(command: &Command) -> Option<usize> {
    match command {
        Command::Perf { common, .. }
        | Command::Pdp { common, .. }
        | Command::Ale { common, .. }
        | Command::Merge { common, .. }
        | Command::Importance { common, .. }
        | Command::Cp { common, .. }
        | Command::Breakdown { common, .. } => common.jobs,
        Command::Fit { .. } => None,
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => return clap_failure(e),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return clap_failure(e),
    };
    let outcome = match jobs(&cli.command) {
        Some(0) => Err(Error::usage("--jobs must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command, &matches)),
            Err(e) => Err(Error::Io(format!("cannot start worker threads: {e}"))),
        },
        None => dispatch(&cli.command, &matches),
    };
    match outcome {
        Ok(Some(stdout)) => {
            let mut out = std::io::stdout().lock();
            match out.write_all(stdout.as_bytes()).and_then(|_| out.flush()) {
                Ok(()) => 0,
                Err(e) => report(&Error::Io(format!("cannot write to standard output: {e}"))),
            }
        }
        Ok(None) => 0,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    eprintln!("ERROR[{}]: {e}", e.exit_code());
    e.exit_code()
}

fn clap_failure(e: clap::Error) -> i32 {
    use clap::error::ErrorKind;
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        print!("{e}");
        return 0;
    }
    let text = e.render().to_string();
    let text = text.strip_prefix("error: ").unwrap_or(&text);
    eprint!("ERROR[1]: {text}");
    if !text.ends_with('\n') {
        eprintln!();
    }
    1
}
