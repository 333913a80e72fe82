//! Library side of the `optmodel` command: run configuration, the
//! parse → desmooth → compile → solve pipeline, and corpus export.

use optmodel_core::auglag::{solve, AuglagOptions, SolveStatus};
use optmodel_core::corpus::{generate, GENERATORS};
use optmodel_core::data::{load_data, write_csv};
use optmodel_core::reformulate::{build, CompileOptions, CompiledProblem};
use optmodel_core::report::Report;
use optmodel_core::{parse_model, DataError, Env, EvalError, ModelError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Environment variable naming a default config file for `solve`.
pub const CONFIG_ENV: &str = "OPTMODEL_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Already rendered with file position and source excerpt.
    #[error("{0}")]
    Model(String),

    #[error("data for `{name}` ({path}): {source}")]
    Data {
        name: String,
        path: String,
        source: DataError,
    },

    #[error("{0}")]
    Eval(#[from] EvalError),

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),
}

/// Everything needed for one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: PathBuf,
    pub data: BTreeMap<String, PathBuf>,
    pub init: BTreeMap<String, PathBuf>,
    pub dims: BTreeMap<String, (usize, usize)>,
    pub solver: AuglagOptions,
    pub out: Option<PathBuf>,
    pub verbose: bool,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(model: impl Into<PathBuf>) -> Self {
        RunConfig {
            model: model.into(),
            data: BTreeMap::new(),
            init: BTreeMap::new(),
            dims: BTreeMap::new(),
            solver: AuglagOptions::default(),
            out: None,
            verbose: false,
            seed: 0,
        }
    }

    /// Configuration described entirely by a TOML file.
    pub fn from_file(path: &Path) -> Result<RunConfig, CliError> {
        let file = ConfigFile::load(path)?;
        let model = file.model.clone().ok_or_else(|| CliError::Config {
            path: path.display().to_string(),
            message: "no `model` entry".into(),
        })?;
        let mut cfg = RunConfig::new(model);
        file.apply(&mut cfg)?;
        let s = &mut cfg.solver;
        s.tol = file.tol.unwrap_or(s.tol);
        s.feas_tol = file.feas_tol.unwrap_or(s.feas_tol);
        s.comp_tol = file.comp_tol.unwrap_or(s.comp_tol);
        s.max_outer = file.max_outer.unwrap_or(s.max_outer);
        s.max_inner = file.max_inner.unwrap_or(s.max_inner);
        s.history = file.history.unwrap_or(s.history);
        cfg.seed = file.seed.unwrap_or(0);
        cfg.out = file.out;
        Ok(cfg)
    }
}

/// On-disk form of a run configuration (TOML). Relative paths are resolved
/// against the file's directory; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub data: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub init: BTreeMap<String, PathBuf>,
    /// `"RxC"` strings.
    #[serde(default)]
    pub dims: BTreeMap<String, String>,
    pub tol: Option<f64>,
    pub feas_tol: Option<f64>,
    pub comp_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    pub history: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: ConfigFile = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.model.iter_mut().for_each(fix);
        cfg.out.iter_mut().for_each(fix);
        cfg.data.values_mut().for_each(fix);
        cfg.init.values_mut().for_each(fix);
        Ok(cfg)
    }

    /// Layer `self` under explicit settings already in `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        for (k, v) in &self.data {
            cfg.data.entry(k.clone()).or_insert_with(|| v.clone());
        }
        for (k, v) in &self.init {
            cfg.init.entry(k.clone()).or_insert_with(|| v.clone());
        }
        for (k, v) in &self.dims {
            let d = parse_dims(v).map_err(CliError::Usage)?;
            cfg.dims.entry(k.clone()).or_insert(d);
        }
        Ok(())
    }
}

/// `"RxC"` → `(R, C)`.
pub fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, found `{s}`"))?;
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad dimension `{t}` in `{s}`"));
    Ok((num(r)?, num(c)?))
}

/// `"NAME=VALUE"` → `(NAME, VALUE)`.
pub fn parse_binding(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() && !v.is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(format!("expected NAME=VALUE, found `{s}`")),
    }
}

/// Format a model error as `file:line:col: message` followed by the source
/// line and a caret marker.
pub fn render_model_error(path: &Path, source: &str, err: &ModelError) -> String {
    let Some(span) = err.span() else {
        return format!("{}: {err}", path.display());
    };
    let mut out = format!("{}:{err}", path.display());
    if let Some(line) = source.lines().nth(span.line.saturating_sub(1) as usize) {
        let col = span.col.saturating_sub(1) as usize;
        let width = (span.end - span.start).clamp(1, line.len().saturating_sub(col).max(1));
        out.push_str(&format!("\n  | {line}\n  | {}{}", " ".repeat(col), "^".repeat(width)));
    }
    out
}

fn load_bindings(files: &BTreeMap<String, PathBuf>) -> Result<Env, CliError> {
    let mut env = Env::new();
    for (name, path) in files {
        let v = load_data(path).map_err(|source| CliError::Data {
            name: name.clone(),
            path: path.display().to_string(),
            source,
        })?;
        env.set(name.clone(), v);
    }
    Ok(env)
}

/// Parse, bind and compile the model of `cfg`.
pub fn load_problem(cfg: &RunConfig) -> Result<CompiledProblem, CliError> {
    let text = fs::read_to_string(&cfg.model).map_err(|source| CliError::Io {
        path: cfg.model.display().to_string(),
        source,
    })?;
    let model_err = |e: ModelError| CliError::Model(render_model_error(&cfg.model, &text, &e));
    let spec = parse_model(&text).map_err(model_err)?;
    let data = load_bindings(&cfg.data)?;
    let opts = CompileOptions {
        dims: cfg.dims.clone(),
        init: load_bindings(&cfg.init)?,
    };
    build(&spec, &data, &opts).map_err(model_err)
}

/// Run the full pipeline. Returns the report and the process exit code
/// (0 optimal, 2 not certified optimal).
pub fn run(cfg: &RunConfig) -> Result<(Report, i32), CliError> {
    let start = Instant::now();
    let problem = load_problem(cfg)?;
    let result = solve(&problem, &cfg.solver)?;
    if cfg.verbose {
        for (k, r) in result.history.iter().enumerate() {
            eprintln!(
                "outer {:>3}  violation {:.3e}  rho {:.1e}  inner {:>5}  {:?}",
                k + 1,
                r.violation,
                r.rho,
                r.inner_iterations,
                r.inner_status
            );
        }
    }
    let report = Report::new(&problem, &result, &cfg.solver, start.elapsed().as_secs_f64())?;
    if let Some(out) = &cfg.out {
        fs::write(out, report.to_json()).map_err(|source| CliError::Io {
            path: out.display().to_string(),
            source,
        })?;
    }
    let code = if report.status == SolveStatus::Optimal { 0 } else { 2 };
    Ok((report, code))
}

/// Write a generated corpus instance to `dir`: the model, one CSV per
/// parameter, initial values, ground truth and a `run.toml` that `solve
/// --config` accepts. Returns the path of `run.toml`.
pub fn export_instance(name: &str, seed: u64, dir: &Path) -> Result<PathBuf, CliError> {
    let inst = generate(name, seed).ok_or_else(|| {
        CliError::Usage(format!("unknown generator `{name}` (known: {})", GENERATORS.join(", ")))
    })?;
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| CliError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let csv = |file: String, v: &optmodel_core::Value| -> Result<PathBuf, CliError> {
        write_csv(dir.join(&file), v).map_err(|source| CliError::Data {
            name: file.clone(),
            path: dir.join(&file).display().to_string(),
            source,
        })?;
        Ok(PathBuf::from(file))
    };
    let model_file = PathBuf::from(format!("{}.model", inst.model.name));
    fs::write(dir.join(&model_file), inst.model.text).map_err(io(&dir.join(&model_file)))?;
    let mut cfg = ConfigFile {
        model: Some(model_file),
        seed: Some(seed),
        ..Default::default()
    };
    for (k, v) in inst.data.iter() {
        cfg.data.insert(k.to_string(), csv(format!("{k}.csv"), v)?);
    }
    for (k, v) in inst.init.iter() {
        cfg.init.insert(k.to_string(), csv(format!("init_{k}.csv"), v)?);
    }
    for (k, v) in inst.truth.iter() {
        csv(format!("truth_{k}.csv"), v)?;
    }
    for (k, (r, c)) in &inst.dims {
        cfg.dims.insert(k.clone(), format!("{r}x{c}"));
    }
    let run = dir.join("run.toml");
    let text = toml::to_string(&cfg).expect("config serializes");
    fs::write(&run, text).map_err(io(&run))?;
    Ok(run)
}
