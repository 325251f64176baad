//! Run configuration: flat sectioned `key = value` text.
//!
//! ```text
//! # comment
//! [hamiltonian]
//! expr = p^2/2 + cos(2*pi*q)
//! dim = 1
//!
//! [lagrangian]
//! kind = flow          # graph | flow | file
//! v = 0
//! time = 3
//! steps = 3000
//! ```
//!
//! Every key is `section.key`; unknown keys and duplicates are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn field(name: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: name.to_string(), message: message.into() }
}

const KEYS: &[&str] = &[
    "hamiltonian.expr",
    "hamiltonian.dim",
    "lagrangian.kind",
    "lagrangian.v",
    "lagrangian.time",
    "lagrangian.steps",
    "lagrangian.file",
    "lagrangian.flow",
    "grids.base",
    "grids.xi",
    "grids.velocity",
    "tolerances.e_tol",
    "tolerances.num_tol",
    "tolerances.fp_tol",
    "tolerances.sub_tol",
    "tolerances.horizon",
    "tolerances.tube_factor",
    "tolerances.dt",
    "tolerances.smooth_time",
    "run.seed",
    "run.workers",
    "run.level",
    "run.inits",
    "run.restarts",
    "run.fibers",
    "run.bins",
    "output.dir",
    "output.formats",
];

/// Parses the text into `section.key → value`.
pub fn parse_raw(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = match raw.find('#') {
            Some(c) => &raw[..c],
            None => raw,
        }
        .trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax { line, message: "unterminated section header".into() })?
                .trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(ConfigError::Syntax { line, message: format!("bad section name '{name}'") });
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, message: "expected key = value".into() })?;
        let sec = section
            .as_ref()
            .ok_or_else(|| ConfigError::Syntax { line, message: "key outside any section".into() })?;
        let key = format!("{sec}.{}", k.trim());
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::Syntax { line, message: format!("unknown key {key}") });
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ConfigError::Syntax { line, message: format!("duplicate key {key}") });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Graph,
    Flow,
    File,
}

#[derive(Clone, Debug, Serialize)]
pub struct LagrangianConfig {
    pub kind: Kind,
    /// Generating function of the initial graph.
    pub v: String,
    pub time: f64,
    pub steps: usize,
    /// Hamiltonian of the flow; the run Hamiltonian when absent.
    pub flow: Option<String>,
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Grids {
    pub base: usize,
    pub xi: usize,
    pub velocity: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Tolerances {
    pub e_tol: Option<f64>,
    pub num_tol: f64,
    pub fp_tol: f64,
    pub sub_tol: f64,
    pub horizon: Option<f64>,
    pub tube_factor: f64,
    pub dt: f64,
    pub smooth_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// The critical value.
    Alpha,
    Value(f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub hamiltonian: String,
    pub dim: usize,
    pub lagrangian: LagrangianConfig,
    pub grids: Grids,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub level: Level,
    pub inits: usize,
    pub restarts: usize,
    pub fibers: usize,
    pub bins: usize,
    pub formats: Vec<String>,
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub out: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

struct Reader<'a> {
    raw: &'a BTreeMap<String, String>,
}

impl Reader<'_> {
    fn get(&self, key: &str) -> Option<&str> {
        self.raw.get(key).map(|s| s.as_str())
    }

    fn num<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| field(key, format!("expected a number, got '{s}'"))),
        }
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key).map(|s| s.parse().map_err(|_| field(key, format!("expected a number, got '{s}'")))).transpose()
    }
}

fn resolution(key: &str, v: usize) -> Result<usize, ConfigError> {
    if v < 64 || !v.is_power_of_two() {
        return Err(field(key, format!("must be a power of two ≥ 64, got {v}")));
    }
    Ok(v)
}

fn within(key: &str, v: f64, lo: f64, hi: f64, open_lo: bool) -> Result<f64, ConfigError> {
    let ok = v.is_finite() && (if open_lo { v > lo } else { v >= lo }) && v <= hi;
    if !ok {
        let l = if open_lo { "(" } else { "[" };
        return Err(field(key, format!("must lie in {l}{lo}, {hi}], got {v}")));
    }
    Ok(v)
}

impl RunConfig {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base, ov)
    }

    /// Relative file paths are resolved against `base`.
    pub fn from_text(text: &str, base: &Path, ov: &Overrides) -> Result<Self, ConfigError> {
        let raw = parse_raw(text)?;
        let r = Reader { raw: &raw };
        let hamiltonian =
            r.get("hamiltonian.expr").ok_or_else(|| field("hamiltonian.expr", "required"))?.to_string();
        let dim: usize = r.num("hamiltonian.dim", 1)?;
        if dim != 1 && dim != 2 {
            return Err(field("hamiltonian.dim", format!("must be 1 or 2, got {dim}")));
        }

        let kind = match r.get("lagrangian.kind").unwrap_or("graph") {
            "graph" => Kind::Graph,
            "flow" => Kind::Flow,
            "file" => Kind::File,
            other => return Err(field("lagrangian.kind", format!("expected graph, flow or file, got '{other}'"))),
        };
        let time = within("lagrangian.time", r.num("lagrangian.time", 0.0)?, 0.0, 100.0, false)?;
        let steps: usize = r.num("lagrangian.steps", (1000.0 * time).ceil() as usize)?;
        if kind == Kind::Flow && time > 0.0 && steps == 0 {
            return Err(field("lagrangian.steps", "must be positive for a flow"));
        }
        let file = match (kind, r.get("lagrangian.file")) {
            (Kind::File, None) => return Err(field("lagrangian.file", "required when kind = file")),
            (_, Some(f)) => {
                let p = base.join(f);
                if !p.is_file() {
                    return Err(field("lagrangian.file", format!("{} does not exist", p.display())));
                }
                Some(p)
            }
            (_, None) => None,
        };
        let lagrangian = LagrangianConfig {
            kind,
            v: r.get("lagrangian.v").unwrap_or("0").to_string(),
            time,
            steps,
            flow: r.get("lagrangian.flow").map(str::to_string),
            file,
        };

        let grids = Grids {
            base: resolution("grids.base", r.num("grids.base", if dim == 1 { 512 } else { 64 })?)?,
            xi: resolution("grids.xi", r.num("grids.xi", 64)?)?,
            velocity: resolution("grids.velocity", r.num("grids.velocity", if dim == 1 { 1024 } else { 64 })?)?,
        };
        if grids.xi > 64 {
            return Err(field("grids.xi", format!("lattices are limited to 64 points per axis, got {}", grids.xi)));
        }

        let e_tol = r.opt_f64("tolerances.e_tol")?.map(|v| within("tolerances.e_tol", v, 0.0, 0.1, true)).transpose()?;
        let horizon =
            r.opt_f64("tolerances.horizon")?.map(|v| within("tolerances.horizon", v, 1.0, 1000.0, false)).transpose()?;
        let tolerances = Tolerances {
            e_tol,
            num_tol: within("tolerances.num_tol", r.num("tolerances.num_tol", 1e-3)?, 0.0, 0.1, true)?,
            fp_tol: within("tolerances.fp_tol", r.num("tolerances.fp_tol", 1e-6)?, 0.0, 1e-2, true)?,
            sub_tol: within("tolerances.sub_tol", r.num("tolerances.sub_tol", 1e-2)?, 0.0, 0.1, true)?,
            horizon,
            tube_factor: within("tolerances.tube_factor", r.num("tolerances.tube_factor", 3.0)?, 1.0, 10.0, false)?,
            dt: within("tolerances.dt", r.num("tolerances.dt", 0.1)?, 0.0, 0.5, true)?,
            smooth_time: within("tolerances.smooth_time", r.num("tolerances.smooth_time", 0.05)?, 0.0, 0.5, true)?,
        };

        let level = match r.get("run.level").unwrap_or("alpha") {
            "alpha" => Level::Alpha,
            s => Level::Value(
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| field("run.level", format!("expected 'alpha' or a number, got '{s}'")))?,
            ),
        };
        let workers = match ov.workers {
            Some(w) => w,
            None => r.num("run.workers", 1)?,
        };
        if workers == 0 || workers > 256 {
            return Err(field("run.workers", format!("must lie in [1, 256], got {workers}")));
        }
        let seed = match ov.seed {
            Some(s) => s,
            None => r.num("run.seed", 0)?,
        };
        let inits: usize = r.num("run.inits", 3)?;
        if inits == 0 || inits > 16 {
            return Err(field("run.inits", format!("must lie in [1, 16], got {inits}")));
        }
        let restarts: usize = r.num("run.restarts", 4)?;
        if restarts > 64 {
            return Err(field("run.restarts", format!("must be at most 64, got {restarts}")));
        }
        let fibers: usize = r.num("run.fibers", 16)?;
        if fibers == 0 || fibers > 1024 {
            return Err(field("run.fibers", format!("must lie in [1, 1024], got {fibers}")));
        }
        let bins: usize = r.num("run.bins", 128)?;
        if !(8..=4096).contains(&bins) {
            return Err(field("run.bins", format!("must lie in [8, 4096], got {bins}")));
        }
        let formats: Vec<String> =
            r.get("output.formats").unwrap_or("table").split(',').map(|s| s.trim().to_string()).collect();
        for f in &formats {
            if f != "table" && f != "jsonl" {
                return Err(field("output.formats", format!("expected table and/or jsonl, got '{f}'")));
            }
        }
        let out = match &ov.out {
            Some(o) => o.clone(),
            None => PathBuf::from(r.get("output.dir").unwrap_or("out")),
        };
        Ok(RunConfig {
            hamiltonian,
            dim,
            lagrangian,
            grids,
            tolerances,
            seed,
            level,
            inits,
            restarts,
            fibers,
            bins,
            formats,
            workers,
            out,
        })
    }

    /// Hex SHA-256 of the canonical JSON form (output directory and worker
    /// count excluded).
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_text(text, Path::new("."), &Overrides::default())
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = load("[hamiltonian]\nexpr = p^2/2\n").unwrap();
        assert_eq!(c.dim, 1);
        assert_eq!(c.grids.base, 512);
        assert_eq!(c.lagrangian.kind, Kind::Graph);
        assert_eq!(c.level, Level::Alpha);
    }

    #[test]
    fn bad_resolution_names_the_field() {
        let e = load("[hamiltonian]\nexpr = p^2/2\n[grids]\nbase = 100\n").unwrap_err();
        assert!(e.to_string().starts_with("grids.base:"), "{e}");
    }

    #[test]
    fn syntax_errors_report_the_line() {
        let e = load("[hamiltonian]\nexpr p^2/2\n").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 2, .. }));
        let e = load("[hamiltonian]\nexpr = p^2/2\ncolour = red\n").unwrap_err();
        assert!(e.to_string().contains("hamiltonian.colour"));
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = load("[hamiltonian]\nexpr = p^2/2\n[output]\ndir = a\n").unwrap();
        let b = load("[hamiltonian]\nexpr = p^2/2\n[output]\ndir = b\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let ov = Overrides { seed: Some(9), ..Default::default() };
        let c = RunConfig::from_text("[hamiltonian]\nexpr = p^2/2\n", Path::new("."), &ov).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
