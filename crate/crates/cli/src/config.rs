//! Experiment files: `key = value` lines grouped under `[section]` headers.
//!
//! ```text
//! [run]        name, seed
//! [manifold]   chart (torus | disk), embed, major_radius, minor_radius
//! [field]      basis, theta
//! [guiding]    truncation, samples, sample_seed, quadrature_fallback
//! [bridge]     start, target, horizon, mesh, time_change, paths
//! [chain]      lambda, iterations, thinning
//! [gibbs]      observations, prior_precision, prior_mean, lambda, iterations, burn_in
//! [forward]    theta, count, mesh, seed
//! ```
//!
//! `target = forward` conditions on the endpoint of a forward run of the
//! `[forward]` drift (the `[field]` drift by default).
//!
//! `#` and `;` start comments. Lists are comma separated. A real may be
//! written with a `pi` suffix (`pi`, `-pi`, `0.5pi`). Every problem in a file
//! is reported at once, each with its line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use guided_bridges::geometry::TorusEmbedding;
use guided_bridges::{Chart, FieldBasis, Matrix, TimeChange, Vector};

pub const DEFAULT_TRUNCATION: usize = 10;
pub const DEFAULT_SAMPLES: usize = 4096;
pub const DEFAULT_MESH: f64 = 1e-3;
pub const DEFAULT_THINNING: usize = 50;
pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_FORWARD_MESH: f64 = 1e-4;

const KEYS: &[(&str, &[&str])] = &[
    ("run", &["name", "seed"]),
    (
        "manifold",
        &["chart", "embed", "major_radius", "minor_radius"],
    ),
    ("field", &["basis", "theta"]),
    (
        "guiding",
        &[
            "truncation",
            "samples",
            "sample_seed",
            "quadrature_fallback",
        ],
    ),
    (
        "bridge",
        &["start", "target", "horizon", "mesh", "time_change", "paths"],
    ),
    ("chain", &["lambda", "iterations", "thinning"]),
    (
        "gibbs",
        &[
            "observations",
            "prior_precision",
            "prior_mean",
            "lambda",
            "iterations",
            "burn_in",
        ],
    ),
    ("forward", &["theta", "count", "mesh", "seed"]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// All problems found in one file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Conditioning point of a bridge.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Point(Vector),
    /// Endpoint of an unconditioned forward run from `start`.
    Forward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSettings {
    pub lambda: Option<f64>,
    pub iterations: usize,
    pub thinning: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsSettings {
    /// Observation file and the line that named it.
    pub observations: Option<(PathBuf, usize)>,
    pub prior_precision: Matrix,
    pub prior_mean: Vector,
    pub lambda: f64,
    pub iterations: usize,
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSettings {
    /// Drift used to generate data; the `[field]` theta when absent.
    pub theta: Option<Vec<f64>>,
    pub count: usize,
    pub mesh: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub chart: Chart,
    pub embedding: Option<TorusEmbedding>,
    pub basis: Vec<FieldBasis>,
    pub theta: Vec<f64>,
    /// Whether `theta` was written in the file (it then also starts the Gibbs
    /// sampler).
    pub theta_given: bool,
    pub truncation: usize,
    pub samples: usize,
    pub sample_seed: Option<u64>,
    pub quadrature_fallback: bool,
    pub start: Option<Vector>,
    pub target: Option<Target>,
    pub horizon: f64,
    pub mesh: f64,
    pub time_change: TimeChange,
    pub paths: usize,
    pub chain: ChainSettings,
    pub gibbs: Option<GibbsSettings>,
    pub forward: Option<ForwardSettings>,
}

impl ExperimentConfig {
    /// Seed of the frozen Monte Carlo draws of the hyperbolic kernel.
    pub fn sample_seed(&self) -> u64 {
        self.sample_seed.unwrap_or(self.seed)
    }

    /// Seed of the data-generating forward run.
    pub fn forward_seed(&self) -> u64 {
        self.forward
            .as_ref()
            .and_then(|f| f.seed)
            .unwrap_or(self.seed.wrapping_add(0x9e37_79b9))
    }

    /// Makes relative observation paths relative to `base` and checks that
    /// they exist.
    pub fn resolve_files(&mut self, base: &Path) -> Result<(), ConfigErrors> {
        if let Some(GibbsSettings {
            observations: Some((path, line)),
            ..
        }) = &mut self.gibbs
        {
            if path.is_relative() {
                *path = base.join(&*path);
            }
            if !path.is_file() {
                return Err(ConfigErrors(vec![ConfigError {
                    line: Some(*line),
                    message: format!("[gibbs] observations: no such file {}", path.display()),
                }]));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

struct Fields {
    entries: BTreeMap<(String, String), Entry>,
    sections: BTreeMap<String, usize>,
    errors: Vec<ConfigError>,
}

impl Fields {
    fn err(&mut self, line: Option<usize>, message: impl Into<String>) {
        self.errors.push(ConfigError {
            line,
            message: message.into(),
        });
    }

    fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn raw(&self, section: &str, key: &str) -> Option<Entry> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .cloned()
    }

    fn get<T>(
        &mut self,
        section: &str,
        key: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Option<T> {
        let e = self.raw(section, key)?;
        match parse(&e.value) {
            Ok(v) => Some(v),
            Err(msg) => {
                self.err(
                    Some(e.line),
                    format!("[{section}] {key} = {}: {msg}", e.value),
                );
                None
            }
        }
    }

    fn required<T>(
        &mut self,
        section: &str,
        key: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Option<T> {
        if self.raw(section, key).is_none() {
            let line = self.sections.get(section).copied();
            self.err(line, format!("missing [{section}] {key}"));
            return None;
        }
        self.get(section, key, parse)
    }

    fn line(&self, section: &str, key: &str) -> Option<usize> {
        self.raw(section, key)
            .map(|e| e.line)
            .or_else(|| self.sections.get(section).copied())
    }
}

fn strip_comment(line: &str) -> &str {
    let cut = line.find(['#', ';']).unwrap_or(line.len());
    line[..cut].trim()
}

fn lex(text: &str) -> Fields {
    let mut f = Fields {
        entries: BTreeMap::new(),
        sections: BTreeMap::new(),
        errors: Vec::new(),
    };
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = strip_comment(raw);
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                f.err(Some(line), format!("malformed section header {body:?}"));
                section = None;
                continue;
            };
            let name = name.trim().to_string();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                f.err(Some(line), format!("unknown section [{name}]"));
                section = None;
                continue;
            }
            if let Some(first) = f.sections.get(&name) {
                let first = *first;
                f.err(
                    Some(line),
                    format!("duplicate section [{name}] (lines {first} and {line})"),
                );
            } else {
                f.sections.insert(name.clone(), line);
            }
            section = Some(name);
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            f.err(Some(line), format!("expected `key = value`, got {body:?}"));
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        let Some(sec) = section.clone() else {
            if f.errors.last().is_none_or(|e| e.line != Some(line)) {
                f.err(Some(line), format!("key {key:?} outside a known section"));
            }
            continue;
        };
        let known = KEYS
            .iter()
            .find(|(s, _)| *s == sec)
            .is_some_and(|(_, ks)| ks.contains(&key.as_str()));
        if !known {
            f.err(Some(line), format!("unknown key {key:?} in [{sec}]"));
            continue;
        }
        if value.is_empty() {
            f.err(Some(line), format!("[{sec}] {key} has no value"));
            continue;
        }
        match f.entries.get(&(sec.clone(), key.clone())) {
            Some(prev) => {
                let first = prev.line;
                f.err(
                    Some(line),
                    format!("duplicate key [{sec}] {key} (lines {first} and {line})"),
                );
            }
            None => {
                f.entries.insert((sec, key), Entry { line, value });
            }
        }
    }
    f
}

fn real(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = if let Some(coef) = s.strip_suffix("pi") {
        let c = match coef.trim() {
            "" | "+" => 1.0,
            "-" => -1.0,
            c => c.parse::<f64>().map_err(|_| "not a number".to_string())?,
        };
        c * std::f64::consts::PI
    } else {
        s.parse::<f64>().map_err(|_| "not a number".to_string())?
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err("must be finite".into())
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v = real(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("must be positive".into())
    }
}

fn count(s: &str) -> Result<usize, String> {
    let v: usize = s
        .trim()
        .parse()
        .map_err(|_| "not a non-negative integer".to_string())?;
    if v == 0 {
        Err("must be at least 1".into())
    } else {
        Ok(v)
    }
}

fn natural(s: &str) -> Result<usize, String> {
    s.trim()
        .parse()
        .map_err(|_| "not a non-negative integer".to_string())
}

fn seed(s: &str) -> Result<u64, String> {
    s.trim()
        .parse()
        .map_err(|_| "not a 64-bit unsigned integer".to_string())
}

fn boolean(s: &str) -> Result<bool, String> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn lambda(s: &str) -> Result<f64, String> {
    let v = real(s)?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err("lambda must lie in [0, 1)".into())
    }
}

fn reals(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .enumerate()
        .map(|(i, p)| real(p).map_err(|e| format!("entry {}: {e}", i + 1)))
        .collect()
}

fn point(s: &str) -> Result<Vector, String> {
    let v = reals(s)?;
    if v.len() != 2 {
        return Err(format!("expected 2 coordinates, got {}", v.len()));
    }
    Ok(Vector::from_vec(v))
}

fn chart(s: &str) -> Result<Chart, String> {
    match s.trim() {
        "torus" | "flat_torus" => Ok(Chart::FlatTorus),
        "disk" | "poincare_disk" => Ok(Chart::PoincareDisk),
        _ => Err("expected torus or disk".into()),
    }
}

fn basis(s: &str) -> Result<Vec<FieldBasis>, String> {
    s.split(',')
        .map(|p| {
            // `linear(−20)` contains no comma, so splitting on commas is safe
            FieldBasis::from_name(p.trim()).ok_or_else(|| format!("unknown field {:?}", p.trim()))
        })
        .collect()
}

fn time_change(s: &str) -> Result<TimeChange, String> {
    TimeChange::from_name(s.trim())
        .ok_or_else(|| "expected uniform, torus_tilt or disk_quadratic".into())
}

fn text(s: &str) -> Result<String, String> {
    Ok(s.trim().to_string())
}

/// Parses and validates an experiment file, collecting every error.
pub fn parse_config(text_in: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let mut f = lex(text_in);

    let name = f
        .get("run", "name", text)
        .unwrap_or_else(|| "experiment".into());
    let run_seed = f.get("run", "seed", seed).unwrap_or(0);

    let chart_kind = f.required("manifold", "chart", chart);
    let embed = f.get("manifold", "embed", boolean).unwrap_or(false);
    let major = f.get("manifold", "major_radius", positive);
    let minor = f.get("manifold", "minor_radius", positive);
    let mut embedding = None;
    if chart_kind == Some(Chart::PoincareDisk) && (embed || major.is_some() || minor.is_some()) {
        let line = f.line("manifold", "embed");
        f.err(
            line,
            "[manifold] embedding parameters apply to the torus only",
        );
    } else if embed {
        let d = TorusEmbedding::default();
        match TorusEmbedding::new(major.unwrap_or(d.major), minor.unwrap_or(d.minor)) {
            Ok(e) => embedding = Some(e),
            Err(e) => {
                let line = f.line("manifold", "minor_radius");
                f.err(line, format!("[manifold] {e}"));
            }
        }
    } else if major.is_some() || minor.is_some() {
        let line = f.line("manifold", "major_radius");
        f.err(line, "[manifold] radii given but embed is not enabled");
    }

    let basis_list = f.required("field", "basis", basis);
    let theta = f.get("field", "theta", reals);
    if let (Some(Chart::FlatTorus), Some(b)) = (chart_kind, &basis_list) {
        if b.iter()
            .any(|k| !matches!(k, FieldBasis::Toroidal | FieldBasis::Poloidal))
        {
            let line = f.line("field", "basis");
            f.err(
                line,
                "[field] basis: only toroidal and poloidal fields are periodic on the torus",
            );
        }
    }
    let k = basis_list.as_ref().map_or(0, |b| b.len());
    if let (Some(t), true) = (&theta, basis_list.is_some()) {
        if t.len() != k {
            let line = f.line("field", "theta");
            f.err(
                line,
                format!("[field] theta has {} entries for {k} basis fields", t.len()),
            );
        }
    }

    let truncation = f
        .get("guiding", "truncation", count)
        .unwrap_or(DEFAULT_TRUNCATION);
    let samples = f
        .get("guiding", "samples", count)
        .unwrap_or(DEFAULT_SAMPLES);
    let sample_seed = f.get("guiding", "sample_seed", seed);
    let quadrature_fallback = f
        .get("guiding", "quadrature_fallback", boolean)
        .unwrap_or(false);

    let start = f.get("bridge", "start", point);
    let target = f.get("bridge", "target", |s| match s.trim() {
        "forward" => Ok(Target::Forward),
        other => point(other).map(Target::Point),
    });
    let target_point = match &target {
        Some(Target::Point(p)) => Some(p.clone()),
        _ => None,
    };
    if target == Some(Target::Forward) && start.is_none() {
        let line = f.line("bridge", "target");
        f.err(line, "[bridge] target = forward needs a start point");
    }
    if let Some(c) = chart_kind {
        for (key, p) in [("start", &start), ("target", &target_point)] {
            if let Some(p) = p {
                if let Err(e) = c.check(p) {
                    let line = f.line("bridge", key);
                    f.err(line, format!("[bridge] {key}: {e}"));
                }
            }
        }
    }
    let horizon = f.get("bridge", "horizon", positive).unwrap_or(1.0);
    let mesh = f.get("bridge", "mesh", positive).unwrap_or(DEFAULT_MESH);
    if mesh > horizon {
        let line = f.line("bridge", "mesh");
        f.err(
            line,
            format!("[bridge] mesh {mesh} exceeds the horizon {horizon}"),
        );
    }
    let default_change = match chart_kind {
        Some(Chart::PoincareDisk) => TimeChange::DiskQuadratic,
        _ => TimeChange::TorusTilt,
    };
    let time_change = f
        .get("bridge", "time_change", time_change)
        .unwrap_or(default_change);
    if time_change == TimeChange::TorusTilt && horizon > 2.0 {
        let line = f.line("bridge", "time_change");
        f.err(
            line,
            "[bridge] torus_tilt is not monotone for horizons above 2",
        );
    }
    let paths = f.get("bridge", "paths", count).unwrap_or(1);

    let chain = ChainSettings {
        lambda: f.get("chain", "lambda", lambda),
        iterations: f
            .get("chain", "iterations", count)
            .unwrap_or(DEFAULT_ITERATIONS),
        thinning: f
            .get("chain", "thinning", count)
            .unwrap_or(DEFAULT_THINNING),
    };

    let gibbs = if f.has_section("gibbs") {
        let observations = f
            .raw("gibbs", "observations")
            .map(|e| (PathBuf::from(e.value), e.line));
        let precision = f.required("gibbs", "prior_precision", reals);
        let prior_precision = match precision {
            Some(p) if p.len() == 1 && p[0] > 0.0 => Some(Matrix::identity(k, k) * p[0]),
            Some(p) if p.len() == k * k && k > 0 => {
                let m = Matrix::from_row_slice(k, k, &p);
                let sym = (&m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0);
                if sym && m.clone().cholesky().is_some() {
                    Some(m)
                } else {
                    let line = f.line("gibbs", "prior_precision");
                    f.err(
                        line,
                        "[gibbs] prior_precision must be symmetric positive definite",
                    );
                    None
                }
            }
            Some(p) => {
                let line = f.line("gibbs", "prior_precision");
                f.err(
                    line,
                    format!(
                        "[gibbs] prior_precision needs one positive scale or {} row-major entries, got {}",
                        k * k,
                        p.len()
                    ),
                );
                None
            }
            None => None,
        };
        let prior_mean = match f.get("gibbs", "prior_mean", reals) {
            Some(m) if m.len() == k => Vector::from_vec(m),
            Some(m) => {
                let line = f.line("gibbs", "prior_mean");
                f.err(
                    line,
                    format!(
                        "[gibbs] prior_mean has {} entries for {k} basis fields",
                        m.len()
                    ),
                );
                Vector::zeros(k)
            }
            None => Vector::zeros(k),
        };
        let lam = f.required("gibbs", "lambda", lambda);
        let iterations = f
            .get("gibbs", "iterations", count)
            .unwrap_or(DEFAULT_ITERATIONS);
        let burn_in = f.get("gibbs", "burn_in", natural).unwrap_or(0);
        if burn_in >= iterations {
            let line = f.line("gibbs", "burn_in");
            f.err(
                line,
                format!("[gibbs] burn_in {burn_in} must be below iterations {iterations}"),
            );
        }
        match (prior_precision, lam) {
            (Some(prior_precision), Some(lambda)) => Some(GibbsSettings {
                observations,
                prior_precision,
                prior_mean,
                lambda,
                iterations,
                burn_in,
            }),
            _ => None,
        }
    } else {
        None
    };

    let forward = if f.has_section("forward") {
        let ftheta = f.get("forward", "theta", reals);
        if let Some(t) = &ftheta {
            if basis_list.is_some() && t.len() != k {
                let line = f.line("forward", "theta");
                f.err(
                    line,
                    format!(
                        "[forward] theta has {} entries for {k} basis fields",
                        t.len()
                    ),
                );
            }
        }
        let n = f.required("forward", "count", count);
        if n == Some(1) {
            let line = f.line("forward", "count");
            f.err(
                line,
                "[forward] count must be at least 2 (the start point is included)",
            );
        }
        let fmesh = f
            .get("forward", "mesh", positive)
            .unwrap_or(DEFAULT_FORWARD_MESH);
        let fseed = f.get("forward", "seed", seed);
        n.map(|count| ForwardSettings {
            theta: ftheta,
            count,
            mesh: fmesh,
            seed: fseed,
        })
    } else {
        None
    };

    if !f.errors.is_empty() {
        f.errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        return Err(ConfigErrors(f.errors));
    }
    let basis_list = basis_list.expect("validated");
    Ok(ExperimentConfig {
        name,
        seed: run_seed,
        chart: chart_kind.expect("validated"),
        embedding,
        theta_given: theta.is_some(),
        theta: theta.unwrap_or_else(|| vec![0.0; basis_list.len()]),
        basis: basis_list,
        truncation,
        samples,
        sample_seed,
        quadrature_fallback,
        start,
        target,
        horizon,
        mesh,
        time_change,
        paths,
        chain,
        gibbs,
        forward,
    })
}
