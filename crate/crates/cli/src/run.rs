//! Executes one experiment and writes its output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use guided_bridges::bayes::{equidistant_times, Observations};
use guided_bridges::io::{self as gio, PathRecord};
use guided_bridges::Diffeomorphism;
use guided_bridges::{
    forward_simulate, gibbs, pushforward_guided, run_chain, time_grid, BridgeProblem, ChainConfig,
    Chart, DriverPath, FramePoint, GibbsConfig, GuidedSolution, GuidingBackend, GuidingFunction,
    VectorFieldSpec,
};

use crate::config::{ExperimentConfig, Target, DEFAULT_FORWARD_MESH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Bridge,
    Chain,
    Gibbs,
    Forward,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Bridge => "bridge",
            Command::Chain => "chain",
            Command::Gibbs => "gibbs",
            Command::Forward => "forward",
        }
    }
}

#[derive(Debug, Serialize)]
struct Build {
    package: &'static str,
    version: &'static str,
    git_revision: &'static str,
    profile: &'static str,
}

const BUILD: Build = Build {
    package: env!("CARGO_PKG_NAME"),
    version: env!("CARGO_PKG_VERSION"),
    git_revision: env!("GBRIDGE_GIT_REVISION"),
    profile: env!("GBRIDGE_PROFILE"),
};

/// Contents of `manifest.json`. Rerunning `command` on `config` with `seed`
/// reproduces every listed output byte for byte.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    name: &'a str,
    command: Command,
    seed: u64,
    config_file: Option<String>,
    config: &'a str,
    build: &'a Build,
    outputs: Vec<&'static str>,
    summary: Value,
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub outputs: Vec<&'static str>,
    pub summary: Value,
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn field(cfg: &ExperimentConfig, theta: &[f64]) -> Result<VectorFieldSpec> {
    Ok(VectorFieldSpec::new(cfg.basis.clone(), theta.to_vec())?)
}

fn backend(cfg: &ExperimentConfig) -> GuidingBackend {
    match cfg.chart {
        Chart::FlatTorus => GuidingBackend::TorusSeries {
            truncation: cfg.truncation,
        },
        Chart::PoincareDisk => GuidingBackend::HyperbolicMc {
            samples: cfg.samples,
            seed: cfg.sample_seed(),
            quadrature_fallback: cfg.quadrature_fallback,
        },
    }
}

fn start(cfg: &ExperimentConfig) -> Result<guided_bridges::Vector> {
    match &cfg.start {
        Some(x) => Ok(cfg.chart.canonicalize(x)),
        None => bail!("this command needs [bridge] start"),
    }
}

/// Drift and generator seed of the unconditioned forward process.
fn forward_field(cfg: &ExperimentConfig) -> Result<(VectorFieldSpec, Vec<f64>)> {
    let theta = cfg
        .forward
        .as_ref()
        .and_then(|f| f.theta.clone())
        .unwrap_or_else(|| cfg.theta.clone());
    Ok((field(cfg, &theta)?, theta))
}

fn forward_mesh(cfg: &ExperimentConfig) -> f64 {
    cfg.forward
        .as_ref()
        .map_or(DEFAULT_FORWARD_MESH, |f| f.mesh)
}

fn target(cfg: &ExperimentConfig) -> Result<guided_bridges::Vector> {
    match &cfg.target {
        Some(Target::Point(x)) => Ok(cfg.chart.canonicalize(x)),
        Some(Target::Forward) => {
            let (vf, _) = forward_field(cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.forward_seed());
            let times = [0.0, cfg.horizon];
            let run = forward_simulate(
                cfg.chart,
                &vf,
                &start(cfg)?,
                &times,
                forward_mesh(cfg),
                &mut rng,
            )?;
            Ok(run.observations.points()[1].clone())
        }
        None => bail!("this command needs [bridge] target"),
    }
}

fn problem(cfg: &ExperimentConfig) -> Result<BridgeProblem> {
    let target = target(cfg)?;
    let gf = GuidingFunction::new(cfg.chart, target, cfg.horizon, backend(cfg))?;
    let u0 = FramePoint::orthonormal(cfg.chart, start(cfg)?)?;
    let times = time_grid(cfg.horizon, cfg.mesh, cfg.time_change)?;
    Ok(BridgeProblem::new(
        cfg.chart,
        field(cfg, &cfg.theta)?,
        gf,
        u0,
        times,
    )?)
}

/// Embedded coordinates of each path, when an embedding is configured.
fn embed(
    cfg: &ExperimentConfig,
    sols: &[&GuidedSolution],
) -> Result<Option<Vec<Vec<guided_bridges::Vector>>>> {
    let Some(e) = &cfg.embedding else {
        return Ok(None);
    };
    let mapped = sols
        .iter()
        .map(|s| Ok(pushforward_guided(e, s)?.points))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(mapped))
}

fn write_solutions(
    cfg: &ExperimentConfig,
    out: &Path,
    ids: &[usize],
    sols: &[&GuidedSolution],
) -> Result<()> {
    let embedded = embed(cfg, sols)?;
    let records: Vec<PathRecord<'_>> = sols
        .iter()
        .enumerate()
        .map(|(j, s)| PathRecord {
            id: ids[j],
            times: &s.times,
            states: &s.states,
            embedded: embedded.as_ref().map(|e| e[j].as_slice()),
            cumulative_log_psi: &s.cumulative_log_psi,
        })
        .collect();
    gio::write_paths(
        create(out, "paths.csv")?,
        cfg.chart.dim(),
        embedded.is_some(),
        &records,
    )?;
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Independent guided paths. Path `i` is driven by stream `i` of the run
/// seed, so the result does not depend on the thread count.
fn run_bridge(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let p = problem(cfg)?;
    let sols = (0..cfg.paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let z = DriverPath::wiener(p.times.clone(), cfg.chart.dim(), &mut rng)?;
            p.simulate(&z).with_context(|| format!("path {i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&GuidedSolution> = sols.iter().collect();
    let ids: Vec<usize> = (0..sols.len()).collect();
    write_solutions(cfg, out, &ids, &refs)?;
    let errors = sols
        .iter()
        .map(|s| Ok(s.endpoint_error(p.gf.target())?))
        .collect::<Result<Vec<f64>>>()?;
    let log_psi: Vec<f64> = sols.iter().map(|s| s.log_psi).collect();
    log::info!(
        "{} paths, median endpoint distance {:.4}",
        sols.len(),
        median(errors.clone())
    );
    Ok(Outcome {
        outputs: vec!["paths.csv"],
        summary: json!({
            "target": p.gf.target().as_slice(),
            "paths": sols.len(),
            "median_endpoint_distance": median(errors.clone()),
            "endpoint_distance": errors,
            "log_psi": log_psi,
        }),
    })
}

fn run_pcn(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let Some(lambda) = cfg.chain.lambda else {
        bail!("the chain command needs [chain] lambda");
    };
    let p = problem(cfg)?;
    let stats = run_chain(
        &p,
        &ChainConfig {
            lambda,
            iterations: cfg.chain.iterations,
            seed: cfg.seed,
            thinning: cfg.chain.thinning,
        },
    )?;
    gio::write_chain(create(out, "chain.csv")?, &stats.records)?;
    let ids: Vec<usize> = stats.samples.iter().map(|(i, _)| *i).collect();
    let refs: Vec<&GuidedSolution> = stats.samples.iter().map(|(_, s)| s).collect();
    write_solutions(cfg, out, &ids, &refs)?;
    log::info!(
        "acceptance rate {:.4} over {} iterations ({} failed proposals)",
        stats.acceptance_rate,
        cfg.chain.iterations,
        stats.failed_proposals
    );
    Ok(Outcome {
        outputs: vec!["chain.csv", "paths.csv"],
        summary: json!({
            "target": p.gf.target().as_slice(),
            "iterations": cfg.chain.iterations,
            "lambda": lambda,
            "acceptance_rate": stats.acceptance_rate,
            "failed_proposals": stats.failed_proposals,
        }),
    })
}

fn forward_data(cfg: &ExperimentConfig) -> Result<(guided_bridges::bayes::ForwardRun, Vec<f64>)> {
    let Some(fw) = &cfg.forward else {
        bail!("this command needs a [forward] section");
    };
    let (vf, theta) = forward_field(cfg)?;
    let times = equidistant_times(cfg.horizon, fw.count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.forward_seed());
    let run = forward_simulate(cfg.chart, &vf, &start(cfg)?, &times, fw.mesh, &mut rng)?;
    Ok((run, theta))
}

fn run_forward(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let (run, theta) = forward_data(cfg)?;
    gio::write_observations(create(out, "observations.csv")?, &run.observations)?;
    let embedded = match &cfg.embedding {
        Some(e) => Some(
            run.states
                .iter()
                .map(|x| e.forward(x))
                .collect::<guided_bridges::Result<Vec<_>>>()?,
        ),
        None => None,
    };
    // an unguided path carries no weight
    let zeros = vec![0.0; run.times.len()];
    let record = PathRecord {
        id: 0,
        times: &run.times,
        states: &run.states,
        embedded: embedded.as_deref(),
        cumulative_log_psi: &zeros,
    };
    gio::write_paths(
        create(out, "paths.csv")?,
        cfg.chart.dim(),
        embedded.is_some(),
        &[record],
    )?;
    Ok(Outcome {
        outputs: vec!["observations.csv", "paths.csv"],
        summary: json!({
            "theta": theta,
            "observations": run.observations.times().len(),
            "forward_seed": cfg.forward_seed(),
        }),
    })
}

fn run_gibbs(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let Some(g) = &cfg.gibbs else {
        bail!("the gibbs command needs a [gibbs] section");
    };
    let (obs, source): (Observations, Value) = match &g.observations {
        Some((path, _)) => {
            let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            let name = path.display().to_string();
            (gio::read_observations(&name, f, cfg.chart)?, json!(name))
        }
        None => {
            let (run, theta) = forward_data(cfg)?;
            (
                run.observations,
                json!({ "simulated_theta": theta, "forward_seed": cfg.forward_seed() }),
            )
        }
    };
    let gc = GibbsConfig {
        basis: cfg.basis.clone(),
        prior_precision: g.prior_precision.clone(),
        prior_mean: g.prior_mean.clone(),
        lambda: g.lambda,
        iterations: g.iterations,
        burn_in: g.burn_in,
        mesh: cfg.mesh,
        time_change: cfg.time_change,
        seed: cfg.seed,
        backend: backend(cfg),
        initial_theta: cfg
            .theta_given
            .then(|| guided_bridges::Vector::from_vec(cfg.theta.clone())),
    };
    let post = gibbs(&obs, &gc)?;
    gio::write_observations(create(out, "observations.csv")?, &obs)?;
    gio::write_posterior(create(out, "posterior.csv")?, &post)?;
    let (mean, sd) = (post.mean(), post.sd());
    log::info!(
        "posterior mean {:?}, sd {:?}, pCN acceptance {:.4}",
        mean.as_slice(),
        sd.as_slice(),
        post.acceptance_rate()
    );
    Ok(Outcome {
        outputs: vec!["observations.csv", "posterior.csv"],
        summary: json!({
            "data": source,
            "segments": obs.segments(),
            "burn_in": g.burn_in,
            "posterior_mean": mean.as_slice(),
            "posterior_sd": sd.as_slice(),
            "acceptance_rate": post.acceptance_rate(),
        }),
    })
}

/// Runs `command` and writes its outputs plus `manifest.json` into `out`.
pub fn run(
    command: Command,
    cfg: &ExperimentConfig,
    config_text: &str,
    config_file: Option<&Path>,
    out: &Path,
) -> Result<Outcome> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let outcome = match command {
        Command::Bridge => run_bridge(cfg, out),
        Command::Chain => run_pcn(cfg, out),
        Command::Gibbs => run_gibbs(cfg, out),
        Command::Forward => run_forward(cfg, out),
    }
    .with_context(|| format!("{} run {:?} failed", command.name(), cfg.name))?;
    let manifest = Manifest {
        name: &cfg.name,
        command,
        seed: cfg.seed,
        config_file: config_file.map(|p| p.display().to_string()),
        config: config_text,
        build: &BUILD,
        outputs: outcome.outputs.clone(),
        summary: outcome.summary.clone(),
    };
    let mut w = create(out, "manifest.json")?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(outcome)
}

/// Default output directory for a config file: `out/<name>`.
pub fn default_out(cfg: &ExperimentConfig) -> PathBuf {
    Path::new("out").join(&cfg.name)
}
