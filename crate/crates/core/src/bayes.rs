//! Data-augmentation Gibbs sampler for the drift coefficients `θ` of
//! `V_θ = Σ θ_k φ_k` from discrete observations.
//!
//! Each sweep updates the latent bridge of every observation interval with
//! one pCN step, draws `θ` from its conjugate normal full conditional given
//! the imputed path, and finally re-expresses each bridge through the driver
//! that generates it under the new `θ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bridge_mcmc::{initial_state, pcn_step, BridgeProblem, ChainState};
use crate::frame_bundle::{develop, DriverPath, FramePoint};
use crate::geometry::Chart;
use crate::guided::{reanchor, time_grid, FieldBasis, GuidedSolution, TimeChange, VectorFieldSpec};
use crate::heat_kernel::{GuidingBackend, GuidingFunction};
use crate::{Error, Matrix, Result, Vector};

/// Observed states `x_i` at strictly increasing times `t_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    chart: Chart,
    times: Vec<f64>,
    points: Vec<Vector>,
}

impl Observations {
    pub fn new(chart: Chart, times: Vec<f64>, points: Vec<Vector>) -> Result<Self> {
        if times.is_empty() || times.len() != points.len() {
            return Err(Error::Config(format!(
                "{} observation times for {} points",
                times.len(),
                points.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "observation times must be strictly increasing".into(),
            ));
        }
        for x in &points {
            chart.check(x)?;
        }
        let points = points.iter().map(|x| chart.canonicalize(x)).collect();
        Ok(Self {
            chart,
            times,
            points,
        })
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub basis: Vec<FieldBasis>,
    /// Prior precision `Γ₀`.
    pub prior_precision: Matrix,
    pub prior_mean: Vector,
    pub lambda: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub mesh: f64,
    pub time_change: TimeChange,
    pub seed: u64,
    /// Guiding kernel. For the hyperbolic backend, segment `i` uses the seed
    /// `seed + i` for its frozen draws.
    pub backend: GuidingBackend,
    /// Starting value of `θ`; drawn from the prior when absent.
    pub initial_theta: Option<Vector>,
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.basis.len();
        if k == 0 {
            return Err(Error::Config(
                "Gibbs sampler needs at least one basis field".into(),
            ));
        }
        if self.prior_precision.shape() != (k, k) {
            return Err(Error::Dimension {
                expected: k,
                got: self.prior_precision.nrows(),
            });
        }
        if self.prior_mean.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: self.prior_mean.len(),
            });
        }
        let sym = (&self.prior_precision - self.prior_precision.transpose()).amax();
        if sym > 1e-12 * self.prior_precision.amax().max(1.0)
            || self.prior_precision.clone().cholesky().is_none()
        {
            return Err(Error::Config(
                "prior precision must be symmetric positive definite".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1), got {}",
                self.lambda
            )));
        }
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "need 0 ≤ burn_in < iterations, got {} and {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.mesh > 0.0) {
            return Err(Error::Config(format!(
                "mesh must be positive, got {}",
                self.mesh
            )));
        }
        if let Some(t) = &self.initial_theta {
            if t.len() != k {
                return Err(Error::Dimension {
                    expected: k,
                    got: t.len(),
                });
            }
        }
        Ok(())
    }
}

/// Output of [`gibbs`]: one `θ` per iteration (including burn-in) and the
/// per-segment pCN acceptance flags.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub thetas: Vec<Vector>,
    pub accepted: Vec<Vec<bool>>,
    pub burn_in: usize,
}

impl PosteriorSample {
    fn kept(&self) -> &[Vector] {
        &self.thetas[self.burn_in.min(self.thetas.len())..]
    }

    /// Posterior mean after burn-in.
    pub fn mean(&self) -> Vector {
        let kept = self.kept();
        let k = kept.first().map_or(0, |t| t.len());
        kept.iter().fold(Vector::zeros(k), |acc, t| acc + t) / kept.len() as f64
    }

    /// Per-coordinate posterior standard deviation after burn-in.
    pub fn sd(&self) -> Vector {
        let kept = self.kept();
        let mean = self.mean();
        let n = kept.len() as f64;
        kept.iter()
            .fold(Vector::zeros(mean.len()), |acc, t| {
                acc + (t - &mean).map(|d| d * d)
            })
            .map(|s| (s / (n - 1.0).max(1.0)).sqrt())
    }

    pub fn acceptance_rate(&self) -> f64 {
        let total: usize = self.accepted.iter().map(|a| a.len()).sum();
        let yes: usize = self.accepted.iter().flatten().filter(|&&a| a).count();
        if total == 0 {
            1.0
        } else {
            yes as f64 / total as f64
        }
    }
}

/// Girsanov sufficient statistics of a path collection:
/// `μ_k = Σ_j ⟨φ_k(X_{s_j}), ΔX_j⟩_G` and `Γ_{kℓ} = Σ_j ⟨φ_k, φ_ℓ⟩_G Δs_j`,
/// both evaluated at the left end of each interval. Torus increments take the
/// minimal representative.
pub fn path_integrals(
    chart: Chart,
    basis: &[FieldBasis],
    paths: &[(&[f64], &[Vector])],
) -> Result<(Vector, Matrix)> {
    let k = basis.len();
    let mut mu = Vector::zeros(k);
    let mut gram = Matrix::zeros(k, k);
    for (times, states) in paths {
        if times.len() != states.len() {
            return Err(Error::Config(format!(
                "{} times for {} states",
                times.len(),
                states.len()
            )));
        }
        for (j, w) in times.windows(2).enumerate() {
            let x = &states[j];
            let scale = chart.metric_scale(x)?;
            let dx = chart.displacement(x, &states[j + 1]);
            let dt = w[1] - w[0];
            let phi: Vec<Vector> = basis.iter().map(|b| b.eval(x)).collect();
            for a in 0..k {
                mu[a] += scale * phi[a].dot(&dx);
                for b in 0..=a {
                    let g = scale * phi[a].dot(&phi[b]) * dt;
                    gram[(a, b)] += g;
                    if a != b {
                        gram[(b, a)] += g;
                    }
                }
            }
        }
    }
    Ok((mu, gram))
}

/// Draw from `N(Γ⁻¹(μ + Γ₀ m), Γ⁻¹)` with `Γ = gram + Γ₀`.
pub fn theta_update<R: Rng + ?Sized>(
    mu: &Vector,
    gram: &Matrix,
    prior_precision: &Matrix,
    prior_mean: &Vector,
    rng: &mut R,
) -> Result<Vector> {
    let precision = gram + prior_precision;
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Numeric("posterior precision is not positive definite".into()))?;
    let mean = chol.solve(&(mu + prior_precision * prior_mean));
    let xi = Vector::from_fn(mu.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let offset = chol
        .l()
        .transpose()
        .solve_upper_triangular(&xi)
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    Ok(mean + offset)
}

fn segment_backend(backend: GuidingBackend, segment: usize) -> GuidingBackend {
    match backend {
        GuidingBackend::HyperbolicMc {
            samples,
            seed,
            quadrature_fallback,
        } => GuidingBackend::HyperbolicMc {
            samples,
            seed: seed.wrapping_add(segment as u64),
            quadrature_fallback,
        },
        other => other,
    }
}

/// Bridge problems, one per observation interval, each on its own local
/// clock `[0, t_i − t_{i−1}]` starting from an orthonormal frame at `x_{i−1}`.
pub fn segment_problems(
    obs: &Observations,
    vf: &VectorFieldSpec,
    config: &GibbsConfig,
) -> Result<Vec<BridgeProblem>> {
    let chart = obs.chart;
    (1..obs.times.len())
        .map(|i| {
            let horizon = obs.times[i] - obs.times[i - 1];
            let gf = GuidingFunction::new(
                chart,
                obs.points[i].clone(),
                horizon,
                segment_backend(config.backend, i - 1),
            )?;
            let u0 = FramePoint::orthonormal(chart, obs.points[i - 1].clone())?;
            let times = time_grid(horizon, config.mesh, config.time_change)?;
            BridgeProblem::new(chart, vf.clone(), gf, u0, times)
        })
        .collect()
}

/// Statistics of the current latent path over all segments.
pub fn segment_integrals(
    chart: Chart,
    basis: &[FieldBasis],
    states: &[ChainState],
) -> Result<(Vector, Matrix)> {
    let paths: Vec<(&[f64], &[Vector])> = states
        .iter()
        .map(|s| (s.solution.times.as_slice(), s.solution.states.as_slice()))
        .collect();
    path_integrals(chart, basis, &paths)
}

/// Re-expresses every segment under `vf`: the paths are kept, the drivers and
/// weights are recomputed by anti-development.
pub fn refresh_segments(
    problems: &mut [BridgeProblem],
    states: &mut [ChainState],
    vf: &VectorFieldSpec,
) -> Result<()> {
    for (i, (p, s)) in problems.iter_mut().zip(states.iter_mut()).enumerate() {
        p.vf = vf.clone();
        let solution: GuidedSolution = reanchor(p.chart, vf, &p.gf, &s.solution.frames)
            .map_err(|e| Error::Numeric(format!("segment {i}: {e}")))?;
        *s = ChainState {
            driver: solution.driver.clone(),
            solution,
        };
    }
    Ok(())
}

/// Runs the Gibbs sampler. Segment `i` draws its noise from stream `i + 1`
/// of a ChaCha generator seeded with `config.seed`; `θ` draws use stream 0.
pub fn gibbs(obs: &Observations, config: &GibbsConfig) -> Result<PosteriorSample> {
    config.validate()?;
    let chart = obs.chart;
    let mut theta_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seg_rngs: Vec<ChaCha8Rng> = (0..obs.segments())
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(config.seed);
            r.set_stream(i as u64 + 1);
            r
        })
        .collect();

    let theta = match &config.initial_theta {
        Some(t) => t.clone(),
        None => theta_update(
            &Vector::zeros(config.basis.len()),
            &Matrix::zeros(config.basis.len(), config.basis.len()),
            &config.prior_precision,
            &config.prior_mean,
            &mut theta_rng,
        )?,
    };
    let mut vf = VectorFieldSpec::new(config.basis.clone(), theta.iter().copied().collect())?;
    let mut problems = segment_problems(obs, &vf, config)?;
    let mut states = problems
        .iter()
        .zip(seg_rngs.iter_mut())
        .enumerate()
        .map(|(i, (p, rng))| {
            initial_state(p, rng)
                .map_err(|e| Error::Numeric(format!("segment {i} failed to initialise: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut thetas = Vec::with_capacity(config.iterations);
    let mut accepted = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let mut flags = Vec::with_capacity(states.len());
        for ((p, s), rng) in problems
            .iter()
            .zip(states.iter_mut())
            .zip(seg_rngs.iter_mut())
        {
            let out = pcn_step(p, s, config.lambda, rng)?;
            flags.push(out.accepted);
            *s = out.state;
        }
        let theta = if states.is_empty() {
            theta_update(
                &Vector::zeros(config.basis.len()),
                &Matrix::zeros(config.basis.len(), config.basis.len()),
                &config.prior_precision,
                &config.prior_mean,
                &mut theta_rng,
            )?
        } else {
            let (mu, gram) = segment_integrals(chart, &config.basis, &states)?;
            theta_update(
                &mu,
                &gram,
                &config.prior_precision,
                &config.prior_mean,
                &mut theta_rng,
            )?
        };
        vf = vf.with_theta(theta.as_slice())?;
        refresh_segments(&mut problems, &mut states, &vf)
            .map_err(|e| Error::Numeric(format!("iteration {iteration}: {e}")))?;
        if iteration % 100 == 0 {
            log::debug!(
                "gibbs iteration {iteration}: theta = {:?}",
                theta.as_slice()
            );
        }
        thetas.push(theta);
        accepted.push(flags);
    }
    Ok(PosteriorSample {
        thetas,
        accepted,
        burn_in: config.burn_in,
    })
}

/// A forward simulation and the observations extracted from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRun {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub observations: Observations,
}

/// Simulates `dX = V_θ dt + ν ∘ dZ` (no guiding) from an orthonormal frame at
/// `x0` and records the state at each of `obs_times`. Between consecutive
/// observation times the grid is uniform with step at most `mesh`.
pub fn forward_simulate<R: Rng + ?Sized>(
    chart: Chart,
    vf: &VectorFieldSpec,
    x0: &Vector,
    obs_times: &[f64],
    mesh: f64,
    rng: &mut R,
) -> Result<ForwardRun> {
    if obs_times.first() != Some(&0.0) {
        return Err(Error::Config("observation times must start at 0".into()));
    }
    crate::frame_bundle::check_grid(obs_times).or_else(|e| {
        if obs_times.len() == 1 {
            Ok(())
        } else {
            Err(e)
        }
    })?;
    let mut u = FramePoint::orthonormal(chart, x0.clone())?;
    let mut times = vec![0.0];
    let mut states = vec![u.x.clone()];
    let mut points = vec![u.x.clone()];
    for w in obs_times.windows(2) {
        let local = time_grid(w[1] - w[0], mesh, TimeChange::Uniform)?;
        let z = DriverPath::wiener(local.clone(), chart.dim(), rng)?;
        let path = develop(chart, &u, &z, |_: usize, _: f64, f: &FramePoint| {
            f.to_frame_coordinates(&vf.eval(&f.x))
        })?;
        for (t, f) in local.iter().zip(&path.frames).skip(1) {
            times.push(w[0] + t);
            states.push(f.x.clone());
        }
        u = path.terminal().clone();
        points.push(u.x.clone());
    }
    let observations = Observations::new(chart, obs_times.to_vec(), points)?;
    Ok(ForwardRun {
        times,
        states,
        observations,
    })
}

/// `n` equidistant observation times on `[0, T]`, including both ends.
pub fn equidistant_times(horizon: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(horizon > 0.0) {
        return Err(Error::Config(format!(
            "need at least 2 observations on a positive horizon, got {n} on {horizon}"
        )));
    }
    let mut t: Vec<f64> = (0..n)
        .map(|i| horizon * i as f64 / (n - 1) as f64)
        .collect();
    t[n - 1] = horizon;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    #[test]
    fn constant_path_has_no_information() {
        let x = v(1.0, 2.0);
        let times = [0.0, 0.5, 1.0];
        let states = [x.clone(), x.clone(), x];
        let (mu, gram) = path_integrals(
            Chart::FlatTorus,
            &[FieldBasis::Toroidal],
            &[(&times[..], &states[..])],
        )
        .unwrap();
        assert_eq!(mu[0], 0.0);
        assert_eq!(gram[(0, 0)], 1.0);
        let (mu, gram) = path_integrals(
            Chart::FlatTorus,
            &[FieldBasis::Toroidal],
            &[(&times[..1], &states[..1])],
        )
        .unwrap();
        assert_eq!((mu[0], gram[(0, 0)]), (0.0, 0.0));
    }

    #[test]
    fn straight_line_integrals() {
        let c = 1.3;
        let n = 100;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let states: Vec<Vector> = times.iter().map(|&s| v(c * s, 0.0)).collect();
        let (mu, gram) = path_integrals(
            Chart::FlatTorus,
            &[FieldBasis::Toroidal, FieldBasis::Poloidal],
            &[(&times[..], &states[..])],
        )
        .unwrap();
        assert!((mu[0] - c).abs() < 1e-12);
        assert_eq!(mu[1], 0.0);
        assert!((gram[(0, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(gram[(0, 1)], 0.0);
    }

    #[test]
    fn wrapped_increments_are_minimal() {
        let times = [0.0, 1.0];
        let states = [v(6.2, 0.0), v(0.05, 0.0)];
        let (mu, _) = path_integrals(
            Chart::FlatTorus,
            &[FieldBasis::Toroidal],
            &[(&times[..], &states[..])],
        )
        .unwrap();
        assert!((mu[0] - (0.05 + std::f64::consts::TAU - 6.2)).abs() < 1e-12);
    }

    #[test]
    fn disk_integrals_use_the_metric() {
        let times = [0.0, 0.5];
        let states = [v(0.5, 0.0), v(0.6, 0.0)];
        let (mu, gram) = path_integrals(
            Chart::PoincareDisk,
            &[FieldBasis::East { amplitude: 1.0 }],
            &[(&times[..], &states[..])],
        )
        .unwrap();
        let scale = 4.0 / (0.75f64 * 0.75);
        let phi = 0.75f64 * 0.75;
        assert!((mu[0] - scale * phi * 0.1).abs() < 1e-12);
        assert!((gram[(0, 0)] - scale * phi * phi * 0.5).abs() < 1e-12);
    }

    #[test]
    fn dominant_prior_pins_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prior = Matrix::identity(2, 2) * 1e6;
        for _ in 0..100 {
            let t = theta_update(
                &Vector::zeros(2),
                &Matrix::zeros(2, 2),
                &prior,
                &Vector::zeros(2),
                &mut rng,
            )
            .unwrap();
            assert!(t.norm() < 1e-2);
        }
    }

    #[test]
    fn update_is_deterministic_and_rejects_indefinite_precision() {
        let mu = v(1.0, -2.0);
        let gram = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let prior = Matrix::identity(2, 2) * 0.05;
        let a = theta_update(
            &mu,
            &gram,
            &prior,
            &Vector::zeros(2),
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let b = theta_update(
            &mu,
            &gram,
            &prior,
            &Vector::zeros(2),
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        assert_eq!(a, b);
        let bad = -Matrix::identity(2, 2);
        assert!(theta_update(
            &mu,
            &Matrix::zeros(2, 2),
            &bad,
            &Vector::zeros(2),
            &mut ChaCha8Rng::seed_from_u64(4)
        )
        .is_err());
    }

    #[test]
    fn update_mean_matches_monte_carlo() {
        let mu = v(1.0, -2.0);
        let gram = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let prior = Matrix::identity(2, 2) * 0.05;
        let precision = &gram + &prior;
        let cov = precision.clone().try_inverse().unwrap();
        let mean = &cov * &mu;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000;
        let draws: Vec<Vector> = (0..n)
            .map(|_| theta_update(&mu, &gram, &prior, &Vector::zeros(2), &mut rng).unwrap())
            .collect();
        let emp = draws.iter().fold(Vector::zeros(2), |a, d| a + d) / n as f64;
        for c in 0..2 {
            let se = (cov[(c, c)] / n as f64).sqrt();
            assert!((emp[c] - mean[c]).abs() < 3.0 * se, "coordinate {c}");
        }
    }

    #[test]
    fn config_validation() {
        let cfg = GibbsConfig {
            basis: vec![FieldBasis::Toroidal, FieldBasis::Poloidal],
            prior_precision: Matrix::identity(2, 2) * 0.05,
            prior_mean: Vector::zeros(2),
            lambda: 0.9,
            iterations: 10,
            burn_in: 2,
            mesh: 1e-2,
            time_change: TimeChange::TorusTilt,
            seed: 1,
            backend: GuidingBackend::TorusSeries { truncation: 10 },
            initial_theta: None,
        };
        assert!(cfg.validate().is_ok());
        let mut bad = cfg.clone();
        bad.prior_precision = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.burn_in = 10;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.lambda = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn no_data_gives_prior_draws() {
        let obs = Observations::new(Chart::FlatTorus, vec![0.0], vec![v(0.0, 0.0)]).unwrap();
        let cfg = GibbsConfig {
            basis: vec![FieldBasis::Toroidal],
            prior_precision: Matrix::identity(1, 1) * 4.0,
            prior_mean: Vector::from_vec(vec![1.0]),
            lambda: 0.5,
            iterations: 4000,
            burn_in: 0,
            mesh: 1e-2,
            time_change: TimeChange::Uniform,
            seed: 3,
            backend: GuidingBackend::TorusSeries { truncation: 10 },
            initial_theta: None,
        };
        let post = gibbs(&obs, &cfg).unwrap();
        assert!((post.mean()[0] - 1.0).abs() < 3.0 * 0.5 / (4000f64).sqrt());
        assert!((post.sd()[0] - 0.5).abs() < 0.03);
    }

    #[test]
    fn observation_validation() {
        assert!(Observations::new(
            Chart::FlatTorus,
            vec![0.0, 0.0],
            vec![v(0.0, 0.0), v(1.0, 0.0)]
        )
        .is_err());
        assert!(Observations::new(Chart::PoincareDisk, vec![0.0], vec![v(1.0, 0.0)]).is_err());
        assert!(Observations::new(Chart::FlatTorus, vec![0.0], vec![]).is_err());
    }

    #[test]
    fn forward_run_hits_observation_times() {
        let vf = VectorFieldSpec::new(
            vec![FieldBasis::Toroidal, FieldBasis::Poloidal],
            vec![4.0, -4.0],
        )
        .unwrap();
        let times = equidistant_times(1.0, 5).unwrap();
        let run = forward_simulate(
            Chart::FlatTorus,
            &vf,
            &v(0.0, 0.0),
            &times,
            1e-2,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(run.observations.times(), &times[..]);
        assert_eq!(run.times.len(), 101);
        for (t, x) in times.iter().zip(run.observations.points()) {
            let idx = run
                .times
                .iter()
                .position(|s| (s - t).abs() < 1e-12)
                .unwrap();
            assert_eq!(&run.states[idx], x);
        }
        let zero = VectorFieldSpec::zero(vec![FieldBasis::Toroidal]);
        let still = forward_simulate(
            Chart::FlatTorus,
            &zero,
            &v(1.0, 1.0),
            &[0.0],
            1e-2,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(still.observations.points().len(), 1);
    }
}
