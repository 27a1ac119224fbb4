use std::cell::Cell;

use pgas::abc::{pgas_abc_sweep, AbcKernel};
use pgas::bridge::kalman_filter;
use pgas::diagnostics::{batch_means_se, update_rate};
use pgas::kernels::{
    ancestor_sampling_logweights, gibbs_loop, mh_rejuvenation_kernel, pg_sweep,
    pgas_rejuvenated_sweep, pgas_sweep, pimh_sweep, GaussianBridgeProposal, IdentityKernel,
    PimhState, PriorSegmentProposal, ProposalWeights, RejuvenationPlan, SweepOutput,
};
use pgas::models::{
    kalman_smoother_oracle, simulate_data, ArSsmSpec, LgssmSpec, Lorenz63Spec, SsmTarget,
    StateSpaceModel,
};
use pgas::smc::ParticleSystem;
use pgas::{Error, RandomSource, Result, Trajectory};

/// Posterior means and batch-means SEs of each `x_t` over `iters` sweeps after `burn` sweeps.
fn chain_moments(
    mut sweep: impl FnMut(&Trajectory, &mut RandomSource) -> SweepOutput,
    start: Trajectory,
    burn: usize,
    iters: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = RandomSource::new(seed);
    let horizon = start.len();
    let mut r = start;
    let mut series = vec![Vec::with_capacity(iters); horizon];
    for i in 0..burn + iters {
        r = sweep(&r, &mut rng).trajectory;
        if i >= burn {
            for (t, s) in series.iter_mut().enumerate() {
                s.push(r.state(t)[0]);
            }
        }
    }
    let means = series
        .iter()
        .map(|s| s.iter().sum::<f64>() / iters as f64)
        .collect();
    let ses = series
        .iter()
        .map(|s| batch_means_se(s, 50).unwrap())
        .collect();
    (means, ses)
}

#[test]
fn pimh_acceptance_approaches_one_with_many_particles() {
    let spec = LgssmSpec::scalar(0.7, 0.5, 1.0, 0.5, 0.0, 1.0).unwrap();
    let mut rng = RandomSource::new(21);
    let (_, ys) = simulate_data(&spec, 10, &mut rng);
    let tg = SsmTarget::new(spec, ys).unwrap();
    let mut state = PimhState::initialise(&tg, 10_000, &mut rng).unwrap();
    let mut accepted = 0;
    let iters = 100;
    for _ in 0..iters {
        let (s, acc) = pimh_sweep(&state, &tg, 10_000, &mut rng).unwrap();
        accepted += usize::from(acc);
        state = s;
    }
    assert!(accepted as f64 / iters as f64 > 0.9, "{accepted}/{iters}");
}

#[test]
fn mh_rejuvenation_reproduces_kalman_means() {
    let spec = LgssmSpec::scalar(0.9, 0.4, 1.0, 0.6, 0.0, 1.0).unwrap();
    let mut rng = RandomSource::new(31);
    let (xs, ys) = simulate_data(&spec, 15, &mut rng);
    let oracle = kalman_smoother_oracle(&spec, &ys).unwrap();
    let tg = SsmTarget::new(spec.clone(), ys).unwrap();
    let plan = RejuvenationPlan::new(2).unwrap();
    let bridge = mh_rejuvenation_kernel(
        GaussianBridgeProposal::new(&spec, 2).unwrap(),
        ProposalWeights::Filter,
        1,
    );
    let prior = mh_rejuvenation_kernel(PriorSegmentProposal, ProposalWeights::Uniform, 2);
    for (name, kernel) in [
        ("bridge", &bridge as &dyn pgas::kernels::RejuvenationKernel),
        ("prior", &prior),
    ] {
        let (means, ses) = chain_moments(
            |r, rng| pgas_rejuvenated_sweep(r, &tg, 4, &plan, kernel, rng).unwrap(),
            xs.clone(),
            500,
            20_000,
            32,
        );
        for t in 0..15 {
            let z = (means[t] - oracle.means[t][0]) / ses[t];
            assert!(z.abs() < 4.0, "{name}, t = {t}: z = {z}");
        }
    }
}

#[test]
fn gibbs_scale_parameter_matches_grid_posterior() {
    // x' = 0.8 x + √θ v, y = x + 0.5 e, θ ~ IG(2, 0.5).
    let (a, r, p0) = (0.8, 0.5, 1.0);
    let (a0, b0) = (2.0, 0.5);
    let model = |theta: f64| LgssmSpec::scalar(a, theta.sqrt(), 1.0, r, 0.0, p0).unwrap();
    let mut rng = RandomSource::new(41);
    let horizon = 30;
    let (xs, ys) = simulate_data(&model(0.3), horizon, &mut rng);

    // Quadrature over θ of prior × Kalman likelihood.
    let grid: Vec<f64> = (1..=4000).map(|k| k as f64 * 5e-4).collect();
    let log_post: Vec<f64> = grid
        .iter()
        .map(|&th| {
            let prior = -(a0 + 1.0) * th.ln() - b0 / th;
            prior + kalman_filter(&model(th), &ys).unwrap().log_likelihood
        })
        .collect();
    let m = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_post.iter().map(|v| (v - m).exp()).collect();
    let oracle = grid.iter().zip(&w).map(|(t, w)| t * w).sum::<f64>() / w.iter().sum::<f64>();

    let theta_draw = |x: &Trajectory, rng: &mut RandomSource| -> Result<f64> {
        let ss: f64 = (1..x.len())
            .map(|t| (x.state(t)[0] - a * x.state(t - 1)[0]).powi(2))
            .sum();
        let shape = a0 + 0.5 * (x.len() - 1) as f64;
        let rate = b0 + 0.5 * ss;
        let g: f64 = rand_distr::Distribution::sample(
            &rand_distr::Gamma::new(shape, 1.0 / rate).unwrap(),
            rng,
        );
        Ok(1.0 / g)
    };
    let chain = gibbs_loop(
        theta_draw,
        |th: &f64, x: &Trajectory, rng: &mut RandomSource| {
            pgas_sweep(x, &SsmTarget::new(model(*th), ys.clone())?, 15, rng)
        },
        0.3,
        xs,
        30_000,
        &mut rng,
    )
    .unwrap();
    let kept = &chain.thetas[1000..];
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    let se = batch_means_se(kept, 50).unwrap();
    assert!(
        (mean - oracle).abs() < 3.0 * se,
        "chain {mean} ± {se}, grid {oracle}"
    );
}

#[test]
fn fixed_parameter_gibbs_is_plain_state_sampling() {
    let spec = LgssmSpec::scalar(0.5, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
    let mut rng = RandomSource::new(5);
    let (xs, ys) = simulate_data(&spec, 6, &mut rng);
    let tg = SsmTarget::new(spec, ys).unwrap();
    let mut r1 = RandomSource::new(6);
    let chain = gibbs_loop(
        |_: &Trajectory, _: &mut RandomSource| Ok(()),
        |_: &(), x: &Trajectory, rng: &mut RandomSource| pgas_sweep(x, &tg, 5, rng),
        (),
        xs.clone(),
        20,
        &mut r1,
    )
    .unwrap();
    let mut r2 = RandomSource::new(6);
    let mut x = xs;
    for out in &chain.sweeps {
        x = pgas_sweep(&x, &tg, 5, &mut r2).unwrap().trajectory;
        assert_eq!(out.trajectory, x);
    }
}

#[test]
fn lorenz_refuses_density_based_ancestor_sampling() {
    let spec = Lorenz63Spec::benchmark();
    let mut rng = RandomSource::new(8);
    let (xs, ys) = simulate_data(&spec, 5, &mut rng);
    let tg = SsmTarget::new(spec, ys).unwrap();
    let mut sys = ParticleSystem::new(3, 3, 5);
    pgas::smc::smc_step(&mut sys, 0, &tg, None, &mut rng).unwrap();
    assert_eq!(
        ancestor_sampling_logweights(&sys, 1, &xs, &tg).unwrap_err(),
        Error::IntractableTransition
    );
    assert_eq!(
        pgas_sweep(&xs, &tg, 3, &mut rng).unwrap_err(),
        Error::IntractableTransition
    );
}

/// LGSSM exposed as a simulator, counting transition-density calls.
struct Counting {
    inner: LgssmSpec,
    density_calls: Cell<usize>,
}

impl StateSpaceModel for Counting {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn sample_initial(&self, rng: &mut RandomSource, out: &mut [f64]) {
        self.inner.sample_initial(rng, out)
    }

    fn sample_transition(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]) {
        self.inner.sample_transition(x, rng, out)
    }

    fn transition_logpdf(&self, x: &[f64], x_next: &[f64]) -> Result<f64> {
        self.density_calls.set(self.density_calls.get() + 1);
        self.inner.transition_logpdf(x, x_next)
    }

    fn observation_logpdf(&self, y: &[f64], x: &[f64]) -> f64 {
        self.inner.observation_logpdf(y, x)
    }

    fn sample_observation(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]) {
        self.inner.sample_observation(x, rng, out)
    }
}

#[test]
fn abc_sweeps_never_evaluate_the_transition_density() {
    let inner = LgssmSpec::scalar(0.9, 0.5, 1.0, 0.5, 0.0, 1.0).unwrap();
    let mut rng = RandomSource::new(9);
    let (xs, ys) = simulate_data(&inner, 20, &mut rng);
    let tg = SsmTarget::new(
        Counting {
            inner,
            density_calls: Cell::new(0),
        },
        ys,
    )
    .unwrap();
    let mut r = xs;
    for eps in [0.0, 0.1, 10.0] {
        let kernel = AbcKernel::new(eps).unwrap();
        for _ in 0..20 {
            r = pgas_abc_sweep(&r, &tg, 10, &kernel, &mut rng)
                .unwrap()
                .trajectory;
        }
    }
    assert_eq!(tg.model().density_calls.get(), 0);
}

#[test]
fn small_bandwidth_abc_matches_kalman_means() {
    let spec = LgssmSpec::scalar(0.9, 0.5, 1.0, 0.5, 0.0, 1.0).unwrap();
    let mut rng = RandomSource::new(10);
    let (xs, ys) = simulate_data(&spec, 20, &mut rng);
    let oracle = kalman_smoother_oracle(&spec, &ys).unwrap();
    let tg = SsmTarget::new(spec, ys).unwrap();
    let kernel = AbcKernel::new(1e-4).unwrap();
    let (means, ses) = chain_moments(
        |r, rng| pgas_abc_sweep(r, &tg, 20, &kernel, rng).unwrap(),
        xs,
        500,
        20_000,
        11,
    );
    for t in 0..20 {
        let z = (means[t] - oracle.means[t][0]) / ses[t];
        assert!(z.abs() < 3.0, "t = {t}: z = {z}");
    }
}

#[test]
fn identity_kernel_rate_equals_pg_rate_on_degenerate_model() {
    let spec = ArSsmSpec::benchmark();
    let mut rng = RandomSource::new(12);
    let (xs, ys) = simulate_data(&spec, 40, &mut rng);
    let tg = SsmTarget::new(spec, ys).unwrap();
    let plan = RejuvenationPlan::new(3).unwrap();
    let mut logs = [Vec::new(), Vec::new(), Vec::new()];
    let mut refs = [xs.clone(), xs.clone(), xs];
    for _ in 0..50 {
        let outs = [
            pg_sweep(&refs[0], &tg, 10, &mut rng).unwrap(),
            pgas_sweep(&refs[1], &tg, 10, &mut rng).unwrap(),
            pgas_rejuvenated_sweep(&refs[2], &tg, 10, &plan, &IdentityKernel, &mut rng).unwrap(),
        ];
        for (k, o) in outs.into_iter().enumerate() {
            refs[k] = o.trajectory;
            logs[k].push(o.ancestor_changed);
        }
    }
    for log in &logs {
        assert!(update_rate(log).unwrap().iter().all(|r| *r == 0.0));
    }
}
