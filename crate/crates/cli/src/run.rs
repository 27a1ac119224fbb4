//! `run`: execute one configured sampler (or an epsilon sweep) on a dataset and
//! write the chain, its diagnostics and a manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use pgas::abc::{pgas_abc_sweep, AbcKernel, SummaryStatistic};
use pgas::dataset::Dataset;
use pgas::diagnostics::{acf, batch_means_se, histogram};
use pgas::kernels::{
    cis_rejuvenation_kernel, mh_rejuvenation_kernel, particle_filter, pg_sweep,
    pgas_rejuvenated_sweep, pgas_sweep, pimh_sweep, GaussianBridgeProposal, PimhState,
    PriorSegmentProposal, ProposalWeights, RandomWalkSegmentProposal, RejuvenationKernel,
    RejuvenationPlan, SweepOutput,
};
use pgas::models::{tracking_theta_conditional, SsmTarget, StateSpaceModel, TrackingSpec};
use pgas::smc::{trace_ancestry, Categorical, TargetSequence, WeightMonitor};
use pgas::{RandomSource, Trajectory};

use crate::config::{
    Epsilon, ExperimentConfig, KernelChoice, ProposalChoice, SamplerConfig, Variant, WeightChoice,
};
use crate::error::CliError;
use crate::model::BuiltModel;

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

/// Check that the dataset was generated by the configured model family.
fn check_dataset(cfg: &ExperimentConfig, model: &BuiltModel, ds: &Dataset) -> Result<(), CliError> {
    let ssm = model.as_ssm();
    if ds.meta.model != cfg.model.name() {
        return Err(CliError::Validation(format!(
            "dataset was simulated from model '{}', config has '{}'",
            ds.meta.model,
            cfg.model.name()
        )));
    }
    if ds.meta.state_dim != ssm.state_dim() || ds.meta.obs_dim != ssm.obs_dim() {
        return Err(CliError::Validation(format!(
            "dataset dimensions ({}, {}) do not match the model ({}, {})",
            ds.meta.state_dim,
            ds.meta.obs_dim,
            ssm.state_dim(),
            ssm.obs_dim()
        )));
    }
    Ok(())
}

pub fn cmd_run(
    cfg: &ExperimentConfig,
    dataset: &Path,
    out: &Path,
    threads: Option<usize>,
) -> Result<(), CliError> {
    cfg.validate_sampler()?;
    let model = BuiltModel::build(&cfg.model)?;
    let ds = Dataset::read(dataset)?;
    check_dataset(cfg, &model, &ds)?;
    let sampler = cfg.sampler()?;

    let eps = match &sampler.epsilon {
        Some(Epsilon::Many(list)) => list.clone(),
        _ => return run_single(cfg, dataset, &ds, out),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    let children: Vec<(PathBuf, ExperimentConfig)> = eps
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let mut child = cfg.clone();
            child.stream = Some(i as u64);
            child.output = Some(out.join(format!("eps-{e}")));
            child.sampler.as_mut().expect("validated").epsilon = Some(Epsilon::One(e));
            (out.join(format!("eps-{e}")), child)
        })
        .collect();
    fs::create_dir_all(out)?;
    let results: Vec<Result<(), CliError>> = pool.install(|| {
        children
            .par_iter()
            .map(|(dir, child)| run_single(child, dataset, &ds, dir))
            .collect()
    });
    let mut index = String::from("epsilon,stream,directory,status\n");
    for ((e, (dir, child)), r) in eps.iter().zip(&children).zip(&results) {
        let status = if r.is_ok() { "complete" } else { "failed" };
        index.push_str(&format!(
            "{e},{},{},{status}\n",
            child.stream.expect("set above"),
            dir.file_name().expect("named").to_string_lossy()
        ));
    }
    fs::write(out.join("sweep.csv"), index)?;
    results.into_iter().collect()
}

/// Target plus the pieces of the sampler that depend on the model parameters.
struct Instance<M: StateSpaceModel> {
    target: SsmTarget<M>,
    bridge: Option<GaussianBridgeProposal>,
}

impl<M: StateSpaceModel> Instance<M> {
    fn plain(model: M, ys: &Trajectory) -> Result<Self, CliError> {
        Ok(Self {
            target: SsmTarget::new(model, ys.clone())?,
            bridge: None,
        })
    }
}

impl<M: pgas::models::LinearGaussianModel> Instance<M> {
    fn linear(model: M, ys: &Trajectory, s: &SamplerConfig) -> Result<Self, CliError> {
        let bridge = match (s.variant, s.proposal, s.ell) {
            (Variant::PgasRejuv, Some(ProposalChoice::Bridge), Some(ell)) => {
                Some(GaussianBridgeProposal::new(&model, ell)?)
            }
            _ => None,
        };
        Ok(Self {
            target: SsmTarget::new(model, ys.clone())?,
            bridge,
        })
    }
}

fn kernel_for<'a>(
    s: &SamplerConfig,
    bridge: Option<&'a GaussianBridgeProposal>,
) -> Box<dyn RejuvenationKernel + 'a> {
    let weights = match s.proposal_weights {
        WeightChoice::Filter => ProposalWeights::Filter,
        WeightChoice::Uniform => ProposalWeights::Uniform,
    };
    let bridge = || {
        bridge
            .expect("bridge proposal built for linear models")
            .clone()
    };
    match (s.kernel.expect("validated"), s.proposal.expect("validated")) {
        (KernelChoice::Cis, ProposalChoice::Bridge) => {
            Box::new(cis_rejuvenation_kernel(bridge(), weights, s.m_inner))
        }
        (KernelChoice::Cis, _) => Box::new(cis_rejuvenation_kernel(
            PriorSegmentProposal,
            weights,
            s.m_inner,
        )),
        (KernelChoice::Mh, ProposalChoice::Bridge) => {
            Box::new(mh_rejuvenation_kernel(bridge(), weights, s.mh_steps))
        }
        (KernelChoice::Mh, ProposalChoice::Prior) => Box::new(mh_rejuvenation_kernel(
            PriorSegmentProposal,
            weights,
            s.mh_steps,
        )),
        (KernelChoice::Mh, ProposalChoice::RandomWalk) => Box::new(mh_rejuvenation_kernel(
            RandomWalkSegmentProposal {
                step: s.rw_step,
                mask: None,
            },
            weights,
            s.mh_steps,
        )),
    }
}

/// One sweep of the configured variant. PIMH has no ancestor updates; its
/// accept/reject decision is reported in the kernel column at every `t`.
fn sweep<M: StateSpaceModel>(
    s: &SamplerConfig,
    inst: &Instance<M>,
    abc: Option<&AbcKernel>,
    pimh: &mut Option<PimhState>,
    reference: &Trajectory,
    rng: &mut RandomSource,
) -> pgas::Result<SweepOutput> {
    let n = s.particles;
    let target = &inst.target;
    match s.variant {
        Variant::Pg => pg_sweep(reference, target, n, rng),
        Variant::Pgas => pgas_sweep(reference, target, n, rng),
        Variant::PgasRejuv => {
            let plan = RejuvenationPlan::new(s.ell.expect("validated"))?;
            let kernel = kernel_for(s, inst.bridge.as_ref());
            pgas_rejuvenated_sweep(reference, target, n, &plan, kernel.as_ref(), rng)
        }
        Variant::PgasAbc => pgas_abc_sweep(reference, target, n, abc.expect("validated"), rng),
        Variant::Pimh => {
            let current = match pimh.take() {
                Some(c) => c,
                None => PimhState::initialise(target, n, rng)?,
            };
            let (next, accepted) = pimh_sweep(&current, target, n, rng)?;
            let horizon = next.trajectory.len();
            let out = SweepOutput {
                trajectory: next.trajectory.clone(),
                ancestor_changed: vec![false; horizon],
                kernel_accepted: vec![accepted; horizon],
                max_log_weight: f64::NEG_INFINITY,
                reference: next.trajectory.clone(),
            };
            *pimh = Some(next);
            Ok(out)
        }
    }
}

fn initial_reference(
    target: &dyn TargetSequence,
    n: usize,
    rng: &mut RandomSource,
) -> pgas::Result<Trajectory> {
    let (system, _) = particle_filter(target, n, rng)?;
    let k = Categorical::from_log_weights(system.log_weights(target.horizon() - 1))?.draw(rng);
    Ok(trace_ancestry(&system, k)?.0)
}

/// Everything recorded while the chain runs.
struct Recorder {
    chain: BufWriter<File>,
    horizon: usize,
    dim: usize,
    burn_in: usize,
    thinning: usize,
    kept_rows: Vec<Vec<f64>>,
    kept_thetas: Vec<f64>,
    ancestor_counts: Vec<usize>,
    kernel_counts: Vec<usize>,
    post_burn_sweeps: usize,
    completed: usize,
    monitor: WeightMonitor,
}

impl Recorder {
    fn new(
        dir: &Path,
        s: &SamplerConfig,
        horizon: usize,
        dim: usize,
        gibbs: bool,
    ) -> Result<Self, CliError> {
        let mut chain = BufWriter::new(File::create(dir.join("chain.csv"))?);
        let mut header = vec!["iteration".to_string(), "burn_in".to_string()];
        if gibbs {
            header.push("theta".into());
        }
        for t in 0..horizon {
            for c in 0..dim {
                header.push(format!("x{t}_{c}"));
            }
        }
        writeln!(chain, "{}", header.join(","))?;
        Ok(Self {
            chain,
            horizon,
            dim,
            burn_in: s.burn_in,
            thinning: s.thinning,
            kept_rows: Vec::new(),
            kept_thetas: Vec::new(),
            ancestor_counts: vec![0; horizon],
            kernel_counts: vec![0; horizon],
            post_burn_sweeps: 0,
            completed: 0,
            monitor: WeightMonitor::new(s.weight_bound),
        })
    }

    fn record(&mut self, i: usize, out: &SweepOutput, theta: Option<f64>) -> Result<(), CliError> {
        self.completed = i + 1;
        self.monitor.observe(&[out.max_log_weight]);
        let burning = i < self.burn_in;
        if !burning {
            self.post_burn_sweeps += 1;
            for t in 0..self.horizon {
                self.ancestor_counts[t] += usize::from(out.ancestor_changed[t]);
                self.kernel_counts[t] += usize::from(out.kernel_accepted[t]);
            }
        }
        if (i + 1) % self.thinning != 0 {
            return Ok(());
        }
        let mut line = format!("{i},{}", u8::from(burning));
        if let Some(th) = theta {
            line.push_str(&format!(",{th:?}"));
        }
        for v in out.trajectory.as_flat() {
            line.push_str(&format!(",{v:?}"));
        }
        writeln!(self.chain, "{line}")?;
        if !burning {
            self.kept_rows.push(out.trajectory.as_flat().to_vec());
            if let Some(th) = theta {
                self.kept_thetas.push(th);
            }
        }
        Ok(())
    }

    fn write_summaries(&mut self, dir: &Path, s: &SamplerConfig) -> Result<(), CliError> {
        self.chain.flush()?;
        if self.post_burn_sweeps == 0 {
            return Ok(());
        }
        let sweeps = self.post_burn_sweeps as f64;
        let mut rates = String::from("t,ancestor_update_rate,kernel_acceptance_rate\n");
        for t in 0..self.horizon {
            rates.push_str(&format!(
                "{t},{:?},{:?}\n",
                self.ancestor_counts[t] as f64 / sweeps,
                self.kernel_counts[t] as f64 / sweeps
            ));
        }
        fs::write(dir.join("rates.csv"), rates)?;
        if self.kept_rows.len() < 2 * s.batches {
            return Ok(());
        }

        let mut summary = String::from("t,component,mean,batch_se\n");
        let mut acf_csv = String::from("t,component");
        for lag in 0..=s.max_lag {
            acf_csv.push_str(&format!(",lag{lag}"));
        }
        acf_csv.push('\n');
        let mut hist = String::from("t,component,left,right,count\n");
        let mut column = vec![0.0; self.kept_rows.len()];
        let max_lag = s.max_lag.min(column.len() - 1);
        for t in 0..self.horizon {
            for c in 0..self.dim {
                for (x, row) in column.iter_mut().zip(&self.kept_rows) {
                    *x = row[t * self.dim + c];
                }
                let mean = column.iter().sum::<f64>() / column.len() as f64;
                let se = batch_means_se(&column, s.batches)?;
                summary.push_str(&format!("{t},{c},{mean:?},{se:?}\n"));
                acf_csv.push_str(&format!("{t},{c}"));
                match acf(&column, max_lag) {
                    Ok(r) => r.iter().for_each(|v| acf_csv.push_str(&format!(",{v:?}"))),
                    Err(pgas::Error::ZeroVariance) => {
                        (0..=max_lag).for_each(|_| acf_csv.push_str(",NaN"))
                    }
                    Err(e) => return Err(e.into()),
                }
                acf_csv.push('\n');
                let h = histogram(&column)?;
                for (k, count) in h.counts.iter().enumerate() {
                    hist.push_str(&format!(
                        "{t},{c},{:?},{:?},{count}\n",
                        h.edges[k],
                        h.edges[k + 1]
                    ));
                }
            }
        }
        fs::write(dir.join("summary.csv"), summary)?;
        fs::write(dir.join("acf.csv"), acf_csv)?;
        fs::write(dir.join("histograms.csv"), hist)?;
        if !self.kept_thetas.is_empty() {
            let th = &self.kept_thetas;
            let mean = th.iter().sum::<f64>() / th.len() as f64;
            let se = batch_means_se(th, s.batches)?;
            fs::write(
                dir.join("theta_summary.csv"),
                format!("mean,batch_se\n{mean:?},{se:?}\n"),
            )?;
        }
        Ok(())
    }

    fn manifest(
        &self,
        cfg: &ExperimentConfig,
        dataset: &Path,
        ds: &Dataset,
        error: Option<&CliError>,
    ) -> String {
        let mut m = String::new();
        m.push_str(&format!(
            "status = {}\n",
            if error.is_some() {
                "incomplete"
            } else {
                "complete"
            }
        ));
        if let Some(e) = error {
            m.push_str(&format!("error = {e}\n"));
        }
        m.push_str(&format!("completed_iterations = {}\n", self.completed));
        m.push_str(&format!("dataset = {}\n", dataset.display()));
        m.push_str(&format!(
            "dataset_model = {}\ndataset_seed = {}\ndataset_horizon = {}\n",
            ds.meta.model, ds.meta.seed, ds.meta.horizon
        ));
        match self.monitor.max_log_weight {
            Some(w) => m.push_str(&format!("max_log_weight = {w}\n")),
            None => m.push_str("max_log_weight = not monitored\n"),
        }
        if let Some(b) = self.monitor.bound {
            m.push_str(&format!(
                "weight_bound = {b}\nweight_bound_exceeded = {}\n",
                self.monitor.exceeded
            ));
        }
        if self.post_burn_sweeps > 0 {
            let denom = (self.post_burn_sweeps * self.horizon) as f64;
            m.push_str(&format!(
                "mean_ancestor_update_rate = {}\nmean_kernel_acceptance_rate = {}\n",
                self.ancestor_counts.iter().sum::<usize>() as f64 / denom,
                self.kernel_counts.iter().sum::<usize>() as f64 / denom
            ));
        }
        m.push_str("\n# configuration\n");
        m.push_str(&cfg.to_toml());
        m
    }
}

struct Gibbs<'a, M: StateSpaceModel> {
    respec: &'a dyn Fn(f64) -> Result<Instance<M>, CliError>,
    draw: &'a dyn Fn(&Trajectory, &mut RandomSource) -> pgas::Result<f64>,
    theta0: f64,
}

fn drive<M: StateSpaceModel>(
    s: &SamplerConfig,
    inst: Instance<M>,
    gibbs: Option<Gibbs<'_, M>>,
    rec: &mut Recorder,
    rng: &mut RandomSource,
) -> Result<(), CliError> {
    let abc = match &s.epsilon {
        Some(Epsilon::One(e)) => Some(match &s.summary_scale {
            Some(scale) => AbcKernel::with_summary(*e, SummaryStatistic::Scaled(scale.clone()))?,
            None => AbcKernel::new(*e)?,
        }),
        _ => None,
    };
    let mut inst = inst;
    let mut theta = gibbs.as_ref().map(|g| g.theta0);
    let mut pimh = None;
    let mut reference = if s.variant == Variant::Pimh {
        Trajectory::zeros(inst.target.state_dim(), inst.target.horizon())
    } else {
        initial_reference(&inst.target, s.particles, &mut rng.fork())?
    };
    for i in 0..s.iterations {
        let out = sweep(s, &inst, abc.as_ref(), &mut pimh, &reference, rng)?;
        if let Some(g) = &gibbs {
            let th = (g.draw)(&out.trajectory, rng)?;
            inst = (g.respec)(th)?;
            theta = Some(th);
        }
        rec.record(i, &out, theta)?;
        reference = out.trajectory;
        if (i + 1) % 1000 == 0 {
            log::info!("iteration {}/{}", i + 1, s.iterations);
        }
    }
    Ok(())
}

fn run_single(
    cfg: &ExperimentConfig,
    dataset: &Path,
    ds: &Dataset,
    dir: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    fs::create_dir_all(dir)?;
    let marker = dir.join(INCOMPLETE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    let s = cfg.sampler()?;
    let model = BuiltModel::build(&cfg.model)?;
    let ys = &ds.observations;
    let mut rec = Recorder::new(dir, s, ds.meta.horizon, ds.meta.state_dim, s.gibbs_theta)?;
    let mut rng = cfg.rng();

    let result = match model {
        BuiltModel::Lgssm(m) => {
            Instance::linear(m, ys, s).and_then(|i| drive(s, i, None, &mut rec, &mut rng))
        }
        BuiltModel::Ar(m) => {
            Instance::linear(m, ys, s).and_then(|i| drive(s, i, None, &mut rec, &mut rng))
        }
        BuiltModel::Lorenz(m) => {
            Instance::plain(m, ys).and_then(|i| drive(s, i, None, &mut rec, &mut rng))
        }
        BuiltModel::TwoState(m) => {
            Instance::plain(m, ys).and_then(|i| drive(s, i, None, &mut rec, &mut rng))
        }
        BuiltModel::Tracking(m) => {
            let respec = |th: f64| -> Result<Instance<TrackingSpec>, CliError> {
                Instance::linear(m.with_theta(th)?, ys, s)
            };
            let draw =
                |x: &Trajectory, rng: &mut RandomSource| tracking_theta_conditional(&m, x, rng);
            let gibbs = s.gibbs_theta.then(|| Gibbs {
                respec: &respec,
                draw: &draw,
                theta0: m.theta,
            });
            Instance::linear(m.clone(), ys, s).and_then(|i| drive(s, i, gibbs, &mut rec, &mut rng))
        }
    };
    let result = result.and_then(|()| rec.write_summaries(dir, s));
    let manifest = rec.manifest(cfg, dataset, ds, result.as_ref().err());
    fs::write(dir.join("manifest.txt"), manifest)?;
    fs::write(
        dir.join("timing.txt"),
        format!(
            "wall_clock_seconds = {:.3}\n",
            started.elapsed().as_secs_f64()
        ),
    )?;
    if let Err(e) = &result {
        rec.chain.flush()?;
        fs::write(&marker, format!("{e}\n"))?;
    }
    result
}
