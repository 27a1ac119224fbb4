//! Experiment configuration. One TOML file holds the model block, the sampler
//! block, the seed and the output directory; unknown keys are errors.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// RNG stream of `seed`; set on the runs of an epsilon sweep.
    #[serde(default)]
    pub stream: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Number of time steps to simulate. Runs take the horizon from the dataset.
    #[serde(default)]
    pub horizon: Option<usize>,
    pub model: ModelConfig,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
}

/// Model block, selected by `name`. Omitted parameters take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Scalar linear-Gaussian model; `q` and `r` are standard deviations.
    Lgssm {
        #[serde(default = "d_lgssm_a")]
        a: f64,
        #[serde(default = "one")]
        q: f64,
        #[serde(default = "one")]
        h: f64,
        #[serde(default = "one")]
        r: f64,
        #[serde(default)]
        m0: f64,
        #[serde(default = "one")]
        p0: f64,
    },
    Ar {
        #[serde(default = "d_ar_alpha")]
        alpha: Vec<f64>,
        #[serde(default = "one")]
        sigma_v: f64,
        #[serde(default = "half")]
        beta: f64,
        #[serde(default = "half")]
        sigma_e: f64,
        #[serde(default = "three")]
        nu: f64,
    },
    Lorenz {
        #[serde(default = "d_lorenz_sigma")]
        sigma: f64,
        #[serde(default = "d_lorenz_rho")]
        rho: f64,
        #[serde(default = "d_lorenz_beta")]
        beta: f64,
        /// Diffusion standard deviation, shared by the three coordinates.
        #[serde(default = "d_lorenz_noise")]
        noise_std: f64,
        #[serde(default = "one")]
        obs_std: f64,
        #[serde(default = "d_lorenz_dt")]
        dt: f64,
        #[serde(default = "d_lorenz_substeps")]
        substeps: usize,
    },
    Tracking {
        #[serde(default = "d_tracking_theta")]
        theta: f64,
        #[serde(default = "one")]
        dt: f64,
        #[serde(default = "d_tracking_angle")]
        sigma_bearing: f64,
        #[serde(default = "d_tracking_angle")]
        sigma_elevation: f64,
        #[serde(default = "d_tracking_range")]
        sigma_range: f64,
        #[serde(default = "d_tracking_m0")]
        m0: Vec<f64>,
        /// Diagonal of the initial covariance.
        #[serde(default = "d_tracking_p0")]
        p0_diag: Vec<f64>,
        #[serde(default = "one")]
        prior_shape: f64,
        #[serde(default = "one")]
        prior_scale: f64,
    },
    TwoState {
        #[serde(default = "half")]
        p_initial: f64,
        #[serde(default = "d_two_state_transition")]
        p_transition: [f64; 2],
        #[serde(default = "d_two_state_emission")]
        p_emission: [f64; 2],
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Pg,
    Pimh,
    Pgas,
    PgasRejuv,
    PgasAbc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    Cis,
    Mh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalChoice {
    /// Gaussian bridge `p(Ξ | x_{t−1}, x'_{t+ℓ})`; linear-Gaussian models only.
    Bridge,
    /// Forward simulation of the window from the ancestor.
    Prior,
    /// Gaussian random walk around the current window (MH only).
    RandomWalk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightChoice {
    Filter,
    Uniform,
}

/// A single bandwidth or a list; a list fans out into one run per value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    One(f64),
    Many(Vec<f64>),
}

impl Epsilon {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Epsilon::One(e) => vec![*e],
            Epsilon::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub variant: Variant,
    pub particles: usize,
    pub iterations: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "d_thinning")]
    pub thinning: usize,
    #[serde(default)]
    pub ell: Option<usize>,
    #[serde(default)]
    pub kernel: Option<KernelChoice>,
    #[serde(default)]
    pub proposal: Option<ProposalChoice>,
    #[serde(default = "d_weights")]
    pub proposal_weights: WeightChoice,
    /// CIS pool size including the current pair; defaults to `particles`.
    #[serde(default)]
    pub m_inner: Option<usize>,
    /// MH steps per time step.
    #[serde(default = "d_mh_steps")]
    pub mh_steps: usize,
    #[serde(default = "d_rw_step")]
    pub rw_step: f64,
    #[serde(default)]
    pub epsilon: Option<Epsilon>,
    /// Per-component scaling of the ABC summary.
    #[serde(default)]
    pub summary_scale: Option<Vec<f64>>,
    /// Alternate state sweeps with draws of θ (tracking model only).
    #[serde(default)]
    pub gibbs_theta: bool,
    #[serde(default = "d_max_lag")]
    pub max_lag: usize,
    #[serde(default = "d_batches")]
    pub batches: usize,
    /// Threshold for the bounded-weight monitor.
    #[serde(default)]
    pub weight_bound: Option<f64>,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn three() -> f64 {
    3.0
}
fn d_lgssm_a() -> f64 {
    0.9
}
fn d_ar_alpha() -> Vec<f64> {
    vec![0.9, -0.8, 0.7, -0.6, 0.5]
}
fn d_lorenz_sigma() -> f64 {
    10.0
}
fn d_lorenz_rho() -> f64 {
    28.0
}
fn d_lorenz_beta() -> f64 {
    8.0 / 3.0
}
fn d_lorenz_noise() -> f64 {
    5f64.sqrt()
}
fn d_lorenz_dt() -> f64 {
    0.01
}
fn d_lorenz_substeps() -> usize {
    10
}
fn d_tracking_theta() -> f64 {
    0.01
}
fn d_tracking_angle() -> f64 {
    0.01
}
fn d_tracking_range() -> f64 {
    0.1
}
fn d_tracking_m0() -> Vec<f64> {
    vec![100.0, 100.0, 20.0, 1.0, -1.0, 0.0]
}
fn d_tracking_p0() -> Vec<f64> {
    vec![10.0, 10.0, 10.0, 1.0, 1.0, 1.0]
}
fn d_two_state_transition() -> [f64; 2] {
    [0.2, 0.8]
}
fn d_two_state_emission() -> [f64; 2] {
    [0.2, 0.8]
}
fn d_thinning() -> usize {
    1
}
fn d_weights() -> WeightChoice {
    WeightChoice::Filter
}
fn d_mh_steps() -> usize {
    1
}
fn d_rw_step() -> f64 {
    0.1
}
fn d_max_lag() -> usize {
    50
}
fn d_batches() -> usize {
    20
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Lgssm { .. } => "lgssm",
            ModelConfig::Ar { .. } => "ar",
            ModelConfig::Lorenz { .. } => "lorenz",
            ModelConfig::Tracking { .. } => "tracking",
            ModelConfig::TwoState { .. } => "two-state",
        }
    }

    pub fn is_linear_gaussian(&self) -> bool {
        matches!(
            self,
            ModelConfig::Lgssm { .. } | ModelConfig::Ar { .. } | ModelConfig::Tracking { .. }
        )
    }

    pub fn has_transition_density(&self) -> bool {
        !matches!(self, ModelConfig::Lorenz { .. })
    }

    /// Default horizon of the corresponding study.
    pub fn default_horizon(&self) -> usize {
        match self {
            ModelConfig::Lgssm { .. } => 100,
            ModelConfig::Ar { .. } => 500,
            ModelConfig::Lorenz { .. } => 1000,
            ModelConfig::Tracking { .. } => 100,
            ModelConfig::TwoState { .. } => 10,
        }
    }

    /// Parameters as a TOML table, for the dataset sidecar.
    pub fn parameters(&self) -> toml::Table {
        let mut table = toml::Table::try_from(self).expect("model block serialises");
        table.remove("name");
        table
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn rng(&self) -> pgas::RandomSource {
        let base = pgas::RandomSource::new(self.seed);
        match self.stream {
            Some(s) => base.split(s),
            None => base,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Sampler block, required by `run`.
    pub fn sampler(&self) -> Result<&SamplerConfig, CliError> {
        self.sampler
            .as_ref()
            .ok_or_else(|| invalid("missing [sampler] block"))
    }

    /// Checks that do not need the dataset.
    pub fn validate_sampler(&self) -> Result<(), CliError> {
        let s = self.sampler()?;
        let model = &self.model;
        if s.particles < 2 {
            return Err(invalid("sampler.particles must be at least 2"));
        }
        if s.thinning == 0 {
            return Err(invalid("sampler.thinning must be at least 1"));
        }
        if s.iterations <= s.burn_in {
            return Err(invalid("sampler.iterations must exceed sampler.burn_in"));
        }
        let kept_rows = (s.burn_in..s.iterations)
            .filter(|i| (i + 1) % s.thinning == 0)
            .count();
        if s.batches < 10 || kept_rows < 2 * s.batches {
            return Err(invalid(format!(
                "need sampler.batches >= 10 and at least two stored post-burn-in rows per batch ({kept_rows} rows, {} batches)",
                s.batches
            )));
        }
        let rejuv_only = [
            ("ell", s.ell.is_some()),
            ("kernel", s.kernel.is_some()),
            ("proposal", s.proposal.is_some()),
            ("m_inner", s.m_inner.is_some()),
        ];
        if s.variant != Variant::PgasRejuv {
            if let Some((key, _)) = rejuv_only.iter().find(|(_, set)| *set) {
                return Err(invalid(format!("sampler.{key} only applies to pgas-rejuv")));
            }
        }
        if s.variant != Variant::PgasAbc && (s.epsilon.is_some() || s.summary_scale.is_some()) {
            return Err(invalid(
                "sampler.epsilon and sampler.summary_scale only apply to pgas-abc",
            ));
        }
        match s.variant {
            Variant::Pgas if !model.has_transition_density() => {
                return Err(invalid(format!(
                    "the {} model has no transition density; use pg, pimh or pgas-abc",
                    model.name()
                )))
            }
            Variant::PgasRejuv => {
                if !model.has_transition_density() {
                    return Err(invalid(format!(
                        "the {} model has no transition density; use pg, pimh or pgas-abc",
                        model.name()
                    )));
                }
                let ell = s
                    .ell
                    .ok_or_else(|| invalid("pgas-rejuv needs sampler.ell"))?;
                if ell == 0 {
                    return Err(invalid("sampler.ell must be at least 1"));
                }
                let kernel = s
                    .kernel
                    .ok_or_else(|| invalid("pgas-rejuv needs sampler.kernel"))?;
                let proposal = s
                    .proposal
                    .ok_or_else(|| invalid("pgas-rejuv needs sampler.proposal"))?;
                if proposal == ProposalChoice::Bridge && !model.is_linear_gaussian() {
                    return Err(invalid(format!(
                        "the bridge proposal needs a linear-Gaussian model, not {}",
                        model.name()
                    )));
                }
                if proposal == ProposalChoice::RandomWalk && kernel == KernelChoice::Cis {
                    return Err(invalid(
                        "the random-walk proposal is only valid with kernel = \"mh\"",
                    ));
                }
                if kernel == KernelChoice::Mh && s.m_inner.is_some() {
                    return Err(invalid("sampler.m_inner only applies to kernel = \"cis\""));
                }
                if s.m_inner == Some(0) {
                    return Err(invalid("sampler.m_inner must be at least 1"));
                }
                if s.mh_steps == 0 {
                    return Err(invalid("sampler.mh_steps must be at least 1"));
                }
                if !(s.rw_step > 0.0) {
                    return Err(invalid("sampler.rw_step must be positive"));
                }
            }
            Variant::PgasAbc => {
                let eps = s
                    .epsilon
                    .as_ref()
                    .ok_or_else(|| invalid("pgas-abc needs sampler.epsilon"))?
                    .values();
                if eps.is_empty() || eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                    return Err(invalid("sampler.epsilon must be finite and non-negative"));
                }
            }
            _ => {}
        }
        if s.gibbs_theta && !matches!(model, ModelConfig::Tracking { .. }) {
            return Err(invalid(
                "sampler.gibbs_theta is only available for the tracking model",
            ));
        }
        if let Some(b) = s.weight_bound {
            if !(b > 0.0) {
                return Err(invalid("sampler.weight_bound must be positive"));
            }
        }
        Ok(())
    }
}
