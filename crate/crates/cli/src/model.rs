use nalgebra::{DMatrix, DVector};

use pgas::models::{
    ArSsmSpec, LgssmSpec, Lorenz63Spec, StateSpaceModel, TrackingSpec, TwoStateHmm,
};
use pgas::{RandomSource, Trajectory};

use crate::config::ModelConfig;
use crate::error::CliError;

/// A model block turned into a model.
pub enum BuiltModel {
    Lgssm(LgssmSpec),
    Ar(ArSsmSpec),
    Lorenz(Lorenz63Spec),
    Tracking(TrackingSpec),
    TwoState(TwoStateHmm),
}

fn probability(name: &str, p: f64) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(CliError::Validation(format!("{name} must lie in [0, 1]")))
    }
}

impl BuiltModel {
    pub fn build(cfg: &ModelConfig) -> Result<Self, CliError> {
        Ok(match cfg {
            ModelConfig::Lgssm { a, q, h, r, m0, p0 } => {
                BuiltModel::Lgssm(LgssmSpec::scalar(*a, *q, *h, *r, *m0, *p0)?)
            }
            ModelConfig::Ar {
                alpha,
                sigma_v,
                beta,
                sigma_e,
                nu,
            } => BuiltModel::Ar(ArSsmSpec::new(
                alpha.clone(),
                *sigma_v,
                *beta,
                *sigma_e,
                *nu,
            )?),
            ModelConfig::Lorenz {
                sigma,
                rho,
                beta,
                noise_std,
                obs_std,
                dt,
                substeps,
            } => {
                let spec = Lorenz63Spec {
                    sigma: *sigma,
                    rho: *rho,
                    beta: *beta,
                    noise_std: [*noise_std; 3],
                    obs_std: *obs_std,
                    dt: *dt,
                    substeps: *substeps,
                };
                spec.validate()?;
                BuiltModel::Lorenz(spec)
            }
            ModelConfig::Tracking {
                theta,
                dt,
                sigma_bearing,
                sigma_elevation,
                sigma_range,
                m0,
                p0_diag,
                prior_shape,
                prior_scale,
            } => {
                if m0.len() != 6 || p0_diag.len() != 6 {
                    return Err(CliError::Validation(
                        "tracking m0 and p0_diag need 6 entries".into(),
                    ));
                }
                BuiltModel::Tracking(TrackingSpec::build(
                    *theta,
                    *dt,
                    (*sigma_bearing, *sigma_elevation, *sigma_range),
                    m0.clone(),
                    DMatrix::from_diagonal(&DVector::from_column_slice(p0_diag)),
                    (*prior_shape, *prior_scale),
                )?)
            }
            ModelConfig::TwoState {
                p_initial,
                p_transition,
                p_emission,
            } => BuiltModel::TwoState(TwoStateHmm {
                p_initial: probability("p_initial", *p_initial)?,
                p_transition: [
                    probability("p_transition", p_transition[0])?,
                    probability("p_transition", p_transition[1])?,
                ],
                p_emission: [
                    probability("p_emission", p_emission[0])?,
                    probability("p_emission", p_emission[1])?,
                ],
            }),
        })
    }

    pub fn as_ssm(&self) -> &dyn StateSpaceModel {
        match self {
            BuiltModel::Lgssm(m) => m,
            BuiltModel::Ar(m) => m,
            BuiltModel::Lorenz(m) => m,
            BuiltModel::Tracking(m) => m,
            BuiltModel::TwoState(m) => m,
        }
    }

    pub fn simulate(&self, horizon: usize, rng: &mut RandomSource) -> (Trajectory, Trajectory) {
        pgas::models::simulate_data(self.as_ssm(), horizon, rng)
    }
}
