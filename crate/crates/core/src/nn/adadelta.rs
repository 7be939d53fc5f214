use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Minimise (supervised loss).
    Descend,
    /// Maximise (policy-gradient objective).
    Ascend,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Descend => 1.0,
            Direction::Ascend => -1.0,
        }
    }
}

/// Running averages for AdaDelta, one accumulator pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaDeltaState {
    pub rho: f64,
    pub eps: f64,
    pub sq_grad: ModelParams,
    pub sq_update: ModelParams,
}

impl AdaDeltaState {
    pub const DEFAULT_RHO: f64 = 0.95;
    pub const DEFAULT_EPS: f64 = 1e-6;

    pub fn new(params: &ModelParams) -> Self {
        Self::with_hyper(params, Self::DEFAULT_RHO, Self::DEFAULT_EPS)
    }

    pub fn with_hyper(params: &ModelParams, rho: f64, eps: f64) -> Self {
        AdaDeltaState {
            rho,
            eps,
            sq_grad: params.zeros_like(),
            sq_update: params.zeros_like(),
        }
    }

    /// One AdaDelta step, applied to `params` in place.
    ///
    /// E[g^2] <- rho E[g^2] + (1 - rho) g^2
    /// delta   = -sign * sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
    /// E[dx^2] <- rho E[dx^2] + (1 - rho) delta^2
    pub fn apply(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        direction: Direction,
    ) -> Result<()> {
        params.check_same_layout(grads)?;
        params
            .check_same_layout(&self.sq_grad)
            .map_err(|_| Error::ShapeMismatch("optimizer state".into()))?;
        let (rho, eps, sign) = (self.rho, self.eps, direction.sign());
        let tensors = params.tensors.iter_mut().zip(&grads.tensors).zip(
            self.sq_grad
                .tensors
                .iter_mut()
                .zip(self.sq_update.tensors.iter_mut()),
        );
        for ((p, g), (eg, ex)) in tensors {
            for k in 0..p.values.len() {
                let gk = g.values[k];
                let e_g = rho * eg.values[k] + (1.0 - rho) * gk * gk;
                let delta = -sign * ((ex.values[k] + eps).sqrt() / (e_g + eps).sqrt()) * gk;
                eg.values[k] = e_g;
                ex.values[k] = rho * ex.values[k] + (1.0 - rho) * delta * delta;
                p.values[k] += delta;
            }
        }
        Ok(())
    }
}
