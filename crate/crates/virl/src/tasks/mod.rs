//! Benchmark tasks and expert-demonstration generation.
//!
//! A [`Task`] bundles a ground-truth log-density (exact for the
//! random-Gaussians mixture, unnormalized for the grid walker) with the
//! geometry the rest of the pipeline needs: a broad reward prior over its
//! support, and, for the walker, mode centers and an evaluation box.
//! [`make_expert_set`] draws demonstrations by exact ancestral sampling when
//! the target is tractable and by multi-chain elliptical slice sampling
//! otherwise.

mod ess;
mod grid_walker;
mod random_gaussians;

pub use ess::ess_sample;
pub use grid_walker::{
    GridWalkerTask, DEFAULT_LINE_SPACING, DEFAULT_WAYPOINT_VARIANCE, EXPERT_PRIOR_STD,
};
pub use random_gaussians::{
    RandomGaussiansTask, DEFAULT_EIG_MAX, DEFAULT_EIG_MIN, DEFAULT_MEAN_HALFWIDTH,
    DEFAULT_WEIGHT_SHAPE,
};

use ndarray::{Array1, Array2, ArrayView1};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub const DEFAULT_EXPERT_COUNT: usize = 8000;
pub const DEFAULT_ESS_BURN_IN: usize = 1000;
pub const DEFAULT_ESS_THINNING: usize = 10;

#[derive(Debug, Clone)]
pub enum Task<S: Scalar = f64> {
    RandomGaussians(RandomGaussiansTask<S>),
    GridWalker(GridWalkerTask<S>),
}

impl<S: Scalar> Task<S> {
    /// Stable identifier recorded in artifacts and provenance records.
    pub fn id(&self) -> String {
        match self {
            Task::RandomGaussians(t) => {
                format!("random-gaussians/m={}/seed={}", t.components(), t.seed())
            }
            Task::GridWalker(t) => format!("grid-walker/d={}", t.steps()),
        }
    }

    /// Whether `log_pdf` integrates to one (true for the mixture target,
    /// false for the walker's unnormalized reward).
    pub fn is_normalized(&self) -> bool {
        matches!(self, Task::RandomGaussians(_))
    }

    /// Characteristic half-width of the region holding the target's mass.
    pub fn scale(&self) -> S {
        match self {
            Task::RandomGaussians(t) => S::of_f64(t.mean_halfwidth()),
            Task::GridWalker(t) => t.box_halfwidth(),
        }
    }

    /// Broad zero-mean Gaussian dominating the target's support; serves as
    /// the initial reward term and the base of the initial policy.
    pub fn reward_prior(&self) -> Gaussian<S> {
        let sd = S::of_f64(2.0) * self.scale();
        Gaussian::isotropic(Array1::zeros(self.dim()), sd * sd)
            .expect("positive prior variance")
    }

    /// Mode-center matrix for tasks with an enumerable mode set.
    pub fn mode_centers(&self) -> Option<Array2<S>> {
        match self {
            Task::RandomGaussians(_) => None,
            Task::GridWalker(t) => Some(t.mode_centers()),
        }
    }

    /// Per-axis half-width of the evaluation box, when the task defines one.
    pub fn box_halfwidth(&self) -> Option<S> {
        match self {
            Task::RandomGaussians(_) => None,
            Task::GridWalker(t) => Some(t.box_halfwidth()),
        }
    }
}

impl<S: Scalar> Density<S> for Task<S> {
    fn dim(&self) -> usize {
        match self {
            Task::RandomGaussians(t) => t.dim(),
            Task::GridWalker(t) => t.dim(),
        }
    }

    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S> {
        match self {
            Task::RandomGaussians(t) => t.log_pdf(x),
            Task::GridWalker(t) => t.log_pdf(x),
        }
    }
}

/// Expert demonstrations plus the provenance needed to regenerate them.
#[derive(Debug, Clone)]
pub struct ExpertSet<S: Scalar = f64> {
    pub samples: Array2<S>,
    pub task_id: String,
    pub sampler_id: String,
    pub seed: u64,
}

impl<S: Scalar> ExpertSet<S> {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }
}

/// Draws `m` expert demonstrations with the default sampler settings.
pub fn make_expert_set<S: Scalar>(
    task: &Task<S>,
    m: usize,
    rng: &mut RngStream,
) -> Result<ExpertSet<S>> {
    make_expert_set_with(task, m, DEFAULT_ESS_BURN_IN, DEFAULT_ESS_THINNING, rng)
}

/// Expert generation with explicit chain settings (only the walker uses them).
///
/// The walker runs many short chains on substreams of `rng` instead of one
/// long chain: the target's modes are too narrow for reliable within-chain
/// hops, so coverage comes from chain multiplicity while the per-coordinate
/// symmetry of prior and reward keeps the mode masses equal.
pub fn make_expert_set_with<S: Scalar>(
    task: &Task<S>,
    m: usize,
    burn_in: usize,
    thinning: usize,
    rng: &mut RngStream,
) -> Result<ExpertSet<S>> {
    if m == 0 {
        return Err(Error::EmptyInput {
            what: "expert count",
        });
    }
    let (samples, sampler_id) = match task {
        Task::RandomGaussians(t) => (t.target().sample(rng, m), "ancestral"),
        Task::GridWalker(t) => {
            let prior = t.expert_prior();
            let target = |x: &ArrayView1<S>| -> Result<S> {
                Ok(t.log_pdf(x)? + prior.log_pdf(x)?)
            };
            let chains = (m / 10).max(16).min(m);
            let per_chain = m.div_ceil(chains);
            let mut out = Array2::zeros((m, t.steps()));
            let mut row = 0;
            for chain in 0..chains {
                let take = per_chain.min(m - row);
                if take == 0 {
                    break;
                }
                let mut chain_rng = rng.substream(chain as u64);
                let draws =
                    ess_sample(&target, &prior, &mut chain_rng, take, burn_in, thinning)?;
                out.slice_mut(ndarray::s![row..row + take, ..]).assign(&draws);
                row += take;
            }
            (out, "elliptical-slice")
        }
    };
    Ok(ExpertSet {
        samples,
        task_id: task.id(),
        sampler_id: sampler_id.to_string(),
        seed: rng.seed(),
    })
}
