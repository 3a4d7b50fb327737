use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::distribution::DistributionOverGrids;
use super::inference::{posterior_from_description, posterior_from_stimulus};
use super::{AbstractionModel, BayesError};
use crate::chain::{AgentBackend, BackendError, Mode, Produced, StepContext};
use crate::grid::Grid;
use crate::seed::rng_for;

/// How an agent picks an abstraction from its posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Inference {
    /// Draw from the posterior.
    #[default]
    Sample,
    /// Take the most probable abstraction (lowest index on ties).
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentTask<'a> {
    /// Grid in, grid out.
    Reproduce(&'a Grid),
    /// Grid in, description out.
    Describe(&'a Grid),
    /// Description index in, grid out.
    Render(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentOutput {
    Grid(Grid),
    Description(usize),
}

fn choose<R: Rng + ?Sized>(posterior: &[f64], inference: Inference, rng: &mut R) -> usize {
    match inference {
        Inference::Sample => WeightedIndex::new(posterior)
            .expect("posterior is a valid distribution")
            .sample(rng),
        Inference::Map => {
            let mut best = 0;
            for (i, &p) in posterior.iter().enumerate() {
                if p > posterior[best] {
                    best = i;
                }
            }
            best
        }
    }
}

fn sample_stimulus<R: Rng + ?Sized>(m: &AbstractionModel, mu: usize, rng: &mut R) -> Grid {
    let eps = m.flip_rate();
    let t = &m.templates()[mu];
    Grid::from_fn(m.size(), |r, c| t.get(r, c) ^ rng.random_bool(eps))
}

/// Infer an abstraction from the input, then produce an output from it.
/// Returns the abstraction and the output.
pub fn simulated_agent_step<R: Rng + ?Sized>(
    m: &AbstractionModel,
    task: AgentTask<'_>,
    inference: Inference,
    rng: &mut R,
) -> Result<(usize, AgentOutput), BayesError> {
    let posterior = match task {
        AgentTask::Reproduce(x) | AgentTask::Describe(x) => posterior_from_stimulus(m, x)?,
        AgentTask::Render(l) => posterior_from_description(m, l)?,
    };
    let mu = choose(&posterior, inference, rng);
    let out = match task {
        AgentTask::Describe(_) => {
            let row = &m.description_likelihood()[mu];
            AgentOutput::Description(WeightedIndex::new(row).expect("row-stochastic").sample(rng))
        }
        AgentTask::Reproduce(_) | AgentTask::Render(_) => {
            AgentOutput::Grid(sample_stimulus(m, mu, rng))
        }
    };
    Ok((mu, out))
}

/// Run one long simulated chain and histogram the boards it visits after
/// `burn_in` visual steps.
pub fn sample_chain_histogram(
    m: &AbstractionModel,
    mode: Mode,
    steps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<DistributionOverGrids, BayesError> {
    let mut rng = rng_for(seed, &[]);
    let mut x = m.templates()[0].clone();
    let mut visited = Vec::with_capacity(steps);
    for t in 0..burn_in + steps {
        x = match mode {
            Mode::Unimodal => match simulated_agent_step(
                m,
                AgentTask::Reproduce(&x),
                Inference::Sample,
                &mut rng,
            )?
            .1
            {
                AgentOutput::Grid(g) => g,
                AgentOutput::Description(_) => unreachable!("reproduction yields a grid"),
            },
            Mode::Multimodal => {
                let l = match simulated_agent_step(
                    m,
                    AgentTask::Describe(&x),
                    Inference::Sample,
                    &mut rng,
                )?
                .1
                {
                    AgentOutput::Description(l) => l,
                    AgentOutput::Grid(_) => unreachable!("description yields an index"),
                };
                match simulated_agent_step(m, AgentTask::Render(l), Inference::Sample, &mut rng)?.1
                {
                    AgentOutput::Grid(g) => g,
                    AgentOutput::Description(_) => unreachable!("rendering yields a grid"),
                }
            }
        };
        if t >= burn_in {
            visited.push(x.clone());
        }
    }
    DistributionOverGrids::from_samples(m.size(), &visited)
}

/// Chain backend backed by simulated Bayesian agents. Descriptions are the
/// model's vocabulary entries.
#[derive(Debug, Clone)]
pub struct SimulatedBackend {
    model: Arc<AbstractionModel>,
    inference: Inference,
}

impl SimulatedBackend {
    pub fn new(model: AbstractionModel, inference: Inference) -> Self {
        SimulatedBackend {
            model: Arc::new(model),
            inference,
        }
    }

    pub fn model(&self) -> &AbstractionModel {
        &self.model
    }

    fn run(&self, ctx: &StepContext, task: AgentTask<'_>) -> Result<AgentOutput, BackendError> {
        let mut rng = rng_for(ctx.seed, &[]);
        simulated_agent_step(&self.model, task, self.inference, &mut rng)
            .map(|(_, out)| out)
            .map_err(|e| BackendError::InvalidOutput(e.to_string()))
    }

    fn producer(&self, ctx: &StepContext) -> String {
        format!("sim-{:016x}", ctx.seed)
    }
}

impl AgentBackend for SimulatedBackend {
    fn tag(&self) -> String {
        match self.inference {
            Inference::Sample => "simulated".into(),
            Inference::Map => "simulated-map".into(),
        }
    }

    fn reproduce(&self, ctx: &StepContext, grid: &Grid) -> Result<Produced<Grid>, BackendError> {
        match self.run(ctx, AgentTask::Reproduce(grid))? {
            AgentOutput::Grid(g) => Ok(Produced::new(g, self.producer(ctx))),
            AgentOutput::Description(_) => unreachable!("reproduction yields a grid"),
        }
    }

    fn describe(&self, ctx: &StepContext, grid: &Grid) -> Result<Produced<String>, BackendError> {
        match self.run(ctx, AgentTask::Describe(grid))? {
            AgentOutput::Description(l) => Ok(Produced::new(
                self.model.vocabulary()[l].clone(),
                self.producer(ctx),
            )),
            AgentOutput::Grid(_) => unreachable!("description yields an index"),
        }
    }

    fn render(&self, ctx: &StepContext, description: &str) -> Result<Produced<Grid>, BackendError> {
        let l = self.model.description_index(description).ok_or_else(|| {
            BackendError::InvalidOutput(
                BayesError::UnknownDescription(description.into()).to_string(),
            )
        })?;
        match self.run(ctx, AgentTask::Render(l))? {
            AgentOutput::Grid(g) => Ok(Produced::new(g, self.producer(ctx))),
            AgentOutput::Description(_) => unreachable!("rendering yields a grid"),
        }
    }
}
