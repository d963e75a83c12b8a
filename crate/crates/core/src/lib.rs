//! Monte Carlo laboratory for supercritical branching random walks on a cube.
//!
//! * [`kernel`]: dispersal kernels, grid discretization, ellipticity probes.
//! * [`engine`]: event-driven simulation with genealogy and monotone coupling.
//! * [`coupling`]: continuous-space BRW dominating a grid BRW, event by event.
//! * [`percolation`]: 2-d oriented bond percolation.
//! * [`renorm`]: block construction mapping a BRW onto oriented percolation.
//! * [`stats`]: tail estimates, exponential fits, closed-form oracles.

pub mod engine;
pub mod coupling;
pub mod error;
pub mod kernel;
pub mod percolation;
pub mod renorm;
pub mod rng;
pub mod stats;

pub use engine::{
    run, run_coupled, run_from, run_replicas, Event, ExtinctionRecord, Fate, Genealogy, GenealogyNode, Outcome,
    ParticleConfiguration, ParticleId, Simulation, SimulationParams, Step,
};
pub use error::{Error, Result};
pub use percolation::{PercolationRun, Sigma};
pub use renorm::{BlockLedger, BlockParams, ClockRule, Half, RenormOptions};
pub use stats::{ExpFit, Proportion, TailEstimate};
pub use kernel::{CubeDomain, DispersalKernel, GridKernel, JumpSampler, KernelFamily, Space};
pub use rng::{Lane, RandomStream};
