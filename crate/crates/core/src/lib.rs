//! Markov-chain Monte Carlo for binary Boltzmann distributions restricted to
//! the shell of states at a fixed Hamming distance from a reference state.
//!
//! The crate provides:
//!
//! * [`model`]: the pairwise Ising energy, shell states with incrementally
//!   maintained energy and agree/disagree index sets, and the model file format.
//! * [`weighted_index`]: a sum tree for logarithmic proportional sampling.
//! * [`saw`]: the intracluster move built from two energy-biased
//!   self-avoiding walks, with exact forward and reverse path probabilities.
//! * [`samplers`]: the intracluster-move sampler, the Metropolis bit-swap
//!   baseline, and the chain driver.
//! * [`generators`]: 2D ferromagnets, 3D ±J spin glasses and Gabor RBMs.
//! * [`oracle`]: exhaustive ground truth for small instances.
//! * [`analysis`]: autocorrelation, compute-fair thinning, trace files and
//!   SVG plots.
//! * [`experiment`]: the benchmark presets run against Metropolis at equal
//!   compute.
//! * [`verify`]: oracle-backed self-checks.
//! * [`cli`]: the `shellwalk` command-line surface.
//!
//! ```
//! use shellwalk::generators::grid2d;
//! use shellwalk::model::ShellConstraint;
//! use shellwalk::samplers::{chain_rng, random_shell_state, run_chain, ImConfig, Sampler};
//! use shellwalk::saw::SawParams;
//!
//! let model = grid2d(4, 1.0, 0.0).unwrap();
//! let mut rng = chain_rng(7, 0);
//! let constraint = ShellConstraint::magnetization(model.num_vars(), 8).unwrap();
//! let mut state = random_shell_state(&model, &constraint, &mut rng).unwrap();
//! let sampler = Sampler::Im(ImConfig::new(0.44, SawParams::fixed(0.44, 3)));
//! let record = run_chain(&model, &mut state, &sampler, 100, 1, &mut rng).unwrap();
//! assert_eq!(record.energies.len(), 100);
//! assert_eq!(state.distance(), 8);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod generators;
pub mod model;
pub mod oracle;
pub mod samplers;
pub mod saw;
pub mod verify;
pub mod weighted_index;

pub use error::{Error, Result};
