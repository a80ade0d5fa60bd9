//! Transmission scheduling that minimizes the long-run average age of
//! information over an error-prone link with ACK/NACK feedback, under a
//! budget on the average number of transmissions.
//!
//! * [`model`]: states, actions, channel error profile, transition law.
//! * [`rvi`]: relative value iteration for a fixed transmission price.
//! * [`eval`]: exact long-run evaluation of policies.
//! * [`lagrange`]: price search and the budget-meeting randomized policy.
//! * [`arq`]: closed forms for classical ARQ.
//! * [`sim`]: slotted simulator and replication statistics.
//! * [`sarsa`]: average-cost SARSA for unknown channels.
//! * [`experiment`]: sweeps and oracle checks behind the CLI.

pub mod arq;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod lagrange;
pub mod model;
pub mod policy;
pub mod rvi;
pub mod sarsa;
pub mod sim;

pub use error::{Error, Result};
pub use model::{Action, ChannelModel, Cmdp, State, Truncation};
pub use policy::Policy;
