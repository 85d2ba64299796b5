//! Simulation and stability analysis for hybrid dynamical systems whose
//! solutions accumulate infinitely many jumps in finite time.
//!
//! A hybrid system flows by `x' = f(x)` on its flow set and jumps by
//! `x+ = g(x)` on its jump set. Runs that bounce infinitely often stall at
//! their accumulation (Zeno) time on the classical two-index time domain;
//! this crate continues them past that time by restarting from the limit
//! points of the jump tail on a three-index time domain, and provides
//! sampled checks for the matching stability notions.
//!
//! Modules:
//! - [`expr`]: the expression language for sets, maps, and certificates
//! - [`system`]: compiled system data, documents, built-in scenarios
//! - [`time_domain`]: two- and three-index hybrid time domains
//! - [`sim`]: event-localized RK4 simulation and accumulation detection
//! - [`extend`]: limit-set estimation and branch-tree continuation
//! - [`interconnect`]: composition of input-driven subsystems
//! - [`stability`]: Lyapunov, invariance, attractivity, and narrowing checks
//! - [`trajectory`]: CSV/JSON trajectory export
//! - [`sample`]: deterministic grids and pseudo-random sampling

pub mod expr;
pub mod extend;
pub mod interconnect;
pub mod sample;
pub mod sim;
pub mod stability;
pub mod system;
pub mod time_domain;
pub mod trajectory;

pub use expr::{parse_expr, Expr};
pub use extend::{
    estimate_omega, prolong, simulate_extended, ExtendConfig, ExtendedSolution, OmegaEstimate,
};
pub use sim::{detect_zeno, simulate, ClassicalRun, SimConfig, Termination, ZenoCertificate};
pub use system::{builtin_scenario, load_system, ScenarioParams, SystemData, SystemSpec};
pub use time_domain::{DomainSegment, ExtendedHybridTimeDomain, HybridTime};
