//! Screenshot-grounded mobile device agent.
//!
//! The agent reads only screenshots. Each turn an MLLM answers with an
//! Observation / Thought / Action triple; [`action`] parses the action into one
//! of eight operations, [`perception`] grounds click targets to pixels through
//! OCR, an icon detector and an image-text embedder, and [`device`] executes
//! the result. [`agent`] runs the plan-act loop with self-reflection,
//! [`simulator`] provides an offline device plus oracle perception, and
//! [`eval`] scores traces with success, process score, relative efficiency
//! and completion rate.

pub mod action;
pub mod agent;
pub mod codec;
pub mod device;
pub mod eval;
pub mod perception;
pub mod raster;
pub mod score;
pub mod simulator;

pub use action::{parse_agent_turn, render_action, validate_action, Action, AgentTurn, Position};
pub use perception::{BoundingBox, Dims, GroundingOutcome, PerceptionBackends, Point};
pub use score::{Exact, Score};

pub use agent::{run_instruction, SessionConfig, Trace};
pub use eval::{TaskSpec, StepLabel};

/// Per-task report with floating-point metrics.
pub type TaskReport = eval::TaskReport<f64>;
/// Per-task report with exact rational metrics.
pub type ExactTaskReport = eval::TaskReport<Exact>;
/// Benchmark report with floating-point metrics.
pub type BenchReport = eval::BenchReport<f64>;
/// Benchmark report with exact rational metrics.
pub type ExactBenchReport = eval::BenchReport<Exact>;
