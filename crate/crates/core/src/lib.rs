//! Lesson-based multi-agent code optimization.
//!
//! Agents rewrite a piece of code over several rounds. After each round the
//! rewrites are graded, every agent explains its own outcome as a short
//! lesson, and the lessons go into a shared bank. Lesson selection is
//! generic over the scalar type; the run loop and evaluators use `f64`.

pub mod agent;
pub mod eval;
pub mod lesson;
pub mod metrics;
pub mod orchestrator;
pub mod problem;
pub mod prompt;
pub mod scalar;

pub use scalar::Real;

pub type Lesson = lesson::Lesson<f64>;
pub type LessonBank = lesson::LessonBank<f64>;
pub type SelectionConfig = lesson::SelectionConfig<f64>;

pub use agent::{Agent, AgentSpec, AgentUsage};
pub use eval::{EvalResult, EvalStatus, Evaluator};
pub use lesson::{LessonId, LessonKind, Selection};
pub use orchestrator::{run, Ablation, Best, RunConfig, RunError, RunResult};
pub use problem::{Problem, TaskKind};
