//! Stub product apps and end-to-end scenarios run against a live platform.

pub mod scenario;
pub mod stub;

pub use scenario::{run_scenario, HarnessError, Scenario, ScenarioReport, StepReport};
pub use stub::{spawn_stub, ResponseMode, StubBehavior, StubServer};
