//! Simulation scenarios, truth oracles and the Monte Carlo runner.

mod counterexample;
mod mc;
mod sample;
mod scenario;

pub use counterexample::{
    counterexample_scenario, sample_counterexample, simulate_counterexample, CounterexampleReport,
    CounterexampleValues, SimulatedValue, CENSORING_RATE,
};
pub use mc::{run_mc, McConfig, McRow, MonteCarloReport, ReplicateEstimates, ESTIMANDS, METHODS};
pub use sample::{
    observe, oracle_truth, replicate_rng, sample_latent, sample_scenario, weibull_inverse, LatentSubject, OracleTruth,
    COVARIATES,
};
pub use scenario::{
    CensoringLaw, CovariateLaw, EventArm, OutcomeArm, PropensityLaw, ScenarioSpec, Truth, SCENARIO1_ETA,
    SCENARIO1_SURVIVAL, SCENARIO2_ETA, SCENARIO2_SURVIVAL,
};
