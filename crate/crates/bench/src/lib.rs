//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use mefuse_core::data::ErrorProneDataset;
use mefuse_core::design::{build_gold_posterior, AugmentMode, TrueDataPosterior};
use mefuse_core::sim::{simulate_linked, table1_scenario, SimScenario, Simulation, Table1Options};

pub struct Fixture {
    pub scenario: SimScenario,
    pub sim: Simulation,
    pub posterior: TrueDataPosterior,
    pub data: Arc<ErrorProneDataset>,
}

/// Table 1 scenario at its default sizes with the gold posterior built.
pub fn table1_fixture(seed: u64) -> Fixture {
    let scenario = table1_scenario(&Table1Options { seed, ..Default::default() });
    let sim = simulate_linked(&scenario).expect("valid scenario");
    let posterior = build_gold_posterior(&sim.gold, Some(&sim.error_prone), &scenario.schema, AugmentMode::Auto, 10_000, seed)
        .expect("posterior")
        .posterior;
    let data = Arc::new(sim.error_prone.clone());
    Fixture { scenario, sim, posterior, data }
}
