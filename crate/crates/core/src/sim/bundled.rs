//! Specification, topology and scenarios shipped with the crate.

use super::{parse_scenario, Scenario, ScenarioError};

pub const SPEC: &str = include_str!("../../fixtures/uav/uav.adl");
pub const TOPOLOGY: &str = include_str!("../../fixtures/uav/topology.json");

pub const SCENARIOS: [(&str, &str); 4] = [
    ("nominal", include_str!("../../fixtures/uav/nominal.json")),
    ("fault_forged_rtf", include_str!("../../fixtures/uav/fault_forged_rtf.json")),
    ("fault_delayed_rtf", include_str!("../../fixtures/uav/fault_delayed_rtf.json")),
    ("fault_tampered_log", include_str!("../../fixtures/uav/fault_tampered_log.json")),
];

/// Looks up a bundled scenario by name, with or without `.json`.
pub fn scenario(name: &str) -> Option<Result<Scenario, ScenarioError>> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| parse_scenario(text, &format!("{n}.json")))
}
