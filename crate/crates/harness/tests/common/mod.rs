#![allow(dead_code)]

use std::path::PathBuf;

use cantiming_harness::{parse_scenario, Scenario};
use serde_json::Value;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn golden_json() -> Value {
    let text = std::fs::read_to_string(scenario_path("paper_sec6.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn build(v: &Value) -> Scenario {
    parse_scenario(&v.to_string()).unwrap()
}

/// One chain (chain 1 of the golden set) closing one pendulum loop.
pub fn lone_loop() -> Value {
    let mut v = golden_json();
    v["chains"].as_array_mut().unwrap().truncate(1);
    v["loops"].as_array_mut().unwrap().truncate(1);
    v["horizon_ms"] = 300.into();
    v
}
