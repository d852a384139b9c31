//! Scenario files: one TOML document describing a network, a publish
//! schedule and a list of runs to compare on it.
//!
//! ```toml
//! name = "dropout"
//!
//! [profile]
//! bandwidth_bps = 2e6
//! base_delay_ms = 5.0
//! dropout_windows = [[5.0, 8.0]]
//!
//! [[publishers]]
//! topic = "/camera"
//! payload_bytes = 20000
//! publish_hz = 10.0
//! duration_s = 30.0
//!
//! [[runs]]
//! policy = "scheduled"
//!
//! [[runs]]
//! policy = "naive"
//! encoding = "binary"
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchError, Encoding, Policy, PublisherSpec, Scenario, Topology};
use crate::client::DEFAULT_SCHEDULER_TICK_MS;
use crate::netsim::NetProfile;

fn default_consumers() -> Vec<usize> {
    vec![1]
}

fn default_threshold() -> u64 {
    1
}

fn default_tick() -> u64 {
    DEFAULT_SCHEDULER_TICK_MS
}

fn default_drain() -> f64 {
    300.0
}

fn default_topology() -> Topology {
    Topology::Relay
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub policy: Policy,
    #[serde(default = "default_topology")]
    pub topology: Topology,
    #[serde(default)]
    pub encoding: Option<Encoding>,
    /// Overrides the suite's consumer counts.
    #[serde(default)]
    pub consumers: Option<Vec<usize>>,
    #[serde(default)]
    pub backpressure_threshold: Option<u64>,
    /// Overrides `publish_hz` of every publisher.
    #[serde(default)]
    pub publish_hz: Option<f64>,
    /// Overrides the generated run name.
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSuite {
    pub name: String,
    #[serde(default = "default_consumers")]
    pub consumers: Vec<usize>,
    #[serde(default = "default_threshold")]
    pub backpressure_threshold: u64,
    #[serde(default = "default_tick")]
    pub scheduler_tick_ms: u64,
    #[serde(default = "default_drain")]
    pub drain_s: f64,
    pub profile: NetProfile,
    #[serde(default)]
    pub consumer_profile: Option<NetProfile>,
    pub publishers: Vec<PublisherSpec>,
    pub runs: Vec<RunSpec>,
}

impl ScenarioSuite {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::ScenarioFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|message| BenchError::ScenarioFile {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string().trim_end().to_owned())
    }

    /// One scenario per run and consumer count, all validated.
    pub fn expand(&self) -> Result<Vec<Scenario>, BenchError> {
        let mut out = Vec::new();
        let mut diagnostics = Vec::new();
        let mut names = HashSet::new();
        if self.runs.is_empty() {
            diagnostics.push("runs: at least one run is required".to_owned());
        }
        for (i, run) in self.runs.iter().enumerate() {
            let counts = run.consumers.as_ref().unwrap_or(&self.consumers);
            if counts.is_empty() {
                diagnostics.push(format!("runs[{i}].consumers: must not be empty"));
            }
            for &n in counts {
                let name = self.run_name(run, n, counts.len() > 1);
                let mut publishers = self.publishers.clone();
                if let Some(hz) = run.publish_hz {
                    for p in &mut publishers {
                        p.publish_hz = hz;
                    }
                }
                let scenario = Scenario {
                    name: name.clone(),
                    policy: run.policy,
                    topology: run.topology,
                    encoding: run.encoding,
                    consumer_count: n,
                    backpressure_threshold: run.backpressure_threshold.unwrap_or(self.backpressure_threshold),
                    scheduler_tick_ms: self.scheduler_tick_ms,
                    profile: self.profile.clone(),
                    consumer_profile: self.consumer_profile.clone(),
                    publishers,
                    drain_s: self.drain_s,
                };
                if !names.insert(name.clone()) {
                    diagnostics.push(format!("runs[{i}]: run name {name:?} is used twice; set a label"));
                }
                if let Err(BenchError::InvalidScenario { diagnostics: d, .. }) = scenario.validate() {
                    diagnostics.extend(d.into_iter().map(|m| format!("runs[{i}] ({name}): {m}")));
                }
                out.push(scenario);
            }
        }
        if diagnostics.is_empty() {
            Ok(out)
        } else {
            diagnostics.dedup();
            Err(BenchError::InvalidScenario {
                name: self.name.clone(),
                diagnostics,
            })
        }
    }

    fn run_name(&self, run: &RunSpec, consumers: usize, many: bool) -> String {
        let mut name = match &run.label {
            Some(l) => format!("{}_{l}", self.name),
            None => {
                let mut n = format!("{}_{}", self.name, run.policy);
                if run.topology == Topology::PeerToPeer {
                    n.push_str("_p2p");
                }
                match run.encoding {
                    Some(Encoding::Json) => n.push_str("_json"),
                    Some(Encoding::Binary) => n.push_str("_binary"),
                    None => {}
                }
                if let Some(hz) = run.publish_hz {
                    n.push_str(&format!("_{hz}hz"));
                }
                n
            }
        };
        if many {
            name.push_str(&format!("_c{consumers}"));
        }
        name
    }
}
