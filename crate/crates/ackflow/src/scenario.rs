//! Scenario configuration: the TOML schema, validation, and the built-in
//! studies.
//!
//! A scenario bundles a topology (buffers with capacities in bits per second,
//! users with per-hop propagation delays), traffic (packet size, per-user
//! window scripts, constant cross-traffic shares), and run settings (grid
//! step, horizon, default model selection). Capacities convert to packets per
//! second through the packet size. The `squarewave` section switches the run
//! to the two-class square-wave buffer study, which drives a single buffer
//! directly instead of the full network pipeline.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{
    build_graph, BufferSpec as GraphBuffer, CrossSpec as GraphCross, NetworkGraph, TopologyError,
    UserSpec as GraphUser,
};
use crate::user::WindowScript;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("invalid scenario field {field}: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

fn invalid(field: &str, message: impl fmt::Display) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub topology: Topology,
    pub traffic: Traffic,
    pub run: RunSection,
    /// Present only for the square-wave buffer study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub squarewave: Option<SquareWave>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub buffers: Vec<BufferDef>,
    #[serde(default)]
    pub users: Vec<UserDef>,
    #[serde(default)]
    pub cross: Vec<CrossDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferDef {
    pub name: String,
    /// Service capacity in bits per second.
    pub capacity_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserDef {
    pub name: String,
    /// Buffer names in visit order.
    pub path: Vec<String>,
    /// One propagation delay per hop into a buffer, then the return delay:
    /// `path.len() + 1` entries, in seconds.
    pub hop_delays_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossDef {
    pub buffer: String,
    /// Constant cross-traffic rate as a fraction of the buffer's capacity,
    /// strictly between 0 and 1.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Traffic {
    /// Packet size including headers, in bytes; converts bit rates to
    /// packet rates.
    pub packet_size_bytes: f64,
    #[serde(default)]
    pub windows: Vec<WindowDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowDef {
    pub user: String,
    pub initial: f64,
    /// `[time_s, new_window]` pairs, strictly increasing in time.
    #[serde(default)]
    pub steps: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Solver step and trace grid spacing, seconds.
    pub dt: f64,
    /// Simulated horizon, seconds.
    pub t_end: f64,
    /// Default model selection when the command line gives none.
    #[serde(default = "default_model")]
    pub model: String,
    /// Runs are seedless and deterministic; `false` is rejected.
    #[serde(default = "default_true")]
    pub deterministic: bool,
}

fn default_model() -> String {
    "flow".to_string()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareWave {
    /// Angular frequency of the input square wave, rad/s.
    pub omega: f64,
    /// Overload factor: aggregate input is `(1+beta)·c`.
    pub beta: f64,
}

impl Scenario {
    /// Packets per second for a buffer capacity given in bits per second.
    pub fn capacity_pkts(&self, capacity_bps: f64) -> f64 {
        capacity_bps / (8.0 * self.traffic.packet_size_bytes)
    }

    /// Builds the network graph with capacities converted to packets/s.
    /// Square-wave scenarios have no users and are run by the dedicated
    /// buffer study instead.
    pub fn graph(&self) -> Result<NetworkGraph, ScenarioError> {
        let buffers: Vec<GraphBuffer> = self
            .topology
            .buffers
            .iter()
            .map(|b| GraphBuffer {
                name: b.name.clone(),
                capacity: self.capacity_pkts(b.capacity_bps),
            })
            .collect();
        let users: Vec<GraphUser> = self
            .topology
            .users
            .iter()
            .map(|u| GraphUser {
                name: u.name.clone(),
                path: u.path.clone(),
                hop_delays: u.hop_delays_s.clone(),
            })
            .collect();
        let cross: Vec<GraphCross> = self
            .topology
            .cross
            .iter()
            .map(|x| GraphCross {
                buffer: x.buffer.clone(),
            })
            .collect();
        Ok(build_graph(&users, &buffers, &cross)?)
    }

    /// Window scripts in graph user order.
    pub fn window_scripts(&self) -> Vec<WindowScript> {
        self.topology
            .users
            .iter()
            .map(|u| {
                let def = self
                    .traffic
                    .windows
                    .iter()
                    .find(|w| w.user == u.name)
                    .expect("validated: every user has a window script");
                WindowScript::new(def.initial, def.steps.clone())
            })
            .collect()
    }

    /// Constant cross-traffic rates in packets/s, in declaration order.
    pub fn cross_rates(&self) -> Vec<f64> {
        self.topology
            .cross
            .iter()
            .map(|x| {
                let cap = self
                    .topology
                    .buffers
                    .iter()
                    .find(|b| b.name == x.buffer)
                    .expect("validated: cross stream targets a declared buffer");
                x.share * self.capacity_pkts(cap.capacity_bps)
            })
            .collect()
    }

    /// Initial windows in graph user order.
    pub fn initial_windows(&self) -> Vec<f64> {
        self.window_scripts().iter().map(|s| s.initial()).collect()
    }

    /// Structural validation beyond what the graph builder checks; names the
    /// offending field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if !(self.traffic.packet_size_bytes > 0.0) {
            return Err(invalid(
                "traffic.packet_size_bytes",
                format!("must be positive, got {}", self.traffic.packet_size_bytes),
            ));
        }
        for b in &self.topology.buffers {
            if !(b.capacity_bps > 0.0 && b.capacity_bps.is_finite()) {
                return Err(invalid(
                    "topology.buffers.capacity_bps",
                    format!("buffer {} must have positive capacity", b.name),
                ));
            }
        }
        for x in &self.topology.cross {
            if !(x.share > 0.0 && x.share < 1.0) {
                return Err(invalid(
                    "topology.cross.share",
                    format!(
                        "stream into {} must have a share strictly between 0 and 1, got {}",
                        x.buffer, x.share
                    ),
                ));
            }
            if !self.topology.buffers.iter().any(|b| b.name == x.buffer) {
                return Err(invalid(
                    "topology.cross.buffer",
                    format!("unknown buffer {}", x.buffer),
                ));
            }
        }
        if !(self.run.dt > 0.0 && self.run.dt.is_finite()) {
            return Err(invalid("run.dt", "must be positive"));
        }
        if !(self.run.t_end > self.run.dt) {
            return Err(invalid("run.t_end", "must exceed run.dt"));
        }
        if !self.run.deterministic {
            return Err(invalid(
                "run.deterministic",
                "stochastic runs are not supported; remove the flag or set it true",
            ));
        }

        let user_names: BTreeSet<&str> = self
            .topology
            .users
            .iter()
            .map(|u| u.name.as_str())
            .collect();
        let mut scripted: BTreeSet<&str> = BTreeSet::new();
        for w in &self.traffic.windows {
            if !user_names.contains(w.user.as_str()) {
                return Err(invalid(
                    "traffic.windows.user",
                    format!("unknown user {}", w.user),
                ));
            }
            if !scripted.insert(w.user.as_str()) {
                return Err(invalid(
                    "traffic.windows.user",
                    format!("duplicate window script for {}", w.user),
                ));
            }
            if !(w.initial >= 0.0) {
                return Err(invalid(
                    "traffic.windows.initial",
                    format!("window of {} must be nonnegative", w.user),
                ));
            }
            let mut prev = 0.0;
            for &(t, v) in &w.steps {
                if !(t > prev) {
                    return Err(invalid(
                        "traffic.windows.steps",
                        format!(
                            "step times of {} must be strictly increasing and positive",
                            w.user
                        ),
                    ));
                }
                if !(v >= 0.0) {
                    return Err(invalid(
                        "traffic.windows.steps",
                        format!("window of {} must stay nonnegative", w.user),
                    ));
                }
                prev = t;
            }
        }
        for u in &self.topology.users {
            if !scripted.contains(u.name.as_str()) {
                return Err(invalid(
                    "traffic.windows",
                    format!("user {} has no window script", u.name),
                ));
            }
        }

        if let Some(sq) = &self.squarewave {
            if !(sq.omega > 0.0) {
                return Err(invalid("squarewave.omega", "must be positive"));
            }
            if !(sq.beta > 0.0) {
                return Err(invalid("squarewave.beta", "must be positive"));
            }
            if !self.topology.users.is_empty() || !self.topology.cross.is_empty() {
                return Err(invalid(
                    "squarewave",
                    "the square-wave study drives one buffer directly; users and \
                     cross streams are not allowed",
                ));
            }
            if self.topology.buffers.len() != 1 {
                return Err(invalid(
                    "topology.buffers",
                    "the square-wave study needs exactly one buffer",
                ));
            }
        } else {
            if self.topology.users.is_empty() {
                return Err(invalid("topology.users", "at least one user required"));
            }
            // The graph builder checks everything route-related.
            self.graph()?;
        }
        Ok(())
    }

    /// Canonical TOML rendering; parses back to an equal scenario.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Names of the built-in scenarios, in study order.
pub fn builtin_names() -> Vec<&'static str> {
    vec![
        "scenario1",
        "scenario2",
        "scenario3",
        "scenario4",
        "scenario5",
        "scenario6",
        "scenario7",
        "scenario8",
        "squarewave",
    ]
}

/// A built-in scenario by name, already validated.
pub fn builtin(name: &str) -> Option<Scenario> {
    let sc = match name {
        "scenario1" => single_link(
            "scenario1",
            100e6,
            1590.0,
            [
                ("u1", 0.0016, 50.0, vec![(3.0, 150.0)]),
                ("u2", 0.0585, 550.0, vec![]),
            ],
            None,
            8.0,
        ),
        "scenario2" => single_link(
            "scenario2",
            100e6,
            1590.0,
            [
                ("u1", 0.005, 210.0, vec![(5.0, 300.0)]),
                ("u2", 0.045, 750.0, vec![]),
            ],
            None,
            10.0,
        ),
        "scenario3" => series(
            "scenario3",
            None,
            1600.0,
            vec![(10.0, 1800.0)],
            1200.0,
            vec![],
        ),
        "scenario4" => series(
            "scenario4",
            None,
            1600.0,
            vec![],
            1200.0,
            vec![(10.0, 1400.0)],
        ),
        "scenario5" => series(
            "scenario5",
            Some(0.5),
            1200.0,
            vec![(10.0, 1400.0)],
            1600.0,
            vec![],
        ),
        "scenario6" => series(
            "scenario6",
            Some(0.5),
            1200.0,
            vec![],
            1600.0,
            vec![(10.0, 1800.0)],
        ),
        "scenario7" => single_link(
            "scenario7",
            12.5e6,
            1040.0,
            [("u1", 0.075, 500.0, vec![(5.0, 250.0)])],
            None,
            8.0,
        ),
        "scenario8" => single_link(
            "scenario8",
            25e6,
            1040.0,
            [("u1", 0.075, 500.0, vec![(5.0, 250.0)])],
            Some(0.5),
            8.0,
        ),
        "squarewave" => Scenario {
            name: "squarewave".into(),
            topology: Topology {
                buffers: vec![BufferDef {
                    name: "b1".into(),
                    capacity_bps: 100e6,
                }],
                users: vec![],
                cross: vec![],
            },
            traffic: Traffic {
                packet_size_bytes: 1590.0,
                windows: vec![],
            },
            run: RunSection {
                dt: 1e-3,
                t_end: 6.0,
                model: "flow".into(),
                deterministic: true,
            },
            squarewave: Some(SquareWave {
                omega: std::f64::consts::TAU,
                beta: 1.0,
            }),
        },
        _ => return None,
    };
    debug_assert!(sc.validate().is_ok(), "builtin {name} must validate");
    Some(sc)
}

/// One shared bottleneck; each user's round trip splits evenly between the
/// forward and backward channel.
#[allow(clippy::type_complexity)]
fn single_link<const N: usize>(
    name: &str,
    capacity_bps: f64,
    packet_size_bytes: f64,
    users: [(&str, f64, f64, Vec<(f64, f64)>); N],
    cross_share: Option<f64>,
    t_end: f64,
) -> Scenario {
    Scenario {
        name: name.into(),
        topology: Topology {
            buffers: vec![BufferDef {
                name: "b1".into(),
                capacity_bps,
            }],
            users: users
                .iter()
                .map(|(n, half, _, _)| UserDef {
                    name: (*n).into(),
                    path: vec!["b1".into()],
                    hop_delays_s: vec![*half, *half],
                })
                .collect(),
            cross: cross_share
                .map(|share| CrossDef {
                    buffer: "b1".into(),
                    share,
                })
                .into_iter()
                .collect(),
        },
        traffic: Traffic {
            packet_size_bytes,
            windows: users
                .into_iter()
                .map(|(n, _, initial, steps)| WindowDef {
                    user: n.into(),
                    initial,
                    steps,
                })
                .collect(),
        },
        run: RunSection {
            dt: 1e-4,
            t_end,
            model: "flow".into(),
            deterministic: true,
        },
        squarewave: None,
    }
}

/// Two buffers in series (72 and 180 Mb/s, 1448-byte packets): u1 crosses
/// both, u2 only the first, u3 only the second, and a small third window
/// keeps the second buffer observed. Per-user round trips are 120, 80, and
/// 40 ms with the 20 ms link delay on the inter-buffer channel.
fn series(
    name: &str,
    cross_share: Option<f64>,
    w1: f64,
    steps1: Vec<(f64, f64)>,
    w2: f64,
    steps2: Vec<(f64, f64)>,
) -> Scenario {
    Scenario {
        name: name.into(),
        topology: Topology {
            buffers: vec![
                BufferDef {
                    name: "b1".into(),
                    capacity_bps: 72e6,
                },
                BufferDef {
                    name: "b2".into(),
                    capacity_bps: 180e6,
                },
            ],
            users: vec![
                UserDef {
                    name: "u1".into(),
                    path: vec!["b1".into(), "b2".into()],
                    hop_delays_s: vec![0.0, 0.02, 0.10],
                },
                UserDef {
                    name: "u2".into(),
                    path: vec!["b1".into()],
                    hop_delays_s: vec![0.0, 0.08],
                },
                UserDef {
                    name: "u3".into(),
                    path: vec!["b2".into()],
                    hop_delays_s: vec![0.0, 0.04],
                },
            ],
            cross: cross_share
                .map(|share| CrossDef {
                    buffer: "b1".into(),
                    share,
                })
                .into_iter()
                .collect(),
        },
        traffic: Traffic {
            packet_size_bytes: 1448.0,
            windows: vec![
                WindowDef {
                    user: "u1".into(),
                    initial: w1,
                    steps: steps1,
                },
                WindowDef {
                    user: "u2".into(),
                    initial: w2,
                    steps: steps2,
                },
                WindowDef {
                    user: "u3".into(),
                    initial: 5.0,
                    steps: vec![],
                },
            ],
        },
        run: RunSection {
            dt: 1e-4,
            t_end: 15.0,
            model: "flow".into(),
            deterministic: true,
        },
        squarewave: None,
    }
}

/// Loads a scenario: built-in names resolve directly, anything else is read
/// as a TOML file. The result is validated either way.
pub fn load_scenario(spec: &str) -> Result<Scenario, ScenarioError> {
    if let Some(sc) = builtin(spec) {
        return Ok(sc);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: spec.to_string(),
        source,
    })?;
    let sc: Scenario = toml::from_str(&text).map_err(|source| ScenarioError::Parse {
        path: spec.to_string(),
        source: Box::new(source),
    })?;
    sc.validate()?;
    Ok(sc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate_and_cover_the_studies() {
        for name in builtin_names() {
            let sc = builtin(name).unwrap();
            sc.validate().unwrap();
            assert_eq!(sc.name, name);
        }
        assert!(builtin("scenario9").is_none());
    }

    #[test]
    fn builtin_parameters_match_the_study_definitions() {
        let s1 = builtin("scenario1").unwrap();
        assert_eq!(s1.capacity_pkts(100e6), 100e6 / (1590.0 * 8.0));
        let g = s1.graph().unwrap();
        assert!((g.circuit_of(0).prop_rtt() - 0.0032).abs() < 1e-12);
        assert!((g.circuit_of(1).prop_rtt() - 0.117).abs() < 1e-12);
        let scripts = s1.window_scripts();
        assert_eq!(scripts[0].window_at(4.0), 150.0);
        assert_eq!(scripts[1].window_at(4.0), 550.0);

        let s3 = builtin("scenario3").unwrap();
        let g3 = s3.graph().unwrap();
        assert_eq!(g3.num_buffers(), 2);
        assert!((g3.circuit_of(0).prop_rtt() - 0.12).abs() < 1e-12);
        assert!(s3.cross_rates().is_empty());
        // Scenario 4 steps the second window instead of the first.
        let s4 = builtin("scenario4").unwrap();
        assert_eq!(s4.window_scripts()[0].window_at(12.0), 1600.0);
        assert_eq!(s4.window_scripts()[1].window_at(12.0), 1400.0);

        let s5 = builtin("scenario5").unwrap();
        let c1 = s5.capacity_pkts(72e6);
        assert_eq!(s5.cross_rates(), vec![c1 / 2.0]);

        let s7 = builtin("scenario7").unwrap();
        assert_eq!(s7.capacity_pkts(12.5e6), 12.5e6 / (1040.0 * 8.0));
        assert_eq!(s7.window_scripts()[0].window_at(6.0), 250.0);

        let sq = builtin("squarewave").unwrap();
        assert!(sq.squarewave.is_some());
        assert!(sq.topology.users.is_empty());
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        for name in builtin_names() {
            let sc = builtin(name).unwrap();
            let text = sc.to_toml();
            let back: Scenario = toml::from_str(&text).unwrap();
            assert_eq!(back, sc, "round trip changed {name}");
        }
    }

    #[test]
    fn unknown_keys_and_bad_fields_are_rejected() {
        let base = builtin("scenario7").unwrap().to_toml();
        let with_unknown = format!("{base}\n[extra]\nkey = 1\n");
        let err = toml::from_str::<Scenario>(&with_unknown).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");

        let mut sc = builtin("scenario7").unwrap();
        sc.traffic.windows[0].steps = vec![(5.0, 250.0), (5.0, 100.0)];
        let err = sc.validate().unwrap_err();
        assert!(matches!(
            err,
            ScenarioError::Invalid { ref field, .. } if field == "traffic.windows.steps"
        ));

        let mut sc = builtin("scenario8").unwrap();
        sc.topology.cross[0].share = 1.5;
        assert!(sc.validate().is_err());

        let mut sc = builtin("scenario1").unwrap();
        sc.run.deterministic = false;
        assert!(sc.validate().is_err());

        let mut sc = builtin("scenario1").unwrap();
        sc.traffic.windows.remove(1);
        let err = sc.validate().unwrap_err();
        assert!(err.to_string().contains("u2"), "{err}");
    }

    #[test]
    fn load_scenario_resolves_builtins_and_files() {
        assert!(load_scenario("scenario1").is_ok());
        let err = load_scenario("/definitely/not/here.toml").unwrap_err();
        assert!(matches!(err, ScenarioError::Io { .. }));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("custom.toml");
        std::fs::write(&path, builtin("scenario2").unwrap().to_toml()).unwrap();
        let sc = load_scenario(path.to_str().unwrap()).unwrap();
        assert_eq!(sc, builtin("scenario2").unwrap());

        std::fs::write(&path, "name = \"broken\"\n[topology\n").unwrap();
        let err = load_scenario(path.to_str().unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ScenarioError::Parse { .. }), "{msg}");
    }
}
