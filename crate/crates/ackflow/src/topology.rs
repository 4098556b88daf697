//! Network description: users, FIFO buffers, cross traffic, and the channels
//! that connect their ports.
//!
//! Every element has an input port `(-)` and an output port `(+)`. A user's
//! traffic forms one class that follows a fixed circuit: out of the user,
//! through an ordered list of buffers, and back to the user's input as the
//! ack stream. Cross traffic occupies its own class, is injected at one
//! buffer's input, and its share of the buffer output is discarded. The
//! routing table records, per class, the next hop out of every output port.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("duplicate element name {0:?}")]
    DuplicateName(String),
    #[error("user {user:?} routes through unknown buffer {buffer:?}")]
    UnknownBuffer { user: String, buffer: String },
    #[error("user {0:?} has an empty buffer path")]
    EmptyPath(String),
    #[error("user {user:?} visits buffer {buffer:?} twice; circuits must be loop-free")]
    RepeatedBuffer { user: String, buffer: String },
    #[error("user {user:?} lists {delays} hop delays for {hops} hops")]
    DelayCountMismatch {
        user: String,
        delays: usize,
        hops: usize,
    },
    #[error("negative propagation delay {delay} on a channel of user {user:?}")]
    NegativeDelay { user: String, delay: f64 },
    #[error("buffer {0:?} has non-positive capacity")]
    NonPositiveCapacity(String),
    #[error("buffer {0:?} has more than one cross-traffic attachment")]
    DuplicateCrossTarget(String),
    #[error("cross traffic targets unknown buffer {0:?}")]
    UnknownCrossTarget(String),
}

/// Identifies a traffic class: each user's stream, or one cross-traffic
/// stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassId {
    User(usize),
    Cross(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ElementId {
    User(usize),
    Buffer(usize),
    Cross(usize),
}

/// Which side of an element a channel attaches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    /// The `(-)` port where flow enters the element.
    In,
    /// The `(+)` port where flow leaves the element.
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub element: ElementId,
    pub side: Side,
}

impl NodeId {
    pub fn input(element: ElementId) -> Self {
        NodeId {
            element,
            side: Side::In,
        }
    }

    pub fn output(element: ElementId) -> Self {
        NodeId {
            element,
            side: Side::Out,
        }
    }
}

/// A constant-delay channel carrying one class between two ports.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub class: ClassId,
    pub from: NodeId,
    pub to: NodeId,
    pub delay: f64,
}

/// The closed loop a user's data and acks travel: buffers in visit order,
/// the channel delay into each of them, and the final return delay.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub user: usize,
    pub buffers: Vec<usize>,
    /// `fwd_delays[i]` is the channel delay into `buffers[i]` (from the user
    /// for `i = 0`, from `buffers[i-1]` otherwise).
    pub fwd_delays: Vec<f64>,
    /// Channel delay from the last buffer's output back to the user.
    pub bwd_delay: f64,
}

impl Circuit {
    /// Total propagation delay around the loop, excluding queuing.
    pub fn prop_rtt(&self) -> f64 {
        self.fwd_delays.iter().sum::<f64>() + self.bwd_delay
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteHop {
    pub to: NodeId,
    pub delay: f64,
}

/// Per-class next hop out of each output port.
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    next: BTreeMap<(ClassId, NodeId), RouteHop>,
    /// Buffer index -> cross-traffic stream injected at its input.
    cross_injections: BTreeMap<usize, usize>,
}

impl RoutingTable {
    pub fn next_hop(&self, class: ClassId, from: NodeId) -> Option<RouteHop> {
        self.next.get(&(class, from)).copied()
    }

    pub fn cross_at(&self, buffer: usize) -> Option<usize> {
        self.cross_injections.get(&buffer).copied()
    }

    fn insert(&mut self, class: ClassId, from: NodeId, hop: RouteHop) {
        let prev = self.next.insert((class, from), hop);
        debug_assert!(prev.is_none(), "routing conflict for {class:?} at {from:?}");
    }
}

/// What a user contributes to the graph: its circuit and the channel delays
/// along it.
#[derive(Debug, Clone)]
pub struct UserSpec {
    pub name: String,
    /// Buffer names in visit order.
    pub path: Vec<String>,
    /// One delay per hop into a buffer, then the return delay: length is
    /// `path.len() + 1`.
    pub hop_delays: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BufferSpec {
    pub name: String,
    /// Service capacity in packets per second.
    pub capacity: f64,
}

#[derive(Debug, Clone)]
pub struct CrossSpec {
    /// Buffer name receiving the stream.
    pub buffer: String,
}

#[derive(Debug, Clone)]
pub struct NetworkGraph {
    pub user_names: Vec<String>,
    pub buffer_names: Vec<String>,
    /// Packets per second, indexed like `buffer_names`.
    pub capacities: Vec<f64>,
    pub circuits: Vec<Circuit>,
    pub channels: Vec<Channel>,
    pub routing: RoutingTable,
    /// Cross stream index -> target buffer index.
    pub cross_targets: Vec<usize>,
}

impl NetworkGraph {
    pub fn num_users(&self) -> usize {
        self.user_names.len()
    }

    pub fn num_buffers(&self) -> usize {
        self.buffer_names.len()
    }

    /// The circuit of one user.
    pub fn circuit_of(&self, user: usize) -> &Circuit {
        &self.circuits[user]
    }

    /// Largest propagation round trip over all circuits.
    pub fn max_prop_rtt(&self) -> f64 {
        self.circuits
            .iter()
            .map(Circuit::prop_rtt)
            .fold(0.0, f64::max)
    }

    /// Buffer order such that inter-buffer channels faster than `threshold`
    /// always point forward, or `None` if such fast edges form a cycle. The
    /// solver steps buffers in this order so that sub-step couplings read
    /// already-committed upstream segments.
    pub fn buffer_order_for(&self, threshold: f64) -> Option<Vec<usize>> {
        let n = self.num_buffers();
        let mut adj = vec![Vec::new(); n];
        let mut indeg = vec![0usize; n];
        for c in &self.circuits {
            for (i, pair) in c.buffers.windows(2).enumerate() {
                // fwd_delays[i + 1] is the channel into the second buffer of
                // this pair.
                if c.fwd_delays[i + 1] < threshold {
                    adj[pair[0]].push(pair[1]);
                    indeg[pair[1]] += 1;
                }
            }
        }
        // Kahn's algorithm, always taking the smallest ready index so the
        // order is deterministic.
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&b| indeg[b] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&b) = ready.iter().next() {
            ready.remove(&b);
            order.push(b);
            for &to in &adj[b] {
                indeg[to] -= 1;
                if indeg[to] == 0 {
                    ready.insert(to);
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}

/// Assembles and validates the network.
pub fn build_graph(
    users: &[UserSpec],
    buffers: &[BufferSpec],
    cross: &[CrossSpec],
) -> Result<NetworkGraph, TopologyError> {
    let mut buffer_index = BTreeMap::new();
    for (i, b) in buffers.iter().enumerate() {
        if buffer_index.insert(b.name.clone(), i).is_some() {
            return Err(TopologyError::DuplicateName(b.name.clone()));
        }
        if !(b.capacity > 0.0) {
            return Err(TopologyError::NonPositiveCapacity(b.name.clone()));
        }
    }
    let mut seen_users = BTreeMap::new();
    for (i, u) in users.iter().enumerate() {
        if seen_users.insert(u.name.clone(), i).is_some() {
            return Err(TopologyError::DuplicateName(u.name.clone()));
        }
        if buffer_index.contains_key(&u.name) {
            return Err(TopologyError::DuplicateName(u.name.clone()));
        }
    }

    let mut circuits = Vec::with_capacity(users.len());
    let mut channels = Vec::new();
    let mut routing = RoutingTable::default();

    for (ui, u) in users.iter().enumerate() {
        if u.path.is_empty() {
            return Err(TopologyError::EmptyPath(u.name.clone()));
        }
        if u.hop_delays.len() != u.path.len() + 1 {
            return Err(TopologyError::DelayCountMismatch {
                user: u.name.clone(),
                delays: u.hop_delays.len(),
                hops: u.path.len() + 1,
            });
        }
        if let Some(&d) = u.hop_delays.iter().find(|&&d| d < 0.0) {
            return Err(TopologyError::NegativeDelay {
                user: u.name.clone(),
                delay: d,
            });
        }
        let mut path = Vec::with_capacity(u.path.len());
        for name in &u.path {
            let &bi = buffer_index
                .get(name)
                .ok_or_else(|| TopologyError::UnknownBuffer {
                    user: u.name.clone(),
                    buffer: name.clone(),
                })?;
            if path.contains(&bi) {
                return Err(TopologyError::RepeatedBuffer {
                    user: u.name.clone(),
                    buffer: name.clone(),
                });
            }
            path.push(bi);
        }

        let class = ClassId::User(ui);
        let mut from = NodeId::output(ElementId::User(ui));
        for (hop, &bi) in path.iter().enumerate() {
            let to = NodeId::input(ElementId::Buffer(bi));
            let delay = u.hop_delays[hop];
            channels.push(Channel {
                class,
                from,
                to,
                delay,
            });
            routing.insert(class, from, RouteHop { to, delay });
            from = NodeId::output(ElementId::Buffer(bi));
        }
        let back = RouteHop {
            to: NodeId::input(ElementId::User(ui)),
            delay: *u.hop_delays.last().unwrap(),
        };
        channels.push(Channel {
            class,
            from,
            to: back.to,
            delay: back.delay,
        });
        routing.insert(class, from, back);

        circuits.push(Circuit {
            user: ui,
            buffers: path,
            fwd_delays: u.hop_delays[..u.path.len()].to_vec(),
            bwd_delay: *u.hop_delays.last().unwrap(),
        });
    }

    let mut cross_targets = Vec::with_capacity(cross.len());
    for (xi, x) in cross.iter().enumerate() {
        let &bi = buffer_index
            .get(&x.buffer)
            .ok_or_else(|| TopologyError::UnknownCrossTarget(x.buffer.clone()))?;
        if routing.cross_injections.insert(bi, xi).is_some() {
            return Err(TopologyError::DuplicateCrossTarget(x.buffer.clone()));
        }
        let class = ClassId::Cross(xi);
        let from = NodeId::output(ElementId::Cross(xi));
        let to = NodeId::input(ElementId::Buffer(bi));
        channels.push(Channel {
            class,
            from,
            to,
            delay: 0.0,
        });
        routing.insert(class, from, RouteHop { to, delay: 0.0 });
        cross_targets.push(bi);
    }

    Ok(NetworkGraph {
        user_names: users.iter().map(|u| u.name.clone()).collect(),
        buffer_names: buffers.iter().map(|b| b.name.clone()).collect(),
        capacities: buffers.iter().map(|b| b.capacity).collect(),
        circuits,
        channels,
        routing,
        cross_targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_buffer_specs() -> (Vec<UserSpec>, Vec<BufferSpec>) {
        let users = vec![
            UserSpec {
                name: "u1".into(),
                path: vec!["b1".into(), "b2".into()],
                hop_delays: vec![0.0, 0.02, 0.10],
            },
            UserSpec {
                name: "u2".into(),
                path: vec!["b1".into()],
                hop_delays: vec![0.0, 0.08],
            },
        ];
        let buffers = vec![
            BufferSpec {
                name: "b1".into(),
                capacity: 6215.0,
            },
            BufferSpec {
                name: "b2".into(),
                capacity: 15538.0,
            },
        ];
        (users, buffers)
    }

    #[test]
    fn builds_circuits_and_routing_for_a_series_path() {
        let (users, buffers) = two_buffer_specs();
        let g = build_graph(&users, &buffers, &[]).unwrap();
        assert_eq!(g.circuit_of(0).buffers, vec![0, 1]);
        assert!((g.circuit_of(0).prop_rtt() - 0.12).abs() < 1e-15);
        assert!((g.circuit_of(1).prop_rtt() - 0.08).abs() < 1e-15);

        // Class u1 leaves b1 toward b2, and leaves b2 back home.
        let hop = g
            .routing
            .next_hop(ClassId::User(0), NodeId::output(ElementId::Buffer(0)))
            .unwrap();
        assert_eq!(hop.to, NodeId::input(ElementId::Buffer(1)));
        assert!((hop.delay - 0.02).abs() < 1e-15);
        let back = g
            .routing
            .next_hop(ClassId::User(0), NodeId::output(ElementId::Buffer(1)))
            .unwrap();
        assert_eq!(back.to, NodeId::input(ElementId::User(0)));

        // Class u2 leaves b1 straight back to its user.
        let back2 = g
            .routing
            .next_hop(ClassId::User(1), NodeId::output(ElementId::Buffer(0)))
            .unwrap();
        assert_eq!(back2.to, NodeId::input(ElementId::User(1)));
    }

    #[test]
    fn buffer_order_respects_fast_forward_edges() {
        let (users, buffers) = two_buffer_specs();
        let g = build_graph(&users, &buffers, &[]).unwrap();
        // With a large threshold the 20 ms hop counts as fast, forcing b1
        // before b2.
        assert_eq!(g.buffer_order_for(1.0).unwrap(), vec![0, 1]);
        // With a tiny threshold the buffers are independent; order is still
        // deterministic.
        assert_eq!(g.buffer_order_for(1e-9).unwrap().len(), 2);
    }

    #[test]
    fn rejects_repeated_buffer_in_a_circuit() {
        let (mut users, buffers) = two_buffer_specs();
        users[0].path = vec!["b1".into(), "b2".into(), "b1".into()];
        users[0].hop_delays = vec![0.0, 0.02, 0.02, 0.10];
        let err = build_graph(&users, &buffers, &[]).unwrap_err();
        assert_eq!(
            err,
            TopologyError::RepeatedBuffer {
                user: "u1".into(),
                buffer: "b1".into()
            }
        );
    }

    #[test]
    fn rejects_unknown_buffer_and_bad_delay_lists() {
        let (mut users, buffers) = two_buffer_specs();
        users[1].path = vec!["nope".into()];
        assert!(matches!(
            build_graph(&users, &buffers, &[]),
            Err(TopologyError::UnknownBuffer { .. })
        ));

        let (mut users, buffers) = two_buffer_specs();
        users[0].hop_delays = vec![0.0, 0.02];
        assert!(matches!(
            build_graph(&users, &buffers, &[]),
            Err(TopologyError::DelayCountMismatch { .. })
        ));

        let (mut users, buffers) = two_buffer_specs();
        users[0].hop_delays = vec![0.0, -0.02, 0.1];
        assert!(matches!(
            build_graph(&users, &buffers, &[]),
            Err(TopologyError::NegativeDelay { .. })
        ));
    }

    #[test]
    fn rejects_duplicate_names_and_bad_capacity() {
        let (users, mut buffers) = two_buffer_specs();
        buffers[1].name = "b1".into();
        assert!(matches!(
            build_graph(&users, &buffers, &[]),
            Err(TopologyError::DuplicateName(_))
        ));

        let (users, mut buffers) = two_buffer_specs();
        buffers[0].capacity = 0.0;
        assert!(matches!(
            build_graph(&users, &buffers, &[]),
            Err(TopologyError::NonPositiveCapacity(_))
        ));
    }

    #[test]
    fn cross_traffic_attaches_once_per_buffer() {
        let (users, buffers) = two_buffer_specs();
        let g = build_graph(
            &users,
            &buffers,
            &[CrossSpec {
                buffer: "b1".into(),
            }],
        )
        .unwrap();
        assert_eq!(g.routing.cross_at(0), Some(0));
        assert_eq!(g.cross_targets, vec![0]);

        let dup = build_graph(
            &users,
            &buffers,
            &[
                CrossSpec {
                    buffer: "b1".into(),
                },
                CrossSpec {
                    buffer: "b1".into(),
                },
            ],
        );
        assert!(matches!(dup, Err(TopologyError::DuplicateCrossTarget(_))));
    }
}
