//! Packet-level discrete-event reference simulator.
//!
//! The event loop implements the mechanisms the flow solver abstracts:
//! window-based sources clocked by per-packet acknowledgements, FIFO queues
//! served one packet per `1/c` seconds, and constant propagation delays.
//! Traces use the same column schema as the flow solver so the two can be
//! diffed column against column, and rows sample the left limit of the state
//! (events strictly before the row instant are applied, events at the instant
//! are not).
//!
//! Acknowledgements are zero-size and experience only the backward
//! propagation delay. Cross traffic is a deterministic constant-rate packet
//! stream. Sources start empty and fill their windows back to back at the
//! start instant, so comparisons against the flow solver, which starts at the
//! equilibrium, should skip a warm-up of roughly two round trips. A window
//! increase releases an immediate burst; a decrease silences the source until
//! enough acknowledgements have been absorbed.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use thiserror::Error;

use crate::topology::{ClassId, NetworkGraph};
use crate::trace::TraceSet;
use crate::user::WindowScript;

#[derive(Debug, Error)]
pub enum PacketError {
    #[error("invalid time grid: dt and t_end must be positive, dt <= t_end")]
    BadTimeGrid,
    #[error("expected {expected} window scripts, got {got}")]
    WindowArityMismatch { expected: usize, got: usize },
    #[error("expected {expected} cross-traffic rates, got {got}")]
    CrossArityMismatch { expected: usize, got: usize },
    #[error("cross-traffic rate must be finite and nonnegative, got {0}")]
    BadCrossRate(f64),
    #[error("event queue starved at t={t} with {outstanding} packets of {user} outstanding")]
    Starved {
        user: String,
        outstanding: u64,
        t: f64,
    },
}

/// Time grid for trace sampling; the event loop itself is continuous.
#[derive(Debug, Clone, Copy)]
pub struct PacketSimConfig {
    pub dt: f64,
    pub t_end: f64,
}

/// One FIFO queue served at a fixed rate, one packet per `1/c` seconds. The
/// front entry is the packet in service; `serving` says whether a service
/// completion is pending in the event heap.
#[derive(Debug)]
struct PacketQueue {
    capacity: f64,
    fifo: VecDeque<ClassId>,
    serving: bool,
    departures: u64,
}

impl PacketQueue {
    fn new(capacity: f64) -> Self {
        PacketQueue {
            capacity,
            fifo: VecDeque::new(),
            serving: false,
            departures: 0,
        }
    }

    /// Accepts an arrival; returns the service completion instant to schedule
    /// when the server was idle.
    fn arrive(&mut self, t: f64, class: ClassId) -> Option<f64> {
        self.fifo.push_back(class);
        if self.serving {
            None
        } else {
            self.serving = true;
            Some(t + 1.0 / self.capacity)
        }
    }

    /// Completes the packet in service; returns it plus the next completion
    /// instant when more work is waiting.
    fn complete(&mut self, t: f64) -> (ClassId, Option<f64>) {
        let class = self.fifo.pop_front().expect("completion with empty queue");
        self.departures += 1;
        if self.fifo.is_empty() {
            self.serving = false;
            (class, None)
        } else {
            (class, Some(t + 1.0 / self.capacity))
        }
    }

    fn len(&self) -> usize {
        self.fifo.len()
    }
}

/// FIFO departure times for a known arrival sequence: each departure is
/// `max(arrival, previous departure) + 1/c`. The arrival list must be sorted
/// by time; ties keep list order. Classes are carried through untouched.
pub fn fifo_departures(capacity: f64, arrivals: &[(f64, u32)]) -> Vec<(f64, u32)> {
    let mut out = Vec::with_capacity(arrivals.len());
    let mut free_at = f64::NEG_INFINITY;
    for &(t, class) in arrivals {
        let dep = t.max(free_at) + 1.0 / capacity;
        out.push((dep, class));
        free_at = dep;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    /// Service completion at a buffer.
    Dequeue { buffer: usize },
    /// Packet arrival at a buffer.
    Enqueue { buffer: usize, class: ClassId },
    /// Acknowledgement back at its source.
    Ack { user: usize },
    /// Scripted window change taking effect.
    WindowSet { user: usize, value: f64 },
    /// Next cross-traffic packet generation.
    CrossTick { stream: usize },
}

impl EventKind {
    /// Deterministic order among simultaneous events: dequeue, then enqueue,
    /// then acknowledgement, then window changes, then stream generation.
    fn rank(&self) -> u8 {
        match self {
            EventKind::Dequeue { .. } => 0,
            EventKind::Enqueue { .. } => 1,
            EventKind::Ack { .. } => 2,
            EventKind::WindowSet { .. } => 3,
            EventKind::CrossTick { .. } => 4,
        }
    }
}

#[derive(Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    /// Reversed so the `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.kind.rank().cmp(&self.kind.rank()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct EventHeap {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventHeap {
    fn new() -> Self {
        EventHeap {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, kind });
    }
}

struct Source {
    window: f64,
    outstanding: u64,
    sent_since_row: u64,
}

/// Runs the packet simulator over the scenario's graph, scripted windows,
/// and constant cross-traffic rates, sampling the state on the `dt` grid.
///
/// Emitted columns mirror the flow solver (`<b>.q`, `<b>.tau`,
/// `<b>.cross_in`, `<u>.w`, `<u>.x`, `<u>.pi`, `<u>.flight`) plus one
/// `<b>.cum_out` stair per buffer counting departures strictly before each
/// row instant. `<u>.x` is the send count over the preceding grid interval
/// divided by `dt`, and `<u>.pi` is the acknowledgement deficit
/// `min(0, w - outstanding)` a window decrease leaves behind.
pub fn run_packet_sim(
    graph: &NetworkGraph,
    windows: &[WindowScript],
    cross_rates: &[f64],
    cfg: &PacketSimConfig,
) -> Result<TraceSet, PacketError> {
    if !(cfg.dt > 0.0) || !(cfg.t_end > 0.0) || cfg.dt > cfg.t_end {
        return Err(PacketError::BadTimeGrid);
    }
    let nu = graph.num_users();
    let nb = graph.num_buffers();
    if windows.len() != nu {
        return Err(PacketError::WindowArityMismatch {
            expected: nu,
            got: windows.len(),
        });
    }
    if cross_rates.len() != graph.cross_targets.len() {
        return Err(PacketError::CrossArityMismatch {
            expected: graph.cross_targets.len(),
            got: cross_rates.len(),
        });
    }
    for &r in cross_rates {
        if !(r.is_finite() && r >= 0.0) {
            return Err(PacketError::BadCrossRate(r));
        }
    }

    let mut heap = EventHeap::new();
    let mut queues: Vec<PacketQueue> = graph
        .capacities
        .iter()
        .map(|&c| PacketQueue::new(c))
        .collect();
    let mut sources: Vec<Source> = (0..nu)
        .map(|i| Source {
            window: windows[i].initial(),
            outstanding: 0,
            sent_since_row: 0,
        })
        .collect();

    // Initial fill: every source releases its whole window back to back.
    for (i, src) in sources.iter_mut().enumerate() {
        let first_hop = graph.circuit_of(i).fwd_delays[0];
        while (src.outstanding as f64) < src.window {
            src.outstanding += 1;
            src.sent_since_row += 1;
            heap.push(
                first_hop,
                EventKind::Enqueue {
                    buffer: graph.circuit_of(i).buffers[0],
                    class: ClassId::User(i),
                },
            );
        }
    }
    for (i, script) in windows.iter().enumerate() {
        for &(t, value) in script.steps() {
            heap.push(t, EventKind::WindowSet { user: i, value });
        }
    }
    for (x, &rate) in cross_rates.iter().enumerate() {
        if rate > 0.0 {
            heap.push(1.0 / rate, EventKind::CrossTick { stream: x });
        }
    }

    let mut names = Vec::new();
    for b in 0..nb {
        let e = &graph.buffer_names[b];
        names.push(format!("{e}.q"));
        names.push(format!("{e}.tau"));
        if graph.routing.cross_at(b).is_some() {
            names.push(format!("{e}.cross_in"));
        }
        names.push(format!("{e}.cum_out"));
    }
    for u in &graph.user_names {
        names.push(format!("{u}.w"));
        names.push(format!("{u}.x"));
        names.push(format!("{u}.pi"));
        names.push(format!("{u}.flight"));
    }
    let mut trace = TraceSet::new(names);

    let steps = ((cfg.t_end / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t_row = k as f64 * cfg.dt;

        // Apply every event strictly before the row instant.
        loop {
            let due = matches!(heap.heap.peek(), Some(ev) if ev.time < t_row);
            if !due {
                break;
            }
            let ev = heap.heap.pop().expect("peeked event");
            let t = ev.time;
            match ev.kind {
                EventKind::Enqueue { buffer, class } => {
                    if let Some(done) = queues[buffer].arrive(t, class) {
                        heap.push(done, EventKind::Dequeue { buffer });
                    }
                }
                EventKind::Dequeue { buffer } => {
                    let (class, next) = queues[buffer].complete(t);
                    if let Some(done) = next {
                        heap.push(done, EventKind::Dequeue { buffer });
                    }
                    if let ClassId::User(i) = class {
                        let circuit = graph.circuit_of(i);
                        let hop = circuit
                            .buffers
                            .iter()
                            .position(|&b| b == buffer)
                            .expect("packet dequeued off its path");
                        if hop + 1 < circuit.buffers.len() {
                            heap.push(
                                t + circuit.fwd_delays[hop + 1],
                                EventKind::Enqueue {
                                    buffer: circuit.buffers[hop + 1],
                                    class,
                                },
                            );
                        } else {
                            heap.push(t + circuit.bwd_delay, EventKind::Ack { user: i });
                        }
                    }
                }
                EventKind::Ack { user } => {
                    let src = &mut sources[user];
                    src.outstanding -= 1;
                    let circuit = graph.circuit_of(user);
                    while (src.outstanding as f64) < src.window {
                        src.outstanding += 1;
                        src.sent_since_row += 1;
                        heap.push(
                            t + circuit.fwd_delays[0],
                            EventKind::Enqueue {
                                buffer: circuit.buffers[0],
                                class: ClassId::User(user),
                            },
                        );
                    }
                }
                EventKind::WindowSet { user, value } => {
                    let src = &mut sources[user];
                    src.window = value;
                    let circuit = graph.circuit_of(user);
                    while (src.outstanding as f64) < src.window {
                        src.outstanding += 1;
                        src.sent_since_row += 1;
                        heap.push(
                            t + circuit.fwd_delays[0],
                            EventKind::Enqueue {
                                buffer: circuit.buffers[0],
                                class: ClassId::User(user),
                            },
                        );
                    }
                }
                EventKind::CrossTick { stream } => {
                    let buffer = graph.cross_targets[stream];
                    if let Some(done) = queues[buffer].arrive(t, ClassId::Cross(stream)) {
                        heap.push(done, EventKind::Dequeue { buffer });
                    }
                    heap.push(
                        t + 1.0 / cross_rates[stream],
                        EventKind::CrossTick { stream },
                    );
                }
            }
        }

        if heap.heap.is_empty() {
            for (i, src) in sources.iter().enumerate() {
                if src.outstanding > 0 {
                    return Err(PacketError::Starved {
                        user: graph.user_names[i].clone(),
                        outstanding: src.outstanding,
                        t: t_row,
                    });
                }
            }
        }

        let mut row = Vec::new();
        for b in 0..nb {
            let q = queues[b].len() as f64;
            row.push(q);
            row.push(q / queues[b].capacity);
            if let Some(x) = graph.routing.cross_at(b) {
                row.push(cross_rates[x]);
            }
            row.push(queues[b].departures as f64);
        }
        for (i, src) in sources.iter_mut().enumerate() {
            let w = windows[i].window_at(t_row);
            row.push(w);
            row.push(src.sent_since_row as f64 / cfg.dt);
            row.push((w - src.outstanding as f64).min(0.0));
            row.push(src.outstanding as f64);
            src.sent_since_row = 0;
        }
        trace.push_row(t_row, &row);
    }
    Ok(trace)
}

/// Packets that have crossed a traced node strictly before `t`: the value of
/// the node's `cum_out` stair at the last grid row not after `t`. `None` when
/// the node has no such column.
pub fn cumulative_count(trace: &TraceSet, node: &str, t: f64) -> Option<f64> {
    let col = trace.column(&format!("{node}.cum_out"))?;
    let idx = trace.times().partition_point(|&s| s <= t + 1e-12);
    if idx == 0 {
        return Some(0.0);
    }
    col.get(idx - 1).copied()
}
