//! Fixed-step network simulation and the equilibrium solver.
//!
//! A [`Simulation`] wires users, channels, and buffers from a
//! [`NetworkGraph`] and advances everything on a shared grid. Within one step
//! the order is: sample the trace row, advance the users (each reads its ack
//! stream, already committed because backward channels are at least one step
//! long), then advance the buffers so that any channel shorter than a step
//! points forward in the buffer order. Histories are constant before the
//! start time, holding the initial equilibrium: delayed reads at early times
//! land on that pre-history instead of missing data.
//!
//! Three sending laws share the buffer and channel machinery:
//!
//! * ack-clocked: the exact law, `send = w_dot + ack` gated by the
//!   ack-retaining buffer;
//! * window over observed round trip: `send = w / rtt`, the ratio
//!   approximation;
//! * window over nominal round trip plus window slope:
//!   `send = w / (T + sum tau) + w_dot`, the joint approximation (the
//!   look-ahead delay it formally wants is unknowable at run time, so the
//!   current queuing delay stands in).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::buffer::{BufferError, BufferState, OutputModel, Piece};
use crate::circuit_rtt::{flight_size, rtt_observed};
use crate::signal::{FlowSignal, SignalError};
use crate::topology::{ClassId, NetworkGraph};
use crate::trace::TraceSet;
use crate::user::{fs_ack_step, ObservedCongestion, Protocol};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("step dt must be positive and t_end must exceed the start time")]
    BadTimeGrid,
    #[error("event tolerance must satisfy 0 < event_tol < dt")]
    BadEventTol,
    #[error("backward channel of user {user} ({delay} s) is shorter than one step ({dt} s); acks would be read before they are computed")]
    BackwardDelayTooShort { user: String, delay: f64, dt: f64 },
    #[error("user {user} has zero propagation round trip")]
    ZeroDelayCircuit { user: String },
    #[error("channels shorter than one step form a buffer cycle; reduce dt below the smallest cycle channel delay")]
    FastChannelCycle,
    #[error(
        "cross traffic at buffer {buffer} meets or exceeds its capacity; no equilibrium exists"
    )]
    CrossSaturatesBuffer { buffer: String },
    #[error("equilibrium iteration did not converge")]
    EquilibriumDiverged,
    #[error("expected {expected} initial values, got {got}")]
    InitArityMismatch { expected: usize, got: usize },
    #[error("non-finite state in {element} at t = {t}")]
    NonFiniteState { element: String, t: f64 },
    #[error("protocol of user {user} returned invalid window {w} at t = {t}")]
    BadWindow { user: String, w: f64, t: f64 },
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Grid and tolerance settings for one run.
#[derive(Debug, Clone, Copy)]
pub struct SimulationConfig {
    /// Step size in seconds.
    pub dt: f64,
    /// End of the simulated interval (start is 0).
    pub t_end: f64,
    /// Event-localization tolerance in seconds; must stay below `dt`.
    pub event_tol: f64,
    /// Keep the full delay-map history (entry/exit knots) instead of pruning
    /// it, so the maps stay evaluable over the whole run afterwards. Flow
    /// signals are still pruned; memory stays bounded.
    pub retain_history: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            dt: 1e-4,
            t_end: 10.0,
            event_tol: 1e-9,
            retain_history: false,
        }
    }
}

/// Which sending-rate law drives the users.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendLaw {
    /// Exact ack-clocked law with the ack-retaining buffer.
    AckClocked,
    /// `w / rtt` with the round trip observed through the delay operators.
    WindowOverRtt,
    /// `w / (T + sum tau) + w_dot` using the current queuing delays.
    WindowOverNominalRtt,
}

/// Network equilibrium for fixed windows: per-buffer queuing delay and
/// per-user sending rate, solving `sum_i w_i / (T_i + sum_b tau_b) = c_b`
/// (plus cross traffic) at every congested buffer.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub tau: Vec<f64>,
    pub rates: Vec<f64>,
    pub congested: Vec<bool>,
}

impl Equilibrium {
    /// Equilibrium queue of one buffer in packets.
    pub fn queue(&self, graph: &NetworkGraph, buffer: usize) -> f64 {
        self.tau[buffer] * graph.capacities[buffer]
    }
}

const EQ_PASS_LIMIT: usize = 10_000;
const EQ_TOL: f64 = 1e-13;

/// Solves the fixed-window equilibrium by sweeping the buffers, each solved
/// by bisection on its monotone load residual while the others are held.
pub fn equilibrium(
    graph: &NetworkGraph,
    windows: &[f64],
    cross_rates: &[f64],
) -> Result<Equilibrium, SolverError> {
    assert_eq!(windows.len(), graph.num_users());
    assert_eq!(cross_rates.len(), graph.cross_targets.len());
    let nb = graph.num_buffers();

    let mut cross_load = vec![0.0; nb];
    for (x, &b) in graph.cross_targets.iter().enumerate() {
        cross_load[b] += cross_rates[x];
    }
    for b in 0..nb {
        if cross_load[b] >= graph.capacities[b] {
            return Err(SolverError::CrossSaturatesBuffer {
                buffer: graph.buffer_names[b].clone(),
            });
        }
    }
    for c in &graph.circuits {
        if c.prop_rtt() <= 0.0 {
            return Err(SolverError::ZeroDelayCircuit {
                user: graph.user_names[c.user].clone(),
            });
        }
    }

    let mut tau = vec![0.0; nb];
    let users_at: Vec<Vec<usize>> = (0..nb)
        .map(|b| {
            (0..graph.num_users())
                .filter(|&i| graph.circuit_of(i).buffers.contains(&b))
                .collect()
        })
        .collect();

    let mut converged = false;
    for _ in 0..EQ_PASS_LIMIT {
        let mut delta = 0.0f64;
        for b in 0..nb {
            let residual = |tau_b: f64, tau: &[f64]| -> f64 {
                let mut load = cross_load[b];
                for &i in &users_at[b] {
                    let circuit = graph.circuit_of(i);
                    let mut d = circuit.prop_rtt();
                    for &bb in &circuit.buffers {
                        d += if bb == b { tau_b } else { tau[bb] };
                    }
                    load += windows[i] / d;
                }
                load - graph.capacities[b]
            };
            let new = if residual(0.0, &tau) <= 0.0 {
                0.0
            } else {
                let w_sum: f64 = users_at[b].iter().map(|&i| windows[i]).sum();
                let mut lo = 0.0;
                let mut hi = w_sum / (graph.capacities[b] - cross_load[b]) + 1.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if residual(mid, &tau) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            delta = delta.max((new - tau[b]).abs());
            tau[b] = new;
        }
        if delta < EQ_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SolverError::EquilibriumDiverged);
    }

    let rates = (0..graph.num_users())
        .map(|i| {
            let circuit = graph.circuit_of(i);
            let d: f64 = circuit.prop_rtt() + circuit.buffers.iter().map(|&b| tau[b]).sum::<f64>();
            windows[i] / d
        })
        .collect();
    let congested = tau.iter().map(|&t| t > 0.0).collect();
    Ok(Equilibrium {
        tau,
        rates,
        congested,
    })
}

/// Where a buffer's class input comes from.
#[derive(Clone, Copy)]
enum ClassSrc {
    /// Hop `hop` of `user`'s circuit (0 = straight from the user).
    UserHop { user: usize, hop: usize },
    /// Scripted cross-traffic stream.
    Cross { stream: usize },
}

const PRUNE_STRIDE: usize = 512;

/// Merges committed segments narrower than `min_width` into mass-preserving
/// averages. Feedback around the circuits otherwise multiplies rate
/// breakpoints every round trip (each input breakpoint imprints on every
/// class's output), which is exponential; smearing detail finer than a
/// fraction of the step keeps the count bounded without touching any step
/// integral. Runs of one constant rate pass through bit-exact.
fn condense_segments(start: f64, segs: &[(f64, f64)], min_width: f64) -> Vec<(f64, f64)> {
    if segs.len() <= 1 {
        return segs.to_vec();
    }
    let mut out = Vec::with_capacity(4);
    let mut span_start = start;
    let mut prev_end = start;
    let mut mass = 0.0;
    let mut first_rate = segs[0].1;
    let mut uniform = true;
    for (i, &(end, rate)) in segs.iter().enumerate() {
        if prev_end <= span_start {
            first_rate = rate;
            uniform = true;
        } else if rate != first_rate {
            uniform = false;
        }
        mass += rate * (end - prev_end);
        prev_end = end;
        if end - span_start >= min_width || i + 1 == segs.len() {
            let rate_out = if uniform || end <= span_start {
                first_rate
            } else {
                mass / (end - span_start)
            };
            out.push((end, rate_out));
            span_start = end;
            mass = 0.0;
        }
    }
    out
}

/// One simulation run: owns all state and produces a [`TraceSet`].
pub struct Simulation<'a> {
    graph: &'a NetworkGraph,
    protocols: Vec<Box<dyn Protocol>>,
    law: SendLaw,
    cfg: SimulationConfig,
    order: Vec<usize>,
    /// Per buffer: its classes in slot order with their upstream source.
    classes_at: Vec<Vec<(ClassId, ClassSrc)>>,
    slot_of: Vec<BTreeMap<ClassId, usize>>,
    eq: Equilibrium,
    bufs: Vec<BufferState>,
    send: Vec<FlowSignal>,
    cross: Vec<FlowSignal>,
    buf_in: Vec<Vec<FlowSignal>>,
    buf_out: Vec<Vec<FlowSignal>>,
    w_prev: Vec<f64>,
    pi: Vec<f64>,
    /// How much history to retain when pruning; grows monotonically.
    keep: f64,
    /// Initial queue sizes, the baseline for conservation accounting.
    q0: Vec<f64>,
    /// Mass arrived per buffer (all classes, cross included).
    mass_in: Vec<f64>,
    /// Mass departed per buffer.
    mass_out: Vec<f64>,
    /// Mass sent per user.
    mass_sent: Vec<f64>,
    /// Mass injected per cross stream.
    mass_cross: Vec<f64>,
}

/// Mass bookkeeping accumulated over a run, in packets. Channels shift flows
/// in time without storing mass, so each buffer must account for every
/// packet: arrivals minus departures minus queue growth should vanish.
#[derive(Debug, Clone)]
pub struct ConservationReport {
    /// Per-buffer residual: arrivals − departures − queue growth.
    pub per_buffer: Vec<f64>,
    /// Sum of the per-buffer residuals.
    pub global: f64,
    /// Total packets injected: user sends plus cross-traffic arrivals.
    pub total_sent: f64,
}

impl<'a> Simulation<'a> {
    /// Assembles a run.
    ///
    /// `initial_windows` are the window sizes at the start (the protocols
    /// must agree with them on their first call); `cross` carries one scripted
    /// rate signal per cross-traffic stream. The initial queuing delays
    /// default to the fixed-window equilibrium; `tau_override` replaces them
    /// per buffer.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        graph: &'a NetworkGraph,
        protocols: Vec<Box<dyn Protocol>>,
        initial_windows: &[f64],
        cross: Vec<FlowSignal>,
        law: SendLaw,
        model: OutputModel,
        cfg: SimulationConfig,
        tau_override: Option<&[f64]>,
    ) -> Result<Self, SolverError> {
        if !(cfg.dt > 0.0) || !(cfg.t_end > 0.0) {
            return Err(SolverError::BadTimeGrid);
        }
        if !(cfg.event_tol > 0.0 && cfg.event_tol < cfg.dt) {
            return Err(SolverError::BadEventTol);
        }
        if protocols.len() != graph.num_users() || initial_windows.len() != graph.num_users() {
            return Err(SolverError::InitArityMismatch {
                expected: graph.num_users(),
                got: protocols.len().min(initial_windows.len()),
            });
        }
        if cross.len() != graph.cross_targets.len() {
            return Err(SolverError::InitArityMismatch {
                expected: graph.cross_targets.len(),
                got: cross.len(),
            });
        }
        for c in &graph.circuits {
            if c.prop_rtt() <= 0.0 {
                return Err(SolverError::ZeroDelayCircuit {
                    user: graph.user_names[c.user].clone(),
                });
            }
            if c.bwd_delay < cfg.dt {
                return Err(SolverError::BackwardDelayTooShort {
                    user: graph.user_names[c.user].clone(),
                    delay: c.bwd_delay,
                    dt: cfg.dt,
                });
            }
        }
        let order = graph
            .buffer_order_for(cfg.dt)
            .ok_or(SolverError::FastChannelCycle)?;

        let nb = graph.num_buffers();
        let nu = graph.num_users();
        let t0 = 0.0;

        // Class layout per buffer: crossing users in index order, then the
        // cross stream.
        let mut classes_at: Vec<Vec<(ClassId, ClassSrc)>> = vec![Vec::new(); nb];
        let mut slot_of: Vec<BTreeMap<ClassId, usize>> = vec![BTreeMap::new(); nb];
        for i in 0..nu {
            for (hop, &b) in graph.circuit_of(i).buffers.iter().enumerate() {
                let slot = classes_at[b].len();
                classes_at[b].push((ClassId::User(i), ClassSrc::UserHop { user: i, hop }));
                slot_of[b].insert(ClassId::User(i), slot);
            }
        }
        for (x, &b) in graph.cross_targets.iter().enumerate() {
            let slot = classes_at[b].len();
            classes_at[b].push((ClassId::Cross(x), ClassSrc::Cross { stream: x }));
            slot_of[b].insert(ClassId::Cross(x), slot);
        }

        let cross0: Vec<f64> = cross
            .iter()
            .map(|s| s.sample(t0))
            .collect::<Result<_, _>>()?;
        let eq = equilibrium(graph, initial_windows, &cross0)?;
        let tau0: Vec<f64> = match tau_override {
            None => eq.tau.clone(),
            Some(over) => {
                if over.len() != nb {
                    return Err(SolverError::InitArityMismatch {
                        expected: nb,
                        got: over.len(),
                    });
                }
                over.to_vec()
            }
        };

        // Pre-history must cover the deepest delayed read: a full round trip
        // including queuing at the initial delays.
        let total_tau0: f64 = tau0.iter().sum();
        let keep = 2.0 * (graph.max_prop_rtt() + total_tau0) + 1.0;
        let pad = keep + 1.0;

        let mut bufs = Vec::with_capacity(nb);
        let mut buf_in = Vec::with_capacity(nb);
        let mut buf_out = Vec::with_capacity(nb);
        for b in 0..nb {
            let n_cls = classes_at[b].len();
            let mut state = BufferState::new(graph.capacities[b], model, n_cls, t0, tau0[b], pad)
                .with_event_tol(cfg.event_tol);
            // Equilibrium class rates entering this buffer; at a congested
            // equilibrium they sum to capacity, so outputs equal inputs.
            let rates: Vec<f64> = classes_at[b]
                .iter()
                .map(|(class, _)| match *class {
                    ClassId::User(i) => eq.rates[i],
                    ClassId::Cross(x) => cross0[x],
                })
                .collect();
            if model == OutputModel::PseudoQueue {
                state.init_pseudo(&rates);
            }
            bufs.push(state);
            buf_in.push(
                rates
                    .iter()
                    .map(|&r| FlowSignal::constant(t0, r))
                    .collect::<Vec<_>>(),
            );
            buf_out.push(
                rates
                    .iter()
                    .map(|&r| FlowSignal::constant(t0, r))
                    .collect::<Vec<_>>(),
            );
        }
        let send = (0..nu)
            .map(|i| FlowSignal::constant(t0, eq.rates[i]))
            .collect();

        let nx = graph.cross_targets.len();
        let q0 = bufs.iter().map(BufferState::queue).collect();
        Ok(Simulation {
            graph,
            protocols,
            law,
            cfg,
            order,
            classes_at,
            slot_of,
            w_prev: initial_windows.to_vec(),
            pi: vec![0.0; nu],
            eq,
            bufs,
            send,
            cross,
            buf_in,
            buf_out,
            keep,
            q0,
            mass_in: vec![0.0; nb],
            mass_out: vec![0.0; nb],
            mass_sent: vec![0.0; nu],
            mass_cross: vec![0.0; nx],
        })
    }

    /// Mass accounting for the interval simulated so far.
    pub fn conservation(&self) -> ConservationReport {
        let per_buffer: Vec<f64> = (0..self.graph.num_buffers())
            .map(|b| self.mass_in[b] - self.mass_out[b] - (self.bufs[b].queue() - self.q0[b]))
            .collect();
        let global = per_buffer.iter().sum();
        let total_sent = self.mass_sent.iter().sum::<f64>() + self.mass_cross.iter().sum::<f64>();
        ConservationReport {
            per_buffer,
            global,
            total_sent,
        }
    }

    /// Read-only view of a buffer's delay state, for post-run diagnostics
    /// such as evaluating the entry and exit maps along the trace.
    pub fn buffer_state(&self, b: usize) -> &BufferState {
        &self.bufs[b]
    }

    /// All buffer states in graph order; see [`Self::buffer_state`].
    pub fn buffer_states(&self) -> &[BufferState] {
        &self.bufs
    }

    /// The initial equilibrium the run was seeded from.
    pub fn initial_equilibrium(&self) -> &Equilibrium {
        &self.eq
    }

    /// Trace schema: per buffer `q`, `tau`, `in` (aggregate arrival rate at
    /// the buffer input, cross traffic included), `out` (aggregate service
    /// rate), `out.<class>` per traversing class, and `cross_in` where a
    /// stream is attached; per user `w`, `x`, `pi`, `flight`.
    pub fn column_names(&self) -> Vec<String> {
        let g = self.graph;
        let mut names = Vec::new();
        for b in 0..g.num_buffers() {
            let e = &g.buffer_names[b];
            names.push(format!("{e}.q"));
            names.push(format!("{e}.tau"));
            names.push(format!("{e}.in"));
            names.push(format!("{e}.out"));
            for &(id, _) in &self.classes_at[b] {
                names.push(format!("{e}.out.{}", self.class_label(id)));
            }
            if g.routing.cross_at(b).is_some() {
                names.push(format!("{e}.cross_in"));
            }
        }
        for u in &g.user_names {
            names.push(format!("{u}.w"));
            names.push(format!("{u}.x"));
            names.push(format!("{u}.pi"));
            names.push(format!("{u}.flight"));
        }
        names
    }

    fn class_label(&self, id: ClassId) -> String {
        match id {
            ClassId::User(i) => self.graph.user_names[i].clone(),
            ClassId::Cross(_) => "cross".into(),
        }
    }

    /// Runs the configured interval and returns the trace, one row per grid
    /// point including both endpoints.
    pub fn run(&mut self) -> Result<TraceSet, SolverError> {
        let dt = self.cfg.dt;
        let steps = ((self.cfg.t_end / dt) - 1e-9).ceil().max(1.0) as usize;
        let mut trace = TraceSet::new(self.column_names());

        for k in 0..=steps {
            let t = k as f64 * dt;
            let mut row = Vec::new();
            for b in 0..self.graph.num_buffers() {
                row.push(self.bufs[b].queue());
                row.push(self.bufs[b].tau());
                let mut arrivals = 0.0;
                for sig in &self.buf_in[b] {
                    arrivals += sig.sample(t)?;
                }
                row.push(arrivals);
                let mut served = 0.0;
                let mut per_class = Vec::with_capacity(self.buf_out[b].len());
                for sig in &self.buf_out[b] {
                    let r = sig.sample(t)?;
                    served += r;
                    per_class.push(r);
                }
                row.push(served);
                row.extend(per_class);
                if let Some(x) = self.graph.routing.cross_at(b) {
                    row.push(self.cross[x].sample(t)?);
                }
            }
            let mut user_part = Vec::with_capacity(self.graph.num_users());
            for i in 0..self.graph.num_users() {
                let circuit = self.graph.circuit_of(i);
                let x = self.send[i].sample(t)?;
                let fl = flight_size(&self.send[i], circuit, &self.bufs, t)?;
                user_part.push((x, self.pi[i], fl));
            }
            let w_row = if k < steps {
                self.advance_users(t)?
            } else {
                self.w_prev.clone()
            };
            for (i, &(x, pi, fl)) in user_part.iter().enumerate() {
                row.push(w_row[i]);
                row.push(x);
                row.push(pi);
                row.push(fl);
            }
            trace.push_row(t, &row);

            if k < steps {
                self.advance_buffers(t)?;
                if k % PRUNE_STRIDE == PRUNE_STRIDE - 1 {
                    self.prune(t + dt);
                }
            }
        }
        Ok(trace)
    }

    /// Advances every user over `(t, t + dt]`; returns the windows at `t`.
    fn advance_users(&mut self, t: f64) -> Result<Vec<f64>, SolverError> {
        let dt = self.cfg.dt;
        let nu = self.graph.num_users();
        let mut windows = Vec::with_capacity(nu);
        for i in 0..nu {
            let circuit = self.graph.circuit_of(i);
            let queuing: f64 = circuit.buffers.iter().map(|&b| self.bufs[b].tau()).sum();
            let rtt = rtt_observed(circuit, &self.bufs, t)?;
            let obs = ObservedCongestion {
                rtt,
                queuing_delay: queuing,
            };
            let w_now = self.protocols[i].window(t, dt, &obs);
            if !w_now.is_finite() || w_now < 0.0 {
                return Err(SolverError::BadWindow {
                    user: self.graph.user_names[i].clone(),
                    w: w_now,
                    t,
                });
            }
            let w_dot = (w_now - self.w_prev[i]) / dt;
            match self.law {
                SendLaw::AckClocked => {
                    let last_b = *circuit.buffers.last().unwrap();
                    let slot = self.slot_of[last_b][&ClassId::User(i)];
                    let lag = circuit.bwd_delay;
                    let acks: Vec<Piece> = self.buf_out[last_b][slot]
                        .pieces(t - lag, t + dt - lag)?
                        .into_iter()
                        .map(|(a, b, r)| (a + lag, b + lag, r))
                        .collect();
                    let plan = fs_ack_step(self.pi[i], w_dot, &acks);
                    let mut prev = t;
                    for &(end, rate) in &plan.segments {
                        self.mass_sent[i] += rate * (end - prev);
                        prev = end;
                    }
                    for (end, rate) in condense_segments(t, &plan.segments, dt / 4.0) {
                        self.send[i].push(end, rate);
                    }
                    self.pi[i] = plan.pi;
                }
                SendLaw::WindowOverRtt => {
                    self.send[i].push(t + dt, w_now / rtt);
                    self.mass_sent[i] += w_now / rtt * dt;
                }
                SendLaw::WindowOverNominalRtt => {
                    let rate = w_now / (circuit.prop_rtt() + queuing) + w_dot;
                    // A falling window would ask for negative flow; packets in
                    // transit cannot be recalled, so the law saturates at 0.
                    self.send[i].push(t + dt, rate.max(0.0));
                    self.mass_sent[i] += rate.max(0.0) * dt;
                }
            }
            self.w_prev[i] = w_now;
            windows.push(w_now);
        }
        Ok(windows)
    }

    /// Advances every buffer over `(t, t + dt]` in the committed order.
    fn advance_buffers(&mut self, t: f64) -> Result<(), SolverError> {
        let dt = self.cfg.dt;
        for idx in 0..self.order.len() {
            let b = self.order[idx];
            let n_cls = self.classes_at[b].len();
            for slot in 0..n_cls {
                let (sig, lag): (&FlowSignal, f64) = match self.classes_at[b][slot].1 {
                    ClassSrc::UserHop { user, hop } => {
                        let circuit = self.graph.circuit_of(user);
                        if hop == 0 {
                            (&self.send[user], circuit.fwd_delays[0])
                        } else {
                            let prev = circuit.buffers[hop - 1];
                            let pslot = self.slot_of[prev][&ClassId::User(user)];
                            (&self.buf_out[prev][pslot], circuit.fwd_delays[hop])
                        }
                    }
                    ClassSrc::Cross { stream } => (&self.cross[stream], 0.0),
                };
                // `buf_in` never aliases the upstream signal: sources are send
                // signals, other buffers' outputs, or cross scripts.
                let pieces = sig.pieces(t - lag, t + dt - lag)?;
                let dst = &mut self.buf_in[b][slot];
                for (_, end, rate) in pieces {
                    dst.push(end + lag, rate);
                }
            }
            let input_pieces: Vec<Vec<Piece>> = (0..n_cls)
                .map(|slot| self.buf_in[b][slot].pieces(t, t + dt))
                .collect::<Result<_, _>>()?;
            for (slot, pieces) in input_pieces.iter().enumerate() {
                let mass: f64 = pieces.iter().map(|&(a, e, r)| r * (e - a)).sum();
                self.mass_in[b] += mass;
                if let ClassSrc::Cross { stream } = self.classes_at[b][slot].1 {
                    self.mass_cross[stream] += mass;
                }
            }
            let ins = &self.buf_in[b];
            let out = self.bufs[b].step(t, dt, &input_pieces, &|slot, a, bnd| {
                ins[slot].pieces(a, bnd)
            })?;
            if !self.bufs[b].queue().is_finite() {
                return Err(SolverError::NonFiniteState {
                    element: self.graph.buffer_names[b].clone(),
                    t,
                });
            }
            for (slot, segs) in out.class_segments.iter().enumerate() {
                let mut prev = t;
                for &(end, rate) in segs {
                    self.mass_out[b] += rate * (end - prev);
                    prev = end;
                }
                for (end, rate) in condense_segments(t, segs, dt / 4.0) {
                    self.buf_out[b][slot].push(end, rate);
                }
            }
        }
        Ok(())
    }

    /// Drops history older than the retention window behind `now`.
    fn prune(&mut self, now: f64) {
        let total_tau: f64 = self.bufs.iter().map(BufferState::tau).sum();
        self.keep = self
            .keep
            .max(2.0 * (self.graph.max_prop_rtt() + total_tau) + 1.0);
        let horizon = now - self.keep;
        if horizon <= 0.0 {
            return;
        }
        for s in &mut self.send {
            s.prune(horizon);
        }
        for s in &mut self.cross {
            s.prune(horizon);
        }
        for group in self.buf_in.iter_mut().chain(self.buf_out.iter_mut()) {
            for s in group {
                s.prune(horizon);
            }
        }
        if !self.cfg.retain_history {
            for b in &mut self.bufs {
                b.prune(horizon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_graph, BufferSpec, CrossSpec, UserSpec};
    use crate::user::{ScriptedWindow, WindowScript};

    /// Capacity of the 100 Mb/s link in 1590-byte packets per second.
    const C_SHARED: f64 = 100e6 / (1590.0 * 8.0);

    fn shared_link_graph() -> NetworkGraph {
        // Two users on one bottleneck; symmetric forward/backward split.
        build_graph(
            &[
                UserSpec {
                    name: "u1".into(),
                    path: vec!["b1".into()],
                    hop_delays: vec![0.0016, 0.0016],
                },
                UserSpec {
                    name: "u2".into(),
                    path: vec!["b1".into()],
                    hop_delays: vec![0.0585, 0.0585],
                },
            ],
            &[BufferSpec {
                name: "b1".into(),
                capacity: C_SHARED,
            }],
            &[],
        )
        .unwrap()
    }

    fn series_graph(with_cross: bool) -> NetworkGraph {
        let c1 = 72e6 / (1448.0 * 8.0);
        let c2 = 180e6 / (1448.0 * 8.0);
        let cross: Vec<CrossSpec> = if with_cross {
            vec![CrossSpec {
                buffer: "b1".into(),
            }]
        } else {
            Vec::new()
        };
        build_graph(
            &[
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
                UserSpec {
                    name: "u3".into(),
                    path: vec!["b2".into()],
                    hop_delays: vec![0.0, 0.04],
                },
            ],
            &[
                BufferSpec {
                    name: "b1".into(),
                    capacity: c1,
                },
                BufferSpec {
                    name: "b2".into(),
                    capacity: c2,
                },
            ],
            &cross,
        )
        .unwrap()
    }

    fn single_user_graph(capacity: f64, with_cross: bool) -> NetworkGraph {
        let cross: Vec<CrossSpec> = if with_cross {
            vec![CrossSpec { buffer: "b".into() }]
        } else {
            Vec::new()
        };
        build_graph(
            &[UserSpec {
                name: "u".into(),
                path: vec!["b".into()],
                hop_delays: vec![0.075, 0.075],
            }],
            &[BufferSpec {
                name: "b".into(),
                capacity,
            }],
            &cross,
        )
        .unwrap()
    }

    fn scripted(script: WindowScript) -> Box<dyn Protocol> {
        Box::new(ScriptedWindow(script))
    }

    #[test]
    fn shared_link_equilibrium_matches_root_finding() {
        let g = shared_link_graph();
        // Pre-step windows (50, 550): independent bisection on
        // 50 / (0.0032 + tau) + 550 / (0.117 + tau) = c gives this root.
        let eq = equilibrium(&g, &[50.0, 550.0], &[]).unwrap();
        assert!((eq.tau[0] - 0.010846515520866195).abs() < 1e-12);
        let load: f64 = eq.rates.iter().sum();
        assert!((load - C_SHARED).abs() < 1e-6);
        assert!(eq.congested[0]);
        // Post-step windows (150, 550).
        let eq2 = equilibrium(&g, &[150.0, 550.0], &[]).unwrap();
        assert!((eq2.tau[0] - 0.0326337781137301).abs() < 1e-12);
    }

    #[test]
    fn series_equilibrium_loads_only_the_first_buffer() {
        let g = series_graph(false);
        let eq = equilibrium(&g, &[1600.0, 1200.0, 5.0], &[]).unwrap();
        assert!((eq.tau[0] - 0.3485109861428711).abs() < 1e-12);
        assert_eq!(eq.tau[1], 0.0);
        assert!(!eq.congested[1]);

        let g = series_graph(true);
        let c1 = 72e6 / (1448.0 * 8.0);
        let eq = equilibrium(&g, &[1200.0, 1600.0, 5.0], &[0.5 * c1]).unwrap();
        assert!((eq.tau[0] - 0.804266875612097).abs() < 1e-12);
        assert_eq!(eq.tau[1], 0.0);
    }

    #[test]
    fn saturating_cross_traffic_is_rejected() {
        let g = single_user_graph(1000.0, true);
        let err = equilibrium(&g, &[100.0], &[1000.0]).unwrap_err();
        assert!(matches!(err, SolverError::CrossSaturatesBuffer { .. }));
    }

    #[test]
    fn uncongested_pipe_holds_its_fixed_point() {
        // Window below the bandwidth-delay product: no queue, rate w / T.
        let g = single_user_graph(1000.0, false);
        let protocols = vec![scripted(WindowScript::constant(60.0))];
        let cfg = SimulationConfig {
            dt: 1e-3,
            t_end: 1.0,
            ..Default::default()
        };
        let mut sim = Simulation::new(
            &g,
            protocols,
            &[60.0],
            Vec::new(),
            SendLaw::AckClocked,
            OutputModel::Flow,
            cfg,
            None,
        )
        .unwrap();
        assert_eq!(sim.initial_equilibrium().tau[0], 0.0);
        let trace = sim.run().unwrap();
        let q = trace.column("b.q").unwrap();
        let x = trace.column("u.x").unwrap();
        let fl = trace.column("u.flight").unwrap();
        for i in 0..trace.len() {
            assert!(q[i].abs() < 1e-9, "queue stays empty");
            assert!((x[i] - 400.0).abs() < 1e-9, "rate w / T");
            assert!((fl[i] - 60.0).abs() < 1e-6, "flight equals window");
        }
    }

    #[test]
    fn congested_equilibrium_is_stationary_until_perturbed() {
        let g = shared_link_graph();
        let protocols = vec![
            scripted(WindowScript::constant(50.0)),
            scripted(WindowScript::constant(550.0)),
        ];
        let cfg = SimulationConfig {
            dt: 1e-3,
            t_end: 1.0,
            ..Default::default()
        };
        let mut sim = Simulation::new(
            &g,
            protocols,
            &[50.0, 550.0],
            Vec::new(),
            SendLaw::AckClocked,
            OutputModel::Flow,
            cfg,
            None,
        )
        .unwrap();
        let q_star = sim.initial_equilibrium().queue(&g, 0);
        let trace = sim.run().unwrap();
        let q = trace.column("b1.q").unwrap();
        for (i, &qi) in q.iter().enumerate() {
            assert!(
                (qi - q_star).abs() < 1e-6 * q_star,
                "row {i}: q = {qi}, want {q_star}"
            );
        }
    }

    #[test]
    fn window_step_settles_to_the_new_equilibrium() {
        let g = shared_link_graph();
        let protocols = vec![
            scripted(WindowScript::new(50.0, vec![(3.0, 150.0)])),
            scripted(WindowScript::constant(550.0)),
        ];
        let cfg = SimulationConfig {
            dt: 1e-3,
            t_end: 8.0,
            ..Default::default()
        };
        let mut sim = Simulation::new(
            &g,
            protocols,
            &[50.0, 550.0],
            Vec::new(),
            SendLaw::AckClocked,
            OutputModel::Flow,
            cfg,
            None,
        )
        .unwrap();
        let trace = sim.run().unwrap();
        let q = trace.column("b1.q").unwrap();
        let q_pre = 0.010846515520866195 * C_SHARED;
        let q_post = 0.0326337781137301 * C_SHARED;
        let i3 = trace.index_from(3.0);
        assert!((q[i3] - q_pre).abs() < 1e-3 * q_pre, "still settled at 3 s");
        let last = *q.last().unwrap();
        assert!(
            (last - q_post).abs() < 0.5,
            "final queue {last}, equilibrium {q_post}"
        );
        // The window pulse reaches the queue one forward delay after 3 s and
        // not before.
        let before = trace.index_from(3.0 + 0.0008);
        assert!((q[before] - q_pre).abs() < 1e-3 * q_pre);
    }

    #[test]
    fn halving_goes_silent_for_the_closed_form_interval() {
        // Single user at capacity c: halving w retains acks for dw / c
        // seconds, then sending resumes.
        let c = 12.5e6 / (1040.0 * 8.0);
        let g = single_user_graph(c, false);
        let protocols = vec![scripted(WindowScript::new(500.0, vec![(5.0, 250.0)]))];
        let cfg = SimulationConfig {
            dt: 1e-3,
            t_end: 8.0,
            ..Default::default()
        };
        let mut sim = Simulation::new(
            &g,
            protocols,
            &[500.0],
            Vec::new(),
            SendLaw::AckClocked,
            OutputModel::Flow,
            cfg,
            None,
        )
        .unwrap();
        let trace = sim.run().unwrap();
        let x = trace.column("u.x").unwrap();
        let pi = trace.column("u.pi").unwrap();
        let times = trace.times();
        let resume = 5.0 + 250.0 / c;
        for i in 0..trace.len() {
            let t = times[i];
            if t > 5.0 + 1e-3 && t < resume - 1e-3 {
                assert_eq!(x[i], 0.0, "silent at t = {t}");
                assert!(pi[i] < 0.0, "retaining at t = {t}");
            }
            if t > resume + 2e-3 {
                assert!(x[i] > 0.0, "resumed by t = {t}");
                assert_eq!(pi[i], 0.0);
            }
        }
        // Queue settles to the post-halving equilibrium.
        let eq_post = equilibrium(&g, &[250.0], &[]).unwrap();
        let q = trace.column("b.q").unwrap();
        assert!((q.last().unwrap() - eq_post.queue(&g, 0)).abs() < 0.5);
    }

    #[test]
    fn approximate_laws_reach_the_same_equilibrium() {
        let g = shared_link_graph();
        for law in [SendLaw::WindowOverRtt, SendLaw::WindowOverNominalRtt] {
            let protocols = vec![
                scripted(WindowScript::new(50.0, vec![(3.0, 150.0)])),
                scripted(WindowScript::constant(550.0)),
            ];
            let cfg = SimulationConfig {
                dt: 1e-3,
                t_end: 8.0,
                ..Default::default()
            };
            let mut sim = Simulation::new(
                &g,
                protocols,
                &[50.0, 550.0],
                Vec::new(),
                law,
                OutputModel::Flow,
                cfg,
                None,
            )
            .unwrap();
            let trace = sim.run().unwrap();
            let q = trace.column("b1.q").unwrap();
            let q_post = 0.0326337781137301 * C_SHARED;
            assert!(
                (q.last().unwrap() - q_post).abs() < 1.0,
                "{law:?} settles to the shared equilibrium"
            );
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let g = shared_link_graph();
            let protocols = vec![
                scripted(WindowScript::new(50.0, vec![(0.5, 150.0)])),
                scripted(WindowScript::constant(550.0)),
            ];
            let cfg = SimulationConfig {
                dt: 1e-3,
                t_end: 2.0,
                ..Default::default()
            };
            let mut sim = Simulation::new(
                &g,
                protocols,
                &[50.0, 550.0],
                Vec::new(),
                SendLaw::AckClocked,
                OutputModel::Flow,
                cfg,
                None,
            )
            .unwrap();
            sim.run().unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn too_coarse_a_step_is_rejected() {
        let g = shared_link_graph();
        let protocols = vec![
            scripted(WindowScript::constant(50.0)),
            scripted(WindowScript::constant(550.0)),
        ];
        let cfg = SimulationConfig {
            dt: 0.01,
            t_end: 1.0,
            ..Default::default()
        };
        let err = Simulation::new(
            &g,
            protocols,
            &[50.0, 550.0],
            Vec::new(),
            SendLaw::AckClocked,
            OutputModel::Flow,
            cfg,
            None,
        )
        .err()
        .unwrap();
        assert!(matches!(err, SolverError::BackwardDelayTooShort { .. }));
    }
}
