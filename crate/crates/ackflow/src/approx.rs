//! Closed-form approximations of the window sending law.
//!
//! Three reductions of the exact ack-clocked model are provided as pure
//! formulas: the ratio form (window over observed round trip), the joint form
//! (ratio against the forward queueing delay plus the window's own rate of
//! change), and the static-link delay formula that predicts queueing delay
//! from delayed windows alone. [`apply_static_overlay`] evaluates the last of
//! these alongside an integrated flow trace so the two can be compared column
//! against column instead of silently replacing the queue dynamics.

use crate::solver::{Equilibrium, SendLaw};
use crate::topology::NetworkGraph;
use crate::trace::TraceSet;

/// Which closed-form reduction stands in for the exact ack-clocked law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxKind {
    /// Rate is the window divided by the currently observed round trip.
    Ratio,
    /// Ratio form against the nominal round trip plus the window derivative.
    Joint,
    /// Exact sending law, with the static delay formula overlaid on the trace.
    StaticLink,
}

impl ApproxKind {
    /// The sending law a simulation should run under for this reduction. The
    /// static-link variant keeps the exact law: its formula lives in overlay
    /// columns, not in the dynamics.
    pub fn send_law(self) -> SendLaw {
        match self {
            ApproxKind::Ratio => SendLaw::WindowOverRtt,
            ApproxKind::Joint => SendLaw::WindowOverNominalRtt,
            ApproxKind::StaticLink => SendLaw::AckClocked,
        }
    }
}

/// Sending rate `w / (T + τ_back)`: the window spread over the propagation
/// round trip plus the queueing delay seen by the returning acknowledgements.
pub fn ratio_rate(w: f64, prop_rtt: f64, tau_back: f64) -> f64 {
    debug_assert!(prop_rtt + tau_back > 0.0, "round trip must be positive");
    w / (prop_rtt + tau_back)
}

/// Sending rate `w / (T + τ_fwd) + ẇ`: the ratio form against the queueing
/// delay met in the forward direction, plus the window's own rate of change
/// so window steps turn into immediate bursts.
pub fn joint_rate(w: f64, w_dot: f64, prop_rtt: f64, tau_fwd: f64) -> f64 {
    debug_assert!(prop_rtt + tau_fwd > 0.0, "round trip must be positive");
    w / (prop_rtt + tau_fwd) + w_dot
}

/// Static-link queueing delay `τ = c⁻¹ Σᵢ wᵢ(t − T_f) − T` from the delayed
/// windows alone. Valid when every window shares one bottleneck with the same
/// propagation delays, the buffer stays congested, and no sender retains
/// acknowledgements; outside those conditions the formula runs fast.
pub fn static_link_tau(windows_delayed: &[f64], capacity: f64, prop_rtt: f64) -> f64 {
    debug_assert!(capacity > 0.0, "capacity must be positive");
    windows_delayed.iter().sum::<f64>() / capacity - prop_rtt
}

/// Outcome of [`apply_static_overlay`]: the names of the columns added and
/// any structural conditions under which the formula is known to be biased.
#[derive(Debug, Clone)]
pub struct StaticOverlay {
    /// Added column names, `<buffer>.tau_static` then `<buffer>.q_static`
    /// per buffer.
    pub columns: Vec<String>,
    /// Human-readable validity warnings; empty means the structural
    /// preconditions of the formula hold.
    pub warnings: Vec<String>,
}

/// Appends `<buffer>.tau_static` and `<buffer>.q_static` columns to a flow
/// trace, computed from the traced windows as
///
/// ```text
/// τ_b(t) = τ*_b + (Σᵢ wᵢ((t − T_f,i,b)⁻) − Σᵢ wᵢ⁰) / c_b
/// ```
///
/// where the sum runs over users crossing buffer `b`, `T_f,i,b` is user `i`'s
/// propagation delay to the buffer, and the constant is anchored at the run's
/// equilibrium. On a single homogeneous bottleneck the anchor reduces to the
/// plain `Σw/c − T` law; elsewhere it keeps the overlay comparable to the
/// integrated queue. Windows are read left-continuously so a step at `t`
/// counts only after its pulse has fully left the sender.
///
/// Structural conditions under which the formula is biased fast are reported
/// as warnings: heterogeneous propagation delays among the buffer's users,
/// cross traffic at the buffer, and multi-buffer paths.
pub fn apply_static_overlay(
    trace: &mut TraceSet,
    graph: &NetworkGraph,
    initial_windows: &[f64],
    eq: &Equilibrium,
) -> StaticOverlay {
    assert_eq!(
        initial_windows.len(),
        graph.num_users(),
        "one initial window per user"
    );
    let times: Vec<f64> = trace.times().to_vec();
    let mut added: Vec<(String, Vec<f64>)> = Vec::new();
    let mut warnings = Vec::new();

    for b in 0..graph.num_buffers() {
        let bname = &graph.buffer_names[b];
        // Users crossing this buffer, with their propagation delay to it.
        let mut users: Vec<(usize, f64)> = Vec::new();
        let mut multi_hop = false;
        for i in 0..graph.num_users() {
            let circuit = graph.circuit_of(i);
            if let Some(pos) = circuit.buffers.iter().position(|&x| x == b) {
                let tf: f64 = circuit.fwd_delays[..=pos].iter().sum();
                users.push((i, tf));
                multi_hop |= circuit.buffers.len() > 1;
            }
        }
        if users.is_empty() {
            continue;
        }
        let homogeneous = users.iter().all(|&(i, tf)| {
            (tf - users[0].1).abs() < 1e-12
                && (graph.circuit_of(i).prop_rtt() - graph.circuit_of(users[0].0).prop_rtt()).abs()
                    < 1e-12
        });
        if !homogeneous {
            warnings.push(format!(
                "buffer {bname}: users reach it with heterogeneous propagation delays; \
                 the static formula will run fast through transients"
            ));
        }
        if graph.routing.cross_at(b).is_some() {
            warnings.push(format!(
                "buffer {bname}: cross traffic is not captured by the static formula"
            ));
        }
        if multi_hop {
            warnings.push(format!(
                "buffer {bname}: multi-buffer paths ignore upstream queueing in \
                 the static formula"
            ));
        }

        let w0_sum: f64 = users.iter().map(|&(i, _)| initial_windows[i]).sum();
        let anchor = eq.tau[b] - w0_sum / graph.capacities[b];
        let wcols: Vec<(String, f64)> = users
            .iter()
            .map(|&(i, tf)| (format!("{}.w", graph.user_names[i]), tf))
            .collect();
        let tau_col: Vec<f64> = times
            .iter()
            .map(|&t| {
                let wsum: f64 = wcols
                    .iter()
                    .map(|(name, tf)| {
                        trace
                            .value_before(name, t - tf)
                            .expect("window column present in flow trace")
                    })
                    .sum();
                anchor + wsum / graph.capacities[b]
            })
            .collect();
        let q_col: Vec<f64> = tau_col.iter().map(|&x| x * graph.capacities[b]).collect();
        added.push((format!("{bname}.tau_static"), tau_col));
        added.push((format!("{bname}.q_static"), q_col));
    }

    let mut columns = Vec::with_capacity(added.len());
    for (name, values) in added {
        trace.add_column(name.clone(), values);
        columns.push(name);
    }
    StaticOverlay { columns, warnings }
}
