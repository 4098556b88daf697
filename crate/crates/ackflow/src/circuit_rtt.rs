//! Time maps around a circuit.
//!
//! Data leaving a user crosses channels (fixed shifts) and buffers (the
//! state-dependent exit map `f`), so "when was the flow now arriving back
//! home actually sent" is a composition of shifts and inverse exit maps `g`.
//! The backward map is causal: at time `t` every `g` it needs is already
//! committed. The forward map needs future delay state when evaluated near
//! the present, so it can fail with an ahead-of-history error; it is a
//! diagnostic, not something the solver depends on.

use crate::buffer::{BufferError, BufferState};
use crate::signal::FlowSignal;
use crate::topology::Circuit;

/// When the flow arriving at the user's input at `t` left the user: channels
/// shift time back, buffers apply `g`, last hop first.
pub fn backward_time(
    circuit: &Circuit,
    buffers: &[BufferState],
    t: f64,
) -> Result<f64, BufferError> {
    let mut x = t - circuit.bwd_delay;
    for (i, &b) in circuit.buffers.iter().enumerate().rev() {
        x = buffers[b].backward_time(x)?;
        x -= circuit.fwd_delays[i];
    }
    Ok(x)
}

/// When flow sent at `t` arrives back at the user: the inverse composition,
/// channels then `f` per buffer.
pub fn forward_time(
    circuit: &Circuit,
    buffers: &[BufferState],
    t: f64,
) -> Result<f64, BufferError> {
    let mut x = t;
    for (i, &b) in circuit.buffers.iter().enumerate() {
        x += circuit.fwd_delays[i];
        x = buffers[b].forward_time(x)?;
    }
    Ok(x + circuit.bwd_delay)
}

/// Round-trip time attributed to acks arriving at `t`: elapsed time since the
/// acked data left the user.
pub fn rtt_observed(
    circuit: &Circuit,
    buffers: &[BufferState],
    t: f64,
) -> Result<f64, BufferError> {
    Ok(t - backward_time(circuit, buffers, t)?)
}

/// Packets in flight at `t`: everything sent after the departure time of the
/// flow now arriving back.
pub fn flight_size(
    send: &FlowSignal,
    circuit: &Circuit,
    buffers: &[BufferState],
    t: f64,
) -> Result<f64, BufferError> {
    let depart = backward_time(circuit, buffers, t)?;
    Ok(send.integrate(depart, t)?)
}
