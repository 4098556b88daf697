//! Fluid-flow simulation of window-based congestion control.
//!
//! Networks of ACK-clocked window sources, FIFO buffers with state-dependent
//! delays, constant-delay channels, and cross traffic are integrated as
//! conserved flows rather than as individual packets. The buffer module keeps
//! the forward (`f`) and backward (`g`) time maps that FIFO queuing induces,
//! which is what lets a single aggregate queue be separated exactly back into
//! per-class output flows. A packet-level discrete-event simulator of the
//! same networks is built in as the reference the fluid traces are validated
//! against.
//!
//! Start with the runnable examples (`cargo run --example <name>`) or the
//! `scenario` module's built-in scenario library.

// Validation guards are written `!(x > 0.0)` so NaN fails closed, and
// per-class loops index several parallel arrays by the same class id.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod approx;
pub mod buffer;
pub mod circuit_rtt;
pub mod packet;
pub mod runner;
pub mod scenario;
pub mod signal;
pub mod solver;
pub mod topology;
pub mod trace;
pub mod user;
