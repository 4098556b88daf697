//! Plugging a closed-loop controller into the solver.
//!
//! Scripted windows are the default, but any type implementing `Protocol`
//! can drive a user. This one is a delay-targeting controller: it grows the
//! window at a constant rate while the observed queuing delay sits below a
//! target and sheds a fraction per round trip when the delay overshoots. On
//! a single bottleneck it settles into a shallow sawtooth around the window
//! that produces the target delay.

use ackflow::buffer::OutputModel;
use ackflow::signal::FlowSignal;
use ackflow::solver::{SendLaw, Simulation, SimulationConfig};
use ackflow::topology::{build_graph, BufferSpec, CrossSpec, UserSpec};
use ackflow::user::{ObservedCongestion, Protocol};

/// Additive increase toward a queuing-delay target and a smooth
/// multiplicative pullback past it. Both adjustments are rates, so the
/// window moves continuously instead of jumping.
struct DelayTarget {
    target: f64,
    window: f64,
    /// Additive growth in packets per second.
    gain: f64,
    /// Fraction of the window shed per round trip when over target.
    backoff: f64,
}

impl Protocol for DelayTarget {
    fn window(&mut self, _t: f64, dt: f64, obs: &ObservedCongestion) -> f64 {
        if obs.queuing_delay < self.target {
            self.window += self.gain * dt;
        } else {
            let rate = self.backoff / obs.rtt.max(1e-3);
            self.window *= 1.0 - (rate * dt).min(0.5);
        }
        self.window
    }
}

fn main() {
    let capacity = 2000.0;
    let graph = build_graph(
        &[UserSpec {
            name: "ctrl".into(),
            path: vec!["b1".into()],
            hop_delays: vec![0.025, 0.025],
        }],
        &[BufferSpec {
            name: "b1".into(),
            capacity,
        }],
        &[] as &[CrossSpec],
    )
    .expect("valid topology");

    let target = 0.020; // seconds of queuing
    let controller = DelayTarget {
        target,
        window: 40.0,
        gain: 200.0,
        backoff: 0.4,
    };
    let cfg = SimulationConfig {
        dt: 5e-4,
        t_end: 12.0,
        ..SimulationConfig::default()
    };
    let mut sim = Simulation::new(
        &graph,
        vec![Box::new(controller)],
        &[40.0],
        Vec::<FlowSignal>::new(),
        SendLaw::AckClocked,
        OutputModel::Flow,
        cfg,
        Some(&[0.0]), // start from an empty queue, not the scripted-window equilibrium
    )
    .expect("simulation setup");
    let trace = sim.run().expect("run");

    let ideal = capacity * (0.05 + target);
    println!("bandwidth-delay product at the target delay: {ideal:.0} packets");
    println!("\n  t       window    queue (pkts)   delay (ms)");
    for k in 0..=24 {
        let t = 0.5 * k as f64;
        let i = trace.index_from(t);
        println!(
            "{:6.2}  {:8.1}  {:12.1}  {:10.2}",
            t,
            trace.column("ctrl.w").unwrap()[i],
            trace.column("b1.q").unwrap()[i],
            1e3 * trace.column("b1.tau").unwrap()[i],
        );
    }

    let from = trace.index_from(8.0);
    let w = &trace.column("ctrl.w").unwrap()[from..];
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    println!("\nmean window over the last third: {mean:.1} packets (ideal {ideal:.0})");
}
