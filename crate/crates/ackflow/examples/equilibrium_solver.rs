//! Fixed-window equilibria without running a simulation.
//!
//! The fixed point behind every scenario init: given windows, capacities,
//! and propagation delays, solve for the queuing delays at which each
//! congested buffer serves exactly its capacity. This example sweeps one
//! user's window on a two-bottleneck topology and prints where each buffer
//! crosses from idle to congested.

use ackflow::solver::equilibrium;
use ackflow::topology::{build_graph, BufferSpec, CrossSpec, UserSpec};

fn main() {
    let buffers = vec![
        BufferSpec {
            name: "b1".into(),
            capacity: 4000.0,
        },
        BufferSpec {
            name: "b2".into(),
            capacity: 9000.0,
        },
    ];
    let users = vec![
        UserSpec {
            name: "transit".into(),
            path: vec!["b1".into(), "b2".into()],
            hop_delays: vec![0.0, 0.02, 0.08],
        },
        UserSpec {
            name: "local".into(),
            path: vec!["b2".into()],
            hop_delays: vec![0.0, 0.05],
        },
    ];
    let graph = build_graph(&users, &buffers, &[] as &[CrossSpec]).expect("valid topology");

    println!("user 1 crosses both buffers (rtt 0.10 s), user 2 only b2 (rtt 0.05 s)");
    println!("sweeping w1 with w2 = 300:\n");
    println!("  w1     tau1 (ms)  tau2 (ms)  x1 (pkt/s)  x2 (pkt/s)  congested");
    for w1 in [50.0, 150.0, 250.0, 400.0, 700.0, 1200.0] {
        let eq = equilibrium(&graph, &[w1, 300.0], &[]).expect("fixed point");
        let tags: Vec<&str> = graph
            .buffer_names
            .iter()
            .zip(&eq.congested)
            .filter(|(_, &c)| c)
            .map(|(n, _)| n.as_str())
            .collect();
        println!(
            "{:6.0}  {:8.2}  {:9.2}  {:10.1}  {:10.1}  {}",
            w1,
            1e3 * eq.tau[0],
            1e3 * eq.tau[1],
            eq.rates[0],
            eq.rates[1],
            if tags.is_empty() {
                "none".to_string()
            } else {
                tags.join("+")
            }
        );
    }

    println!("\nwith cross traffic eating half of b1:");
    let graph2 = build_graph(
        &users,
        &buffers,
        &[CrossSpec {
            buffer: "b1".into(),
        }],
    )
    .expect("valid topology");
    for w1 in [150.0, 400.0] {
        let eq = equilibrium(&graph2, &[w1, 300.0], &[2000.0]).expect("fixed point");
        println!(
            "  w1 = {:4.0}: tau1 = {:.2} ms, x1 = {:.1} pkt/s (b1 effectively halved)",
            w1,
            1e3 * eq.tau[0],
            eq.rates[0]
        );
    }
}
