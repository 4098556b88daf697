//! One bottleneck, two users, one window step.
//!
//! A short-delay user shares a 100 Mb/s link with a long-delay user. At
//! t = 3 s the short user raises its window from 50 to 150 packets and the
//! queue climbs to a new equilibrium. The fluid model tracks the packet
//! oracle through the transient; both settle on the queue the fixed-point
//! solver predicts.

use ackflow::runner::{run_model, ModelChoice};
use ackflow::scenario::builtin;
use ackflow::solver::equilibrium;

fn main() {
    let sc = builtin("scenario1").expect("builtin scenario");
    let graph = sc.graph().expect("valid topology");
    let c = sc.capacity_pkts(sc.topology.buffers[0].capacity_bps);

    let before = equilibrium(&graph, &[50.0, 550.0], &[]).expect("equilibrium");
    let after = equilibrium(&graph, &[150.0, 550.0], &[]).expect("equilibrium");
    println!("capacity: {c:.3} pkt/s");
    println!(
        "predicted queue: {:.2} pkts before the step, {:.2} after",
        before.queue(&graph, 0),
        after.queue(&graph, 0)
    );

    let fluid = run_model(&sc, ModelChoice::Flow).expect("fluid run");
    let oracle = run_model(&sc, ModelChoice::Oracle).expect("oracle run");

    println!("\n  t      fluid q    oracle q    u1 rate (pkt/s)");
    for k in 0..=16 {
        let t = 0.5 * k as f64;
        let fi = fluid.index_from(t);
        let oi = oracle.index_from(t);
        println!(
            "{:5.2}  {:9.2}  {:9.0}  {:12.1}",
            t,
            fluid.column("b1.q").unwrap()[fi],
            oracle.column("b1.q").unwrap()[oi],
            fluid.column("u1.x").unwrap()[fi],
        );
    }

    let last = fluid.len() - 1;
    println!(
        "\nfinal fluid queue {:.3} pkts vs fixed point {:.3} pkts",
        fluid.column("b1.q").unwrap()[last],
        after.queue(&graph, 0)
    );
}
