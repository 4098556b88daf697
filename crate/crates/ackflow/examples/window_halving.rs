//! Window decrease and the silent interval.
//!
//! A single user halves its window from 500 to 250 packets at t = 5 s. With
//! 250 packets suddenly in excess, the sender goes completely silent:
//! returning acks burn down the deficit instead of clocking new packets out.
//! Sending resumes only once 250 acks have arrived, which at the bottleneck
//! ack rate c takes 250/c seconds. The fluid model carries the deficit in an
//! explicit state (pi below zero while silent) and the oracle shows the same
//! dead time packet by packet.

use ackflow::runner::{run_model, ModelChoice};
use ackflow::scenario::builtin;

fn main() {
    let sc = builtin("scenario7").expect("builtin scenario");
    let c = sc.capacity_pkts(sc.topology.buffers[0].capacity_bps);
    let resume = 5.0 + 250.0 / c;
    println!("capacity {c:.3} pkt/s; predicted silent interval (5.000, {resume:.3}) s");

    let fluid = run_model(&sc, ModelChoice::Flow).expect("fluid run");
    let oracle = run_model(&sc, ModelChoice::Oracle).expect("oracle run");

    println!("\n  t       fluid x     fluid pi   fluid flight  oracle flight");
    for k in 0..=14 {
        let t = 4.8 + 0.05 * k as f64;
        let fi = fluid.index_from(t);
        let oi = oracle.index_from(t);
        println!(
            "{:6.2}  {:9.1}  {:10.1}  {:11.1}  {:13.0}",
            t,
            fluid.column("u1.x").unwrap()[fi],
            fluid.column("u1.pi").unwrap()[fi],
            fluid.column("u1.flight").unwrap()[fi],
            oracle.column("u1.flight").unwrap()[oi],
        );
    }

    // Locate where the fluid send rate actually comes back.
    let x = fluid.column("u1.x").unwrap();
    let times = fluid.times();
    let i5 = fluid.index_from(5.01);
    let back = times
        .iter()
        .zip(x)
        .skip(i5)
        .find(|(_, &v)| v > 0.0)
        .map(|(&t, _)| t)
        .unwrap_or(f64::NAN);
    println!("\nfluid sending resumes at t = {back:.4} s (prediction {resume:.4} s)");
}
