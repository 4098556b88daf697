//! Square-wave overload study on a single FIFO buffer.
//!
//! Two classes alternate half-period bursts at twice capacity, so the
//! aggregate input is constant overload and the queue grows linearly. The
//! flow model plays each class back at capacity for a full period — a square
//! wave of twice the input period — while the pseudo-queue model smears the
//! classes into a damped oscillation around the even split. The packet
//! oracle confirms the flow model's cumulative counts.

use ackflow::runner::{run_model, ModelChoice};
use ackflow::scenario::builtin;

fn main() {
    let sc = builtin("squarewave").expect("builtin scenario");
    let c = sc.capacity_pkts(sc.topology.buffers[0].capacity_bps);
    println!(
        "square-wave drive: period 1 s, bursts at 2c = {:.1} pkt/s, capacity c = {:.1} pkt/s",
        2.0 * c,
        c
    );

    let flow = run_model(&sc, ModelChoice::Flow).expect("flow run");
    let pseudo = run_model(&sc, ModelChoice::PseudoQueue).expect("pseudo run");
    let oracle = run_model(&sc, ModelChoice::Oracle).expect("oracle run");

    println!("\n  t      q (pkts)   flow out1   pseudo out1");
    for k in 0..=24 {
        let t = 0.25 * k as f64;
        let i = flow.index_from(t);
        println!(
            "{:5.2}  {:9.1}  {:10.1}  {:11.1}",
            t,
            flow.column("b1.q").unwrap()[i],
            flow.column("c1.out").unwrap()[i],
            pseudo.column("c1.out").unwrap()[i],
        );
    }

    println!("\nclass-1 cumulative output, flow model vs packet oracle:");
    println!("  t      flow cum    oracle cum   diff");
    for k in 1..=6 {
        let t = k as f64;
        let f = flow.column("c1.cum").unwrap()[flow.index_from(t)];
        let o = oracle.column("c1.cum").unwrap()[oracle.index_from(t)];
        println!("{:5.2}  {:9.1}  {:11.1}  {:+6.2}", t, f, o, f - o);
    }
    println!(
        "\none output period carries pi*(1+beta)*c/omega = {:.1} packets per class",
        std::f64::consts::PI * 2.0 * c / std::f64::consts::TAU
    );
}
