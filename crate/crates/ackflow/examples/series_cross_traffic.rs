//! Two bottlenecks in series with constant cross traffic.
//!
//! User 1 crosses both buffers, users 2 and 3 one each, and an unresponsive
//! stream loads buffer 1 at half its capacity. Buffer 1 is the bottleneck;
//! buffer 2 has capacity to spare and its queue stays empty. When user 1's
//! window steps up at t = 10 s, the extra flow still has to transit buffer
//! 1's long queue and the 20 ms channel before buffer 2 can receive a single
//! extra packet — the arrival rate at buffer 2 holds its old value for
//! almost a second after the step.

use ackflow::runner::{run_model, ModelChoice};
use ackflow::scenario::builtin;

fn main() {
    let sc = builtin("scenario5").expect("builtin scenario");
    let fluid = run_model(&sc, ModelChoice::Flow).expect("fluid run");

    let q1 = fluid.column("b1.q").unwrap();
    let tau1 = fluid.column("b1.tau").unwrap();
    let in2 = fluid.column("b2.in").unwrap();
    let times = fluid.times();
    let step_at = 10.0;
    let i0 = fluid.index_from(step_at);

    println!("buffer 1 around the window step at t = {step_at} s:");
    println!("  t        q1 (pkts)   tau1 (s)   b2 arrivals (pkt/s)");
    for k in 0..=10 {
        let t = 9.8 + 0.12 * k as f64;
        let i = fluid.index_from(t);
        println!(
            "{:7.2}  {:9.2}  {:9.4}  {:12.2}",
            times[i], q1[i], tau1[i], in2[i]
        );
    }

    // First instant buffer 2's arrival rate moves off its pre-step value.
    let base = in2[i0];
    let moved = times
        .iter()
        .zip(in2)
        .skip(i0)
        .find(|(_, &v)| (v - base).abs() > 1e-6 * base)
        .map(|(&t, _)| t);
    let earliest = step_at + tau1[i0] + 0.02;
    match moved {
        Some(t) => {
            println!("\nb2 arrivals first move at t = {t:.4} s");
            println!(
                "earliest causal instant: step + tau1 + channel = {:.4} s  (lag {:.4} s)",
                earliest,
                t - step_at
            );
        }
        None => println!("\nb2 arrivals never moved (unexpected)"),
    }

    let last = fluid.len() - 1;
    println!(
        "\nsteady state: q1 {:.1} -> {:.1} pkts, q2 stays {:.3} pkts, cross holds {:.1} pkt/s",
        q1[i0],
        q1[last],
        fluid.column("b2.q").unwrap()[last],
        fluid.column("b1.cross_in").unwrap()[last]
    );
}
