//! Every model on the same scenario, deviations side by side.
//!
//! Runs the shared-bottleneck step scenario under the exact flow model, the
//! pseudo-queue output separation, the two window-law approximations, the
//! static-link overlay, and the packet oracle, then reports each model's
//! worst queue deviation from the exact flow run. The approximations differ
//! most during the transient right after the window step; the oracle differs
//! by packet-level granularity only.

use ackflow::runner::{run_model, ModelChoice};
use ackflow::scenario::builtin;
use ackflow::trace::max_abs_deviation;

fn main() {
    let mut sc = builtin("scenario1").expect("builtin scenario");
    sc.run.dt = 2e-4; // coarser grid keeps this demo quick

    let reference = run_model(&sc, ModelChoice::Flow).expect("flow run");
    let refq = reference.column("b1.q").unwrap();
    let after_step = reference.index_from(3.0);

    println!("worst |q - q_flow| on the shared bottleneck:");
    println!("  model         whole run   after the step");
    for m in [
        ModelChoice::PseudoQueue,
        ModelChoice::Ratio,
        ModelChoice::Joint,
        ModelChoice::StaticLink,
        ModelChoice::Oracle,
    ] {
        let trace = run_model(&sc, m).expect("model run");
        let q = trace.column("b1.q").unwrap();
        let n = q.len().min(refq.len());
        let whole = max_abs_deviation(&refq[..n], &q[..n], 0);
        let tail = max_abs_deviation(&refq[..n], &q[..n], after_step.min(n));
        println!("  {:12}  {:9.3}  {:13.3}", m.dir_name(), whole, tail);
    }

    let st = run_model(&sc, ModelChoice::StaticLink).expect("static run");
    let n = st.len().min(refq.len());
    let qs = st.column("b1.q_static").unwrap();
    println!(
        "\nthe static-link *formula* column deviates by {:.3} pkts from the \
         exact queue\n(the static model keeps exact dynamics and adds the \
         formula as an overlay)",
        max_abs_deviation(&refq[..n], &qs[..n], 0)
    );
}
