//! Run orchestration: model selection, trace production, and CSV fan-out.
//!
//! A scenario runs under one or more models. The five fluid variants go
//! through the network solver (the static variant adds its overlay columns to
//! an exact flow run), and `oracle` runs the packet-level reference
//! simulator. Square-wave scenarios use dedicated single-buffer runners
//! instead of the network pipeline. Each selected model writes a combined
//! `trace.csv` plus one CSV per traced element into its own subdirectory;
//! when several models run, `summary.csv` lists pairwise maxima of the
//! queue-column deviations.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::approx::{apply_static_overlay, ApproxKind};
use crate::buffer::{BufferState, OutputModel};
use crate::packet::{fifo_departures, run_packet_sim, PacketError, PacketSimConfig};
use crate::scenario::{Scenario, ScenarioError};
use crate::signal::FlowSignal;
use crate::solver::{equilibrium, SendLaw, Simulation, SimulationConfig, SolverError};
use crate::trace::{max_abs_deviation, TraceSet};
use crate::user::{Protocol, ScriptedWindow};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("solver failed: {0}")]
    Solver(#[from] SolverError),
    #[error("packet oracle failed: {0}")]
    Packet(#[from] PacketError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One runnable model variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    /// Exact ack-clocked sending with the flow-based output separation.
    Flow,
    /// Exact sending law over the pseudo-queue output separation.
    PseudoQueue,
    /// Window over observed round trip.
    Ratio,
    /// Window over nominal round trip plus the window derivative.
    Joint,
    /// Exact run with the static-link delay formula overlaid.
    StaticLink,
    /// Packet-level reference simulator.
    Oracle,
}

impl ModelChoice {
    pub fn dir_name(self) -> &'static str {
        match self {
            ModelChoice::Flow => "flow",
            ModelChoice::PseudoQueue => "pseudo_queue",
            ModelChoice::Ratio => "ratio",
            ModelChoice::Joint => "joint",
            ModelChoice::StaticLink => "static",
            ModelChoice::Oracle => "oracle",
        }
    }

    pub fn all() -> Vec<ModelChoice> {
        vec![
            ModelChoice::Flow,
            ModelChoice::PseudoQueue,
            ModelChoice::Ratio,
            ModelChoice::Joint,
            ModelChoice::StaticLink,
            ModelChoice::Oracle,
        ]
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for ModelChoice {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "flow" => Ok(ModelChoice::Flow),
            "pseudo_queue" | "pseudo" => Ok(ModelChoice::PseudoQueue),
            "ratio" => Ok(ModelChoice::Ratio),
            "joint" => Ok(ModelChoice::Joint),
            "static" => Ok(ModelChoice::StaticLink),
            "oracle" => Ok(ModelChoice::Oracle),
            other => Err(ScenarioError::Invalid {
                field: "model".into(),
                message: format!(
                    "unknown model {other:?}; expected flow, pseudo_queue, ratio, \
                     joint, static, oracle, or all"
                ),
            }),
        }
    }
}

/// Parses a model selection: a single name, a comma list, or `all`.
pub fn parse_models(s: &str) -> Result<Vec<ModelChoice>, ScenarioError> {
    if s.trim() == "all" {
        return Ok(ModelChoice::all());
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        let m: ModelChoice = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(ScenarioError::Invalid {
            field: "model".into(),
            message: "empty model selection".into(),
        });
    }
    Ok(out)
}

/// Resolves a selection string against a scenario: `all` expands to every
/// model applicable to it. The square-wave study exercises the buffer alone,
/// so its `all` omits the window-law variants.
pub fn resolve_models(sc: &Scenario, selection: &str) -> Result<Vec<ModelChoice>, ScenarioError> {
    if selection.trim() == "all" && sc.squarewave.is_some() {
        return Ok(vec![
            ModelChoice::Flow,
            ModelChoice::PseudoQueue,
            ModelChoice::Oracle,
        ]);
    }
    parse_models(selection)
}

/// Produces the trace for one model of a scenario without writing anything.
pub fn run_model(sc: &Scenario, model: ModelChoice) -> Result<TraceSet, RunError> {
    if let Some(sq) = &sc.squarewave {
        let c = sc.capacity_pkts(sc.topology.buffers[0].capacity_bps);
        let bname = sc.topology.buffers[0].name.clone();
        return match model {
            ModelChoice::Flow => Ok(squarewave_fluid(
                sq.omega,
                sq.beta,
                c,
                &bname,
                OutputModel::Flow,
                sc.run.dt,
                sc.run.t_end,
            )?),
            ModelChoice::PseudoQueue => Ok(squarewave_fluid(
                sq.omega,
                sq.beta,
                c,
                &bname,
                OutputModel::PseudoQueue,
                sc.run.dt,
                sc.run.t_end,
            )?),
            ModelChoice::Oracle => Ok(squarewave_oracle(
                sq.omega,
                sq.beta,
                c,
                &bname,
                sc.run.dt,
                sc.run.t_end,
            )),
            other => Err(RunError::Scenario(ScenarioError::Invalid {
                field: "model".into(),
                message: format!(
                    "the square-wave study defines flow, pseudo_queue, and oracle \
                     runs; {other} has no meaning without windows"
                ),
            })),
        };
    }

    let graph = sc.graph()?;
    let scripts = sc.window_scripts();
    let windows = sc.initial_windows();
    let cross_rates = sc.cross_rates();
    match model {
        ModelChoice::Oracle => {
            let cfg = PacketSimConfig {
                dt: sc.run.dt,
                t_end: sc.run.t_end,
            };
            Ok(run_packet_sim(&graph, &scripts, &cross_rates, &cfg)?)
        }
        fluid => {
            let (law, output) = match fluid {
                ModelChoice::Flow => (SendLaw::AckClocked, OutputModel::Flow),
                ModelChoice::PseudoQueue => (SendLaw::AckClocked, OutputModel::PseudoQueue),
                ModelChoice::Ratio => (ApproxKind::Ratio.send_law(), OutputModel::Flow),
                ModelChoice::Joint => (ApproxKind::Joint.send_law(), OutputModel::Flow),
                ModelChoice::StaticLink => (ApproxKind::StaticLink.send_law(), OutputModel::Flow),
                ModelChoice::Oracle => unreachable!("handled above"),
            };
            let protocols: Vec<Box<dyn Protocol>> = scripts
                .iter()
                .map(|s| Box::new(ScriptedWindow(s.clone())) as Box<dyn Protocol>)
                .collect();
            let cross: Vec<FlowSignal> = cross_rates
                .iter()
                .map(|&r| FlowSignal::constant(0.0, r))
                .collect();
            let cfg = SimulationConfig {
                dt: sc.run.dt,
                t_end: sc.run.t_end,
                ..SimulationConfig::default()
            };
            let mut sim =
                Simulation::new(&graph, protocols, &windows, cross, law, output, cfg, None)?;
            let mut trace = sim.run()?;
            if fluid == ModelChoice::StaticLink {
                let eq = equilibrium(&graph, &windows, &cross_rates)?;
                let overlay = apply_static_overlay(&mut trace, &graph, &windows, &eq);
                for w in &overlay.warnings {
                    eprintln!("static-link validity: {w}");
                }
            }
            Ok(trace)
        }
    }
}

/// Everything a full run produced: where each model's traces landed and the
/// summary location when several models ran.
#[derive(Debug)]
pub struct RunOutcome {
    pub model_dirs: Vec<(ModelChoice, PathBuf)>,
    pub summary_path: Option<PathBuf>,
}

/// Runs the selected models in parallel and writes their traces under
/// `out_dir/<model>/`: a combined `trace.csv` plus one `<element>.csv` per
/// traced element. With more than one model, `out_dir/summary.csv` tabulates
/// the pairwise maximum absolute deviation of every shared `.q` column over
/// the whole run.
pub fn run_scenario(
    sc: &Scenario,
    models: &[ModelChoice],
    out_dir: &Path,
) -> Result<RunOutcome, RunError> {
    let mut traces: Vec<(ModelChoice, TraceSet)> = Vec::with_capacity(models.len());
    let results: Vec<(ModelChoice, Result<TraceSet, RunError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = models
            .iter()
            .map(|&m| (m, scope.spawn(move || run_model(sc, m))))
            .collect();
        handles
            .into_iter()
            .map(|(m, h)| (m, h.join().expect("model thread panicked")))
            .collect()
    });
    for (m, r) in results {
        traces.push((m, r?));
    }

    let mut model_dirs = Vec::new();
    for (m, trace) in &traces {
        let dir = out_dir.join(m.dir_name());
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        write_trace_files(trace, &dir)?;
        model_dirs.push((*m, dir));
    }

    let summary_path = if traces.len() > 1 {
        let path = out_dir.join("summary.csv");
        write_summary(&traces, &path)?;
        Some(path)
    } else {
        None
    };
    Ok(RunOutcome {
        model_dirs,
        summary_path,
    })
}

/// Combined `trace.csv` plus per-element files, elements being the name
/// prefix before the first dot.
fn write_trace_files(trace: &TraceSet, dir: &Path) -> Result<(), RunError> {
    let combined = dir.join("trace.csv");
    let mut f = std::fs::File::create(&combined).map_err(|e| io_err(&combined, e))?;
    trace.write_csv(&mut f).map_err(|e| io_err(&combined, e))?;
    let mut elements: Vec<&str> = Vec::new();
    for name in trace.names() {
        let elem = name.split('.').next().unwrap_or(name);
        if !elements.contains(&elem) {
            elements.push(elem);
        }
    }
    for elem in elements {
        let cols: Vec<&str> = trace
            .names()
            .iter()
            .filter(|n| n.split('.').next() == Some(elem))
            .map(String::as_str)
            .collect();
        let path = dir.join(format!("{elem}.csv"));
        let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        trace
            .write_csv_columns(&mut f, &cols)
            .map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Pairwise maximum deviations of shared queue columns.
fn write_summary(traces: &[(ModelChoice, TraceSet)], path: &Path) -> Result<(), RunError> {
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut write =
        |line: &str| -> Result<(), RunError> { writeln!(f, "{line}").map_err(|e| io_err(path, e)) };
    write("model_a,model_b,column,max_abs_deviation")?;
    for i in 0..traces.len() {
        for j in i + 1..traces.len() {
            let (ma, ta) = &traces[i];
            let (mb, tb) = &traces[j];
            for name in ta.names() {
                if !name.ends_with(".q") {
                    continue;
                }
                let (Some(ca), Some(cb)) = (ta.column(name), tb.column(name)) else {
                    continue;
                };
                let dev = max_abs_deviation(ca, cb, 0);
                write(&format!("{ma},{mb},{name},{dev:.8e}"))?;
            }
        }
    }
    Ok(())
}

/// Square-wave inputs: class 1 carries `(1+beta)·c` on the first half of
/// each period and nothing on the second, class 2 the complement, so the
/// aggregate is a constant overload of `(1+beta)·c`.
fn squarewave_inputs(omega: f64, beta: f64, c: f64, t_end: f64) -> [FlowSignal; 2] {
    let period = std::f64::consts::TAU / omega;
    let half = period / 2.0;
    let hi = (1.0 + beta) * c;
    let mut one = FlowSignal::constant(0.0, 0.0);
    let mut two = FlowSignal::constant(0.0, 0.0);
    let mut t = 0.0;
    while t < t_end + period {
        one.push(t + half, hi);
        one.push(t + period, 0.0);
        two.push(t + half, 0.0);
        two.push(t + period, hi);
        t += period;
    }
    [one, two]
}

/// Fluid square-wave study: one buffer, two scripted class inputs, either
/// output model. Columns: `<b>.q`, `<b>.tau`, and per class `in`, `out`, and
/// cumulative output `cum`.
fn squarewave_fluid(
    omega: f64,
    beta: f64,
    c: f64,
    bname: &str,
    output: OutputModel,
    dt: f64,
    t_end: f64,
) -> Result<TraceSet, SolverError> {
    let inputs = squarewave_inputs(omega, beta, c, t_end);
    let mut buf = BufferState::new(c, output, 2, 0.0, 0.0, 1.0);
    if output == OutputModel::PseudoQueue {
        buf.init_pseudo(&[0.5, 0.5]);
    }
    let mut outs = [
        FlowSignal::constant(0.0, 0.0),
        FlowSignal::constant(0.0, 0.0),
    ];
    let mut trace = TraceSet::new(vec![
        format!("{bname}.q"),
        format!("{bname}.tau"),
        "c1.in".into(),
        "c2.in".into(),
        "c1.out".into(),
        "c2.out".into(),
        "c1.cum".into(),
        "c2.cum".into(),
    ]);

    let steps = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let mut row = vec![buf.queue(), buf.tau()];
        for sig in &inputs {
            row.push(sig.sample(t).map_err(SolverError::Signal)?);
        }
        for sig in &outs {
            row.push(sig.sample(t).map_err(SolverError::Signal)?);
        }
        for sig in &outs {
            row.push(sig.integrate(0.0, t).map_err(SolverError::Signal)?);
        }
        trace.push_row(t, &row);
        if k == steps {
            break;
        }

        let input_pieces: Vec<Vec<(f64, f64, f64)>> = inputs
            .iter()
            .map(|sig| sig.pieces(t, t + dt))
            .collect::<Result<_, _>>()
            .map_err(SolverError::Signal)?;
        let out = buf.step(t, dt, &input_pieces, &|slot, a, b| {
            inputs[slot].pieces(a, b)
        })?;
        for (slot, segs) in out.class_segments.iter().enumerate() {
            for &(end, rate) in segs {
                outs[slot].push(end, rate);
            }
        }
    }
    Ok(trace)
}

/// Packet-level square-wave study: arrivals follow the fluid cumulative
/// curves (one packet per unit of integrated input), service is FIFO at `c`.
/// Columns: `<b>.q`, `<b>.tau`, `<b>.cum_out`, and per class `cum`.
fn squarewave_oracle(omega: f64, beta: f64, c: f64, bname: &str, dt: f64, t_end: f64) -> TraceSet {
    let period = std::f64::consts::TAU / omega;
    let half = period / 2.0;
    let hi = (1.0 + beta) * c;
    // Class k's j-th packet arrives when its cumulative input reaches j;
    // inside an on-window the cumulative grows linearly at rate `hi` from
    // whatever the previous windows emitted.
    let mut arrivals: Vec<(f64, u32)> = Vec::new();
    for class in 0..2u32 {
        let offset = if class == 0 { 0.0 } else { half };
        let mut window_start = offset;
        let mut emitted = 0u64;
        while window_start < t_end + period {
            let window_total = emitted as f64 + hi * half;
            let target_end = window_total.floor() as u64;
            for j in (emitted + 1)..=target_end {
                arrivals.push((window_start + (j - emitted) as f64 / hi, class));
            }
            emitted = target_end;
            window_start += period;
        }
    }
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let departures = fifo_departures(c, &arrivals);

    let mut trace = TraceSet::new(vec![
        format!("{bname}.q"),
        format!("{bname}.tau"),
        format!("{bname}.cum_out"),
        "c1.cum".into(),
        "c2.cum".into(),
    ]);
    let steps = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut arr_idx = 0usize;
    let mut dep_idx = 0usize;
    let mut dep_per_class = [0u64; 2];
    for k in 0..=steps {
        let t = k as f64 * dt;
        while arr_idx < arrivals.len() && arrivals[arr_idx].0 < t {
            arr_idx += 1;
        }
        while dep_idx < departures.len() && departures[dep_idx].0 < t {
            dep_per_class[departures[dep_idx].1 as usize] += 1;
            dep_idx += 1;
        }
        let q = (arr_idx - dep_idx) as f64;
        trace.push_row(
            t,
            &[
                q,
                q / c,
                dep_idx as f64,
                dep_per_class[0] as f64,
                dep_per_class[1] as f64,
            ],
        );
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::cumulative_count;
    use crate::scenario::builtin;

    #[test]
    fn model_parsing_accepts_lists_and_all() {
        assert_eq!(parse_models("flow").unwrap(), vec![ModelChoice::Flow]);
        assert_eq!(
            parse_models("flow,pseudo").unwrap(),
            vec![ModelChoice::Flow, ModelChoice::PseudoQueue]
        );
        assert_eq!(parse_models("all").unwrap().len(), 6);
        assert!(parse_models("fluid").is_err());
        assert!(parse_models("").is_err());
    }

    #[test]
    fn squarewave_flow_output_is_the_delayed_square() {
        let sc = builtin("squarewave").unwrap();
        let trace = run_model(&sc, ModelChoice::Flow).unwrap();
        let c = sc.capacity_pkts(100e6);
        let out1 = trace.column("c1.out").unwrap();
        let times = trace.times();
        // The queue doubles playback time: class 1 output is c on (0,1],
        // 0 on (1,2], and so on.
        for (&t, &v) in times.iter().zip(out1) {
            if t <= 0.0 || t > 5.9 {
                continue;
            }
            let phase = t % 2.0;
            let dist = (phase - 1.0).abs().min(phase.min((2.0 - phase).abs()));
            if dist < 2.0 * sc.run.dt {
                continue; // switching edge
            }
            let want = if phase < 1.0 { c } else { 0.0 };
            assert!(
                (v - want).abs() < 1e-6 * c,
                "out1({t}) = {v}, expected {want}"
            );
        }
        // Queue grows at beta*c.
        let q = trace.column("b1.q").unwrap();
        let at4 = trace.index_from(4.0);
        assert!((q[at4] - 4.0 * c).abs() < 2.0 * sc.run.dt * 2.0 * c + 1e-6);
    }

    #[test]
    fn squarewave_oracle_counts_track_the_fluid_integral() {
        let sc = builtin("squarewave").unwrap();
        let fluid = run_model(&sc, ModelChoice::Flow).unwrap();
        let oracle = run_model(&sc, ModelChoice::Oracle).unwrap();
        let c = sc.capacity_pkts(100e6);
        for &t in &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0] {
            let idx = fluid.index_from(t);
            let f1 = fluid.column("c1.cum").unwrap()[idx];
            let o1 = oracle.column("c1.cum").unwrap()[oracle.index_from(t)];
            assert!(
                (f1 - o1).abs() <= 2.0,
                "class-1 counts diverge at t={t}: fluid {f1}, oracle {o1}"
            );
        }
        // One full output period carries pi*(1+beta)*c/omega packets.
        let n_t = std::f64::consts::PI * 2.0 * c / std::f64::consts::TAU;
        let o1_2 = oracle.column("c1.cum").unwrap()[oracle.index_from(2.0)];
        assert!((o1_2 - n_t).abs() <= 2.0, "N(T) = {o1_2}, expected {n_t}");
        assert_eq!(cumulative_count(&oracle, "b1", 0.0), Some(0.0));
    }

    #[test]
    fn scenario7_runs_under_every_model() {
        let mut sc = builtin("scenario7").unwrap();
        sc.run.dt = 1e-3;
        sc.run.t_end = 2.0;
        for m in ModelChoice::all() {
            let trace = run_model(&sc, m).unwrap();
            assert!(trace.has_column("b1.q"), "{m} trace lacks the queue");
            assert_eq!(trace.times().len(), 2001);
        }
        // The static run adds its overlay columns.
        let st = run_model(&sc, ModelChoice::StaticLink).unwrap();
        assert!(st.has_column("b1.tau_static"));
        assert!(st.has_column("b1.q_static"));
    }

    #[test]
    fn run_scenario_writes_the_csv_tree() {
        let mut sc = builtin("scenario7").unwrap();
        sc.run.dt = 1e-3;
        sc.run.t_end = 1.0;
        let dir = tempfile::tempdir().unwrap();
        let outcome =
            run_scenario(&sc, &[ModelChoice::Flow, ModelChoice::Oracle], dir.path()).unwrap();
        assert_eq!(outcome.model_dirs.len(), 2);
        for (m, d) in &outcome.model_dirs {
            assert!(d.join("trace.csv").is_file(), "{m} missing trace.csv");
            assert!(d.join("b1.csv").is_file());
            assert!(d.join("u1.csv").is_file());
        }
        let summary = outcome.summary_path.unwrap();
        let text = std::fs::read_to_string(summary).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "model_a,model_b,column,max_abs_deviation"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("flow,oracle,b1.q,"), "{row}");
    }

    #[test]
    fn squarewave_rejects_window_models() {
        let sc = builtin("squarewave").unwrap();
        let err = run_model(&sc, ModelChoice::Ratio).unwrap_err();
        assert!(err.to_string().contains("square-wave"), "{err}");
    }
}
