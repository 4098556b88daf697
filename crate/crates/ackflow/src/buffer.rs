//! FIFO buffer with state-dependent delay.
//!
//! The queue integrates conservation of information: the backlog grows by the
//! aggregate input and drains at capacity `c` while the buffer is congested.
//! Congestion holds whenever the queue is non-empty or the aggregate input
//! exceeds capacity; otherwise flow passes through untouched. The queuing
//! delay is `tau = q / c`, the exit map is `f(t) = t + tau(t)`, and its
//! inverse `g` recovers the entry time of whatever is leaving now.
//!
//! Two competing rules separate the aggregate output back into classes:
//!
//! * flow model: what leaves at time `t` carries the class mix that entered at
//!   `g(t)`, scaled to capacity. FIFO order is preserved, so bursts come out
//!   serialized but unmixed.
//! * pseudo queue: per-class backlogs `q_k` share capacity in proportion to
//!   their current sizes, `out_k = c * q_k / sum(q)`. Order information is
//!   lost; this is the strawman the flow model is compared against.
//!
//! Stepping is hybrid: within one solver step the inputs are piecewise
//! constant, so the backlog is piecewise linear and the only events are the
//! congestion flag toggling. Empty-queue crossings are localized by bisection
//! to 1e-9 s. Outputs are emitted as exact segments: congested stretches map
//! input breakpoints through `f`, which reproduces serialization (a burst of
//! mass `m` leaves over exactly `m / c` seconds) and conserves every class's
//! packet count to rounding error.

use thiserror::Error;

use crate::signal::SignalError;

/// Bisection tolerance for congestion-toggle localization, in seconds.
const EVENT_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum BufferError {
    #[error("time {t} is ahead of the committed delay history (frontier {frontier})")]
    AheadOfHistory { t: f64, frontier: f64 },
    #[error("time {t} underruns the retained delay history (oldest {oldest})")]
    HistoryUnderrun { t: f64, oldest: f64 },
    #[error("class shares undefined: input vanishes over an interval ending at entry time {entry} while the buffer is congested")]
    VanishingInput { entry: f64 },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Which output-separation rule a buffer applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputModel {
    Flow,
    PseudoQueue,
}

/// Constant-rate piece `(start, end, rate)` covering `(start, end]`.
pub type Piece = (f64, f64, f64);

/// Per-class output of one step: `(end, rate)` segments covering the step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub class_segments: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone)]
pub struct BufferState {
    capacity: f64,
    q: f64,
    congested: bool,
    model: OutputModel,
    n_classes: usize,
    /// `(time, tau)` knots; tau is piecewise linear in between, committed by
    /// the integrator. `f(t) = t + tau(t)` read off these knots is exact for
    /// the committed trajectory.
    knots: Vec<(f64, f64)>,
    /// Congestion flag toggle times: `(time, flag holding after time)`.
    toggles: Vec<(f64, bool)>,
    /// Per-class pseudo-queue backlogs (PseudoQueue model only).
    pseudo: Vec<f64>,
    event_tol: f64,
    warned_flat: bool,
}

impl BufferState {
    /// A buffer holding `tau0 * capacity` packets at `t0`, with constant
    /// pre-history reaching back `pad` seconds for delayed lookups.
    pub fn new(
        capacity: f64,
        model: OutputModel,
        n_classes: usize,
        t0: f64,
        tau0: f64,
        pad: f64,
    ) -> Self {
        assert!(capacity > 0.0 && tau0 >= 0.0 && pad > 0.0);
        let congested = tau0 > 0.0;
        BufferState {
            capacity,
            q: tau0 * capacity,
            congested,
            model,
            n_classes,
            knots: vec![(t0 - pad, tau0), (t0, tau0)],
            toggles: vec![(t0 - pad, congested)],
            pseudo: vec![0.0; n_classes],
            event_tol: EVENT_TOL,
            warned_flat: false,
        }
    }

    /// Overrides the event-localization tolerance (must stay positive).
    pub fn with_event_tol(mut self, tol: f64) -> Self {
        assert!(tol > 0.0);
        self.event_tol = tol;
        self
    }

    /// Distributes the current backlog over the pseudo queues.
    pub fn init_pseudo(&mut self, shares: &[f64]) {
        assert_eq!(shares.len(), self.n_classes);
        let total: f64 = shares.iter().sum();
        for (pq, &s) in self.pseudo.iter_mut().zip(shares) {
            *pq = if total > 0.0 { self.q * s / total } else { 0.0 };
        }
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn queue(&self) -> f64 {
        self.q
    }

    pub fn tau(&self) -> f64 {
        self.q / self.capacity
    }

    pub fn congested(&self) -> bool {
        self.congested
    }

    pub fn pseudo_queues(&self) -> &[f64] {
        &self.pseudo
    }

    pub fn model(&self) -> OutputModel {
        self.model
    }

    /// Latest time the delay history covers.
    pub fn frontier(&self) -> f64 {
        self.knots.last().unwrap().0
    }

    /// Number of stored delay knots (diagnostics).
    pub fn knot_count(&self) -> usize {
        self.knots.len()
    }

    /// Congestion flag at `t` (flag holding just after `t`).
    pub fn congested_at(&self, t: f64) -> bool {
        let idx = self.toggles.partition_point(|&(time, _)| time <= t);
        if idx == 0 {
            self.toggles[0].1
        } else {
            self.toggles[idx - 1].1
        }
    }

    /// Queuing delay at a committed time.
    pub fn tau_at(&self, t: f64) -> Result<f64, BufferError> {
        let (first, last) = (self.knots[0], *self.knots.last().unwrap());
        if t > last.0 + 1e-12 {
            return Err(BufferError::AheadOfHistory {
                t,
                frontier: last.0,
            });
        }
        if t < first.0 {
            return Err(BufferError::HistoryUnderrun { t, oldest: first.0 });
        }
        let idx = self.knots.partition_point(|&(time, _)| time < t);
        if idx == 0 {
            return Ok(first.1);
        }
        if idx == self.knots.len() {
            return Ok(last.1);
        }
        let (t0, y0) = self.knots[idx - 1];
        let (t1, y1) = self.knots[idx];
        if t1 == t0 {
            return Ok(y1);
        }
        Ok(y0 + (y1 - y0) * (t - t0) / (t1 - t0))
    }

    /// Exit time of flow entering at `t`: `f(t) = t + tau(t)`.
    pub fn forward_time(&self, t: f64) -> Result<f64, BufferError> {
        Ok(t + self.tau_at(t)?)
    }

    /// Entry time of flow exiting at `s`: `g = f^-1`. Over a flat stretch of
    /// `f` (zero input while congested) the left endpoint is returned.
    pub fn backward_time(&self, s: f64) -> Result<f64, BufferError> {
        let fval = |i: usize| self.knots[i].0 + self.knots[i].1;
        let n = self.knots.len();
        if s < fval(0) {
            return Err(BufferError::HistoryUnderrun {
                t: s,
                oldest: fval(0),
            });
        }
        if s > fval(n - 1) + 1e-12 {
            return Err(BufferError::AheadOfHistory {
                t: s,
                frontier: fval(n - 1),
            });
        }
        // f is nondecreasing, so binary search the knot interval holding s.
        let (mut lo, mut hi) = (0, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if fval(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (f0, f1) = (fval(lo), fval(hi));
        if s <= f0 {
            return Ok(self.knots[lo].0);
        }
        if f1 <= f0 {
            return Ok(self.knots[lo].0);
        }
        let (x0, x1) = (self.knots[lo].0, self.knots[hi].0);
        Ok((x0 + (x1 - x0) * (s - f0) / (f1 - f0)).min(x1))
    }

    /// Instantaneous per-class output rates at `t`, for diagnostics. `sample`
    /// returns a class's input rate at a past time (left-continuous).
    pub fn class_output_rates(
        &self,
        t: f64,
        sample: &dyn Fn(usize, f64) -> Result<f64, SignalError>,
    ) -> Result<Vec<f64>, BufferError> {
        match self.model {
            OutputModel::PseudoQueue => {
                let total: f64 = self.pseudo.iter().sum();
                Ok(self
                    .pseudo
                    .iter()
                    .map(|&pq| {
                        if total > 0.0 {
                            self.capacity * pq / total
                        } else {
                            0.0
                        }
                    })
                    .collect())
            }
            OutputModel::Flow => {
                if !self.congested_at(t) {
                    return (0..self.n_classes)
                        .map(|k| sample(k, t).map_err(BufferError::from))
                        .collect();
                }
                let entry = self.backward_time(t)?;
                let rates: Vec<f64> = (0..self.n_classes)
                    .map(|k| sample(k, entry))
                    .collect::<Result<_, _>>()?;
                let total: f64 = rates.iter().sum();
                if total <= 0.0 {
                    return Err(BufferError::VanishingInput { entry });
                }
                Ok(rates.iter().map(|&r| self.capacity * r / total).collect())
            }
        }
    }

    /// Advances the buffer over `(t, t + dt]`.
    ///
    /// `input_pieces[k]` are class `k`'s constant-rate pieces covering exactly
    /// `(t, t + dt]`. `history` returns a class's input pieces over any
    /// already-materialized window; the congested output separation reaches
    /// back to the entry window `(g(t), g(t + dt)]`, which may extend into
    /// earlier steps.
    pub fn step(
        &mut self,
        t: f64,
        dt: f64,
        input_pieces: &[Vec<Piece>],
        history: &dyn Fn(usize, f64, f64) -> Result<Vec<Piece>, SignalError>,
    ) -> Result<StepOutput, BufferError> {
        assert_eq!(input_pieces.len(), self.n_classes);
        let step_end = t + dt;
        let (bounds, rates) = union_pieces(input_pieces, t, step_end);

        // Phase A: advance the backlog, committing tau knots and congested /
        // uncongested stretches.
        let mut stretches: Vec<(f64, f64, bool)> = Vec::new();
        let push_stretch = |list: &mut Vec<(f64, f64, bool)>, a: f64, b: f64, cong: bool| {
            if b <= a {
                return;
            }
            if let Some(last) = list.last_mut() {
                if last.2 == cong && last.1 == a {
                    last.1 = b;
                    return;
                }
            }
            list.push((a, b, cong));
        };

        for (j, pair) in bounds.windows(2).enumerate() {
            let (mut cursor, piece_end) = (pair[0], pair[1]);
            let lam: f64 = rates[j].iter().sum();
            while cursor < piece_end {
                if !self.congested && lam > self.capacity {
                    self.set_congested(cursor, true);
                }
                if self.congested {
                    let drain = lam - self.capacity;
                    let q_end = self.q + drain * (piece_end - cursor);
                    if q_end >= 0.0 {
                        self.q = q_end;
                        self.push_knot(piece_end);
                        push_stretch(&mut stretches, cursor, piece_end, true);
                        if self.q == 0.0 && lam <= self.capacity {
                            self.set_congested(piece_end, false);
                        }
                        cursor = piece_end;
                    } else {
                        // The queue empties inside this piece; localize the
                        // crossing by bisection.
                        let (mut lo, mut hi) = (cursor, piece_end);
                        let q0 = self.q;
                        while hi - lo > self.event_tol {
                            let mid = 0.5 * (lo + hi);
                            if q0 + drain * (mid - cursor) > 0.0 {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        let hit = 0.5 * (lo + hi);
                        self.q = 0.0;
                        self.push_knot(hit);
                        push_stretch(&mut stretches, cursor, hit, true);
                        self.set_congested(hit, lam > self.capacity);
                        cursor = hit;
                        if self.congested {
                            // lam > c yet the queue emptied: only possible by
                            // rounding; avoid an infinite loop.
                            self.q = 0.0;
                            self.push_knot(piece_end);
                            push_stretch(&mut stretches, cursor, piece_end, true);
                            cursor = piece_end;
                        }
                    }
                } else {
                    self.push_knot(piece_end);
                    push_stretch(&mut stretches, cursor, piece_end, false);
                    cursor = piece_end;
                }
            }
        }

        // Phase B: emit per-class output segments for each stretch.
        let mut out = StepOutput {
            class_segments: vec![Vec::new(); self.n_classes],
        };
        match self.model {
            OutputModel::Flow => {
                for &(a, b, cong) in &stretches {
                    if cong {
                        self.emit_congested(a, b, history, &mut out)?;
                    } else {
                        for k in 0..self.n_classes {
                            for &(pa, pb, r) in input_pieces[k].iter() {
                                let (ca, cb) = (pa.max(a), pb.min(b));
                                if cb > ca {
                                    out.class_segments[k].push((cb, r));
                                }
                            }
                        }
                    }
                }
            }
            OutputModel::PseudoQueue => {
                // Separate integration of the per-class backlogs; the
                // aggregate q above still tracks the FIFO backlog for tau.
                // While uncongested the buffer is a wire: inputs pass through
                // untouched and the class ledger stays empty.
                for &(sa, sb, cong) in &stretches {
                    for (j, pair) in bounds.windows(2).enumerate() {
                        let a = pair[0].max(sa);
                        let b = pair[1].min(sb);
                        if b <= a {
                            continue;
                        }
                        let len = b - a;
                        if !cong {
                            // Any ledger residue belongs to the backlog that
                            // just emptied; it leaves with the first
                            // uncongested flow.
                            for k in 0..self.n_classes {
                                let flush = self.pseudo[k] / len;
                                self.pseudo[k] = 0.0;
                                out.class_segments[k].push((b, rates[j][k] + flush));
                            }
                            continue;
                        }
                        let total: f64 = self.pseudo.iter().sum();
                        let sum_in: f64 = rates[j].iter().sum();
                        let mut outs = vec![0.0; self.n_classes];
                        for k in 0..self.n_classes {
                            let want = if total > 0.0 {
                                self.capacity * self.pseudo[k] / total
                            } else if sum_in > 0.0 {
                                // Onset from empty: the backlog forms
                                // instantly with the input mix, so the shares
                                // are the input shares to first order.
                                self.capacity * rates[j][k] / sum_in
                            } else {
                                0.0
                            };
                            // Never emit more than the class holds plus what
                            // arrives during the piece: keeps backlogs
                            // nonnegative and the packet count conserved.
                            outs[k] = want.min(self.pseudo[k] / len + rates[j][k]);
                        }
                        for k in 0..self.n_classes {
                            self.pseudo[k] += (rates[j][k] - outs[k]) * len;
                            self.pseudo[k] = self.pseudo[k].max(0.0);
                            out.class_segments[k].push((b, outs[k]));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn emit_congested(
        &mut self,
        a: f64,
        b: f64,
        history: &dyn Fn(usize, f64, f64) -> Result<Vec<Piece>, SignalError>,
        out: &mut StepOutput,
    ) -> Result<(), BufferError> {
        let ga = self.backward_time(a)?;
        let gb = self.backward_time(b)?;
        if gb <= ga {
            // Zero-width entry window with positive exit width would mean f
            // jumps, which cannot happen; treat as vanishing composition.
            return Err(BufferError::VanishingInput { entry: ga });
        }
        let per_class: Vec<Vec<Piece>> = (0..self.n_classes)
            .map(|k| history(k, ga, gb))
            .collect::<Result<_, _>>()?;
        let (bounds, rates) = union_pieces(&per_class, ga, gb);

        let mut cursor_exit = a;
        let n_pieces = bounds.len() - 1;
        for j in 0..n_pieces {
            let total: f64 = rates[j].iter().sum();
            if total <= 0.0 {
                // Flat stretch of f: zero exit width, nothing leaves from it.
                continue;
            }
            let exit_end = if j + 1 == n_pieces {
                b
            } else {
                self.forward_time(bounds[j + 1])?.clamp(cursor_exit, b)
            };
            if exit_end > cursor_exit {
                for k in 0..self.n_classes {
                    out.class_segments[k].push((exit_end, self.capacity * rates[j][k] / total));
                }
                cursor_exit = exit_end;
            }
        }
        if cursor_exit < b {
            // All entry pieces had zero rate (undetermined composition), or
            // the final piece collapsed by rounding. The first case is a
            // genuinely vanishing input; the second is filled at the last
            // known mix.
            let last_rates = rates.iter().rev().find(|r| r.iter().sum::<f64>() > 0.0);
            match last_rates {
                None => return Err(BufferError::VanishingInput { entry: ga }),
                Some(r) => {
                    let total: f64 = r.iter().sum();
                    for k in 0..self.n_classes {
                        out.class_segments[k].push((b, self.capacity * r[k] / total));
                    }
                }
            }
        }
        Ok(())
    }

    fn push_knot(&mut self, t: f64) {
        let tau = self.q / self.capacity;
        let &(last_t, last_tau) = self.knots.last().unwrap();
        if t <= last_t {
            return;
        }
        let (f_new, f_last) = (t + tau, last_t + last_tau);
        if f_new < f_last - 1e-9 && !self.warned_flat {
            // Cannot occur for nonnegative inputs; flag once rather than
            // distort the exit map silently.
            eprintln!("warning: non-monotone exit map at t = {t} (f {f_new} < {f_last}); clamping");
            self.warned_flat = true;
        }
        let tau = tau.max(f_last - t);
        self.knots.push((t, tau));
    }

    fn set_congested(&mut self, t: f64, flag: bool) {
        if self.congested != flag {
            self.congested = flag;
            self.toggles.push((t, flag));
        }
    }

    /// Discards delay history before `horizon` (one knot before survives).
    pub fn prune(&mut self, horizon: f64) {
        let keep_from = self
            .knots
            .partition_point(|&(time, _)| time < horizon)
            .saturating_sub(1);
        if keep_from > 0 {
            self.knots.drain(..keep_from);
        }
        let tkeep = self
            .toggles
            .partition_point(|&(time, _)| time < horizon)
            .saturating_sub(1);
        if tkeep > 0 {
            self.toggles.drain(..tkeep);
        }
    }
}

/// Slope of the entry map `g` at an exit time, while congested: the exit
/// clock runs at capacity, the entry clock at the aggregate input rate seen
/// at the entry time, so `g'(t) = c / input(g(t))`.
pub fn entry_map_slope(capacity: f64, input_at_entry: f64) -> f64 {
    capacity / input_at_entry
}

/// Slope of the exit map `f` at an entry time, while congested:
/// `f'(t) = input(t) / c`.
pub fn exit_map_slope(capacity: f64, input_at_t: f64) -> f64 {
    input_at_t / capacity
}

/// Derivative of the delayed queuing delay `tau(g(t))` while congested:
/// `1 - c / input(g(t))`.
pub fn delayed_delay_slope(capacity: f64, input_at_entry: f64) -> f64 {
    1.0 - capacity / input_at_entry
}

/// Merges per-class piece lists over `(a, b]` onto a common boundary grid.
/// Returns the boundaries (first `a`, last `b`) and per sub-piece the class
/// rates.
fn union_pieces(per_class: &[Vec<Piece>], a: f64, b: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut bounds: Vec<f64> = Vec::with_capacity(4);
    bounds.push(a);
    for pieces in per_class {
        for &(_, end, _) in pieces {
            if end > a && end < b {
                bounds.push(end);
            }
        }
    }
    bounds.push(b);
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();

    let n = per_class.len();
    let mut rates = vec![vec![0.0; n]; bounds.len() - 1];
    for (k, pieces) in per_class.iter().enumerate() {
        let mut idx = 0;
        for (j, pair) in bounds.windows(2).enumerate() {
            let probe = pair[1];
            while idx < pieces.len() && pieces[idx].1 < probe {
                idx += 1;
            }
            let rate = if idx < pieces.len() {
                pieces[idx].2
            } else {
                pieces.last().map_or(0.0, |p| p.2)
            };
            rates[j][k] = rate;
        }
    }
    (bounds, rates)
}
