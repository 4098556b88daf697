//! Piecewise-constant flow signals.
//!
//! Every rate in the simulator (send rates, queue inputs, split outputs, ack
//! streams) is carried by a [`FlowSignal`]: a left-continuous step function in
//! packets per second. Segments are appended in time order as the solver
//! advances; integration is exact via stored prefix integrals, and channels
//! are pure delays realized as shifted reads of the upstream signal.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    /// A lookup reached back past data that pruning already discarded.
    #[error("signal lookup at t = {t} underruns pruned history (horizon {horizon})")]
    HistoryUnderrun { t: f64, horizon: f64 },
}

/// One constant-rate stretch covering `(prev_end, end]`.
#[derive(Debug, Clone, Copy)]
struct Segment {
    end: f64,
    rate: f64,
    /// Integral of the signal over `(start, end]`, anchored at the signal's
    /// original start time (not rebased by pruning).
    cum: f64,
}

/// Left-continuous piecewise-constant rate signal.
///
/// Before `start` the signal holds `init_rate` indefinitely: the method-of-steps
/// initialization, where pre-run history is the constant equilibrium rate.
/// After the last committed segment, sampling returns the final rate so that
/// startup lookups just ahead of the committed frontier stay well defined.
#[derive(Debug, Clone)]
pub struct FlowSignal {
    start: f64,
    init_rate: f64,
    segments: Vec<Segment>,
    /// Oldest time still answerable; raised by [`FlowSignal::prune`].
    horizon: f64,
}

impl FlowSignal {
    /// A signal that is `rate` for all time until segments are appended after
    /// `start`.
    pub fn constant(start: f64, rate: f64) -> Self {
        assert!(rate >= 0.0, "flow rates are nonnegative (got {rate})");
        FlowSignal {
            start,
            init_rate: rate,
            segments: Vec::new(),
            horizon: f64::NEG_INFINITY,
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// End of the last committed segment, or `start` if none.
    pub fn frontier(&self) -> f64 {
        self.segments.last().map_or(self.start, |s| s.end)
    }

    /// Appends a segment covering `(frontier, end]` at `rate`. Adjacent equal
    /// rates are merged. A non-advancing `end` is ignored.
    pub fn push(&mut self, end: f64, rate: f64) {
        let last_end = self.frontier();
        if end <= last_end {
            // Zero-width appends arise when event localization lands exactly
            // on a grid point; there is nothing to record.
            assert!(
                end > last_end - 1e-12,
                "segment end {end} moves backwards past {last_end}"
            );
            return;
        }
        let rate = if rate < 0.0 {
            assert!(
                rate > -1e-6,
                "negative flow rate {rate} pushed at t = {end}"
            );
            0.0
        } else {
            rate
        };
        let prev_cum = self.segments.last().map_or(0.0, |s| s.cum);
        if let Some(last) = self.segments.last_mut() {
            if last.rate == rate {
                last.cum += rate * (end - last.end);
                last.end = end;
                return;
            }
        }
        self.segments.push(Segment {
            end,
            rate,
            cum: prev_cum + rate * (end - last_end),
        });
    }

    /// Left-continuous point evaluation.
    pub fn sample(&self, t: f64) -> Result<f64, SignalError> {
        if t < self.horizon {
            return Err(SignalError::HistoryUnderrun {
                t,
                horizon: self.horizon,
            });
        }
        if t <= self.start || self.segments.is_empty() {
            return Ok(self.init_rate);
        }
        let idx = self.segments.partition_point(|s| s.end < t);
        Ok(if idx == self.segments.len() {
            self.segments[idx - 1].rate
        } else {
            self.segments[idx].rate
        })
    }

    /// Integral from the signal start to `t` (negative below start: the
    /// constant pre-history extends linearly).
    fn cum_at(&self, t: f64) -> f64 {
        if t <= self.start {
            return self.init_rate * (t - self.start);
        }
        if self.segments.is_empty() {
            return self.init_rate * (t - self.start);
        }
        let idx = self.segments.partition_point(|s| s.end < t);
        if idx == self.segments.len() {
            let last = &self.segments[idx - 1];
            return last.cum + last.rate * (t - last.end);
        }
        let seg = &self.segments[idx];
        seg.cum - seg.rate * (seg.end - t)
    }

    /// Exact integral of the signal over `[t0, t1]`.
    pub fn integrate(&self, t0: f64, t1: f64) -> Result<f64, SignalError> {
        debug_assert!(t1 >= t0 - 1e-12, "integrate interval reversed: {t0} > {t1}");
        if t0 < self.horizon {
            return Err(SignalError::HistoryUnderrun {
                t: t0,
                horizon: self.horizon,
            });
        }
        Ok(self.cum_at(t1) - self.cum_at(t0))
    }

    /// Constant-rate pieces covering `(t0, t1]`, as `(piece_start, piece_end,
    /// rate)` with strictly increasing times. Used by the queue integrator,
    /// which needs every breakpoint inside a step.
    pub fn pieces(&self, t0: f64, t1: f64) -> Result<Vec<(f64, f64, f64)>, SignalError> {
        if t0 < self.horizon {
            return Err(SignalError::HistoryUnderrun {
                t: t0,
                horizon: self.horizon,
            });
        }
        let mut out = Vec::new();
        if t1 <= t0 {
            return Ok(out);
        }
        let mut cursor = t0;
        if cursor < self.start {
            let end = t1.min(self.start);
            out.push((cursor, end, self.init_rate));
            cursor = end;
        }
        let mut idx = self.segments.partition_point(|s| s.end <= cursor);
        while cursor < t1 && idx < self.segments.len() {
            let seg = &self.segments[idx];
            let end = seg.end.min(t1);
            if end > cursor {
                out.push((cursor, end, seg.rate));
                cursor = end;
            }
            idx += 1;
        }
        if cursor < t1 {
            // Past the committed frontier (or an empty signal): hold the last
            // known rate.
            let rate = self.segments.last().map_or(self.init_rate, |s| s.rate);
            out.push((cursor, t1, rate));
        }
        Ok(out)
    }

    /// Copies the pieces of `src` over `(t0 - lag, t1 - lag]`, shifted forward
    /// by `lag`, onto the end of `self`. This is the channel operation: the
    /// flow entering a channel of propagation delay `lag` reappears unchanged
    /// `lag` later.
    pub fn extend_delayed(
        &mut self,
        src: &FlowSignal,
        lag: f64,
        t0: f64,
        t1: f64,
    ) -> Result<(), SignalError> {
        for (_, b, r) in src.pieces(t0 - lag, t1 - lag)? {
            self.push(b + lag, r);
        }
        Ok(())
    }

    /// Discards segments wholly before `new_horizon` and refuses older lookups
    /// afterwards. The segment containing `new_horizon` survives.
    pub fn prune(&mut self, new_horizon: f64) {
        if new_horizon <= self.horizon {
            return;
        }
        let drop = self.segments.partition_point(|s| s.end < new_horizon);
        // Keep at least one segment so the frontier and last rate survive.
        let drop = drop.min(self.segments.len().saturating_sub(1));
        if drop > 0 {
            self.segments.drain(..drop);
        }
        self.horizon = new_horizon;
    }

    /// View of this signal shifted `lag` seconds later in time.
    pub fn delayed(&self, lag: f64) -> DelayedFlow<'_> {
        DelayedFlow { inner: self, lag }
    }

    /// Number of stored segments (diagnostics).
    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }
}

/// Read-only delayed view: `view.sample(t) == inner.sample(t - lag)`.
#[derive(Clone, Copy)]
pub struct DelayedFlow<'a> {
    inner: &'a FlowSignal,
    lag: f64,
}

impl DelayedFlow<'_> {
    pub fn sample(&self, t: f64) -> Result<f64, SignalError> {
        self.inner.sample(t - self.lag)
    }

    pub fn integrate(&self, t0: f64, t1: f64) -> Result<f64, SignalError> {
        self.inner.integrate(t0 - self.lag, t1 - self.lag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stair() -> FlowSignal {
        // 5 pkt/s before 0, then 10 on (0,1], 20 on (1,3], 0 on (3,4].
        let mut s = FlowSignal::constant(0.0, 5.0);
        s.push(1.0, 10.0);
        s.push(3.0, 20.0);
        s.push(4.0, 0.0);
        s
    }

    #[test]
    fn sampling_is_left_continuous() {
        let s = stair();
        assert_eq!(s.sample(-2.0).unwrap(), 5.0);
        assert_eq!(s.sample(0.0).unwrap(), 5.0);
        assert_eq!(s.sample(0.5).unwrap(), 10.0);
        // The value at a breakpoint belongs to the segment that ends there.
        assert_eq!(s.sample(1.0).unwrap(), 10.0);
        assert_eq!(s.sample(1.0 + 1e-12).unwrap(), 20.0);
        assert_eq!(s.sample(3.0).unwrap(), 20.0);
        assert_eq!(s.sample(4.0).unwrap(), 0.0);
    }

    #[test]
    fn sampling_beyond_frontier_holds_last_rate() {
        let s = stair();
        assert_eq!(s.sample(100.0).unwrap(), 0.0);
        let c = FlowSignal::constant(0.0, 7.5);
        assert_eq!(c.sample(42.0).unwrap(), 7.5);
    }

    #[test]
    fn integration_is_exact_on_breakpoints_and_interiors() {
        let s = stair();
        assert_eq!(s.integrate(0.0, 1.0).unwrap(), 10.0);
        assert_eq!(s.integrate(0.0, 3.0).unwrap(), 50.0);
        assert_eq!(s.integrate(0.5, 1.5).unwrap(), 5.0 + 10.0);
        // Pre-history and extrapolation regions integrate at their held rates.
        assert_eq!(s.integrate(-2.0, 0.0).unwrap(), 10.0);
        assert_eq!(s.integrate(3.0, 6.0).unwrap(), 0.0);
    }

    #[test]
    fn integration_is_additive() {
        let s = stair();
        let whole = s.integrate(-1.0, 4.0).unwrap();
        let a = s.integrate(-1.0, 0.7).unwrap();
        let b = s.integrate(0.7, 2.9).unwrap();
        let c = s.integrate(2.9, 4.0).unwrap();
        assert!((whole - (a + b + c)).abs() < 1e-12);
    }

    #[test]
    fn delayed_view_shifts_time() {
        let s = stair();
        let d = s.delayed(2.0);
        assert_eq!(d.sample(2.5).unwrap(), 10.0);
        assert_eq!(d.integrate(2.0, 5.0).unwrap(), 50.0);
    }

    #[test]
    fn pieces_cover_interval_with_all_breakpoints() {
        let s = stair();
        let p = s.pieces(-0.5, 3.5).unwrap();
        assert_eq!(
            p,
            vec![
                (-0.5, 0.0, 5.0),
                (0.0, 1.0, 10.0),
                (1.0, 3.0, 20.0),
                (3.0, 3.5, 0.0),
            ]
        );
        // Total mass through pieces equals the direct integral.
        let mass: f64 = p.iter().map(|(a, b, r)| r * (b - a)).sum();
        assert!((mass - s.integrate(-0.5, 3.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn extend_delayed_replays_upstream_breakpoints() {
        let src = stair();
        let mut dst = FlowSignal::constant(0.0, 5.0);
        // Materialize (0, 4] of the 1.5s-delayed source in two installments.
        dst.extend_delayed(&src, 1.5, 0.0, 2.0).unwrap();
        dst.extend_delayed(&src, 1.5, 2.0, 4.0).unwrap();
        for &t in &[0.2, 1.49, 1.51, 2.4, 2.5, 2.6, 3.9] {
            assert_eq!(
                dst.sample(t).unwrap(),
                src.sample(t - 1.5).unwrap(),
                "t={t}"
            );
        }
        assert!(
            (dst.integrate(0.0, 4.0).unwrap() - src.integrate(-1.5, 2.5).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn equal_rate_appends_coalesce() {
        let mut s = FlowSignal::constant(0.0, 0.0);
        for k in 1..=1000 {
            s.push(k as f64 * 1e-4, 3.0);
        }
        assert_eq!(s.segment_count(), 1);
        assert!((s.integrate(0.0, 0.1).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn pruning_raises_horizon_and_rejects_old_lookups() {
        let mut s = stair();
        s.prune(2.0);
        assert_eq!(s.sample(2.5).unwrap(), 20.0);
        // 2.0 sits inside the surviving segment (1, 3].
        assert_eq!(s.sample(2.0).unwrap(), 20.0);
        let err = s.sample(0.5).unwrap_err();
        assert_eq!(
            err,
            SignalError::HistoryUnderrun {
                t: 0.5,
                horizon: 2.0
            }
        );
        assert!(s.integrate(0.5, 2.5).is_err());
        assert!(s.pieces(0.5, 2.5).is_err());
    }

    #[test]
    fn prefix_integrals_stay_consistent_after_pruning() {
        let mut s = stair();
        let before = s.integrate(2.0, 4.0).unwrap();
        s.prune(2.0);
        assert_eq!(s.integrate(2.0, 4.0).unwrap(), before);
    }
}
