//! ACK-clocked window sources.
//!
//! A user holds a congestion window `w` and sends `w_dot + ack_rate` packets
//! per second while its ack-retaining buffer is empty: every ack releases one
//! packet, and window growth adds on top, so the flight size tracks `w`. When
//! the window drops faster than acks drain the flight, the source cannot
//! recall packets already in transit; it goes silent and the deficit
//! accumulates in the ack-retaining buffer `pi <= 0`, which refills at the
//! ack rate. Sending resumes the instant `pi` returns to zero, so window
//! reductions act after a delay of `|pi| / ack_rate`.

use crate::buffer::Piece;

/// Scheduled absolute window changes: `w(t)` is `initial` until the first
/// step time, then the most recent step value. A step applies at its own
/// timestamp.
#[derive(Debug, Clone)]
pub struct WindowScript {
    initial: f64,
    steps: Vec<(f64, f64)>,
}

impl WindowScript {
    pub fn new(initial: f64, mut steps: Vec<(f64, f64)>) -> Self {
        assert!(initial >= 0.0, "window must be nonnegative");
        steps.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(
            steps.iter().all(|&(_, w)| w >= 0.0),
            "window must stay nonnegative"
        );
        WindowScript { initial, steps }
    }

    pub fn constant(w: f64) -> Self {
        WindowScript::new(w, Vec::new())
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }

    /// Window holding at `t` (right-continuous: a step at `t` has applied).
    pub fn window_at(&self, t: f64) -> f64 {
        match self.steps.iter().rev().find(|&&(s, _)| s <= t) {
            Some(&(_, w)) => w,
            None => self.initial,
        }
    }

    /// Window holding just before `t` (left-continuous evaluation).
    pub fn window_before(&self, t: f64) -> f64 {
        match self.steps.iter().rev().find(|&&(s, _)| s < t) {
            Some(&(_, w)) => w,
            None => self.initial,
        }
    }
}

/// What a window controller observes each step: the round trip its acks
/// report and the queuing part of it.
#[derive(Debug, Clone, Copy)]
pub struct ObservedCongestion {
    pub rtt: f64,
    pub queuing_delay: f64,
}

/// A window control law driven by the observed congestion. The default is a
/// scripted window; anything implementing this trait can be plugged into a
/// user instead.
pub trait Protocol {
    /// Advances internal state over `(t, t + dt]` and returns the window
    /// holding at `t` (the solver differentiates consecutive values).
    fn window(&mut self, t: f64, dt: f64, obs: &ObservedCongestion) -> f64;
}

/// The default protocol: replay a [`WindowScript`].
#[derive(Debug, Clone)]
pub struct ScriptedWindow(pub WindowScript);

impl Protocol for ScriptedWindow {
    fn window(&mut self, t: f64, _dt: f64, _obs: &ObservedCongestion) -> f64 {
        self.0.window_at(t)
    }
}

/// First-order tracking toward a fixed target: `dw/dt = gain * (target - w)`.
/// Mostly useful for exercising the protocol hook; the closed-form solution
/// is exponential convergence.
#[derive(Debug, Clone)]
pub struct TrackingWindow {
    pub target: f64,
    pub gain: f64,
    pub w: f64,
}

impl Protocol for TrackingWindow {
    fn window(&mut self, _t: f64, dt: f64, _obs: &ObservedCongestion) -> f64 {
        let now = self.w;
        self.w += self.gain * (self.target - self.w) * dt;
        now
    }
}

/// Result of advancing a user over one step.
#[derive(Debug, Clone)]
pub struct SendPlan {
    /// `(end, rate)` segments of the send flow covering the step.
    pub segments: Vec<(f64, f64)>,
    /// Ack-retaining buffer at the step end (always <= 0).
    pub pi: f64,
    /// Set when `pi` reached zero inside this step and sending resumed.
    pub resumed_at: Option<f64>,
}

/// Advances the ack-clocked sending law over `(t, t + dt]`.
///
/// `pi` is the ack-retaining buffer at `t`, `w_dot` the (piecewise-constant)
/// window derivative across the step, and `ack_pieces` the ack arrival rate
/// over the step. Within each constant-rate piece the dynamics are linear, so
/// the `pi -> 0` crossing is solved exactly.
pub fn fs_ack_step(pi: f64, w_dot: f64, ack_pieces: &[Piece]) -> SendPlan {
    debug_assert!(pi <= 1e-9, "ack-retaining buffer must not be positive");
    let mut plan = SendPlan {
        segments: Vec::with_capacity(ack_pieces.len() + 1),
        pi: pi.min(0.0),
        resumed_at: None,
    };
    for &(a, b, ack) in ack_pieces {
        let mut cursor = a;
        while cursor < b {
            let net = w_dot + ack;
            if plan.pi == 0.0 {
                if net >= 0.0 {
                    // Sending mode: every ack and the window growth go out.
                    plan.segments.push((b, net));
                } else {
                    // The window shrank below the flight: retain acks.
                    plan.pi += net * (b - cursor);
                    plan.segments.push((b, 0.0));
                }
                cursor = b;
            } else if net > 0.0 {
                let zero_at = cursor + (-plan.pi) / net;
                if zero_at < b {
                    plan.segments.push((zero_at, 0.0));
                    plan.pi = 0.0;
                    plan.resumed_at = Some(zero_at);
                    cursor = zero_at;
                } else {
                    plan.pi += net * (b - cursor);
                    plan.segments.push((b, 0.0));
                    cursor = b;
                }
            } else {
                plan.pi += net * (b - cursor);
                plan.segments.push((b, 0.0));
                cursor = b;
            }
        }
    }
    if plan.pi > 0.0 {
        debug_assert!(plan.pi < 1e-9);
        plan.pi = 0.0;
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_lookup_is_right_continuous_with_left_variant() {
        let s = WindowScript::new(50.0, vec![(3.0, 150.0), (7.0, 100.0)]);
        assert_eq!(s.window_at(0.0), 50.0);
        assert_eq!(s.window_at(2.999), 50.0);
        assert_eq!(s.window_at(3.0), 150.0);
        assert_eq!(s.window_before(3.0), 50.0);
        assert_eq!(s.window_before(3.001), 150.0);
        assert_eq!(s.window_at(10.0), 100.0);
    }

    #[test]
    fn steady_state_sends_at_the_ack_rate() {
        let plan = fs_ack_step(0.0, 0.0, &[(0.0, 0.1, 800.0)]);
        assert_eq!(plan.segments, vec![(0.1, 800.0)]);
        assert_eq!(plan.pi, 0.0);
        assert!(plan.resumed_at.is_none());
    }

    #[test]
    fn window_increase_adds_the_pulse_on_top() {
        // +100 packets over dt = 1e-4 rides on an 800 pkt/s ack stream.
        let dt = 1e-4;
        let plan = fs_ack_step(0.0, 100.0 / dt, &[(0.0, dt, 800.0)]);
        assert_eq!(plan.segments.len(), 1);
        let (_, rate) = plan.segments[0];
        assert!((rate - (100.0 / dt + 800.0)).abs() < 1e-9);
        // The pulse carries the window change plus the acks of the step.
        assert!((rate * dt - (100.0 + 800.0 * dt)).abs() < 1e-9);
        assert_eq!(plan.pi, 0.0);
    }

    #[test]
    fn window_decrease_goes_silent_and_retains_acks() {
        let dt = 1e-4;
        let ack = 1500.0;
        let plan = fs_ack_step(0.0, -250.0 / dt, &[(5.0, 5.0 + dt, ack)]);
        assert_eq!(plan.segments, vec![(5.0 + dt, 0.0)]);
        assert!((plan.pi - (-250.0 + ack * dt)).abs() < 1e-9);
    }

    #[test]
    fn recovery_crossing_is_exact() {
        // pi = -1.0 refilling at 500 pkt/s reaches zero at 2 ms, then sending
        // resumes at the ack rate.
        let plan = fs_ack_step(-1.0, 0.0, &[(0.0, 0.01, 500.0)]);
        let zero_at = plan.resumed_at.unwrap();
        assert!((zero_at - 0.002).abs() < 1e-12);
        assert_eq!(plan.segments, vec![(0.002, 0.0), (0.01, 500.0)]);
        assert_eq!(plan.pi, 0.0);
    }

    #[test]
    fn multi_step_recovery_matches_the_closed_form() {
        // A 250-packet deficit against a 1502.4 pkt/s ack stream clears in
        // 250 / 1502.4 s regardless of step size.
        let ack = 1502.4;
        let dt = 1e-3;
        let mut pi = -250.0;
        let mut resumed = None;
        let mut k = 0;
        while resumed.is_none() && k < 1000 {
            let t = k as f64 * dt;
            let plan = fs_ack_step(pi, 0.0, &[(t, t + dt, ack)]);
            pi = plan.pi;
            resumed = plan.resumed_at;
            k += 1;
        }
        let want = 250.0 / ack;
        assert!((resumed.unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn varying_ack_rate_within_a_step_is_honored() {
        // Two pieces: no acks, then 1000 pkt/s. The deficit of 0.5 packets
        // clears 0.5 ms into the second piece.
        let plan = fs_ack_step(-0.5, 0.0, &[(0.0, 0.001, 0.0), (0.001, 0.003, 1000.0)]);
        let zero_at = plan.resumed_at.unwrap();
        assert!((zero_at - 0.0015).abs() < 1e-12);
        assert_eq!(
            plan.segments,
            vec![(0.001, 0.0), (0.0015, 0.0), (0.003, 1000.0)]
        );
    }

    #[test]
    fn tracking_protocol_converges_exponentially() {
        let mut p = TrackingWindow {
            target: 100.0,
            gain: 4.0,
            w: 20.0,
        };
        let obs = ObservedCongestion {
            rtt: 0.1,
            queuing_delay: 0.0,
        };
        let dt = 1e-5;
        let mut w = 0.0;
        for k in 0..=100_000 {
            w = p.window(k as f64 * dt, dt, &obs);
        }
        // After t = 1 s: w = 100 - 80 e^{-4}.
        let want = 100.0 - 80.0 * (-4.0f64).exp();
        assert!((w - want).abs() < 1e-2, "w = {w}, want {want}");
    }
}
