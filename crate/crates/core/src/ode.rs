//! Adaptive Dormand–Prince 5(4) integrator with event location.
//!
//! Shared by the quantum, classical and angular drivers and by the tabulated
//! second solutions. Events are located by bisection on the step length,
//! re-stepping from the start of the accepted step.

use crate::error::{QhjError, Result};

pub trait OdeSystem<const N: usize> {
    fn rhs(&self, x: f64, y: &[f64; N]) -> Result<[f64; N]>;
}

/// Where the state is placed after an event is bracketed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventSide {
    /// Last point before the crossing (g keeps its sign). Used for events
    /// that change the direction of motion.
    Before,
    /// First point past the crossing. Used for pass-through events.
    After,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// An ODE with discrete state changes at the zeros of event functions.
pub trait EventSystem<const N: usize>: OdeSystem<N> {
    fn event_count(&self) -> usize;
    fn event_value(&self, i: usize, x: f64, y: &[f64; N]) -> f64;
    fn event_side(&self, i: usize) -> EventSide;
    fn handle_event(&mut self, i: usize, x: f64, y: &mut [f64; N]) -> Result<Control>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: Tolerances,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    /// Bracket width (in the independent variable) at which event bisection stops.
    pub event_x_tol: f64,
    /// Event-function magnitude at which bisection may stop.
    pub event_g_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances {
                rtol: 1e-10,
                atol: 1e-12,
            },
            max_step: f64::INFINITY,
            initial_step: None,
            max_steps: 2_000_000,
            event_x_tol: 1e-10,
            event_g_tol: 1e-10,
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn combo<const N: usize>(y: &[f64; N], h: f64, ks: &[&[f64; N]], w: &[f64]) -> [f64; N] {
    let mut out = *y;
    for (k, &wk) in ks.iter().zip(w) {
        if wk == 0.0 {
            continue;
        }
        for i in 0..N {
            out[i] += h * wk * k[i];
        }
    }
    out
}

fn all_finite<const N: usize>(y: &[f64; N]) -> bool {
    y.iter().all(|v| v.is_finite())
}

pub struct StepOut<const N: usize> {
    pub y: [f64; N],
    pub err: f64,
    pub k_end: [f64; N],
}

/// One Dormand–Prince step from (x, y) with slope `k1`.
pub fn dopri_step<S: OdeSystem<N> + ?Sized, const N: usize>(
    sys: &S,
    x: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    tol: &Tolerances,
) -> Result<StepOut<N>> {
    let k2 = sys.rhs(x + C[1] * h, &combo(y, h, &[k1], &A2))?;
    let k3 = sys.rhs(x + C[2] * h, &combo(y, h, &[k1, &k2], &A3))?;
    let k4 = sys.rhs(x + C[3] * h, &combo(y, h, &[k1, &k2, &k3], &A4))?;
    let k5 = sys.rhs(x + C[4] * h, &combo(y, h, &[k1, &k2, &k3, &k4], &A5))?;
    let k6 = sys.rhs(x + h, &combo(y, h, &[k1, &k2, &k3, &k4, &k5], &A6))?;
    let y_new = combo(y, h, &[k1, &k2, &k3, &k4, &k5, &k6], &B);
    if !all_finite(&y_new) {
        return Err(QhjError::Evaluation(
            "non-finite state in trial step".into(),
        ));
    }
    let k7 = sys.rhs(x + h, &y_new)?;
    let mut err: f64 = 0.0;
    for i in 0..N {
        let e = h
            * (E[0] * k1[i]
                + E[2] * k3[i]
                + E[3] * k4[i]
                + E[4] * k5[i]
                + E[5] * k6[i]
                + E[6] * k7[i]);
        let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
        err = err.max((e / sc).abs());
    }
    if !err.is_finite() {
        return Err(QhjError::Evaluation("non-finite error estimate".into()));
    }
    Ok(StepOut {
        y: y_new,
        err,
        k_end: k7,
    })
}

fn initial_step<S: OdeSystem<N> + ?Sized, const N: usize>(
    sys: &S,
    x: f64,
    y: &[f64; N],
    k1: &[f64; N],
    dir: f64,
    opts: &SolverOptions,
) -> f64 {
    if let Some(h) = opts.initial_step {
        return h.abs().min(opts.max_step);
    }
    let tol = &opts.tol;
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for i in 0..N {
        let sc = tol.atol + tol.rtol * y[i].abs();
        d0 = d0.max((y[i] / sc).abs());
        d1 = d1.max((k1[i] / sc).abs());
    }
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1 = combo(y, dir * h0, &[k1], &[1.0]);
    let d2 = match sys.rhs(x + dir * h0, &y1) {
        Ok(k) => {
            let mut d2: f64 = 0.0;
            for i in 0..N {
                let sc = tol.atol + tol.rtol * y[i].abs();
                d2 = d2.max(((k[i] - k1[i]) / sc).abs() / h0);
            }
            d2
        }
        Err(_) => return (h0 * 1e-3).min(opts.max_step),
    };
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(opts.max_step)
}

/// Result of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEnd<const N: usize> {
    pub x: f64,
    pub y: [f64; N],
    pub stopped_by_event: bool,
    pub accepted_steps: usize,
}

/// What the driver reports to the sampling callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Step,
    Requested,
    /// Before the handler ran.
    EventBefore(usize),
    /// After the handler ran.
    EventAfter(usize),
}

fn sgn(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

struct Located<const N: usize> {
    idx: usize,
    h_lo: f64,
    y_lo: [f64; N],
    h_hi: f64,
    y_hi: [f64; N],
}

#[allow(clippy::too_many_arguments)]
fn locate<S: EventSystem<N>, const N: usize>(
    sys: &S,
    idx: usize,
    x: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    y_end: &[f64; N],
    g0: f64,
    opts: &SolverOptions,
) -> Result<Located<N>> {
    let s0 = sgn(g0);
    let mut lo = 0.0;
    let mut y_lo = *y;
    let mut hi = h;
    let mut y_hi = *y_end;
    let side = sys.event_side(idx);
    for _ in 0..300 {
        let width = (hi - lo).abs();
        let floor = 4.0 * f64::EPSILON * (x.abs() + h.abs());
        if width <= floor {
            break;
        }
        let g_side = match side {
            EventSide::Before => sys.event_value(idx, x + lo, &y_lo),
            EventSide::After => sys.event_value(idx, x + hi, &y_hi),
        };
        if width <= opts.event_x_tol && g_side.abs() <= opts.event_g_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let ym = dopri_step(sys, x, y, k1, mid, &opts.tol)?.y;
        let gm = sys.event_value(idx, x + mid, &ym);
        if sgn(gm) == s0 {
            lo = mid;
            y_lo = ym;
        } else {
            hi = mid;
            y_hi = ym;
        }
    }
    Ok(Located {
        idx,
        h_lo: lo,
        y_lo,
        h_hi: hi,
        y_hi,
    })
}

/// Integrates from `x0` towards `x_end` handling events.
///
/// `sample_points`, when given, must be monotone in the direction of
/// integration; steps are clamped to land on them and only those points plus
/// events are reported as samples. Otherwise every accepted step is reported.
pub fn integrate<S, F, const N: usize>(
    sys: &mut S,
    x0: f64,
    y0: [f64; N],
    x_end: f64,
    opts: &SolverOptions,
    sample_points: Option<&[f64]>,
    mut on_sample: F,
) -> Result<RunEnd<N>>
where
    S: EventSystem<N>,
    F: FnMut(&S, SampleKind, f64, &[f64; N]),
{
    let dir = if x_end >= x0 { 1.0 } else { -1.0 };
    let mut x = x0;
    let mut y = y0;
    let mut k1 = sys.rhs(x, &y)?;
    let mut h = initial_step(sys, x, &y, &k1, dir, opts);
    let mut accepted = 0usize;
    let mut next_sample = 0usize;
    let mut g_prev: Vec<f64> = (0..sys.event_count())
        .map(|i| sys.event_value(i, x, &y))
        .collect();

    while let Some(&p) = sample_points.and_then(|s| s.get(next_sample)) {
        if (p - x) * dir <= 0.0 {
            if p == x {
                on_sample(sys, SampleKind::Requested, x, &y);
            }
            next_sample += 1;
        } else {
            break;
        }
    }

    loop {
        if (x_end - x) * dir <= 0.0 {
            break;
        }
        if accepted >= opts.max_steps {
            return Err(QhjError::Stall {
                t: x,
                reason: format!("exceeded {} steps", opts.max_steps),
            });
        }
        let mut target = x_end;
        let mut hits_sample = false;
        if let Some(&p) = sample_points.and_then(|s| s.get(next_sample)) {
            if (p - target) * dir <= 0.0 {
                target = p;
                hits_sample = true;
            }
        }
        let remaining = (target - x).abs();
        let mut h_try = h.abs().min(opts.max_step);
        let mut lands = false;
        if h_try >= remaining {
            h_try = remaining;
            lands = true;
        }
        let h_min = 16.0 * f64::EPSILON * x.abs().max(1e-300) + 1e-300;

        let step = loop {
            let res = dopri_step(sys, x, &y, &k1, dir * h_try, &opts.tol);
            match res {
                Ok(out) if out.err <= 1.0 => break out,
                Ok(out) => {
                    let fac = (0.9 * out.err.powf(-0.2)).clamp(0.2, 1.0);
                    h_try *= fac;
                    lands = false;
                }
                Err(e) => {
                    if h_try <= h_min {
                        return Err(e);
                    }
                    h_try *= 0.25;
                    lands = false;
                }
            }
            if h_try <= h_min {
                return Err(QhjError::Stall {
                    t: x,
                    reason: "step size underflow".into(),
                });
            }
        };
        let h_used = dir * h_try;
        let x_new = if lands { target } else { x + h_used };
        let h_used = x_new - x;

        // events
        let n_ev = sys.event_count();
        let mut g_new = Vec::with_capacity(n_ev);
        let mut first: Option<Located<N>> = None;
        for i in 0..n_ev {
            let g1 = sys.event_value(i, x_new, &step.y);
            g_new.push(g1);
            let g0 = g_prev.get(i).copied().unwrap_or(g1);
            let crossed = sgn(g0) != 0 && sgn(g1) != sgn(g0);
            if !crossed {
                continue;
            }
            let loc = locate(sys, i, x, &y, &k1, h_used, &step.y, g0, opts)?;
            let better = match &first {
                None => true,
                Some(f) => loc.h_hi.abs() < f.h_hi.abs(),
            };
            if better {
                first = Some(loc);
            }
        }

        if let Some(loc) = first {
            let (xe, mut ye) = match sys.event_side(loc.idx) {
                EventSide::Before => (x + loc.h_lo, loc.y_lo),
                EventSide::After => (x + loc.h_hi, loc.y_hi),
            };
            on_sample(sys, SampleKind::EventBefore(loc.idx), xe, &ye);
            let control = sys.handle_event(loc.idx, xe, &mut ye)?;
            x = xe;
            y = ye;
            accepted += 1;
            on_sample(sys, SampleKind::EventAfter(loc.idx), x, &y);
            if control == Control::Stop {
                return Ok(RunEnd {
                    x,
                    y,
                    stopped_by_event: true,
                    accepted_steps: accepted,
                });
            }
            k1 = sys.rhs(x, &y)?;
            g_prev = (0..sys.event_count())
                .map(|i| sys.event_value(i, x, &y))
                .collect();
            h = h_try.max(h_min);
            continue;
        }

        x = x_new;
        y = step.y;
        k1 = step.k_end;
        g_prev = g_new;
        accepted += 1;
        if sample_points.is_some() {
            if hits_sample && lands {
                on_sample(sys, SampleKind::Requested, x, &y);
                next_sample += 1;
            }
        } else {
            on_sample(sys, SampleKind::Step, x, &y);
        }
        let err = dopri_err_factor(&step);
        if !lands {
            h = h_try * err;
        } else {
            h = h.max(h_try);
        }
    }
    Ok(RunEnd {
        x,
        y,
        stopped_by_event: false,
        accepted_steps: accepted,
    })
}

fn dopri_err_factor<const N: usize>(step: &StepOut<N>) -> f64 {
    if step.err == 0.0 {
        5.0
    } else {
        (0.9 * step.err.powf(-0.2)).clamp(0.2, 5.0)
    }
}

/// Adapter turning a plain [`OdeSystem`] into an event-free [`EventSystem`].
pub struct NoEvents<'a, S>(pub &'a S);

impl<S: OdeSystem<N>, const N: usize> OdeSystem<N> for NoEvents<'_, S> {
    fn rhs(&self, x: f64, y: &[f64; N]) -> Result<[f64; N]> {
        self.0.rhs(x, y)
    }
}

impl<S: OdeSystem<N>, const N: usize> EventSystem<N> for NoEvents<'_, S> {
    fn event_count(&self) -> usize {
        0
    }
    fn event_value(&self, _: usize, _: f64, _: &[f64; N]) -> f64 {
        0.0
    }
    fn event_side(&self, _: usize) -> EventSide {
        EventSide::After
    }
    fn handle_event(&mut self, _: usize, _: f64, _: &mut [f64; N]) -> Result<Control> {
        Ok(Control::Continue)
    }
}

/// Integrates a plain system from `x0` to `x1` and returns the end state.
pub fn solve_to<S: OdeSystem<N>, const N: usize>(
    sys: &S,
    x0: f64,
    y0: [f64; N],
    x1: f64,
    opts: &SolverOptions,
) -> Result<[f64; N]> {
    let mut wrapped = NoEvents(sys);
    let end = integrate(&mut wrapped, x0, y0, x1, opts, Some(&[]), |_, _, _, _| {})?;
    Ok(end.y)
}
