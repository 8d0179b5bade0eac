//! The hybrid semiflow: the linear saddle `ẋ = λx, ẏ = −μy, ż = −νz` on the
//! slab `|x| ≤ 0.1`, glued to timed excursions outside the slab that return
//! to the section through `L`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::bigreal::{BigInterval, BigReal};
use crate::error::{Error, Result};
use crate::geometry::{self, BoxSpec, SigmaPoint};
use crate::map1d::MapParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub t_out: f64,
    pub x_side: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            lambda: 1.0,
            mu: 2.0,
            nu: 1.0,
            t_out: 1.0,
            x_side: 0.1,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParams(format!("lambda = {} must be positive", self.lambda)));
        }
        if !(self.nu > 0.0 && self.mu > self.nu) {
            return Err(Error::InvalidParams(format!(
                "need mu > nu > 0, got mu = {}, nu = {}",
                self.mu, self.nu
            )));
        }
        if !(self.t_out > 0.0) {
            return Err(Error::InvalidParams(format!("T_out = {} must be positive", self.t_out)));
        }
        if self.x_side != 0.1 {
            return Err(Error::InvalidParams("the slab half-width is fixed at 0.1".into()));
        }
        Ok(())
    }

    /// Exponent `μ/λ` used by `β`.
    pub fn s(&self) -> f64 {
        self.mu / self.lambda
    }

    /// Time for `z` to fall from 1 to `η`.
    pub fn t_top(&self, b: &BoxSpec) -> f64 {
        (1.0 / b.eta).ln() / self.nu
    }

    /// Bound on the time spent outside `Π(η)` during one full return:
    /// `T_out + ln(1/η)/ν + ln(0.1/η)/λ`.
    pub fn outside_time_bound(&self, b: &BoxSpec) -> f64 {
        self.t_out + self.t_top(b) + (self.x_side / b.eta).ln() / self.lambda
    }

    /// Bound on the total return time from a section point with `|x| ≥ η`.
    pub fn return_time_bound(&self, b: &BoxSpec) -> f64 {
        self.t_out + (self.x_side / b.eta).ln() / self.lambda
    }

    /// Time outside `Π(η)` during the return that starts at `|x| = 2^{log2_x}`.
    pub fn outside_time_from(&self, log2_x: f64, b: &BoxSpec) -> f64 {
        let ln_x = log2_x * std::f64::consts::LN_2;
        if ln_x >= self.x_side.ln() {
            return self.t_out;
        }
        let d = (self.x_side.ln() - ln_x) / self.lambda;
        let t_x = (b.eta.ln() - ln_x) / self.lambda;
        let inside = (t_x - self.t_top(b)).max(0.0);
        self.t_out + d - inside
    }
}

/// Model parameters bundled together.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub map: MapParams,
    pub flow: FlowParams,
    pub boxes: BoxSpec,
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        self.flow.validate()?;
        self.boxes.validate(&self.map, &self.flow)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State3 {
    pub x: BigReal,
    pub y: f64,
    pub z: f64,
}

impl State3 {
    pub fn on_section(p: &SigmaPoint) -> Self {
        State3 {
            x: p.x.clone(),
            y: p.y,
            z: 1.0,
        }
    }
}

/// Closed-form flow for time `t`.
pub fn linear_flow(s: &State3, t: f64, fp: &FlowParams) -> Result<State3> {
    let x = s.x.mul_exp(fp.lambda * t);
    let reached = (x.log2_abs()).exp2();
    if reached > fp.x_side * (1.0 + 1e-12) {
        return Err(Error::SlabExit { reached });
    }
    Ok(State3 {
        x,
        y: s.y * (-fp.mu * t).exp(),
        z: s.z * (-fp.nu * t).exp(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentTimes {
    /// `z` reaches `η`.
    pub t_top: f64,
    /// `|x|` reaches `η`; 0 when `|x0| ≥ η`.
    pub t_side: f64,
    /// `|x|` reaches the slab edge.
    pub t_slab: f64,
    /// The orbit enters `Π(η)` through its top face.
    pub enters_top: bool,
}

pub fn exit_and_descent_times(x0: &BigReal, fp: &FlowParams, b: &BoxSpec) -> Result<DescentTimes> {
    if x0.is_zero() {
        return Err(Error::Domain);
    }
    let ln_x = x0.ln_abs();
    if ln_x > fp.x_side.ln() + 1e-12 {
        return Err(Error::InvalidArgument("|x0| exceeds the slab half-width".into()));
    }
    let t_top = fp.t_top(b);
    let t_side = ((b.eta.ln() - ln_x) / fp.lambda).max(0.0);
    let t_slab = ((fp.x_side.ln() - ln_x) / fp.lambda).max(0.0);
    Ok(DescentTimes {
        t_top,
        t_side,
        t_slab,
        enters_top: t_side >= t_top,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Segment {
    /// Flow inside the slab from `entry` for `duration`.
    Linear {
        t_start: f64,
        duration: f64,
        entry: State3,
    },
    /// Excursion outside the slab ending on the section at `ret`.
    Outside {
        t_start: f64,
        duration: f64,
        ret: SigmaPoint,
    },
}

impl Segment {
    pub fn t_start(&self) -> f64 {
        match self {
            Segment::Linear { t_start, .. } | Segment::Outside { t_start, .. } => *t_start,
        }
    }

    pub fn duration(&self) -> f64 {
        match self {
            Segment::Linear { duration, .. } | Segment::Outside { duration, .. } => *duration,
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t_start() + self.duration()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TailKind {
    /// The section coordinate is exactly `±p*`; the tail is periodic forever.
    Exact,
    /// Every point of a certified ball stays on the period-2 itinerary, away
    /// from the slab, until `until`.
    Certified { until: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tail {
    pub t_start: f64,
    pub period: f64,
    pub states: [SigmaPoint; 2],
    pub kind: TailKind,
}

impl Tail {
    pub fn end(&self) -> f64 {
        match self.kind {
            TailKind::Exact => f64::INFINITY,
            TailKind::Certified { until } => until,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// The `k`-th section crossing (`k = 0` is the start).
    Section(usize),
    /// Entry into `Π(η)` through the top face during the return that starts
    /// at crossing `k`.
    TopFace(usize),
    /// Exit from `Π(η)` through a side face during the return that starts at
    /// crossing `k`.
    SideFace(usize),
    TailStart,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Clone, Debug)]
pub struct Crossing {
    pub t: f64,
    pub point: SigmaPoint,
}

#[derive(Clone, Debug)]
pub struct HybridOrbit {
    pub start: SigmaPoint,
    pub segments: Vec<Segment>,
    pub crossings: Vec<Crossing>,
    pub tail: Option<Tail>,
    /// End of the covered time range; infinite behind an exact tail.
    pub horizon: f64,
    /// The horizon that was requested.
    pub requested: f64,
    pub eta: f64,
}

/// How an orbit may end in a period-2 tail.
#[derive(Clone, Debug)]
pub enum TailRule {
    None,
    /// Snap at any crossing with `||x| − p*| ≤ 2^{log2_tol}`.
    SnapAnywhere { p_star: BigReal, log2_tol: f64 },
    /// Snap at crossing `at`, which must lie within `2^{log2_tol}` of `target`.
    SnapAt {
        at: usize,
        target: BigReal,
        log2_tol: f64,
    },
    /// At crossing `at` the point must lie in `ball`, whose points shadow the
    /// period-2 orbit outside the slab for `returns` returns.
    ShadowAt {
        at: usize,
        ball: BigInterval,
        returns: usize,
    },
}

/// Precision at which crossings and segment entries are recorded.
const RECORD_BITS: u32 = 128;

fn record(p: &SigmaPoint) -> SigmaPoint {
    SigmaPoint {
        x: p.x.with_precision(p.x.precision_bits().min(RECORD_BITS)),
        y: p.y,
    }
}

/// One return to the section from `z`, starting at time `t0`.
pub fn advance_one_return(
    z: &SigmaPoint,
    t0: f64,
    model: &Model,
) -> Result<(Vec<Segment>, SigmaPoint, f64)> {
    let fp = &model.flow;
    if z.x.is_zero() {
        return Err(Error::GammaHit { time: t0 });
    }
    let next = geometry::return_map(z, &model.map, fp).map_err(|e| match e {
        Error::Domain | Error::StableManifold { .. } => Error::GammaHit { time: t0 },
        other => other,
    })?;
    let mut segs = Vec::with_capacity(2);
    let ln_x = z.x.ln_abs();
    let mut t = t0;
    if ln_x < fp.x_side.ln() {
        let d = (fp.x_side.ln() - ln_x) / fp.lambda;
        segs.push(Segment::Linear {
            t_start: t,
            duration: d,
            entry: State3::on_section(&record(z)),
        });
        t += d;
    }
    segs.push(Segment::Outside {
        t_start: t,
        duration: fp.t_out,
        ret: record(&next),
    });
    t += fp.t_out;
    Ok((segs, next, t - t0))
}

/// Assembles the orbit of `z` up to `horizon`, or until `rule` attaches a
/// tail.
pub fn build_orbit(z: &SigmaPoint, horizon: f64, model: &Model, rule: &TailRule) -> Result<HybridOrbit> {
    if horizon.is_infinite() && matches!(rule, TailRule::None) {
        return Err(Error::InvalidArgument("an infinite horizon needs a tail rule".into()));
    }
    let mut orbit = HybridOrbit {
        start: z.clone(),
        segments: Vec::new(),
        crossings: vec![Crossing {
            t: 0.0,
            point: record(z),
        }],
        tail: None,
        horizon,
        requested: horizon,
        eta: model.boxes.eta,
    };
    let mut cur = z.clone();
    let mut t = 0.0;
    let mut k = 0usize;
    loop {
        if let Some(tail) = try_tail(&cur, k, t, model, rule)? {
            orbit.horizon = tail.end();
            orbit.tail = Some(tail);
            break;
        }
        if t >= horizon {
            break;
        }
        let (segs, next, d) = advance_one_return(&cur, t, model)?;
        orbit.segments.extend(segs);
        t += d;
        k += 1;
        orbit.crossings.push(Crossing {
            t,
            point: record(&next),
        });
        cur = next;
    }
    if orbit.tail.is_none() {
        orbit.horizon = t;
    }
    Ok(orbit)
}

fn try_tail(cur: &SigmaPoint, k: usize, t: f64, model: &Model, rule: &TailRule) -> Result<Option<Tail>> {
    let period = 2.0 * model.flow.t_out;
    let exact = |target: &BigReal| -> Result<Tail> {
        let a = SigmaPoint {
            x: target.clone(),
            y: cur.y,
        };
        let b = SigmaPoint {
            x: -target,
            y: geometry::eval_beta(target, cur.y, model.flow.s())?,
        };
        Ok(Tail {
            t_start: t,
            period,
            states: [a, b],
            kind: TailKind::Exact,
        })
    };
    match rule {
        TailRule::None => Ok(None),
        TailRule::SnapAnywhere { p_star, log2_tol } => {
            let signed = if cur.x.is_negative() { -p_star } else { p_star.clone() };
            if (&cur.x - &signed).log2_abs() <= *log2_tol {
                Ok(Some(exact(&signed)?))
            } else {
                Ok(None)
            }
        }
        TailRule::SnapAt { at, target, log2_tol } => {
            if k != *at {
                return Ok(None);
            }
            let miss = (&cur.x - target).log2_abs();
            if miss > *log2_tol {
                return Err(Error::Construction(format!(
                    "crossing {k} misses the period-2 point by 2^{miss:.1}"
                )));
            }
            Ok(Some(exact(target)?))
        }
        TailRule::ShadowAt { at, ball, returns } => {
            if k != *at {
                return Ok(None);
            }
            if !ball.contains(&cur.x) {
                return Err(Error::Construction(format!(
                    "crossing {k} lies outside the shadowing ball"
                )));
            }
            let next = geometry::return_map(cur, &model.map, &model.flow)?;
            Ok(Some(Tail {
                t_start: t,
                period,
                states: [record(cur), record(&next)],
                kind: TailKind::Certified {
                    until: t + *returns as f64 * model.flow.t_out,
                },
            }))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    PiEta,
    Pi2Eta,
}

impl Region {
    fn scale(self) -> f64 {
        match self {
            Region::PiEta => 1.0,
            Region::Pi2Eta => 2.0,
        }
    }
}

/// Sub-interval `[a, b]` of `[0, duration]` (relative to segment start) during
/// which a linear segment is inside the box of half-width `k·η`.
pub fn box_interval(entry: &State3, duration: f64, k_eta: f64, fp: &FlowParams) -> Option<(f64, f64)> {
    let ln_x = entry.x.ln_abs();
    let t_x = (k_eta.ln() - ln_x) / fp.lambda;
    let t_y = if entry.y.abs() <= k_eta {
        0.0
    } else {
        (entry.y.abs() / k_eta).ln() / fp.mu
    };
    let t_z = if entry.z <= k_eta { 0.0 } else { (entry.z / k_eta).ln() / fp.nu };
    let a = t_y.max(t_z).max(0.0);
    let b = t_x.min(duration);
    (b > a).then_some((a, b))
}

impl HybridOrbit {
    /// Section crossings, box entries/exits and the tail start, in time order.
    pub fn events(&self, fp: &FlowParams) -> Vec<Event> {
        let mut ev: Vec<Event> = self
            .crossings
            .iter()
            .enumerate()
            .map(|(k, c)| Event {
                t: c.t,
                kind: EventKind::Section(k),
            })
            .collect();
        let mut k = 0usize;
        for seg in &self.segments {
            match seg {
                Segment::Outside { .. } => k += 1,
                Segment::Linear {
                    t_start,
                    duration,
                    entry,
                } => {
                    if let Some((a, b)) = box_interval(entry, *duration, self.eta, fp) {
                        ev.push(Event {
                            t: t_start + a,
                            kind: EventKind::TopFace(k),
                        });
                        ev.push(Event {
                            t: t_start + b,
                            kind: EventKind::SideFace(k),
                        });
                    }
                }
            }
        }
        if let Some(tail) = &self.tail {
            ev.push(Event {
                t: tail.t_start,
                kind: EventKind::TailStart,
            });
        }
        ev.sort_by(|a, b| a.t.total_cmp(&b.t));
        ev
    }

    /// Time of the exit from `Π(η)` during the return starting at crossing `k`.
    pub fn side_exit_time(&self, k: usize, fp: &FlowParams) -> Option<f64> {
        self.box_times(k, fp).map(|(_, b)| b)
    }

    pub fn top_entry_time(&self, k: usize, fp: &FlowParams) -> Option<f64> {
        self.box_times(k, fp).map(|(a, _)| a)
    }

    fn box_times(&self, k: usize, fp: &FlowParams) -> Option<(f64, f64)> {
        let t0 = self.crossings.get(k)?.t;
        let seg = self.segments.iter().find(|s| s.t_start() == t0)?;
        match seg {
            Segment::Linear {
                t_start,
                duration,
                entry,
            } => box_interval(entry, *duration, self.eta, fp).map(|(a, b)| (t_start + a, t_start + b)),
            Segment::Outside { .. } => None,
        }
    }

    pub fn crossing_time(&self, k: usize) -> Option<f64> {
        self.crossings.get(k).map(|c| c.t)
    }

    /// End time of the explicit segments (the tail starts here when present).
    pub fn segments_end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end())
    }
}

/// `|t_a − t_b|` for two events of [`HybridOrbit::events`].
pub fn elapsed_time(orbit: &HybridOrbit, fp: &FlowParams, a: usize, b: usize) -> Result<f64> {
    let ev = orbit.events(fp);
    let get = |i: usize| {
        ev.get(i).map(|e| e.t).ok_or(Error::EventIndex {
            index: i,
            len: ev.len(),
        })
    };
    Ok((get(a)? - get(b)?).abs())
}

/// Time spent in `region` during `[0, up_to]`, in closed form.
pub fn time_in_region(orbit: &HybridOrbit, fp: &FlowParams, region: Region, up_to: f64) -> f64 {
    let k_eta = region.scale() * orbit.eta;
    let mut total = 0.0;
    for seg in &orbit.segments {
        if seg.t_start() >= up_to {
            break;
        }
        if let Segment::Linear {
            t_start,
            duration,
            entry,
        } = seg
        {
            if let Some((a, b)) = box_interval(entry, *duration, k_eta, fp) {
                let b = b.min(up_to - t_start);
                if b > a {
                    total += b - a;
                }
            }
        }
    }
    total
}

/// Writes the segment list as CSV with a commented header block.
pub fn write_orbit_csv<W: Write>(w: &mut W, orbit: &HybridOrbit, header: &[String], full_decimal: bool) -> io::Result<()> {
    for line in header {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "t_start,t_end,kind,x_entry,y_entry,z_entry")?;
    let fmt_x = |x: &BigReal| {
        if full_decimal {
            x.to_decimal()
        } else {
            format!("{:.16e}", x.to_f64())
        }
    };
    for seg in &orbit.segments {
        match seg {
            Segment::Linear { entry, .. } => writeln!(
                w,
                "{:.16e},{:.16e},linear,{},{:.16e},{:.16e}",
                seg.t_start(),
                seg.t_end(),
                fmt_x(&entry.x),
                entry.y,
                entry.z
            )?,
            Segment::Outside { ret, .. } => writeln!(
                w,
                "{:.16e},{:.16e},outside,{},{:.16e},{:.16e}",
                seg.t_start(),
                seg.t_end(),
                fmt_x(&ret.x),
                ret.y,
                1.0
            )?,
        }
    }
    if let Some(tail) = &orbit.tail {
        let end = tail.end();
        writeln!(
            w,
            "{:.16e},{},periodic_tail,{},{:.16e},{:.16e}",
            tail.t_start,
            if end.is_finite() { format!("{end:.16e}") } else { "inf".into() },
            fmt_x(&tail.states[0].x),
            tail.states[0].y,
            1.0
        )?;
    }
    Ok(())
}
