//! Certified initial neighborhoods with `(N, 1/2)`-historic behavior, their
//! independent re-verification, nested deepening and dense grid covers.
//!
//! A construction picks `σ`, pushes `I(x0, ε)` forward until it covers 0,
//! pulls `K = [ε^σ/2, ε^σ]` (or its mirror) back to `J0`, finds a preimage of
//! the period-2 point inside `K`, and starts the center orbit on the exact
//! backward orbit of `±p*`. The neighborhood is then shrunk until nine sample
//! orbits keep the averaging gap.

use serde::{Deserialize, Serialize};

use crate::averaging::GIntegrator;
use crate::bigreal::{clamp_bits, BigInterval, BigReal};
use crate::error::{Error, Result};
use crate::geometry::SigmaPoint;
use crate::map1d::{self, Branch, Itinerary};
use crate::semiflow::{build_orbit, time_in_region, HybridOrbit, Model, Region, TailRule};

pub const SCHEMA: &str = "lhw-1";
/// Precision of the period-2 target.
pub const PSTAR_BITS: u32 = 256;
/// Accuracy with which the center start maps onto `±p*`.
const CENTER_LOG2_TOL: f64 = -96.0;
/// The center's `(n0+n1)`-th crossing must be this close to `±p*`.
const SNAP_LOG2_TOL: f64 = -64.0;
const BALL_RADIUS: f64 = 0.1;
const SAMPLE_FRACTIONS: [f64; 3] = [1.0 / 16.0, 0.5, 15.0 / 16.0];
pub const MAX_SHRINK: u32 = 64;
pub const VERIFY_TOL: f64 = 1e-8;
pub const SAMPLE_GAP: f64 = 0.5;
pub const DEFAULT_N_MAX: usize = 200_000;
/// Lower end of the allowed relaxed margins.
pub const MIN_MARGIN: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mode {
    /// `σ` from the worst-case bound with the factor 3.
    Strict,
    /// `σ` from the measured pre-descent outside time with factor `margin`.
    Relaxed { margin: f64 },
}

impl Mode {
    pub fn factor(&self) -> f64 {
        match self {
            Mode::Strict => 3.0,
            Mode::Relaxed { margin } => *margin,
        }
    }

    /// Guaranteed lower bound on `A0`: `f/(1+f)`, i.e. 3/4 in strict mode.
    pub fn a0_bound(&self) -> f64 {
        let f = self.factor();
        f / (1.0 + f)
    }

    pub fn a1_bound(&self) -> f64 {
        0.2
    }

    pub fn center_gap(&self) -> f64 {
        self.a0_bound() - self.a1_bound()
    }

    pub fn ratio_bound(&self) -> f64 {
        1.0 + 1.0 / self.factor()
    }

    fn validate(&self) -> Result<()> {
        match self {
            Mode::Strict => Ok(()),
            Mode::Relaxed { margin } if *margin >= MIN_MARGIN && margin.is_finite() => Ok(()),
            Mode::Relaxed { margin } => Err(Error::InvalidArgument(format!(
                "relaxed margin {margin} must be at least {MIN_MARGIN}"
            ))),
        }
    }
}

/// How far sample orbits are followed exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborhoodStyle {
    /// Pullback of a ball about `±p*`; sample orbits run freely after landing.
    Sampled,
    /// Pullback of a ball that shadows the period-2 cycle until `τ1`.
    Shadowing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NeighborhoodKind {
    Sampled,
    Shadowing { returns: usize, ball: BigInterval },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub x: BigInterval,
    pub y: BigInterval,
    /// The neighborhood is the maximal one shrunk by `2^{-shrink}`.
    pub shrink: u32,
    pub kind: NeighborhoodKind,
}

impl Neighborhood {
    pub fn center(&self) -> SigmaPoint {
        SigmaPoint::new(self.x.mid(), self.y.mid().to_f64())
    }

    /// Smaller of the two half-widths.
    pub fn radius(&self) -> BigReal {
        let rx = self.x.width().mul_f64(0.5);
        let ry = self.y.width().mul_f64(0.5);
        rx.min(&ry).clone()
    }

    pub fn contains(&self, other: &Neighborhood) -> bool {
        self.x.contains_interval(&other.x) && self.y.contains_interval(&other.y)
    }
}

/// Times along the center orbit: `y1` is the `n0`-th crossing, `y2` the
/// entry through the top face of `Π(η)`, `y3` the side exit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub tau01_outside: f64,
    pub tau12: f64,
    pub tau23: f64,
    pub tau03_in_box: f64,
    /// `τ(y0,y3) / τ(y0,y3)|Π(η)`.
    pub ratio: f64,
    pub factor: f64,
    /// `τ23 ≥ factor·(τ01_outside + τ12)`.
    pub factor_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub x: BigReal,
    pub y: f64,
    #[serde(rename = "A0")]
    pub a0: f64,
    #[serde(rename = "A1")]
    pub a1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessCertificate {
    pub schema: String,
    pub mode: Mode,
    pub model: Model,
    pub x0: BigReal,
    pub y_input: f64,
    #[serde(rename = "N")]
    pub n: u64,
    pub eps: BigReal,
    pub sigma: f64,
    pub n0: usize,
    pub itinerary0: Itinerary,
    pub image_n0: BigInterval,
    pub side: i32,
    #[serde(rename = "J0")]
    pub j0: BigInterval,
    pub n1: usize,
    pub itinerary1: Itinerary,
    #[serde(rename = "J1")]
    pub j1: BigInterval,
    pub q: BigReal,
    pub y0: SigmaPoint,
    pub neighborhood: Neighborhood,
    pub tau0: f64,
    pub tau4: f64,
    pub tau1: f64,
    #[serde(rename = "A0")]
    pub a0: f64,
    #[serde(rename = "A1")]
    pub a1: f64,
    #[serde(rename = "C_used")]
    pub c_used: f64,
    pub precision_bits: u32,
    pub audit: Audit,
    pub samples: Vec<SampleRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WitnessRequest {
    pub x0: BigReal,
    pub y: f64,
    pub n: u64,
    pub eps: BigReal,
}

impl WitnessRequest {
    pub fn new(x0: f64, n: u64, eps: f64) -> Self {
        WitnessRequest {
            x0: BigReal::from_f64(x0, 64),
            y: 0.0,
            n,
            eps: BigReal::from_f64(eps, 64),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WitnessOptions {
    pub mode: Mode,
    pub style: NeighborhoodStyle,
    pub n_max: usize,
    /// Multiplies the center precision; 1 is the natural rule.
    pub precision_scale: u32,
}

impl Default for WitnessOptions {
    fn default() -> Self {
        WitnessOptions {
            mode: Mode::Strict,
            style: NeighborhoodStyle::Sampled,
            n_max: DEFAULT_N_MAX,
            precision_scale: 1,
        }
    }
}

/// Smallest `σ ≥ 1` with `(σ·ln(1/ε) + ln η)/λ ≥ max{N, rhs}` and
/// `ε^σ ≤ η²`.
pub fn sigma_for(n: u64, ln_inv_eps: f64, model: &Model, rhs: f64) -> f64 {
    let fp = &model.flow;
    let ln_eta = model.boxes.eta.ln();
    let need = rhs.max(n as f64);
    let by_time = (fp.lambda * need - ln_eta) / ln_inv_eps;
    let by_box = -2.0 * ln_eta / ln_inv_eps;
    by_time.max(by_box).max(1.0)
}

/// The worst-case right-hand side `6C·ln(1/ε)/ln 2 + 4·ln(1/η)/ν`.
pub fn strict_rhs(ln_inv_eps: f64, model: &Model, c: f64) -> f64 {
    6.0 * c * ln_inv_eps / std::f64::consts::LN_2 + 4.0 * model.flow.t_top(&model.boxes)
}

pub fn choose_sigma(n: u64, eps: f64, model: &Model, c: f64) -> f64 {
    let l = (1.0 / eps).ln();
    sigma_for(n, l, model, strict_rhs(l, model, c))
}

/// `⌈2·ln(1/ε)/ln 2⌉`.
pub fn n0_bound_ln(ln_inv_eps: f64) -> usize {
    (2.0 * ln_inv_eps / std::f64::consts::LN_2).ceil() as usize
}

/// Everything about a construction that is fixed before any orbit is run.
#[derive(Clone, Debug)]
struct Chain {
    sigma: f64,
    c_used: f64,
    n0: usize,
    itinerary0: Itinerary,
    image_n0: BigInterval,
    side: i32,
    k: BigInterval,
    j0: BigInterval,
    n1: usize,
    itinerary1: Itinerary,
    q: BigReal,
    j1: BigInterval,
    ball: BigInterval,
    y0x: BigReal,
    p_star: BigReal,
    max_log2_dalpha: f64,
}

impl Chain {
    fn negated(self) -> Chain {
        Chain {
            itinerary0: self.itinerary0.mirrored(),
            image_n0: self.image_n0.negate(),
            side: -self.side,
            k: self.k.negate(),
            j0: self.j0.negate(),
            itinerary1: self.itinerary1.mirrored(),
            q: -self.q,
            j1: self.j1.negate(),
            ball: self.ball.negate(),
            y0x: -self.y0x,
            p_star: -self.p_star,
            ..self
        }
    }

    /// Recomputes the center start so that it maps within `2^{log2_tol}` of
    /// `±p*`, always along the positive-side itinerary.
    fn retrace(&mut self, model: &Model, log2_tol: f64) -> Result<()> {
        let full = self.full_itinerary();
        let trace = if self.side > 0 {
            map1d::pullback_point(&self.p_star, &full, &model.map, log2_tol)?
        } else {
            let t = map1d::pullback_point(&-&self.p_star, &full.mirrored(), &model.map, log2_tol)?;
            t.into_iter().map(|x| -x).collect()
        };
        self.q = trace[self.n0].clone();
        self.y0x = trace[0].clone();
        Ok(())
    }

    fn full_itinerary(&self) -> Itinerary {
        self.itinerary0.concat(&self.itinerary1)
    }

    fn returns_to_tail(&self) -> usize {
        self.n0 + self.n1
    }

    fn formula_bits(&self, ln_inv_eps: f64) -> u32 {
        let l2 = ln_inv_eps / std::f64::consts::LN_2;
        let a = (self.sigma * l2).ceil();
        let b = (self.n0 as f64 * self.max_log2_dalpha).ceil().max(0.0);
        (a + b) as u32 + 64
    }
}

fn eps_ball(x0: &BigReal, eps: &BigReal) -> Result<BigInterval> {
    let bits = x0.precision_bits().max(eps.precision_bits())
        + ((x0.log2_abs() - eps.log2_abs()).max(0.0).ceil() as u32)
        + 8;
    let bits = clamp_bits(bits);
    let lo = x0.sub_round(eps, bits);
    let hi = x0.add_round(eps, bits);
    let one = BigReal::one(bits);
    let m_one = -&one;
    BigInterval::new(lo.max(&m_one).clone(), hi.min(&one).clone())
}

fn min_log2_abs(i: &BigInterval) -> f64 {
    i.lo().log2_abs().min(i.hi().log2_abs())
}

fn check_request(req: &WitnessRequest, model: &Model, mode: &Mode) -> Result<()> {
    model.validate()?;
    mode.validate()?;
    if req.n == 0 {
        return Err(Error::InvalidArgument("N must be a positive integer".into()));
    }
    if !(req.eps > 0.0 && req.eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps = {} must lie in (0, 1)", req.eps.to_f64())));
    }
    if req.x0.is_zero() {
        return Err(Error::InvalidArgument("x0 = 0 lies on the stable manifold".into()));
    }
    if !(req.x0 >= -1.0 && req.x0 <= 1.0) {
        return Err(Error::InvalidArgument("x0 must lie in [-1, 1]".into()));
    }
    if !(req.y.abs() <= 1.0) {
        return Err(Error::InvalidArgument("y must lie in [-1, 1]".into()));
    }
    Ok(())
}

fn derive_chain(req: &WitnessRequest, model: &Model, opts: &WitnessOptions, extra_bits: f64) -> Result<Chain> {
    let map = &model.map;
    let i = eps_ball(&req.x0, &req.eps)?;
    let n0r = map1d::smallest_n0(&i, map)?;
    let img = &n0r.images[n0r.n0];
    if img.hi().abs() >= img.lo().abs() {
        positive_chain(&n0r, req, model, opts, extra_bits)
    } else {
        let n0m = map1d::smallest_n0(&i.negate(), map)?;
        Ok(positive_chain(&n0m, req, model, opts, extra_bits)?.negated())
    }
}

/// The construction for an `n0`-image whose positive part is the larger.
fn positive_chain(
    n0r: &map1d::N0Result,
    req: &WitnessRequest,
    model: &Model,
    opts: &WitnessOptions,
    extra_bits: f64,
) -> Result<Chain> {
    let map = &model.map;
    let c = model.flow.outside_time_bound(&model.boxes);
    let ln_inv = -req.eps.ln_abs();
    let pre_laps = &n0r.images[..n0r.n0];
    let rhs = match opts.mode {
        Mode::Strict => strict_rhs(ln_inv, model, c),
        Mode::Relaxed { margin } => {
            let t_pre: f64 = pre_laps
                .iter()
                .map(|lap| model.flow.outside_time_from(min_log2_abs(lap), &model.boxes))
                .sum();
            (1.0 + margin) * model.flow.t_top(&model.boxes) + margin * t_pre
        }
    };
    let sigma = sigma_for(req.n, ln_inv, model, rhs);
    let top = BigReal::powf(2.0, -sigma * ln_inv / std::f64::consts::LN_2, 128);
    let k = BigInterval::new(top.mul_f64(0.5), top)?;
    let image_n0 = n0r.images[n0r.n0].clone();
    if !image_n0.contains_interval(&k) {
        return Err(Error::Construction("the n0-image does not cover [eps^sigma/2, eps^sigma]".into()));
    }
    let j0 = map1d::pullback_interval(&k, &n0r.itinerary, map)?;
    let p_star = map1d::find_period2(map, PSTAR_BITS);
    let pre = map1d::find_preimage_in(&p_star, &k, map, opts.n_max)?;
    let (j1, ball) = map1d::refine_j1(&pre, &p_star, &k, BALL_RADIUS, map)?;
    let full = n0r.itinerary.concat(&pre.itinerary);
    let trace = map1d::pullback_point(&p_star, &full, map, CENTER_LOG2_TOL - extra_bits)?;
    let max_log2_dalpha = pre_laps
        .iter()
        .map(|lap| map.log2_derivative(min_log2_abs(lap)))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Chain {
        sigma,
        c_used: c,
        n0: n0r.n0,
        itinerary0: n0r.itinerary.clone(),
        image_n0,
        side: 1,
        k,
        j0,
        n1: pre.n1,
        itinerary1: pre.itinerary,
        q: trace[n0r.n0].clone(),
        j1,
        ball,
        y0x: trace[0].clone(),
        p_star,
        max_log2_dalpha,
    })
}

/// Center orbit quantities.
struct CenterRun {
    orbit: HybridOrbit,
    tau0: f64,
    tau4: f64,
    tau1: f64,
    a0: f64,
    a1: f64,
    audit: Audit,
    snap_miss_log2: f64,
}

fn run_center(y0: &SigmaPoint, chain: &Chain, model: &Model, mode: &Mode) -> Result<CenterRun> {
    let at = chain.returns_to_tail();
    let orbit = build_orbit(
        y0,
        f64::INFINITY,
        model,
        &TailRule::SnapAt {
            at,
            target: chain.p_star.clone(),
            log2_tol: SNAP_LOG2_TOL,
        },
    )?;
    let fp = &model.flow;
    let snap_miss_log2 = (&orbit.crossings[at].point.x - &chain.p_star).log2_abs();
    let (t2, t3) = orbit_box_times(&orbit, chain.n0, model)?;
    let t1 = orbit.crossings[chain.n0].t;
    let tau4 = orbit
        .tail
        .as_ref()
        .map(|t| t.t_start)
        .ok_or_else(|| Error::Construction("center orbit has no tail".into()))?;
    let integ = GIntegrator::new(&orbit, fp, &model.boxes);
    let g4 = integ.integral(tau4)?;
    let tau1 = match mode {
        Mode::Strict => 5.0 * tau4,
        Mode::Relaxed { .. } => tau4.max(5.0 * g4),
    };
    let tau0 = t3;
    let a0 = integ.average(tau0)?;
    let a1 = integ.average(tau1)?;
    let in_box_01 = time_in_region(&orbit, fp, Region::PiEta, t1);
    let in_box_03 = time_in_region(&orbit, fp, Region::PiEta, t3);
    let tau01_outside = t1 - in_box_01;
    let tau12 = t2 - t1;
    let tau23 = t3 - t2;
    let factor = mode.factor();
    let audit = Audit {
        tau01_outside,
        tau12,
        tau23,
        tau03_in_box: in_box_03,
        ratio: t3 / in_box_03,
        factor,
        factor_holds: tau23 >= factor * (tau01_outside + tau12),
    };
    Ok(CenterRun {
        orbit,
        tau0,
        tau4,
        tau1,
        a0,
        a1,
        audit,
        snap_miss_log2,
    })
}

/// Top-face entry and side exit of `Π(η)` after crossing `k`.
fn orbit_box_times(orbit: &HybridOrbit, k: usize, model: &Model) -> Result<(f64, f64)> {
    let fp = &model.flow;
    let top = orbit.top_entry_time(k, fp);
    let side = orbit.side_exit_time(k, fp);
    match (top, side) {
        (Some(a), Some(b)) => {
            let t1 = orbit.crossings[k].t;
            let expect = fp.t_top(&model.boxes);
            if ((a - t1) - expect).abs() > 1e-9 * expect.max(1.0) {
                return Err(Error::Construction("descent does not enter through the top face".into()));
            }
            Ok((a, b))
        }
        _ => Err(Error::Construction(format!("the return after crossing {k} misses the box"))),
    }
}

/// Number of period-2 returns a shadowing ball must survive past `τ4`.
fn shadow_returns(tau4: f64, tau1: f64, model: &Model) -> usize {
    2 * ((tau1 - tau4).max(0.0) / (2.0 * model.flow.t_out)).ceil() as usize + 2
}

/// The unshrunk neighborhood in `x` and its kind.
fn max_neighborhood(
    chain: &Chain,
    style: NeighborhoodStyle,
    returns: usize,
    model: &Model,
) -> Result<(BigInterval, NeighborhoodKind)> {
    let map = &model.map;
    let (j1, kind) = match style {
        NeighborhoodStyle::Sampled => (chain.j1.clone(), NeighborhoodKind::Sampled),
        NeighborhoodStyle::Shadowing => {
            let first = if chain.side > 0 { Branch::Plus } else { Branch::Minus };
            let ball = map1d::pullback_interval(&chain.ball, &Itinerary::alternating(first, returns), map)?;
            let j1 = map1d::pullback_interval(&ball, &chain.itinerary1, map)?.intersect(&chain.k)?;
            (j1, NeighborhoodKind::Shadowing { returns, ball })
        }
    };
    let ux = map1d::pullback_interval(&j1, &chain.itinerary0, map)?;
    map1d::check_lap(&ux, &chain.full_itinerary(), map)?;
    Ok((ux, kind))
}

fn y_interval(y: f64, eps: &BigReal) -> Result<BigInterval> {
    let half = eps.mul_f64(0.5);
    let bits = clamp_bits(64 + (y.abs().log2() - half.log2_abs()).max(0.0).ceil() as u32);
    let yc = BigReal::from_f64(y, bits.max(64));
    let one = BigReal::one(bits);
    let m_one = -&one;
    BigInterval::new(
        yc.sub_round(&half, bits).max(&m_one).clone(),
        yc.add_round(&half, bits).min(&one).clone(),
    )
}

fn shrink(x: &BigInterval, y: &BigInterval, x_c: &BigReal, y_c: f64, k: u32) -> Result<(BigInterval, BigInterval)> {
    let yc = BigReal::from_f64(y_c, y.precision_bits().max(64));
    Ok((x.shrink_about(x_c, k)?, y.shrink_about(&yc, k)?))
}

fn sample_points(nb_x: &BigInterval, nb_y: &BigInterval) -> Vec<SigmaPoint> {
    let mut out = Vec::with_capacity(9);
    for fx in SAMPLE_FRACTIONS {
        for fy in SAMPLE_FRACTIONS {
            out.push(SigmaPoint::new(nb_x.lerp(fx), nb_y.lerp(fy).to_f64()));
        }
    }
    out
}

/// `(A(τ0), A(τ1))` along the orbit of a sample point.
fn run_sample(p: &SigmaPoint, kind: &NeighborhoodKind, at: usize, tau0: f64, tau1: f64, model: &Model) -> Result<(f64, f64)> {
    let orbit = match kind {
        NeighborhoodKind::Sampled => build_orbit(p, tau1, model, &TailRule::None)?,
        NeighborhoodKind::Shadowing { returns, ball } => build_orbit(
            p,
            f64::INFINITY,
            model,
            &TailRule::ShadowAt {
                at,
                ball: ball.clone(),
                returns: *returns,
            },
        )?,
    };
    let integ = GIntegrator::new(&orbit, &model.flow, &model.boxes);
    Ok((integ.average(tau0)?, integ.average(tau1)?))
}

fn run_samples(
    nb_x: &BigInterval,
    nb_y: &BigInterval,
    kind: &NeighborhoodKind,
    chain: &Chain,
    run: &CenterRun,
    model: &Model,
) -> Result<Vec<SampleRecord>> {
    let points = sample_points(nb_x, nb_y);
    par_map(&points, |p| run_sample(p, kind, chain.returns_to_tail(), run.tau0, run.tau1, model))
        .into_iter()
        .zip(points)
        .map(|(r, p)| {
            let (a0, a1) = r?;
            Ok(SampleRecord { x: p.x, y: p.y, a0, a1 })
        })
        .collect()
}

/// `f` over `items`, one scoped thread per item.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    std::thread::scope(|s| {
        let handles: Vec<_> = items.iter().map(|it| s.spawn(|| f(it))).collect();
        handles.into_iter().map(|h| h.join().expect("sample worker panicked")).collect()
    })
}

fn samples_pass(samples: &[SampleRecord]) -> bool {
    samples.iter().all(|s| s.a0 - s.a1 >= SAMPLE_GAP)
}

/// Chain, center orbit and unshrunk neighborhood. Shadowing neighborhoods are
/// far thinner than the default center accuracy, so the center is refined
/// until it lies well inside.
fn center_stage(
    req: &WitnessRequest,
    model: &Model,
    opts: &WitnessOptions,
    extra_bits: f64,
) -> Result<(Chain, CenterRun, BigInterval, NeighborhoodKind)> {
    let mut chain = derive_chain(req, model, opts, extra_bits)?;
    let mut run = run_center(&SigmaPoint::new(chain.y0x.clone(), req.y), &chain, model, &opts.mode)?;
    let returns = shadow_returns(run.tau4, run.tau1, model);
    let (ux, kind) = max_neighborhood(&chain, opts.style, returns, model)?;
    if let NeighborhoodKind::Shadowing { ball, .. } = &kind {
        let tol = ball.log2_width() - 32.0 - extra_bits;
        if tol < CENTER_LOG2_TOL - extra_bits {
            // the ball closes in on the true cycle, so the target must be
            // at least as sharp as the ball is thin
            let bits = clamp_bits((-tol) as u32 + 64).max(PSTAR_BITS);
            let p = map1d::find_period2(&model.map, bits);
            chain.p_star = if chain.side > 0 { p } else { -p };
            chain.retrace(model, tol)?;
            run = run_center(&SigmaPoint::new(chain.y0x.clone(), req.y), &chain, model, &opts.mode)?;
            if shadow_returns(run.tau4, run.tau1, model) != returns {
                return Err(Error::Construction("refined center changed the shadowing length".into()));
            }
        }
    }
    Ok((chain, run, ux, kind))
}

/// Runs the full construction for one `(x0, N, ε)`.
pub fn construct_witness(req: &WitnessRequest, model: &Model, opts: &WitnessOptions) -> Result<WitnessCertificate> {
    check_request(req, model, &opts.mode)?;
    let scale = opts.precision_scale.max(1);
    let mut stage = center_stage(req, model, opts, 0.0)?;
    if scale > 1 {
        let extra = (scale - 1) as f64 * stage.0.y0x.precision_bits() as f64;
        stage = center_stage(req, model, opts, extra)?;
    }
    let (chain, run, ux, kind) = stage;
    let y0 = SigmaPoint::new(chain.y0x.clone(), req.y);
    let i = eps_ball(&req.x0, &req.eps)?;
    if !(i.contains_interior(ux.lo()) && i.contains_interior(ux.hi())) {
        return Err(Error::Construction("neighborhood touches the boundary of the eps-ball".into()));
    }
    let uy = y_interval(req.y, &req.eps)?;
    let mut chosen = None;
    for k in 0..=MAX_SHRINK {
        let (nx, ny) = shrink(&ux, &uy, &chain.y0x, req.y, k)?;
        match run_samples(&nx, &ny, &kind, &chain, &run, model) {
            Ok(s) if samples_pass(&s) => {
                chosen = Some((k, nx, ny, s));
                break;
            }
            Ok(_) | Err(Error::GammaHit { .. }) | Err(Error::StableManifold { .. }) | Err(Error::Construction(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let (shrink_k, nx, ny, samples) =
        chosen.ok_or_else(|| Error::Construction(format!("samples keep failing after {MAX_SHRINK} halvings")))?;
    let ln_inv = -req.eps.ln_abs();
    let rule_bits = chain.y0x.precision_bits();
    let precision_bits = match opts.mode {
        Mode::Strict => rule_bits.max(chain.formula_bits(ln_inv)),
        Mode::Relaxed { .. } => rule_bits,
    };
    Ok(WitnessCertificate {
        schema: SCHEMA.into(),
        mode: opts.mode,
        model: *model,
        x0: req.x0.clone(),
        y_input: req.y,
        n: req.n,
        eps: req.eps.clone(),
        sigma: chain.sigma,
        n0: chain.n0,
        itinerary0: chain.itinerary0.clone(),
        image_n0: chain.image_n0.clone(),
        side: chain.side,
        j0: chain.j0.clone(),
        n1: chain.n1,
        itinerary1: chain.itinerary1.clone(),
        j1: chain.j1.clone(),
        q: chain.q.clone(),
        y0,
        neighborhood: Neighborhood {
            x: nx,
            y: ny,
            shrink: shrink_k,
            kind,
        },
        tau0: run.tau0,
        tau4: run.tau4,
        tau1: run.tau1,
        a0: run.a0,
        a1: run.a1,
        c_used: chain.c_used,
        precision_bits,
        audit: run.audit,
        samples,
    })
}

impl WitnessCertificate {
    pub fn request(&self) -> WitnessRequest {
        WitnessRequest {
            x0: self.x0.clone(),
            y: self.y_input,
            n: self.n,
            eps: self.eps.clone(),
        }
    }

    pub fn style(&self) -> NeighborhoodStyle {
        match self.neighborhood.kind {
            NeighborhoodKind::Sampled => NeighborhoodStyle::Sampled,
            NeighborhoodKind::Shadowing { .. } => NeighborhoodStyle::Shadowing,
        }
    }

    /// Center orbit of the certificate, rebuilt from `y0`.
    pub fn center_orbit(&self) -> Result<HybridOrbit> {
        build_orbit(
            &self.y0,
            f64::INFINITY,
            &self.model,
            &TailRule::SnapAt {
                at: self.n0 + self.n1,
                target: map1d::find_period2(&self.model.map, PSTAR_BITS.max(self.precision_bits))
                    .mul_f64(self.side as f64),
                log2_tol: SNAP_LOG2_TOL,
            },
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Largest disagreement between stored and recomputed values, including
    /// the distance of the tail crossing from `±p*`.
    pub residual: f64,
}

impl VerifyReport {
    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Default)]
struct Checks {
    list: Vec<Check>,
    residual: f64,
}

impl Checks {
    fn add(&mut self, name: &str, passed: bool, detail: impl Into<String>) -> bool {
        self.list.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
        passed
    }

    fn close(&mut self, name: &str, stored: f64, fresh: f64, tol: f64) -> bool {
        let d = (stored - fresh).abs();
        if d.is_finite() {
            self.residual = self.residual.max(d);
        }
        self.add(name, d <= tol, format!("stored {stored:.12e}, recomputed {fresh:.12e}"))
    }

    fn big(&mut self, name: &str, stored: &BigReal, fresh: &BigReal) -> bool {
        let ok = big_close(stored, fresh);
        self.add(name, ok, format!("stored {stored:.24}, recomputed {fresh:.24}"))
    }

    fn interval(&mut self, name: &str, stored: &BigInterval, fresh: &BigInterval) -> bool {
        let ok = big_close(stored.lo(), fresh.lo()) && big_close(stored.hi(), fresh.hi());
        self.add(name, ok, format!("stored {stored}, recomputed {fresh}"))
    }

    fn all_passed(&self) -> bool {
        self.list.iter().all(|c| c.passed)
    }
}

/// Agreement to the precision the coarser value carries.
fn big_close(a: &BigReal, b: &BigReal) -> bool {
    if a.is_zero() || b.is_zero() {
        return a.is_zero() && b.is_zero();
    }
    if a.signum() != b.signum() {
        return false;
    }
    let bits = a.precision_bits().min(b.precision_bits()).max(64);
    let d = a.sub_round(b, bits.max(a.precision_bits()).max(b.precision_bits()));
    d.is_zero() || d.log2_abs() - a.log2_abs() <= -((bits - 16) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    /// Re-derive the center at this multiple of the certificate precision.
    pub precision_scale: u32,
    pub n_max: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            precision_scale: 1,
            n_max: DEFAULT_N_MAX,
        }
    }
}

/// Re-derives every field of `cert` from `(x0, y, N, ε)` and the model,
/// rebuilds the center and sample orbits, and checks each inequality the
/// certificate claims.
pub fn verify_certificate(cert: &WitnessCertificate, model: &Model, vopts: &VerifyOptions) -> VerifyReport {
    let mut ck = Checks::default();
    verify_into(cert, model, vopts, &mut ck);
    VerifyReport {
        passed: ck.all_passed() && !ck.list.is_empty(),
        residual: ck.residual,
        checks: ck.list,
    }
}

fn verify_into(cert: &WitnessCertificate, model: &Model, vopts: &VerifyOptions, ck: &mut Checks) {
    let mode = cert.mode;
    ck.add("schema", cert.schema == SCHEMA, cert.schema.clone());
    ck.add("model parameters", cert.model == *model, format!("{:?}", cert.model));
    let req = cert.request();
    if let Err(e) = check_request(&req, model, &mode) {
        ck.add("request", false, e.to_string());
        return;
    }
    let c = model.flow.outside_time_bound(&model.boxes);
    ck.close("C_used", cert.c_used, c, 1e-12 * c);
    let ln_inv = -cert.eps.ln_abs();
    ck.add(
        "n0 <= 2 ln(1/eps)/ln 2",
        cert.n0 <= n0_bound_ln(ln_inv),
        format!("n0 = {}, bound {}", cert.n0, n0_bound_ln(ln_inv)),
    );
    ck.add("sigma >= 1", cert.sigma >= 1.0, format!("{}", cert.sigma));

    let opts = WitnessOptions {
        mode,
        style: cert.style(),
        n_max: vopts.n_max,
        precision_scale: 1,
    };
    let scale = vopts.precision_scale.max(1);
    let extra = (scale - 1) as f64 * cert.precision_bits as f64;
    let (chain, derived_run, ux, kind) = match center_stage(&req, model, &opts, extra) {
        Ok(v) => v,
        Err(e) => {
            ck.add("chain", false, e.to_string());
            return;
        }
    };
    ck.close("sigma", cert.sigma, chain.sigma, 1e-9 * chain.sigma);
    ck.add("n0", cert.n0 == chain.n0, format!("stored {}, recomputed {}", cert.n0, chain.n0));
    ck.add("itinerary0", cert.itinerary0 == chain.itinerary0, cert.itinerary0.to_string());
    ck.interval("image_n0", &cert.image_n0, &chain.image_n0);
    ck.add("side", cert.side == chain.side, format!("{}", cert.side));
    ck.interval("J0", &cert.j0, &chain.j0);
    ck.add("n1", cert.n1 == chain.n1, format!("stored {}, recomputed {}", cert.n1, chain.n1));
    ck.add("itinerary1", cert.itinerary1 == chain.itinerary1, cert.itinerary1.to_string());
    ck.interval("J1", &cert.j1, &chain.j1);
    ck.big("q", &cert.q, &chain.q);
    ck.big("y0.x", &cert.y0.x, &chain.y0x);
    ck.add("y0.y", cert.y0.y == cert.y_input, format!("{}", cert.y0.y));
    let derived_bits = {
        let rule = if scale > 1 {
            cert.precision_bits.min(chain.y0x.precision_bits())
        } else {
            chain.y0x.precision_bits()
        };
        match mode {
            Mode::Strict => rule.max(chain.formula_bits(ln_inv)),
            Mode::Relaxed { .. } => rule,
        }
    };
    let bits_ok = if scale > 1 {
        chain.y0x.precision_bits() >= cert.precision_bits
    } else {
        cert.precision_bits == derived_bits
    };
    ck.add(
        "precision_bits",
        bits_ok,
        format!("stored {}, recomputed {}", cert.precision_bits, derived_bits),
    );
    if !ck.all_passed() {
        return;
    }

    // The orbit is rebuilt from the stored start, or from the finer
    // re-derived one when more precision is requested.
    let run = if scale > 1 {
        derived_run
    } else {
        match run_center(&cert.y0, &chain, model, &mode) {
            Ok(r) => r,
            Err(e) => {
                ck.add("center orbit", false, e.to_string());
                return;
            }
        }
    };
    ck.residual = ck.residual.max(run.snap_miss_log2.exp2());
    ck.close("tau0 (side exit of the n0-th descent)", cert.tau0, run.tau0, VERIFY_TOL * run.tau0.max(1.0));
    ck.close("tau4 (tail start)", cert.tau4, run.tau4, VERIFY_TOL * run.tau4.max(1.0));
    ck.close("tau1 rule", cert.tau1, run.tau1, VERIFY_TOL * run.tau1.max(1.0));
    ck.close("A0", cert.a0, run.a0, VERIFY_TOL);
    ck.close("A1", cert.a1, run.a1, VERIFY_TOL);

    let integ = GIntegrator::new(&run.orbit, &model.flow, &model.boxes);
    let at = |t: f64| integ.average(t).unwrap_or(f64::NAN);
    let n = cert.n as f64;
    ck.add("tau0 >= N", cert.tau0 >= n, format!("tau0 = {}", cert.tau0));
    ck.add("tau1 >= N", cert.tau1 >= n, format!("tau1 = {}", cert.tau1));
    ck.add("tau1 > tau0", cert.tau1 > cert.tau0, format!("{} vs {}", cert.tau1, cert.tau0));
    let a_t0 = at(cert.tau0);
    let a_t1 = at(cert.tau1);
    ck.add(
        "A(tau0) >= A0 bound",
        a_t0 >= mode.a0_bound() - VERIFY_TOL,
        format!("A(tau0) = {a_t0:.12}, bound {:.6}", mode.a0_bound()),
    );
    ck.add(
        "A(tau1) <= 1/5",
        a_t1 <= mode.a1_bound() + VERIFY_TOL,
        format!("A(tau1) = {a_t1:.12}"),
    );
    ck.add(
        "center gap",
        a_t0 - a_t1 >= mode.center_gap() - VERIFY_TOL,
        format!("gap = {:.12}, bound {:.6}", a_t0 - a_t1, mode.center_gap()),
    );

    let a = &cert.audit;
    ck.close("audit tau01_outside", a.tau01_outside, run.audit.tau01_outside, VERIFY_TOL * a.tau01_outside.abs().max(1.0));
    ck.close("audit tau12", a.tau12, run.audit.tau12, VERIFY_TOL);
    ck.close("audit tau23", a.tau23, run.audit.tau23, VERIFY_TOL * a.tau23.abs().max(1.0));
    ck.close("audit tau03_in_box", a.tau03_in_box, run.audit.tau03_in_box, VERIFY_TOL * a.tau03_in_box.abs().max(1.0));
    ck.close("audit ratio", a.ratio, run.audit.ratio, VERIFY_TOL);
    ck.close("audit factor", a.factor, mode.factor(), 0.0);
    ck.add(
        "ratio bound",
        run.audit.ratio <= mode.ratio_bound() + VERIFY_TOL,
        format!("{:.9} vs {:.9}", run.audit.ratio, mode.ratio_bound()),
    );
    ck.add(
        "factor inequality",
        run.audit.factor_holds && a.factor_holds,
        format!(
            "tau23 = {:.6}, factor·(tau01_outside + tau12) = {:.6}",
            run.audit.tau23,
            mode.factor() * (run.audit.tau01_outside + run.audit.tau12)
        ),
    );

    let nb = &cert.neighborhood;
    ck.add("neighborhood kind", nb.kind == kind, format!("{:?}", nb.kind).chars().take(80).collect::<String>());
    let shaped = nb.shrink <= MAX_SHRINK
        && y_interval(cert.y_input, &cert.eps)
            .and_then(|uy| shrink(&ux, &uy, &chain.y0x, cert.y_input, nb.shrink))
            .map(|(x, y)| {
                big_close(x.lo(), nb.x.lo())
                    && big_close(x.hi(), nb.x.hi())
                    && big_close(y.lo(), nb.y.lo())
                    && big_close(y.hi(), nb.y.hi())
            })
            .unwrap_or(false);
    ck.add("neighborhood shape", shaped, format!("shrink = {}", nb.shrink));
    let inside = eps_ball(&cert.x0, &cert.eps)
        .map(|i| i.contains_interior(nb.x.lo()) && i.contains_interior(nb.x.hi()))
        .unwrap_or(false);
    ck.add("neighborhood inside the eps-ball", inside, format!("{}", nb.x));
    ck.add("neighborhood contains y0", nb.x.contains_interior(&cert.y0.x), String::new());
    if cert.samples.len() != 9 {
        ck.add("samples", false, format!("{} samples", cert.samples.len()));
        return;
    }
    let points = sample_points(&nb.x, &nb.y);
    let runs = par_map(&points, |p| run_sample(p, &nb.kind, chain.returns_to_tail(), cert.tau0, cert.tau1, model));
    for (i, ((p, s), r)) in points.iter().zip(&cert.samples).zip(runs).enumerate() {
        let same = big_close(&p.x, &s.x) && p.y == s.y;
        ck.add(&format!("sample {i} position"), same, String::new());
        match r {
            Ok((a0, a1)) => {
                ck.close(&format!("sample {i} A0"), s.a0, a0, VERIFY_TOL);
                ck.close(&format!("sample {i} A1"), s.a1, a1, VERIFY_TOL);
                ck.add(
                    &format!("sample {i} gap >= 1/2"),
                    a0 - a1 >= SAMPLE_GAP - VERIFY_TOL,
                    format!("gap = {:.9}", a0 - a1),
                );
            }
            Err(e) => {
                ck.add(&format!("sample {i} orbit"), false, e.to_string());
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepeningChain {
    pub schema: String,
    pub levels: Vec<WitnessCertificate>,
}

impl DeepeningChain {
    /// Strict nesting of the neighborhoods and growth of `N`.
    pub fn is_nested(&self) -> bool {
        self.levels.windows(2).all(|w| {
            w[0].neighborhood.contains(&w[1].neighborhood)
                && w[0].neighborhood != w[1].neighborhood
                && w[1].n > w[0].n
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeepenOptions {
    /// Mode of every level after the first.
    pub deep_mode: Mode,
    pub n_max: usize,
}

impl Default for DeepenOptions {
    fn default() -> Self {
        DeepenOptions {
            deep_mode: Mode::Relaxed { margin: 3.0 },
            n_max: DEFAULT_N_MAX,
        }
    }
}

/// Request for the level after `cert`: center of its neighborhood, `N`
/// doubled, `ε` half the neighborhood radius.
pub fn next_level_request(cert: &WitnessCertificate) -> WitnessRequest {
    let c = cert.neighborhood.center();
    WitnessRequest {
        x0: c.x,
        y: c.y,
        n: cert.n * 2,
        eps: cert.neighborhood.radius().mul_f64(0.5),
    }
}

/// Nested chain of `levels` certificates starting from `seed`. Every level
/// except the last uses a shadowing neighborhood so that the next level's
/// orbits inherit the earlier oscillations.
pub fn deepen(seed: &WitnessCertificate, levels: usize, model: &Model, dopts: &DeepenOptions) -> Result<DeepeningChain> {
    if levels == 0 {
        return Err(Error::InvalidArgument("levels must be at least 1".into()));
    }
    let mut out = DeepeningChain {
        schema: SCHEMA.into(),
        levels: Vec::with_capacity(levels),
    };
    if levels == 1 {
        out.levels.push(seed.clone());
        return Ok(out);
    }
    let style_for = |k: usize| {
        if k + 1 < levels {
            NeighborhoodStyle::Shadowing
        } else {
            NeighborhoodStyle::Sampled
        }
    };
    let first = WitnessOptions {
        mode: seed.mode,
        style: style_for(0),
        n_max: dopts.n_max,
        precision_scale: 1,
    };
    let achieved = |e: Error, k: usize| match e {
        Error::PrecisionExhausted { required, cap, .. } => Error::PrecisionExhausted {
            required,
            cap,
            achieved: k,
        },
        other => other,
    };
    out.levels
        .push(construct_witness(&seed.request(), model, &first).map_err(|e| achieved(e, 0))?);
    for k in 1..levels {
        let req = next_level_request(&out.levels[k - 1]);
        let opts = WitnessOptions {
            mode: dopts.deep_mode,
            style: style_for(k),
            n_max: dopts.n_max,
            precision_scale: 1,
        };
        let cert = construct_witness(&req, model, &opts).map_err(|e| achieved(e, k))?;
        out.levels.push(cert);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverEntry {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub certificate: Option<WitnessCertificate>,
    pub verified: bool,
    /// `|center − x|` of the certificate neighborhood.
    pub center_distance: Option<f64>,
    pub error: Option<String>,
}

/// Grid abscissae `−1 + (2i+1)/grid_x`, with 0 moved off `Γ`.
pub fn cover_grid(grid_x: usize) -> Vec<f64> {
    (0..grid_x)
        .map(|i| {
            let x = -1.0 + (2 * i + 1) as f64 / grid_x as f64;
            if x == 0.0 {
                0.5 / grid_x as f64
            } else {
                x
            }
        })
        .collect()
}

/// One strict certificate with `ε = 1/(m+1)` per grid point, each verified.
/// Failures are recorded per point.
pub fn dense_cover(n: u64, m: u64, grid_x: usize, model: &Model) -> Result<Vec<CoverEntry>> {
    if grid_x == 0 {
        return Err(Error::InvalidArgument("grid must have at least one point".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    let eps = 1.0 / (m + 1) as f64;
    let xs = cover_grid(grid_x);
    let one = |index: usize, x: f64| -> CoverEntry {
        let req = WitnessRequest::new(x, n, eps);
        match construct_witness(&req, model, &WitnessOptions::default()) {
            Ok(cert) => {
                let report = verify_certificate(&cert, model, &VerifyOptions::default());
                let d = (cert.neighborhood.center().x.to_f64() - x).abs();
                CoverEntry {
                    index,
                    x,
                    y: 0.0,
                    verified: report.passed,
                    center_distance: Some(d),
                    error: (!report.passed).then(|| {
                        report
                            .failures()
                            .iter()
                            .map(|c| c.name.clone())
                            .collect::<Vec<_>>()
                            .join(", ")
                    }),
                    certificate: Some(cert),
                }
            }
            Err(e) => CoverEntry {
                index,
                x,
                y: 0.0,
                certificate: None,
                verified: false,
                center_distance: None,
                error: Some(e.to_string()),
            },
        }
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(xs.len());
    let mut entries: Vec<CoverEntry> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let xs = &xs;
                let one = &one;
                s.spawn(move || {
                    (w..xs.len())
                        .step_by(workers)
                        .map(|i| one(i, xs[i]))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("cover worker panicked")).collect()
    });
    entries.sort_by_key(|e| e.index);
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_defaults() {
        let m = Model::default();
        let c = m.flow.outside_time_bound(&m.boxes);
        let s = choose_sigma(10, 0.1, &m, c);
        assert!((s - 51.45).abs() < 0.05, "{s}");
    }

    #[test]
    fn mode_bounds() {
        assert_eq!(Mode::Strict.a0_bound(), 0.75);
        assert!((Mode::Strict.center_gap() - 0.55).abs() < 1e-15);
        assert!((Mode::Strict.ratio_bound() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn grid_avoids_gamma() {
        assert_eq!(cover_grid(1), vec![0.5]);
        assert!(cover_grid(10).iter().all(|&x| x != 0.0));
    }
}
