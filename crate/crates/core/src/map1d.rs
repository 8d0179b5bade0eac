//! The one-dimensional Lorenz map
//! `α(x) = sign(x)·((1+c)|x|^ρ − 1)` on `[-1, 1] \ {0}`.
//!
//! Points carry their own precision. Forward steps keep the number of
//! meaningful bits (relative to the value's magnitude) and drop what the
//! expansion destroys; backward steps add what the contraction creates.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::Float;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bigreal::{clamp_bits, BigInterval, BigReal, MAX_BITS, MIN_BITS};
use crate::error::{Error, Result};

/// Extra bits carried through intermediate evaluations.
const WORK_GUARD: u32 = 16;
/// Bits kept beyond `log2(|x| / width)` for interval endpoints.
const INTERVAL_GUARD: u32 = 64;
/// Fewer surviving bits than this and the image is indistinguishable from 0.
const ZERO_BITS: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapParams {
    pub rho: f64,
    pub c: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        MapParams { rho: 0.75, c: 0.95 }
    }
}

impl MapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.5 && self.rho < 1.0) {
            return Err(Error::InvalidParams(format!("rho = {} not in (0.5, 1)", self.rho)));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::InvalidParams(format!("c = {} not in (0, 1)", self.c)));
        }
        if (1.0 + self.c) * self.rho <= std::f64::consts::SQRT_2 {
            return Err(Error::InvalidParams(format!(
                "(1+c)·rho = {} must exceed sqrt 2",
                (1.0 + self.c) * self.rho
            )));
        }
        Ok(())
    }

    /// `1 + c`, exact.
    fn one_plus_c(&self) -> Float {
        Float::with_val(64, self.c) + 1u32
    }

    fn c_float(&self) -> Float {
        Float::with_val(53, self.c)
    }

    /// `log2 |x·α'(x)|` from `log2 |x|`.
    fn log2_x_dalpha(&self, log2_x: f64) -> f64 {
        ((1.0 + self.c) * self.rho).log2() + self.rho * log2_x
    }

    /// `log2 α'(x)` from `log2 |x|`.
    pub fn log2_derivative(&self, log2_x: f64) -> f64 {
        ((1.0 + self.c) * self.rho).log2() + (self.rho - 1.0) * log2_x
    }

    fn is_three_quarters(&self) -> bool {
        self.rho == 0.75
    }
}

/// Branch label of a point: `Plus` for `x > 0`, `Minus` for `x < 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn of(x: &BigReal) -> Option<Branch> {
        match x.signum() {
            1 => Some(Branch::Plus),
            -1 => Some(Branch::Minus),
            _ => None,
        }
    }

    pub fn sign(self) -> i32 {
        match self {
            Branch::Plus => 1,
            Branch::Minus => -1,
        }
    }

    pub fn flip(self) -> Branch {
        match self {
            Branch::Plus => Branch::Minus,
            Branch::Minus => Branch::Plus,
        }
    }

    fn symbol(self) -> char {
        match self {
            Branch::Plus => '+',
            Branch::Minus => '-',
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Branch labels along an orbit, one per applied step.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Itinerary(pub Vec<Branch>);

impl Itinerary {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &Itinerary) -> Itinerary {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Itinerary(v)
    }

    pub fn mirrored(&self) -> Itinerary {
        Itinerary(self.0.iter().map(|b| b.flip()).collect())
    }

    /// `+,−,+,−,…` of length `n` starting with `first`.
    pub fn alternating(first: Branch, n: usize) -> Itinerary {
        Itinerary((0..n).map(|i| if i % 2 == 0 { first } else { first.flip() }).collect())
    }
}

impl fmt::Display for Itinerary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Itinerary {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|ch| match ch {
                '+' => Ok(Branch::Plus),
                '-' => Ok(Branch::Minus),
                other => Err(Error::Parse(format!("bad itinerary symbol {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Itinerary)
    }
}

impl Serialize for Itinerary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Itinerary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn pow_rho(u: &Float, p: &MapParams, w: u32) -> Float {
    if p.is_three_quarters() {
        let mut t = Float::with_val(w, u.square_ref());
        t *= u;
        t.sqrt_mut();
        t.sqrt_mut();
        t
    } else {
        let mut t = Float::with_val(w, u.ln_ref());
        t *= p.rho;
        t.exp_mut();
        t
    }
}

fn pow_inv_rho(u: &Float, p: &MapParams, w: u32) -> Float {
    if p.is_three_quarters() {
        let mut t = Float::with_val(w, u.square_ref());
        t.square_mut();
        t.cbrt_mut();
        t
    } else {
        let mut t = Float::with_val(w, u.ln_ref());
        t /= p.rho;
        t.exp_mut();
        t
    }
}

/// `α(x)` evaluated at working precision `w`, not yet rounded.
fn alpha_work(x: &BigReal, p: &MapParams, w: u32) -> Float {
    let ax = Float::with_val(x.precision_bits(), x.inner().abs_ref());
    let mut r = pow_rho(&ax, p, w);
    r *= p.one_plus_c();
    r -= 1u32;
    if x.is_negative() {
        r = -r;
    }
    r
}

/// `α(x)` at the precision of `x`.
pub fn eval_alpha(x: &BigReal, p: &MapParams) -> Result<BigReal> {
    if x.is_zero() {
        return Err(Error::Domain);
    }
    let w = x.precision_bits() + WORK_GUARD + extra_bits(x, p);
    let r = alpha_work(x, p, w);
    Ok(BigReal::from_float(Float::with_val(x.precision_bits(), r)))
}

/// Bits lost to cancellation in `(1+c)|x|^ρ − 1` are recovered by
/// evaluating with this many extra bits.
fn extra_bits(x: &BigReal, p: &MapParams) -> u32 {
    let l = p.log2_x_dalpha(x.log2_abs());
    if l < 0.0 {
        (-l).ceil() as u32
    } else {
        0
    }
}

/// `α'(x) = (1+c)·ρ·|x|^{ρ−1}` at the precision of `x`.
pub fn alpha_derivative(x: &BigReal, p: &MapParams) -> Result<BigReal> {
    if x.is_zero() {
        return Err(Error::Domain);
    }
    let w = x.precision_bits() + WORK_GUARD;
    let ax = Float::with_val(w, x.inner().abs_ref());
    let mut t = pow_rho(&ax, p, w);
    t /= &ax;
    t *= p.one_plus_c();
    t *= p.rho;
    Ok(BigReal::from_float(Float::with_val(x.precision_bits(), t)))
}

/// One forward step with precision tracking. The result keeps the bits of
/// information the input carried, measured relative to its own magnitude.
pub fn step(x: &BigReal, p: &MapParams) -> Option<BigReal> {
    if x.is_zero() {
        return None;
    }
    let l = p.log2_x_dalpha(x.log2_abs());
    let p_in = x.precision_bits();
    let w = p_in + WORK_GUARD + if l < 0.0 { (-l).ceil() as u32 } else { 0 };
    let r = alpha_work(x, p, w);
    if r.is_zero() {
        return None;
    }
    let (m, e) = r.to_f64_exp();
    let log2_r = m.abs().log2() + e as f64;
    let bits = p_in as f64 + log2_r - l;
    if bits < ZERO_BITS {
        return None;
    }
    let out = (bits.ceil() as u32).clamp(MIN_BITS, w);
    Some(BigReal::from_float(Float::with_val(out, r)))
}

/// Image interval of the branch labelled `b`.
pub fn branch_image_contains(z: &BigReal, b: Branch, p: &MapParams) -> bool {
    let c = p.c_float();
    match b {
        Branch::Plus => *z.inner() > -1i32 && *z.inner() <= c,
        Branch::Minus => *z.inner() >= -c && *z.inner() < 1i32,
    }
}

fn range_error(z: &BigReal, b: Branch) -> Error {
    Error::Range {
        value: z.to_f64(),
        branch: b,
    }
}

/// `1 + s·z` where `s` is the branch sign, computed without cancellation.
fn one_plus_sz(z: &BigReal, b: Branch, w: u32) -> Float {
    match b {
        Branch::Plus => Float::with_val(w, z.inner() + 1u32),
        Branch::Minus => Float::with_val(w, 1u32 - z.inner()),
    }
}

fn inverse_work(z: &BigReal, b: Branch, p: &MapParams, out: u32) -> Result<BigReal> {
    if !branch_image_contains(z, b, p) {
        return Err(range_error(z, b));
    }
    let w = out + WORK_GUARD;
    let mut u = one_plus_sz(z, b, w);
    u /= p.one_plus_c();
    let mut x = pow_inv_rho(&u, p, w);
    if b == Branch::Minus {
        x = -x;
    }
    Ok(BigReal::from_float(Float::with_val(out, x)))
}

/// Preimage of `z` on the branch `b`, at the precision of `z`.
pub fn branch_inverse(z: &BigReal, b: Branch, p: &MapParams) -> Result<BigReal> {
    inverse_work(z, b, p, z.precision_bits())
}

/// `log2 |x|` of the `b`-branch preimage of `z`, in double precision.
fn log2_preimage(z: &BigReal, b: Branch, p: &MapParams) -> f64 {
    let u = BigReal::from_float(one_plus_sz(z, b, z.precision_bits().max(64) + 2));
    (u.log2_abs() - (1.0 + p.c).log2()) / p.rho
}

/// Forward orbit of length `n + 1` and its itinerary (length `n`).
pub fn iterate_with_itinerary(
    x: &BigReal,
    n: usize,
    p: &MapParams,
) -> Result<(Vec<BigReal>, Itinerary)> {
    let mut orbit = Vec::with_capacity(n + 1);
    let mut signs = Vec::with_capacity(n);
    orbit.push(x.clone());
    for k in 0..n {
        let cur = &orbit[k];
        let b = Branch::of(cur).ok_or(Error::StableManifold { step: k })?;
        let next = step(cur, p).ok_or(Error::StableManifold { step: k + 1 })?;
        signs.push(b);
        orbit.push(next);
    }
    Ok((orbit, Itinerary(signs)))
}

/// The positive point of the symmetric period-2 orbit, `α(p*) = −p*`.
pub fn find_period2(p: &MapParams, precision_bits: u32) -> BigReal {
    let opc = 1.0 + p.c;
    let f = |t: f64| opc * t.powf(p.rho) + t - 1.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert!(f(1.0) > 0.0 && f(1e-300) < 0.0, "no period-2 root in (0, 1)");

    let bits = clamp_bits(precision_bits);
    let w = bits + 32;
    let opc_f = p.one_plus_c();
    let mut t = Float::with_val(w, 0.5 * (lo + hi));
    for _ in 0..64 {
        let tr = pow_rho(&t, p, w);
        let mut g = Float::with_val(w, &tr * &opc_f);
        g += &t;
        g -= 1u32;
        // g' = (1+c)·ρ·t^{ρ−1} + 1
        let mut dg = Float::with_val(w, &tr * &opc_f);
        dg *= p.rho;
        dg /= &t;
        dg += 1u32;
        let delta = Float::with_val(w, &g / &dg);
        t -= &delta;
        if delta.is_zero() || delta.get_exp().unwrap_or(i32::MIN) < -(w as i32) + 2 {
            break;
        }
    }
    BigReal::from_float(Float::with_val(bits, t))
}

/// Forward image of an interval on which `α` is monotone, endpoints rounded
/// to the precision the image width warrants.
pub fn forward_interval(i: &BigInterval, p: &MapParams) -> Result<BigInterval> {
    let lo = image_point(i.lo(), p, i.precision_bits())?;
    let hi = image_point(i.hi(), p, i.precision_bits())?;
    trimmed(lo, hi)
}

fn image_point(x: &BigReal, p: &MapParams, bits: u32) -> Result<Float> {
    if x.is_zero() {
        return Err(Error::Domain);
    }
    let w = bits.max(x.precision_bits()) + WORK_GUARD + extra_bits(x, p);
    Ok(alpha_work(x, p, w))
}

fn trimmed(lo: Float, hi: Float) -> Result<BigInterval> {
    let lo = BigReal::from_float(lo);
    let hi = BigReal::from_float(hi);
    let width = lo.sub_round(&hi, lo.precision_bits().max(hi.precision_bits())).abs();
    let scale = lo.log2_abs().max(hi.log2_abs());
    let need = (scale - width.log2_abs()).ceil().max(0.0) as u32 + INTERVAL_GUARD;
    let bits = clamp_bits(need);
    BigInterval::new(lo.with_precision(bits), hi.with_precision(bits))
}

#[derive(Clone, Debug)]
pub struct N0Result {
    pub n0: usize,
    /// `images[k] = α^k(I)`, `k = 0..=n0`.
    pub images: Vec<BigInterval>,
    pub itinerary: Itinerary,
}

/// Smallest `n0` with `0 ∈ α^{n0}(I)`.
pub fn smallest_n0(i: &BigInterval, p: &MapParams) -> Result<N0Result> {
    let mut images = vec![i.clone()];
    let mut signs = Vec::new();
    loop {
        let cur = images.last().unwrap();
        let b = match cur.sign() {
            None => break,
            Some(1) => Branch::Plus,
            Some(_) => Branch::Minus,
        };
        if images.len() > 1_000_000 {
            return Err(Error::Construction("n0 search did not terminate".into()));
        }
        let next = forward_interval(cur, p)?;
        signs.push(b);
        images.push(next);
    }
    Ok(N0Result {
        n0: signs.len(),
        images,
        itinerary: Itinerary(signs),
    })
}

/// `⌈2·ln(ε⁻¹)/ln 2⌉`, the expansion bound on `n0` when `ℓ(I) = 2ε`.
pub fn n0_bound(eps: f64) -> usize {
    (2.0 * (1.0 / eps).ln() / std::f64::consts::LN_2).ceil() as usize
}

/// The subinterval of the lap described by `it` that `α^{|it|}` maps onto
/// `target`.
pub fn pullback_interval(
    target: &BigInterval,
    it: &Itinerary,
    p: &MapParams,
) -> Result<BigInterval> {
    let mut cur = target.clone();
    for &b in it.0.iter().rev() {
        for z in [cur.lo(), cur.hi()] {
            if !branch_image_contains(z, b, p) {
                return Err(range_error(z, b));
            }
        }
        // the inner endpoint has the largest derivative and the thinnest image
        let inner = match b {
            Branch::Plus => cur.lo(),
            Branch::Minus => cur.hi(),
        };
        let log2_inner = log2_preimage(inner, b, p);
        let outer = match b {
            Branch::Plus => cur.hi(),
            Branch::Minus => cur.lo(),
        };
        let log2_outer = log2_preimage(outer, b, p);
        let log2_w = cur.log2_width() - p.log2_derivative(log2_inner);
        let need = (log2_outer.max(log2_inner) - log2_w).ceil().max(0.0) as u64
            + INTERVAL_GUARD as u64;
        if need > MAX_BITS as u64 {
            return Err(Error::PrecisionExhausted {
                required: need,
                cap: MAX_BITS as u64,
                achieved: 0,
            });
        }
        let bits = clamp_bits(need as u32);
        let lo = inverse_work(cur.lo(), b, p, bits)?;
        let hi = inverse_work(cur.hi(), b, p, bits)?;
        cur = BigInterval::new(lo, hi)?;
    }
    Ok(cur)
}

/// Backward orbit of `z` along `it`: `trace[k]` is the point whose
/// `(|it| − k)`-th image is `z`, and `trace[|it|] = z`. Each point is held to
/// enough bits that its forward image lands within `2^{log2_tol}` of `z`.
pub fn pullback_point(
    z: &BigReal,
    it: &Itinerary,
    p: &MapParams,
    log2_tol: f64,
) -> Result<Vec<BigReal>> {
    let n = it.len();
    let mut trace = vec![z.clone(); n + 1];
    let mut tol = log2_tol;
    for k in (0..n).rev() {
        let b = it.0[k];
        let zk = &trace[k + 1];
        if !branch_image_contains(zk, b, p) {
            return Err(range_error(zk, b));
        }
        let log2_x = log2_preimage(zk, b, p);
        tol -= p.log2_derivative(log2_x);
        let need = (log2_x - tol).ceil().max(0.0) as u64 + WORK_GUARD as u64;
        if need > MAX_BITS as u64 {
            return Err(Error::PrecisionExhausted {
                required: need,
                cap: MAX_BITS as u64,
                achieved: n - k,
            });
        }
        trace[k] = inverse_work(zk, b, p, clamp_bits(need as u32))?;
    }
    Ok(trace)
}

/// A preimage of a target point inside an interval together with the lap it
/// was found on.
#[derive(Clone, Debug)]
pub struct Preimage {
    pub n1: usize,
    pub q: BigReal,
    pub itinerary: Itinerary,
    /// `α^{n1}` of the lap containing `q`.
    pub lap_image: BigInterval,
}

struct Lap {
    signs: Vec<Branch>,
    image: BigInterval,
}

/// Laps are split whenever their image straddles 0; the two pieces map onto
/// `[α(lo), 1]` and `[−1, α(hi)]`.
fn split_forward(lap: &Lap, p: &MapParams, out: &mut Vec<Lap>) -> Result<()> {
    let im = &lap.image;
    let with = |b: Branch| {
        let mut s = lap.signs.clone();
        s.push(b);
        s
    };
    if let Some(sg) = im.sign() {
        let b = if sg > 0 { Branch::Plus } else { Branch::Minus };
        out.push(Lap {
            signs: with(b),
            image: forward_interval(im, p)?,
        });
        return Ok(());
    }
    let bits = im.precision_bits();
    if im.lo().is_negative() {
        let a = image_point(im.lo(), p, bits)?;
        out.push(Lap {
            signs: with(Branch::Minus),
            image: trimmed(a, Float::with_val(bits, 1u32))?,
        });
    }
    if im.hi().is_positive() {
        let b = image_point(im.hi(), p, bits)?;
        out.push(Lap {
            signs: with(Branch::Plus),
            image: trimmed(Float::with_val(bits, -1i32), b)?,
        });
    }
    Ok(())
}

const MAX_LAPS: usize = 1 << 16;

/// Breadth-first search over the laps of `α^n` on `k` for the smallest
/// `n ≥ 1` whose image has `target` in its interior.
pub fn find_preimage_in(
    target: &BigReal,
    k: &BigInterval,
    p: &MapParams,
    n_max: usize,
) -> Result<Preimage> {
    if !(*target > -1.0 && *target < 1.0) {
        return Err(Error::InvalidArgument("target must lie in (-1, 1)".into()));
    }
    let mut laps = vec![Lap {
        signs: Vec::new(),
        image: k.clone(),
    }];
    for depth in 0..=n_max {
        if depth >= 1 {
            if let Some(lap) = laps.iter().find(|l| l.image.contains_interior(target)) {
                let itinerary = Itinerary(lap.signs.clone());
                let tol = -(target.precision_bits() as f64) + 8.0;
                let trace = pullback_point(target, &itinerary, p, tol)?;
                let q = trace[0].clone();
                if !k.contains_interior(&q) {
                    return Err(Error::Construction("preimage left the search interval".into()));
                }
                return Ok(Preimage {
                    n1: depth,
                    q,
                    itinerary,
                    lap_image: lap.image.clone(),
                });
            }
        }
        if depth == n_max {
            break;
        }
        let mut next = Vec::with_capacity(laps.len() + 1);
        for lap in &laps {
            split_forward(lap, p, &mut next)?;
        }
        if next.len() > MAX_LAPS {
            break;
        }
        laps = next;
    }
    Err(Error::PreimageNotFound { n_max })
}

/// `J1`: the pullback along the preimage's lap of a ball about the target,
/// intersected with `k`. The ball radius is at most `max_radius` and at most
/// half the distance from the target to the ends of the lap image.
pub fn refine_j1(
    pre: &Preimage,
    target: &BigReal,
    k: &BigInterval,
    max_radius: f64,
    p: &MapParams,
) -> Result<(BigInterval, BigInterval)> {
    let ball = target_ball(target, &pre.lap_image, max_radius)?;
    let j1 = pullback_interval(&ball, &pre.itinerary, p)?.intersect(k)?;
    if !j1.contains_interior(&pre.q) {
        return Err(Error::Degenerate("J1 does not contain q".into()));
    }
    check_lap(&j1, &pre.itinerary, p)?;
    Ok((j1, ball))
}

/// Ball about `target` inside `image`, radius at most `max_radius`.
pub fn target_ball(target: &BigReal, image: &BigInterval, max_radius: f64) -> Result<BigInterval> {
    let bits = target.precision_bits().max(image.precision_bits());
    let d_lo = target.sub_round(image.lo(), bits);
    let d_hi = image.hi().sub_round(target, bits);
    let half = d_lo.min(&d_hi).mul_f64(0.5);
    if !half.is_positive() {
        return Err(Error::Degenerate("target on the lap boundary".into()));
    }
    let cap = BigReal::from_f64(max_radius, bits);
    let r = half.min(&cap).clone();
    BigInterval::ball(target, &r)
}

/// Checks that the first `|it|` forward images of `j` stay on the branches
/// named by `it` (endpoint sign agreement).
pub fn check_lap(j: &BigInterval, it: &Itinerary, p: &MapParams) -> Result<()> {
    let mut cur = j.clone();
    for (step, &b) in it.0.iter().enumerate() {
        if cur.sign() != Some(b.sign()) {
            return Err(Error::StableManifold { step });
        }
        cur = forward_interval(&cur, p)?;
    }
    Ok(())
}

/// `(1/(n+1))·Σ_{i=0}^{n} h(α^i(x))`.
pub fn birkhoff_average<H: Fn(f64) -> f64>(
    x: &BigReal,
    h: H,
    n: usize,
    p: &MapParams,
) -> Result<f64> {
    let mut cur = x.clone();
    let mut sum = h(cur.to_f64());
    for k in 1..=n {
        cur = step(&cur, p).ok_or(Error::StableManifold { step: k })?;
        sum += h(cur.to_f64());
    }
    Ok(sum / (n as f64 + 1.0))
}

/// Double-precision `α`, for Monte Carlo statistics.
pub fn alpha_f64(x: f64, p: &MapParams) -> f64 {
    x.signum() * ((1.0 + p.c) * x.abs().powf(p.rho) - 1.0)
}

/// A long double-precision orbit from a seeded random start.
#[derive(Clone, Debug)]
pub struct GenericOrbit {
    pub points: Vec<f64>,
    /// Mean of `t²` along `points`.
    pub mean_sq: f64,
    pub seed: u64,
}

pub const GENERIC_SEED: u64 = 0x1f2e_3d4c;
pub const GENERIC_LEN: usize = 1_000_000;

/// Records `n` points after a burn-in of 1000 steps. Orbits that land on 0
/// are discarded and the start is redrawn.
pub fn generic_orbit(p: &MapParams, seed: u64, n: usize) -> GenericOrbit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'draw: loop {
        let mut x: f64 = rng.gen_range(-1.0..1.0);
        let mut points = Vec::with_capacity(n);
        for k in 0..(n + 1000) {
            if x == 0.0 {
                continue 'draw;
            }
            if k >= 1000 {
                points.push(x);
            }
            x = alpha_f64(x, p);
        }
        let mean_sq = points.iter().map(|t| t * t).sum::<f64>() / n.max(1) as f64;
        return GenericOrbit {
            points,
            mean_sq,
            seed,
        };
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Shadows the period-2 orbit.
    Periodic,
    /// Follows a recorded stretch of the generic orbit.
    Generic,
}

#[derive(Clone, Debug)]
pub struct HistoricPrefix {
    pub x0: BigReal,
    /// `partials[n]` is the average of `h` over the first `n + 1` points.
    pub partials: Vec<f64>,
    pub itinerary: Itinerary,
    /// `(kind, end)` where `end` is one past the block's last index.
    pub blocks: Vec<(BlockKind, usize)>,
    pub m_hat: f64,
    pub p_star_sq: f64,
    /// Each block is at least this many times longer than everything before it.
    pub dominance: usize,
    /// Index at which the orbit lands exactly on the period-2 point, if the
    /// last block is periodic.
    pub landing: Option<usize>,
}

const FIRST_BLOCK: usize = 32;
const PREFIX_MAX_BITS: u64 = 1 << 20;

/// Builds a point whose partial Birkhoff averages of `t²` swing between
/// `p*²` and the generic average `m̂`, alternating a period-2 block and a
/// recorded generic block `blocks` times in total.
pub fn historic_prefix_1d(delta: f64, blocks: usize, p: &MapParams) -> Result<HistoricPrefix> {
    p.validate()?;
    if blocks == 0 {
        return Err(Error::InvalidArgument("blocks must be at least 1".into()));
    }
    let generic = generic_orbit(p, GENERIC_SEED, GENERIC_LEN);
    let m_hat = generic.mean_sq;
    let p_star = find_period2(p, 128);
    let ps = p_star.to_f64();
    let p_star_sq = ps * ps;
    let gap = (m_hat - p_star_sq).abs();
    if !(delta > 0.0 && delta < gap) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, {gap:.6}) = (0, |p*² − m̂|)"
        )));
    }
    // a block of relative length F moves the partial to within gap/(1+F) of
    // its target; budget half of delta/4 for that
    let dominance = ((8.0 * gap / delta - 1.0).ceil() as usize).max(9);

    let mut lengths = vec![FIRST_BLOCK];
    for _ in 1..blocks {
        let prior: usize = lengths.iter().sum();
        lengths.push(dominance * prior);
    }
    let kinds: Vec<BlockKind> = (0..blocks)
        .map(|k| if k % 2 == 0 { BlockKind::Periodic } else { BlockKind::Generic })
        .collect();

    // bits needed ≈ one per expanding step that must be encoded in x0
    let encoded = |b: usize| -> u64 {
        let last_free = kinds[b - 1] == BlockKind::Periodic;
        let n: usize = lengths[..b].iter().sum::<usize>() - if last_free { lengths[b - 1] } else { 0 };
        n as u64 + 128
    };
    if encoded(blocks) > PREFIX_MAX_BITS {
        let achieved = (1..=blocks).take_while(|&b| encoded(b) <= PREFIX_MAX_BITS).count();
        return Err(Error::PrecisionExhausted {
            required: encoded(blocks),
            cap: PREFIX_MAX_BITS,
            achieved,
        });
    }

    // designed itinerary and the expected block sums
    let mut signs: Vec<Branch> = Vec::new();
    let mut expected_sum = 0.0;
    let mut generic_end: Option<f64> = None;
    for (k, (&kind, &len)) in kinds.iter().zip(&lengths).enumerate() {
        let last = k + 1 == blocks;
        match kind {
            BlockKind::Periodic => {
                expected_sum += len as f64 * p_star_sq;
                if !last {
                    signs.extend(Itinerary::alternating(Branch::Plus, len).0);
                }
            }
            BlockKind::Generic => {
                let before = signs.len() as f64;
                let first_allowed = |x: f64| match signs.last() {
                    Some(Branch::Minus) => x >= -p.c,
                    Some(Branch::Plus) => x <= p.c,
                    None => true,
                };
                let start = pick_segment(&generic.points, len, |seg_sum, first| {
                    if !first_allowed(first) {
                        return f64::INFINITY;
                    }
                    ((expected_sum + seg_sum) / (before + len as f64) - m_hat).abs()
                })
                .ok_or_else(|| Error::Construction("no admissible generic segment".into()))?;
                let seg = &generic.points[start..start + len];
                expected_sum += seg.iter().map(|t| t * t).sum::<f64>();
                signs.extend(seg.iter().map(|&t| if t > 0.0 { Branch::Plus } else { Branch::Minus }));
                generic_end = Some(generic.points[start + len]);
            }
        }
    }
    let itinerary = Itinerary(signs);
    let landing_on_period = kinds[blocks - 1] == BlockKind::Periodic;

    let tol = -96.0;
    let final_target = if landing_on_period {
        find_period2(p, 160)
    } else {
        BigReal::from_f64(generic_end.unwrap(), 160)
    };
    let trace = pullback_point(&final_target, &itinerary, p, tol)?;
    let x0 = trace[0].clone();

    // forward check of the designed itinerary, then the exact tail
    let total: usize = lengths.iter().sum();
    let (orbit, it_fwd) = iterate_with_itinerary(&x0, itinerary.len(), p)?;
    if it_fwd != itinerary {
        return Err(Error::Construction("forward orbit departs from the designed itinerary".into()));
    }
    let mut values: Vec<f64> = orbit.iter().map(|x| x.to_f64()).collect();
    if landing_on_period {
        values.pop();
        let n_tail = total - values.len();
        for j in 0..n_tail {
            values.push(if j % 2 == 0 { ps } else { -ps });
        }
    } else {
        values.pop();
    }
    let mut partials = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v * v;
        partials.push(sum / (i as f64 + 1.0));
    }
    let mut ends = Vec::new();
    let mut acc = 0;
    for (&kind, &len) in kinds.iter().zip(&lengths) {
        acc += len;
        ends.push((kind, acc));
    }
    Ok(HistoricPrefix {
        x0,
        partials,
        itinerary,
        blocks: ends,
        m_hat,
        p_star_sq,
        dominance,
        landing: landing_on_period.then_some(total - lengths[blocks - 1]),
    })
}

/// Start index of the length-`len` window of `points` minimizing `score`,
/// scanning a stride of starts after the first 1000 points.
fn pick_segment<F: Fn(f64, f64) -> f64>(points: &[f64], len: usize, score: F) -> Option<usize> {
    if points.len() < len + 1002 {
        return None;
    }
    let stride = 7;
    let mut prefix = Vec::with_capacity(points.len() + 1);
    prefix.push(0.0);
    for t in points {
        prefix.push(prefix.last().unwrap() + t * t);
    }
    let mut best: Option<(f64, usize)> = None;
    let mut s = 1000;
    while s + len < points.len() {
        let sc = score(prefix[s + len] - prefix[s], points[s]);
        if sc.is_finite() && best.is_none_or(|(b, _)| sc < b) {
            best = Some((sc, s));
        }
        s += stride;
    }
    best.map(|(_, s)| s)
}
