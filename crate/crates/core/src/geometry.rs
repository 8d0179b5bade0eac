//! The return map `L = (α, β)` on the section `Σ = [-1, 1]²`, the boxes
//! `Π(η) = [−η, η]² × [0, η]` around the saddle, and the observable `g`.

use serde::{Deserialize, Serialize};

use crate::bigreal::BigReal;
use crate::error::{Error, Result};
use crate::map1d::{self, MapParams};
use crate::semiflow::{FlowParams, State3};

/// A point on the section `z = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaPoint {
    pub x: BigReal,
    pub y: f64,
}

impl SigmaPoint {
    pub fn new(x: BigReal, y: f64) -> Self {
        SigmaPoint { x, y }
    }

    pub fn from_f64(x: f64, y: f64, precision_bits: u32) -> Self {
        SigmaPoint {
            x: BigReal::from_f64(x, precision_bits),
            y,
        }
    }

    pub fn negate(&self) -> Self {
        SigmaPoint {
            x: -&self.x,
            y: -self.y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub eta: f64,
}

impl Default for BoxSpec {
    fn default() -> Self {
        BoxSpec { eta: 0.04 }
    }
}

impl BoxSpec {
    pub fn validate(&self, map: &MapParams, flow: &FlowParams) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::InvalidParams(format!("eta = {} must be positive", self.eta)));
        }
        if 2.0 * self.eta > flow.x_side {
            return Err(Error::InvalidParams(format!(
                "2·eta = {} exceeds the slab half-width {}",
                2.0 * self.eta,
                flow.x_side
            )));
        }
        let p_star = map1d::find_period2(map, 64).to_f64();
        if 2.0 * self.eta >= p_star {
            return Err(Error::InvalidParams(format!(
                "2·eta = {} must stay below the period-2 point {p_star:.6}",
                2.0 * self.eta
            )));
        }
        Ok(())
    }
}

/// `β(x, y) = |x|^s·y/4 + sign(x)·(1 − |x|^s)/2`.
pub fn eval_beta(x: &BigReal, y: f64, s: f64) -> Result<f64> {
    eval_beta_with(x, y, s, 0.25)
}

/// `β` with a custom contraction factor in place of `1/4`.
pub fn eval_beta_with(x: &BigReal, y: f64, s: f64, y_factor: f64) -> Result<f64> {
    if x.is_zero() {
        return Err(Error::Domain);
    }
    let a = (s * x.log2_abs()).exp2();
    let sign = x.signum() as f64;
    Ok(a * y * y_factor + sign * (1.0 - a) / 2.0)
}

/// `L(x, y) = (α(x), β(x, y))`. The new `x` keeps the information carried
/// by the old one (see [`map1d::step`]).
pub fn return_map(z: &SigmaPoint, map: &MapParams, flow: &FlowParams) -> Result<SigmaPoint> {
    if z.x.is_zero() {
        return Err(Error::Domain);
    }
    let x = map1d::step(&z.x, map).ok_or(Error::StableManifold { step: 1 })?;
    let y = eval_beta(&z.x, z.y, flow.s())?;
    Ok(SigmaPoint { x, y })
}

/// Gap between the two cusp slices over the common abscissa `u`:
/// `inf β(x₊, ·) − sup β(x₋, ·)` where `α(x₊) = α(x₋) = u`, `x₊ > 0 > x₋`.
pub fn cusp_margin_at(u: f64, map: &MapParams, s: f64, y_factor: f64) -> f64 {
    let opc = 1.0 + map.c;
    let xp = ((1.0 + u) / opc).powf(1.0 / map.rho);
    let xm = ((1.0 - u) / opc).powf(1.0 / map.rho);
    let a = xp.powf(s);
    let b = xm.powf(s);
    let inf_plus = (1.0 - a) / 2.0 - a * y_factor;
    let sup_minus = -(1.0 - b) / 2.0 + b * y_factor;
    inf_plus - sup_minus
}

/// Minimum of [`cusp_margin_at`] over `grid` abscissae spanning `[−c, c]`.
pub fn cusp_disjointness_margin(map: &MapParams, s: f64, y_factor: f64, grid: usize) -> f64 {
    let n = grid.max(2);
    (0..n)
        .map(|j| -map.c + 2.0 * map.c * j as f64 / (n - 1) as f64)
        .map(|u| cusp_margin_at(u, map, s, y_factor))
        .fold(f64::INFINITY, f64::min)
}

/// Tent profile: 1 on `[0, 1]`, `2 − t` on `(1, 2)`, 0 beyond.
pub fn tent(t: f64) -> f64 {
    if t <= 1.0 {
        1.0
    } else if t < 2.0 {
        2.0 - t
    } else {
        0.0
    }
}

/// `g = w(|x|/η)·w(|y|/η)·w(z/η)`. States below the section plane `z < 0`
/// do not occur in the model and are given the value of `z = 0`.
pub fn observable_g(s: &State3, b: &BoxSpec) -> f64 {
    let ax = (s.x.log2_abs()).exp2();
    tent(ax / b.eta) * tent(s.y.abs() / b.eta) * tent(s.z.max(0.0) / b.eta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxRegion {
    InsidePiEta,
    InsidePi2EtaOnly,
    Outside,
}

pub fn box_membership(s: &State3, b: &BoxSpec) -> BoxRegion {
    let ax = (s.x.log2_abs()).exp2();
    let inside = |k: f64| ax <= k * b.eta && s.y.abs() <= k * b.eta && s.z >= 0.0 && s.z <= k * b.eta;
    if inside(1.0) {
        BoxRegion::InsidePiEta
    } else if inside(2.0) {
        BoxRegion::InsidePi2EtaOnly
    } else {
        BoxRegion::Outside
    }
}
