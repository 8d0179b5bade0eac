//! Time integrals of `g` along hybrid orbits and the running average
//! `A(t) = (1/t)∫₀ᵗ g`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{tent, BoxSpec};
use crate::semiflow::{FlowParams, HybridOrbit, Segment, State3};

/// Absolute tolerance of the adaptive quadrature on each smooth piece.
pub const QUAD_TOL: f64 = 1e-10;
const MAX_DEPTH: u32 = 48;

/// `g` along a linear segment, as a function of time since the entry.
#[derive(Clone, Copy, Debug)]
struct Descent {
    ln_x: f64,
    y: f64,
    ln_z: f64,
    lambda: f64,
    mu: f64,
    nu: f64,
    eta: f64,
}

impl Descent {
    fn new(entry: &State3, fp: &FlowParams, eta: f64) -> Self {
        Descent {
            ln_x: entry.x.ln_abs(),
            y: entry.y.abs(),
            ln_z: entry.z.max(0.0).ln(),
            lambda: fp.lambda,
            mu: fp.mu,
            nu: fp.nu,
            eta,
        }
    }

    fn factors(&self, t: f64) -> [f64; 3] {
        [
            tent((self.ln_x + self.lambda * t).exp() / self.eta),
            tent(self.y * (-self.mu * t).exp() / self.eta),
            tent((self.ln_z - self.nu * t).exp() / self.eta),
        ]
    }

    fn g(&self, t: f64) -> f64 {
        let [a, b, c] = self.factors(t);
        a * b * c
    }

    /// Times in `(0, d)` at which one of the three factors has a kink.
    fn kinks(&self, d: f64) -> Vec<f64> {
        let mut ks = Vec::with_capacity(6);
        for k in [1.0, 2.0] {
            let level = (k * self.eta).ln();
            ks.push((level - self.ln_x) / self.lambda);
            if self.y > 0.0 {
                ks.push((self.y.ln() - level) / self.mu);
            }
            ks.push((self.ln_z - level) / self.nu);
        }
        ks.retain(|&t| t > 0.0 && t < d);
        ks.sort_by(f64::total_cmp);
        ks.dedup();
        ks
    }

    /// `∫₀^d g`.
    fn integral(&self, d: f64) -> f64 {
        if d <= 0.0 {
            return 0.0;
        }
        let mut cuts = vec![0.0];
        cuts.extend(self.kinks(d));
        cuts.push(d);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let f = self.factors(0.5 * (a + b));
            if f.contains(&0.0) {
                continue;
            }
            if f.iter().all(|&v| v == 1.0) {
                total += b - a;
                continue;
            }
            total += adaptive_simpson(&|t| self.g(t), a, b, QUAD_TOL);
        }
        total
    }
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Prefix integrals of `g` over the linear segments of one orbit.
pub struct GIntegrator<'a> {
    orbit: &'a HybridOrbit,
    /// `(t_start, duration, ∫ before this segment, descent)`.
    pieces: Vec<(f64, f64, f64, Descent)>,
    total: f64,
}

impl<'a> GIntegrator<'a> {
    pub fn new(orbit: &'a HybridOrbit, fp: &FlowParams, b: &BoxSpec) -> Self {
        let mut pieces = Vec::new();
        let mut acc = 0.0;
        for seg in &orbit.segments {
            if let Segment::Linear {
                t_start,
                duration,
                entry,
            } = seg
            {
                let d = Descent::new(entry, fp, b.eta);
                // |x| only grows, so g vanishes unless the entry is inside 2η
                if d.ln_x < (2.0 * b.eta).ln() {
                    pieces.push((*t_start, *duration, acc, d));
                    acc += d.integral(*duration);
                }
            }
        }
        GIntegrator {
            orbit,
            pieces,
            total: acc,
        }
    }

    /// `∫₀ᵗ g`.
    pub fn integral(&self, t: f64) -> Result<f64> {
        if t > self.orbit.horizon * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::Horizon {
                t,
                horizon: self.orbit.horizon,
            });
        }
        if t <= 0.0 {
            return Ok(0.0);
        }
        let i = self.pieces.partition_point(|p| p.0 < t);
        if i == 0 {
            return Ok(0.0);
        }
        let (start, dur, before, d) = &self.pieces[i - 1];
        let into = t - start;
        Ok(if into >= *dur {
            before + d.integral(*dur)
        } else {
            before + d.integral(into)
        })
    }

    /// `∫₀ᵗ g / t`.
    pub fn average(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument("time average needs t > 0".into()));
        }
        Ok((self.integral(t)? / t).clamp(0.0, 1.0))
    }

    /// Integral over all explicit segments.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// Kink times of the `g` profile on every contributing segment.
    pub fn kink_times(&self) -> Vec<f64> {
        self.pieces
            .iter()
            .flat_map(|(s, dur, _, d)| d.kinks(*dur).into_iter().map(move |k| s + k))
            .collect()
    }
}

pub fn integrate_g(orbit: &HybridOrbit, t: f64, fp: &FlowParams, b: &BoxSpec) -> Result<f64> {
    GIntegrator::new(orbit, fp, b).integral(t)
}

pub fn time_average(orbit: &HybridOrbit, t: f64, fp: &FlowParams, b: &BoxSpec) -> Result<f64> {
    GIntegrator::new(orbit, fp, b).average(t)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeAverageSeries {
    pub samples: Vec<(f64, f64)>,
}

impl TimeAverageSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn end(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.0)
    }

    /// Linear interpolation of `A·t`, which is exact on flat stretches.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let i = self.samples.partition_point(|s| s.0 < t);
        let (t1, a1) = *self.samples.get(i)?;
        if t1 == t || i == 0 {
            return (t1 == t).then_some(a1);
        }
        let (t0, a0) = self.samples[i - 1];
        let w = (t - t0) / (t1 - t0);
        Some(((1.0 - w) * a0 * t0 + w * a1 * t1) / t)
    }
}

/// End of the default series window: the requested horizon, or five times the
/// tail start behind an exact tail.
pub fn default_series_end(orbit: &HybridOrbit) -> f64 {
    if orbit.requested.is_finite() {
        orbit.requested.min(orbit.horizon)
    } else if let Some(tail) = &orbit.tail {
        (5.0 * tail.t_start).min(tail.end())
    } else {
        orbit.horizon
    }
}

pub fn average_series(orbit: &HybridOrbit, grid: usize, fp: &FlowParams, b: &BoxSpec) -> Result<TimeAverageSeries> {
    average_series_until(orbit, grid, fp, b, default_series_end(orbit))
}

/// Samples at all event times and kinks in `(0, end]`, at `end` and on a
/// uniform grid of `grid` points over `(0, end]`.
pub fn average_series_until(
    orbit: &HybridOrbit,
    grid: usize,
    fp: &FlowParams,
    b: &BoxSpec,
    end: f64,
) -> Result<TimeAverageSeries> {
    let integ = GIntegrator::new(orbit, fp, b);
    let mut times: Vec<f64> = orbit.events(fp).into_iter().map(|e| e.t).collect();
    times.extend(orbit.segments.iter().map(|s| s.t_end()));
    times.extend(integ.kink_times());
    if end > 0.0 {
        times.push(end);
        times.extend((1..=grid).map(|i| end * i as f64 / grid as f64));
    }
    times.retain(|&t| t > 0.0 && t <= end);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let samples = times
        .into_iter()
        .map(|t| integ.average(t).map(|a| (t, a)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TimeAverageSeries { samples })
}

/// The first pair of sample times `τ₀, τ₁ ≥ tau` (in order of the later one)
/// with `|A(τ₀) − A(τ₁)| ≥ delta`.
pub fn detect_historic(series: &TimeAverageSeries, tau: f64, delta: f64) -> Option<(f64, f64)> {
    let mut it = series.samples.iter().filter(|s| s.0 >= tau);
    let first = *it.next()?;
    let (mut lo, mut hi) = (first, first);
    for &(t, a) in it {
        if hi.1 - a >= delta {
            return Some((hi.0, t));
        }
        if a - lo.1 >= delta {
            return Some((lo.0, t));
        }
        if a > hi.1 {
            hi = (t, a);
        }
        if a < lo.1 {
            lo = (t, a);
        }
    }
    None
}

/// Length of the longest subsequence alternating between `A ≥ high` and
/// `A ≤ low`, and the number of high and low visits in it.
pub fn alternations(series: &TimeAverageSeries, high: f64, low: f64) -> (usize, usize) {
    let mut state = 0i8;
    let (mut h, mut l) = (0, 0);
    for &(_, a) in &series.samples {
        if a >= high && state != 1 {
            state = 1;
            h += 1;
        } else if a <= low && state != -1 {
            state = -1;
            l += 1;
        }
    }
    (h, l)
}

pub fn write_series_csv<W: Write>(w: &mut W, series: &TimeAverageSeries, header: &[String]) -> io::Result<()> {
    for line in header {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "t,A")?;
    for (t, a) in &series.samples {
        writeln!(w, "{t:.16e},{a:.16e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomial() {
        let v = adaptive_simpson(&|t| t * t * t, 0.0, 2.0, 1e-12);
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_exponential() {
        let v = adaptive_simpson(&|t: f64| (-3.0 * t).exp(), 0.0, 5.0, 1e-12);
        assert!((v - (1.0 - (-15f64).exp()) / 3.0).abs() < 1e-11);
    }

    #[test]
    fn detect_on_constant_series() {
        let s = TimeAverageSeries {
            samples: (1..10).map(|i| (i as f64, 0.3)).collect(),
        };
        assert_eq!(detect_historic(&s, 0.0, 0.1), None);
        assert_eq!(detect_historic(&s, 0.0, 0.0), Some((1.0, 2.0)));
    }
}
