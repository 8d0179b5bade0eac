//! Acceptance criteria, run one after another so that the timings are not
//! distorted by other tests. Prints one line per criterion and exits with a
//! failure status if any criterion fails.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use lhw::averaging::{alternations, average_series_until};
use lhw::geometry::return_map;
use lhw::map1d::{eval_alpha, find_period2, historic_prefix_1d, n0_bound, smallest_n0, BlockKind};
use lhw::semiflow::{build_orbit, EventKind, TailRule};
use lhw::witness::*;
use lhw::{BigInterval, BigReal, Model, SigmaPoint, WitnessCertificate, WitnessRequest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

/// RK4 on the linear slab field from `(x, y, 1)`, with bisection inside the
/// step where the state enters `Π(η)`.
fn numeric_entry_time(x: f64, y: f64, m: &Model) -> f64 {
    let fp = &m.flow;
    let eta = m.boxes.eta;
    let f = |s: [f64; 3]| [fp.lambda * s[0], -fp.mu * s[1], -fp.nu * s[2]];
    let step = |s: [f64; 3], h: f64| {
        let add = |a: [f64; 3], b: [f64; 3], k: f64| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2]];
        let k1 = f(s);
        let k2 = f(add(s, k1, 0.5 * h));
        let k3 = f(add(s, k2, 0.5 * h));
        let k4 = f(add(s, k3, h));
        let mut out = s;
        for i in 0..3 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    };
    let outside = |s: [f64; 3]| s[0].abs().max(s[1].abs()).max(s[2]) > eta;
    let h = 1e-3;
    let (mut t, mut s) = (0.0, [x, y, 1.0]);
    while outside(step(s, h)) {
        s = step(s, h);
        t += h;
    }
    let (mut lo, mut hi) = (0.0, h);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if outside(step(s, mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    t + 0.5 * (lo + hi)
}

fn criterion_1(m: &Model) -> Outcome {
    let start = Instant::now();
    let closed = (1.0 / m.boxes.eta).ln() / m.flow.nu;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0f64;
    for _ in 0..100 {
        let lx: f64 = rng.gen_range(-40.0..-10.0);
        let x = if rng.gen_bool(0.5) { lx.exp2() } else { -lx.exp2() };
        let y: f64 = rng.gen_range(-1.0..1.0);
        let o = build_orbit(&SigmaPoint::from_f64(x, y, 128), closed + 1.0, m, &TailRule::None).unwrap();
        let t = o
            .events(&m.flow)
            .iter()
            .find(|e| e.kind == EventKind::TopFace(0))
            .expect("top-face event")
            .t;
        let numeric = numeric_entry_time(x, y, m);
        worst = worst.max((t - closed).abs()).max((numeric - closed).abs());
    }
    let el = start.elapsed();
    outcome(
        worst <= 1e-9 && within(el, Duration::from_secs(1)),
        format!("max |t_event − ln(1/η)/ν| = {worst:.2e} over 100 starts, {el:.2?}"),
    )
}

fn criterion_2(m: &Model) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_slack = i64::MAX;
    let mut bad = 0;
    for _ in 0..1000 {
        let eps: f64 = rng.gen_range(0.01..0.5);
        let x0: f64 = rng.gen_range(-1.0..1.0);
        let i = BigInterval::from_f64((x0 - eps).max(-1.0), (x0 + eps).min(1.0), 128).unwrap();
        let n0 = smallest_n0(&i, &m.map).unwrap().n0;
        let bound = n0_bound(eps);
        worst_slack = worst_slack.min(bound as i64 - n0 as i64);
        if n0 > bound {
            bad += 1;
        }
    }
    let el = start.elapsed();
    outcome(
        bad == 0 && within(el, Duration::from_secs(10)),
        format!("{bad} violations in 1000 draws, least slack {worst_slack}, {el:.2?}"),
    )
}

fn criterion_3(m: &Model) -> Outcome {
    let start = Instant::now();
    let bits = 256;
    let p = find_period2(&m.map, bits);
    let back = eval_alpha(&eval_alpha(&p, &m.map).unwrap(), &m.map).unwrap();
    let d = (&back - &p).abs();
    let log2_err = if d.is_zero() { f64::NEG_INFINITY } else { d.log2_abs() };
    let el = start.elapsed();
    let ok = log2_err <= -((bits - 8) as f64) && p > 2.0 * m.boxes.eta;
    outcome(
        ok && within(el, Duration::from_secs(1)),
        format!("p* = {}, |α²(p*) − p*| = 2^{log2_err:.1}, {el:.2?}", p.to_decimal_digits(22)),
    )
}

fn criterion_4(m: &Model) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0f64;
    let mut used = 0;
    while used < 100 {
        let x: f64 = rng.gen_range(-1.0..1.0);
        let y: f64 = rng.gen_range(-1.0..1.0);
        let z0 = SigmaPoint::from_f64(x, y, 128);
        let mut horizon = 40.0;
        let orbit = loop {
            match build_orbit(&z0, horizon, m, &TailRule::None) {
                Ok(o) if o.crossings.len() > 5 => break Some(o),
                Ok(_) => horizon *= 2.0,
                Err(_) => break None,
            }
        };
        let Some(orbit) = orbit else { continue };
        used += 1;
        let mut cur = z0;
        for c in orbit.crossings.iter().skip(1).take(5) {
            cur = return_map(&cur, &m.map, &m.flow).unwrap();
            worst = worst
                .max((&c.point.x - &cur.x).abs().to_f64())
                .max((c.point.y - cur.y).abs());
        }
    }
    let el = start.elapsed();
    outcome(
        worst <= 1e-9 && within(el, Duration::from_secs(5)),
        format!("max crossing/iterate gap {worst:.2e} over 100 starts × 5 returns, {el:.2?}"),
    )
}

fn criterion_5(m: &Model) -> (Outcome, Option<WitnessCertificate>) {
    let start = Instant::now();
    let cert = match construct_witness(&WitnessRequest::new(0.33, 10, 0.1), m, &WitnessOptions::default()) {
        Ok(c) => c,
        Err(e) => return (outcome(false, format!("construction failed: {e}")), None),
    };
    let report = verify_certificate(&cert, m, &VerifyOptions::default());
    let el = start.elapsed();
    let min_gap = cert.samples.iter().map(|s| s.a0 - s.a1).fold(f64::INFINITY, f64::min);
    let ok = (cert.sigma - 51.5).abs() <= 1.0
        && cert.tau0 >= 115f64.max(cert.n as f64)
        && cert.a0 >= 0.75 - 1e-6
        && cert.a1 <= 0.20 + 1e-6
        && cert.samples.len() == 9
        && min_gap >= 0.5
        && report.passed
        && within(el, Duration::from_secs(120));
    let detail = format!(
        "σ = {:.4}, τ0 = {:.2}, τ1 = {:.2}, A0 = {:.5}, A1 = {:.5}, min sample gap {:.4}, verify {} (residual {:.1e}), {} bits, {el:.2?}",
        cert.sigma,
        cert.tau0,
        cert.tau1,
        cert.a0,
        cert.a1,
        min_gap,
        if report.passed { "passed" } else { "FAILED" },
        report.residual,
        cert.precision_bits,
    );
    (outcome(ok, detail), Some(cert))
}

fn criterion_6(m: &Model, seed: Option<&WitnessCertificate>) -> Outcome {
    let start = Instant::now();
    let mut certs: Vec<WitnessCertificate> = seed.into_iter().cloned().collect();
    let mut errors = Vec::new();
    for x0 in [-0.8, -0.4, 0.2, 0.6, 0.9] {
        match construct_witness(&WitnessRequest::new(x0, 10, 0.1), m, &WitnessOptions::default()) {
            Ok(c) => certs.push(c),
            Err(e) => errors.push(format!("x0 {x0}: {e}")),
        }
    }
    let holds = |c: &WitnessCertificate| {
        c.mode == Mode::Strict
            && c.audit.factor_holds
            && c.audit.tau23 >= 3.0 * (c.audit.tau01_outside + c.audit.tau12)
    };
    let good = certs.iter().filter(|c| holds(c)).count();
    let least = certs
        .iter()
        .map(|c| c.audit.tau23 / (c.audit.tau01_outside + c.audit.tau12))
        .fold(f64::INFINITY, f64::min);
    let el = start.elapsed();
    outcome(
        seed.is_some() && errors.is_empty() && good == 6,
        format!("{good}/6 strict certificates satisfy the factor-3 audit, least ratio {least:.2}, {el:.2?} {errors:?}"),
    )
}

fn criterion_7(m: &Model, seed: Option<&WitnessCertificate>) -> Outcome {
    let Some(seed) = seed else {
        return outcome(false, "no seed certificate".into());
    };
    let start = Instant::now();
    let chain = match deepen(seed, 3, m, &DeepenOptions::default()) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("deepen failed: {e}")),
    };
    let last = chain.levels.last().unwrap();
    let orbit = match last.center_orbit() {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("level-3 center orbit failed: {e}")),
    };
    let series = average_series_until(&orbit, 4096, &m.flow, &m.boxes, last.tau1).unwrap();
    let (highs, lows) = alternations(&series, 0.70, 0.25);
    let el = start.elapsed();
    let ns: Vec<u64> = chain.levels.iter().map(|c| c.n).collect();
    outcome(
        chain.levels.len() == 3
            && chain.is_nested()
            && highs >= 3
            && lows >= 3
            && within(el, Duration::from_secs(15 * 60)),
        format!(
            "N = {ns:?}, nested {}, level-3 series alternates {highs} highs / {lows} lows over [0, {:.0}], {el:.2?}",
            chain.is_nested(),
            last.tau1
        ),
    )
}

fn criterion_8(m: &Model) -> Outcome {
    let start = Instant::now();
    let entries = match dense_cover(5, 9, 10, m) {
        Ok(e) => e,
        Err(e) => return outcome(false, format!("cover failed: {e}")),
    };
    let el = start.elapsed();
    let verified = entries.iter().filter(|e| e.verified).count();
    let far = entries
        .iter()
        .map(|e| e.center_distance.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    outcome(
        entries.len() == 10 && verified == 10 && far <= 0.1 && within(el, Duration::from_secs(600)),
        format!("{verified}/10 verified, largest center distance {far:.6}, {el:.2?}"),
    )
}

fn criterion_9(m: &Model) -> Outcome {
    let start = Instant::now();
    let delta = 0.03;
    let h = match historic_prefix_1d(delta, 3, &m.map) {
        Ok(h) => h,
        Err(e) => return outcome(false, format!("construction failed: {e}")),
    };
    let el = start.elapsed();
    let ends: Vec<(BlockKind, f64)> = h.blocks.iter().map(|&(k, end)| (k, h.partials[end - 1])).collect();
    let near = ends.iter().all(|&(k, a)| {
        let target = match k {
            BlockKind::Periodic => h.p_star_sq,
            BlockKind::Generic => h.m_hat,
        };
        (a - target).abs() <= delta / 4.0
    });
    let swings = ends.windows(2).map(|w| (w[1].1 - w[0].1).abs()).fold(f64::INFINITY, f64::min);
    let kinds_alternate = ends.windows(2).all(|w| w[0].0 != w[1].0);
    let ok = near
        && kinds_alternate
        && swings >= delta
        && (h.p_star_sq - 0.0728).abs() < 5e-5
        && within(el, Duration::from_secs(60));
    let vals: Vec<String> = ends.iter().map(|(_, a)| format!("{a:.5}")).collect();
    outcome(
        ok,
        format!(
            "p*² = {:.5}, m̂ = {:.5}, block-end averages [{}], least swing {swings:.4}, {el:.2?}",
            h.p_star_sq,
            h.m_hat,
            vals.join(", ")
        ),
    )
}

/// Paths to every numeric leaf of a certificate: JSON numbers and decimal
/// strings.
fn numeric_leaves(v: &Value, path: String, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                numeric_leaves(x, format!("{path}/{k}"), out);
            }
        }
        Value::Array(items) => {
            for (i, x) in items.iter().enumerate() {
                numeric_leaves(x, format!("{path}/{i}"), out);
            }
        }
        Value::Number(_) => out.push(path),
        Value::String(s) if s.parse::<f64>().is_ok() => out.push(path),
        _ => {}
    }
}

fn perturb(v: &Value) -> Value {
    match v {
        Value::Number(n) if n.is_i64() || n.is_u64() => {
            let x = n.as_f64().unwrap();
            let step = (0.1 * x.abs()).round().max(1.0);
            let signed = if x < 0.0 { x - step } else { x + step };
            if n.is_u64() {
                Value::from(signed as u64)
            } else {
                Value::from(signed as i64)
            }
        }
        Value::Number(n) => {
            let x = n.as_f64().unwrap();
            Value::from(if x == 0.0 { 0.1 } else { 1.1 * x })
        }
        Value::String(s) => {
            let x = BigReal::parse_auto(s).unwrap();
            let y = if x.is_zero() { x.add_f64(0.1) } else { x.mul_f64(1.1) };
            Value::from(y.to_decimal())
        }
        other => other.clone(),
    }
}

fn criterion_10(m: &Model, seed: Option<&WitnessCertificate>) -> Outcome {
    let Some(seed) = seed else {
        return outcome(false, "no seed certificate".into());
    };
    let tree = serde_json::to_value(seed).unwrap();
    let mut leaves = Vec::new();
    numeric_leaves(&tree, String::new(), &mut leaves);
    let start = Instant::now();
    let mut missed = Vec::new();
    for path in &leaves {
        let mut t = tree.clone();
        let leaf = t.pointer_mut(path).unwrap();
        *leaf = perturb(leaf);
        let rejected = match serde_json::from_value::<WitnessCertificate>(t) {
            Err(_) => true,
            Ok(c) => !verify_certificate(&c, m, &VerifyOptions::default()).passed,
        };
        if !rejected {
            missed.push(path.clone());
        }
    }
    let el = start.elapsed();
    outcome(
        missed.is_empty() && within(el, Duration::from_secs(1)),
        format!(
            "{}/{} single-field perturbations rejected, accepted: {missed:?}, {el:.2?}",
            leaves.len() - missed.len(),
            leaves.len()
        ),
    )
}

fn report(out: &mut impl Write, k: usize, result: std::thread::Result<Outcome>) -> bool {
    let o = result.unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    let tag = if o.passed { "PASS" } else { "FAIL" };
    writeln!(out, "criterion {k:>2}: {tag}  {}", o.detail).unwrap();
    out.flush().unwrap();
    o.passed
}

fn main() {
    let m = Model::default();
    let mut out = std::io::stdout();
    let mut passed = Vec::new();
    passed.push(report(&mut out, 1, catch_unwind(|| criterion_1(&m))));
    passed.push(report(&mut out, 2, catch_unwind(|| criterion_2(&m))));
    passed.push(report(&mut out, 3, catch_unwind(|| criterion_3(&m))));
    passed.push(report(&mut out, 4, catch_unwind(|| criterion_4(&m))));
    let mut seed = None;
    passed.push(report(
        &mut out,
        5,
        catch_unwind(AssertUnwindSafe(|| {
            let (o, c) = criterion_5(&m);
            seed = c;
            o
        })),
    ));
    passed.push(report(&mut out, 6, catch_unwind(|| criterion_6(&m, seed.as_ref()))));
    passed.push(report(&mut out, 7, catch_unwind(|| criterion_7(&m, seed.as_ref()))));
    passed.push(report(&mut out, 8, catch_unwind(|| criterion_8(&m))));
    passed.push(report(&mut out, 9, catch_unwind(|| criterion_9(&m))));
    passed.push(report(&mut out, 10, catch_unwind(|| criterion_10(&m, seed.as_ref()))));
    let n = passed.iter().filter(|&&p| p).count();
    writeln!(out, "acceptance: {n}/{} criteria passed", passed.len()).unwrap();
    if n != passed.len() {
        std::process::exit(1);
    }
}
