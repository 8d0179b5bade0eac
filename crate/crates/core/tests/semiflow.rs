use lhw::geometry::{eval_beta, return_map, SigmaPoint};
use lhw::map1d::{alpha_f64, find_period2};
use lhw::semiflow::*;
use lhw::{BigReal, BoxSpec, Error, MapParams, Model};
use proptest::prelude::*;

fn model() -> Model {
    Model::default()
}

/// `L` in plain doubles, written out from the formulas.
fn l_f64(x: f64, y: f64) -> (f64, f64) {
    let a = x.abs().powf(2.0);
    let beta = a * y / 4.0 + x.signum() * (1.0 - a) / 2.0;
    let alpha = x.signum() * (1.95 * x.abs().powf(0.75) - 1.0);
    (alpha, beta)
}

/// Classical RK4 on `ż = −νz` with a bisection on the last step for `z = level`.
fn rk4_crossing(nu: f64, level: f64) -> f64 {
    let f = |z: f64| -nu * z;
    let h = 1e-3;
    let step = |z: f64, h: f64| {
        let k1 = f(z);
        let k2 = f(z + 0.5 * h * k1);
        let k3 = f(z + 0.5 * h * k2);
        let k4 = f(z + h * k3);
        z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let (mut t, mut z) = (0.0, 1.0);
    while step(z, h) > level {
        z = step(z, h);
        t += h;
    }
    let (mut lo, mut hi) = (0.0, h);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if step(z, mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    t + 0.5 * (lo + hi)
}

#[test]
fn linear_flow_identity_and_example() {
    let fp = FlowParams::default();
    let s = State3 {
        x: BigReal::from_f64(0.01, 128),
        y: 1.0,
        z: 1.0,
    };
    let same = linear_flow(&s, 0.0, &fp).unwrap();
    assert_eq!(same, s);
    let t = 10f64.ln();
    let out = linear_flow(&s, t, &fp).unwrap();
    assert!((out.x.to_f64() - 0.1).abs() < 1e-15);
    assert!((out.y - 0.01).abs() < 1e-15);
    assert!((out.z - 0.1).abs() < 1e-15);
}

#[test]
fn linear_flow_leaves_slab() {
    let fp = FlowParams::default();
    let s = State3 {
        x: BigReal::from_f64(0.05, 64),
        y: 0.0,
        z: 1.0,
    };
    assert!(matches!(linear_flow(&s, 1.0, &fp), Err(Error::SlabExit { .. })));
}

#[test]
fn descent_times_closed_form() {
    let m = model();
    let d = exit_and_descent_times(&BigReal::from_f64(0.001, 64), &m.flow, &m.boxes).unwrap();
    assert!((d.t_top - 25f64.ln()).abs() < 1e-12);
    assert!((d.t_top - 3.218876).abs() < 1e-6);
    assert!((d.t_side - 40f64.ln()).abs() < 1e-12);
    assert!((d.t_slab - 100f64.ln()).abs() < 1e-12);
    assert!(d.enters_top);
    let late = exit_and_descent_times(&BigReal::from_f64(0.01, 64), &m.flow, &m.boxes).unwrap();
    assert!(!late.enters_top);
    let at_eta = exit_and_descent_times(&BigReal::from_f64(0.04, 64), &m.flow, &m.boxes).unwrap();
    assert_eq!(at_eta.t_side, 0.0);
}

#[test]
fn descent_time_matches_numeric_event() {
    let m = model();
    let numeric = rk4_crossing(m.flow.nu, m.boxes.eta);
    assert!((numeric - m.flow.t_top(&m.boxes)).abs() < 1e-9, "{numeric}");
}

#[test]
fn tiny_start_lingers_for_n() {
    let m = model();
    // eps^sigma with the strict sigma for N = 10, eps = 0.1
    let x = BigReal::powf(10.0, -51.44, 128);
    let d = exit_and_descent_times(&x, &m.flow, &m.boxes).unwrap();
    assert!(d.t_side >= 10.0);
    assert!(d.enters_top);
}

#[test]
fn one_return_examples() {
    let m = model();
    let p_star = find_period2(&m.map, 256);
    let z = SigmaPoint::new(p_star.clone(), 0.3);
    let (segs, next, dur) = advance_one_return(&z, 0.0, &m).unwrap();
    assert_eq!(segs.len(), 1);
    assert!(matches!(segs[0], Segment::Outside { .. }));
    assert_eq!(dur, 1.0);
    assert!((&next.x + &p_star).log2_abs() < -240.0);

    let z = SigmaPoint::from_f64(0.05, 0.0, 64);
    let (segs, _, dur) = advance_one_return(&z, 0.0, &m).unwrap();
    assert_eq!(segs.len(), 2);
    assert!((segs[0].duration() - 2f64.ln()).abs() < 1e-12);
    assert_eq!(segs[1].duration(), 1.0);
    assert!((dur - 1.0 - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn one_return_rejects_gamma() {
    let z = SigmaPoint::new(BigReal::zero(64), 0.0);
    assert!(matches!(advance_one_return(&z, 2.0, &model()), Err(Error::GammaHit { time }) if time == 2.0));
}

#[test]
fn horizon_zero_is_empty() {
    let z = SigmaPoint::from_f64(0.3, 0.1, 64);
    let o = build_orbit(&z, 0.0, &model(), &TailRule::None).unwrap();
    assert!(o.segments.is_empty());
    assert_eq!(o.crossings.len(), 1);
}

#[test]
fn period_two_start_gets_tail() {
    let m = model();
    let p_star = find_period2(&m.map, 256);
    let z = SigmaPoint::new(p_star.clone(), 0.0);
    let rule = TailRule::SnapAnywhere {
        p_star: p_star.clone(),
        log2_tol: -200.0,
    };
    let o = build_orbit(&z, f64::INFINITY, &m, &rule).unwrap();
    let tail = o.tail.as_ref().unwrap();
    assert_eq!(tail.t_start, 0.0);
    assert_eq!(tail.period, 2.0);
    assert_eq!(tail.kind, TailKind::Exact);
    assert!(o.horizon.is_infinite());
    assert_eq!(tail.states[1].x, -&p_star);
    // the cycle never comes near the boxes
    assert!(p_star.to_f64() > 2.0 * m.boxes.eta);
}

#[test]
fn crossings_match_double_return_map() {
    let m = model();
    let mut state = 0x2545_f491_u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut worst = 0f64;
    for _ in 0..100 {
        let x = 0.02 + 0.96 * next();
        let x = if next() < 0.5 { -x } else { x };
        let y = 2.0 * next() - 1.0;
        let mut z = SigmaPoint::from_f64(x, y, 128);
        let (mut u, mut v) = (x, y);
        for _ in 0..5 {
            z = match advance_one_return(&z, 0.0, &m) {
                Ok((_, next, _)) => next,
                Err(_) => break,
            };
            (u, v) = l_f64(u, v);
            worst = worst.max((z.x.to_f64() - u).abs()).max((z.y - v).abs());
        }
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn crossings_equal_return_map_iterates() {
    let m = model();
    let z = SigmaPoint::from_f64(0.37, -0.2, 256);
    let o = build_orbit(&z, 30.0, &m, &TailRule::None).unwrap();
    let mut cur = z;
    for c in o.crossings.iter().skip(1) {
        cur = return_map(&cur, &m.map, &m.flow).unwrap();
        assert_eq!(c.point.y, cur.y);
        assert!((&c.point.x - &cur.x).is_zero() || (&c.point.x - &cur.x).log2_abs() < -100.0);
    }
}

#[test]
fn elapsed_and_region_times() {
    let m = model();
    let x0 = 1e-5;
    assert!(x0 <= m.boxes.eta * m.boxes.eta);
    let z = SigmaPoint::from_f64(x0, 0.5, 128);
    let o = build_orbit(&z, 20.0, &m, &TailRule::None).unwrap();
    assert_eq!(elapsed_time(&o, &m.flow, 0, 0).unwrap(), 0.0);
    let want = (m.boxes.eta / x0).ln() - (1.0 / m.boxes.eta).ln();
    let got = time_in_region(&o, &m.flow, Region::PiEta, o.segments[0].t_end());
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    let ev = o.events(&m.flow);
    assert!(matches!(ev[1].kind, EventKind::TopFace(0)));
    assert!(matches!(ev[2].kind, EventKind::SideFace(0)));
    let e = elapsed_time(&o, &m.flow, 1, 2).unwrap();
    assert!((e - want).abs() < 1e-12);
    assert!(matches!(elapsed_time(&o, &m.flow, 0, 10_000), Err(Error::EventIndex { .. })));
}

#[test]
fn outside_bound_value() {
    let m = model();
    let c = m.flow.outside_time_bound(&m.boxes);
    assert!((c - (1.0 + 25f64.ln() + 2.5f64.ln())).abs() < 1e-12);
    assert!((c - 5.135).abs() < 1e-3);
}

#[test]
fn y_contracts_before_the_box() {
    let m = model();
    let t_top = m.flow.t_top(&m.boxes);
    let y = (-m.flow.mu * t_top).exp();
    assert!(y <= m.boxes.eta.powf(m.flow.mu / m.flow.nu) * (1.0 + 1e-12));
    assert!(y <= m.boxes.eta);
}

#[test]
fn orbit_csv_layout() {
    let m = model();
    let o = build_orbit(&SigmaPoint::from_f64(0.05, 0.0, 64), 3.0, &m, &TailRule::None).unwrap();
    let mut buf = Vec::new();
    write_orbit_csv(&mut buf, &o, &["schema = lhw-1".to_string()], false).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema = lhw-1"));
    assert_eq!(lines.next(), Some("t_start,t_end,kind,x_entry,y_entry,z_entry"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[2], "linear");
    assert_eq!(first[0].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn invalid_flow_params() {
    let bad = FlowParams {
        nu: 3.0,
        ..FlowParams::default()
    };
    assert!(bad.validate().is_err());
    let bad = Model {
        boxes: BoxSpec { eta: 0.2 },
        ..Model::default()
    };
    assert!(bad.validate().is_err());
    assert_eq!(MapParams::default(), Model::default().map);
}

proptest! {
    #[test]
    fn semigroup(x in 1e-6f64..1e-3, y in -1.0f64..1.0, t1 in 0.0f64..2.0, t2 in 0.0f64..2.0) {
        let fp = FlowParams::default();
        let s = State3 { x: BigReal::from_f64(x, 128), y, z: 1.0 };
        let a = linear_flow(&linear_flow(&s, t1, &fp).unwrap(), t2, &fp).unwrap();
        let b = linear_flow(&s, t1 + t2, &fp).unwrap();
        let rel = |u: f64, v: f64| if v == 0.0 { u.abs() } else { ((u - v) / v).abs() };
        prop_assert!(rel(a.x.to_f64(), b.x.to_f64()) < 2f64.powi(-40));
        prop_assert!(rel(a.y, b.y) < 2f64.powi(-40));
        prop_assert!(rel(a.z, b.z) < 2f64.powi(-40));
    }

    #[test]
    fn return_time_bounded(x in 0.04f64..1.0, neg in any::<bool>()) {
        let m = model();
        let x = if neg { -x } else { x };
        let (_, _, d) = advance_one_return(&SigmaPoint::from_f64(x, 0.0, 64), 0.0, &m).unwrap();
        prop_assert!(d <= m.flow.return_time_bound(&m.boxes) + 1e-12);
    }

    #[test]
    fn outside_time_per_return_bounded(log_x in -40.0f64..0.0, y in -1.0f64..1.0) {
        let m = model();
        let x = log_x.exp2();
        let (segs, _, t) = advance_one_return(&SigmaPoint::from_f64(x, y, 128), 0.0, &m).unwrap();
        let start = SigmaPoint::from_f64(x, y, 128);
        let o = build_orbit(&start, t, &m, &TailRule::None).unwrap();
        prop_assert_eq!(o.segments.len(), segs.len());
        let inside = time_in_region(&o, &m.flow, Region::PiEta, t);
        prop_assert!(t - inside <= m.flow.outside_time_bound(&m.boxes) + 1e-9);
        prop_assert!(inside <= t);
    }

    #[test]
    fn times_increase(x in -1.0f64..1.0, y in -1.0f64..1.0) {
        prop_assume!(x.abs() > 1e-3);
        let m = model();
        if let Ok(o) = build_orbit(&SigmaPoint::from_f64(x, y, 128), 40.0, &m, &TailRule::None) {
            let mut t = 0.0;
            for s in &o.segments {
                prop_assert!(s.duration() > 0.0);
                prop_assert!((s.t_start() - t).abs() < 1e-9);
                t = s.t_end();
            }
            prop_assert!(o.crossings.windows(2).all(|w| w[1].t > w[0].t));
        }
    }
}

#[test]
fn beta_oracle_agrees() {
    let m = model();
    let x = BigReal::from_f64(-0.3, 128);
    let got = eval_beta(&x, 0.4, m.flow.s()).unwrap();
    assert!((got - l_f64(-0.3, 0.4).1).abs() < 1e-15);
    assert!((alpha_f64(-0.3, &m.map) - l_f64(-0.3, 0.4).0).abs() < 1e-15);
}
