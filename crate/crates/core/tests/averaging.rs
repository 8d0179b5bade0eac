use lhw::averaging::*;
use lhw::map1d::find_period2;
use lhw::semiflow::*;
use lhw::witness::{construct_witness, WitnessOptions};
use lhw::{Model, SigmaPoint, WitnessRequest};
use proptest::prelude::*;

fn model() -> Model {
    Model::default()
}

fn orbit(x: f64, y: f64, horizon: f64) -> HybridOrbit {
    build_orbit(&SigmaPoint::from_f64(x, y, 128), horizon, &model(), &TailRule::None).unwrap()
}

/// `∫ g` over the first descent from `(x, 0, 1)` with `x ≤ η²`, from the
/// piecewise closed form of the tent products.
fn first_descent_integral(x: f64, eta: f64) -> f64 {
    let ramp = 2.0 * 2f64.ln() - 1.0;
    2.0 * ramp + (eta * eta / x).ln()
}

#[test]
fn orbit_outside_the_boxes_averages_zero() {
    let m = model();
    let p_star = find_period2(&m.map, 256);
    let rule = TailRule::SnapAnywhere {
        p_star: p_star.clone(),
        log2_tol: -200.0,
    };
    let o = build_orbit(&SigmaPoint::new(p_star, 0.5), f64::INFINITY, &m, &rule).unwrap();
    for t in [0.5, 1.0, 7.0, 1e6] {
        assert_eq!(time_average(&o, t, &m.flow, &m.boxes).unwrap(), 0.0);
    }
}

#[test]
fn deep_start_matches_closed_form() {
    let m = model();
    let x = 1e-6;
    let o = orbit(x, 0.0, 12.0);
    let d = o.segments[0].duration();
    assert!((d - (0.1 / x).ln()).abs() < 1e-12);
    let got = integrate_g(&o, d, &m.flow, &m.boxes).unwrap();
    let want = first_descent_integral(x, m.boxes.eta);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn flat_stretch_counts_exactly() {
    let m = model();
    let x = 1e-6;
    let o = orbit(x, 0.0, 12.0);
    let integ = GIntegrator::new(&o, &m.flow, &m.boxes);
    let t_top = m.flow.t_top(&m.boxes);
    let t_side = (m.boxes.eta / x).ln();
    let d = integ.integral(t_side).unwrap() - integ.integral(t_top).unwrap();
    assert!((d - (t_side - t_top)).abs() < 1e-12);
}

#[test]
fn integral_bracketed_by_box_times() {
    let m = model();
    let o = orbit(1e-6, 0.3, 40.0);
    for t in [3.0, 8.0, 11.5, 20.0, 40.0] {
        let i = integrate_g(&o, t, &m.flow, &m.boxes).unwrap();
        let lo = time_in_region(&o, &m.flow, Region::PiEta, t);
        let hi = time_in_region(&o, &m.flow, Region::Pi2Eta, t);
        assert!(lo - 1e-9 <= i && i <= hi + 1e-9, "{lo} {i} {hi}");
    }
}

#[test]
fn beyond_horizon_is_an_error() {
    let m = model();
    let o = orbit(0.3, 0.0, 5.0);
    assert!(integrate_g(&o, o.horizon + 1.0, &m.flow, &m.boxes).is_err());
    assert!(time_average(&o, 0.0, &m.flow, &m.boxes).is_err());
}

#[test]
fn simpson_matches_primitives() {
    let v = adaptive_simpson(&|t: f64| (-t).exp() * t, 0.0, 3.0, 1e-12);
    let want = 1.0 - 4.0 * (-3f64).exp();
    assert!((v - want).abs() < 1e-11);
}

#[test]
fn witness_center_alternates() {
    let m = model();
    let cert = construct_witness(&WitnessRequest::new(0.33, 10, 0.1), &m, &WitnessOptions::default()).unwrap();
    let o = cert.center_orbit().unwrap();
    let tail = o.tail.as_ref().unwrap();
    assert_eq!(tail.kind, TailKind::Exact);
    let integ = GIntegrator::new(&o, &m.flow, &m.boxes);
    let a0 = integ.average(cert.tau0).unwrap();
    let a1 = integ.average(cert.tau1).unwrap();
    assert!(a0 >= 0.74, "{a0}");
    assert!(a1 <= 0.21, "{a1}");

    // no box visits on the tail: A·t is frozen
    let t1 = tail.t_start + 1.0;
    let t2 = 3.0 * t1;
    let r = integ.average(t2).unwrap() / integ.average(t1).unwrap();
    assert!((r - t1 / t2).abs() < 1e-12);

    let series = average_series_until(&o, 500, &m.flow, &m.boxes, cert.tau1).unwrap();
    let (t_a, t_b) = detect_historic(&series, 10.0, 0.5).unwrap();
    assert!(t_a >= 10.0 && t_b > t_a);
    let (h, l) = alternations(&series, 0.70, 0.25);
    assert!(h >= 1 && l >= 1);
}

#[test]
fn grid_zero_keeps_event_samples() {
    let m = model();
    let o = orbit(1e-6, 0.0, 30.0);
    let s = average_series(&o, 0, &m.flow, &m.boxes).unwrap();
    assert!(!s.is_empty());
    assert_eq!(s.end(), 30.0);
    let times: Vec<f64> = s.samples.iter().map(|p| p.0).collect();
    for e in o.events(&m.flow).iter().filter(|e| e.t > 0.0 && e.t <= 30.0) {
        assert!(times.contains(&e.t));
    }
}

#[test]
fn refinement_agrees_on_shared_times() {
    let m = model();
    let o = orbit(2e-7, -0.4, 60.0);
    let coarse = average_series(&o, 10, &m.flow, &m.boxes).unwrap();
    let fine = average_series(&o, 1000, &m.flow, &m.boxes).unwrap();
    for (t, a) in &coarse.samples {
        let b = fine.value_at(*t).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
    let mid = 0.5 * (coarse.samples[3].0 + coarse.samples[4].0);
    let interp = coarse.value_at(mid).unwrap();
    let exact = time_average(&o, mid, &m.flow, &m.boxes).unwrap();
    assert!(interp >= 0.0 && exact >= 0.0);
}

#[test]
fn empty_horizon_gives_empty_series() {
    let m = model();
    let o = orbit(0.2, 0.0, 0.0);
    assert!(average_series(&o, 100, &m.flow, &m.boxes).unwrap().is_empty());
}

#[test]
fn detector_examples() {
    let s = TimeAverageSeries {
        samples: vec![(1.0, 0.1), (5.0, 0.9), (12.0, 0.8), (20.0, 0.2), (30.0, 0.9)],
    };
    assert_eq!(detect_historic(&s, 0.0, 0.5), Some((1.0, 5.0)));
    assert_eq!(detect_historic(&s, 10.0, 0.5), Some((12.0, 20.0)));
    assert_eq!(detect_historic(&s, 10.0, 0.8), None);
    assert_eq!(detect_historic(&s, 100.0, 0.1), None);
    assert_eq!(alternations(&s, 0.7, 0.25), (2, 2));
    let flat = TimeAverageSeries {
        samples: vec![(1.0, 0.5); 4],
    };
    assert_eq!(alternations(&flat, 0.7, 0.25), (0, 0));
}

#[test]
fn series_csv_layout() {
    let s = TimeAverageSeries {
        samples: vec![(1.0, 0.25)],
    };
    let mut buf = Vec::new();
    write_series_csv(&mut buf, &s, &["x0 = 0.5".into()]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text, "# x0 = 0.5\nt,A\n1.0000000000000000e0,2.5000000000000000e-1\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn averages_are_fractions(lx in -30.0f64..0.0, y in -1.0f64..1.0, neg in any::<bool>()) {
        let m = model();
        let x = if neg { -lx.exp2() } else { lx.exp2() };
        let o = orbit(x, y, 50.0);
        let s = average_series(&o, 64, &m.flow, &m.boxes).unwrap();
        let mut prev = 0.0;
        for &(t, a) in &s.samples {
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(a * t >= prev - 1e-9);
            prev = a * t;
        }
    }

    #[test]
    fn mirror_orbit_has_equal_average(lx in -30.0f64..-1.0, y in -1.0f64..1.0) {
        let m = model();
        let x = lx.exp2();
        let a = orbit(x, y, 30.0);
        let b = orbit(-x, -y, 30.0);
        let ia = integrate_g(&a, 30.0, &m.flow, &m.boxes).unwrap();
        let ib = integrate_g(&b, 30.0, &m.flow, &m.boxes).unwrap();
        prop_assert!((ia - ib).abs() < 1e-12);
    }
}
