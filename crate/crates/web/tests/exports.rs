use symabs_web::{margin_curve, spline_demo, spline_view, trajectory};

#[test]
fn spline_stays_within_bound() {
    for seed in 0..20 {
        let v = spline_view(seed, 0.002, 0, 1.43e-4).unwrap();
        assert_eq!(v.times.len(), v.signal.len());
        assert_eq!(v.signal.len(), v.witness.len());
        assert_eq!(v.nodes.len(), 2);
        assert!(v.distance <= v.theta_bound, "{} > {}", v.distance, v.theta_bound);
    }
}

#[test]
fn spline_rejects_coarse_lattice() {
    assert!(spline_view(1, 0.002, 0, 0.05).is_err());
}

#[test]
fn margin_curve_crosses_for_verified_certificate() {
    let pts = margin_curve("verified", 0.015625, 0.09375, 0.0009375, 0.03, 4.0, 16).unwrap();
    assert_eq!(pts.len(), 16);
    assert!(!pts[0].holds);
    assert!(pts.last().unwrap().holds);
    assert!(margin_curve("bogus", 0.1, 0.1, 0.001, 0.03, 1.0, 4).is_err());
}

#[test]
fn trajectory_starts_at_initial_state() {
    let tr = trajectory(0.1, 0.0, 0.0, 3).unwrap();
    assert_eq!(tr.len(), 1 + 3 * 16);
    assert_eq!(tr[0], [0.0, 0.1, 0.0]);
    assert!((tr.last().unwrap()[0] - 3.0).abs() < 1e-12);
    // undamped-ish swing stays bounded
    assert!(tr.iter().all(|p| p[1].abs() < 0.5));
}

#[test]
fn exports_emit_json() {
    let s = spline_demo(3, 0.002, 0, 1.43e-4).unwrap();
    let v: serde_json::Value = serde_json::from_str(&s).unwrap();
    assert!(v["rho"].as_f64().unwrap() > 0.0);
}
