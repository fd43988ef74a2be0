use ncr_isac_demo::{
    beam_pattern, beam_pattern_data, crb_curve, crb_curve_data, optimize, optimize_data,
};

#[test]
fn crb_curve_grows_with_gain() {
    let c = crb_curve_data(64, 128, 400.0, 30.0, 10.0, "matched", -20.0, 60.0, 81).unwrap();
    assert_eq!(c.alpha_db.len(), 81);
    assert_eq!(c.alpha_db[0], -20.0);
    assert_eq!(c.alpha_db[80], 60.0);
    assert!(c.sqrt_crb_m.windows(2).all(|p| p[1] >= p[0]));

    let json = crb_curve(8, 16, 400.0, 30.0, 10.0, "uniform", 0.0, 10.0, 3).unwrap();
    assert!(json.starts_with("{\"alpha_db\":[0.0,5.0,10.0],\"sqrt_crb_m\":["));
}

#[test]
fn crb_curve_errors() {
    assert!(crb_curve_data(8, 1, 400.0, 30.0, 10.0, "matched", 0.0, 10.0, 10)
        .unwrap_err()
        .contains("not identifiable"));
    assert!(crb_curve(8, 16, 400.0, 30.0, 10.0, "random", 0.0, 10.0, 10).is_err());
    assert!(crb_curve(8, 16, 400.0, 30.0, 10.0, "matched", 10.0, 0.0, 10).is_err());
    assert!(crb_curve(8, 16, 0.0, 30.0, 10.0, "matched", 0.0, 10.0, 10).is_err());
    assert!(crb_curve(1000, 16, 400.0, 30.0, 10.0, "matched", 0.0, 10.0, 10).is_err());
}

#[test]
fn matched_pattern_peaks_at_target() {
    let p = beam_pattern_data(16, 60.0, "matched", 181).unwrap();
    let peak = p
        .gain_db
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(p.angle_deg[peak], 60.0);
    assert!(p.gain_db[peak].abs() < 1e-12);
    assert!(p.gain_db.iter().all(|g| *g >= -60.0 && *g <= 1e-12));
    assert!(beam_pattern(16, 60.0, "uniform", 1).is_err());
}

#[test]
fn optimize_meets_floor() {
    let d = optimize_data(8, 16, 30.0, 1e6, 2.0, "joint", 18.5, 1).unwrap();
    assert!(d.converged && !d.infeasible);
    assert!(d.sinr_db >= 2.0 - 1e-6);
    assert_eq!(d.pattern.angle_deg.len(), 361);

    let f = optimize_data(8, 16, 30.0, 1e6, 2.0, "fixed", 18.5, 1).unwrap();
    assert!((f.alpha_db - 18.5).abs() < 1e-9);
    assert!(d.sqrt_crb_m <= f.sqrt_crb_m);

    let json = optimize(8, 16, 30.0, 1e6, 2.0, "joint", 18.5, 1).unwrap();
    assert!(json.contains("\"arm\":\"joint\""));
    assert!(optimize(8, 16, 30.0, 1e6, 2.0, "both", 18.5, 1).is_err());
}
