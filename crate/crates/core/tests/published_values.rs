//! Defaults that come straight from published parameter and sensor tables.

use reflidar::eval::{DEFAULT_FAIL_THRESHOLD, LABEL_GROW};
use reflidar::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

#[test]
fn sensor_presets_match_published_table() {
    // name, Hz, field of view (deg), resolution (deg), i_min, p_d
    let table = [
        ("lms151", 50.0, 270.0, 0.5, 1000.0, 1),
        ("r2000", 50.0, 360.0, 0.1, 500.0, 2),
        ("os32c", 13.0, 270.0, 0.4, 8000.0, 1),
    ];
    for (name, hz, fov, res, i_min, p_d) in table {
        let s = LidarSpec::preset(name).unwrap();
        assert_eq!(s.name, name);
        assert!(close(s.frequency, hz), "{name} frequency");
        assert!(close(s.fov, f64::to_radians(fov)), "{name} fov");
        assert!(
            close(s.angular_resolution, f64::to_radians(res)),
            "{name} resolution"
        );
        assert!(close(s.min_intensity, i_min), "{name} i_min");
        assert_eq!(s.point_tolerance, p_d, "{name} p_d");
    }
}

#[test]
fn detector_defaults_match_published_table() {
    let p = DetectorParams::default();
    assert!(close(p.r_min, 0.5));
    assert!(close(p.r_max, 6.0));
    assert!(close(p.window, 0.15));
    assert!(close(p.min_segment_length, 0.15));
    assert_eq!(p.min_segment_points, 5);
    assert!(close(p.max_fit_mse, 0.01));
    assert!(close(p.jump_fraction, 0.333));
    assert!(close(p.marker_width, 0.05));
    assert!(close(p.flat_angle_max, 80f64.to_radians()));
    assert_eq!(p.center_mode, CenterMode::CenterOfMass);
}

#[test]
fn assignment_costs_are_five_centimeters_squared() {
    let t = TrackerParams::default();
    assert!(close(t.c_d, 0.0025));
    assert!(close(t.c_t, 0.0025));
    assert!(close(t.gate, 0.05));
    assert!(close(t.c_d.sqrt(), t.gate));
}

#[test]
fn marker_layer_circle_radius() {
    assert!(close(OdometryConfig::default().synth_radius, 0.05));
}

#[test]
fn evaluation_constants() {
    assert!(close(DEFAULT_FAIL_THRESHOLD, 1.0));
    assert!(close(LABEL_GROW, 0.10));
    let e = Eligibility::default();
    assert!(close(e.max_range, 6.0));
    assert!(close(e.max_incidence, 60f64.to_radians()));
}

#[test]
fn layer_keyframe_overlap_heuristic() {
    assert!(close(KeyframeCriteria::default().min_overlap, 0.7));
}
