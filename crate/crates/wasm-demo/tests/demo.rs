use conflict_intensity_wasm::{density_curves, event_responsibilities, simulate_and_fit, EventInput};

#[test]
fn curves_integrate_to_about_one() {
    let c = density_curves(0.3, 20.0, 0.4, 0.6, 400, 60).unwrap();
    let area: f64 = c.beta_pdf.iter().sum::<f64>() / 400.0;
    assert!((area - 1.0).abs() < 1e-3, "{area}");
    let mass: f64 = c.zig_pmf.iter().sum();
    assert!((mass - 1.0).abs() < 1e-9, "{mass}");
    let peak = c.grid[c
        .beta_pdf
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0];
    assert!((peak - 0.3).abs() < 0.01);
    assert!((c.zig_pmf[0] - (0.4 + 0.6 * 0.6)).abs() < 1e-12);
}

#[test]
fn curves_reject_bad_parameters() {
    assert!(density_curves(1.2, 20.0, 0.4, 0.6, 100, 10).is_err());
    assert!(density_curves(0.5, 1.5, 0.4, 0.6, 100, 10).is_err());
    assert!(density_curves(0.5, 20.0, 0.4, 0.6, 1, 10).is_err());
}

#[test]
fn violent_event_lands_in_the_top_class() {
    let event = EventInput {
        subject: "political".into(),
        predicate: 0.92,
        quantifier: 12,
        object: "civilian".into(),
    };
    let r = event_responsibilities(3, &event).unwrap();
    assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(r[2] > 0.9, "{r:?}");
    let calm = EventInput {
        predicate: 0.08,
        quantifier: 0,
        subject: "civilian".into(),
        object: "political".into(),
    };
    assert!(event_responsibilities(3, &calm).unwrap()[0] > 0.9);
    let bad = EventInput {
        subject: "pirate".into(),
        ..calm
    };
    assert!(event_responsibilities(3, &bad).is_err());
}

#[test]
fn small_fit_recovers_modes() {
    let r = simulate_and_fit(2, 400, 150, 7).unwrap();
    assert_eq!(r.true_modes, vec![0.1, 0.9]);
    for (t, f) in r.true_modes.iter().zip(&r.fitted_modes) {
        assert!((t - f).abs() < 0.05, "{:?}", r.fitted_modes);
    }
    assert!(r.accuracy > 0.9);
    assert!(simulate_and_fit(9, 400, 150, 7).is_err());
}
