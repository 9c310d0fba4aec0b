//! The effective-target check compares a Monte Carlo mean against its
//! prediction with a 3·SE radius, so a single seed fails now and then by
//! chance. Over many seeds the standardized deviations must look like
//! draws from N(0, 1) and failures must stay rare.

use pseudoref::harness::run_check;

#[test]
fn standardized_deviations_are_centered_with_unit_spread() {
    let seeds = 300;
    let mut zs = Vec::with_capacity(seeds);
    let mut failures = 0;
    for seed in 0..seeds as u64 {
        let r = run_check("effective-target", seed).unwrap();
        failures += usize::from(!r.passed);
        let points = r.report["points"].as_array().unwrap();
        // Checkpoints share their redraws; take one per seed.
        let p = &points[points.len() / 2];
        let f = |k: &str| p[k].as_f64().unwrap();
        zs.push((f("mean") - f("expected")) / f("standard_error"));
    }
    let n = seeds as f64;
    let mean = zs.iter().sum::<f64>() / n;
    let sd = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() <= 3.0 / n.sqrt(), "mean z {mean}");
    assert!((0.85..=1.15).contains(&sd), "sd z {sd}");
    assert!(failures as f64 / n <= 0.02, "{failures} of {seeds} seeds failed");
}
