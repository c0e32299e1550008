use heavyrush::fit::fit;
use heavyrush::graph::SpatialGraph;
use heavyrush::model::{Dataset, ModelSpec, ModelVariant};
use heavyrush::panel::AreaTime;
use heavyrush::sampler::ChainConfig;

fn toy() -> (Dataset, SpatialGraph) {
    let counts = AreaTime::from_rows(&[vec![3, 5, 4], vec![10, 12, 9], vec![1, 0, 2]]).unwrap();
    let data = Dataset::without_covariates(counts, vec![4.0, 10.0, 1.5]).unwrap();
    (data, SpatialGraph::path(3).unwrap())
}

fn cfg() -> ChainConfig {
    ChainConfig {
        iterations: 400,
        burn_in: 200,
        thin: 2,
        leapfrog_steps: 16,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn rushworth_fit_has_no_kappa_section() {
    let (data, g) = toy();
    let f = fit(&data, &g, ModelSpec::new(ModelVariant::R1), &cfg()).unwrap();
    assert!(f.outliers.is_none());
    assert!(f.parameter_names.iter().all(|p| !p.starts_with("kappa")));
    assert_eq!(f.fitted.len(), 9);
    assert_eq!(f.draws.len(), 2);
    assert_eq!(f.draws[0].len(), 100);
    assert_eq!(f.pooled("beta0").unwrap().len(), 200);
    assert!(f.pooled("nope").is_none());
    assert!(f.waic.waic.is_finite());
}

#[test]
fn kappa_fit_reports_every_area() {
    let (data, g) = toy();
    let f = fit(&data, &g, ModelSpec::new(ModelVariant::HRLPCAlpha), &cfg()).unwrap();
    let report = f.outliers.as_ref().unwrap();
    assert_eq!(report.areas.len(), 3);
    let k = f.kappa_draws();
    assert_eq!(k.len(), 200);
    assert!(k.iter().all(|row| row.len() == 3 && row.iter().all(|&v| v > 0.0)));
    assert!(f.parameter_names.contains(&"alpha".to_string()));
}

#[test]
fn fitted_values_are_posterior_mean_counts() {
    let (data, g) = toy();
    let f = fit(&data, &g, ModelSpec::new(ModelVariant::RAlpha), &cfg()).unwrap();
    // The fit should track the observed totals closely on such a small panel.
    let obs: f64 = data.counts().as_slice().iter().map(|&y| y as f64).sum();
    let fit_total: f64 = f.fitted.iter().sum();
    assert!((fit_total - obs).abs() / obs < 0.25, "{fit_total} vs {obs}");
}

#[test]
fn fits_are_reproducible() {
    let (data, g) = toy();
    let a = fit(&data, &g, ModelSpec::new(ModelVariant::HR1), &cfg()).unwrap();
    let b = fit(&data, &g, ModelSpec::new(ModelVariant::HR1), &cfg()).unwrap();
    assert_eq!(a, b);
}
