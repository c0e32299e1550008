use super::*;
use crate::simulate::{ContaminationSpec, GraphSpec, KappaTruth, LatentSharing, OffsetSpec, TrueParameters};

fn scenario(replicates: usize, contaminated: bool) -> SimulationScenario {
    SimulationScenario {
        graph: GraphSpec::Ring { n: 6 },
        n_times: 4,
        truth: TrueParameters {
            beta0: 0.5,
            lambda: 0.7,
            sigma: 0.2,
            alpha: 1.0,
            kappa: KappaTruth::None,
        },
        offsets: OffsetSpec::Given {
            values: vec![5.0, 20.0, 60.0, 120.0, 250.0, 40.0],
        },
        contamination: contaminated.then(|| ContaminationSpec::new(vec![2, 4])),
        replicates,
        seed: 77,
        latents: LatentSharing::Shared,
        soft_sum_to_zero: false,
    }
}

fn cfg() -> ChainConfig {
    ChainConfig {
        iterations: 300,
        burn_in: 150,
        thin: 1,
        leapfrog_steps: 16,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn rushworth_only_study_has_no_detection() {
    let report = run_study(&scenario(1, false), &[ModelVariant::R1], &cfg()).unwrap();
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    assert!(row.waic.is_some());
    assert!(row.detection.is_none() && row.flagged.is_none());
    assert!(row.mse_contaminated.is_none());
    assert!(report.areas.iter().all(|a| a.frequency.is_empty()));
}

#[test]
fn rows_are_ordered_and_match_standalone_fits() {
    let s = scenario(2, true);
    let models = [ModelVariant::R1, ModelVariant::HR1];
    let report = run_study(&s, &models, &cfg()).unwrap();
    let order: Vec<(usize, ModelVariant)> = report.rows.iter().map(|r| (r.replicate, r.model)).collect();
    assert_eq!(
        order,
        vec![
            (0, ModelVariant::R1),
            (0, ModelVariant::HR1),
            (1, ModelVariant::R1),
            (1, ModelVariant::HR1)
        ]
    );
    let g = s.validate().unwrap();
    let alone = score_replicate(&s.replicate(1).unwrap(), &g, ModelVariant::HR1, &replicate_config(&cfg(), 1));
    assert_eq!(report.rows[3], alone);
}

#[test]
fn study_is_deterministic_across_pool_sizes() {
    let s = scenario(2, true);
    let models = [ModelVariant::HR1];
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let a = one.install(|| run_study(&s, &models, &cfg())).unwrap();
    let b = run_study(&s, &models, &cfg()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn replicates_get_distinct_chain_seeds() {
    let c = cfg();
    assert_ne!(replicate_config(&c, 0).seed, replicate_config(&c, 1).seed);
    assert_eq!(replicate_config(&c, 3).iterations, c.iterations);
}

#[test]
fn overall_mse_sits_between_subsets() {
    let report = run_study(&scenario(2, true), &[ModelVariant::R1, ModelVariant::HR1], &cfg()).unwrap();
    for row in &report.rows {
        let (c, k, o) = (row.mse_contaminated.unwrap(), row.mse_clean.unwrap(), row.mse_overall.unwrap());
        assert!(c.min(k) - 1e-9 <= o && o <= c.max(k) + 1e-9, "{c} {k} {o}");
        // Two of six areas are contaminated, so the overall MSE is the 2:4 weighted mean.
        assert!((o - (2.0 * c + 4.0 * k) / 6.0).abs() < 1e-9 * o.max(1.0));
    }
}

fn row(replicate: usize, status: FitStatus, waic: f64, flagged: Vec<usize>) -> StudyRow {
    let truth = [false, false, true, false, true, false];
    let flags: Vec<bool> = (0..6).map(|i| flagged.contains(&i)).collect();
    let cats = ["a"; 6];
    StudyRow {
        replicate,
        model: ModelVariant::HR1,
        status,
        max_rhat: Some(1.0),
        divergences: Some(0),
        waic: Some(waic),
        p_w: Some(waic / 10.0),
        mse_contaminated: Some(waic),
        mse_clean: Some(1.0),
        mse_overall: Some(waic),
        detection: Some(score_detection(&flags, &truth, &cats).unwrap()),
        flagged: Some(flagged),
    }
}

#[test]
fn aggregates_skip_unconverged_and_failed_fits() {
    let rows = vec![
        row(0, FitStatus::Converged, 10.0, vec![2, 4]),
        row(1, FitStatus::NotConverged, 1000.0, vec![0]),
        row(2, FitStatus::Converged, 20.0, vec![2, 5]),
        StudyRow::failed(3, ModelVariant::HR1, &Error::GradientUnavailable),
    ];
    let agg = aggregate(ModelVariant::HR1, &rows);
    assert_eq!((agg.converged, agg.not_converged, agg.failed), (2, 1, 1));
    assert_eq!(agg.waic, Some(15.0));
    assert_eq!(agg.mse_contaminated, Some(15.0));
    assert_eq!(agg.sensitivity, Some(75.0));
    // Specificities 100 and 75.
    assert_eq!(agg.specificity, Some(87.5));
    let pooled = agg.pooled_detection.unwrap();
    assert_eq!(pooled.overall, Confusion { tp: 3, fp: 1, tn: 7, fn_: 1 });

    let truth = [false, false, true, false, true, false];
    let areas = area_detection(&[ModelVariant::R1, ModelVariant::HR1], &rows, &[1.0; 6], &truth);
    let freq: Vec<f64> = areas.iter().map(|a| a.frequency[&ModelVariant::HR1]).collect();
    assert_eq!(freq, vec![0.0, 0.0, 100.0, 0.0, 50.0, 50.0]);
    assert!(areas.iter().all(|a| !a.frequency.contains_key(&ModelVariant::R1)));
    // A clean area's frequency is its share of the pooled false positives.
    let clean_hits: f64 = areas.iter().filter(|a| !a.contaminated).map(|a| a.frequency[&ModelVariant::HR1]).sum();
    assert_eq!(clean_hits / 100.0 * 2.0, pooled.overall.fp as f64);
}

#[test]
fn empty_model_list_is_rejected() {
    assert!(run_study(&scenario(1, false), &[], &cfg()).is_err());
}

#[test]
fn report_round_trips_through_json() {
    let report = run_study(&scenario(1, true), &[ModelVariant::HR1], &cfg()).unwrap();
    let text = serde_json::to_string(&report).unwrap();
    let back: StudyReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
}
