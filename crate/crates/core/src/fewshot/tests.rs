use super::*;
use proptest::prelude::*;

fn one_class(rows: &[&[f64]]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| r.to_vec()).collect()
}

fn diag_stats(class_id: usize, mean: Vec<f64>, diag: &[f64]) -> ClassStatistics<f64> {
    let mut q = Matrix::zeros(diag.len());
    for (i, &d) in diag.iter().enumerate() {
        q[(i, i)] = d;
    }
    ClassStatistics::from_parts(class_id, 1, mean, q, 0.0).unwrap()
}

/// Elongated class 0 around (−3, 0), round class 1 around (3, 0).
fn elongated_supports() -> BTreeMap<usize, Vec<Vec<f64>>> {
    let mut s = BTreeMap::new();
    s.insert(0, one_class(&[&[-5.0, 0.0], &[-1.0, 0.0], &[-3.0, 0.2], &[-3.0, -0.2]]));
    s.insert(1, one_class(&[&[2.7, 0.0], &[3.3, 0.0], &[3.0, 0.3], &[3.0, -0.3]]));
    s
}

#[test]
fn mean_is_class_midpoint() {
    let mut s = BTreeMap::new();
    s.insert(0, one_class(&[&[0.0, 0.0], &[2.0, 0.0]]));
    s.insert(1, one_class(&[&[5.0, 5.0]]));
    let stats = class_statistics(&s, 0.1, CovarianceMode::Blend).unwrap();
    assert_eq!(stats[0].mean, vec![1.0, 0.0]);
    assert_eq!(stats[0].count, 2);
}

#[test]
fn single_support_blend_is_half_task_covariance() {
    let mut s = BTreeMap::new();
    s.insert(0, one_class(&[&[0.0, 0.0]]));
    s.insert(1, one_class(&[&[2.0, 0.0]]));
    s.insert(2, one_class(&[&[1.0, 3.0]]));
    let stats = class_statistics(&s, 0.1, CovarianceMode::Blend).unwrap();

    // pooled covariance about the global mean (1, 1)
    let pts = [[0.0, 0.0], [2.0, 0.0], [1.0, 3.0]];
    let mut all = [[0.0f64; 2]; 2];
    for p in &pts {
        let d = [p[0] - 1.0, p[1] - 1.0];
        for i in 0..2 {
            for j in 0..2 {
                all[i][j] += d[i] * d[j] / 3.0;
            }
        }
    }
    for st in &stats {
        for i in 0..2 {
            for j in 0..2 {
                let want = 0.5 * all[i][j] + if i == j { 0.1 } else { 0.0 };
                assert!((st.covariance[(i, j)] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn covariance_is_symmetric_positive_definite() {
    let stats = class_statistics(&elongated_supports(), 1e-3, CovarianceMode::Blend).unwrap();
    for s in &stats {
        assert!(s.covariance.max_asymmetry() <= 1e-9);
        assert!(s.covariance.cholesky().is_some());
    }
}

#[test]
fn missing_and_singular_support_errors() {
    let mut s = elongated_supports();
    s.insert(2, vec![]);
    assert!(matches!(
        class_statistics(&s, 1e-3, CovarianceMode::Blend),
        Err(Error::MissingSupport { class_id: 2 })
    ));

    let mut s = BTreeMap::new();
    s.insert(0, one_class(&[&[1.0, 1.0]]));
    s.insert(1, one_class(&[&[1.0, 1.0]]));
    assert!(matches!(
        class_statistics(&s, 0.0, CovarianceMode::Blend),
        Err(Error::SingularCovariance { .. })
    ));
}

#[test]
fn mahalanobis_closed_forms() {
    let s = diag_stats(0, vec![0.0, 0.0], &[1.0, 1.0]);
    assert_eq!(mahalanobis_sq(&[3.0, 4.0], &s).unwrap(), 25.0);
    let s = diag_stats(0, vec![1.0, 1.0], &[4.0, 1.0]);
    assert!((mahalanobis_sq(&[3.0, 1.0], &s).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(mahalanobis_sq(&[1.0, 1.0], &s).unwrap(), 0.0);
    assert!(matches!(
        mahalanobis_sq(&[1.0], &s),
        Err(Error::DimensionMismatch { expected: 2, got: 1 })
    ));
}

#[test]
fn mahalanobis_works_in_f32() {
    let mut s: BTreeMap<usize, Vec<Vec<f32>>> = BTreeMap::new();
    s.insert(0, vec![vec![0.0, 0.0], vec![1.0, 0.5]]);
    s.insert(1, vec![vec![4.0, 4.0], vec![5.0, 3.0]]);
    let stats = class_statistics(&s, 1e-2, CovarianceMode::Blend).unwrap();
    let p = classify(&[vec![0.5f32, 0.2]], &stats, DistanceMode::Mahalanobis).unwrap();
    assert_eq!(p[0].class_id, 0);
}

#[test]
fn query_at_a_mean_wins_that_class() {
    let stats = class_statistics(&elongated_supports(), 1e-3, CovarianceMode::Blend).unwrap();
    let p = classify(&[vec![3.0, 0.0], vec![-3.0, 0.0]], &stats, DistanceMode::Mahalanobis).unwrap();
    assert_eq!(p[0].class_id, 1);
    assert!(p[0].scores[1] > p[0].scores[0]);
    assert_eq!(p[1].class_id, 0);
    assert!(classify(&[vec![0.0, 0.0]], &stats[..1], DistanceMode::Mahalanobis).is_err());
}

#[test]
fn elongated_class_wins_equidistant_query() {
    let stats = class_statistics(&elongated_supports(), 1e-3, CovarianceMode::Blend).unwrap();
    let q = [vec![0.0, 0.0]];
    let euclid = classify(&q, &stats, DistanceMode::Euclidean).unwrap();
    assert_eq!(euclid[0].distances[0], euclid[0].distances[1]);
    let maha = classify(&q, &stats, DistanceMode::Mahalanobis).unwrap();
    assert_eq!(maha[0].class_id, 0);
    assert!(maha[0].distances[0] < maha[0].distances[1]);
}

#[test]
fn identity_mode_agrees_with_euclidean() {
    let stats = class_statistics(&elongated_supports(), 0.0, CovarianceMode::Identity).unwrap();
    let queries: Vec<Vec<f64>> = (0..50)
        .map(|i| vec![i as f64 * 0.37 - 9.0, (i % 7) as f64 - 3.0])
        .collect();
    let a = classify(&queries, &stats, DistanceMode::Mahalanobis).unwrap();
    let b = classify(&queries, &stats, DistanceMode::Euclidean).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.class_id, y.class_id);
    }
}

#[test]
fn ridge_only_mode_ignores_other_classes() {
    let mut s = elongated_supports();
    let a = class_statistics(&s, 1e-3, CovarianceMode::RidgeOnly).unwrap();
    s.get_mut(&1).unwrap().push(vec![30.0, -20.0]);
    let b = class_statistics(&s, 1e-3, CovarianceMode::RidgeOnly).unwrap();
    assert_eq!(a[0].covariance, b[0].covariance);
}

#[test]
fn mean_locality_and_task_coupling() {
    let mut s = elongated_supports();
    let a = class_statistics(&s, 1e-3, CovarianceMode::Blend).unwrap();
    s.get_mut(&1).unwrap().push(vec![30.0, -20.0]);
    let b = class_statistics(&s, 1e-3, CovarianceMode::Blend).unwrap();
    assert_eq!(a[0].mean, b[0].mean);
    assert_ne!(a[0].covariance, b[0].covariance);
}

fn clusters(counts: &[usize], seed: u64) -> Vec<LabeledEmbedding<f64>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]];
    counts
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| std::iter::repeat_n(k, n))
        .map(|k| LabeledEmbedding {
            class_id: k,
            vector: centers[k].iter().map(|c| c + rng.random_range(-1.0..1.0)).collect(),
        })
        .collect()
}

fn labels() -> Vec<String> {
    ["With mask", "Without mask", "Mask worn incorrectly"]
        .map(String::from)
        .to_vec()
}

#[test]
fn separable_clusters_score_perfectly() {
    let train = clusters(&[30, 30, 30], 1);
    let data = EpisodeData {
        labels: labels(),
        train: train.clone(),
        validation: train,
    };
    let r = run_episode(&data, &EpisodeConfig::default()).unwrap();
    assert_eq!(r.accuracy, 1.0);
}

#[test]
fn validation_denominators_follow_the_query_set() {
    let data = EpisodeData {
        labels: labels(),
        train: clusters(&[60, 60, 60], 2),
        validation: clusters(&[183, 129, 40], 3),
    };
    let cfg = EpisodeConfig {
        support_size: SupportSize::Count(50),
        seed: 9,
        ..Default::default()
    };
    let r = run_episode(&data, &cfg).unwrap();
    let totals: Vec<u64> = r.per_class.iter().map(|c| c.total).collect();
    assert_eq!(totals, vec![183, 129, 40]);
    assert_eq!(r.confusion.total(), 352);
    assert_eq!(r, run_episode(&data, &cfg).unwrap());
}

#[test]
fn oversized_support_names_the_class() {
    let data = EpisodeData {
        labels: labels(),
        train: clusters(&[200, 200, 91], 4),
        validation: clusters(&[5, 5, 5], 5),
    };
    let cfg = EpisodeConfig {
        support_size: SupportSize::Count(100),
        ..Default::default()
    };
    match run_episode(&data, &cfg) {
        Err(Error::SupportTooLarge {
            class_name,
            requested,
            available,
        }) => {
            assert_eq!(class_name, "Mask worn incorrectly");
            assert_eq!((requested, available), (100, 91));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn undersample_cap_limits_the_pool() {
    let data = EpisodeData {
        labels: labels(),
        train: clusters(&[200, 100, 40], 6),
        validation: clusters(&[5, 5, 5], 7),
    };
    let cfg = EpisodeConfig {
        support_size: SupportSize::Count(50),
        undersample_cap: Some(40),
        ..Default::default()
    };
    assert!(matches!(run_episode(&data, &cfg), Err(Error::SupportTooLarge { .. })));
}

#[test]
fn sweep_produces_one_row_per_size() {
    let data = EpisodeData {
        labels: labels(),
        train: clusters(&[600, 600, 600], 8),
        validation: clusters(&[20, 20, 20], 9),
    };
    let sizes = [50, 100, 500]
        .map(SupportSize::Count)
        .into_iter()
        .chain([SupportSize::Full])
        .collect::<Vec<_>>();
    let t = sweep_support_sizes(&data, &sizes, &EpisodeConfig::default()).unwrap();
    assert_eq!(t.rows.len(), 4);
    let report = t.to_report("baseline");
    assert_eq!(report.rows[3].0, "Simple CNAPS-full");
    assert_eq!(report.rows[0].0, "Simple CNAPS-50");

    let one = sweep_support_sizes(&data, &sizes[..1], &EpisodeConfig::default()).unwrap();
    assert_eq!(one.rows.len(), 1);
    assert!(sweep_support_sizes(&data, &[], &EpisodeConfig::default()).is_err());

    let table = combine_sweeps(&[("A", &t), ("B", &t)]).unwrap();
    assert_eq!(table.columns.len(), 2);
    assert_eq!(table.rows.len(), 4);
    assert_eq!(table.rows[1].1, vec![Some(t.rows[1].accuracy); 2]);
    assert!(combine_sweeps(&[("A", &t), ("B", &one)]).is_err());
    assert!(combine_sweeps(&[]).is_err());
}

#[test]
fn support_size_parsing() {
    assert_eq!("full".parse::<SupportSize>().unwrap(), SupportSize::Full);
    assert_eq!("50".parse::<SupportSize>().unwrap(), SupportSize::Count(50));
    assert!("0".parse::<SupportSize>().is_err());
    assert!("x".parse::<SupportSize>().is_err());
}

proptest! {
    #[test]
    fn scores_sum_to_one(q in proptest::collection::vec(-20.0f64..20.0, 2)) {
        let stats = class_statistics(&elongated_supports(), 1e-3, CovarianceMode::Blend).unwrap();
        let p = classify(&[q], &stats, DistanceMode::Mahalanobis).unwrap();
        let s: f64 = p[0].scores.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-9);
        prop_assert!(p[0].distances.iter().all(|&d| d >= 0.0));
    }
}
