use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::*;
use crate::simulate::{chain_truth, gen_graph, sample_mvn, GraphKind, RngSeed};

fn nested(order: &[(usize, usize)]) -> Vec<(f64, BTreeSet<(usize, usize)>)> {
    let mut out = vec![(order.len() as f64 + 1.0, BTreeSet::new())];
    let mut cur = BTreeSet::new();
    for (i, e) in order.iter().enumerate() {
        cur.insert(*e);
        out.push(((order.len() - i) as f64, cur.clone()));
    }
    out
}

fn all_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|j| ((j + 1)..m).map(move |k| (j, k))).collect()
}

#[test]
fn perfect_ordering_has_unit_auc() {
    let g = gen_graph(GraphKind::Chain { m: 6 }, RngSeed::new(0)).unwrap();
    let mut order: Vec<_> = g.edges().iter().copied().collect();
    order.extend(all_pairs(6).into_iter().filter(|&(j, k)| !g.has_edge(j, k)));
    let roc = roc_from_supports(&nested(&order), &g).unwrap();
    assert!((roc.auc - 1.0).abs() < 1e-12);
    assert_eq!(roc.points[0].fpr, 0.0);
    assert_eq!(roc.points.last().unwrap().tpr, 1.0);
}

#[test]
fn empty_support_has_zero_auc() {
    let g = gen_graph(GraphKind::Chain { m: 4 }, RngSeed::new(0)).unwrap();
    let roc = roc_from_supports(&[(1.0, BTreeSet::new())], &g).unwrap();
    assert_eq!(roc.points, vec![RocPoint { lambda: 1.0, fpr: 0.0, tpr: 0.0 }]);
    assert_eq!(roc.auc, 0.0);
    assert!(roc_from_supports(&[(1.0, BTreeSet::new())], &Graph::empty(4)).is_err());
    let bad: BTreeSet<_> = [(2, 1)].into_iter().collect();
    assert!(roc_from_supports(&[(1.0, bad)], &g).is_err());
}

#[test]
fn random_orderings_average_half() {
    let g = gen_graph(GraphKind::Chain { m: 10 }, RngSeed::new(0)).unwrap();
    let mut rng = RngSeed::new(31).rng();
    let mut total = 0.0;
    for _ in 0..200 {
        let mut order = all_pairs(10);
        order.shuffle(&mut rng);
        let roc = roc_from_supports(&nested(&order), &g).unwrap();
        assert!((0.0..=1.0).contains(&roc.auc));
        let mut rev = order.clone();
        rev.reverse();
        let back = roc_from_supports(&nested(&rev), &g).unwrap();
        assert!((roc.auc + back.auc - 1.0).abs() < 1e-12);
        total += roc.auc;
    }
    assert!((total / 200.0 - 0.5).abs() < 0.05);
}

#[test]
fn path_roc_and_relabeling() {
    let truth = chain_truth(6).unwrap();
    let x = sample_mvn(truth.sigma.as_ref().unwrap(), 400, RngSeed::new(32)).unwrap();
    let roc = family_roc(&x, &truth.graph, FitFamily::Gaussian, &GridOptions::default()).unwrap();
    assert!(roc.auc > 0.9, "{}", roc.auc);
    assert!(roc.points.windows(2).all(|w| w[0].lambda > w[1].lambda));
    let last = roc.points.last().unwrap();
    assert_eq!((last.fpr, last.tpr), (1.0, 1.0));

    let perm = [4, 2, 0, 5, 1, 3];
    let vals = x.values();
    let px = DataMatrix::new(nalgebra::DMatrix::from_fn(vals.nrows(), 6, |i, j| {
        let src = perm.iter().position(|&p| p == j).unwrap();
        vals[(i, src)]
    }))
    .unwrap();
    let pg = Graph::new(6, truth.graph.edges().iter().map(|&(a, b)| (perm[a], perm[b]))).unwrap();
    let proc_ = family_roc(&px, &pg, FitFamily::Gaussian, &GridOptions::default()).unwrap();
    assert!((roc.auc - proc_.auc).abs() < 1e-9);
}

#[test]
fn family_domain_mismatch() {
    let truth = chain_truth(4).unwrap();
    let x = sample_mvn(truth.sigma.as_ref().unwrap(), 50, RngSeed::new(33)).unwrap();
    assert!(auc_comparison(&x, &truth.graph, &[FitFamily::TruncatedGaussian], &GridOptions::default()).is_err());
    let res = auc_comparison(
        &x,
        &truth.graph,
        &[FitFamily::Gaussian, FitFamily::NormalConditionalsGroup],
        &GridOptions { count: 10, ..GridOptions::default() },
    )
    .unwrap();
    assert_eq!(res.len(), 2);
    assert!(res.iter().all(|r| (0.0..=1.0).contains(&r.auc)));
}

#[test]
fn degree_histograms() {
    let star = gen_graph(GraphKind::Star { m: 21, d: 20 }, RngSeed::new(0)).unwrap();
    assert_eq!(degree_distribution(&star).into_iter().collect::<Vec<_>>(), vec![(1, 20), (20, 1)]);
    let chain = gen_graph(GraphKind::Chain { m: 4 }, RngSeed::new(0)).unwrap();
    assert_eq!(degree_distribution(&chain).into_iter().collect::<Vec<_>>(), vec![(1, 2), (2, 2)]);
    assert_eq!(degree_distribution(&Graph::empty(5)).into_iter().collect::<Vec<_>>(), vec![(0, 5)]);
}

#[test]
fn alignment_basics() {
    let c: Curve = vec![(1.0, 0.0), (2.0, 0.5), (3.0, 1.0)];
    assert_eq!(curve_alignment(&[c.clone(), c.clone()]).unwrap(), 0.0);
    let shifted: Curve = c.iter().map(|(x, y)| (x + 0.5, *y)).collect();
    // on [1.5, 3] the gap is largest at x = 1.5..3 where the slopes coincide
    assert!((curve_alignment(&[c.clone(), shifted]).unwrap() - 0.25).abs() < 1e-12);
    let far: Curve = c.iter().map(|(x, y)| (x + 10.0, *y)).collect();
    assert!(curve_alignment(&[c.clone(), far]).is_err());
    assert!(curve_alignment(&[c]).is_err());
}

fn small_config(trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        design: Design::VaryMChain,
        grid: vec![GridPoint { value: 20.0, n: vec![100, 400] }, GridPoint { value: 30.0, n: vec![100, 400] }],
        trials,
        lambda_constant: 0.6,
        rescale_exponent: None,
        rate_exponent: None,
        m: None,
        seed: 5,
        zero_tol: 1e-6,
    }
}

#[test]
fn recovery_is_reproducible() {
    let cfg = small_config(8);
    let a = recovery_probability(&cfg).unwrap();
    let b = recovery_probability(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 4);
    assert!((a.rows[0].rescaled_n - 100.0 / 20f64.ln()).abs() < 1e-12);
    let mut buf = Vec::new();
    a.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("grid,n,rescaled_n,success"));
    let by_n = |n| a.rows.iter().filter(|r| r.n == n).map(|r| r.success).sum::<f64>();
    assert!(by_n(400) >= by_n(100));
    let aligned = rescale_alignment(&a, |n, v| n as f64 / v.ln()).unwrap();
    assert!((0.0..=1.0).contains(&aligned));
}

#[test]
fn tiny_samples_fail() {
    let cfg = ExperimentConfig {
        grid: vec![GridPoint { value: 64.0, n: vec![10] }],
        trials: 20,
        ..small_config(1)
    };
    let t = recovery_probability(&cfg).unwrap();
    assert!(t.rows[0].success <= 0.05);
}

#[test]
fn config_validation() {
    let mut cfg = small_config(0);
    assert!(cfg.validate().is_err());
    cfg.trials = 1;
    cfg.design = Design::VaryMLattice;
    assert!(cfg.validate().is_err());
    cfg.grid = vec![GridPoint { value: 16.0, n: vec![50] }];
    assert!(cfg.validate().is_ok());
    let err = serde_json::from_str::<ExperimentConfig>(r#"{"design":"vary_m_chain","grid":[],"lambda_constant":1}"#)
        .unwrap_err()
        .to_string();
    assert!(err.contains("trials"), "{err}");
    let star = ExperimentConfig { design: Design::VaryDStar, grid: vec![GridPoint { value: 15.0, n: vec![450] }], ..small_config(1) };
    assert_eq!(star.rescaled_n(450, 15.0).unwrap(), 2.0);
    assert_eq!(star.num_nodes(15.0).unwrap(), 200);
}

#[test]
fn nonneg_design_runs() {
    let cfg = ExperimentConfig {
        design: Design::NonnegChainScaling,
        grid: vec![GridPoint { value: 10.0, n: vec![300] }],
        trials: 2,
        lambda_constant: 0.01,
        ..small_config(1)
    };
    let t = recovery_probability(&cfg).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert!((t.rows[0].rescaled_n - 300.0 / 10f64.ln().powi(8)).abs() < 1e-12);
}

#[test]
fn calibration_picks_a_candidate() {
    let cfg = small_config(4);
    let (c, scores) = calibrate_lambda_constant(&cfg, &[0.05, 0.6]).unwrap();
    assert_eq!(scores.len(), 2);
    assert!(c == 0.05 || c == 0.6);
    assert!(scores.iter().all(|s| s.1 <= scores.iter().find(|t| t.0 == c).unwrap().1));
}
