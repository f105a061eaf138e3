use approx::assert_relative_eq;
use tspsim::montecarlo::*;
use tspsim::ScenarioConfig;

/// Two-sided 95 % standard normal quantile.
const Z: f64 = 1.959_963_984_540_054;

fn small() -> ScenarioConfig {
    ScenarioConfig::default()
        .with_override("layout.cells", "19")
        .unwrap()
        .with_override("ic.cluster_size", "6")
        .unwrap()
}

/// Ratio-of-sums statistic with a leave-one-drop-out variance, spelled out.
#[test]
fn jackknife_matches_brute_force() {
    let rows = vec![
        vec![1.0, 4.0],
        vec![2.0, 3.0],
        vec![0.5, 5.0],
        vec![3.0, 2.5],
    ];
    let ratio = |t: &[f64]| t[0] / t[1];
    let e = jackknife(&rows, 40, ratio);
    assert_relative_eq!(e.mean, 6.5 / 14.5, max_relative = 1e-12);
    let loo: Vec<f64> = (0..4)
        .map(|i| {
            let (mut a, mut b) = (0.0, 0.0);
            for (j, r) in rows.iter().enumerate() {
                if j != i {
                    a += r[0];
                    b += r[1];
                }
            }
            a / b
        })
        .collect();
    let m = loo.iter().sum::<f64>() / 4.0;
    let var = 3.0 / 4.0 * loo.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    assert_relative_eq!(e.half_width, Z * var.sqrt(), max_relative = 1e-12);
    assert_eq!(e.n, 40);
    assert_eq!(jackknife(&rows[..1], 1, ratio).half_width, 0.0);
}

/// For a plain mean the jackknife reproduces the classical standard error.
#[test]
fn jackknife_of_a_mean_is_the_standard_error() {
    let x = [1.0, 2.0, 4.0, 8.0, 16.0];
    let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![v, 1.0]).collect();
    let e = jackknife(&rows, 5, |t| t[0] / t[1]);
    let mean = x.iter().sum::<f64>() / 5.0;
    let s2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    assert_relative_eq!(e.mean, mean);
    assert_relative_eq!(e.half_width, Z * (s2 / 5.0).sqrt(), max_relative = 1e-12);
}

#[test]
fn cdf_ends_at_one() {
    let c = empirical_cdf(vec![0.3, 0.1, 0.2, 0.2]);
    assert_eq!(c.first().unwrap(), &(0.1, 0.25));
    assert_eq!(c.last().unwrap(), &(0.3, 1.0));
    assert!(c.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
}

#[test]
fn drops_are_reproducible() {
    let sc = Scenario::new(&small()).unwrap();
    let a = sc.run_drop(5, 2).unwrap();
    let b = sc.run_drop(5, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, sc.run_drop(5, 3).unwrap());
    assert_ne!(a, sc.run_drop(6, 2).unwrap());
    assert_eq!(a.drop, 2);
}

#[test]
fn records_are_consistent() {
    let sc = Scenario::new(&small()).unwrap();
    let d = sc.run_drop(1, 0).unwrap();
    assert!(!d.ms.is_empty());
    for r in &d.ms {
        assert!(r.beta > 0.0);
        assert_eq!(r.beta, r.ul.beta);
        // cancelling cluster cells can only remove unresidualised DL terms
        assert!(r.ic.data <= r.tsp.data);
        assert_relative_eq!(r.ic.pilot, r.tsp.pilot);
        assert_relative_eq!(r.ic.noise, r.tsp.noise);
        assert!(r.cancelled >= 0.0);
        assert_eq!(r.peer_tsp.len(), r.dl.peers.len());
        assert_eq!(r.peer_ic.len(), r.dl.peers.len());
    }
}

#[test]
fn bad_scenarios_are_rejected() {
    let c = ScenarioConfig::default()
        .with_override("groups.count", "5")
        .unwrap();
    assert!(Scenario::new(&c).is_err());
}

#[test]
fn cs_breakdown_adds_the_omp_error() {
    let cfg = small();
    let sc = Scenario::new(&cfg).unwrap();
    let d = sc.run_drop(1, 0).unwrap();
    let ls = EvalPoint::from_config(&cfg, Scheme::IcLs);
    let cs = EvalPoint {
        cs_nmse: 0.01,
        ..EvalPoint::from_config(&cfg, Scheme::IcCs)
    };
    for r in &d.ms {
        assert_relative_eq!(
            cs.mscee(r).total(),
            ls.mscee(r).total() + 0.01 * r.cancelled,
            max_relative = 1e-12
        );
    }
}

#[test]
fn dl_scale_solution_hits_its_target() {
    let cfg = small();
    let mut runner = Runner::new(1).unwrap();
    let recs = runner.records(&cfg, 3, 4).unwrap();
    for scheme in [Scheme::Tsp, Scheme::IcLs] {
        let pt = EvalPoint::from_config(&cfg, scheme);
        for target_db in [-15.0f64, -5.0] {
            let target = 10f64.powf(target_db / 10.0);
            let s = solve_dl_scale(&recs, &pt, target);
            let at = EvalPoint { dl_scale: s, ..pt };
            let (mut e, mut b) = (0.0, 0.0);
            for d in recs.iter() {
                for r in &d.ms {
                    e += at.mscee(r).total();
                    b += r.beta;
                }
            }
            assert_relative_eq!(e / b, target, max_relative = 1e-9);
        }
    }
}

fn tiny_spec(workers: usize) -> ExperimentSpec {
    ExperimentSpec {
        name: "tiny".into(),
        scenario: small(),
        series: vec![
            Series::new("TSP", Scheme::Tsp),
            Series::new("IC", Scheme::IcLs),
        ],
        sweep: Sweep::Key {
            key: "system.antennas".into(),
            values: vec![64.0, 256.0],
        },
        metrics: vec![Metric::Mscee, Metric::SinrUl, Metric::SpectralEfficiency],
        drops: 6,
        seed: 9,
        workers,
        signal: false,
    }
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let a = Runner::new(1).unwrap().run(&tiny_spec(1)).unwrap();
    let b = Runner::new(3).unwrap().run(&tiny_spec(3)).unwrap();
    assert_eq!(a, b);
    assert!(!a.is_empty());
    let ul = a.series_values(Metric::SinrUl, "TSP");
    assert_eq!(ul.len(), 2);
    assert!(ul[1].1.mean > ul[0].1.mean);
    // MSCEE does not depend on the antenna count
    let e = a.series_values(Metric::Mscee, "IC");
    assert_eq!(e[0].1, e[1].1);
}

#[test]
fn presets_build_and_validate() {
    assert_eq!(PRESETS.len(), 9);
    for p in PRESETS {
        let s = preset(p).unwrap();
        s.validate().unwrap();
        assert!(!s.metrics.is_empty(), "{p}");
    }
    assert!(preset("fig99").is_err());
}

#[test]
fn metric_names_round_trip() {
    for m in Metric::ALL {
        assert_eq!(Metric::from_name(m.name()), Some(m));
    }
    assert_eq!(Metric::from_name("nope"), None);
}

/// Signal level against closed form on a short run: the pooled normalised
/// LS error of the target cell agrees with the analytic record.
#[test]
fn simulated_mscee_tracks_the_formula() {
    let cfg = small().with_override("system.antennas", "16").unwrap();
    let sc = Scenario::new(&cfg).unwrap();
    let opts = SimOptions {
        realizations: 60,
        target: 0,
        dl_scale: 1.0,
        ic: true,
        cs: false,
    };
    let (mut sim, mut sim_ic, mut ana, mut ana_ic) = (0.0, 0.0, 0.0, 0.0);
    for drop in 0..2 {
        let s = sc.simulate_drop(4, drop, &opts).unwrap();
        let d = sc.run_drop(4, drop).unwrap();
        for m in &s.ms {
            let r =
                d.ms.iter()
                    .find(|r| r.cell == s.cell && r.ms == m.ms)
                    .unwrap();
            sim += m.mscee_tsp();
            sim_ic += m.err_ic / m.realizations as f64;
            ana += r.tsp.total();
            ana_ic += r.ic.total();
        }
    }
    let db = |x: f64| 10.0 * x.log10();
    assert!(
        (db(sim) - db(ana)).abs() < 0.5,
        "{} vs {}",
        db(sim),
        db(ana)
    );
    assert!(
        (db(sim_ic) - db(ana_ic)).abs() < 0.5,
        "{} vs {}",
        db(sim_ic),
        db(ana_ic)
    );
}
