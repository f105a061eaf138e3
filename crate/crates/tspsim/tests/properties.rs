use num_complex::Complex64;
use proptest::prelude::*;
use tspsim::analytics::*;
use tspsim::channel::{pathloss_gain, CMatrix, CVector};
use tspsim::estimation::{cs_pilot_length, omp};
use tspsim::montecarlo::jackknife;
use tspsim::rng::{complex_normal, LinkClass, Streams};
use tspsim::topology::{assign_groups, valid_group_numbers, HexLayout};
use tspsim::ScenarioConfig;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pathloss_decreases_with_distance(d in 1.0f64..5000.0, step in 0.1f64..100.0, eta in 2.1f64..5.0, sh in -20.0f64..20.0) {
        let near = pathloss_gain(d, eta, sh).unwrap();
        let far = pathloss_gain(d + step, eta, sh).unwrap();
        prop_assert!(far < near);
        prop_assert!((near / pathloss_gain(d, eta, 0.0).unwrap() - 10f64.powf(sh / 10.0)).abs() < 1e-9 * 10f64.powf(sh / 10.0));
    }

    #[test]
    fn antennas_required_inverts_the_sinr(
        beta in 1e-3f64..1.0,
        corr_frac in 0.0f64..0.5,
        varsigma in 1.0f64..100.0,
        eps_frac in 0.0f64..2.0,
        target_frac in 0.05f64..0.95,
    ) {
        let corr = corr_frac * beta * beta;
        let terms = UlTerms { beta, corr, varsigma };
        let eps = eps_frac * beta;
        let target = if corr > 0.0 { target_frac * terms.ceiling() } else { 10.0 * target_frac };
        let r = antennas_required(target, &terms, eps).unwrap();
        if r.m_t > 0.0 {
            let s = terms.sinr(r.m_t, eps).sinr;
            prop_assert!((s - target).abs() <= 1e-8 * target);
        }
    }

    #[test]
    fn sinr_increases_with_antennas(beta in 1e-3f64..1.0, c in 0.0f64..0.9, v in 0.1f64..50.0, e in 0.0f64..1.0, m in 1.0f64..4096.0) {
        let terms = UlTerms { beta, corr: c * beta * beta, varsigma: v };
        prop_assert!(terms.sinr(2.0 * m, e).sinr >= terms.sinr(m, e).sinr);
    }

    #[test]
    fn shrinkage_never_increases_the_error(p in 0.0f64..10.0, d in 0.0f64..10.0, n in 0.0f64..10.0, beta in 1e-6f64..10.0) {
        let b = MsceeBreakdown { pilot: p, data: d, noise: n, ..Default::default() };
        let s = b.shrunk(beta);
        prop_assert!(s <= b.total() + 1e-15);
        prop_assert!(s <= beta + 1e-15);
    }

    #[test]
    fn spectral_efficiency_is_monotone(s in 0.0f64..1e4, ds in 0.0f64..10.0, w in 0.0f64..1.0) {
        prop_assert!(spectral_efficiency(s + ds, 1.0, w) >= spectral_efficiency(s, 1.0, w));
    }

    #[test]
    fn coherence_threshold_is_positive_when_ic_helps(o in 1.0f64..1e5, s in 0.0f64..100.0, gain in 1.001f64..10.0) {
        let t = min_bs_coherence(o, 5, s, s * gain + 0.01);
        prop_assert!(t > o / 5.0);
    }

    #[test]
    fn cs_pilots_exceed_the_sparsity(m in 1usize..2048, frac in 0.0f64..1.0) {
        let s = ((frac * m as f64) as usize).clamp(1, m);
        let t = cs_pilot_length(s, m);
        prop_assert!(t >= s);
        prop_assert!(t <= 2 * m);
    }

    #[test]
    fn jackknife_ratio_is_scale_free(rows in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0), 2..20), c in 0.01f64..100.0) {
        let a: Vec<Vec<f64>> = rows.iter().map(|&(x, y)| vec![x, y]).collect();
        let b: Vec<Vec<f64>> = rows.iter().map(|&(x, y)| vec![c * x, c * y]).collect();
        let f = |t: &[f64]| t[0] / t[1];
        let (ea, eb) = (jackknife(&a, 1, f), jackknife(&b, 1, f));
        prop_assert!((ea.mean - eb.mean).abs() <= 1e-12 * ea.mean);
        prop_assert!((ea.half_width - eb.half_width).abs() <= 1e-9 * ea.mean.max(ea.half_width));
    }

    #[test]
    fn groups_partition_the_layout(idx in 0usize..6, rings in 2usize..5) {
        let gamma = valid_group_numbers(13)[idx + 1];
        let l = HexLayout::from_cell_count(1 + 3 * rings * (rings + 1), 500.0).unwrap();
        let g = assign_groups(&l, gamma).unwrap();
        prop_assert_eq!(g.members.len(), gamma);
        for c in 0..l.len() {
            prop_assert!(g.members_of(g.group(c)).contains(&c));
        }
    }

    #[test]
    fn antenna_override_round_trips(m in 1usize..10000) {
        let c = ScenarioConfig::default().with_override("system.antennas", &m.to_string()).unwrap();
        prop_assert_eq!(c.system.antennas, m);
        prop_assert_eq!(ScenarioConfig::parse(&c.to_flat_string()).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn omp_recovers_random_supports(seed in 0u64..1000, s in 1usize..6) {
        let mut rng = Streams::new(seed, 0).rng(LinkClass::BsPilot, &[]);
        let (rows, cols) = (48, 96);
        let phi = CMatrix::from_fn(rows, cols, |_, _| complex_normal(&mut rng, 1.0));
        let mut x = CVector::zeros(cols);
        for k in 0..s {
            x[(seed as usize * 7 + k * 17) % cols] = Complex64::new(1.0 + k as f64, -0.5);
        }
        let y = &phi * &x;
        let r = omp(&phi, &y, s);
        prop_assert!((r.coefficients - &x).norm() < 1e-8 * x.norm());
    }
}
