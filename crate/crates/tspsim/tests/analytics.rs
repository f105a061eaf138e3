use approx::assert_relative_eq;
use tspsim::analytics::*;
use tspsim::channel::LargeScale;
use tspsim::frame::resource_ratio_ic;
use tspsim::signals::{NoiseVariances, PowerConfig, PowerPolicy, Powers};
use tspsim::topology::{assign_groups, bs_reuse_schedule, ic_cluster, GroupAssignment, HexLayout};

const K: usize = 2;
const N: usize = 2;

/// Seven cells, per-link gains chosen by hand: `beta_ljk = (1 + l + 2j + k) * 1e-3`,
/// `alpha_ld = (1 + l + d) * 1e-4`.
fn gains(cells: usize) -> LargeScale {
    let mut beta = Vec::new();
    for l in 0..cells {
        for j in 0..cells {
            for k in 0..K {
                beta.push((1 + l + 2 * j + k) as f64 * 1e-3);
            }
        }
    }
    let alpha = (0..cells * cells)
        .map(|i| {
            let (l, d) = (i / cells, i % cells);
            if l == d {
                0.0
            } else {
                (1 + l + d) as f64 * 1e-4
            }
        })
        .collect();
    LargeScale::from_parts(cells, K, beta, alpha)
}

fn powers(ls: &LargeScale) -> Powers {
    PowerConfig {
        ul_pilot: 0.5,
        ul_data: 0.25,
        dl_total: 8.0,
        bs_pilot: 4.0,
        noise: NoiseVariances {
            pilot: 1e-3,
            ul: 2e-3,
            cl: 3e-3,
            pd: 4e-3,
            bs: 5e-3,
        },
        policy: PowerPolicy::Uniform,
    }
    .allocate(ls)
}

fn setup(gamma: usize) -> (HexLayout, GroupAssignment, LargeScale) {
    let layout = HexLayout::from_cell_count(7, 500.0).unwrap();
    let groups = assign_groups(&layout, gamma).unwrap();
    (layout, groups, gains(7))
}

fn b(l: usize, j: usize, k: usize) -> f64 {
    (1 + l + 2 * j + k) as f64 * 1e-3
}

fn a(l: usize, d: usize) -> f64 {
    (1 + l + d) as f64 * 1e-4
}

#[test]
fn tsp_mscee_single_group() {
    let (_, groups, ls) = setup(1);
    let p = powers(&ls);
    let net = Network {
        groups: &groups,
        ls: &ls,
        powers: &p,
        pilot_len: N,
    };
    let e = mscee_tsp(&net, 0, 1);
    let pilot: f64 = (1..7).map(|j| b(0, j, 1)).sum();
    assert_relative_eq!(e.pilot, pilot, max_relative = 1e-12);
    assert_eq!(e.data, 0.0);
    assert_relative_eq!(e.noise, 1e-3 / (N as f64 * 0.5), max_relative = 1e-12);
    assert_relative_eq!(e.total(), pilot + 1e-3, max_relative = 1e-12);
}

#[test]
fn tsp_mscee_full_reuse_separation() {
    let (_, groups, ls) = setup(7);
    let p = powers(&ls);
    let net = Network {
        groups: &groups,
        ls: &ls,
        powers: &p,
        pilot_len: N,
    };
    for l in [0usize, 3] {
        let e = mscee_tsp(&net, l, 0);
        assert_eq!(e.pilot, 0.0);
        let sum_alpha: f64 = (0..7).filter(|&d| d != l).map(|d| a(l, d)).sum();
        assert_relative_eq!(
            e.data,
            8.0 / (N as f64 * 0.5) * sum_alpha,
            max_relative = 1e-12
        );
        assert_eq!(e.data_residual, 0.0);
    }
}

#[test]
fn ic_mscee_cancels_the_whole_cluster() {
    let (layout, groups, ls) = setup(7);
    let p = powers(&ls);
    let net = Network {
        groups: &groups,
        ls: &ls,
        powers: &p,
        pilot_len: N,
    };
    let schedule = bs_reuse_schedule(&layout, 6).unwrap();
    let cluster = ic_cluster(&layout, 0, 6).unwrap();
    let e = mscee_ic_tsp(&net, &schedule, &cluster, 0, 0);
    // seven slots for seven cells: nobody shares BS pilots
    assert_eq!(e.data, 0.0);
    assert_eq!(e.data_residual, 0.0);
    let nr = 6.0 * (8.0 / 4.0) * 5e-3 / (N as f64 * 0.5);
    assert_relative_eq!(e.noise_residual, nr, max_relative = 1e-12);
    assert_relative_eq!(e.noise, mscee_tsp(&net, 0, 0).noise);
}

#[test]
fn ic_mscee_with_partial_cluster() {
    let (layout, groups, ls) = setup(7);
    let p = powers(&ls);
    let net = Network {
        groups: &groups,
        ls: &ls,
        powers: &p,
        pilot_len: N,
    };
    let schedule = bs_reuse_schedule(&layout, 6).unwrap();
    let cluster = vec![1, 2];
    let e = mscee_ic_tsp(&net, &schedule, &cluster, 0, 0);
    let others: f64 = (3..7).map(|d| a(0, d)).sum();
    assert_relative_eq!(
        e.data,
        8.0 / (N as f64 * 0.5) * others,
        max_relative = 1e-12
    );
    let tsp = mscee_tsp(&net, 0, 0);
    assert!(e.data + e.data_residual < tsp.data);
}

#[test]
fn breakdown_helpers() {
    let e = MsceeBreakdown {
        pilot: 1.0,
        data: 2.0,
        noise: 0.5,
        data_residual: 0.25,
        noise_residual: 0.125,
    };
    assert_relative_eq!(e.total(), 3.875);
    assert_relative_eq!(e.shrunk(1.0), 3.875 / 4.875);
    let s = e.with_dl_scale(2.0);
    assert_relative_eq!(s.total(), 1.0 + 4.0 + 0.5 + 0.5 + 0.25);
    let d = e.sectorized(2);
    assert_relative_eq!(d.pilot, 0.5);
    assert_relative_eq!(d.data_residual, 0.125);
    assert_relative_eq!(d.data, 2.0);
}

#[test]
fn ul_terms_by_hand() {
    let (_, groups, ls) = setup(1);
    let p = powers(&ls);
    let net = Network {
        groups: &groups,
        ls: &ls,
        powers: &p,
        pilot_len: N,
    };
    let t = ul_terms(&net, 0, 1);
    assert_relative_eq!(t.beta, b(0, 0, 1));
    let corr: f64 = (1..7).map(|j| b(0, j, 1).powi(2)).sum();
    assert_relative_eq!(t.corr, corr, max_relative = 1e-12);
    let all: f64 = (0..7).flat_map(|j| (0..K).map(move |k| b(0, j, k))).sum();
    assert_relative_eq!(
        t.varsigma,
        all - b(0, 0, 1) + 2e-3 / 0.25,
        max_relative = 1e-12
    );
    let m = 100.0;
    let eps = 0.01;
    let expect =
        ((m + 1.0) * t.beta.powi(2) + eps * t.beta) / (m * corr + (t.beta + eps) * t.varsigma);
    assert_relative_eq!(
        sinr_ul(&net, eps, 0, 1, 100).sinr,
        expect,
        max_relative = 1e-12
    );
    assert_relative_eq!(t.ceiling(), t.beta.powi(2) / corr);
}

#[test]
fn dl_terms_by_hand() {
    let (_, groups, ls) = setup(1);
    let p = powers(&ls);
    let net = Network {
        groups: &groups,
        ls: &ls,
        powers: &p,
        pilot_len: N,
    };
    let t = dl_terms(&net, 0, 0, None);
    assert_eq!(t.peers.len(), 6);
    for pr in &t.peers {
        assert_relative_eq!(pr.coef, b(pr.cell, 0, 0).powi(2), max_relative = 1e-12);
        assert_relative_eq!(pr.beta, b(pr.cell, pr.cell, 0));
    }
    // every BS splits 8 W over K = 2 MSs
    let all: f64 = (0..7).map(|j| b(j, 0, 0)).sum();
    assert_relative_eq!(
        t.varsigma_pd,
        2.0 * all - b(0, 0, 0) + 4e-3 / 4.0,
        max_relative = 1e-12
    );
    assert_relative_eq!(
        t.varsigma_cl,
        2.0 * all - b(0, 0, 0) + 3e-3 / 4.0,
        max_relative = 1e-12
    );
    // with equal estimation quality the peer weight is (beta + eps) / (beta_j + eps_j)
    let eps = 1e-3;
    let peer_eps = vec![2e-3; 6];
    let s = t.sinr_pd(64.0, eps, &peer_eps);
    let corr: f64 = t
        .peers
        .iter()
        .map(|pr| (t.beta + eps) / (pr.beta + 2e-3) * pr.coef)
        .sum();
    assert_relative_eq!(s.correlated, 64.0 * corr, max_relative = 1e-12);
    let sec = t.sinr_cl_sectorized(64.0, eps, &peer_eps, 4);
    assert_relative_eq!(sec.correlated, 16.0 * corr, max_relative = 1e-12);
}

#[test]
fn pilot_mode_cells_leak_instead_of_interfering() {
    let (_, groups, ls) = setup(1);
    let p = powers(&ls);
    let net = Network {
        groups: &groups,
        ls: &ls,
        powers: &p,
        pilot_len: N,
    };
    let mu = vec![vec![1e-4, 2e-4]];
    let pm = PilotMode {
        cells: &[5],
        mu: &mu,
    };
    let t = dl_terms(&net, 0, 0, Some(&pm));
    let open: f64 = (0..7).filter(|&j| j != 5).map(|j| b(j, 0, 0)).sum();
    let leak = 0.5 / 4.0 * 3e-4;
    assert_relative_eq!(
        t.varsigma_cl,
        2.0 * open - b(0, 0, 0) + leak + 3e-3 / 4.0,
        max_relative = 1e-12
    );
}

#[test]
fn antennas_required_round_trip() {
    let terms = UlTerms {
        beta: 1.0,
        corr: 0.05,
        varsigma: 30.0,
    };
    for &(target, eps) in &[(1.0, 0.1), (5.0, 0.3), (10.0, 0.0)] {
        let r = antennas_required(target, &terms, eps).unwrap();
        assert!(r.m_t > 0.0);
        assert_relative_eq!(terms.sinr(r.m_t, eps).sinr, target, max_relative = 1e-10);
        assert!(r.lower_bound <= r.m_t);
    }
    assert!(antennas_required(25.0, &terms, 0.1).is_err());
}

#[test]
fn sinr_grows_with_m_to_the_ceiling() {
    let terms = UlTerms {
        beta: 1.0,
        corr: 0.1,
        varsigma: 10.0,
    };
    let mut prev = 0.0;
    for m in [16.0, 64.0, 256.0, 1024.0, 1e6] {
        let s = terms.sinr(m, 0.2).sinr;
        assert!(s > prev);
        prev = s;
    }
    assert!((prev - terms.ceiling()).abs() / terms.ceiling() < 1e-3);
}

/// At the crossover coherence time IC-TSP and TSP have the same SE.
#[test]
fn coherence_crossover_equalizes_se() {
    let (overhead, f_c, s, s_ic) = (128.0 * 19.0, 5usize, 2.0, 3.5);
    let t = min_bs_coherence(overhead, f_c, s, s_ic);
    let w_ic = resource_ratio_ic(overhead, f_c, t).unwrap();
    assert_relative_eq!(
        spectral_efficiency(s_ic, 1.0, w_ic),
        spectral_efficiency(s, 1.0, 1.0),
        max_relative = 1e-12
    );
    let longer = resource_ratio_ic(overhead, f_c, 2.0 * t).unwrap();
    assert!(spectral_efficiency(s_ic, 1.0, longer) > spectral_efficiency(s, 1.0, 1.0));
}

#[test]
fn spectral_efficiency_values() {
    assert_relative_eq!(spectral_efficiency(3.0, 0.5, 0.8), 0.8);
    assert_eq!(spectral_efficiency(-0.5, 1.0, 1.0), 0.0);
}

#[test]
fn sectors_must_divide_antennas() {
    assert!(check_sectors(4, 128).is_ok());
    assert!(check_sectors(3, 128).is_err());
    assert!(check_sectors(0, 128).is_err());
    let terms = UlTerms {
        beta: 1.0,
        corr: 0.4,
        varsigma: 10.0,
    };
    let one = sinr_ul_sectorized(&terms, 64.0, 0.1, 1);
    assert_relative_eq!(one.sinr, terms.sinr(64.0, 0.1).sinr);
    assert!(sinr_ul_sectorized(&terms, 64.0, 0.1, 4).sinr > one.sinr);
}
