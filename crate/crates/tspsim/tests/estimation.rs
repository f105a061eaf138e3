use approx::assert_relative_eq;
use num_complex::Complex64;
use rand::Rng;
use tspsim::channel::{loyka_correlation, ula_steering, BsBsChannel, CMatrix, CVector, LargeScale};
use tspsim::estimation::*;
use tspsim::rng::{complex_normal, LinkClass, Streams};
use tspsim::signals::*;

fn cvec(n: usize, rng: &mut impl Rng) -> CVector {
    CVector::from_fn(n, |_, _| complex_normal(rng, 1.0))
}

fn cmat(r: usize, c: usize, var: f64, rng: &mut impl Rng) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| complex_normal(rng, var))
}

fn powers(cells: usize, k: usize, noise: f64, rho: f64) -> Powers {
    let ls = LargeScale::from_parts(
        cells,
        k,
        vec![1.0; cells * cells * k],
        vec![0.0; cells * cells],
    );
    PowerConfig {
        ul_pilot: rho,
        ul_data: rho,
        dl_total: 10.0,
        bs_pilot: 10.0,
        noise: NoiseVariances::uniform(noise),
        policy: PowerPolicy::Uniform,
    }
    .allocate(&ls)
}

fn rng(id: u64) -> rand_chacha::ChaCha8Rng {
    Streams::new(100, id).rng(LinkClass::Noise, &[id])
}

#[test]
fn ls_is_exact_without_interference() {
    let mut r = rng(1);
    let (m, k, n) = (16, 3, 6);
    let p = powers(1, k, 0.0, 0.2);
    let book = make_pilot_book(k, n).unwrap();
    let corr = loyka_correlation(m, 0.0).unwrap();
    let h: Vec<CVector> = (0..k).map(|_| cvec(m, &mut r)).collect();
    let b = compose_received_pilot(
        &GroupCell {
            cell: 0,
            channels: &h,
        },
        &[],
        &[],
        &p,
        &book,
        &corr,
        CMatrix::zeros(m, n),
    );
    for (kk, truth) in h.iter().enumerate() {
        let e = ls_estimate(&b, truth, &book, kk, 0.2);
        assert!(e.error.norm() < 1e-12 * truth.norm());
        assert!(e.mscee() < 1e-20);
    }
}

#[test]
fn ls_error_terms_sum_to_the_error() {
    let mut r = rng(2);
    let (m, k, n) = (8, 2, 4);
    let p = powers(4, k, 0.05, 0.2);
    let book = make_pilot_book(k, n).unwrap();
    let corr = loyka_correlation(m, 0.8).unwrap();
    let own: Vec<CVector> = (0..k).map(|_| cvec(m, &mut r)).collect();
    let peer: Vec<CVector> = (0..k).map(|_| cvec(m, &mut r)).collect();
    let g = BsBsChannel::sample(
        0.2,
        10.0,
        ula_steering(m, 0.2),
        ula_steering(m, 1.0),
        &mut r,
    );
    let tx = cmat(m, n, 1.0, &mut r);
    let noise = cmat(m, n, 0.05, &mut r);
    let b = compose_received_pilot(
        &GroupCell {
            cell: 0,
            channels: &own,
        },
        &[GroupCell {
            cell: 1,
            channels: &peer,
        }],
        &[DlInterferer {
            cell: 3,
            channel: &g,
            transmitted: &tx,
        }],
        &p,
        &book,
        &corr,
        noise,
    );
    let e = ls_estimate(&b, &own[1], &book, 1, 0.2);
    assert!((e.terms_sum() - &e.error).norm() < 1e-10 * e.error.norm());
    // with orthogonal pilots the pilot term is exactly the co-group channel
    assert!((e.term(Term::Pilot).unwrap() - &peer[1]).norm() < 1e-10);
    let lm = lmmse_surrogate(&e, &own[1], 1.0, e.mscee());
    assert!((lm.terms_sum() - &lm.error).norm() < 1e-10 * lm.error.norm());
}

/// Noise-only LS error: `sigma^2 / (N rho)` per antenna.
#[test]
fn noise_limited_mscee() {
    let mut r = rng(3);
    let (m, k, n) = (32, 2, 8);
    let (sigma2, rho) = (0.4, 0.2);
    let p = powers(1, k, sigma2, rho);
    let book = make_pilot_book(k, n).unwrap();
    let corr = loyka_correlation(m, 0.0).unwrap();
    let trials = 500;
    let mut acc = 0.0;
    for _ in 0..trials {
        let h: Vec<CVector> = (0..k).map(|_| cvec(m, &mut r)).collect();
        let noise = cmat(m, n, sigma2, &mut r);
        let b = compose_received_pilot(
            &GroupCell {
                cell: 0,
                channels: &h,
            },
            &[],
            &[],
            &p,
            &book,
            &corr,
            noise,
        );
        acc += ls_estimate(&b, &h[0], &book, 0, rho).mscee();
    }
    assert_relative_eq!(
        acc / trials as f64,
        sigma2 / (n as f64 * rho),
        max_relative = 0.03
    );
}

#[test]
fn lmmse_shrinkage_beats_ls_on_average() {
    let mut r = rng(4);
    let (m, k, n) = (16, 1, 4);
    let (sigma2, rho) = (2.0, 0.5);
    let p = powers(1, k, sigma2, rho);
    let book = make_pilot_book(k, n).unwrap();
    let corr = loyka_correlation(m, 0.0).unwrap();
    let eps = sigma2 / (n as f64 * rho);
    let (mut ls, mut lm) = (0.0, 0.0);
    for _ in 0..400 {
        let h = vec![cvec(m, &mut r)];
        let b = compose_received_pilot(
            &GroupCell {
                cell: 0,
                channels: &h,
            },
            &[],
            &[],
            &p,
            &book,
            &corr,
            cmat(m, n, sigma2, &mut r),
        );
        let e = ls_estimate(&b, &h[0], &book, 0, rho);
        ls += e.mscee();
        lm += lmmse_surrogate(&e, &h[0], 1.0, eps).mscee();
    }
    // beta eps / (beta + eps) with beta = 1
    assert_relative_eq!(lm / 400.0, eps / (1.0 + eps), max_relative = 0.05);
    assert!(lm < ls);
}

#[test]
fn ls_bs_estimate_is_exact_without_noise() {
    let mut r = rng(5);
    let m = 12;
    let corr = loyka_correlation(m, 0.8).unwrap();
    let g = BsBsChannel::sample(0.7, 5.0, ula_steering(m, 0.3), ula_steering(m, 2.5), &mut r);
    let pilots = orthogonal_bs_pilots(m);
    let blk = compose_bs_pilot(&g, &[], &pilots, 10.0, &corr, CMatrix::zeros(m, m));
    let truth = g.to_matrix(&corr);
    let e = ls_bs_estimate(&blk, &pilots, 10.0, &truth);
    assert!(e.error.norm() < 1e-10 * truth.norm());
    assert_eq!(e.tau, m);
    assert!(e.noise_error.unwrap().norm() == 0.0);
}

#[test]
fn ls_bs_estimate_picks_up_co_slot_channels() {
    let mut r = rng(6);
    let m = 8;
    let corr = loyka_correlation(m, 0.5).unwrap();
    let g = BsBsChannel::sample(1.0, 5.0, ula_steering(m, 0.3), ula_steering(m, 2.5), &mut r);
    let h = BsBsChannel::sample(0.1, 5.0, ula_steering(m, 1.3), ula_steering(m, 0.5), &mut r);
    let pilots = orthogonal_bs_pilots(m);
    let blk = compose_bs_pilot(&g, &[(4, &h)], &pilots, 2.0, &corr, CMatrix::zeros(m, m));
    let e = ls_bs_estimate(&blk, &pilots, 2.0, &g.to_matrix(&corr));
    // co-slot BSs reuse the same pilots, so their channel lands in the error whole
    assert!((e.error - h.to_matrix(&corr)).norm() < 1e-10);
}

#[test]
fn cs_pilot_length_formula() {
    assert_eq!(cs_pilot_length(4, 64), 20);
    assert_eq!(cs_pilot_length(16, 64), 48);
    assert_eq!(
        cs_pilot_length(3, 64),
        (3.0f64 * (128.0f64 / 3.0).log2()).ceil() as usize
    );
    assert_eq!(cs_pilot_length(0, 64), 1);
    assert_eq!(cs_pilot_length(1, 1), 1);
}

#[test]
fn omp_recovers_exactly_sparse_vectors() {
    let mut r = rng(7);
    let (rows, cols) = (40, 128);
    for s in [1usize, 4, 8] {
        let phi = cmat(rows, cols, 1.0 / rows as f64, &mut r);
        let mut x = CVector::zeros(cols);
        let mut support: Vec<usize> = Vec::new();
        while support.len() < s {
            let i = r.random_range(0..cols);
            if !support.contains(&i) {
                support.push(i);
                x[i] = complex_normal(&mut r, 1.0) + Complex64::new(1.0, 0.0);
            }
        }
        let y = &phi * &x;
        let out = omp(&phi, &y, s);
        assert!(!out.flagged);
        assert!((out.coefficients - &x).norm() < 1e-8 * x.norm(), "s = {s}");
        let mut a = out.support.clone();
        a.sort();
        support.sort();
        assert_eq!(a, support);
    }
}

#[test]
fn omp_of_zero_is_zero() {
    let mut r = rng(8);
    let phi = cmat(10, 20, 1.0, &mut r);
    let out = omp(&phi, &CVector::zeros(10), 5);
    assert!(out.support.is_empty());
    assert_eq!(out.coefficients.norm(), 0.0);
}

#[test]
fn omp_stops_at_max_atoms() {
    let mut r = rng(9);
    let phi = cmat(30, 60, 1.0, &mut r);
    let y = cvec(30, &mut r);
    let out = omp(&phi, &y, 7);
    assert_eq!(out.support.len(), 7);
    assert_eq!(
        out.coefficients.iter().filter(|v| v.norm() > 0.0).count(),
        7
    );
}

#[test]
fn dft_basis_is_unitary() {
    let a = dft_basis(16);
    assert!((&a * a.adjoint() - CMatrix::identity(16, 16)).norm() < 1e-10);
}

#[test]
fn sparsify_finds_planted_support() {
    let m = 16;
    let a = dft_basis(m);
    let mut x = CMatrix::zeros(m, m);
    x[(1, 0)] = Complex64::new(3.0, 0.0);
    x[(5, 0)] = Complex64::new(0.0, 1.0);
    x[(2, 7)] = Complex64::new(2.0, -1.0);
    // sparsify looks at A^H G^H A, so plant G^H = A X A^H
    let g = (&a * &x * a.adjoint()).adjoint();
    let sp = sparsify(&g, &a, 1.0);
    assert_eq!(sp.s, 3);
    assert_eq!(sp.per_column, 2);
    assert_eq!(sp.support[0], (1, 0));
    let sp = sparsify(&g, &a, 0.5);
    assert_eq!(sp.s, 1);
}

/// Exactly S-sparse angular channel, Gaussian pilots of length
/// `S log2(2M/S)`, no noise: OMP recovers G to numerical precision.
#[test]
fn cs_bs_estimate_recovers_sparse_channel() {
    let mut r = rng(10);
    let m = 32;
    let a = dft_basis(m);
    for s in [2usize, 4] {
        let mut x = CMatrix::zeros(m, m);
        for c in 0..m {
            let mut rows: Vec<usize> = Vec::new();
            while rows.len() < s {
                let i = r.random_range(0..m);
                if !rows.contains(&i) {
                    rows.push(i);
                    x[(i, c)] = complex_normal(&mut r, 1.0);
                }
            }
        }
        let g = (&a * &x * a.adjoint()).adjoint();
        let tau = cs_pilot_length(s, m);
        let pilots = cmat(m, tau, 1.0, &mut r);
        let rho: f64 = 4.0;
        let y = &g * &pilots * Complex64::new(rho.sqrt(), 0.0);
        let e = cs_bs_estimate(&y, &pilots, rho, &a, s, &g);
        assert!(
            e.error.norm() < 1e-6 * g.norm(),
            "s = {s}: {}",
            e.error.norm() / g.norm()
        );
        assert_eq!(e.tau, tau);
        assert!(tau < m);
    }
}

/// With perfect BS-BS estimates, cancelling an interferer gives the same
/// estimate as a pilot block that never contained it.
#[test]
fn perfect_cancellation_removes_the_interferer() {
    let mut r = rng(11);
    let (m, k, n) = (8, 2, 4);
    let p = powers(5, k, 0.1, 0.2);
    let book = make_pilot_book(k, n).unwrap();
    let corr = loyka_correlation(m, 0.8).unwrap();
    let own: Vec<CVector> = (0..k).map(|_| cvec(m, &mut r)).collect();
    let g3 = BsBsChannel::sample(
        0.5,
        10.0,
        ula_steering(m, 0.2),
        ula_steering(m, 1.0),
        &mut r,
    );
    let g4 = BsBsChannel::sample(
        0.3,
        10.0,
        ula_steering(m, 0.9),
        ula_steering(m, 2.0),
        &mut r,
    );
    let tx3 = cmat(m, n, 1.0, &mut r);
    let tx4 = cmat(m, n, 1.0, &mut r);
    let noise = cmat(m, n, 0.1, &mut r);
    let target = GroupCell {
        cell: 0,
        channels: &own,
    };
    let both = compose_received_pilot(
        &target,
        &[],
        &[
            DlInterferer {
                cell: 3,
                channel: &g3,
                transmitted: &tx3,
            },
            DlInterferer {
                cell: 4,
                channel: &g4,
                transmitted: &tx4,
            },
        ],
        &p,
        &book,
        &corr,
        noise.clone(),
    );
    let only4 = compose_received_pilot(
        &target,
        &[],
        &[DlInterferer {
            cell: 4,
            channel: &g4,
            transmitted: &tx4,
        }],
        &p,
        &book,
        &corr,
        noise,
    );
    let g3m = g3.to_matrix(&corr);
    let ici = estimate_ici(&[3], &[(3, &g3m)], &[(3, &tx3)], m, n).unwrap();
    let ic = ic_tsp_estimate(
        &both,
        &Cancellation {
            ici: &ici,
            cancelled: &[3],
            noise_part: None,
        },
        &own[0],
        &book,
        0,
        0.2,
    );
    let ls = ls_estimate(&only4, &own[0], &book, 0, 0.2);
    assert!((&ic.estimate - &ls.estimate).norm() < 1e-10);
    assert!(ic.term_power(Term::DataResidual) < 1e-20);
    assert_relative_eq!(
        ic.term_power(Term::DataOthers),
        ls.term_power(Term::Data),
        max_relative = 1e-9
    );
    assert!((ic.terms_sum() - &ic.error).norm() < 1e-10);
    assert!(estimate_ici(&[3], &[], &[(3, &tx3)], m, n).is_err());
}

#[test]
fn imperfect_cancellation_residual_is_the_estimation_error() {
    let mut r = rng(12);
    let (m, k, n) = (8, 1, 4);
    let p = powers(4, k, 0.0, 0.2);
    let book = make_pilot_book(k, n).unwrap();
    let corr = loyka_correlation(m, 0.0).unwrap();
    let own = vec![cvec(m, &mut r)];
    let g = BsBsChannel::sample(1.0, 1.0, ula_steering(m, 0.2), ula_steering(m, 1.0), &mut r);
    let tx = cmat(m, n, 1.0, &mut r);
    let b = compose_received_pilot(
        &GroupCell {
            cell: 0,
            channels: &own,
        },
        &[],
        &[DlInterferer {
            cell: 2,
            channel: &g,
            transmitted: &tx,
        }],
        &p,
        &book,
        &corr,
        CMatrix::zeros(m, n),
    );
    let err_noise = cmat(m, m, 0.01, &mut r);
    let err_data = cmat(m, m, 0.02, &mut r);
    let g_hat = g.to_matrix(&corr) + &err_noise + &err_data;
    let ici = &g_hat * &tx;
    let np = &err_noise * &tx;
    let e = ic_tsp_estimate(
        &b,
        &Cancellation {
            ici: &ici,
            cancelled: &[2],
            noise_part: Some(&np),
        },
        &own[0],
        &book,
        0,
        0.2,
    );
    let psi = book.conj_column(0);
    let s = Complex64::new(-1.0 / (n as f64 * 0.2f64.sqrt()), 0.0);
    let expect_data = &err_data * &tx * &psi * s;
    let expect_noise = &err_noise * &tx * &psi * s;
    assert!((e.term(Term::DataResidual).unwrap() - expect_data).norm() < 1e-10);
    assert!((e.term(Term::NoiseResidual).unwrap() - expect_noise).norm() < 1e-10);
    assert!((e.terms_sum() - &e.error).norm() < 1e-10);
}
