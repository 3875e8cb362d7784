mod common;

use cgtns::correlators::{amplitude, cgtns_norm, csf_weights, AnsatzKind, AnsatzSpec, CorrelatorSet};
use cgtns::fock::{build_csf_basis, enumerate_onvs, s2_apply, OccupationVector};
use cgtns::hamiltonian::{exact_diagonalize, slater_condon, HamiltonianOperator};
use common::{load, random_integrals, JordanWigner, FIXTURES};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn slater_condon_matches_operator_algebra() {
    for (n_orb, seed) in [(2, 1), (3, 2), (4, 3)] {
        let ints = random_integrals(n_orb, seed);
        let jw = JordanWigner { m: 2 * n_orb };
        let h = jw.hamiltonian(&ints);
        let mut worst: f64 = 0.0;
        for bra in 0..jw.dim() {
            for ket in 0..jw.dim() {
                let a = OccupationVector::from_bits(bra as u64);
                let b = OccupationVector::from_bits(ket as u64);
                let sc = if a.n_electrons() == b.n_electrons() && a.two_ms() == b.two_ms() {
                    slater_condon(a, b, &ints)
                } else {
                    0.0
                };
                worst = worst.max((sc - h[(bra, ket)]).abs());
            }
        }
        assert!(worst < 1e-12, "{n_orb} orbitals: max deviation {worst:e}");
    }
}

#[test]
fn sparse_operator_matches_dense_block() {
    let ints = random_integrals(3, 7);
    let jw = JordanWigner { m: 6 };
    let full = jw.hamiltonian(&ints);
    let space = enumerate_onvs(6, 3, 1, None).unwrap();
    let h = HamiltonianOperator::new(ints, space.clone()).unwrap();
    let dense = h.to_dense();
    for (i, a) in space.onvs().iter().enumerate() {
        for (j, b) in space.onvs().iter().enumerate() {
            assert!((dense[(i, j)] - full[(a.bits() as usize, b.bits() as usize)]).abs() < 1e-12);
        }
    }
    assert!((&dense - dense.transpose()).amax() == 0.0);
}

#[test]
fn spin_operator_matches_operator_algebra() {
    let jw = JordanWigner { m: 6 };
    let s2 = jw.s_squared();
    for (n, two_ms) in [(2, 0), (3, 1), (3, -1), (4, 0), (2, 2)] {
        let space = enumerate_onvs(6, n, two_ms, None).unwrap();
        for (k, onv) in space.onvs().iter().enumerate() {
            let mut e = vec![0.0; space.dim()];
            e[k] = 1.0;
            let ours = s2_apply(&space, &e).unwrap();
            for (l, other) in space.onvs().iter().enumerate() {
                let reference = s2[(other.bits() as usize, onv.bits() as usize)];
                assert!((ours[l] - reference).abs() < 1e-12);
            }
        }
    }
}

fn s2_matrix(space: &cgtns::fock::FockSubspace) -> DMatrix<f64> {
    let n = space.dim();
    let mut m = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        m.set_column(k, &DVector::from_vec(s2_apply(space, &e).unwrap()));
    }
    m
}

#[test]
fn csf_counts_match_s2_multiplicities() {
    for (m, n, two_ms) in [(4, 2, 0), (6, 3, 1), (8, 4, 0), (8, 3, 1), (8, 4, 2), (10, 5, 1)] {
        let space = enumerate_onvs(m, n, two_ms, None).unwrap();
        let eig = SymmetricEigen::new(s2_matrix(&space));
        for two_s in (two_ms.unsigned_abs()..=n as u32).step_by(2) {
            let s = two_s as f64 / 2.0;
            let target = s * (s + 1.0);
            let multiplicity = eig.eigenvalues.iter().filter(|&&v| (v - target).abs() < 1e-8).count();
            match build_csf_basis(&space, two_s) {
                Ok(basis) => assert_eq!(basis.n_csfs(), multiplicity, "M={m} N={n} 2S={two_s}"),
                Err(_) => assert_eq!(multiplicity, 0),
            }
        }
    }
}

#[test]
fn two_determinant_spin_states() {
    // |1001> = a†_0 a†_3 |0>, |0110> = a†_1 a†_2 |0>
    let space = enumerate_onvs(4, 2, 0, None).unwrap();
    let idx = |s: &str| space.index_of(OccupationVector::parse(s).unwrap()).unwrap();
    let combo = |sign: f64| {
        let mut c = vec![0.0; 4];
        c[idx("1001")] = 1.0 / 2f64.sqrt();
        c[idx("0110")] = sign / 2f64.sqrt();
        c
    };
    let rayleigh = |c: &[f64]| -> f64 { s2_apply(&space, c).unwrap().iter().zip(c).map(|(a, b)| a * b).sum() };
    // with ascending creation strings the open-shell triplet is the sum
    assert!((rayleigh(&combo(1.0)) - 2.0).abs() < 1e-12);
    assert!(rayleigh(&combo(-1.0)).abs() < 1e-12);
}

#[test]
fn fixtures_reproduce_reference_energies() {
    for f in FIXTURES {
        let ints = load(&f);
        assert!(ints.one_body_asymmetry() < 1e-10);
        let space = enumerate_onvs(ints.n_spin_orbitals(), f.electrons, 0, None).unwrap();
        let basis = build_csf_basis(&space, 0).unwrap();
        let h = HamiltonianOperator::new(ints, space).unwrap();
        let e = exact_diagonalize(&h, Some(&basis)).unwrap().energy;
        assert!((e - f.fci).abs() < 1e-8, "{}: {e} vs {}", f.file, f.fci);
    }
}

#[test]
fn amplitude_matches_nested_loop_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let m = 6;
    let spec = AnsatzSpec::new(AnsatzKind::TwoSite);
    let set = CorrelatorSet::from_fn(&spec, m, |_, _| rng.random_range(-2.0..2.0)).unwrap();
    let space = enumerate_onvs(m, 3, 1, None).unwrap();
    for onv in space.onvs() {
        let n: Vec<usize> = (0..m).map(|i| onv.is_occupied(i) as usize).collect();
        let mut reference = 1.0;
        for i in 0..m {
            for j in i..m {
                let t = set.find(&[i, j]).unwrap();
                reference *= set.tensor(t).entries[2 * n[i] + n[j]];
            }
        }
        assert!((amplitude(&set, &spec, *onv) - reference).abs() <= 1e-14 * reference.abs().max(1.0));
    }
}

#[test]
fn csf_weights_and_norm_match_dense_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for (m, n, two_ms, two_s) in [(4, 2, 0, 0), (6, 3, 1, 1), (8, 4, 0, 2)] {
        let space = enumerate_onvs(m, n, two_ms, None).unwrap();
        let basis = build_csf_basis(&space, two_s).unwrap();
        let k = basis.to_dense();
        let spec = AnsatzSpec::new(AnsatzKind::ThreeSiteSiFree);
        let set = CorrelatorSet::from_fn(&spec, m, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let c = DVector::from_iterator(space.dim(), space.onvs().iter().map(|&o| amplitude(&set, &spec, o)));
        let s_dense = &k * &c;
        let s = csf_weights(&set, &spec, &basis).unwrap();
        assert!((DVector::from_vec(s.clone()) - &s_dense).amax() < 1e-13);
        let norm = cgtns_norm(&s, &basis).unwrap();
        let psi = k.transpose() * &s_dense;
        assert!((norm - psi.norm_squared()).abs() < 1e-12 * norm.max(1.0));
        assert!((norm - s_dense.norm_squared()).abs() < 1e-12 * norm.max(1.0));
        // identity correlators give row sums of K
        let ones = CorrelatorSet::identity(&spec, m).unwrap();
        let s1 = csf_weights(&ones, &spec, &basis).unwrap();
        for p in 0..basis.n_csfs() {
            let row_sum: f64 = basis.row(p).iter().map(|&(_, v)| v).sum();
            assert!((s1[p] - row_sum).abs() < 1e-14);
        }
    }
    let space = enumerate_onvs(4, 2, 0, None).unwrap();
    let basis = build_csf_basis(&space, 0).unwrap();
    assert_eq!(cgtns_norm(&[0.0; 3], &basis).unwrap(), 0.0);
    assert!((cgtns_norm(&[1.0, 0.0, 0.0], &basis).unwrap() - 1.0).abs() < 1e-14);
}

#[test]
fn closed_shell_space_weight_is_the_amplitude() {
    let space = enumerate_onvs(2, 2, 0, None).unwrap();
    let basis = build_csf_basis(&space, 0).unwrap();
    let spec = AnsatzSpec::new(AnsatzKind::TwoSite);
    let set = CorrelatorSet::from_fn(&spec, 2, |t, e| 1.5 + t as f64 + 0.25 * e as f64).unwrap();
    let s = csf_weights(&set, &spec, &basis).unwrap();
    assert_eq!(s, vec![amplitude(&set, &spec, space.onv(0))]);
}
