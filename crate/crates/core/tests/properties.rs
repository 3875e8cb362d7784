mod common;

use cgtns::correlators::{
    amplitude, amplitude_partial_derivative, param_count, AnsatzKind, AnsatzSpec, CombineMode, CorrelatorSet,
};
use cgtns::energy::EnergyContext;
use cgtns::fock::{build_csf_basis, enumerate_onvs, s2_apply, OccupationVector};
use cgtns::hamiltonian::HamiltonianOperator;
use cgtns::optimizer::{swap_probability, temperature_ladder};
use proptest::prelude::*;

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn kind_strategy() -> impl Strategy<Value = AnsatzKind> {
    proptest::sample::select(AnsatzKind::ALL.to_vec())
}

fn spec_for(kind: AnsatzKind, m: usize) -> AnsatzSpec {
    if kind.is_selected() {
        AnsatzSpec::selected(kind, (1..m).step_by(2).collect())
    } else {
        AnsatzSpec::new(kind)
    }
}

fn set_from(spec: &AnsatzSpec, m: usize, values: &[f64]) -> CorrelatorSet {
    let mut k = 0;
    CorrelatorSet::from_fn(spec, m, |_, _| {
        k += 1;
        values[k % values.len()]
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumeration_count_is_binomial_product(m_orb in 1usize..7, n_alpha in 0usize..7, n_beta in 0usize..7) {
        prop_assume!(n_alpha <= m_orb && n_beta <= m_orb);
        let n = n_alpha + n_beta;
        let two_ms = n_alpha as i32 - n_beta as i32;
        let space = enumerate_onvs(2 * m_orb, n, two_ms, None).unwrap();
        prop_assert_eq!(space.dim() as u64, binomial(m_orb as u64, n_alpha as u64) * binomial(m_orb as u64, n_beta as u64));
        prop_assert!(space.onvs().windows(2).all(|w| w[0].bits() < w[1].bits()));
        for onv in space.onvs() {
            prop_assert_eq!(onv.n_electrons() as usize, n);
            prop_assert_eq!(onv.two_ms(), two_ms);
        }
    }

    #[test]
    fn csf_rows_are_orthonormal_spin_eigenfunctions(m_orb in 1usize..6, n_alpha in 0usize..6, n_beta in 0usize..6, extra in 0u32..3) {
        prop_assume!(n_alpha <= m_orb && n_beta <= m_orb && n_alpha >= n_beta);
        let n = n_alpha + n_beta;
        let two_ms = (n_alpha - n_beta) as i32;
        let two_s = two_ms as u32 + 2 * extra;
        let space = enumerate_onvs(2 * m_orb, n, two_ms, None).unwrap();
        let Ok(basis) = build_csf_basis(&space, two_s) else { return Ok(()) };
        let s = two_s as f64 / 2.0;
        for p in 0..basis.n_csfs() {
            for q in 0..basis.n_csfs() {
                let expected = if p == q { 1.0 } else { 0.0 };
                prop_assert!((basis.overlap(p, q) - expected).abs() < 1e-12);
            }
            let mut c = vec![0.0; space.dim()];
            for &(n, v) in basis.row(p) {
                c[n] = v;
            }
            let s2c = s2_apply(&space, &c).unwrap();
            for (a, b) in s2c.iter().zip(&c) {
                prop_assert!((a - s * (s + 1.0) * b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn amplitude_is_affine_in_every_active_entry(
        kind in kind_strategy(),
        values in proptest::collection::vec(-2.0f64..2.0, 1..40),
        pick in any::<proptest::sample::Index>(),
        onv_pick in any::<proptest::sample::Index>(),
        x1 in -3.0f64..3.0,
        x2 in -3.0f64..3.0,
    ) {
        let m = 6;
        let spec = spec_for(kind, m);
        let set = set_from(&spec, m, &values);
        let space = enumerate_onvs(m, 3, 1, None).unwrap();
        let onv = space.onv(onv_pick.index(space.dim()));
        let active = set.active_entries();
        let (t, e) = active[pick.index(active.len())];
        let at = |x: f64| {
            let mut s = set.clone();
            s.set_entry(t, e, x).unwrap();
            amplitude(&s, &spec, onv)
        };
        let mid = at(0.5 * (x1 + x2));
        prop_assert!((mid - 0.5 * (at(x1) + at(x2))).abs() <= 1e-12 * (1.0 + at(x1).abs() + at(x2).abs()));
        let d = amplitude_partial_derivative(&set, &spec, onv, t, e).unwrap();
        prop_assert!((d * (x2 - x1) - (at(x2) - at(x1))).abs() <= 1e-11 * (1.0 + at(x1).abs() + at(x2).abs()));
        if spec.combine_mode() == CombineMode::Product && set.tensor(t).entry_index(onv) == e {
            prop_assert_eq!(at(0.0), 0.0);
        }
    }

    #[test]
    fn scaling_a_pair_tensor_scales_amplitudes(
        values in proptest::collection::vec(0.1f64..2.0, 1..30),
        lambda in 0.2f64..5.0,
        pick in any::<proptest::sample::Index>(),
    ) {
        let m = 6;
        let spec = AnsatzSpec::new(AnsatzKind::TwoSite);
        let set = set_from(&spec, m, &values);
        let t = pick.index(set.tensors().len());
        let mut scaled = set.clone();
        for e in 0..4 {
            scaled.set_entry(t, e, lambda * set.entry(t, e)).unwrap();
        }
        let space = enumerate_onvs(m, 3, 1, None).unwrap();
        for &onv in space.onvs() {
            let a = amplitude(&set, &spec, onv);
            prop_assert!((amplitude(&scaled, &spec, onv) - lambda * a).abs() <= 1e-12 * (lambda * a).abs().max(1e-300));
        }
    }

    #[test]
    fn unit_self_interaction_tensors_reduce_to_si_free(values in proptest::collection::vec(-2.0f64..2.0, 1..30)) {
        let m = 6;
        let si_free = AnsatzSpec::new(AnsatzKind::TwoSiteSiFree);
        let small = set_from(&si_free, m, &values);
        let full_spec = AnsatzSpec::new(AnsatzKind::TwoSite);
        let full = CorrelatorSet::from_fn(&full_spec, m, |_, _| 1.0).unwrap();
        let mut full = full;
        for t in 0..full.tensors().len() {
            let sites = full.tensor(t).sites.clone();
            if sites[0] != sites[1] {
                let k = small.find(&sites).unwrap();
                for e in 0..4 {
                    full.set_entry(t, e, small.entry(k, e)).unwrap();
                }
            }
        }
        let space = enumerate_onvs(m, 2, 0, None).unwrap();
        for &onv in space.onvs() {
            prop_assert_eq!(amplitude(&full, &full_spec, onv), amplitude(&small, &si_free, onv));
        }
    }

    #[test]
    fn stored_entries_equal_param_count(kind in kind_strategy(), m in proptest::sample::select(vec![4usize, 6, 8, 10, 24])) {
        let spec = spec_for(kind, m);
        let set = CorrelatorSet::identity(&spec, m).unwrap();
        prop_assert_eq!(set.n_active_params() as u64, param_count(&spec, m, 2));
    }

    #[test]
    fn rescaling_leaves_energy_invariant(
        values in proptest::collection::vec(0.2f64..2.0, 1..30),
        lambda in 0.1f64..10.0,
        pick in any::<proptest::sample::Index>(),
    ) {
        let ints = common::random_integrals(3, 5);
        let space = enumerate_onvs(6, 3, 1, None).unwrap();
        let basis = build_csf_basis(&space, 1).unwrap();
        let h = HamiltonianOperator::new(ints, space).unwrap();
        let spec = AnsatzSpec::new(AnsatzKind::TwoSite);
        let ctx = EnergyContext::new(spec.clone(), basis, h, 0.0).unwrap();
        let set = set_from(&spec, 6, &values);
        let t = pick.index(set.tensors().len());
        let mut scaled = set.clone();
        for e in 0..4 {
            scaled.set_entry(t, e, lambda * set.entry(t, e)).unwrap();
        }
        let e0 = ctx.variational_energy(&set).unwrap().energy;
        let e1 = ctx.variational_energy(&scaled).unwrap().energy;
        prop_assert!((e0 - e1).abs() < 1e-10);
    }

    #[test]
    fn swap_rule_matches_inverse_temperature_form(
        t_i in 1e-4f64..1.0,
        ratio in 1.01f64..10.0,
        e_i in -5.0f64..5.0,
        gap in -0.05f64..0.05,
    ) {
        let t_next = t_i * ratio;
        let e_next = e_i + gap * t_i;
        let p = swap_probability(t_i, e_i, t_next, e_next).unwrap();
        // replica-exchange acceptance min{1, exp[(1/T_i − 1/T_{i+1})(E_i − E_{i+1})]}
        let reference = f64::min(1.0, ((1.0 / t_i - 1.0 / t_next) * (e_i - e_next)).exp());
        prop_assert!((p - reference).abs() <= 1e-15, "{p} vs {reference}");
    }

    #[test]
    fn ladder_matches_power_form(t1 in 1e-6f64..1.0, span in 1.01f64..1e4, p in 2usize..12) {
        let tp = t1 * span;
        let ladder = temperature_ladder(t1, tp, p).unwrap();
        for (l, t) in ladder.iter().enumerate() {
            let reference = t1 * (tp / t1).powf(l as f64 / (p - 1) as f64);
            prop_assert!((t - reference).abs() <= 1e-15 * reference.max(1.0), "{t} vs {reference}");
        }
        prop_assert!(ladder.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn occupation_vector_parse_round_trips(bits in 0u64..(1 << 12)) {
        let onv = OccupationVector::from_bits(bits);
        let text = onv.to_string_width(12);
        prop_assert_eq!(OccupationVector::parse(&text).unwrap(), onv);
    }
}
