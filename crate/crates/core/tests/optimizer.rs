mod common;

use cgtns::correlators::{AnsatzKind, AnsatzSpec, CorrelatorSet};
use cgtns::energy::EnergyContext;
use cgtns::fock::{build_csf_basis, enumerate_onvs, OccupationVector};
use cgtns::hamiltonian::{exact_diagonalize, HamiltonianOperator};
use cgtns::optimizer::{
    bfgs_refine, gradient_subspace_solve, gradient_subspace_tensor, reduced_gradient_sweep, run_parallel_tempering,
    subspace_sweep, EnsembleCheckpoint, PtConfig, ReplicaEnsemble, RefineStatus,
};
use cgtns::workflow::{cold_start, run_stage, run_workflow, Problem, RefineMethod, WorkflowConfig};
use common::{load, Fixture, H2, H4};

fn context(f: &Fixture, kind: AnsatzKind) -> EnergyContext {
    let ints = load(f);
    let space = enumerate_onvs(ints.n_spin_orbitals(), f.electrons, 0, None).unwrap();
    let basis = build_csf_basis(&space, 0).unwrap();
    let h = HamiltonianOperator::new(ints, space).unwrap();
    EnergyContext::new(AnsatzSpec::new(kind), basis, h, 0.0).unwrap()
}

/// Two-site correlators that reproduce the H2 ground state exactly.
fn exact_h2(ctx: &EnergyContext) -> CorrelatorSet {
    let ground = exact_diagonalize(ctx.hamiltonian(), Some(ctx.basis())).unwrap();
    let space = ctx.basis().space();
    let amp = |bits| ground.determinant_vector[space.index_of(OccupationVector::from_bits(bits)).unwrap()];
    let mut params = CorrelatorSet::identity(ctx.spec(), 4).unwrap();
    let low = params.find(&[0, 1]).unwrap();
    let high = params.find(&[2, 3]).unwrap();
    for (e, v) in [amp(0b1100), 0.0, 0.0, amp(0b0011)].into_iter().enumerate() {
        params.set_entry(low, e, v).unwrap();
    }
    for (e, v) in [1.0, 0.0, 0.0, 1.0].into_iter().enumerate() {
        params.set_entry(high, e, v).unwrap();
    }
    params
}

fn quick_pt(seed: u64) -> PtConfig {
    PtConfig {
        sweeps: 40,
        seed,
        ..PtConfig::default()
    }
}

#[test]
fn bfgs_stops_immediately_at_the_exact_state() {
    let ctx = context(&H2, AnsatzKind::TwoSite);
    let params = exact_h2(&ctx);
    let out = bfgs_refine(&ctx, &params, 100, 1e-8).unwrap();
    assert_eq!(out.iterations, 0);
    assert_eq!(out.status, RefineStatus::Converged);
    assert!((out.energy - H2.fci).abs() < 1e-9);
}

#[test]
fn refinements_lower_the_parallel_tempering_energy() {
    let ctx = context(&H4, AnsatzKind::TwoSite);
    let init = cold_start(ctx.spec(), 8, 4).unwrap();
    let ensemble = run_parallel_tempering(&ctx, quick_pt(4), &init).unwrap();
    let start = ensemble.best().params.clone();
    let e_start = ensemble.best().energy;
    let bfgs = bfgs_refine(&ctx, &start, 300, 1e-8).unwrap();
    let reduced = reduced_gradient_sweep(&ctx, &start, 5).unwrap();
    let subspace = subspace_sweep(&ctx, &start, 3).unwrap();
    for out in [&bfgs, &reduced, &subspace] {
        assert_eq!(out.initial_energy, e_start);
        assert!(out.energy < e_start, "{} !< {e_start}", out.energy);
        assert!(out.energy >= H4.fci - 1e-10);
        let check = ctx.variational_energy(&out.params).unwrap().energy;
        assert!((check - out.energy).abs() < 1e-12);
    }
}

#[test]
fn subspace_solve_reaches_its_eigenvalue() {
    let ctx = context(&H4, AnsatzKind::TwoSite);
    let params = cold_start(ctx.spec(), 8, 9).unwrap();
    let before = ctx.variational_energy(&params).unwrap().energy;
    for (i, j) in [(0, 1), (2, 5), (3, 3), (6, 7)] {
        let sol = gradient_subspace_solve(&ctx, &params, i, j).unwrap();
        assert!(sol.energy <= before + 1e-12);
        assert!((sol.energy - sol.eigenvalue).abs() < 1e-10);
        assert!(sol.rank >= 1);
    }
}

#[test]
fn subspace_solve_keeps_the_exact_state() {
    let ctx = context(&H2, AnsatzKind::TwoSite);
    let params = exact_h2(&ctx);
    for t in 0..params.tensors().len() {
        let sol = gradient_subspace_tensor(&ctx, &params, t).unwrap();
        assert!((sol.energy - H2.fci).abs() < 1e-9);
    }
}

#[test]
fn subspace_solve_on_sum_hybrid_tensors() {
    let pairs_ctx = context(&H4, AnsatzKind::TwoSite);
    let pairs = cold_start(pairs_ctx.spec(), 8, 2).unwrap();
    let ctx = context(&H4, AnsatzKind::SumHybrid);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let params = CorrelatorSet::hybrid_from_pairs(ctx.spec(), &pairs, &mut rng).unwrap();
    let before = ctx.variational_energy(&params).unwrap().energy;
    let t = params.tensors().iter().position(|c| !c.frozen).unwrap();
    let sol = gradient_subspace_tensor(&ctx, &params, t).unwrap();
    assert!(sol.energy <= before + 1e-12);
    assert!((sol.energy - sol.eigenvalue).abs() < 1e-10);
    assert!(gradient_subspace_tensor(&ctx, &params, 0).is_err());
}

#[test]
fn single_replica_never_swaps() {
    let ctx = context(&H2, AnsatzKind::TwoSite);
    let init = cold_start(ctx.spec(), 4, 1).unwrap();
    let config = PtConfig {
        t_min: 1e-4,
        t_max: 1e-4,
        replicas: 1,
        ..quick_pt(1)
    };
    let ensemble = run_parallel_tempering(&ctx, config, &init).unwrap();
    assert_eq!(ensemble.trace().len(), 40);
    assert!(ensemble.trace().iter().all(|r| !r.swapped));
    assert_eq!(ensemble.swap_acceptance(), 0.0);
}

#[test]
fn checkpoint_file_round_trip_resumes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = context(&H4, AnsatzKind::TwoSiteSiFree);
    let init = cold_start(ctx.spec(), 8, 6).unwrap();
    let straight = run_parallel_tempering(&ctx, quick_pt(6), &init).unwrap();
    let mut partial = ReplicaEnsemble::new(&ctx, quick_pt(6), &init).unwrap();
    partial.advance(13).unwrap();
    let path = dir.path().join("pt.json");
    partial.checkpoint().save(&path).unwrap();
    let mut resumed = ReplicaEnsemble::from_checkpoint(&ctx, EnsembleCheckpoint::load(&path).unwrap()).unwrap();
    assert_eq!(resumed.sweeps_done(), 13);
    resumed.run().unwrap();
    assert_eq!(resumed.trace(), straight.trace());
    assert_eq!(resumed.best(), straight.best());
    assert_eq!(resumed.best_history(), straight.best_history());

    let other = context(&H4, AnsatzKind::TwoSite);
    assert!(ReplicaEnsemble::from_checkpoint(&other, EnsembleCheckpoint::load(&path).unwrap()).is_err());
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    doc["version"] = 99.into();
    assert!(EnsembleCheckpoint::from_json(&doc.to_string()).is_err());
}

#[test]
fn stage_resumes_from_an_interrupted_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let problem = Problem::new(load(&H4), 4, 0, 0, false).unwrap();
    let spec = AnsatzSpec::new(AnsatzKind::TwoSite);
    let ctx = problem.context(spec.clone(), 0.0).unwrap();
    let cfg = WorkflowConfig::new(spec.clone(), quick_pt(8));
    let init = cold_start(&spec, 8, 8).unwrap();
    let fresh = run_stage(&ctx, &cfg, &cfg.pt, &init, RefineMethod::None, None).unwrap();

    let mut partial = ReplicaEnsemble::new(&ctx, cfg.pt.clone(), &init).unwrap();
    partial.advance(21).unwrap();
    partial.checkpoint().save(dir.path().join("2s.checkpoint.json")).unwrap();
    let resumed = run_stage(&ctx, &cfg, &cfg.pt, &init, RefineMethod::None, Some(dir.path())).unwrap();
    assert_eq!(resumed.trace, fresh.trace);
    assert_eq!(resumed.energy.to_bits(), fresh.energy.to_bits());
    for file in ["2s.trace.csv", "2s.params.json", "2s.checkpoint.json"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }

    // a checkpoint from another configuration is ignored
    let cfg2 = WorkflowConfig::new(spec, quick_pt(9));
    let other = run_stage(&ctx, &cfg2, &cfg2.pt, &init, RefineMethod::None, Some(dir.path())).unwrap();
    assert_eq!(other.trace.len(), 40 * 4);
    assert_eq!(other.trace[0].sweep, 1);
}

#[test]
fn hybrid_workflow_starts_from_the_seed_stage() {
    let problem = Problem::new(load(&H4), 4, 0, 0, false).unwrap();
    let mut cfg = WorkflowConfig::new(AnsatzSpec::new(AnsatzKind::Hybrid), quick_pt(3));
    cfg.seed_refine = RefineMethod::Bfgs;
    cfg.refine_iterations = 100;
    let result = run_workflow(&problem, &cfg, None).unwrap();
    let seed = result.seed.unwrap();
    assert_eq!(seed.spec.kind, AnsatzKind::TwoSite);
    assert_eq!(result.main.initial_energy.to_bits(), seed.energy.to_bits());
    assert!(result.main.energy <= seed.energy);
    assert!(result.main.best_history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn pure_three_site_warm_start_matches_the_seed_energy() {
    let problem = Problem::new(load(&H4), 4, 0, 0, false).unwrap();
    let mut cfg = WorkflowConfig::new(AnsatzSpec::new(AnsatzKind::ThreeSiteSiFree), quick_pt(5));
    cfg.refine_iterations = 50;
    let result = run_workflow(&problem, &cfg, None).unwrap();
    let seed = result.seed.unwrap();
    assert_eq!(seed.spec.kind, AnsatzKind::TwoSiteSiFree);
    assert!((result.main.initial_energy - seed.energy).abs() < 1e-10);
    assert!(result.main.energy <= result.main.initial_energy);
}
