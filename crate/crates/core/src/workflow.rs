//! End-to-end optimization: an optional 2-site stage that seeds hybrids and
//! pure 3-site ansätze, the parallel-tempering stage for the requested
//! ansatz, and an optional refinement.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{export_trace, RunRecord, TraceFormat};
use crate::correlators::{select_sites, AnsatzKind, AnsatzSpec, CorrelatorDocument, CorrelatorSet};
use crate::energy::EnergyContext;
use crate::fock::{build_csf_basis, enumerate_onvs, CsfBasis, FockSubspace, IrrepFilter};
use crate::hamiltonian::{exact_diagonalize_with_limit, HamiltonianOperator, IntegralSet};
use crate::optimizer::{
    bfgs_refine, reduced_gradient_sweep, subspace_sweep, EnsembleCheckpoint, PtConfig, RefineStatus,
    ReplicaEnsemble, TraceRow,
};
use crate::{Error, Result};

/// Noise amplitude of cold starts: entries are `1 + U[-0.1, 0.1]`.
pub const COLD_START_NOISE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefineMethod {
    None,
    Bfgs,
    ReducedGradient,
    Subspace,
}

impl fmt::Display for RefineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefineMethod::None => "none",
            RefineMethod::Bfgs => "bfgs",
            RefineMethod::ReducedGradient => "reduced-gradient",
            RefineMethod::Subspace => "subspace",
        })
    }
}

impl FromStr for RefineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(RefineMethod::None),
            "bfgs" => Ok(RefineMethod::Bfgs),
            "reduced-gradient" => Ok(RefineMethod::ReducedGradient),
            "subspace" => Ok(RefineMethod::Subspace),
            other => Err(Error::InvalidArgument(format!(
                "unknown refinement {other:?}; expected none, bfgs, reduced-gradient or subspace"
            ))),
        }
    }
}

/// The determinant space and CSF basis of one electronic state.
pub struct Problem {
    pub integrals: IntegralSet,
    pub space: FockSubspace,
    pub basis: CsfBasis,
}

impl Problem {
    /// Builds the space for `n_electrons`, `2·Ms` and `2·S`, optionally
    /// restricted to the totally symmetric irrep of the orbital labels.
    pub fn new(integrals: IntegralSet, n_electrons: usize, two_ms: i32, two_s: u32, use_irreps: bool) -> Result<Self> {
        let irreps = match (use_irreps, integrals.orbital_irreps()) {
            (true, Some(labels)) => Some(IrrepFilter {
                orbital_irreps: labels.to_vec(),
                target: 0,
            }),
            _ => None,
        };
        let space = enumerate_onvs(integrals.n_spin_orbitals(), n_electrons, two_ms, irreps)?;
        let basis = build_csf_basis(&space, two_s)?;
        Ok(Problem {
            integrals,
            space,
            basis,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.space.n_sites()
    }

    pub fn hamiltonian(&self) -> Result<HamiltonianOperator> {
        HamiltonianOperator::new(self.integrals.clone(), self.space.clone())
    }

    pub fn context(&self, spec: AnsatzSpec, screen: f64) -> Result<EnergyContext> {
        EnergyContext::new(spec, self.basis.clone(), self.hamiltonian()?, screen)
    }

    /// Exact CSF-basis ground-state energy, if the space fits `dense_limit`.
    pub fn oracle_energy(&self, dense_limit: usize) -> Result<Option<f64>> {
        if self.space.dim() > dense_limit {
            return Ok(None);
        }
        let h = self.hamiltonian()?;
        Ok(Some(exact_diagonalize_with_limit(&h, Some(&self.basis), dense_limit)?.energy))
    }

    /// Spec for `kind`, selecting sites from the natural occupations for
    /// `sel` kinds.
    pub fn spec(&self, kind: AnsatzKind, window: (f64, f64), selected_si_inclusive: bool) -> Result<AnsatzSpec> {
        if !kind.is_selected() {
            return Ok(AnsatzSpec::new(kind));
        }
        let occ = self.integrals.natural_occupations().ok_or_else(|| {
            Error::InvalidArgument(format!("{kind} needs natural occupations (NATOCC) in the integral file"))
        })?;
        let sites = select_sites(occ, window.0, window.1)?;
        Ok(AnsatzSpec::selected(kind, sites).with_selected_si(selected_si_inclusive))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    pub spec: AnsatzSpec,
    pub pt: PtConfig,
    /// Refinement of the final stage.
    pub refine: RefineMethod,
    /// Refinement of the 2-site seed stage before it is frozen or spread.
    pub seed_refine: RefineMethod,
    pub refine_iterations: usize,
    pub refine_tol: f64,
    pub screen: f64,
    /// Sweeps between periodic checkpoints; 0 writes only stage-end ones.
    pub checkpoint_interval: u64,
}

impl WorkflowConfig {
    pub fn new(spec: AnsatzSpec, pt: PtConfig) -> Self {
        WorkflowConfig {
            spec,
            pt,
            refine: RefineMethod::None,
            seed_refine: RefineMethod::Bfgs,
            refine_iterations: 200,
            refine_tol: 1e-7,
            screen: 0.0,
            checkpoint_interval: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StageResult {
    pub spec: AnsatzSpec,
    pub initial_energy: f64,
    pub pt_energy: f64,
    pub energy: f64,
    pub params: CorrelatorSet,
    pub trace: Vec<TraceRow>,
    pub best_history: Vec<f64>,
    pub refine_status: Option<RefineStatus>,
    pub refine_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct WorkflowResult {
    pub seed: Option<StageResult>,
    pub main: StageResult,
}

/// File-name stem of the stage files of `kind`.
pub fn stage_name(kind: AnsatzKind) -> &'static str {
    match kind {
        AnsatzKind::TwoSite => "2s",
        AnsatzKind::TwoSiteSiFree => "2s-si",
        AnsatzKind::ThreeSite => "3s",
        AnsatzKind::ThreeSiteSiFree => "3s-si",
        AnsatzKind::Hybrid => "3s-x-2s",
        AnsatzKind::HybridSiFree => "3s-si-x-2s",
        AnsatzKind::SumHybrid => "3s-plus-2s",
        AnsatzKind::SumHybridSiFree => "3s-si-plus-2s",
        AnsatzKind::HybridSelected => "3s-x-2s-sel",
        AnsatzKind::SumHybridSelected => "3s-plus-2s-sel",
    }
}

fn refine(ctx: &EnergyContext, params: &CorrelatorSet, method: RefineMethod, cfg: &WorkflowConfig) -> Result<Option<(CorrelatorSet, f64, RefineStatus, usize)>> {
    let outcome = match method {
        RefineMethod::None => return Ok(None),
        RefineMethod::Bfgs => bfgs_refine(ctx, params, cfg.refine_iterations, cfg.refine_tol)?,
        RefineMethod::ReducedGradient => reduced_gradient_sweep(ctx, params, cfg.refine_iterations)?,
        RefineMethod::Subspace => subspace_sweep(ctx, params, cfg.refine_iterations)?,
    };
    info!(
        "{method} refinement: {:.10} -> {:.10} ({:?}, {} iterations)",
        outcome.initial_energy, outcome.energy, outcome.status, outcome.iterations
    );
    Ok(Some((outcome.params, outcome.energy, outcome.status, outcome.iterations)))
}

/// Runs parallel tempering from `init` followed by `method`, writing
/// checkpoints and parameters to `out` when given. Resumes from an existing
/// checkpoint for this stage.
pub fn run_stage(
    ctx: &EnergyContext,
    cfg: &WorkflowConfig,
    pt: &PtConfig,
    init: &CorrelatorSet,
    method: RefineMethod,
    out: Option<&Path>,
) -> Result<StageResult> {
    let name = stage_name(ctx.spec().kind);
    let checkpoint_path = out.map(|d| d.join(format!("{name}.checkpoint.json")));
    let mut ensemble = match &checkpoint_path {
        Some(path) if path.exists() => {
            let doc = EnsembleCheckpoint::load(path)?;
            let start = ctx.variational_energy(init)?;
            let same_run = doc.config == *pt && &doc.spec == ctx.spec() && doc.initial_energy == Some(start.energy);
            if same_run {
                info!("resuming {} from {}", ctx.spec().kind, path.display());
                ReplicaEnsemble::from_checkpoint(ctx, doc)?
            } else {
                info!("{} belongs to a different run; starting over", path.display());
                ReplicaEnsemble::new(ctx, pt.clone(), init)?
            }
        }
        _ => ReplicaEnsemble::new(ctx, pt.clone(), init)?,
    };
    let initial_energy = ctx.variational_energy(init)?.energy;
    info!("{}: initial energy {initial_energy:.10}", ctx.spec().kind);
    while !ensemble.is_finished() {
        let chunk = if cfg.checkpoint_interval == 0 { pt.sweeps } else { cfg.checkpoint_interval };
        ensemble.advance(chunk)?;
        if let Some(path) = &checkpoint_path {
            ensemble.checkpoint().save(path)?;
        }
    }
    let best = ensemble.best().clone();
    info!(
        "{}: parallel tempering best {:.10}, acceptance {:?}, swap acceptance {:.3}",
        ctx.spec().kind,
        best.energy,
        ensemble.acceptance(),
        ensemble.swap_acceptance()
    );
    let trace = ensemble.trace().to_vec();
    let best_history = ensemble.best_history().to_vec();
    let (params, energy, refine_status, refine_iterations) = match refine(ctx, &best.params, method, cfg)? {
        Some((p, e, s, it)) => (p, e, Some(s), it),
        None => (best.params.clone(), best.energy, None, 0),
    };
    if let Some(dir) = out {
        export_trace(&trace, dir.join(format!("{name}.trace.csv")), TraceFormat::Csv)?;
        CorrelatorDocument::new(ctx.spec().clone(), params.clone()).save(dir.join(format!("{name}.params.json")))?;
    }
    Ok(StageResult {
        spec: ctx.spec().clone(),
        initial_energy,
        pt_energy: best.energy,
        energy,
        params,
        trace,
        best_history,
        refine_status,
        refine_iterations,
    })
}

/// Cold-start parameters for a pure ansatz.
pub fn cold_start(spec: &AnsatzSpec, n_sites: usize, seed: u64) -> Result<CorrelatorSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    CorrelatorSet::random(spec, n_sites, COLD_START_NOISE, &mut rng)
}

/// Starting parameters of the main stage given the seed-stage result.
pub fn initial_params(spec: &AnsatzSpec, n_sites: usize, seed: u64, pairs: Option<&CorrelatorSet>) -> Result<CorrelatorSet> {
    match (spec.kind.seed_kind(), pairs) {
        (None, _) => cold_start(spec, n_sites, seed),
        (Some(_), None) => Err(Error::ContractViolation(format!("{} needs converged 2-site correlators", spec.kind))),
        (Some(_), Some(pairs)) if spec.kind.is_hybrid() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(3);
            CorrelatorSet::hybrid_from_pairs(spec, pairs, &mut rng)
        }
        (Some(_), Some(pairs)) => CorrelatorSet::warm_start_three_site(spec, pairs),
    }
}

/// Full workflow for `cfg.spec` on `problem`.
pub fn run_workflow(problem: &Problem, cfg: &WorkflowConfig, out: Option<&Path>) -> Result<WorkflowResult> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let n_sites = problem.n_sites();
    let seed = match cfg.spec.kind.seed_kind() {
        None => None,
        Some(kind) => {
            let spec = AnsatzSpec::new(kind);
            let ctx = problem.context(spec.clone(), cfg.screen)?;
            let init = cold_start(&spec, n_sites, cfg.pt.seed)?;
            Some(run_stage(&ctx, cfg, &cfg.pt, &init, cfg.seed_refine, out)?)
        }
    };
    let ctx = problem.context(cfg.spec.clone(), cfg.screen)?;
    let init = initial_params(&cfg.spec, n_sites, cfg.pt.seed, seed.as_ref().map(|s| &s.params))?;
    let main = run_stage(&ctx, cfg, &cfg.pt, &init, cfg.refine, out)?;
    Ok(WorkflowResult { seed, main })
}

/// Run record of the main stage.
pub fn run_record(problem: &Problem, result: &WorkflowResult, oracle: Option<f64>, trace: Option<PathBuf>) -> Result<RunRecord> {
    let mut record = RunRecord::new(
        &result.main.spec,
        problem.n_sites(),
        problem.space.dim() as u64,
        problem.basis.n_csfs() as u64,
        result.main.energy,
    )?;
    if let Some(e0) = oracle {
        record = record.with_oracle(e0);
    }
    record.trace = trace.map(|p| p.display().to_string());
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refine_labels_round_trip() {
        for m in [RefineMethod::None, RefineMethod::Bfgs, RefineMethod::ReducedGradient, RefineMethod::Subspace] {
            assert_eq!(m.to_string().parse::<RefineMethod>().unwrap(), m);
        }
        assert!("newton".parse::<RefineMethod>().is_err());
    }

    #[test]
    fn stage_names_are_file_safe() {
        for kind in AnsatzKind::ALL {
            let name = stage_name(kind);
            assert!(name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'), "{name}");
        }
        let names: std::collections::HashSet<&str> = AnsatzKind::ALL.iter().map(|&k| stage_name(k)).collect();
        assert_eq!(names.len(), AnsatzKind::ALL.len());
    }
}
