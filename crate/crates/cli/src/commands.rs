use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cgtns::analysis::{compare_runs, reduction_report, Comparison, RunRecord};
use cgtns::correlators::{param_count, AnsatzKind, AnsatzSpec};
use cgtns::hamiltonian::{exact_diagonalize_with_limit, parse_fcidump};
use cgtns::workflow::{run_record, run_workflow, stage_name, Problem, WorkflowConfig};
use log::info;
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};

pub const RECORD_FILE: &str = "record.json";
pub const CONFIG_FILE: &str = "config.txt";

fn problem(cfg: &RunConfig) -> Result<Problem> {
    let path = cfg
        .integrals
        .as_ref()
        .ok_or_else(|| ConfigError("no integral file given (set `integrals` in the config)".into()))?;
    let ints = parse_fcidump(path)?;
    let electrons = cfg
        .electrons
        .or(ints.header_electrons())
        .ok_or_else(|| ConfigError("electron count missing from both config and integral file".into()))?;
    let two_ms = cfg.two_ms.or(ints.header_two_ms()).unwrap_or((electrons % 2) as i32);
    let two_s = cfg.two_s.unwrap_or(two_ms.unsigned_abs());
    info!(
        "{}: {} orbitals, {electrons} electrons, 2Ms = {two_ms}, 2S = {two_s}",
        path.display(),
        ints.n_orbitals()
    );
    Ok(Problem::new(ints, electrons, two_ms, two_s, cfg.irreps)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub determinants: usize,
    pub csfs: usize,
    pub energy_determinants: f64,
    pub energy_csfs: f64,
}

pub fn oracle(cfg: &RunConfig, out: Option<&Path>) -> Result<OracleReport> {
    let problem = problem(cfg)?;
    let h = problem.hamiltonian()?;
    let det = exact_diagonalize_with_limit(&h, None, cfg.dense_limit)?;
    let csf = exact_diagonalize_with_limit(&h, Some(&problem.basis), cfg.dense_limit)?;
    let report = OracleReport {
        determinants: problem.space.dim(),
        csfs: problem.basis.n_csfs(),
        energy_determinants: det.energy,
        energy_csfs: csf.energy,
    };
    println!("determinants        {}", report.determinants);
    println!("csfs                {}", report.csfs);
    println!("energy_determinants {:.12}", report.energy_determinants);
    println!("energy_csfs         {:.12}", report.energy_csfs);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("oracle.json"), &report)?;
    }
    Ok(report)
}

pub fn run(cfg: &RunConfig) -> Result<RunRecord> {
    let problem = problem(cfg)?;
    let spec = problem.spec(cfg.ansatz, cfg.window, cfg.selected_si)?;
    let mut wf = WorkflowConfig::new(spec, cfg.pt_config());
    wf.refine = cfg.refine;
    wf.seed_refine = cfg.seed_refine;
    wf.refine_iterations = cfg.refine_iterations;
    wf.refine_tol = cfg.refine_tol;
    wf.screen = cfg.screen;
    wf.checkpoint_interval = cfg.checkpoint_interval;

    let out = &cfg.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join(CONFIG_FILE), cfg.dump()).with_context(|| format!("writing {}", out.display()))?;
    let result = run_workflow(&problem, &wf, Some(out))?;
    let oracle = problem.oracle_energy(cfg.dense_limit)?;
    let trace = PathBuf::from(format!("{}.trace.csv", stage_name(cfg.ansatz)));
    let record = run_record(&problem, &result, oracle, Some(trace))?;
    record.save(out.join(RECORD_FILE))?;

    println!("ansatz      {}", record.kind);
    println!("parameters  {} active, {} frozen", record.active_params, record.frozen_params);
    println!("space       {} determinants, {} CSFs", record.n_determinants, record.n_csfs);
    println!("reduction   {:.1}%", record.reduction_percent);
    println!("energy      {:.12}", record.energy);
    if let (Some(e0), Some(err)) = (record.oracle_energy, record.error) {
        println!("oracle      {e0:.12}");
        println!("error       {err:.3e}");
    }
    println!("record      {}", out.join(RECORD_FILE).display());
    Ok(record)
}

/// `"<parameters>, <percent>%"` for `kind` on `sites` spin orbitals; sel
/// kinds use the first `selected` sites.
pub fn count(kind: AnsatzKind, sites: usize, reference: u64, selected: Option<usize>) -> Result<String> {
    let spec = if kind.is_selected() {
        let n = selected.unwrap_or(sites);
        if n > sites {
            return Err(ConfigError(format!("{n} selected sites exceed {sites}")).into());
        }
        AnsatzSpec::selected(kind, (0..n).collect())
    } else {
        AnsatzSpec::new(kind)
    };
    let r = reduction_report(&spec, sites, reference)?;
    debug_assert_eq!(r.parameters, param_count(&spec, sites, 2));
    Ok(format!("{}, {}%", r.parameters, r.rounded_percent()))
}

fn load_record(path: &Path) -> Result<RunRecord> {
    let file = if path.is_dir() { path.join(RECORD_FILE) } else { path.to_path_buf() };
    Ok(RunRecord::load(&file)?)
}

pub fn compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<Comparison> {
    let ra = load_record(a)?;
    let rb = load_record(b)?;
    let c = compare_runs(&ra, &rb);
    println!("delta_hartree       {:.6}", c.splitting.hartree);
    println!("delta_kcal_per_mol  {:.2}", c.splitting.kcal_per_mol);
    println!("reduction_a         {:.0}%", c.reduction_a);
    println!("reduction_b         {:.0}%", c.reduction_b);
    if let Some(advisory) = &c.advisory {
        println!("advisory            {advisory}");
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("comparison.json"), &c)?;
    }
    Ok(c)
}
