//! Minimization of the CGTNS energy over correlator space.
//!
//! Parallel tempering runs one Metropolis walker per temperature of a
//! geometric ladder and exchanges configurations between neighbors; the
//! Metropolis objective is the total variational energy. Refinement stages
//! follow: BFGS over all active entries, a reduced-gradient sweep over one
//! tensor at a time, or an eigenvalue solve in the span of one tensor's
//! gradient states.
//!
//! Replica `l` draws from `ChaCha8Rng::seed_from_u64(seed ^ l)`; swap
//! decisions use a separate stream of `seed_from_u64(seed)`. Each
//! temperature slot keeps its generator and step width when configurations
//! are exchanged, so traces do not depend on the number of threads.

use std::path::Path;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlators::{AnsatzSpec, CombineMode, CorrelatorSet};
use crate::energy::EnergyContext;
use crate::linalg::generalized_lowest;
use crate::{Error, Result};

/// `T_l = T_1 · (exp[(ln T_P − ln T_1)/(P − 1)])^(l−1)`, `l = 1..P`.
pub fn temperature_ladder(t_min: f64, t_max: f64, replicas: usize) -> Result<Vec<f64>> {
    if !(t_min > 0.0) || !(t_min <= t_max) || !t_max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperatures must satisfy 0 < T_1 <= T_P, got {t_min}, {t_max}"
        )));
    }
    match replicas {
        0 => Err(Error::InvalidArgument("at least one replica is required".into())),
        1 if t_min != t_max => Err(Error::InvalidArgument(format!(
            "a single replica needs T_1 == T_P, got {t_min} and {t_max}"
        ))),
        1 => Ok(vec![t_min]),
        p => {
            let span = t_max / t_min;
            Ok((0..p).map(|l| t_min * span.powf(l as f64 / (p - 1) as f64)).collect())
        }
    }
}

/// `min{1, exp(ΔE/ΔT)}` with `ΔE = E_{i+1} − E_i` and
/// `ΔT = T_{i+1} T_i / (T_i − T_{i+1})`.
pub fn swap_probability(t_i: f64, e_i: f64, t_next: f64, e_next: f64) -> Result<f64> {
    if t_i == t_next {
        return Err(Error::InvalidArgument(format!(
            "swap between equal temperatures {t_i} leaves ΔT undefined"
        )));
    }
    let delta_e = e_next - e_i;
    let delta_t = t_next * t_i / (t_i - t_next);
    Ok((delta_e / delta_t).exp().min(1.0))
}

/// A Metropolis walker over a fixed list of scalar moves.
pub trait Walker {
    fn n_moves(&self) -> usize;
    fn energy(&self) -> f64;
    /// Shifts coordinate `k` by `delta` and returns the new energy. On error
    /// the state is left unchanged.
    fn try_move(&mut self, k: usize, delta: f64) -> Result<f64>;
    /// Reverts the last successful `try_move`.
    fn undo(&mut self);
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SweepStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl SweepStats {
    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// One proposal per move in fixed order: uniform in `[−step, step]`,
/// accepted with probability `min{1, exp(−ΔE/T)}`. `on_accept` sees the
/// walker after every accepted move.
pub fn metropolis_sweep<W: Walker, R: Rng>(
    walker: &mut W,
    temperature: f64,
    step: f64,
    rng: &mut R,
    mut on_accept: impl FnMut(&W, f64),
) -> SweepStats {
    let mut stats = SweepStats::default();
    for k in 0..walker.n_moves() {
        let delta = rng.random_range(-step..=step);
        let u: f64 = rng.random();
        stats.proposed += 1;
        let e_old = walker.energy();
        let e_new = match walker.try_move(k, delta) {
            Ok(e) => e,
            Err(err) => {
                warn!("move {k} rejected: {err}");
                continue;
            }
        };
        if e_new <= e_old || u < (-(e_new - e_old) / temperature).exp() {
            stats.accepted += 1;
            on_accept(walker, e_new);
        } else {
            walker.undo();
        }
    }
    stats
}

/// Multiplicative step adaptation toward a target acceptance ratio.
pub fn adapt_step(step: f64, acceptance: f64, target: f64, initial: f64) -> f64 {
    let factor = if acceptance > target { 1.1 } else { 1.0 / 1.1 };
    (step * factor).clamp(initial * 1e-4, initial * 1e2)
}

/// Parameters, amplitudes and energy of one replica.
#[derive(Clone, Debug)]
pub struct ReplicaState {
    pub params: CorrelatorSet,
    amplitudes: Vec<f64>,
    pub energy: f64,
}

impl ReplicaState {
    pub fn new(ctx: &EnergyContext, params: CorrelatorSet) -> Result<Self> {
        ctx.check_params(&params)?;
        let amplitudes = ctx.amplitudes(&params);
        let energy = ctx.energy_from_amplitudes(&amplitudes)?.energy;
        Ok(ReplicaState {
            params,
            amplitudes,
            energy,
        })
    }
}

struct Undo {
    tensor: usize,
    entry: usize,
    value: f64,
    energy: f64,
    amplitudes: Vec<(usize, f64)>,
}

/// Walker over the active entries of a correlator set. Amplitudes touched by
/// a move are recomputed from scratch, so a state rebuilt from its
/// parameters is bit-identical to the incrementally updated one.
pub struct CorrelatorWalker<'a> {
    ctx: &'a EnergyContext,
    state: &'a mut ReplicaState,
    moves: &'a [(usize, usize)],
    undo: Option<Undo>,
}

impl<'a> CorrelatorWalker<'a> {
    pub fn new(ctx: &'a EnergyContext, state: &'a mut ReplicaState, moves: &'a [(usize, usize)]) -> Self {
        CorrelatorWalker {
            ctx,
            state,
            moves,
            undo: None,
        }
    }

    pub fn params(&self) -> &CorrelatorSet {
        &self.state.params
    }

    fn restore(&mut self, undo: Undo) {
        self.state.params.set_entry_unchecked(undo.tensor, undo.entry, undo.value);
        for (n, a) in undo.amplitudes {
            self.state.amplitudes[n] = a;
        }
        self.state.energy = undo.energy;
    }
}

impl Walker for CorrelatorWalker<'_> {
    fn n_moves(&self) -> usize {
        self.moves.len()
    }

    fn energy(&self) -> f64 {
        self.state.energy
    }

    fn try_move(&mut self, k: usize, delta: f64) -> Result<f64> {
        let (t, e) = self.moves[k];
        let layout = self.ctx.layout();
        let old = self.state.params.entry(t, e);
        let members = layout.members(t, e);
        let undo = Undo {
            tensor: t,
            entry: e,
            value: old,
            energy: self.state.energy,
            amplitudes: members.iter().map(|&n| (n, self.state.amplitudes[n])).collect(),
        };
        self.state.params.set_entry_unchecked(t, e, old + delta);
        for &n in members {
            self.state.amplitudes[n] = layout.amplitude(&self.state.params, n);
        }
        match self.ctx.energy_from_amplitudes(&self.state.amplitudes) {
            Ok(report) => {
                self.state.energy = report.energy;
                self.undo = Some(undo);
                Ok(report.energy)
            }
            Err(err) => {
                self.restore(undo);
                Err(err)
            }
        }
    }

    fn undo(&mut self) {
        if let Some(undo) = self.undo.take() {
            self.restore(undo);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PtConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub replicas: usize,
    pub sweeps: u64,
    pub swap_interval: u64,
    pub step_size: f64,
    pub seed: u64,
    /// Target acceptance ratio; `None` keeps the step fixed.
    pub adapt_acceptance: Option<f64>,
}

impl Default for PtConfig {
    fn default() -> Self {
        PtConfig {
            t_min: 1e-6,
            t_max: 1e-3,
            replicas: 4,
            sweeps: 200,
            swap_interval: 1,
            step_size: 0.05,
            seed: 1,
            adapt_acceptance: Some(0.3),
        }
    }
}

impl PtConfig {
    pub fn validate(&self) -> Result<Vec<f64>> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument(format!("step size {} must be positive", self.step_size)));
        }
        if self.swap_interval == 0 {
            return Err(Error::InvalidArgument("swap interval must be at least 1".into()));
        }
        if let Some(a) = self.adapt_acceptance {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidArgument(format!("target acceptance {a} outside (0, 1)")));
            }
        }
        temperature_ladder(self.t_min, self.t_max, self.replicas)
    }
}

/// One trace row: the state of one temperature slot after one sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sweep: u64,
    pub replica: usize,
    pub temperature: f64,
    pub energy: f64,
    pub acceptance: f64,
    pub swapped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestState {
    pub energy: f64,
    pub params: CorrelatorSet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Slot {
    temperature: f64,
    step: f64,
    rng: ChaCha8Rng,
    params: CorrelatorSet,
    accepted: u64,
    proposed: u64,
}

/// Parallel-tempering state: one walker per temperature, the best state
/// seen, and the full trace.
pub struct ReplicaEnsemble<'a> {
    ctx: &'a EnergyContext,
    config: PtConfig,
    moves: Vec<(usize, usize)>,
    slots: Vec<Slot>,
    states: Vec<ReplicaState>,
    swap_rng: ChaCha8Rng,
    sweeps_done: u64,
    swap_rounds: u64,
    swap_attempts: u64,
    swap_accepts: u64,
    best: BestState,
    best_history: Vec<f64>,
    trace: Vec<TraceRow>,
    initial_energy: f64,
}

/// Serialized ensemble for checkpoint/restart.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleCheckpoint {
    pub format: String,
    pub version: u32,
    pub spec: AnsatzSpec,
    pub config: PtConfig,
    slots: Vec<Slot>,
    swap_rng: ChaCha8Rng,
    pub sweeps_done: u64,
    swap_rounds: u64,
    swap_attempts: u64,
    swap_accepts: u64,
    pub best: BestState,
    pub best_history: Vec<f64>,
    pub trace: Vec<TraceRow>,
    /// Energy of the starting parameters of replica 0.
    #[serde(default)]
    pub initial_energy: Option<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "cgtns-pt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

impl EnsembleCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: EnsembleCheckpoint = serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT || doc.version != CHECKPOINT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported checkpoint {} v{}",
                doc.format, doc.version
            )));
        }
        Ok(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl<'a> ReplicaEnsemble<'a> {
    /// Every replica starts from `init`.
    pub fn new(ctx: &'a EnergyContext, config: PtConfig, init: &CorrelatorSet) -> Result<Self> {
        let n = config.replicas;
        Self::with_initial_states(ctx, config, vec![init.clone(); n])
    }

    pub fn with_initial_states(ctx: &'a EnergyContext, config: PtConfig, inits: Vec<CorrelatorSet>) -> Result<Self> {
        let temperatures = config.validate()?;
        if inits.len() != temperatures.len() {
            return Err(Error::DimensionMismatch {
                expected: temperatures.len(),
                found: inits.len(),
            });
        }
        let states = inits
            .into_iter()
            .map(|p| ReplicaState::new(ctx, p))
            .collect::<Result<Vec<_>>>()?;
        let slots = temperatures
            .iter()
            .zip(&states)
            .enumerate()
            .map(|(l, (&temperature, s))| Slot {
                temperature,
                step: config.step_size,
                rng: ChaCha8Rng::seed_from_u64(config.seed ^ l as u64),
                params: s.params.clone(),
                accepted: 0,
                proposed: 0,
            })
            .collect();
        let (best_slot, best_state) = states
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.energy.total_cmp(&b.1.energy).then(a.0.cmp(&b.0)))
            .expect("at least one replica");
        debug!("initial best energy {} from replica {best_slot}", best_state.energy);
        let best = BestState {
            energy: best_state.energy,
            params: best_state.params.clone(),
        };
        let mut swap_rng = ChaCha8Rng::seed_from_u64(config.seed);
        swap_rng.set_stream(1);
        let initial_energy = states[0].energy;
        let moves = states[0].params.active_entries();
        if moves.is_empty() {
            return Err(Error::InvalidArgument("no active parameters to optimize".into()));
        }
        Ok(ReplicaEnsemble {
            ctx,
            config,
            moves,
            slots,
            states,
            swap_rng,
            sweeps_done: 0,
            swap_rounds: 0,
            swap_attempts: 0,
            swap_accepts: 0,
            best,
            best_history: Vec::new(),
            trace: Vec::new(),
            initial_energy,
        })
    }

    pub fn from_checkpoint(ctx: &'a EnergyContext, doc: EnsembleCheckpoint) -> Result<Self> {
        if &doc.spec != ctx.spec() {
            return Err(Error::ContractViolation(format!(
                "checkpoint is for {}, context for {}",
                doc.spec.kind,
                ctx.spec().kind
            )));
        }
        let temperatures = doc.config.validate()?;
        if doc.slots.len() != temperatures.len() {
            return Err(Error::Serialization("checkpoint slot count does not match its config".into()));
        }
        let states = doc
            .slots
            .iter()
            .map(|s| ReplicaState::new(ctx, s.params.clone()))
            .collect::<Result<Vec<_>>>()?;
        ctx.check_params(&doc.best.params)?;
        let moves = states[0].params.active_entries();
        Ok(ReplicaEnsemble {
            ctx,
            config: doc.config,
            moves,
            slots: doc.slots,
            states,
            swap_rng: doc.swap_rng,
            sweeps_done: doc.sweeps_done,
            swap_rounds: doc.swap_rounds,
            swap_attempts: doc.swap_attempts,
            swap_accepts: doc.swap_accepts,
            best: doc.best,
            best_history: doc.best_history,
            trace: doc.trace,
            initial_energy: doc.initial_energy.unwrap_or(f64::NAN),
        })
    }

    pub fn checkpoint(&self) -> EnsembleCheckpoint {
        let mut slots = self.slots.clone();
        for (slot, state) in slots.iter_mut().zip(&self.states) {
            slot.params = state.params.clone();
        }
        EnsembleCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.ctx.spec().clone(),
            config: self.config.clone(),
            slots,
            swap_rng: self.swap_rng.clone(),
            sweeps_done: self.sweeps_done,
            swap_rounds: self.swap_rounds,
            swap_attempts: self.swap_attempts,
            swap_accepts: self.swap_accepts,
            best: self.best.clone(),
            best_history: self.best_history.clone(),
            trace: self.trace.clone(),
            initial_energy: Some(self.initial_energy),
        }
    }

    pub fn config(&self) -> &PtConfig {
        &self.config
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.temperature).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.energy).collect()
    }

    pub fn replica_params(&self, slot: usize) -> &CorrelatorSet {
        &self.states[slot].params
    }

    pub fn best(&self) -> &BestState {
        &self.best
    }

    /// Global best energy after every completed sweep.
    pub fn best_history(&self) -> &[f64] {
        &self.best_history
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn sweeps_done(&self) -> u64 {
        self.sweeps_done
    }

    pub fn is_finished(&self) -> bool {
        self.sweeps_done >= self.config.sweeps
    }

    /// Acceptance ratio of each slot over the whole run.
    pub fn acceptance(&self) -> Vec<f64> {
        self.slots
            .iter()
            .map(|s| if s.proposed == 0 { 0.0 } else { s.accepted as f64 / s.proposed as f64 })
            .collect()
    }

    pub fn swap_acceptance(&self) -> f64 {
        if self.swap_attempts == 0 {
            0.0
        } else {
            self.swap_accepts as f64 / self.swap_attempts as f64
        }
    }

    /// Runs until the configured sweep count is reached.
    pub fn run(&mut self) -> Result<()> {
        let remaining = self.config.sweeps.saturating_sub(self.sweeps_done);
        self.advance(remaining)
    }

    /// Runs `n` more sweeps (capped at the configured total), attempting
    /// swaps after every `swap_interval`-th sweep.
    pub fn advance(&mut self, n: u64) -> Result<()> {
        let target = (self.sweeps_done + n).min(self.config.sweeps);
        while self.sweeps_done < target {
            let interval = self.config.swap_interval;
            let next_swap = (self.sweeps_done / interval + 1) * interval;
            let chunk = next_swap.min(target) - self.sweeps_done;
            self.run_chunk(chunk);
            if self.sweeps_done.is_multiple_of(interval) && self.slots.len() > 1 {
                self.attempt_swaps()?;
            }
        }
        Ok(())
    }

    fn run_chunk(&mut self, chunk: u64) {
        let ctx = self.ctx;
        let moves = &self.moves;
        let config = &self.config;
        let start = self.sweeps_done;
        let results: Vec<(Vec<TraceRow>, Vec<Option<BestState>>)> = self
            .slots
            .par_iter_mut()
            .zip(self.states.par_iter_mut())
            .enumerate()
            .map(|(l, (slot, state))| {
                let mut rows = Vec::with_capacity(chunk as usize);
                let mut bests = Vec::with_capacity(chunk as usize);
                let mut local_best: Option<BestState> = None;
                for s in 0..chunk {
                    let mut improved: Option<(f64, CorrelatorSet)> = None;
                    let threshold = local_best.as_ref().map_or(f64::INFINITY, |b| b.energy);
                    let stats = {
                        let mut walker = CorrelatorWalker::new(ctx, state, moves);
                        let mut best_e = threshold;
                        metropolis_sweep(&mut walker, slot.temperature, slot.step, &mut slot.rng, |w, e| {
                            if e < best_e {
                                best_e = e;
                                improved = Some((e, w.params().clone()));
                            }
                        })
                    };
                    if let Some((energy, params)) = improved {
                        local_best = Some(BestState { energy, params });
                    }
                    slot.accepted += stats.accepted;
                    slot.proposed += stats.proposed;
                    if let Some(target) = config.adapt_acceptance {
                        slot.step = adapt_step(slot.step, stats.acceptance(), target, config.step_size);
                    }
                    rows.push(TraceRow {
                        sweep: start + s + 1,
                        replica: l,
                        temperature: slot.temperature,
                        energy: state.energy,
                        acceptance: stats.acceptance(),
                        swapped: false,
                    });
                    bests.push(local_best.clone());
                }
                (rows, bests)
            })
            .collect();
        for s in 0..chunk as usize {
            for (rows, bests) in &results {
                if let Some(b) = &bests[s] {
                    if b.energy < self.best.energy {
                        self.best = b.clone();
                    }
                }
                self.trace.push(rows[s].clone());
            }
            self.best_history.push(self.best.energy);
        }
        self.sweeps_done += chunk;
    }

    fn attempt_swaps(&mut self) -> Result<()> {
        let parity = (self.swap_rounds % 2) as usize;
        self.swap_rounds += 1;
        let p = self.slots.len();
        let tail = self.trace.len() - p;
        let mut i = parity;
        while i + 1 < p {
            let prob = swap_probability(
                self.slots[i].temperature,
                self.states[i].energy,
                self.slots[i + 1].temperature,
                self.states[i + 1].energy,
            )?;
            let u: f64 = self.swap_rng.random();
            self.swap_attempts += 1;
            if u < prob {
                self.swap_accepts += 1;
                self.states.swap(i, i + 1);
                self.trace[tail + i].swapped = true;
                self.trace[tail + i + 1].swapped = true;
                self.trace[tail + i].energy = self.states[i].energy;
                self.trace[tail + i + 1].energy = self.states[i + 1].energy;
            }
            i += 2;
        }
        Ok(())
    }
}

/// Runs a full parallel-tempering optimization from `init`.
pub fn run_parallel_tempering<'a>(
    ctx: &'a EnergyContext,
    config: PtConfig,
    init: &CorrelatorSet,
) -> Result<ReplicaEnsemble<'a>> {
    let mut ensemble = ReplicaEnsemble::new(ctx, config, init)?;
    ensemble.run()?;
    Ok(ensemble)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefineStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
    Stagnated,
}

#[derive(Clone, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence threshold on the gradient 2-norm.
    pub tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 200,
            tol: 1e-6,
            armijo: 1e-4,
            max_backtracks: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub status: RefineStatus,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quasi-Newton minimization with an inverse-Hessian BFGS update and a
/// backtracking Armijo line search. Evaluation errors during the line
/// search count as insufficient decrease. The returned point is never worse
/// than `x0`.
pub fn bfgs_minimize(
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    x0: &[f64],
    opts: &BfgsOptions,
) -> Result<Minimum> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut iterations = 0;
    let mut status = RefineStatus::MaxIterations;
    while iterations < opts.max_iter {
        if norm2(&g) < opts.tol {
            status = RefineStatus::Converged;
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut d: Vec<f64> = (-(&h_inv * &gv)).as_slice().to_vec();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h_inv.fill_with_identity();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut alpha = if first { (1.0 / norm2(&g)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            if let Ok((ft, gt)) = f(&trial) {
                if ft.is_finite() && ft <= fx + opts.armijo * alpha * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            status = RefineStatus::LineSearchFailed;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if first {
                h_inv *= sy / dot(&y, &y);
            }
            let sv = DVector::from_column_slice(&s);
            let yv = DVector::from_column_slice(&y);
            let rho = 1.0 / sy;
            let hy = &h_inv * &yv;
            let yhy = yv.dot(&hy);
            // H ← H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
            h_inv += (&sv * sv.transpose()) * (rho * rho * yhy + rho);
            first = false;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    if iterations >= opts.max_iter && norm2(&g) < opts.tol {
        status = RefineStatus::Converged;
    }
    Ok(Minimum {
        gradient_norm: norm2(&g),
        x,
        value: fx,
        iterations,
        status,
    })
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub params: CorrelatorSet,
    pub initial_energy: f64,
    pub energy: f64,
    pub iterations: usize,
    pub status: RefineStatus,
}

fn with_active(params: &CorrelatorSet, active: &[(usize, usize)], x: &[f64]) -> CorrelatorSet {
    let mut p = params.clone();
    for (&(t, e), &v) in active.iter().zip(x) {
        p.set_entry_unchecked(t, e, v);
    }
    p
}

/// BFGS over every active entry of `params`; frozen tensors are untouched.
pub fn bfgs_refine(ctx: &EnergyContext, params: &CorrelatorSet, max_iter: usize, tol: f64) -> Result<RefineOutcome> {
    ctx.check_params(params)?;
    let active = params.active_entries();
    let x0: Vec<f64> = active.iter().map(|&(t, e)| params.entry(t, e)).collect();
    let initial_energy = ctx.variational_energy(params)?.energy;
    let opts = BfgsOptions {
        max_iter,
        tol,
        ..BfgsOptions::default()
    };
    let min = bfgs_minimize(
        |x| {
            let p = with_active(params, &active, x);
            let (report, grad) = ctx.energy_gradient(&p)?;
            Ok((report.energy, grad))
        },
        &x0,
        &opts,
    )?;
    let refined = with_active(params, &active, &min.x);
    let energy = ctx.variational_energy(&refined)?.energy;
    let (params, energy) = if energy <= initial_energy {
        (refined, energy)
    } else {
        (params.clone(), initial_energy)
    };
    Ok(RefineOutcome {
        params,
        initial_energy,
        energy,
        iterations: min.iterations,
        status: min.status,
    })
}

/// Cycles over active tensors, taking a backtracking step along the
/// negative gradient of one tensor at a time (`site_pair_gradient` for
/// pairs). Stops after `passes` cycles or when a full cycle lowers the
/// energy by less than `1e-14`.
pub fn reduced_gradient_sweep(ctx: &EnergyContext, params: &CorrelatorSet, passes: usize) -> Result<RefineOutcome> {
    ctx.check_params(params)?;
    let mut current = params.clone();
    let initial_energy = ctx.variational_energy(&current)?.energy;
    let mut energy = initial_energy;
    let active_tensors: Vec<usize> = (0..current.tensors().len())
        .filter(|&t| !current.tensor(t).frozen)
        .collect();
    let mut status = RefineStatus::MaxIterations;
    let mut iterations = 0;
    for _ in 0..passes {
        iterations += 1;
        let pass_start = energy;
        for &t in &active_tensors {
            let (_, grad) = ctx.energy_gradient(&current)?;
            let entries = current.active_entries();
            let offset = entries.iter().position(|&(k, _)| k == t).expect("active tensor");
            let n = current.tensor(t).entries.len();
            let g = &grad[offset..offset + n];
            let gnorm = norm2(g);
            if gnorm == 0.0 {
                continue;
            }
            // first trial moves the tensor by unit length
            let mut alpha = 1.0 / gnorm;
            for _ in 0..40 {
                let mut trial = current.clone();
                for (e, gi) in g.iter().enumerate() {
                    trial.set_entry_unchecked(t, e, current.entry(t, e) - alpha * gi);
                }
                if let Ok(report) = ctx.variational_energy(&trial) {
                    if report.energy <= energy - 1e-4 * alpha * gnorm * gnorm {
                        current = trial;
                        energy = report.energy;
                        break;
                    }
                }
                alpha *= 0.5;
            }
        }
        if pass_start - energy < 1e-14 {
            status = RefineStatus::Stagnated;
            break;
        }
    }
    Ok(RefineOutcome {
        params: current,
        initial_energy,
        energy,
        iterations,
        status,
    })
}

#[derive(Clone, Debug)]
pub struct SubspaceSolution {
    pub params: CorrelatorSet,
    /// Lowest eigenvalue of the projected problem.
    pub eigenvalue: f64,
    /// Variational energy of the updated parameters.
    pub energy: f64,
    /// Dimension kept after dropping null directions.
    pub rank: usize,
}

/// Replaces tensor `t` by the lowest eigenvector of `H` projected on the
/// states `∂Ψ/∂C^[t]_e`. Sum hybrids add the fixed pair-block state to the
/// subspace and rescale so its coefficient is one. Entries no determinant
/// selects keep their values.
pub fn gradient_subspace_tensor(ctx: &EnergyContext, params: &CorrelatorSet, t: usize) -> Result<SubspaceSolution> {
    ctx.check_params(params)?;
    if t >= params.tensors().len() {
        return Err(Error::IndexOutOfBounds(format!("tensor {t}")));
    }
    if params.tensor(t).frozen {
        return Err(Error::ContractViolation(format!(
            "tensor {:?} is frozen",
            params.tensor(t).sites
        )));
    }
    let layout = ctx.layout();
    let basis = ctx.basis();
    let n_entries = params.tensor(t).entries.len();
    let n_dets = basis.n_determinants();
    let in_pairs = t < layout.n_pairs();
    let mode = layout.mode();
    let mut states: Vec<Vec<f64>> = vec![vec![0.0; n_dets]; n_entries];
    let mut constant = vec![0.0; n_dets];
    for n in 0..n_dets {
        let e = layout.entry_index(n, t);
        let own_cof = layout.block_cofactor(params, n, t);
        let other = if in_pairs { layout.triple_block(params, n) } else { layout.pair_block(params, n) };
        states[e][n] = match mode {
            CombineMode::Product => own_cof * other,
            CombineMode::Sum => own_cof,
        };
        if mode == CombineMode::Sum {
            constant[n] = other;
        }
    }
    let used: Vec<usize> = (0..n_entries).filter(|&e| states[e].iter().any(|&v| v != 0.0)).collect();
    let mut vectors: Vec<Vec<f64>> = used.iter().map(|&e| basis.project(&states[e])).collect();
    let with_constant = mode == CombineMode::Sum && constant.iter().any(|&v| v != 0.0);
    if with_constant {
        vectors.push(basis.project(&constant));
    }
    let dim = vectors.len();
    let expanded: Vec<Vec<f64>> = vectors.iter().map(|v| basis.expand(v)).collect();
    let h_applied: Vec<Vec<f64>> = expanded.iter().map(|v| ctx.hamiltonian().apply(v)).collect();
    let mut h = DMatrix::zeros(dim, dim);
    let mut s = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            h[(a, b)] = dot(&expanded[a], &h_applied[b]);
            s[(a, b)] = dot(&expanded[a], &expanded[b]);
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    let (eigenvalue, coeffs) = generalized_lowest(&h, &s, 1e-10)?;
    let rank = {
        let eig = nalgebra::SymmetricEigen::new(s.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        eig.eigenvalues.iter().filter(|&&v| v > 1e-10 * max).count()
    };
    let mut coeffs: Vec<f64> = coeffs.as_slice().to_vec();
    if with_constant {
        let a = coeffs[dim - 1];
        if a.abs() < 1e-12 {
            return Err(Error::DegenerateState(
                "subspace minimum has no component along the frozen block".into(),
            ));
        }
        coeffs = coeffs[..dim - 1].iter().map(|c| c / a).collect();
    }
    let mut updated = params.clone();
    for (&e, &c) in used.iter().zip(&coeffs) {
        updated.set_entry_unchecked(t, e, c);
    }
    let energy = ctx.variational_energy(&updated)?.energy;
    Ok(SubspaceSolution {
        params: updated,
        eigenvalue,
        energy,
        rank,
    })
}

/// [`gradient_subspace_tensor`] for the pair correlator `C^[ij]`.
pub fn gradient_subspace_solve(ctx: &EnergyContext, params: &CorrelatorSet, i: usize, j: usize) -> Result<SubspaceSolution> {
    let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
    let t = params
        .find(&[lo, hi])
        .ok_or_else(|| Error::InvalidArgument(format!("no correlator over sites ({lo}, {hi})")))?;
    gradient_subspace_tensor(ctx, params, t)
}

/// Repeated subspace solves over all active tensors, keeping only updates
/// that lower the energy.
pub fn subspace_sweep(ctx: &EnergyContext, params: &CorrelatorSet, passes: usize) -> Result<RefineOutcome> {
    ctx.check_params(params)?;
    let mut current = params.clone();
    let initial_energy = ctx.variational_energy(&current)?.energy;
    let mut energy = initial_energy;
    let active: Vec<usize> = (0..current.tensors().len()).filter(|&t| !current.tensor(t).frozen).collect();
    let mut status = RefineStatus::MaxIterations;
    let mut iterations = 0;
    for _ in 0..passes {
        iterations += 1;
        let pass_start = energy;
        for &t in &active {
            match gradient_subspace_tensor(ctx, &current, t) {
                Ok(sol) if sol.energy < energy => {
                    current = sol.params;
                    energy = sol.energy;
                }
                Ok(_) => {}
                Err(err) => warn!("subspace solve for tensor {t} skipped: {err}"),
            }
        }
        if pass_start - energy <= 1e-10 {
            status = RefineStatus::Stagnated;
            break;
        }
    }
    Ok(RefineOutcome {
        params: current,
        initial_energy,
        energy,
        iterations,
        status,
    })
}
