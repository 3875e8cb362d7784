//! Spin-adapted CGTNS energies, per-CSF estimators and analytic gradients.
//!
//! The wave function in the determinant basis is `ψ = Kᵀ S` with CSF weights
//! `S = K c` and correlator amplitudes `c`. Its energy is the Rayleigh
//! quotient `ψᵀ H ψ / ψᵀ ψ`; the denominator is the generic overlap
//! `Σ_pq S_p S_q Σ_n K_pn K_qn`, evaluated as `|Kᵀ S|²`.
//!
//! With a screening threshold `τ > 0`, CSFs with `|S_r| < τ · max|S|` are
//! dropped from numerator and denominator alike; the mask is held fixed when
//! differentiating.

use nalgebra::{DMatrix, DVector};

use crate::correlators::{amplitude, AmplitudeLayout, AnsatzSpec, CorrelatorSet};
use crate::fock::CsfBasis;
use crate::hamiltonian::HamiltonianOperator;
use crate::{Error, Result};

/// Norms at or below this are treated as zero.
pub const NORM_FLOOR: f64 = 1e-300;

/// CSF spaces up to this size get a cached dense `K H Kᵀ`.
pub const DEFAULT_CSF_CACHE_LIMIT: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub energy: f64,
    pub norm: f64,
    pub screened_csfs: usize,
    pub estimator_samples: Option<Vec<f64>>,
}

/// Everything needed to evaluate energies of one ansatz structure on one
/// CSF space. Immutable after construction and shared across replicas.
pub struct EnergyContext {
    spec: AnsatzSpec,
    basis: CsfBasis,
    hamiltonian: HamiltonianOperator,
    csf_h: Option<DMatrix<f64>>,
    layout: AmplitudeLayout,
    template: CorrelatorSet,
    screen: f64,
}

/// Intermediate quantities of one evaluation.
struct Evaluation {
    report: EnergyReport,
    /// masked CSF weights
    weights: Vec<f64>,
    /// `K H Kᵀ S` restricted to kept CSFs
    h_weights: Vec<f64>,
    /// `K Kᵀ S` restricted to kept CSFs
    o_weights: Vec<f64>,
}

impl EnergyContext {
    pub fn new(spec: AnsatzSpec, basis: CsfBasis, hamiltonian: HamiltonianOperator, screen: f64) -> Result<Self> {
        Self::with_cache_limit(spec, basis, hamiltonian, screen, DEFAULT_CSF_CACHE_LIMIT)
    }

    pub fn with_cache_limit(
        spec: AnsatzSpec,
        basis: CsfBasis,
        hamiltonian: HamiltonianOperator,
        screen: f64,
        cache_limit: usize,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&screen) {
            return Err(Error::InvalidArgument(format!("screening threshold {screen} outside [0, 1)")));
        }
        if basis.space() != hamiltonian.space() {
            return Err(Error::ContractViolation(
                "CSF basis and Hamiltonian span different determinant spaces".into(),
            ));
        }
        let template = CorrelatorSet::identity(&spec, basis.space().n_sites())?;
        let layout = AmplitudeLayout::new(&template, &spec, basis.space())?;
        let csf_h = if basis.n_csfs() <= cache_limit {
            Some(hamiltonian.csf_matrix(&basis)?)
        } else {
            None
        };
        Ok(EnergyContext {
            spec,
            basis,
            hamiltonian,
            csf_h,
            layout,
            template,
            screen,
        })
    }

    pub fn spec(&self) -> &AnsatzSpec {
        &self.spec
    }

    pub fn basis(&self) -> &CsfBasis {
        &self.basis
    }

    pub fn hamiltonian(&self) -> &HamiltonianOperator {
        &self.hamiltonian
    }

    pub fn layout(&self) -> &AmplitudeLayout {
        &self.layout
    }

    pub fn screen(&self) -> f64 {
        self.screen
    }

    pub fn has_csf_cache(&self) -> bool {
        self.csf_h.is_some()
    }

    /// Verifies that `params` has the structure this context was built for.
    pub fn check_params(&self, params: &CorrelatorSet) -> Result<()> {
        if params.n_sites() != self.template.n_sites() || params.tensors().len() != self.template.tensors().len() {
            return Err(Error::ContractViolation(format!(
                "parameter set does not match the {} structure of this context",
                self.spec.kind
            )));
        }
        params.check_spec(&self.spec)
    }

    pub fn amplitudes(&self, params: &CorrelatorSet) -> Vec<f64> {
        self.layout.amplitudes(params)
    }

    pub fn variational_energy(&self, params: &CorrelatorSet) -> Result<EnergyReport> {
        self.check_params(params)?;
        self.energy_from_amplitudes(&self.amplitudes(params))
    }

    /// Energy of explicit determinant amplitudes (used by the optimizer's
    /// incremental updates and to inject reference vectors in tests).
    pub fn energy_from_amplitudes(&self, amplitudes: &[f64]) -> Result<EnergyReport> {
        Ok(self.evaluate(amplitudes, false)?.report)
    }

    fn mask(&self, weights: &mut [f64]) -> usize {
        if self.screen == 0.0 {
            return 0;
        }
        let max = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let cut = self.screen * max;
        let mut dropped = 0;
        for w in weights.iter_mut() {
            if w.abs() < cut {
                *w = 0.0;
                dropped += 1;
            }
        }
        dropped
    }

    fn evaluate(&self, amplitudes: &[f64], with_overlap: bool) -> Result<Evaluation> {
        if amplitudes.len() != self.basis.n_determinants() {
            return Err(Error::DimensionMismatch {
                expected: self.basis.n_determinants(),
                found: amplitudes.len(),
            });
        }
        let mut weights = self.basis.project(amplitudes);
        let screened = self.mask(&mut weights);
        let psi = self.basis.expand(&weights);
        let norm: f64 = psi.iter().map(|x| x * x).sum();
        if !(norm > NORM_FLOOR) || !norm.is_finite() {
            return Err(Error::DegenerateState(format!("wave-function norm {norm:e}")));
        }
        let h_weights = match &self.csf_h {
            Some(a) => (a * DVector::from_column_slice(&weights)).as_slice().to_vec(),
            None => self.basis.project(&self.hamiltonian.apply(&psi)),
        };
        let mut h_weights = h_weights;
        for (hw, w) in h_weights.iter_mut().zip(&weights) {
            if *w == 0.0 && self.screen > 0.0 {
                *hw = 0.0;
            }
        }
        let numerator: f64 = weights.iter().zip(&h_weights).map(|(w, hw)| w * hw).sum();
        let energy = numerator / norm;
        let o_weights = if with_overlap {
            let mut o = self.basis.project(&psi);
            if self.screen > 0.0 {
                for (ow, w) in o.iter_mut().zip(&weights) {
                    if *w == 0.0 {
                        *ow = 0.0;
                    }
                }
            }
            o
        } else {
            Vec::new()
        };
        Ok(Evaluation {
            report: EnergyReport {
                energy,
                norm,
                screened_csfs: screened,
                estimator_samples: None,
            },
            weights,
            h_weights,
            o_weights,
        })
    }

    /// `E_r = Σ_s (S_s / S_r) ⟨Φ_s|H|Φ_r⟩`.
    pub fn csf_estimator(&self, r: usize, params: &CorrelatorSet) -> Result<f64> {
        self.check_params(params)?;
        if r >= self.basis.n_csfs() {
            return Err(Error::IndexOutOfBounds(format!("CSF {r} of {}", self.basis.n_csfs())));
        }
        let eval = self.evaluate(&self.amplitudes(params), false)?;
        estimator_at(&eval, r)
    }

    /// Energy report with every defined per-CSF estimator attached
    /// (undefined ones are NaN).
    pub fn energy_with_estimators(&self, params: &CorrelatorSet) -> Result<EnergyReport> {
        self.check_params(params)?;
        let eval = self.evaluate(&self.amplitudes(params), false)?;
        let samples = (0..self.basis.n_csfs())
            .map(|r| estimator_at(&eval, r).unwrap_or(f64::NAN))
            .collect();
        let mut report = eval.report;
        report.estimator_samples = Some(samples);
        Ok(report)
    }

    /// `∂E/∂c_n` for explicit determinant amplitudes.
    pub fn amplitude_gradient(&self, amplitudes: &[f64]) -> Result<(EnergyReport, Vec<f64>)> {
        let eval = self.evaluate(amplitudes, true)?;
        let e = eval.report.energy;
        let scale = 2.0 / eval.report.norm;
        let g_csf: Vec<f64> = eval
            .h_weights
            .iter()
            .zip(&eval.o_weights)
            .map(|(hw, ow)| scale * (hw - e * ow))
            .collect();
        Ok((eval.report, self.basis.expand(&g_csf)))
    }

    /// `∂E/∂C^[t]_e` for every active entry, ordered as
    /// [`CorrelatorSet::active_entries`].
    pub fn energy_gradient(&self, params: &CorrelatorSet) -> Result<(EnergyReport, Vec<f64>)> {
        self.check_params(params)?;
        let amps = self.amplitudes(params);
        self.gradient_with_amplitudes(params, &amps)
    }

    /// Gradient contracted with the cofactors of `params` but evaluated at
    /// the given amplitudes (test seam for reference vectors).
    pub fn gradient_with_amplitudes(
        &self,
        params: &CorrelatorSet,
        amplitudes: &[f64],
    ) -> Result<(EnergyReport, Vec<f64>)> {
        let (report, g_det) = self.amplitude_gradient(amplitudes)?;
        let per_tensor = self.layout.contract_derivatives(params, &g_det);
        let grad = params
            .active_entries()
            .into_iter()
            .map(|(t, e)| per_tensor[t][e])
            .collect();
        Ok((report, grad))
    }

    /// The 4 gradient components of `C^[ij]`, sliced from the full gradient.
    pub fn site_pair_gradient(&self, params: &CorrelatorSet, i: usize, j: usize) -> Result<[f64; 4]> {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let t = params
            .find(&[lo, hi])
            .ok_or_else(|| Error::InvalidArgument(format!("no correlator over sites ({lo}, {hi})")))?;
        if params.tensor(t).frozen {
            return Err(Error::ContractViolation(format!("correlator ({lo}, {hi}) is frozen")));
        }
        let (_, grad) = self.energy_gradient(params)?;
        let offset = params
            .active_entries()
            .iter()
            .position(|&(k, _)| k == t)
            .expect("active tensor has entries");
        let mut out = [0.0; 4];
        out.copy_from_slice(&grad[offset..offset + 4]);
        Ok(out)
    }
}

fn estimator_at(eval: &Evaluation, r: usize) -> Result<f64> {
    let s_r = eval.weights[r];
    if s_r == 0.0 || !s_r.is_finite() {
        return Err(Error::EstimatorUndefined { csf: r, weight: s_r });
    }
    Ok(eval.h_weights[r] / s_r)
}

/// Reference evaluation without caches: amplitudes from [`amplitude`],
/// `ψ = Kᵀ S`, and `ψᵀ H ψ / ψᵀ ψ` with the sparse determinant Hamiltonian.
pub fn variational_energy(
    params: &CorrelatorSet,
    spec: &AnsatzSpec,
    basis: &CsfBasis,
    hamiltonian: &HamiltonianOperator,
    screen: f64,
) -> Result<EnergyReport> {
    params.check_spec(spec)?;
    if basis.space() != hamiltonian.space() {
        return Err(Error::ContractViolation(
            "CSF basis and Hamiltonian span different determinant spaces".into(),
        ));
    }
    let amps: Vec<f64> = basis.space().onvs().iter().map(|&o| amplitude(params, spec, o)).collect();
    let mut weights = basis.project(&amps);
    let mut screened = 0;
    if screen > 0.0 {
        let cut = screen * weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        for w in weights.iter_mut() {
            if w.abs() < cut {
                *w = 0.0;
                screened += 1;
            }
        }
    }
    let psi = basis.expand(&weights);
    let norm: f64 = psi.iter().map(|x| x * x).sum();
    if !(norm > NORM_FLOOR) || !norm.is_finite() {
        return Err(Error::DegenerateState(format!("wave-function norm {norm:e}")));
    }
    let h_psi = hamiltonian.apply(&psi);
    let numerator: f64 = psi.iter().zip(&h_psi).map(|(a, b)| a * b).sum();
    Ok(EnergyReport {
        energy: numerator / norm,
        norm,
        screened_csfs: screened,
        estimator_samples: None,
    })
}
