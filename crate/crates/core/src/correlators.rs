//! Correlator parameterizations of determinant amplitudes.
//!
//! A correlator over sites `(i, j)` is a 2×2 tensor `C^[ij]_{ab}`, one over
//! `(i, j, k)` a 2×2×2 tensor `C^[ijk]_{abc}`; the amplitude of a determinant
//! multiplies the entries selected by its occupations. Entries are stored
//! flat with the first site as the most significant bit, so `C_{ab}` lives
//! at `2a + b` and `C_{abc}` at `4a + 2b + c`.
//!
//! Amplitudes are evaluated block-wise: the pair block `P_n` (a left fold over
//! the pair tensors) and the triple block `T_n`. Product forms return
//! `P_n · T_n`, sum hybrids `P_n + T_n`; an empty block contributes `1`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fock::{CsfBasis, FockSubspace, OccupationVector};
use crate::{Error, Result};

/// The ansatz family. `/si` marks the self-interaction-free variants
/// (strictly increasing site indices), `[2s]` a hybrid with frozen 2-site
/// correlators, `+` a sum instead of a product, and `sel` a hybrid whose
/// 3-site correlators cover only selected sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AnsatzKind {
    TwoSite,
    TwoSiteSiFree,
    ThreeSite,
    ThreeSiteSiFree,
    Hybrid,
    HybridSiFree,
    SumHybrid,
    SumHybridSiFree,
    HybridSelected,
    SumHybridSelected,
}

/// How the pair and triple blocks combine into an amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombineMode {
    Product,
    Sum,
}

/// Whether repeated site indices are allowed in a tensor key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteRule {
    WithSelfInteraction,
    SelfInteractionFree,
}

impl AnsatzKind {
    pub const ALL: [AnsatzKind; 10] = [
        AnsatzKind::TwoSite,
        AnsatzKind::TwoSiteSiFree,
        AnsatzKind::ThreeSite,
        AnsatzKind::ThreeSiteSiFree,
        AnsatzKind::Hybrid,
        AnsatzKind::HybridSiFree,
        AnsatzKind::SumHybrid,
        AnsatzKind::SumHybridSiFree,
        AnsatzKind::HybridSelected,
        AnsatzKind::SumHybridSelected,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AnsatzKind::TwoSite => "2s",
            AnsatzKind::TwoSiteSiFree => "2s/si",
            AnsatzKind::ThreeSite => "3s",
            AnsatzKind::ThreeSiteSiFree => "3s/si",
            AnsatzKind::Hybrid => "3s[2s]",
            AnsatzKind::HybridSiFree => "3s/si[2s]",
            AnsatzKind::SumHybrid => "3s+[2s]",
            AnsatzKind::SumHybridSiFree => "3s/si+[2s]",
            AnsatzKind::HybridSelected => "3s[2s]sel",
            AnsatzKind::SumHybridSelected => "3s+[2s]sel",
        }
    }

    pub fn combine_mode(self) -> CombineMode {
        match self {
            AnsatzKind::SumHybrid | AnsatzKind::SumHybridSiFree | AnsatzKind::SumHybridSelected => {
                CombineMode::Sum
            }
            _ => CombineMode::Product,
        }
    }

    /// Hybrids carry frozen 2-site correlators and active 3-site ones.
    pub fn is_hybrid(self) -> bool {
        !matches!(
            self,
            AnsatzKind::TwoSite | AnsatzKind::TwoSiteSiFree | AnsatzKind::ThreeSite | AnsatzKind::ThreeSiteSiFree
        )
    }

    pub fn is_selected(self) -> bool {
        matches!(self, AnsatzKind::HybridSelected | AnsatzKind::SumHybridSelected)
    }

    pub fn pair_rule(self) -> Option<SiteRule> {
        match self {
            AnsatzKind::TwoSiteSiFree => Some(SiteRule::SelfInteractionFree),
            AnsatzKind::ThreeSite | AnsatzKind::ThreeSiteSiFree => None,
            _ => Some(SiteRule::WithSelfInteraction),
        }
    }

    /// Rule for the 3-site block; selected kinds take theirs from the spec.
    fn triple_rule(self) -> Option<SiteRule> {
        match self {
            AnsatzKind::TwoSite | AnsatzKind::TwoSiteSiFree => None,
            AnsatzKind::ThreeSiteSiFree | AnsatzKind::HybridSiFree | AnsatzKind::SumHybridSiFree => {
                Some(SiteRule::SelfInteractionFree)
            }
            _ => Some(SiteRule::WithSelfInteraction),
        }
    }

    /// The 2-site kind whose converged correlators seed this kind: the
    /// frozen block of a hybrid, or the warm start of a pure 3-site ansatz.
    pub fn seed_kind(self) -> Option<AnsatzKind> {
        match self {
            AnsatzKind::TwoSite | AnsatzKind::TwoSiteSiFree => None,
            AnsatzKind::ThreeSiteSiFree => Some(AnsatzKind::TwoSiteSiFree),
            _ => Some(AnsatzKind::TwoSite),
        }
    }
}

impl fmt::Display for AnsatzKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AnsatzKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnsatzKind::ALL
            .into_iter()
            .find(|k| k.label() == s.trim())
            .ok_or_else(|| {
                let known: Vec<&str> = AnsatzKind::ALL.iter().map(|k| k.label()).collect();
                Error::InvalidArgument(format!("unknown ansatz {s:?}; expected one of {}", known.join(", ")))
            })
    }
}

impl TryFrom<String> for AnsatzKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AnsatzKind> for String {
    fn from(k: AnsatzKind) -> String {
        k.label().to_string()
    }
}

/// An ansatz kind plus the site selection used by `sel` kinds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    pub kind: AnsatzKind,
    /// Spin orbitals carrying 3-site correlators (`sel` kinds only).
    #[serde(default)]
    pub selected_sites: Vec<usize>,
    /// Whether selected triples may repeat a site.
    #[serde(default = "default_true")]
    pub selected_si_inclusive: bool,
}

fn default_true() -> bool {
    true
}

impl AnsatzSpec {
    pub fn new(kind: AnsatzKind) -> Self {
        AnsatzSpec {
            kind,
            selected_sites: Vec::new(),
            selected_si_inclusive: true,
        }
    }

    pub fn selected(kind: AnsatzKind, sites: Vec<usize>) -> Self {
        let mut sites = sites;
        sites.sort_unstable();
        sites.dedup();
        AnsatzSpec {
            kind,
            selected_sites: sites,
            selected_si_inclusive: true,
        }
    }

    pub fn with_selected_si(mut self, inclusive: bool) -> Self {
        self.selected_si_inclusive = inclusive;
        self
    }

    pub fn combine_mode(&self) -> CombineMode {
        self.kind.combine_mode()
    }

    pub fn validate(&self, n_sites: usize) -> Result<()> {
        if n_sites < 2 {
            return Err(Error::InvalidArgument(format!(
                "correlator ansätze need at least 2 spin orbitals, got {n_sites}"
            )));
        }
        if self.kind.is_selected() {
            if self.selected_sites.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "{} requires a nonempty site selection",
                    self.kind
                )));
            }
            if let Some(&bad) = self.selected_sites.iter().find(|&&s| s >= n_sites) {
                return Err(Error::InvalidArgument(format!(
                    "selected site {bad} outside {n_sites} spin orbitals"
                )));
            }
            if !self.selected_sites.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::InvalidArgument("selected sites must be sorted and unique".into()));
            }
        } else if !self.selected_sites.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} does not take a site selection",
                self.kind
            )));
        }
        Ok(())
    }

    fn triple_rule(&self) -> Option<SiteRule> {
        if self.kind.is_selected() {
            Some(if self.selected_si_inclusive {
                SiteRule::WithSelfInteraction
            } else {
                SiteRule::SelfInteractionFree
            })
        } else {
            self.kind.triple_rule()
        }
    }

    /// Tensor keys in storage order: pairs, then triples, each ascending.
    pub fn tensor_keys(&self, n_sites: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let all: Vec<usize> = (0..n_sites).collect();
        let pairs = match self.kind.pair_rule() {
            Some(rule) => site_tuples(&all, 2, rule),
            None => Vec::new(),
        };
        let triple_sites = if self.kind.is_selected() { &self.selected_sites } else { &all };
        let triples = match self.triple_rule() {
            Some(rule) => site_tuples(triple_sites, 3, rule),
            None => Vec::new(),
        };
        (pairs, triples)
    }
}

fn site_tuples(sites: &[usize], order: usize, rule: SiteRule) -> Vec<Vec<usize>> {
    fn rec(sites: &[usize], start: usize, order: usize, rule: SiteRule, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == order {
            out.push(cur.clone());
            return;
        }
        for k in start..sites.len() {
            cur.push(sites[k]);
            let next = match rule {
                SiteRule::WithSelfInteraction => k,
                SiteRule::SelfInteractionFree => k + 1,
            };
            rec(sites, next, order, rule, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(sites, 0, order, rule, &mut Vec::with_capacity(order), &mut out);
    out
}

/// Number of variational parameters for a local dimension `q`. Hybrids
/// report only their active (3-site) parameters.
pub fn param_count(spec: &AnsatzSpec, n_sites: usize, q: u64) -> u64 {
    let m = n_sites as u64;
    let pairs_with_si = m * (m + 1) / 2;
    let pairs_si_free = m * m.saturating_sub(1) / 2;
    let triples_with_si = |n: u64| n * (n + 1) * (n + 2) / 6;
    let triples_si_free = |n: u64| n * n.saturating_sub(1) * n.saturating_sub(2) / 6;
    let q2 = q * q;
    let q3 = q2 * q;
    match spec.kind {
        AnsatzKind::TwoSite => pairs_with_si * q2,
        AnsatzKind::TwoSiteSiFree => pairs_si_free * q2,
        AnsatzKind::ThreeSite | AnsatzKind::Hybrid | AnsatzKind::SumHybrid => triples_with_si(m) * q3,
        AnsatzKind::ThreeSiteSiFree | AnsatzKind::HybridSiFree | AnsatzKind::SumHybridSiFree => {
            triples_si_free(m) * q3
        }
        AnsatzKind::HybridSelected | AnsatzKind::SumHybridSelected => {
            let n = spec.selected_sites.len() as u64;
            if spec.selected_si_inclusive {
                triples_with_si(n) * q3
            } else {
                triples_si_free(n) * q3
            }
        }
    }
}

/// Frozen parameters of a hybrid (its 2-site block); zero otherwise.
pub fn frozen_param_count(spec: &AnsatzSpec, n_sites: usize, q: u64) -> u64 {
    if spec.kind.is_hybrid() {
        param_count(&AnsatzSpec::new(AnsatzKind::TwoSite), n_sites, q)
    } else {
        0
    }
}

/// One correlator tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlator {
    pub sites: Vec<usize>,
    pub entries: Vec<f64>,
    #[serde(default)]
    pub frozen: bool,
}

impl Correlator {
    fn filled(sites: Vec<usize>, value: f64, frozen: bool) -> Self {
        let len = 1 << sites.len();
        Correlator {
            sites,
            entries: vec![value; len],
            frozen,
        }
    }

    pub fn order(&self) -> usize {
        self.sites.len()
    }

    /// Entry selected by the occupations of `onv` on this tensor's sites.
    #[inline]
    pub fn entry_index(&self, onv: OccupationVector) -> usize {
        self.sites
            .iter()
            .fold(0, |acc, &s| (acc << 1) | onv.is_occupied(s) as usize)
    }

    #[inline]
    pub fn value(&self, onv: OccupationVector) -> f64 {
        self.entries[self.entry_index(onv)]
    }
}

/// The variational parameters: every tensor of one ansatz over `n_sites`
/// spin orbitals, pairs first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorSet {
    n_sites: usize,
    n_pairs: usize,
    tensors: Vec<Correlator>,
}

impl CorrelatorSet {
    /// All entries set to one; hybrids get their pair block frozen.
    pub fn identity(spec: &AnsatzSpec, n_sites: usize) -> Result<Self> {
        Self::from_fn(spec, n_sites, |_, _| 1.0)
    }

    /// Entries from `f(tensor, entry)`.
    pub fn from_fn(spec: &AnsatzSpec, n_sites: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        spec.validate(n_sites)?;
        let (pairs, triples) = spec.tensor_keys(n_sites);
        let freeze_pairs = spec.kind.is_hybrid();
        let n_pairs = pairs.len();
        let mut tensors: Vec<Correlator> = pairs
            .into_iter()
            .map(|s| Correlator::filled(s, 1.0, freeze_pairs))
            .chain(triples.into_iter().map(|s| Correlator::filled(s, 1.0, false)))
            .collect();
        for (t, tensor) in tensors.iter_mut().enumerate() {
            for (e, v) in tensor.entries.iter_mut().enumerate() {
                *v = f(t, e);
            }
        }
        let set = CorrelatorSet {
            n_sites,
            n_pairs,
            tensors,
        };
        set.check_finite()?;
        Ok(set)
    }

    /// Cold start: every entry `1 + U[-noise, noise]`.
    pub fn random<R: Rng + ?Sized>(spec: &AnsatzSpec, n_sites: usize, noise: f64, rng: &mut R) -> Result<Self> {
        Self::from_fn(spec, n_sites, |_, _| 1.0 + rng.random_range(-noise..=noise))
    }

    /// Hybrid start from converged 2-site correlators: the pair block is
    /// copied and frozen; product hybrids get identity triples, sum hybrids
    /// triples drawn from `U[-1e-3, 1e-3]` so the added term starts small.
    pub fn hybrid_from_pairs<R: Rng + ?Sized>(
        spec: &AnsatzSpec,
        two_site: &CorrelatorSet,
        rng: &mut R,
    ) -> Result<Self> {
        if !spec.kind.is_hybrid() {
            return Err(Error::InvalidArgument(format!("{} is not a hybrid ansatz", spec.kind)));
        }
        let mut set = Self::identity(spec, two_site.n_sites)?;
        set.copy_pairs_from(two_site)?;
        if spec.combine_mode() == CombineMode::Sum {
            for tensor in set.tensors[set.n_pairs..].iter_mut() {
                for v in tensor.entries.iter_mut() {
                    *v = rng.random_range(-1e-3..=1e-3);
                }
            }
        }
        Ok(set)
    }

    fn copy_pairs_from(&mut self, two_site: &CorrelatorSet) -> Result<()> {
        if two_site.n_sites != self.n_sites || two_site.n_pairs != self.n_pairs {
            return Err(Error::ContractViolation(format!(
                "frozen block needs {} pair tensors over {} sites, got {} over {}",
                self.n_pairs, self.n_sites, two_site.n_pairs, two_site.n_sites
            )));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&two_site.tensors[..two_site.n_pairs]) {
            if dst.sites != src.sites {
                return Err(Error::ContractViolation(format!(
                    "pair {:?} does not match frozen source {:?}",
                    dst.sites, src.sites
                )));
            }
            dst.entries.clone_from(&src.entries);
        }
        Ok(())
    }

    /// Pure 3-site start reproducing the amplitudes of converged 2-site
    /// correlators. Each pair `p` occurring `m_p` times among the sub-pairs of
    /// the triples contributes `|C^p|^(1/m_p)` to every occurrence, and its
    /// sign once, to the first triple that contains it. For si-free triples
    /// `m_p = M − 2`.
    pub fn warm_start_three_site(spec: &AnsatzSpec, two_site: &CorrelatorSet) -> Result<Self> {
        if spec.kind.pair_rule().is_some() {
            return Err(Error::InvalidArgument(format!(
                "{} is not a pure 3-site ansatz",
                spec.kind
            )));
        }
        let mut set = Self::identity(spec, two_site.n_sites)?;
        let pair_lookup: HashMap<(usize, usize), usize> = two_site.tensors[..two_site.n_pairs]
            .iter()
            .enumerate()
            .map(|(k, t)| ((t.sites[0], t.sites[1]), k))
            .collect();
        let sub_pairs = |s: &[usize]| [(s[0], s[1]), (s[0], s[2]), (s[1], s[2])];
        let mut multiplicity: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &set.tensors {
            for p in sub_pairs(&t.sites) {
                *multiplicity.entry(p).or_insert(0) += 1;
            }
        }
        for (key, &k) in &pair_lookup {
            if !multiplicity.contains_key(key) && two_site.tensors[k].entries.iter().any(|&v| v != 1.0) {
                return Err(Error::ContractViolation(format!(
                    "pair {key:?} appears in no triple of {}; its correlator cannot be carried over",
                    spec.kind
                )));
            }
        }
        let mut sign_assigned: HashMap<(usize, usize), bool> = HashMap::new();
        for tensor in set.tensors.iter_mut() {
            let pairs = sub_pairs(&tensor.sites);
            let mut owns_sign = [false; 3];
            for (slot, p) in pairs.iter().enumerate() {
                if pair_lookup.contains_key(p) && !sign_assigned.contains_key(p) {
                    sign_assigned.insert(*p, true);
                    owns_sign[slot] = true;
                }
            }
            for (e, value) in tensor.entries.iter_mut().enumerate() {
                let occ = [(e >> 2) & 1, (e >> 1) & 1, e & 1];
                let sub_occ = [(occ[0], occ[1]), (occ[0], occ[2]), (occ[1], occ[2])];
                let mut v = 1.0;
                for slot in 0..3 {
                    let Some(&k) = pair_lookup.get(&pairs[slot]) else { continue };
                    let (a, b) = sub_occ[slot];
                    let c = two_site.tensors[k].entries[2 * a + b];
                    let m = multiplicity[&pairs[slot]] as f64;
                    v *= c.abs().powf(1.0 / m);
                    if owns_sign[slot] && c < 0.0 {
                        v = -v;
                    }
                }
                *value = v;
            }
        }
        Ok(set)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    pub fn tensors(&self) -> &[Correlator] {
        &self.tensors
    }

    pub fn tensor(&self, t: usize) -> &Correlator {
        &self.tensors[t]
    }

    /// Index of the tensor over exactly these sites.
    pub fn find(&self, sites: &[usize]) -> Option<usize> {
        self.tensors.iter().position(|t| t.sites == sites)
    }

    pub fn entry(&self, t: usize, e: usize) -> f64 {
        self.tensors[t].entries[e]
    }

    /// Overwrites one entry of an active tensor.
    pub fn set_entry(&mut self, t: usize, e: usize, value: f64) -> Result<()> {
        let tensor = self
            .tensors
            .get_mut(t)
            .ok_or_else(|| Error::IndexOutOfBounds(format!("tensor {t}")))?;
        if tensor.frozen {
            return Err(Error::ContractViolation(format!(
                "tensor {:?} is frozen",
                tensor.sites
            )));
        }
        let slot = tensor
            .entries
            .get_mut(e)
            .ok_or_else(|| Error::IndexOutOfBounds(format!("entry {e} of tensor {t}")))?;
        *slot = value;
        Ok(())
    }

    /// Sets an entry without the frozen check (optimizer internals).
    pub(crate) fn set_entry_unchecked(&mut self, t: usize, e: usize, value: f64) {
        self.tensors[t].entries[e] = value;
    }

    /// `(tensor, entry)` for every active parameter, in storage order.
    pub fn active_entries(&self) -> Vec<(usize, usize)> {
        self.tensors
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.frozen)
            .flat_map(|(k, t)| (0..t.entries.len()).map(move |e| (k, e)))
            .collect()
    }

    pub fn n_active_params(&self) -> usize {
        self.tensors.iter().filter(|t| !t.frozen).map(|t| t.entries.len()).sum()
    }

    pub fn n_frozen_params(&self) -> usize {
        self.tensors.iter().filter(|t| t.frozen).map(|t| t.entries.len()).sum()
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(|t| t.entries.len()).sum()
    }

    fn check_finite(&self) -> Result<()> {
        for t in &self.tensors {
            if t.entries.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "tensor {:?} has a non-finite entry",
                    t.sites
                )));
            }
        }
        Ok(())
    }

    /// Verifies that the key set and frozen mask match `spec`.
    pub fn check_spec(&self, spec: &AnsatzSpec) -> Result<()> {
        spec.validate(self.n_sites)?;
        let (pairs, triples) = spec.tensor_keys(self.n_sites);
        if pairs.len() != self.n_pairs || pairs.len() + triples.len() != self.tensors.len() {
            return Err(Error::ContractViolation(format!(
                "parameter set has {} pair / {} triple tensors, {} over {} sites needs {} / {}",
                self.n_pairs,
                self.tensors.len() - self.n_pairs,
                spec.kind,
                self.n_sites,
                pairs.len(),
                triples.len()
            )));
        }
        for (t, key) in self.tensors.iter().zip(pairs.iter().chain(&triples)) {
            if &t.sites != key {
                return Err(Error::ContractViolation(format!(
                    "tensor {:?} where {:?} was expected",
                    t.sites, key
                )));
            }
            if t.entries.len() != 1 << key.len() {
                return Err(Error::ContractViolation(format!(
                    "tensor {:?} has {} entries",
                    t.sites,
                    t.entries.len()
                )));
            }
            let should_freeze = spec.kind.is_hybrid() && key.len() == 2;
            if t.frozen != should_freeze {
                return Err(Error::ContractViolation(format!(
                    "tensor {:?} frozen = {}, {} expects {}",
                    t.sites, t.frozen, spec.kind, should_freeze
                )));
            }
        }
        self.check_finite()
    }

    fn block_products(&self, onv: OccupationVector) -> (f64, f64) {
        let pair = self.tensors[..self.n_pairs].iter().fold(1.0, |acc, t| acc * t.value(onv));
        let triple = self.tensors[self.n_pairs..].iter().fold(1.0, |acc, t| acc * t.value(onv));
        (pair, triple)
    }
}

/// Combines block products into an amplitude.
#[inline]
pub(crate) fn combine(mode: CombineMode, pair: f64, triple: f64) -> f64 {
    match mode {
        CombineMode::Product => pair * triple,
        CombineMode::Sum => pair + triple,
    }
}

/// The amplitude `C_n` of one determinant.
pub fn amplitude(params: &CorrelatorSet, spec: &AnsatzSpec, onv: OccupationVector) -> f64 {
    let (pair, triple) = params.block_products(onv);
    combine(spec.combine_mode(), pair, triple)
}

/// `∂C_n / ∂C^[t]_e`, the product of all other factors of the term holding
/// tensor `t` (recomputed, never obtained by division).
pub fn amplitude_partial_derivative(
    params: &CorrelatorSet,
    spec: &AnsatzSpec,
    onv: OccupationVector,
    tensor: usize,
    entry: usize,
) -> Result<f64> {
    let t = params
        .tensors
        .get(tensor)
        .ok_or_else(|| Error::IndexOutOfBounds(format!("tensor {tensor}")))?;
    if entry >= t.entries.len() {
        return Err(Error::IndexOutOfBounds(format!("entry {entry} of tensor {tensor}")));
    }
    if t.frozen {
        return Err(Error::ContractViolation(format!(
            "tensor {:?} is frozen and has no derivative",
            t.sites
        )));
    }
    if t.entry_index(onv) != entry {
        return Ok(0.0);
    }
    let in_pair_block = tensor < params.n_pairs;
    let block = if in_pair_block {
        0..params.n_pairs
    } else {
        params.n_pairs..params.tensors.len()
    };
    let cofactor = block
        .filter(|&k| k != tensor)
        .fold(1.0, |acc, k| acc * params.tensors[k].value(onv));
    Ok(match spec.combine_mode() {
        CombineMode::Sum => cofactor,
        CombineMode::Product => {
            let (pair, triple) = params.block_products(onv);
            cofactor * if in_pair_block { triple } else { pair }
        }
    })
}

/// CSF weights `S_p = Σ_n K_pn C_n`.
pub fn csf_weights(params: &CorrelatorSet, spec: &AnsatzSpec, basis: &CsfBasis) -> Result<Vec<f64>> {
    if params.n_sites != basis.space().n_sites() {
        return Err(Error::DimensionMismatch {
            expected: basis.space().n_sites(),
            found: params.n_sites,
        });
    }
    let amps: Vec<f64> = basis.space().onvs().iter().map(|&o| amplitude(params, spec, o)).collect();
    Ok(basis.project(&amps))
}

/// `Σ_pq S_p S_q Σ_n K_pn K_qn`, evaluated as `Σ_n (Σ_p K_pn S_p)²` so no
/// orthonormality of `K` is assumed.
pub fn cgtns_norm(weights: &[f64], basis: &CsfBasis) -> Result<f64> {
    if weights.len() != basis.n_csfs() {
        return Err(Error::DimensionMismatch {
            expected: basis.n_csfs(),
            found: weights.len(),
        });
    }
    Ok(basis.expand(weights).iter().map(|c| c * c).sum())
}

/// Both spin orbitals of every spatial orbital whose natural occupation
/// lies in `[lo, hi]` (inclusive), ascending.
pub fn select_sites(nat_occ: &[f64], lo: f64, hi: f64) -> Result<Vec<usize>> {
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::InvalidArgument(format!("empty occupation window [{lo}, {hi}]")));
    }
    if let Some(bad) = nat_occ.iter().find(|&&n| !(0.0..=2.0).contains(&n)) {
        return Err(Error::InvalidArgument(format!("occupation {bad} outside [0, 2]")));
    }
    let sites: Vec<usize> = nat_occ
        .iter()
        .enumerate()
        .filter(|(_, &n)| n >= lo && n <= hi)
        .flat_map(|(p, _)| [2 * p, 2 * p + 1])
        .collect();
    if sites.is_empty() {
        warn!("no orbital occupation falls inside [{lo}, {hi}]; selection is empty");
    }
    Ok(sites)
}

/// Per-determinant entry indices of every tensor, precomputed for one
/// (ansatz structure, determinant space) pair.
#[derive(Clone, Debug)]
pub struct AmplitudeLayout {
    n_dets: usize,
    n_tensors: usize,
    n_pairs: usize,
    mode: CombineMode,
    index: Vec<u8>,
    member_offsets: Vec<Vec<usize>>,
    members: Vec<Vec<usize>>,
}

impl AmplitudeLayout {
    pub fn new(params: &CorrelatorSet, spec: &AnsatzSpec, space: &FockSubspace) -> Result<Self> {
        params.check_spec(spec)?;
        if params.n_sites != space.n_sites() {
            return Err(Error::DimensionMismatch {
                expected: space.n_sites(),
                found: params.n_sites,
            });
        }
        let n_dets = space.dim();
        let n_tensors = params.tensors.len();
        let mut index = Vec::with_capacity(n_dets * n_tensors);
        for &onv in space.onvs() {
            index.extend(params.tensors.iter().map(|t| t.entry_index(onv) as u8));
        }
        let mut member_offsets = Vec::with_capacity(n_tensors);
        let mut members = Vec::with_capacity(n_tensors);
        for (t, tensor) in params.tensors.iter().enumerate() {
            let n_entries = tensor.entries.len();
            let mut buckets = vec![Vec::new(); n_entries];
            for n in 0..n_dets {
                buckets[index[n * n_tensors + t] as usize].push(n);
            }
            let mut offsets = Vec::with_capacity(n_entries + 1);
            offsets.push(0);
            let mut flat = Vec::with_capacity(n_dets);
            for b in buckets {
                flat.extend(b);
                offsets.push(flat.len());
            }
            member_offsets.push(offsets);
            members.push(flat);
        }
        Ok(AmplitudeLayout {
            n_dets,
            n_tensors,
            n_pairs: params.n_pairs,
            mode: spec.combine_mode(),
            index,
            member_offsets,
            members,
        })
    }

    pub fn n_dets(&self) -> usize {
        self.n_dets
    }

    pub fn mode(&self) -> CombineMode {
        self.mode
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    #[inline]
    pub fn entry_index(&self, det: usize, tensor: usize) -> usize {
        self.index[det * self.n_tensors + tensor] as usize
    }

    /// Determinants whose occupations select entry `e` of tensor `t`.
    pub fn members(&self, t: usize, e: usize) -> &[usize] {
        let offsets = &self.member_offsets[t];
        &self.members[t][offsets[e]..offsets[e + 1]]
    }

    pub fn pair_block(&self, params: &CorrelatorSet, det: usize) -> f64 {
        let row = &self.index[det * self.n_tensors..(det + 1) * self.n_tensors];
        params.tensors[..self.n_pairs]
            .iter()
            .zip(row)
            .fold(1.0, |acc, (t, &i)| acc * t.entries[i as usize])
    }

    pub fn triple_block(&self, params: &CorrelatorSet, det: usize) -> f64 {
        let row = &self.index[det * self.n_tensors + self.n_pairs..(det + 1) * self.n_tensors];
        params.tensors[self.n_pairs..]
            .iter()
            .zip(row)
            .fold(1.0, |acc, (t, &i)| acc * t.entries[i as usize])
    }

    /// Product of the other factors in the block holding tensor `t`.
    pub fn block_cofactor(&self, params: &CorrelatorSet, det: usize, t: usize) -> f64 {
        let block = if t < self.n_pairs { 0..self.n_pairs } else { self.n_pairs..self.n_tensors };
        block
            .filter(|&k| k != t)
            .fold(1.0, |acc, k| acc * params.tensors[k].entries[self.entry_index(det, k)])
    }

    pub fn amplitude(&self, params: &CorrelatorSet, det: usize) -> f64 {
        combine(self.mode, self.pair_block(params, det), self.triple_block(params, det))
    }

    pub fn amplitudes(&self, params: &CorrelatorSet) -> Vec<f64> {
        (0..self.n_dets).map(|n| self.amplitude(params, n)).collect()
    }

    /// Accumulates `Σ_n weight_n ∂C_n/∂C^[t]_e` for every active tensor into
    /// `grad[t][e]`, using prefix/suffix products within each block.
    pub fn contract_derivatives(&self, params: &CorrelatorSet, weights: &[f64]) -> Vec<Vec<f64>> {
        let mut grad: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.entries.len()]).collect();
        let blocks = [0..self.n_pairs, self.n_pairs..self.n_tensors];
        let mut factors = vec![0.0; self.n_tensors];
        let mut prefix = [vec![0.0; self.n_pairs + 1], vec![0.0; self.n_tensors - self.n_pairs + 1]];
        let mut suffix = prefix.clone();
        for n in 0..self.n_dets {
            let w = weights[n];
            if w == 0.0 {
                continue;
            }
            for (t, f) in factors.iter_mut().enumerate() {
                *f = params.tensors[t].entries[self.entry_index(n, t)];
            }
            for (b, block) in blocks.iter().enumerate() {
                let f = &factors[block.clone()];
                let (pre, suf) = (&mut prefix[b], &mut suffix[b]);
                pre[0] = 1.0;
                for k in 0..f.len() {
                    pre[k + 1] = pre[k] * f[k];
                }
                suf[f.len()] = 1.0;
                for k in (0..f.len()).rev() {
                    suf[k] = suf[k + 1] * f[k];
                }
            }
            let totals = [prefix[0][self.n_pairs], prefix[1][self.n_tensors - self.n_pairs]];
            for (b, block) in blocks.iter().enumerate() {
                let other = match self.mode {
                    CombineMode::Product => totals[1 - b],
                    CombineMode::Sum => 1.0,
                };
                for t in block.clone() {
                    if params.tensors[t].frozen {
                        continue;
                    }
                    let k = t - block.start;
                    let cof = prefix[b][k] * suffix[b][k + 1] * other;
                    grad[t][self.entry_index(n, t)] += w * cof;
                }
            }
        }
        grad
    }
}

/// Versioned checkpoint document for one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorDocument {
    pub format: String,
    pub version: u32,
    pub spec: AnsatzSpec,
    pub params: CorrelatorSet,
}

pub const CORRELATOR_FORMAT: &str = "cgtns-correlators";
pub const CORRELATOR_VERSION: u32 = 1;

impl CorrelatorDocument {
    pub fn new(spec: AnsatzSpec, params: CorrelatorSet) -> Self {
        CorrelatorDocument {
            format: CORRELATOR_FORMAT.into(),
            version: CORRELATOR_VERSION,
            spec,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CorrelatorDocument =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if doc.format != CORRELATOR_FORMAT || doc.version != CORRELATOR_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported document {} v{}",
                doc.format, doc.version
            )));
        }
        doc.params.check_spec(&doc.spec)?;
        Ok(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
