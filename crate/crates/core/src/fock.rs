//! Determinant spaces and spin-adapted configuration state functions.
//!
//! Spin orbitals are interleaved: spin orbital `2p` is the α partner and
//! `2p + 1` the β partner of spatial orbital `p` (all indices zero-based).
//! An [`OccupationVector`] stores spin orbital `i` in bit `i`, and the
//! determinant it represents is the ascending creation string
//! `a†_{i1} a†_{i2} … |0⟩` with `i1 < i2 < …`. Consequently a creation
//! operator acting on orbital `i` picks up the sign
//! `(-1)^(number of occupied orbitals with index < i)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Width of the bitstring backing an [`OccupationVector`].
pub const MAX_SPIN_ORBITALS: usize = 64;

const ALPHA_MASK: u64 = 0x5555_5555_5555_5555;
const BETA_MASK: u64 = 0xAAAA_AAAA_AAAA_AAAA;

/// One Slater determinant as a bitstring over at most 64 spin orbitals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OccupationVector(u64);

impl OccupationVector {
    pub const fn from_bits(bits: u64) -> Self {
        OccupationVector(bits)
    }

    /// Builds an ONV from occupied spin-orbital indices.
    pub fn from_occupied(indices: &[usize]) -> Result<Self> {
        let mut bits = 0u64;
        for &i in indices {
            if i >= MAX_SPIN_ORBITALS {
                return Err(Error::Capacity(format!(
                    "spin orbital {i} does not fit in a {MAX_SPIN_ORBITALS}-bit occupation vector"
                )));
            }
            bits |= 1 << i;
        }
        Ok(OccupationVector(bits))
    }

    /// Parses the `n_1 n_2 … n_M` notation, e.g. `"1001"`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.len() > MAX_SPIN_ORBITALS {
            return Err(Error::Capacity(format!(
                "{} spin orbitals exceed the {MAX_SPIN_ORBITALS}-bit width",
                text.len()
            )));
        }
        let mut bits = 0u64;
        for (i, c) in text.chars().enumerate() {
            match c {
                '0' => {}
                '1' => bits |= 1 << i,
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "occupation string {text:?} contains {c:?}"
                    )))
                }
            }
        }
        Ok(OccupationVector(bits))
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    pub const fn is_occupied(self, i: usize) -> bool {
        (self.0 >> i) & 1 == 1
    }

    pub const fn n_electrons(self) -> u32 {
        self.0.count_ones()
    }

    pub const fn n_alpha(self) -> u32 {
        (self.0 & ALPHA_MASK).count_ones()
    }

    pub const fn n_beta(self) -> u32 {
        (self.0 & BETA_MASK).count_ones()
    }

    /// Twice the spin projection, `N_α − N_β`.
    pub const fn two_ms(self) -> i32 {
        self.n_alpha() as i32 - self.n_beta() as i32
    }

    pub fn occupied(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(i)
            }
        })
    }

    /// Spatial orbitals holding an α (resp. β) electron, as a compressed mask.
    pub fn alpha_string(self) -> u64 {
        compress_even(self.0)
    }

    pub fn beta_string(self) -> u64 {
        compress_even(self.0 >> 1)
    }

    pub fn from_strings(alpha: u64, beta: u64) -> Self {
        OccupationVector(spread_even(alpha) | (spread_even(beta) << 1))
    }

    /// Renders the first `m` sites as `n_1 n_2 … n_m`.
    pub fn to_string_width(self, m: usize) -> String {
        (0..m).map(|i| if self.is_occupied(i) { '1' } else { '0' }).collect()
    }

    /// Fermionic sign `(-1)^(occupied orbitals below i)`.
    pub const fn sign_below(self, i: usize) -> f64 {
        if (self.0 & ((1u64 << i) - 1)).count_ones().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    /// Applies `a_i`; `None` when orbital `i` is empty.
    pub fn annihilate(self, i: usize) -> Option<(Self, f64)> {
        if !self.is_occupied(i) {
            return None;
        }
        Some((OccupationVector(self.0 & !(1 << i)), self.sign_below(i)))
    }

    /// Applies `a†_i`; `None` when orbital `i` is already occupied.
    pub fn create(self, i: usize) -> Option<(Self, f64)> {
        if self.is_occupied(i) {
            return None;
        }
        Some((OccupationVector(self.0 | (1 << i)), self.sign_below(i)))
    }
}

impl fmt::Display for OccupationVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#b}", self.0)
    }
}

fn compress_even(bits: u64) -> u64 {
    let mut out = 0u64;
    for p in 0..32 {
        out |= ((bits >> (2 * p)) & 1) << p;
    }
    out
}

fn spread_even(bits: u64) -> u64 {
    let mut out = 0u64;
    for p in 0..32 {
        out |= ((bits >> p) & 1) << (2 * p);
    }
    out
}

/// Abelian point-group filter: per-spatial-orbital irreps (XOR-combinable
/// labels `0..8`) and the target irrep of the many-electron state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrrepFilter {
    pub orbital_irreps: Vec<u8>,
    pub target: u8,
}

impl IrrepFilter {
    pub fn irrep_of(&self, onv: OccupationVector) -> u8 {
        onv.occupied().fold(0u8, |acc, i| acc ^ self.orbital_irreps[i / 2])
    }
}

/// The determinants with fixed electron count and spin projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FockSubspace {
    n_sites: usize,
    n_electrons: usize,
    two_ms: i32,
    irreps: Option<IrrepFilter>,
    onvs: Vec<OccupationVector>,
}

impl FockSubspace {
    /// Number of spin orbitals `M`.
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_electrons(&self) -> usize {
        self.n_electrons
    }

    pub fn two_ms(&self) -> i32 {
        self.two_ms
    }

    pub fn irrep_filter(&self) -> Option<&IrrepFilter> {
        self.irreps.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.onvs.len()
    }

    pub fn onvs(&self) -> &[OccupationVector] {
        &self.onvs
    }

    pub fn onv(&self, index: usize) -> OccupationVector {
        self.onvs[index]
    }

    /// Position of `onv` in the canonical ordering.
    pub fn index_of(&self, onv: OccupationVector) -> Option<usize> {
        self.onvs.binary_search(&onv).ok()
    }
}

/// Enumerates every determinant of `n_electrons` electrons in `n_sites`
/// interleaved spin orbitals with spin projection `two_ms / 2`, sorted by
/// ascending bitstring value.
pub fn enumerate_onvs(
    n_sites: usize,
    n_electrons: usize,
    two_ms: i32,
    irreps: Option<IrrepFilter>,
) -> Result<FockSubspace> {
    if n_sites > MAX_SPIN_ORBITALS {
        return Err(Error::Capacity(format!(
            "{n_sites} spin orbitals exceed the {MAX_SPIN_ORBITALS}-bit occupation vector"
        )));
    }
    if n_electrons > n_sites {
        return Err(Error::EmptySpace(format!(
            "{n_electrons} electrons do not fit in {n_sites} spin orbitals"
        )));
    }
    if two_ms.unsigned_abs() as usize > n_electrons {
        return Err(Error::EmptySpace(format!(
            "|Ms| = {}/2 exceeds N/2 for N = {n_electrons}",
            two_ms.abs()
        )));
    }
    if (n_electrons as i32 - two_ms).rem_euclid(2) != 0 {
        return Err(Error::EmptySpace(format!(
            "N = {n_electrons} and 2Ms = {two_ms} have different parity"
        )));
    }
    let n_alpha = (n_electrons as i32 + two_ms) as usize / 2;
    let n_beta = n_electrons - n_alpha;
    let alpha_sites = n_sites.div_ceil(2);
    let beta_sites = n_sites / 2;
    if n_alpha > alpha_sites || n_beta > beta_sites {
        return Err(Error::EmptySpace(format!(
            "{n_alpha} α / {n_beta} β electrons need more than {alpha_sites} α / {beta_sites} β spin orbitals"
        )));
    }
    if let Some(filter) = &irreps {
        if filter.orbital_irreps.len() < alpha_sites {
            return Err(Error::InvalidArgument(format!(
                "irrep filter lists {} orbitals, space has {alpha_sites}",
                filter.orbital_irreps.len()
            )));
        }
    }

    let alpha_strings = combinations(alpha_sites, n_alpha);
    let beta_strings = combinations(beta_sites, n_beta);
    let mut onvs = Vec::with_capacity(alpha_strings.len() * beta_strings.len());
    for &a in &alpha_strings {
        for &b in &beta_strings {
            let onv = OccupationVector::from_strings(a, b);
            if irreps.as_ref().is_none_or(|f| f.irrep_of(onv) == f.target) {
                onvs.push(onv);
            }
        }
    }
    if onvs.is_empty() {
        return Err(Error::EmptySpace(
            "no determinant carries the requested irreducible representation".into(),
        ));
    }
    onvs.sort_unstable();
    Ok(FockSubspace {
        n_sites,
        n_electrons,
        two_ms,
        irreps,
        onvs,
    })
}

/// All `k`-subsets of `n` positions as bitmasks (Gosper's hack).
fn combinations(n: usize, k: usize) -> Vec<u64> {
    if k == 0 {
        return vec![0];
    }
    let mut out = Vec::new();
    let limit = 1u128 << n;
    let mut x: u64 = (1u64 << k) - 1;
    while (x as u128) < limit {
        out.push(x);
        let c = x & x.wrapping_neg();
        let r = x + c;
        if r == 0 {
            break;
        }
        x = (((r ^ x) >> 2) / c) | r;
    }
    out
}

/// Asymptotic determinant count `(2 / (π M_orb)) 4^M_orb` for a CAS with
/// as many electrons as spatial orbitals and `Ms = 0`.
pub fn count_onvs_asymptotic(n_orbitals: usize) -> f64 {
    2.0 / (std::f64::consts::PI * n_orbitals as f64) * 4f64.powi(n_orbitals as i32)
}

/// Spin-adapted basis: each row `p` holds the Clebsch–Gordan coefficients
/// `K_pn` expanding CSF `p` in the determinants of the underlying space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CsfBasis {
    two_s: u32,
    space: FockSubspace,
    rows: Vec<Vec<(usize, f64)>>,
}

impl CsfBasis {
    /// Assembles a basis from explicit rows. Column indices refer into
    /// `space`; no orthonormality is assumed.
    pub fn from_rows(space: FockSubspace, two_s: u32, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for row in &rows {
            for &(n, _) in row {
                if n >= space.dim() {
                    return Err(Error::IndexOutOfBounds(format!(
                        "CSF coefficient column {n} outside a {}-determinant space",
                        space.dim()
                    )));
                }
            }
        }
        Ok(CsfBasis { two_s, space, rows })
    }

    pub fn two_s(&self) -> u32 {
        self.two_s
    }

    pub fn space(&self) -> &FockSubspace {
        &self.space
    }

    pub fn n_csfs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_determinants(&self) -> usize {
        self.space.dim()
    }

    /// Sparse row `p` as `(determinant index, K_pn)` pairs.
    pub fn row(&self, p: usize) -> &[(usize, f64)] {
        &self.rows[p]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// `Σ_n K_pn K_qn`.
    pub fn overlap(&self, p: usize, q: usize) -> f64 {
        let (a, b) = (&self.rows[p], &self.rows[q]);
        let (mut i, mut j, mut sum) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    sum += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        sum
    }

    /// `S = K c`: CSF weights from determinant coefficients.
    pub fn project(&self, coeffs: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(n, k)| k * coeffs[n]).sum())
            .collect()
    }

    /// `c = Kᵀ S`: determinant expansion of a CSF-weighted state.
    pub fn expand(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.space.dim()];
        for (row, &s) in self.rows.iter().zip(weights) {
            if s == 0.0 {
                continue;
            }
            for &(n, k) in row {
                out[n] += k * s;
            }
        }
        out
    }

    /// Dense `K` (CSFs × determinants).
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut k = nalgebra::DMatrix::zeros(self.n_csfs(), self.space.dim());
        for (p, row) in self.rows.iter().enumerate() {
            for &(n, v) in row {
                k[(p, n)] = v;
            }
        }
        k
    }
}

/// Builds the genealogical (branching-diagram) CSF basis of total spin
/// `two_s / 2` spanning `space`.
///
/// Determinants are grouped by spatial configuration. Doubly occupied and
/// empty orbitals are spectators; the singly occupied orbitals are coupled
/// one at a time in ascending orbital order, and every admissible coupling
/// path ending at `S` yields one CSF. The coefficient of a determinant is
/// the product of the one-electron Clebsch–Gordan factors along the path.
pub fn build_csf_basis(space: &FockSubspace, two_s: u32) -> Result<CsfBasis> {
    let two_ms = space.two_ms();
    if (two_s as i32) < two_ms.abs() {
        return Err(Error::EmptyBasis(format!(
            "S = {}/2 is smaller than |Ms| = {}/2",
            two_s,
            two_ms.abs()
        )));
    }
    if !(two_s as usize + space.n_electrons()).is_multiple_of(2) {
        return Err(Error::EmptyBasis(format!(
            "S = {two_s}/2 is incompatible with {} electrons",
            space.n_electrons()
        )));
    }

    let mut configurations: BTreeMap<(u64, u64), ()> = BTreeMap::new();
    for onv in space.onvs() {
        let (a, b) = (onv.alpha_string(), onv.beta_string());
        configurations.insert((a & b, a ^ b), ());
    }

    let mut rows = Vec::new();
    for &(doubly, singly) in configurations.keys() {
        let open: Vec<usize> = (0..32).filter(|p| (singly >> p) & 1 == 1).collect();
        if open.len() < two_s as usize || !(open.len() - two_s as usize).is_multiple_of(2) {
            continue;
        }
        for path in coupling_paths(open.len(), two_s) {
            let mut row = Vec::new();
            let mut spins = Vec::with_capacity(open.len());
            collect_determinants(&path, two_ms, &mut spins, 0, 0, 1.0, &mut |spins, coeff| {
                let mut alpha = doubly;
                let mut beta = doubly;
                for (&p, &up) in open.iter().zip(spins) {
                    if up {
                        alpha |= 1 << p;
                    } else {
                        beta |= 1 << p;
                    }
                }
                row.push((OccupationVector::from_strings(alpha, beta), coeff));
            });
            let mut indexed = Vec::with_capacity(row.len());
            for (onv, coeff) in row {
                let n = space.index_of(onv).ok_or_else(|| {
                    Error::ContractViolation(format!(
                        "CSF determinant {} is missing from the space",
                        onv.to_string_width(space.n_sites())
                    ))
                })?;
                indexed.push((n, coeff));
            }
            if indexed.is_empty() {
                continue;
            }
            indexed.sort_unstable_by_key(|&(n, _)| n);
            rows.push(indexed);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyBasis(format!(
            "no spin coupling reaches S = {two_s}/2 in this space"
        )));
    }
    Ok(CsfBasis {
        two_s,
        space: space.clone(),
        rows,
    })
}

/// All branching-diagram paths of `n_open` couplings from spin 0 to
/// `two_s / 2`, stored as the running `2S` after each electron.
fn coupling_paths(n_open: usize, two_s: u32) -> Vec<Vec<u32>> {
    fn walk(n_left: usize, current: u32, target: u32, path: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if n_left == 0 {
            if current == target {
                out.push(path.clone());
            }
            return;
        }
        // unreachable targets prune the tree
        if (current as i64 - target as i64).unsigned_abs() as usize > n_left {
            return;
        }
        for next in [current + 1, current.wrapping_sub(1)] {
            if next > current + 1 {
                continue;
            }
            path.push(next);
            walk(n_left - 1, next, target, path, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    walk(n_open, 0, two_s, &mut Vec::with_capacity(n_open), &mut out);
    out
}

fn collect_determinants(
    path: &[u32],
    target_two_ms: i32,
    spins: &mut Vec<bool>,
    depth: usize,
    two_m: i32,
    coeff: f64,
    emit: &mut dyn FnMut(&[bool], f64),
) {
    if depth == path.len() {
        if two_m == target_two_ms {
            emit(spins, coeff);
        }
        return;
    }
    let prev_two_s = if depth == 0 { 0 } else { path[depth - 1] };
    let two_s = path[depth];
    let remaining = (path.len() - depth - 1) as i32;
    for up in [true, false] {
        let next_two_m = two_m + if up { 1 } else { -1 };
        if next_two_m.unsigned_abs() > two_s {
            continue;
        }
        if (target_two_ms - next_two_m).abs() > remaining {
            continue;
        }
        let factor = clebsch_gordan(prev_two_s, two_s, next_two_m, up);
        if factor == 0.0 {
            continue;
        }
        spins.push(up);
        collect_determinants(path, target_two_ms, spins, depth + 1, next_two_m, coeff * factor, emit);
        spins.pop();
    }
}

/// `⟨S' M−m; ½ m | S M⟩` in doubled quantum numbers.
fn clebsch_gordan(prev_two_s: u32, two_s: u32, two_m: i32, up: bool) -> f64 {
    let s = two_s as f64;
    let m = two_m as f64;
    if two_s > prev_two_s {
        if up {
            ((s + m) / (2.0 * s)).sqrt()
        } else {
            ((s - m) / (2.0 * s)).sqrt()
        }
    } else if up {
        -((s - m + 2.0) / (2.0 * s + 4.0)).sqrt()
    } else {
        ((s + m + 2.0) / (2.0 * s + 4.0)).sqrt()
    }
}

/// Applies `S² = S₋S₊ + S_z(S_z + 1)` to a determinant-basis vector.
pub fn s2_apply(space: &FockSubspace, coeffs: &[f64]) -> Result<Vec<f64>> {
    if coeffs.len() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            found: coeffs.len(),
        });
    }
    let sz = space.two_ms() as f64 / 2.0;
    let n_orb = space.n_sites().div_ceil(2);
    let mut out: Vec<f64> = coeffs.iter().map(|c| c * sz * (sz + 1.0)).collect();
    for (n, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let raised = apply_spin_shift(space.onv(n), c, n_orb, space.n_sites(), true);
        let mut lowered: HashMap<OccupationVector, f64> = HashMap::new();
        for (onv, amp) in raised {
            for (target, v) in apply_spin_shift(onv, amp, n_orb, space.n_sites(), false) {
                *lowered.entry(target).or_insert(0.0) += v;
            }
        }
        for (target, v) in lowered {
            let idx = space.index_of(target).ok_or_else(|| {
                Error::ContractViolation("S² maps outside the determinant space".into())
            })?;
            out[idx] += v;
        }
    }
    Ok(out)
}

/// `S₊ = Σ_p a†_{pα} a_{pβ}` (or `S₋` when `raise` is false) on one determinant.
fn apply_spin_shift(
    onv: OccupationVector,
    amp: f64,
    n_orb: usize,
    n_sites: usize,
    raise: bool,
) -> Vec<(OccupationVector, f64)> {
    let mut out = Vec::new();
    for p in 0..n_orb {
        let (from, to) = if raise { (2 * p + 1, 2 * p) } else { (2 * p, 2 * p + 1) };
        if from >= n_sites || to >= n_sites {
            continue;
        }
        if let Some((mid, s1)) = onv.annihilate(from) {
            if let Some((res, s2)) = mid.create(to) {
                out.push((res, amp * s1 * s2));
            }
        }
    }
    out
}
