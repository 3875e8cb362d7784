//! Molecular-orbital integrals, Slater–Condon matrix elements and the exact
//! CAS-CI oracle.

use std::collections::HashSet;
use std::path::Path;

use log::{debug, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fock::{CsfBasis, FockSubspace, OccupationVector};
use crate::linalg;
use crate::{Error, Result};

/// Default upper bound on the dimension handed to the dense eigensolver.
pub const DEFAULT_DENSE_LIMIT: usize = 20_000;

fn pair_index(i: usize, j: usize) -> usize {
    let (a, b) = if i >= j { (i, j) } else { (j, i) };
    a * (a + 1) / 2 + b
}

/// One- and two-electron integrals over spatial orbitals (Hartree),
/// chemists' notation `(pq|rs)`, zero-based orbital indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralSet {
    n_orbitals: usize,
    one_body: Vec<f64>,
    two_body: Vec<f64>,
    core_energy: f64,
    orb_irreps: Option<Vec<u8>>,
    nat_occ: Option<Vec<f64>>,
    n_electrons: Option<usize>,
    two_ms: Option<i32>,
}

impl IntegralSet {
    /// All-zero integrals over `n_orbitals` spatial orbitals.
    pub fn zeros(n_orbitals: usize) -> Self {
        let npair = n_orbitals * (n_orbitals + 1) / 2;
        IntegralSet {
            n_orbitals,
            one_body: vec![0.0; n_orbitals * n_orbitals],
            two_body: vec![0.0; npair * (npair + 1) / 2],
            core_energy: 0.0,
            orb_irreps: None,
            nat_occ: None,
            n_electrons: None,
            two_ms: None,
        }
    }

    pub fn n_orbitals(&self) -> usize {
        self.n_orbitals
    }

    pub fn n_spin_orbitals(&self) -> usize {
        2 * self.n_orbitals
    }

    pub fn core_energy(&self) -> f64 {
        self.core_energy
    }

    pub fn set_core_energy(&mut self, value: f64) {
        self.core_energy = value;
    }

    pub fn h(&self, p: usize, q: usize) -> f64 {
        self.one_body[p * self.n_orbitals + q]
    }

    pub fn set_h(&mut self, p: usize, q: usize, value: f64) {
        self.one_body[p * self.n_orbitals + q] = value;
        self.one_body[q * self.n_orbitals + p] = value;
    }

    /// `(pq|rs)`.
    pub fn g(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        self.two_body[pair_index(pair_index(p, q), pair_index(r, s))]
    }

    /// Sets `(pq|rs)` and its seven permutational partners.
    pub fn set_g(&mut self, p: usize, q: usize, r: usize, s: usize, value: f64) {
        self.two_body[pair_index(pair_index(p, q), pair_index(r, s))] = value;
    }

    /// Per-orbital irrep labels (zero-based, XOR-combinable).
    pub fn orbital_irreps(&self) -> Option<&[u8]> {
        self.orb_irreps.as_deref()
    }

    pub fn set_orbital_irreps(&mut self, irreps: Option<Vec<u8>>) {
        self.orb_irreps = irreps;
    }

    /// Natural-orbital occupation numbers, one per spatial orbital.
    pub fn natural_occupations(&self) -> Option<&[f64]> {
        self.nat_occ.as_deref()
    }

    pub fn set_natural_occupations(&mut self, occ: Option<Vec<f64>>) {
        self.nat_occ = occ;
    }

    /// Electron count declared in the file header, if any.
    pub fn header_electrons(&self) -> Option<usize> {
        self.n_electrons
    }

    /// `2·Ms` declared in the file header, if any.
    pub fn header_two_ms(&self) -> Option<i32> {
        self.two_ms
    }

    /// Largest `|h_pq − h_qp|`; zero by construction of the storage.
    pub fn one_body_asymmetry(&self) -> f64 {
        let n = self.n_orbitals;
        (0..n)
            .flat_map(|p| (0..n).map(move |q| (p, q)))
            .map(|(p, q)| (self.h(p, q) - self.h(q, p)).abs())
            .fold(0.0, f64::max)
    }
}

/// Reads an FCIDUMP file.
pub fn parse_fcidump(path: impl AsRef<Path>) -> Result<IntegralSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fcidump_str(&text)
}

fn parse_real(token: &str, line: usize) -> Result<f64> {
    token
        .replace(['D', 'd'], "e")
        .parse::<f64>()
        .map_err(|_| Error::Parse {
            line,
            message: format!("expected a number, found {token:?}"),
        })
}

fn parse_index(token: &str, line: usize) -> Result<usize> {
    token.parse::<usize>().map_err(|_| Error::Parse {
        line,
        message: format!("expected a non-negative orbital index, found {token:?}"),
    })
}

/// Parses FCIDUMP text: a `&FCI … &END` namelist header (`NORB`, `NELEC`,
/// `MS2`, `ORBSYM`, optional `NATOCC`), then lines `value i j k l` with
/// one-based indices. All-zero indices give the core energy, `k = l = 0` a
/// one-electron integral, anything else `(ij|kl)`. Lines `value i 0 0 0`
/// (orbital energies) are skipped.
pub fn parse_fcidump_str(text: &str) -> Result<IntegralSet> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .position(|l| l.trim_start().to_ascii_uppercase().starts_with("&FCI"))
        .ok_or(Error::Parse {
            line: 1,
            message: "missing &FCI header".into(),
        })?;
    let mut header = String::new();
    let mut end = None;
    for (i, raw) in lines.iter().enumerate().skip(start) {
        let upper = raw.to_ascii_uppercase();
        let mut chunk = upper.as_str();
        if i == start {
            chunk = chunk.trim_start().trim_start_matches("&FCI");
        }
        if let Some(pos) = chunk.find("&END") {
            header.push_str(&chunk[..pos]);
            end = Some(i);
            break;
        }
        if let Some(body) = chunk.trim_end().strip_suffix('/') {
            header.push_str(body);
            end = Some(i);
            break;
        }
        header.push_str(chunk);
        header.push(' ');
    }
    let end = end.ok_or(Error::Parse {
        line: start + 1,
        message: "header is not terminated by &END or /".into(),
    })?;
    let fields = split_namelist(&header, start + 1)?;

    let get = |key: &str| fields.iter().find(|(k, _)| k == key).map(|(_, v)| v);
    let norb = match get("NORB") {
        Some(v) if v.len() == 1 => parse_index(&v[0], start + 1)?,
        _ => {
            return Err(Error::Parse {
                line: start + 1,
                message: "header lacks a single NORB value".into(),
            })
        }
    };
    let mut ints = IntegralSet::zeros(norb);
    if let Some(v) = get("NELEC") {
        ints.n_electrons = Some(parse_index(&v[0], start + 1)?);
    }
    if let Some(v) = get("MS2") {
        ints.two_ms = Some(v[0].parse().map_err(|_| Error::Parse {
            line: start + 1,
            message: format!("bad MS2 value {:?}", v[0]),
        })?);
    }
    if let Some(v) = get("ORBSYM") {
        if v.len() != norb {
            return Err(Error::Parse {
                line: start + 1,
                message: format!("ORBSYM lists {} entries for NORB = {norb}", v.len()),
            });
        }
        let mut irreps = Vec::with_capacity(norb);
        for t in v {
            let label = parse_index(t, start + 1)?;
            if !(1..=8).contains(&label) {
                return Err(Error::Parse {
                    line: start + 1,
                    message: format!("ORBSYM label {label} outside 1..8"),
                });
            }
            irreps.push((label - 1) as u8);
        }
        ints.orb_irreps = Some(irreps);
    }
    if let Some(v) = get("NATOCC") {
        if v.len() != norb {
            return Err(Error::Parse {
                line: start + 1,
                message: format!("NATOCC lists {} entries for NORB = {norb}", v.len()),
            });
        }
        let occ = v
            .iter()
            .map(|t| parse_real(t, start + 1))
            .collect::<Result<Vec<_>>>()?;
        ints.nat_occ = Some(occ);
    }

    let mut seen: HashSet<(u8, usize)> = HashSet::new();
    let mut duplicates = 0usize;
    for (i, raw) in lines.iter().enumerate().skip(end + 1) {
        let line = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 5 {
            return Err(Error::Parse {
                line,
                message: format!("expected `value i j k l`, found {} fields", tokens.len()),
            });
        }
        let value = parse_real(tokens[0], line)?;
        let mut idx = [0usize; 4];
        for (slot, t) in idx.iter_mut().zip(&tokens[1..]) {
            *slot = parse_index(t, line)?;
            if *slot > norb {
                return Err(Error::Parse {
                    line,
                    message: format!("orbital index {slot} exceeds NORB = {norb}"),
                });
            }
        }
        let key = match idx {
            [0, 0, 0, 0] => {
                ints.core_energy = value;
                (0u8, 0usize)
            }
            [p, 0, 0, 0] if p > 0 => {
                debug!("line {line}: skipping orbital energy");
                continue;
            }
            [p, q, 0, 0] if p > 0 && q > 0 => {
                ints.set_h(p - 1, q - 1, value);
                (1, pair_index(p - 1, q - 1))
            }
            [p, q, r, s] if p > 0 && q > 0 && r > 0 && s > 0 => {
                ints.set_g(p - 1, q - 1, r - 1, s - 1, value);
                (2, pair_index(pair_index(p - 1, q - 1), pair_index(r - 1, s - 1)))
            }
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("unsupported index pattern {idx:?}"),
                })
            }
        };
        if !seen.insert(key) {
            duplicates += 1;
            warn!("line {line}: integral {idx:?} repeats a symmetry-equivalent entry; keeping the last value");
        }
    }
    if duplicates > 0 {
        warn!("{duplicates} duplicate integral entries overwritten");
    }
    Ok(ints)
}

fn split_namelist(header: &str, line: usize) -> Result<Vec<(String, Vec<String>)>> {
    let mut fields: Vec<(String, Vec<String>)> = Vec::new();
    let cleaned = header.replace(',', " ");
    let mut tokens = cleaned.split_whitespace().peekable();
    let mut pending: Option<String> = None;
    while let Some(tok) = tokens.next() {
        if let Some(eq) = tok.find('=') {
            let key = tok[..eq].trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "header assignment without a key".into(),
                });
            }
            fields.push((key, Vec::new()));
            let rest = &tok[eq + 1..];
            if !rest.is_empty() {
                fields.last_mut().unwrap().1.push(rest.to_string());
            }
            pending = None;
        } else if tokens.peek().is_some_and(|t| t.starts_with('=')) {
            // "KEY = value" spelled with spaces
            pending = Some(tok.to_string());
        } else if let Some((_, values)) = fields.last_mut() {
            values.push(tok.to_string());
        } else {
            return Err(Error::Parse {
                line,
                message: format!("unexpected header token {tok:?}"),
            });
        }
        if let Some(key) = pending.take() {
            let eq = tokens.next().unwrap();
            fields.push((key, Vec::new()));
            if eq.len() > 1 {
                fields.last_mut().unwrap().1.push(eq[1..].to_string());
            }
        }
    }
    Ok(fields)
}

#[inline]
fn spatial(i: usize) -> usize {
    i >> 1
}

#[inline]
fn same_spin(i: usize, j: usize) -> bool {
    (i ^ j) & 1 == 0
}

/// Antisymmetrized spin-orbital integral `⟨pq||rs⟩ = [pr|qs] − [ps|qr]`.
fn antisym(ints: &IntegralSet, p: usize, q: usize, r: usize, s: usize) -> f64 {
    let mut v = 0.0;
    if same_spin(p, r) && same_spin(q, s) {
        v += ints.g(spatial(p), spatial(r), spatial(q), spatial(s));
    }
    if same_spin(p, s) && same_spin(q, r) {
        v -= ints.g(spatial(p), spatial(s), spatial(q), spatial(r));
    }
    v
}

/// `⟨bra|H|ket⟩` including the core energy on the diagonal.
pub fn slater_condon(bra: OccupationVector, ket: OccupationVector, ints: &IntegralSet) -> f64 {
    let diff = bra.bits() ^ ket.bits();
    match diff.count_ones() {
        0 => diagonal_element(ket, ints),
        2 => {
            let a = (bra.bits() & diff).trailing_zeros() as usize;
            let i = (ket.bits() & diff).trailing_zeros() as usize;
            if !same_spin(a, i) {
                return 0.0;
            }
            let (mid, s1) = ket.annihilate(i).expect("occupied");
            let (_, s2) = mid.create(a).expect("empty");
            let mut v = ints.h(spatial(a), spatial(i));
            for j in ket.occupied().filter(|&j| j != i) {
                v += antisym(ints, a, j, i, j);
            }
            s1 * s2 * v
        }
        4 => {
            let created = OccupationVector::from_bits(bra.bits() & diff);
            let removed = OccupationVector::from_bits(ket.bits() & diff);
            let mut cr = created.occupied();
            let (a, b) = (cr.next().unwrap(), cr.next().unwrap());
            let mut rm = removed.occupied();
            let (i, j) = (rm.next().unwrap(), rm.next().unwrap());
            // bra = sign · a†_a a†_b a_j a_i |ket⟩
            let (s0, s1) = ket.annihilate(i).unwrap();
            let (s1o, s2) = s0.annihilate(j).unwrap();
            let (s2o, s3) = s1o.create(b).unwrap();
            let (_, s4) = s2o.create(a).unwrap();
            s1 * s2 * s3 * s4 * antisym(ints, a, b, i, j)
        }
        _ => 0.0,
    }
}

fn diagonal_element(onv: OccupationVector, ints: &IntegralSet) -> f64 {
    let occ: Vec<usize> = onv.occupied().collect();
    let mut e = ints.core_energy();
    for (k, &i) in occ.iter().enumerate() {
        e += ints.h(spatial(i), spatial(i));
        for &j in &occ[..k] {
            e += ints.g(spatial(i), spatial(i), spatial(j), spatial(j));
            if same_spin(i, j) {
                e -= ints.g(spatial(i), spatial(j), spatial(j), spatial(i));
            }
        }
    }
    e
}

/// The Hamiltonian restricted to one determinant space, stored as a sparse
/// symmetric matrix in compressed-row form.
#[derive(Clone, Debug)]
pub struct HamiltonianOperator {
    integrals: IntegralSet,
    space: FockSubspace,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl HamiltonianOperator {
    /// Assembles all nonzero Slater–Condon elements of `space`. Rows are
    /// computed in parallel; every element is a pure function of its two
    /// determinants so the result does not depend on scheduling.
    pub fn new(integrals: IntegralSet, space: FockSubspace) -> Result<Self> {
        if space.n_sites() > integrals.n_spin_orbitals() {
            return Err(Error::DimensionMismatch {
                expected: integrals.n_spin_orbitals(),
                found: space.n_sites(),
            });
        }
        let onvs = space.onvs();
        let rows: Vec<Vec<(usize, f64)>> = onvs
            .par_iter()
            .map(|&bra| {
                onvs.iter()
                    .enumerate()
                    .filter(|(_, ket)| (bra.bits() ^ ket.bits()).count_ones() <= 4)
                    .filter_map(|(l, &ket)| {
                        let v = slater_condon(bra, ket, &integrals);
                        (v != 0.0).then_some((l, v))
                    })
                    .collect()
            })
            .collect();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for row in rows {
            for (l, v) in row {
                cols.push(l);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(HamiltonianOperator {
            integrals,
            space,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn integrals(&self) -> &IntegralSet {
        &self.integrals
    }

    pub fn space(&self) -> &FockSubspace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Sparse row `n` as parallel slices of columns and values.
    pub fn row(&self, n: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[n]..self.row_ptr[n + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    pub fn element(&self, n: usize, l: usize) -> f64 {
        let (cols, vals) = self.row(n);
        cols.binary_search(&l).map_or(0.0, |k| vals[k])
    }

    /// `H v` in the determinant basis.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|n| {
                let (cols, vals) = self.row(n);
                cols.iter().zip(vals).map(|(&l, &h)| h * v[l]).sum()
            })
            .collect()
    }

    /// `vᵀ H w`.
    pub fn expectation(&self, v: &[f64], w: &[f64]) -> f64 {
        let hw = self.apply(w);
        v.iter().zip(&hw).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for n in 0..d {
            let (cols, vals) = self.row(n);
            for (&l, &v) in cols.iter().zip(vals) {
                m[(n, l)] = v;
            }
        }
        m
    }

    /// `Σ_{nl} K_pn H_nl K_ql`.
    pub fn csf_matrix_element(&self, basis: &CsfBasis, p: usize, q: usize) -> Result<f64> {
        let n_csf = basis.n_csfs();
        if p >= n_csf || q >= n_csf {
            return Err(Error::IndexOutOfBounds(format!(
                "CSF pair ({p}, {q}) outside a basis of {n_csf}"
            )));
        }
        self.check_basis(basis)?;
        let mut sum = 0.0;
        for &(n, kpn) in basis.row(p) {
            for &(l, kql) in basis.row(q) {
                sum += kpn * self.element(n, l) * kql;
            }
        }
        Ok(sum)
    }

    /// Dense CSF-basis Hamiltonian `K H Kᵀ`.
    pub fn csf_matrix(&self, basis: &CsfBasis) -> Result<DMatrix<f64>> {
        self.check_basis(basis)?;
        let n_csf = basis.n_csfs();
        let columns: Vec<Vec<f64>> = (0..n_csf)
            .into_par_iter()
            .map(|q| {
                let mut hk = vec![0.0; self.dim()];
                for &(l, kql) in basis.row(q) {
                    // H symmetric: column l equals row l
                    let (cols, vals) = self.row(l);
                    for (&n, &h) in cols.iter().zip(vals) {
                        hk[n] += h * kql;
                    }
                }
                (0..n_csf)
                    .map(|p| basis.row(p).iter().map(|&(n, k)| k * hk[n]).sum())
                    .collect()
            })
            .collect();
        Ok(DMatrix::from_fn(n_csf, n_csf, |p, q| columns[q][p]))
    }

    fn check_basis(&self, basis: &CsfBasis) -> Result<()> {
        if basis.space().onvs() != self.space.onvs() {
            return Err(Error::ContractViolation(
                "CSF basis and Hamiltonian span different determinant spaces".into(),
            ));
        }
        Ok(())
    }
}

/// Lowest eigenpair from the dense oracle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundState {
    pub energy: f64,
    /// Eigenvector in the basis that was diagonalized (determinants or CSFs).
    pub vector: Vec<f64>,
    /// The same state expanded over determinants, normalized to one.
    pub determinant_vector: Vec<f64>,
}

/// Exact diagonalization with the default dense limit.
pub fn exact_diagonalize(h: &HamiltonianOperator, basis: Option<&CsfBasis>) -> Result<GroundState> {
    exact_diagonalize_with_limit(h, basis, DEFAULT_DENSE_LIMIT)
}

/// Lowest eigenpair of `H` in the determinant basis, or of `K H Kᵀ` against
/// the overlap `K Kᵀ` in a CSF basis.
pub fn exact_diagonalize_with_limit(
    h: &HamiltonianOperator,
    basis: Option<&CsfBasis>,
    dense_limit: usize,
) -> Result<GroundState> {
    let dim = basis.map_or(h.dim(), CsfBasis::n_csfs);
    if dim > dense_limit {
        return Err(Error::Capacity(format!(
            "dense diagonalization of dimension {dim} exceeds the limit of {dense_limit}; \
             shrink the active space or raise the limit"
        )));
    }
    match basis {
        None => {
            let (energy, v) = linalg::lowest_eigenpair(h.to_dense());
            let vector: Vec<f64> = v.iter().copied().collect();
            Ok(GroundState {
                energy,
                determinant_vector: vector.clone(),
                vector,
            })
        }
        Some(basis) => {
            let hk = h.csf_matrix(basis)?;
            let n = basis.n_csfs();
            let overlap = DMatrix::from_fn(n, n, |p, q| basis.overlap(p, q));
            let (energy, y) = linalg::generalized_lowest(&hk, &overlap, 1e-10)?;
            let vector: Vec<f64> = y.iter().copied().collect();
            let mut det = basis.expand(&vector);
            let norm = det.iter().map(|c| c * c).sum::<f64>().sqrt();
            det.iter_mut().for_each(|c| *c /= norm);
            Ok(GroundState {
                energy,
                vector,
                determinant_vector: det,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_csf_basis, enumerate_onvs};

    const H2: &str = " &FCI NORB=2,NELEC=2,MS2=0,\n  ORBSYM=1,1\n  ISYM=1,\n &END\n 0.5 1 1 1 1\n 0.7137 0 0 0 0\n -1.2528 1 1 0 0\n";

    #[test]
    fn header_conventions() {
        let ints = parse_fcidump_str(H2).unwrap();
        assert_eq!(ints.n_orbitals(), 2);
        assert_eq!(ints.core_energy(), 0.7137);
        assert_eq!(ints.h(0, 0), -1.2528);
        assert_eq!(ints.g(0, 0, 0, 0), 0.5);
        assert_eq!(ints.header_electrons(), Some(2));
        assert_eq!(ints.header_two_ms(), Some(0));
        assert_eq!(ints.orbital_irreps(), Some(&[0u8, 0][..]));
    }

    #[test]
    fn fortran_exponents_and_spaced_keys() {
        let text = "&FCI NORB = 1, NELEC=1 /\n 1.5D-1 1 1 0 0\n";
        assert_eq!(parse_fcidump_str(text).unwrap().h(0, 0), 0.15);
        let text = "&FCI NORB = 1, NELEC=1\n/\n 1.5D-1 1 1 0 0\n";
        let ints = parse_fcidump_str(text).unwrap();
        assert_eq!(ints.h(0, 0), 0.15);
    }

    #[test]
    fn eightfold_symmetry_of_storage() {
        let text = "&FCI NORB=3 &END\n 0.25 1 2 3 1\n";
        let ints = parse_fcidump_str(text).unwrap();
        for (p, q, r, s) in [(0, 1, 2, 0), (1, 0, 2, 0), (0, 1, 0, 2), (1, 0, 0, 2), (2, 0, 0, 1), (0, 2, 1, 0), (2, 0, 1, 0), (0, 2, 0, 1)] {
            assert_eq!(ints.g(p, q, r, s), 0.25);
        }
        assert_eq!(ints.one_body_asymmetry(), 0.0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad_index = "&FCI NORB=2 &END\n 0.1 1 1 0 0\n 0.2 3 1 0 0\n";
        match parse_fcidump_str(bad_index) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad_number = "&FCI NORB=2 &END\n abc 1 1 0 0\n";
        assert!(matches!(parse_fcidump_str(bad_number), Err(Error::Parse { line: 2, .. })));
        let short = "&FCI NORB=2 &END\n 0.1 1 1 0\n";
        assert!(matches!(parse_fcidump_str(short), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_fcidump_str("&FCI NELEC=2 &END\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_fcidump_str("0.1 1 1 0 0\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn duplicates_keep_last_value() {
        let text = "&FCI NORB=2 &END\n 0.1 1 2 0 0\n 0.3 2 1 0 0\n";
        let ints = parse_fcidump_str(text).unwrap();
        assert_eq!(ints.h(0, 1), 0.3);
    }

    fn one_body_only() -> IntegralSet {
        let mut ints = IntegralSet::zeros(3);
        ints.set_core_energy(0.4);
        for (p, v) in [(0, -1.0), (1, -0.5), (2, 0.25)] {
            ints.set_h(p, p, v);
        }
        ints.set_h(0, 1, 0.1);
        ints
    }

    #[test]
    fn diagonal_without_two_body_terms() {
        let ints = one_body_only();
        let onv = OccupationVector::parse("110000").unwrap();
        assert!((slater_condon(onv, onv, &ints) - (0.4 - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn triple_excitations_vanish() {
        let mut ints = one_body_only();
        ints.set_g(0, 1, 1, 2, 0.3);
        let bra = OccupationVector::parse("111000").unwrap();
        let ket = OccupationVector::parse("000111").unwrap();
        assert_eq!(slater_condon(bra, ket, &ints), 0.0);
    }

    #[test]
    fn csf_elements_are_symmetric_and_match_dense() {
        let ints = parse_fcidump_str(H2).unwrap();
        let mut ints = ints;
        ints.set_h(0, 1, 0.05);
        ints.set_h(1, 1, -0.4);
        ints.set_g(0, 0, 1, 1, 0.45);
        ints.set_g(0, 1, 0, 1, 0.15);
        ints.set_g(1, 1, 1, 1, 0.47);
        ints.set_g(0, 1, 1, 1, 0.02);
        let space = enumerate_onvs(4, 2, 0, None).unwrap();
        let basis = build_csf_basis(&space, 0).unwrap();
        let h = HamiltonianOperator::new(ints, space).unwrap();
        let dense = basis.to_dense() * h.to_dense() * basis.to_dense().transpose();
        let cached = h.csf_matrix(&basis).unwrap();
        for p in 0..3 {
            for q in 0..3 {
                let a = h.csf_matrix_element(&basis, p, q).unwrap();
                let b = h.csf_matrix_element(&basis, q, p).unwrap();
                assert!((a - b).abs() < 1e-12);
                assert!((a - dense[(p, q)]).abs() < 1e-12);
                assert!((a - cached[(p, q)]).abs() < 1e-12);
            }
        }
        assert!(matches!(
            h.csf_matrix_element(&basis, 3, 0),
            Err(Error::IndexOutOfBounds(_))
        ));
    }

    #[test]
    fn closed_shell_csf_element_equals_diagonal() {
        let ints = parse_fcidump_str(H2).unwrap();
        let space = enumerate_onvs(2, 2, 0, None).unwrap();
        let basis = build_csf_basis(&space, 0).unwrap();
        let h = HamiltonianOperator::new(ints.clone(), space.clone()).unwrap();
        let e = h.csf_matrix_element(&basis, 0, 0).unwrap();
        assert_eq!(e, slater_condon(space.onv(0), space.onv(0), &ints));
        assert!((e - (0.7137 - 2.0 * 1.2528 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_integrals_give_core_energy() {
        let mut ints = IntegralSet::zeros(3);
        ints.set_core_energy(-2.5);
        let space = enumerate_onvs(6, 3, 1, None).unwrap();
        let basis = build_csf_basis(&space, 1).unwrap();
        let h = HamiltonianOperator::new(ints, space).unwrap();
        let gs = exact_diagonalize(&h, None).unwrap();
        assert!((gs.energy + 2.5).abs() < 1e-12);
        let norm: f64 = gs.vector.iter().map(|c| c * c).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        let gs = exact_diagonalize(&h, Some(&basis)).unwrap();
        assert!((gs.energy + 2.5).abs() < 1e-12);
    }

    #[test]
    fn capacity_limit() {
        let ints = IntegralSet::zeros(2);
        let space = enumerate_onvs(4, 2, 0, None).unwrap();
        let h = HamiltonianOperator::new(ints, space).unwrap();
        assert!(matches!(
            exact_diagonalize_with_limit(&h, None, 3),
            Err(Error::Capacity(_))
        ));
    }
}
