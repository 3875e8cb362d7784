"""Regenerate the bundled FCIDUMP fixtures.

Each system is an STO-3G hydrogen cluster. RHF orbitals are rotated into the
natural orbitals of the full-space CI ground state, integrals are written in
FCIDUMP format with an extra NATOCC header entry carrying the natural
occupation numbers, and the FCI energy is printed for PROVENANCE.md.
"""
import numpy as np
from pyscf import gto, scf, fci, ao2mo
from pyscf.tools import fcidump


def ring(n, bond):
    radius = bond / (2.0 * np.sin(np.pi / n))
    return [("H", (radius * np.cos(2 * np.pi * k / n), radius * np.sin(2 * np.pi * k / n), 0.0))
            for k in range(n)]


def chain(n, bond):
    return [("H", (0.0, 0.0, bond * k)) for k in range(n)]


SYSTEMS = {
    "h2": chain(2, 0.74),
    "h4_chain": chain(4, 1.5),
    "h6_ring": ring(6, 1.5),
}


def build(name, atoms):
    mol = gto.M(atom=atoms, basis="sto-3g", unit="Angstrom", symmetry=False, verbose=0)
    mf = scf.RHF(mol).run(conv_tol=1e-12)
    norb = mf.mo_coeff.shape[1]
    nelec = mol.nelectron
    h1 = mf.mo_coeff.T @ mf.get_hcore() @ mf.mo_coeff
    eri = ao2mo.kernel(mol, mf.mo_coeff)
    cis = fci.direct_spin1.FCI()
    cis.conv_tol = 1e-14
    e, civec = cis.kernel(h1, eri, norb, nelec, ecore=mol.energy_nuc())
    rdm1 = cis.make_rdm1(civec, norb, nelec)
    occ, rot = np.linalg.eigh(rdm1)
    order = np.argsort(-occ)
    occ, rot = occ[order], rot[:, order]
    coeff = mf.mo_coeff @ rot
    h1 = coeff.T @ mf.get_hcore() @ coeff
    eri = ao2mo.kernel(mol, coeff)
    e_check, _ = cis.kernel(h1, eri, norb, nelec, ecore=mol.energy_nuc())
    assert abs(e - e_check) < 1e-9
    path = f"{name}.fcidump"
    eri = ao2mo.restore(8, eri, norb)
    fcidump.from_integrals(path, h1, eri, norb, nelec, nuc=mol.energy_nuc(), ms=0,
                           orbsym=[1] * norb, tol=1e-14, float_format=" %.16e")
    with open(path) as fh:
        text = fh.read()
    natocc = ",".join(f"{x:.10f}" for x in np.clip(occ, 0.0, 2.0))
    text = text.replace("ISYM=1,", f"ISYM=1,\n NATOCC={natocc},", 1)
    with open(path, "w") as fh:
        fh.write(text)
    print(f"{name}: norb={norb} nelec={nelec} E_FCI={e:.12f} natocc=[{natocc}]")


if __name__ == "__main__":
    for name, atoms in SYSTEMS.items():
        build(name, atoms)
