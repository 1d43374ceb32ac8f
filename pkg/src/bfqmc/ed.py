"""Exact-diagonalization thermal oracle for small lattices.

Full-spectrum dense diagonalization in the canonical (N_b, N_f) sector.
This is the ground truth that the Monte Carlo estimates are validated
against, and the source of the boson-fermion exchange-splitting check.

Sign convention for the spinless fermions: basis states are site-ordered
occupation vectors, and only nearest-neighbor hops on an open chain are
supported.  Such hops never move a fermion past another one, so every hop
matrix element is -t_f with no fermionic sign.  This silently breaks for
longer-range hopping, which is deliberately not implemented.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.linalg

from .model import ModelParams, diagonal_energy, require_valid

# Above this dimension the dense full-spectrum solve is refused outright.
DIMENSION_GUARD = 20_000


def _boson_states(L: int, N_b: int, n_max: int) -> list[tuple[int, ...]]:
    """All occupation tuples of length L summing to N_b with entries <= n_max."""
    out: list[tuple[int, ...]] = []

    def rec(prefix: list[int], remaining: int, sites_left: int):
        if sites_left == 0:
            if remaining == 0:
                out.append(tuple(prefix))
            return
        # keep enough room on the remaining sites
        lo = max(0, remaining - n_max * (sites_left - 1))
        hi = min(n_max, remaining)
        for n in range(lo, hi + 1):
            rec(prefix + [n], remaining - n, sites_left - 1)

    rec([], N_b, L)
    return out


def _fermion_states(L: int, N_f: int) -> list[tuple[int, ...]]:
    """All hardcore occupation tuples of length L with N_f particles."""
    out = []
    for occ_sites in combinations(range(L), N_f):
        v = [0] * L
        for s in occ_sites:
            v[s] = 1
        out.append(tuple(v))
    return out


class FockBasis:
    """Canonical-sector occupation basis with bijective index maps.

    The combined index runs boson-major: state = (boson tuple, fermion
    tuple) at index ib * n_fermion_states + jf.
    """

    def __init__(self, L: int, N_b: int, N_f: int, n_max: int):
        self.L = L
        self.N_b = N_b
        self.N_f = N_f
        self.n_max = n_max
        self.boson_states = _boson_states(L, N_b, n_max)
        self.fermion_states = _fermion_states(L, N_f)
        self.boson_index = {s: i for i, s in enumerate(self.boson_states)}
        self.fermion_index = {s: i for i, s in enumerate(self.fermion_states)}
        self.dim = len(self.boson_states) * len(self.fermion_states)

    @classmethod
    def from_params(cls, p: ModelParams) -> "FockBasis":
        return cls(p.L, p.N_b, p.N_f, p.n_max)

    def state(self, idx: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        nf = len(self.fermion_states)
        return self.boson_states[idx // nf], self.fermion_states[idx % nf]

    def index(self, boson: tuple[int, ...], fermion: tuple[int, ...]) -> int:
        return self.boson_index[boson] * len(self.fermion_states) + self.fermion_index[fermion]

    def occupancy_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-basis-state site occupancies, shapes [dim, L]."""
        nb = np.array(self.boson_states, dtype=np.float64).reshape(len(self.boson_states), self.L)
        nf = np.array(self.fermion_states, dtype=np.float64).reshape(len(self.fermion_states), self.L)
        dim_b, dim_f = nb.shape[0], nf.shape[0]
        nb_full = np.repeat(nb, dim_f, axis=0)
        nf_full = np.tile(nf, (dim_b, 1))
        return nb_full, nf_full


def _hop_matrix_bosons(basis: FockBasis, t_b: float) -> np.ndarray:
    """Boson kinetic term in the boson sector alone (open chain)."""
    dim = len(basis.boson_states)
    H = np.zeros((dim, dim))
    for idx, st in enumerate(basis.boson_states):
        for i in range(basis.L - 1):
            # hop i -> i+1; the reverse direction fills the transpose entry
            for src, dst in ((i, i + 1), (i + 1, i)):
                if st[src] > 0 and st[dst] < basis.n_max:
                    new = list(st)
                    new[src] -= 1
                    new[dst] += 1
                    jdx = basis.boson_index[tuple(new)]
                    H[jdx, idx] += -t_b * np.sqrt(st[src] * (st[dst] + 1))
    return H


def _hop_matrix_fermions(basis: FockBasis, t_f: float) -> np.ndarray:
    """Fermion kinetic term in the fermion sector alone (no sign, see module doc)."""
    dim = len(basis.fermion_states)
    H = np.zeros((dim, dim))
    for idx, st in enumerate(basis.fermion_states):
        for i in range(basis.L - 1):
            for src, dst in ((i, i + 1), (i + 1, i)):
                if st[src] == 1 and st[dst] == 0:
                    new = list(st)
                    new[src] = 0
                    new[dst] = 1
                    jdx = basis.fermion_index[tuple(new)]
                    H[jdx, idx] += -t_f
    return H


def build_hamiltonian(p: ModelParams, basis: FockBasis | None = None) -> np.ndarray:
    """Dense real-symmetric Hamiltonian in the canonical sector."""
    if basis is None:
        basis = FockBasis.from_params(p)
    if basis.dim > DIMENSION_GUARD:
        raise ValueError(
            f"basis dimension {basis.dim} exceeds dense-solver guard {DIMENSION_GUARD}"
        )
    dim_f = len(basis.fermion_states)
    HB = _hop_matrix_bosons(basis, p.t_b)
    HF = _hop_matrix_fermions(basis, p.t_f)
    H = np.kron(HB, np.eye(dim_f)) + np.kron(np.eye(len(basis.boson_states)), HF)
    diag = np.empty(basis.dim)
    for s in range(basis.dim):
        nb, nf = basis.state(s)
        diag[s] = sum(diagonal_energy(nb[i], nf[i], i, p) for i in range(p.L))
    H[np.diag_indices_from(H)] += diag
    return H


@dataclass
class EDExpectations:
    """Exact per-site thermal expectations and compressibilities."""

    params: ModelParams
    T: float
    n_b: np.ndarray
    n_f: np.ndarray
    nb2: np.ndarray
    nf2: np.ndarray
    ntot2: np.ndarray
    nbnf: np.ndarray
    kappa_b: np.ndarray
    kappa_f: np.ndarray
    kappa_bf: np.ndarray
    saturation: np.ndarray  # per-site probability of n_b == n_max
    energy: float

    @property
    def n_tot(self) -> np.ndarray:
        return self.n_b + self.n_f


def thermal_expectations(p: ModelParams, T: float | None = None) -> EDExpectations:
    """Full-spectrum thermal averages: Z^-1 Tr[exp(-beta H) O] exactly.

    All observables here are diagonal in the occupation basis, so only the
    thermal probability of each basis state is needed:
    P_s = sum_n w_n |<s|n>|^2 with w_n the normalized Boltzmann weights.
    """
    require_valid(p)
    if T is None:
        T = p.T
    basis = FockBasis.from_params(p)
    H = build_hamiltonian(p, basis)
    evals, evecs = scipy.linalg.eigh(H)
    beta = 1.0 / T
    w = np.exp(-beta * (evals - evals[0]))
    Z = w.sum()
    w /= Z
    P = (evecs**2) @ w  # thermal probability per basis state

    nb_arr, nf_arr = basis.occupancy_arrays()
    n_b = P @ nb_arr
    n_f = P @ nf_arr
    nb2 = P @ nb_arr**2
    nf2 = P @ nf_arr**2
    ntot2 = P @ (nb_arr + nf_arr) ** 2
    nbnf = P @ (nb_arr * nf_arr)
    sat = P @ (nb_arr == p.n_max)
    energy = float(w @ evals)
    return EDExpectations(
        params=p,
        T=T,
        n_b=n_b,
        n_f=n_f,
        nb2=nb2,
        nf2=nf2,
        ntot2=ntot2,
        nbnf=nbnf,
        kappa_b=beta * (nb2 - n_b**2),
        kappa_f=beta * (nf2 - n_f**2),
        kappa_bf=beta * (ntot2 - (n_b + n_f) ** 2),
        saturation=sat,
        energy=energy,
    )


def exchange_splitting(t_b: float, t_f: float, U_bf: float) -> float:
    """Gap E1 - E0 of one boson plus one fermion on two sites.

    The two lowest states are the symmetric/antisymmetric combinations of
    the singly-occupied configurations, split by virtual double occupancy;
    for large U_bf the gap scales like t_b * t_f / U_bf.
    """
    p = ModelParams(
        L=2, N_b=1, N_f=1, t_b=t_b, t_f=t_f, U_bb=0.0, U_bf=U_bf, V_c=0.0, T=1.0, L_tau=2, n_max=1
    )
    H = build_hamiltonian(p)
    evals = scipy.linalg.eigvalsh(H)
    return float(evals[1] - evals[0])
