"""Hamiltonian parameters and diagonal (potential + interaction) energies.

The model is a one-dimensional open chain of L sites holding soft-core
bosons (per-site cutoff n_max) and hardcore spinless fermions in a
quadratic trap centered at site L/2:

    H = -t_b sum_i (b+_i b_{i+1} + h.c.) - t_f sum_i (f+_i f_{i+1} + h.c.)
        + (U_bb/2) sum_i n_b(n_b - 1) + U_bf sum_i n_b n_f
        + V_c sum_i (i - L/2)^2 (n_b + n_f)

Fermion-fermion interactions are absent, all couplings repulsive, and both
particle numbers are fixed (canonical ensemble). Hopping amplitudes set the
energy unit (t_b = t_f = 1 by convention) and k_B = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Soft-core truncation: with U_bb of order several t, occupancies above 4
# carry Boltzmann weights suppressed by many decades.  The cutoff is
# validated post hoc by the saturation monitor in bfqmc.observables.
DEFAULT_N_MAX = 4


@dataclass(frozen=True)
class ModelParams:
    """All couplings and run-geometry constants; immutable once validated.

    beta = 1/T and dtau = beta/L_tau are derived, never stored.
    """

    L: int
    N_b: int
    N_f: int
    t_b: float = 1.0
    t_f: float = 1.0
    U_bb: float = 8.0
    U_bf: float = 8.0
    V_c: float = 0.0
    T: float = 0.08
    L_tau: int = 100
    n_max: int = DEFAULT_N_MAX

    @property
    def beta(self) -> float:
        return 1.0 / self.T

    @property
    def dtau(self) -> float:
        return self.beta / self.L_tau

    @property
    def n_slices(self) -> int:
        """Number of imaginary-time slices in the checkerboard breakup."""
        return 2 * self.L_tau


def validate(p: ModelParams) -> list[str]:
    """Return every violated parameter invariant (empty list = ok).

    Collects all violations instead of stopping at the first so a config
    file with several mistakes is reported in one pass.
    """
    bad = []
    if p.L < 2:
        bad.append(f"L = {p.L} must be >= 2")
    if p.N_b < 0:
        bad.append(f"N_b = {p.N_b} must be >= 0")
    if p.N_f < 0:
        bad.append(f"N_f = {p.N_f} must be >= 0")
    if p.N_f > p.L:
        bad.append(f"N_f = {p.N_f} exceeds hardcore bound L = {p.L}")
    if p.n_max < 1:
        bad.append(f"n_max = {p.n_max} must be >= 1")
    elif p.N_b > p.n_max * p.L:
        bad.append(f"N_b = {p.N_b} exceeds capacity n_max*L = {p.n_max * p.L}")
    if not p.t_b > 0:
        bad.append(f"t_b = {p.t_b} must be > 0")
    if not p.t_f > 0:
        bad.append(f"t_f = {p.t_f} must be > 0")
    if p.U_bb < 0:
        bad.append(f"U_bb = {p.U_bb} must be >= 0 (repulsive)")
    if p.U_bf < 0:
        bad.append(f"U_bf = {p.U_bf} must be >= 0 (repulsive)")
    if p.V_c < 0:
        bad.append(f"V_c = {p.V_c} must be >= 0")
    if not p.T > 0:
        bad.append(f"T = {p.T} must be > 0")
    if p.L_tau < 2 or p.L_tau % 2 != 0:
        bad.append(f"L_tau = {p.L_tau} must be even and >= 2")
    return bad


def require_valid(p: ModelParams) -> ModelParams:
    """Raise ValueError listing every violation; return p unchanged if ok."""
    bad = validate(p)
    if bad:
        raise ValueError("invalid model parameters:\n  " + "\n  ".join(bad))
    return p


def trap_potential(i: int, p: ModelParams) -> float:
    """Per-particle trap energy V_c * (i - L/2)^2 at site i (0-based)."""
    d = i - p.L / 2.0
    return p.V_c * d * d


def trap_profile(p: ModelParams) -> np.ndarray:
    """Trap energies for all sites as a float array of length L."""
    d = np.arange(p.L, dtype=np.float64) - p.L / 2.0
    return p.V_c * d * d


def diagonal_energy(n_b: int, n_f: int, i: int, p: ModelParams) -> float:
    """On-site interaction + trap energy for occupancies (n_b, n_f) at site i."""
    return (
        0.5 * p.U_bb * n_b * (n_b - 1)
        + p.U_bf * n_b * n_f
        + trap_potential(i, p) * (n_b + n_f)
    )


def diagonal_table(p: ModelParams) -> np.ndarray:
    """Diagonal energies for every (site, n_b, n_f) as array [L, n_max+1, 2].

    Precomputed lookup used by the sampling kernels and weight evaluations.
    """
    tab = np.empty((p.L, p.n_max + 1, 2), dtype=np.float64)
    trap = trap_profile(p)
    for nb in range(p.n_max + 1):
        for nf in range(2):
            tab[:, nb, nf] = (
                0.5 * p.U_bb * nb * (nb - 1) + p.U_bf * nb * nf + trap * (nb + nf)
            )
    return tab


def params_hash(p: ModelParams) -> str:
    """Short stable hash of the parameter set, used to guard checkpoint
    resume and report comparisons against mixups."""
    import hashlib

    key = "|".join(
        f"{k}={getattr(p, k)!r}"
        for k in ("L", "N_b", "N_f", "t_b", "t_f", "U_bb", "U_bf", "V_c", "T", "L_tau", "n_max")
    )
    return hashlib.sha256(key.encode()).hexdigest()[:16]
