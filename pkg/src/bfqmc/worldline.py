"""World-line configurations, kinetic propagator tables, and weights.

The partition function is Trotter-factorized with a symmetric checkerboard
breakup: exp(-beta H) ~ [exp(-dtau H_even) exp(-dtau H_odd)]^L_tau, with
dtau = beta / L_tau, even/odd referring to the bond sets {(0,1), (2,3), ..}
and {(1,2), (3,4), ..}, and the diagonal (interaction + trap) energy split
evenly between the two half-steps.  Inserting occupation states between
every half-step gives 2*L_tau time slices; the weight of a configuration is

    prod_{active plaquettes} W_s[(n_i, n_j) -> (n_i', n_j')]
    * prod_{slice k, site i} exp(-(dtau/2) * E_diag(n_b, n_f, i))

where W_s is the two-site kinetic matrix exponential of the hopping term
for species s, block diagonal in the conserved bond total n_i + n_j.
All factors are non-negative: fermion world lines on an open chain with
nearest-neighbor hops cannot cross, so there is no sign problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import ModelParams, diagonal_table

_DIAG_CACHE: dict[ModelParams, np.ndarray] = {}


def cached_diagonal_table(p: ModelParams) -> np.ndarray:
    tab = _DIAG_CACHE.get(p)
    if tab is None:
        tab = diagonal_table(p)
        _DIAG_CACHE[p] = tab
    return tab


class WorldlineViolation(Exception):
    """A configuration breaks a structural world-line invariant."""


def _sector_states(m: int, cap: int) -> list[tuple[int, int]]:
    """Two-site occupancy pairs with total m, neither site above cap."""
    return [(a, m - a) for a in range(min(cap, m), max(0, m - cap) - 1, -1)]


def _bond_weights(t: float, dtau: float, cap: int) -> np.ndarray:
    """Dense pair-indexed kinetic weight table for one species.

    Entry [(a, b), (c, d)] (pairs flattened as a*(cap+1)+b) is
    <c, d| exp(+dtau * t * (x+_i x_j + x+_j x_i)) |a, b> restricted to the
    cap-truncated two-site space; zero between different bond totals.
    The + sign absorbs the -t of the Hamiltonian in exp(-dtau H).
    """
    K = cap + 1
    W = np.zeros((K * K, K * K))
    for m in range(2 * cap + 1):
        states = _sector_states(m, cap)
        n = len(states)
        h = np.zeros((n, n))
        for x, (a, b) in enumerate(states):
            # hop j -> i: (a, b) -> (a+1, b-1), amplitude sqrt(b*(a+1))
            if b > 0 and a + 1 <= cap:
                y = states.index((a + 1, b - 1))
                amp = np.sqrt(b * (a + 1))
                h[y, x] += amp
                h[x, y] += amp
        evals, evecs = np.linalg.eigh(h)
        Wm = (evecs * np.exp(dtau * t * evals)) @ evecs.T
        for x, (a, b) in enumerate(states):
            for y, (c, d) in enumerate(states):
                W[a * K + b, c * K + d] = Wm[y, x]
    return W


@dataclass(frozen=True)
class PropagatorTable:
    """Precomputed two-site kinetic weights per species and bond total."""

    W_b: np.ndarray  # [(n_max+1)^2, (n_max+1)^2]
    W_f: np.ndarray  # [4, 4]
    n_max: int
    t_b: float
    t_f: float
    dtau: float

    @property
    def K_b(self) -> int:
        return self.n_max + 1

    def weight(self, species: str, pair_in: tuple[int, int], pair_out: tuple[int, int]) -> float:
        W, K = (self.W_b, self.K_b) if species == "b" else (self.W_f, 2)
        return float(W[pair_in[0] * K + pair_in[1], pair_out[0] * K + pair_out[1]])

    def sector_matrix(self, species: str, m: int) -> tuple[list[tuple[int, int]], np.ndarray]:
        """The m-sector weight block and its state ordering (for inspection)."""
        cap = self.n_max if species == "b" else 1
        states = _sector_states(m, cap)
        out = np.empty((len(states), len(states)))
        for x, sx in enumerate(states):
            for y, sy in enumerate(states):
                out[y, x] = self.weight(species, sx, sy)
        return states, out


def build_propagator_table(p: ModelParams) -> PropagatorTable:
    """Exponentiate the two-site hop operators of both species sector by sector."""
    return PropagatorTable(
        W_b=_bond_weights(p.t_b, p.dtau, p.n_max),
        W_f=_bond_weights(p.t_f, p.dtau, 1),
        n_max=p.n_max,
        t_b=p.t_b,
        t_f=p.t_f,
        dtau=p.dtau,
    )


@dataclass
class WorldlineConfig:
    """Occupancies of both species on the (slice, site) lattice.

    occ_b values lie in {0, .., n_max}, occ_f in {0, 1}; per-slice totals
    are conserved exactly (canonical ensemble) and occupancies change
    between consecutive slices only across the active checkerboard bonds.
    """

    occ_b: np.ndarray  # int64 [n_slices, L]
    occ_f: np.ndarray  # int64 [n_slices, L]
    params: ModelParams

    @property
    def n_slices(self) -> int:
        return self.occ_b.shape[0]

    def copy(self) -> "WorldlineConfig":
        return WorldlineConfig(self.occ_b.copy(), self.occ_f.copy(), self.params)

    def check_structure(self) -> list[str]:
        """Return all structural invariant violations (empty = valid)."""
        p = self.params
        bad = []
        n_slices, L = self.occ_b.shape
        if n_slices != p.n_slices or L != p.L or self.occ_f.shape != self.occ_b.shape:
            bad.append("array shapes do not match params")
            return bad
        if self.occ_b.min() < 0 or self.occ_b.max() > p.n_max:
            bad.append("boson occupancy outside [0, n_max]")
        if self.occ_f.min() < 0 or self.occ_f.max() > 1:
            bad.append("fermion occupancy outside {0, 1}")
        for name, occ, N in (("boson", self.occ_b, p.N_b), ("fermion", self.occ_f, p.N_f)):
            sums = occ.sum(axis=1)
            if not np.all(sums == N):
                bad.append(f"{name} per-slice total != {N} on slices {np.nonzero(sums != N)[0].tolist()}")
        for name, occ in (("boson", self.occ_b), ("fermion", self.occ_f)):
            for h in range(n_slices):
                k1 = (h + 1) % n_slices
                for b in range(h % 2, L - 1, 2):
                    if occ[h, b] + occ[h, b + 1] != occ[k1, b] + occ[k1, b + 1]:
                        bad.append(f"{name} bond total not conserved at half-step {h}, bond {b}")
                # sites not covered by an active bond must propagate as identity
                if h % 2 == 1 and occ[h, 0] != occ[k1, 0]:
                    bad.append(f"{name} discontinuity at uncovered site 0, half-step {h}")
                if (L - 1) % 2 == h % 2 and occ[h, L - 1] != occ[k1, L - 1]:
                    bad.append(f"{name} discontinuity at uncovered site {L - 1}, half-step {h}")
        return bad


def config_weight(c: WorldlineConfig, table: PropagatorTable) -> float:
    """Full log-weight of a configuration; raises WorldlineViolation.

    This is the slow reference evaluation: every local-move ratio must agree
    with the difference of two of these.
    """
    bad = c.check_structure()
    if bad:
        raise WorldlineViolation("; ".join(bad))
    p = c.params
    n_slices, L = c.occ_b.shape
    log_w = 0.0
    for species, occ, W, K in (("b", c.occ_b, table.W_b, table.K_b), ("f", c.occ_f, table.W_f, 2)):
        for h in range(n_slices):
            k1 = (h + 1) % n_slices
            for b in range(h % 2, L - 1, 2):
                w = W[occ[h, b] * K + occ[h, b + 1], occ[k1, b] * K + occ[k1, b + 1]]
                if w <= 0.0:
                    raise WorldlineViolation(
                        f"zero kinetic weight for species {species} at half-step {h}, bond {b}"
                    )
                log_w += np.log(w)
    diag = cached_diagonal_table(p)
    for k in range(n_slices):
        for i in range(L):
            log_w += -0.5 * p.dtau * diag[i, c.occ_b[k, i], c.occ_f[k, i]]
    return log_w


@dataclass(frozen=True)
class LocalMove:
    """Shift of one world-line segment across an inactive plaquette.

    half_step h and bond b must satisfy b % 2 != h % 2; direction +1 moves
    the segment from site b to b+1, -1 the reverse.
    """

    species: str  # "b" or "f"
    half_step: int
    bond: int
    direction: int


def _move_args(c: WorldlineConfig, table: PropagatorTable, species: str):
    if species == "b":
        return c.occ_b, c.occ_f, True, table.W_b, table.K_b, c.params.n_max
    return c.occ_f, c.occ_b, False, table.W_f, 2, 1


def local_move_ratio(c: WorldlineConfig, move: LocalMove, table: PropagatorTable) -> float:
    """Weight ratio new/old for a local move, from O(1) affected factors."""
    h, b, d = move.half_step, move.bond, move.direction
    n_slices, L = c.occ_b.shape
    if not (0 <= h < n_slices and 0 <= b < L - 1 and d in (-1, 1)):
        raise ValueError(f"malformed move {move}")
    if b % 2 == h % 2:
        raise ValueError(f"plaquette (h={h}, b={b}) is active; local moves act on inactive plaquettes")
    occ_m, occ_o, is_b, W, K, cap = _move_args(c, table, move.species)
    r = kernels.plaquette_ratio(
        occ_m, occ_o, is_b, W, K, cap, cached_diagonal_table(c.params), c.params.dtau, h, b, d
    )
    if r < 0.0:
        raise WorldlineViolation(f"zero-weight factor in current configuration near {move}")
    return float(r)


def apply_local_move(c: WorldlineConfig, move: LocalMove) -> None:
    occ_m = c.occ_b if move.species == "b" else c.occ_f
    kernels.apply_plaquette_move(occ_m, move.half_step, move.bond, move.direction)


@dataclass(frozen=True)
class ColumnShift:
    """Translation of one occupancy unit from a column to a neighbor on
    every slice: the straight-line global move."""

    species: str
    column: int
    direction: int


def column_shift_ratio(c: WorldlineConfig, move: ColumnShift, table: PropagatorTable) -> float:
    occ_m, occ_o, is_b, W, K, cap = _move_args(c, table, move.species)
    r = kernels.shift_ratio(
        occ_m, occ_o, is_b, W, K, cap, cached_diagonal_table(c.params), c.params.dtau,
        move.column, move.direction,
    )
    if r < 0.0:
        raise WorldlineViolation(f"zero-weight factor in current configuration near {move}")
    return float(r)


def apply_column_shift(c: WorldlineConfig, move: ColumnShift) -> None:
    occ_m = c.occ_b if move.species == "b" else c.occ_f
    kernels.apply_shift(occ_m, move.column, move.direction)


@dataclass(frozen=True)
class SpeciesExchange:
    """Swap of a boson unit at `column` with a fermion unit at
    `column + direction` on every slice: the direct exchange move."""

    column: int
    direction: int


def species_exchange_ratio(c: WorldlineConfig, move: SpeciesExchange, table: PropagatorTable) -> float:
    r = kernels.exchange_ratio(
        c.occ_b, c.occ_f, table.W_b, table.W_f, table.K_b, c.params.n_max,
        cached_diagonal_table(c.params), c.params.dtau, move.column, move.direction,
    )
    if r < 0.0:
        raise WorldlineViolation(f"zero-weight factor in current configuration near {move}")
    return float(r)


def apply_species_exchange(c: WorldlineConfig, move: SpeciesExchange) -> None:
    kernels.apply_exchange(c.occ_b, c.occ_f, move.column, move.direction)
