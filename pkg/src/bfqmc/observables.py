"""Density/compressibility estimators, error analysis, plateau detection.

Moment convention: squared occupancies are accumulated per (slice, site)
cell and then slice-averaged, i.e. the equal-time on-site fluctuation.
Averaging the occupancy over imaginary time first would measure a smaller,
different quantity.

Local compressibilities carry the inverse-temperature prefactor:

    kappa_s[i] = beta * (<n_s[i]^2> - <n_s[i]>^2),   s in {b, f, bf}

with n_bf = n_b + n_f.  Errors come from delete-one jackknife over bins of
consecutive measurements; integrated autocorrelation times from an online
binning analysis at the trap-center site make under-binning visible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import ModelParams
from .worldline import WorldlineConfig

# Accumulated moment rows, in order.
MOMENTS = ("n_b", "n_f", "nb2", "nf2", "ntot2", "nbnf")

# Warn when the boson cutoff is touched more often than this.
SATURATION_WARN = 1e-4

MAX_BIN_LEVELS = 42


class InsufficientData(Exception):
    """Fewer than two completed bins: no error estimate is possible."""


class OnlineBinner:
    """Pairwise binning analysis of a scalar series, O(log N) memory.

    Level l holds mean/variance statistics of block averages of 2^l
    consecutive values; the integrated autocorrelation time is read off
    from the level where block variance stops growing.
    """

    def __init__(self):
        self.count = np.zeros(MAX_BIN_LEVELS, dtype=np.int64)
        self.sum = np.zeros(MAX_BIN_LEVELS)
        self.sumsq = np.zeros(MAX_BIN_LEVELS)
        self.carry = np.zeros(MAX_BIN_LEVELS)
        self.has_carry = np.zeros(MAX_BIN_LEVELS, dtype=np.int64)

    def push(self, x: float) -> None:
        v = x
        for l in range(MAX_BIN_LEVELS):
            self.count[l] += 1
            self.sum[l] += v
            self.sumsq[l] += v * v
            if self.has_carry[l]:
                v = 0.5 * (self.carry[l] + v)
                self.has_carry[l] = 0
            else:
                self.carry[l] = v
                self.has_carry[l] = 1
                break

    def tau_int(self) -> float:
        """Integrated autocorrelation time; 0.5 means uncorrelated."""
        if self.count[0] < 2:
            return 0.5
        var0 = self._var(0)
        if var0 <= 0.0:
            return 0.5
        tau = 0.5
        for l in range(MAX_BIN_LEVELS):
            if self.count[l] < 32:
                break
            tau = max(tau, 0.5 * (2**l) * self._var(l) / var0)
        return tau

    def _var(self, l: int) -> float:
        n = self.count[l]
        if n < 2:
            return 0.0
        m = self.sum[l] / n
        return max(0.0, (self.sumsq[l] - n * m * m) / (n - 1))

    def to_state(self) -> dict:
        return {
            "count": self.count,
            "sum": self.sum,
            "sumsq": self.sumsq,
            "carry": self.carry,
            "has_carry": self.has_carry,
        }

    @classmethod
    def from_state(cls, state: dict) -> "OnlineBinner":
        b = cls()
        b.count = state["count"].astype(np.int64).copy()
        b.sum = state["sum"].copy()
        b.sumsq = state["sumsq"].copy()
        b.carry = state["carry"].copy()
        b.has_carry = state["has_carry"].astype(np.int64).copy()
        return b


# Observables tracked by the autocorrelation binners (at the trap center).
TAU_OBSERVABLES = ("n_b_center", "n_f_center", "n_tot_center")


class ObservableAccumulator:
    """Binned running sums of per-site moments for one or more chains.

    Single writer per chain; accumulators from independent chains merge by
    bin concatenation.  Partial bins are dropped at finalize time.
    """

    def __init__(self, params: ModelParams, bin_size: int):
        self.params = params
        self.bin_size = int(bin_size)
        self.L = params.L
        self.bins: list[np.ndarray] = []  # each [6, L], bin means
        self.cur = np.zeros((6, self.L))
        self.cur_count = 0
        self.n_measurements = 0
        self.sat_cells = 0
        self.total_cells = 0
        self.acceptance = np.zeros((2, 3, 2), dtype=np.int64)
        self.binners = {name: OnlineBinner() for name in TAU_OBSERVABLES}
        self.center = params.L // 2

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    def add_measurement(self, occ_b: np.ndarray, occ_f: np.ndarray) -> None:
        sat = kernels.measure_config(occ_b, occ_f, self.params.n_max, self.cur)
        n_slices = occ_b.shape[0]
        self.sat_cells += int(sat)
        self.total_cells += n_slices * self.L
        self.n_measurements += 1
        nb_c = occ_b[:, self.center].sum() / n_slices
        nf_c = occ_f[:, self.center].sum() / n_slices
        self.binners["n_b_center"].push(nb_c)
        self.binners["n_f_center"].push(nf_c)
        self.binners["n_tot_center"].push(nb_c + nf_c)
        self.cur_count += 1
        if self.cur_count == self.bin_size:
            self.bins.append(self.cur / self.bin_size)
            self.cur = np.zeros((6, self.L))
            self.cur_count = 0

    def merge(self, other: "ObservableAccumulator") -> None:
        """Absorb a second, independent accumulator (same params, bin size)."""
        if other.params != self.params or other.bin_size != self.bin_size:
            raise ValueError("cannot merge accumulators with different params or bin size")
        self.bins.extend(b.copy() for b in other.bins)
        self.n_measurements += other.n_measurements
        self.sat_cells += other.sat_cells
        self.total_cells += other.total_cells
        self.acceptance += other.acceptance
        # per-chain autocorrelation series cannot be concatenated; keep the
        # worst case so under-binning stays visible
        for name in TAU_OBSERVABLES:
            if other.binners[name].tau_int() > self.binners[name].tau_int():
                self.binners[name] = OnlineBinner.from_state(other.binners[name].to_state())

    def to_state(self) -> dict:
        state = {
            "bins": np.array(self.bins) if self.bins else np.zeros((0, 6, self.L)),
            "cur": self.cur,
            "cur_count": self.cur_count,
            "n_measurements": self.n_measurements,
            "sat_cells": self.sat_cells,
            "total_cells": self.total_cells,
            "acceptance": self.acceptance,
            "bin_size": self.bin_size,
        }
        for name in TAU_OBSERVABLES:
            for k, v in self.binners[name].to_state().items():
                state[f"binner_{name}_{k}"] = v
        return state

    @classmethod
    def from_state(cls, params: ModelParams, state: dict) -> "ObservableAccumulator":
        acc = cls(params, int(state["bin_size"]))
        acc.bins = [b.copy() for b in state["bins"]]
        acc.cur = state["cur"].copy()
        acc.cur_count = int(state["cur_count"])
        acc.n_measurements = int(state["n_measurements"])
        acc.sat_cells = int(state["sat_cells"])
        acc.total_cells = int(state["total_cells"])
        acc.acceptance = state["acceptance"].astype(np.int64).copy()
        for name in TAU_OBSERVABLES:
            acc.binners[name] = OnlineBinner.from_state(
                {k: state[f"binner_{name}_{k}"] for k in ("count", "sum", "sumsq", "carry", "has_carry")}
            )
        return acc


def measure(c: WorldlineConfig, acc: ObservableAccumulator) -> None:
    """Accumulate the equal-time moments of the current configuration."""
    acc.add_measurement(c.occ_b, c.occ_f)


def jackknife(bins: np.ndarray, fn) -> tuple[np.ndarray, np.ndarray]:
    """Delete-one jackknife of fn(moment_means) over bins [n, 6, L].

    Returns (value at full mean, jackknife standard error), both with
    fn's output shape.  fn must be a smooth function of the pooled moments.
    """
    n = bins.shape[0]
    if n < 2:
        raise InsufficientData(f"need >= 2 completed bins, have {n}")
    total = bins.sum(axis=0)
    full = fn(total / n)
    loo = np.array([fn((total - bins[j]) / (n - 1)) for j in range(n)])
    center = loo.mean(axis=0)
    err = np.sqrt((n - 1) / n * ((loo - center) ** 2).sum(axis=0))
    return full, err


@dataclass
class MeasurementReport:
    """Per-site results with errors, plus run accounting."""

    params: ModelParams
    n_b: np.ndarray
    n_b_err: np.ndarray
    n_f: np.ndarray
    n_f_err: np.ndarray
    n_tot: np.ndarray
    n_tot_err: np.ndarray
    kappa_b: np.ndarray
    kappa_b_err: np.ndarray
    kappa_f: np.ndarray
    kappa_f_err: np.ndarray
    kappa_bf: np.ndarray
    kappa_bf_err: np.ndarray
    cov_bf: np.ndarray
    cov_bf_err: np.ndarray
    tau_int: dict
    acceptance: dict
    saturation_fraction: float
    saturation_warning: bool
    n_bins: int
    bin_size: int
    n_measurements: int
    bins: np.ndarray = field(repr=False, default=None)
    metadata: dict = field(default_factory=dict)


def _kappa_fns(beta: float):
    return {
        "n_b": lambda M: M[0],
        "n_f": lambda M: M[1],
        "n_tot": lambda M: M[0] + M[1],
        "kappa_b": lambda M: beta * (M[2] - M[0] ** 2),
        "kappa_f": lambda M: beta * (M[3] - M[1] ** 2),
        "kappa_bf": lambda M: beta * (M[4] - (M[0] + M[1]) ** 2),
        "cov_bf": lambda M: M[5] - M[0] * M[1],
    }


def finalize(acc: ObservableAccumulator) -> MeasurementReport:
    """Reduce completed bins to a report; fails below two bins."""
    if acc.n_bins < 2:
        raise InsufficientData(
            f"finalize needs >= 2 completed bins, have {acc.n_bins} "
            f"({acc.cur_count} measurements in the open bin)"
        )
    bins = np.array(acc.bins)
    beta = acc.params.beta
    results = {}
    for name, fn in _kappa_fns(beta).items():
        results[name], results[name + "_err"] = jackknife(bins, fn)

    p = acc.params
    for species, N in (("n_b", p.N_b), ("n_f", p.N_f)):
        total = results[species].sum()
        if abs(total - N) > 1e-9 * max(1.0, N):
            raise RuntimeError(
                f"sum rule broken: sum({species}) = {total!r} != {N} "
                "(per-slice conservation must make this exact)"
            )

    acc_counts = acc.acceptance
    acceptance = {}
    labels = [("boson_local", 0, 0), ("boson_shift", 0, 1), ("fermion_local", 1, 0),
              ("fermion_shift", 1, 1), ("exchange", 0, 2)]
    for label, sp, cl in labels:
        proposed = int(acc_counts[sp, cl, 0])
        accepted = int(acc_counts[sp, cl, 1])
        acceptance[label] = {
            "proposed": proposed,
            "accepted": accepted,
            "rate": accepted / proposed if proposed else 0.0,
        }

    sat = acc.sat_cells / acc.total_cells if acc.total_cells else 0.0
    return MeasurementReport(
        params=acc.params,
        n_b=results["n_b"],
        n_b_err=results["n_b_err"],
        n_f=results["n_f"],
        n_f_err=results["n_f_err"],
        n_tot=results["n_tot"],
        n_tot_err=results["n_tot_err"],
        kappa_b=results["kappa_b"],
        kappa_b_err=results["kappa_b_err"],
        kappa_f=results["kappa_f"],
        kappa_f_err=results["kappa_f_err"],
        kappa_bf=results["kappa_bf"],
        kappa_bf_err=results["kappa_bf_err"],
        cov_bf=results["cov_bf"],
        cov_bf_err=results["cov_bf_err"],
        tau_int={name: acc.binners[name].tau_int() for name in TAU_OBSERVABLES},
        acceptance=acceptance,
        saturation_fraction=sat,
        saturation_warning=sat > SATURATION_WARN,
        n_bins=acc.n_bins,
        bin_size=acc.bin_size,
        n_measurements=acc.n_measurements,
        bins=bins,
    )


def cutoff_monitor(acc: ObservableAccumulator) -> float:
    """Fraction of sampled (slice, site) cells at the boson cutoff."""
    return acc.sat_cells / acc.total_cells if acc.total_cells else 0.0


@dataclass(frozen=True)
class PlateauRun:
    """One contiguous commensurate, incompressible region."""

    m: int
    start: int
    end: int  # inclusive
    n_sites: int
    mean_n_b: float
    mean_n_f: float
    mixed_mott: bool


@dataclass(frozen=True)
class PlateauReport:
    runs: tuple
    density_tol: float
    kappa_frac: float
    min_sites: int
    kappa_bf_max: float


def detect_plateau(
    report: MeasurementReport,
    density_tol: float = 0.05,
    kappa_frac: float = 0.2,
    min_sites: int = 5,
) -> PlateauReport:
    """Find maximal runs of >= min_sites where n_tot is pinned to one
    integer m >= 1 within density_tol and kappa_bf is suppressed below
    kappa_frac of its profile maximum.

    A run is flagged mixed-Mott when both species' mean densities inside
    are separated from 0 and m by at least density_tol: the total density
    is commensurate while neither species is.
    """
    if density_tol <= 0:
        raise ValueError("density_tol must be > 0")
    if not 0 < kappa_frac < 1:
        raise ValueError("kappa_frac must be in (0, 1)")
    n_tot = report.n_tot
    kappa_bf = report.kappa_bf
    kmax = float(kappa_bf.max()) if len(kappa_bf) else 0.0
    L = len(n_tot)

    site_m = np.zeros(L, dtype=np.int64)
    for i in range(L):
        m = int(round(n_tot[i]))
        if m >= 1 and abs(n_tot[i] - m) <= density_tol and kappa_bf[i] <= kappa_frac * kmax:
            site_m[i] = m

    runs = []
    i = 0
    while i < L:
        if site_m[i] == 0:
            i += 1
            continue
        j = i
        while j + 1 < L and site_m[j + 1] == site_m[i]:
            j += 1
        if j - i + 1 >= min_sites:
            m = int(site_m[i])
            mean_b = float(report.n_b[i : j + 1].mean())
            mean_f = float(report.n_f[i : j + 1].mean())
            mixed = (
                density_tol <= mean_b <= m - density_tol
                and density_tol <= mean_f <= m - density_tol
            )
            runs.append(
                PlateauRun(
                    m=m,
                    start=i,
                    end=j,
                    n_sites=j - i + 1,
                    mean_n_b=mean_b,
                    mean_n_f=mean_f,
                    mixed_mott=mixed,
                )
            )
        i = j + 1
    return PlateauReport(
        runs=tuple(runs),
        density_tol=density_tol,
        kappa_frac=kappa_frac,
        min_sites=min_sites,
        kappa_bf_max=kmax,
    )
