"""Markov-chain driver: initialization, sweeps, scheduling, checkpoints.

A run is a pure function of (ModelParams, RunPlan): per-chain RNG streams
are spawned deterministically from the plan seed (PCG64 via SeedSequence),
the sweep schedule is deterministic, and accumulators from repeated runs
are bit-identical.  Checkpoints capture the complete chain state (RNG
included) so a resumed run reproduces an uninterrupted one exactly.
"""

from __future__ import annotations

import base64
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .model import ModelParams, params_hash, require_valid
from .observables import ObservableAccumulator
from .worldline import (
    PropagatorTable,
    WorldlineConfig,
    build_propagator_table,
    cached_diagonal_table,
    config_weight,
)

CHECKPOINT_FORMAT = "bfqmc-checkpoint-v1"

# Upper bound on sweeps per kernel call, so stop requests are polled and
# measurement/checkpoint boundaries are honored.
MAX_CHUNK = 512


class WeightViolationError(Exception):
    """A zero-weight factor appeared in the sampled configuration."""


class ChainInterrupted(Exception):
    """Run stopped on request; a valid checkpoint was written first."""

    def __init__(self, checkpoint_path, sweeps_done):
        super().__init__(f"interrupted after {sweeps_done} sweeps; checkpoint at {checkpoint_path}")
        self.checkpoint_path = checkpoint_path
        self.sweeps_done = sweeps_done


@dataclass(frozen=True)
class RunPlan:
    """Sweep budget and measurement schedule for one simulation."""

    seed: int
    therm_sweeps: int = 10_000
    measure_sweeps: int = 20_000
    measure_interval: int = 2
    bin_size: int = 100  # measurements per bin; partial bins are dropped
    chains: int = 1


def validate_plan(plan: RunPlan) -> list[str]:
    bad = []
    for name in ("therm_sweeps", "measure_sweeps", "measure_interval", "bin_size", "chains"):
        if getattr(plan, name) < 1:
            bad.append(f"{name} = {getattr(plan, name)} must be >= 1")
    return bad


def require_valid_plan(plan: RunPlan) -> RunPlan:
    bad = validate_plan(plan)
    if bad:
        raise ValueError("invalid run plan:\n  " + "\n  ".join(bad))
    return plan


def trap_order(p: ModelParams) -> list[int]:
    """Sites sorted center-out by trap energy, ties to the lower index."""
    return sorted(range(p.L), key=lambda i: ((i - p.L / 2.0) ** 2, i))


def initialize_config(p: ModelParams, seed=None) -> WorldlineConfig:
    """Time-independent starting configuration packed around the trap center.

    Bosons fill the innermost sites first (one per site per layer, so
    stacking only starts once every site holds one), fermions take the
    innermost boson-free sites, falling back to sharing when none remain.
    The packing is deterministic; `seed` is accepted for interface
    uniformity and unused.
    """
    require_valid(p)
    order = trap_order(p)
    nb = np.zeros(p.L, dtype=np.int64)
    remaining = p.N_b
    while remaining > 0:
        for site in order:
            if remaining == 0:
                break
            if nb[site] < p.n_max:
                nb[site] += 1
                remaining -= 1
    nf = np.zeros(p.L, dtype=np.int64)
    remaining = p.N_f
    for site in order:
        if remaining == 0:
            break
        if nb[site] == 0 and nf[site] == 0:
            nf[site] = 1
            remaining -= 1
    if remaining > 0:
        for site in order:
            if remaining == 0:
                break
            if nf[site] == 0:
                nf[site] = 1
                remaining -= 1
    occ_b = np.tile(nb, (p.n_slices, 1))
    occ_f = np.tile(nf, (p.n_slices, 1))
    return WorldlineConfig(occ_b=occ_b, occ_f=occ_f, params=p)


def sweep(c: WorldlineConfig, table: PropagatorTable, rng, sweep_index: int = 0) -> np.ndarray:
    """One full Metropolis sweep in place.

    Returns acceptance counters [species, move_class, proposed/accepted];
    species order within the sweep alternates with sweep_index.
    """
    stats = np.zeros((2, 3, 2), dtype=np.int64)
    p = c.params
    violations = kernels.run_sweeps(
        c.occ_b, c.occ_f, table.W_b, table.W_f, table.K_b, p.n_max, p.N_b, p.N_f,
        cached_diagonal_table(p), p.dtau, rng, sweep_index, 1, stats,
    )
    if violations:
        raise WeightViolationError(f"{violations} zero-weight factor(s) during sweep {sweep_index}")
    return stats


def _chain_rng(seed: int, chains: int, chain_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed)
    return np.random.default_rng(ss.spawn(chains)[chain_index])


def run_chain(
    p: ModelParams,
    plan: RunPlan,
    chain_index: int = 0,
    checkpoint_path=None,
    checkpoint_interval: int = 0,
    resume_from=None,
    stop_flag=None,
) -> ObservableAccumulator:
    """Thermalize, then sweep and measure on schedule; returns the filled
    accumulator.  Deterministic in (params, plan, chain_index).

    With checkpoint_path set, state is dumped every checkpoint_interval
    sweeps (0 disables the periodic dump) and whenever stop_flag() turns
    true, in which case ChainInterrupted is raised after writing.
    resume_from continues from a checkpoint written by the same params.
    """
    require_valid(p)
    require_valid_plan(plan)
    table = build_propagator_table(p)
    diag_tab = cached_diagonal_table(p)

    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if state["params_hash"] != params_hash(p):
            raise ValueError(
                f"checkpoint {resume_from} was written by params hash "
                f"{state['params_hash']}, current hash is {params_hash(p)}"
            )
        old = state["plan"]
        for name in ("therm_sweeps", "measure_interval", "bin_size"):
            if getattr(old, name) != getattr(plan, name):
                raise ValueError(
                    f"cannot resume: {name} changed from {getattr(old, name)} "
                    f"to {getattr(plan, name)} (measurement schedule would shift)"
                )
        occ_b = state["occ_b"]
        occ_f = state["occ_f"]
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = state["rng_state"]
        acc = ObservableAccumulator.from_state(p, state["acc"])
        sweeps_done = state["sweeps_done"]
        chain_index = state["chain_index"]
    else:
        config = initialize_config(p)
        occ_b, occ_f = config.occ_b, config.occ_f
        rng = _chain_rng(plan.seed, plan.chains, chain_index)
        acc = ObservableAccumulator(p, plan.bin_size)
        sweeps_done = 0

    # cheap full validation up front: broken tables or initial states fail fast
    config_weight(WorldlineConfig(occ_b, occ_f, p), table)

    total = plan.therm_sweeps + plan.measure_sweeps
    stats = np.zeros((2, 3, 2), dtype=np.int64)
    stats += acc.acceptance
    acc.acceptance = stats

    def next_boundary(done: int) -> int:
        nxt = total
        if done < plan.therm_sweeps:
            nxt = min(nxt, plan.therm_sweeps)
        else:
            k = (done - plan.therm_sweeps) // plan.measure_interval + 1
            nxt = min(nxt, plan.therm_sweeps + k * plan.measure_interval)
        if checkpoint_path is not None and checkpoint_interval > 0:
            nxt = min(nxt, (done // checkpoint_interval + 1) * checkpoint_interval)
        return min(nxt, done + MAX_CHUNK)

    while sweeps_done < total:
        chunk = next_boundary(sweeps_done) - sweeps_done
        violations = kernels.run_sweeps(
            occ_b, occ_f, table.W_b, table.W_f, table.K_b, p.n_max, p.N_b, p.N_f,
            diag_tab, p.dtau, rng, sweeps_done, chunk, stats,
        )
        if violations:
            dump = None
            if checkpoint_path is not None:
                dump = str(checkpoint_path) + ".violation"
                save_checkpoint(dump, p, plan, chain_index, sweeps_done, rng, occ_b, occ_f, acc)
            raise WeightViolationError(
                f"{violations} zero-weight factor(s) near sweep {sweeps_done}"
                + (f"; state dumped to {dump}" if dump else "")
            )
        sweeps_done += chunk
        done_measuring = sweeps_done - plan.therm_sweeps
        if done_measuring > 0 and done_measuring % plan.measure_interval == 0:
            acc.add_measurement(occ_b, occ_f)
        if (
            checkpoint_path is not None
            and checkpoint_interval > 0
            and sweeps_done % checkpoint_interval == 0
            and sweeps_done < total
        ):
            save_checkpoint(checkpoint_path, p, plan, chain_index, sweeps_done, rng, occ_b, occ_f, acc)
        if stop_flag is not None and stop_flag() and sweeps_done < total:
            if checkpoint_path is None:
                raise ChainInterrupted(None, sweeps_done)
            save_checkpoint(checkpoint_path, p, plan, chain_index, sweeps_done, rng, occ_b, occ_f, acc)
            raise ChainInterrupted(checkpoint_path, sweeps_done)

    # the sampled state must still be a valid world-line configuration
    violations = WorldlineConfig(occ_b, occ_f, p).check_structure()
    if violations:
        raise WeightViolationError("final configuration invalid: " + "; ".join(violations))
    return acc


def run_chains(p: ModelParams, plan: RunPlan, **kwargs) -> ObservableAccumulator:
    """Run plan.chains independent chains and merge their accumulators."""
    merged = None
    for c in range(plan.chains):
        acc = run_chain(p, plan, chain_index=c, **kwargs)
        if merged is None:
            merged = acc
        else:
            merged.merge(acc)
    return merged


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {
        "dtype": str(a.dtype),
        "shape": list(a.shape),
        "b64": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["b64"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


def save_checkpoint(path, params, plan, chain_index, sweeps_done, rng, occ_b, occ_f, acc) -> None:
    """Self-describing JSON dump of the complete chain state; atomic write."""
    acc_state = {}
    for k, v in acc.to_state().items():
        acc_state[k] = _encode_array(v) if isinstance(v, np.ndarray) else int(v)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "params_hash": params_hash(params),
        "params": asdict(params),
        "plan": asdict(plan),
        "chain_index": int(chain_index),
        "sweeps_done": int(sweeps_done),
        "rng_state": rng.bit_generator.state,
        "occ_b": _encode_array(occ_b),
        "occ_f": _encode_array(occ_f),
        "acc": acc_state,
    }
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        json.dump(payload, f)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    acc_state = {
        k: (_decode_array(v) if isinstance(v, dict) else v) for k, v in payload["acc"].items()
    }
    return {
        "params_hash": payload["params_hash"],
        "params": ModelParams(**payload["params"]),
        "plan": RunPlan(**payload["plan"]),
        "chain_index": payload["chain_index"],
        "sweeps_done": payload["sweeps_done"],
        "rng_state": payload["rng_state"],
        "occ_b": _decode_array(payload["occ_b"]),
        "occ_f": _decode_array(payload["occ_f"]),
        "acc": acc_state,
    }
