"""Experiment orchestration: configs, block-parallel replicas, result tables.

Replicas are grouped into blocks of ``block_size`` consecutive ids; one
block is one standard-error batch. Blocks are assigned to workers in
contiguous chunks and each block's partial sums depend only on the config
and the block id, so the reduction (always in block order) is identical
for any worker count.

Output directory layout, under ``<output_dir>/<experiment>-<config hash>``:

- ``config.json``: canonical config echo (execution settings excluded)
- ``result.json``: every table, check and the blow-up log
- ``results.csv``: one row per estimate
- ``<table>.csv``: tidy plot data

Every file is a pure function of the config and the build. Wall-clock
timing is logged and kept on the in-memory ``RunResult`` only.

An existing ``result.json`` for the same config makes a rerun a no-op.
Per-block partial sums are cached under ``blocks/`` while a run is in
progress so an interrupted run resumes where it stopped.
"""

import csv
import hashlib
import json
import logging
import math
import multiprocessing
import os
import pickle
import shutil
import subprocess
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BlowUpError, ConfigError, DomainError, RieszSheError
from .estimators import (
    BatchSum,
    exponents_from_sums,
    fdd_from_samples,
    field_iqr,
    n_gamma_k_from_sums,
    resolvable,
    structure_summary,
    sup_increments,
    tail_from_sups,
)
from .kernels import verification_table
from .noise import GridSpec
from .solver import Recording, SigmaSpec, initial_profile, simulate

log = logging.getLogger("riesz_she")

SCHEMA_VERSION = 1
EXPERIMENTS = ("kernel-verify", "alpha-to-one", "alpha-continuity", "holder", "tightness")
SEED_ENV = "RIESZ_SHE_SEED"
BLOWUP_BUDGET = 0.01
GAMMA_SENSITIVITY = (1.0, 2.0, 5.0)

_TOP_KEYS = {
    "schema_version", "experiment", "grid", "sigma", "init", "alphas", "alpha0", "k_list", "gamma",
    "M", "seed", "workers", "output_dir", "block_size", "time_stride", "space_stride",
    "space_lags", "time_lags", "tail", "fdd_points", "tol_overrides",
}
_GRID_KEYS = {"T", "n_t", "L", "n_x", "kappa", "N"}
_SIGMA_KEYS = {"kind", "lambda"}
_TAIL_KEYS = {"a", "deltas", "epsilon", "iqr_factor"}
_EXECUTION_KEYS = ("workers", "output_dir")


class BlowUpBudgetError(RieszSheError):
    """More than the allowed fraction of replicas produced non-finite values."""


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    grid: GridSpec = field(default_factory=GridSpec)
    sigma: SigmaSpec = field(default_factory=SigmaSpec)
    init: str = "constant_one"
    alphas: tuple = ()
    alpha0: float = None
    k_list: tuple = (2,)
    gamma: float = 1.0
    M: int = 2000
    seed: int = 0
    workers: int = 1
    output_dir: str = "results"
    block_size: int = 20
    time_stride: int = 1
    space_stride: int = 1
    space_lags: tuple = None
    time_lags: tuple = None
    tail: dict = None
    fdd_points: tuple = None
    tol_overrides: dict = None

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(d, _TOP_KEYS, "config")
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {d.get('schema_version')!r}")
        if "experiment" not in d:
            raise ConfigError("missing key 'experiment'")
        kw = {k: v for k, v in d.items() if k not in ("schema_version", "grid", "sigma")}
        try:
            if "grid" in d:
                _reject_unknown(d["grid"], _GRID_KEYS, "grid")
                kw["grid"] = GridSpec(**d["grid"])
            if "sigma" in d:
                _reject_unknown(d["sigma"], _SIGMA_KEYS, "sigma")
                s = d["sigma"]
                kw["sigma"] = SigmaSpec(s.get("kind", "tanh"), float(s.get("lambda", 1.0)))
        except (DomainError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if kw.get("tail") is not None:
            _reject_unknown(kw["tail"], _TAIL_KEYS, "tail")
        for key in ("alphas", "k_list", "space_lags", "time_lags"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        if kw.get("fdd_points") is not None:
            kw["fdd_points"] = tuple(tuple(p) for p in kw["fdd_points"])
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def to_dict(self, execution=True):
        d = {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "grid": self.grid.to_dict(),
            "sigma": self.sigma.to_dict(),
            "init": self.init,
            "alphas": list(self.alphas),
            "alpha0": self.alpha0,
            "k_list": list(self.k_list),
            "gamma": self.gamma,
            "M": self.M,
            "seed": self.seed,
            "block_size": self.block_size,
            "time_stride": self.time_stride,
            "space_stride": self.space_stride,
            "space_lags": None if self.space_lags is None else list(self.space_lags),
            "time_lags": None if self.time_lags is None else list(self.time_lags),
            "tail": self.tail,
            "fdd_points": None if self.fdd_points is None else [list(p) for p in self.fdd_points],
            "tol_overrides": self.tol_overrides,
        }
        if execution:
            d.update(workers=self.workers, output_dir=self.output_dir)
        return d

    def canonical_json(self):
        """Canonical echo of the experiment identity (execution settings excluded)."""
        return canonical_json(self.to_dict(execution=False))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    @property
    def reference_alpha(self):
        return 1.0 if self.experiment == "alpha-to-one" else self.alpha0

    @property
    def family(self):
        """Alphas solved per replica; the coupling reference, if any, is last."""
        if self.experiment in ("alpha-to-one", "alpha-continuity"):
            return tuple(self.alphas) + (self.reference_alpha,)
        return tuple(self.alphas)

    @property
    def n_blocks(self):
        return self.M // self.block_size

    def block_replicas(self, b):
        """Replica ids of block ``b``; the last block absorbs the remainder."""
        start = b * self.block_size
        stop = self.M if b == self.n_blocks - 1 else start + self.block_size
        return list(range(start, stop))

    def recording(self):
        t_start = 0
        if self.experiment == "holder":
            t_start = -(-(self.grid.n_t // 2) // self.time_stride) * self.time_stride
        return Recording(self.time_stride, self.space_stride, t_start)

    def validate(self):
        e = self.experiment
        if e not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {e!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        if e == "kernel-verify":
            return
        if self.init not in ("constant_one", "bump"):
            raise ConfigError(f"init must be 'constant_one' or 'bump', got {self.init!r}")
        if not self.alphas:
            raise ConfigError("alphas must be a nonempty list")
        if any(not (0 < a <= 1) for a in self.alphas):
            raise ConfigError(f"alphas must lie in (0, 1], got {list(self.alphas)}")
        if len(set(self.alphas)) != len(self.alphas):
            raise ConfigError("alphas must be distinct")
        if any(k not in (2, 4, 6) for k in self.k_list) or not self.k_list:
            raise ConfigError(f"k_list must hold even integers from {{2, 4, 6}}, got {list(self.k_list)}")
        if not (self.gamma >= 1):
            raise ConfigError(f"gamma must be >= 1, got {self.gamma}")
        if self.block_size < 20:
            raise ConfigError("block_size must be >= 20")
        if self.M < 2 * self.block_size:
            raise ConfigError(f"M must be >= 2 * block_size = {2 * self.block_size}")
        if self.time_stride < 1 or self.space_stride < 1:
            raise ConfigError("strides must be >= 1")
        if e == "alpha-to-one" and 1.0 in self.alphas:
            raise ConfigError("alpha-to-one always solves alpha = 1; leave it out of alphas")
        if e == "alpha-continuity":
            if self.alpha0 is None or not (0 < self.alpha0 < 1):
                raise ConfigError("alpha-continuity requires alpha0 in (0, 1)")
            if any(a >= 1 for a in self.alphas) or self.alpha0 in self.alphas:
                raise ConfigError("alpha-continuity requires alphas in (0, 1), distinct from alpha0")
        if e in ("alpha-to-one", "alpha-continuity") and self.fdd_points is not None:
            win = np.flatnonzero(self.grid.window)
            for t_idx, x_idx in self.fdd_points:
                if t_idx % self.time_stride or not (0 <= t_idx <= self.grid.n_t):
                    raise ConfigError(f"fdd point time index {t_idx} is not recorded")
                if x_idx not in win[:: self.space_stride]:
                    raise ConfigError(f"fdd point space index {x_idx} is not recorded")
        if e == "holder":
            for lags, stride, what in ((self.space_lags, self.space_stride, "space"), (self.time_lags, self.time_stride, "time")):
                if lags is None:
                    raise ConfigError(f"holder requires {what}_lags")
                if len(lags) < 4 or any(l <= 0 or l % stride for l in lags) or max(lags) < 10 * min(lags):
                    raise ConfigError(f"{what}_lags need >= 4 positive multiples of the stride spanning a decade")
        if e == "tightness":
            t = self.tail or {}
            a = t.get("a")
            if a is None or not (0 < a < 0.5):
                raise ConfigError("tightness requires tail.a in (0, 1/2)")
            if not t.get("deltas") or any(d <= 0 for d in t["deltas"]):
                raise ConfigError("tightness requires positive tail.deltas")
            if t.get("epsilon") is None and t.get("iqr_factor") is None:
                raise ConfigError("tightness requires tail.epsilon or tail.iqr_factor")

    @property
    def default_fdd_points(self):
        x0 = int(np.argmin(np.abs(self.grid.x)))
        return ((self.grid.n_t, x0),)


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def load_config(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(d)


def apply_seed_override(config, environ=None):
    """Replace the seed from ``RIESZ_SHE_SEED`` if it is set."""
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is None:
        return config
    try:
        seed = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from exc
    log.warning("!!! %s=%d overrides config seed %d !!!", SEED_ENV, seed, config.seed)
    return replace(config, seed=seed)


@lru_cache(maxsize=1)
def build_id():
    """``git describe`` of the source tree, or the package version outside git."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--tags"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=10, check=True,
        )
        return out.stdout.strip() or f"v{__version__}"
    except (OSError, subprocess.SubprocessError):
        return f"v{__version__}"


# -- per-block work -------------------------------------------------------------


def _simulate_block(config, replicas, **kw):
    """Simulate a block; on blow-up retry replica by replica and drop the failures."""
    u0 = initial_profile(config.init, config.grid)
    args = (config.grid, config.family, config.sigma, u0, config.seed)
    try:
        return replicas, [], simulate(*args, replicas, **kw)
    except BlowUpError:
        pass
    ok, failed = [], []
    for r in replicas:
        try:
            simulate(*args, [r], **{k: v for k, v in kw.items() if k != "observer"})
            ok.append(r)
        except BlowUpError as exc:
            log.error("replica %d blew up: %s", r, exc)
            failed.append({"replica": r, "message": str(exc)})
    if not ok:
        return ok, failed, None
    return ok, failed, simulate(*args, ok, **kw)


def _simulate_block_with(config, replicas, make, rec):
    """Run ``simulate`` with a fresh observer from ``make``, retrying after blow-ups."""
    u0 = initial_profile(config.init, config.grid)
    args = (config.grid, config.family, config.sigma, u0, config.seed)
    state = make(replicas)
    try:
        simulate(*args, replicas, recording=rec, observer=state[-1])
        return replicas, [], state
    except BlowUpError:
        pass
    ok, failed = [], []
    for r in replicas:
        try:
            simulate(*args, [r], recording=rec, observer=lambda s, v: None)
            ok.append(r)
        except BlowUpError as exc:
            log.error("replica %d blew up: %s", r, exc)
            failed.append({"replica": r, "message": str(exc)})
    state = make(ok)
    if ok:
        simulate(*args, ok, recording=rec, observer=state[-1])
    return ok, failed, state


def block_work(config, b):
    """Partial results of block ``b``: a dict of plain arrays and lists."""
    replicas = config.block_replicas(b)
    e = config.experiment
    grid, rec = config.grid, config.recording()
    t_index, x_index = rec.time_indices(grid), rec.space_indices(grid)
    if e in ("alpha-to-one", "alpha-continuity"):
        points = config.fdd_points or config.default_fdd_points
        point_slots = [int(np.flatnonzero(t_index == t)[0]) for t, _ in points]
        point_cols = [int(np.flatnonzero(x_index == x)[0]) for _, x in points]
        n_a, ks = len(config.alphas), config.k_list

        def make(reps):
            acc = np.zeros((n_a, len(ks), len(t_index), len(x_index)))
            fdd = np.zeros((len(reps), n_a + 1, len(points)))

            def observer(slot, vals):
                d = np.abs(vals[:, :-1, :] - vals[:, -1:, :])
                for ki, k in enumerate(ks):
                    acc[:, ki, slot] += np.sum(d**k, axis=0)
                for p, (ps, pc) in enumerate(zip(point_slots, point_cols)):
                    if ps == slot:
                        fdd[:, :, p] = vals[:, :, pc]

            return acc, fdd, observer

        ok, failed, (acc, fdd, _) = _simulate_block_with(config, replicas, make, rec)
        return {"replicas": ok, "blowups": failed, "sums": acc, "fdd": fdd}

    ok, failed, values = _simulate_block(config, replicas, recording=rec)
    out = {"replicas": ok, "blowups": failed}
    if values is None:
        return out
    if e == "holder":
        late = np.arange(len(t_index))
        sums = np.stack([
            np.stack([
                structure_summary(values[:, ai], t_index, x_index, late, k, config.space_lags, config.time_lags).total
                for k in config.k_list
            ])
            for ai in range(len(config.alphas))
        ])
        out["sums"] = sums
    elif e == "tightness":
        t = config.tail
        dt_rec = grid.dt * config.time_stride
        dx_rec = grid.dx * config.space_stride
        deltas = [d for d in t["deltas"] if resolvable(d, t["a"], dt_rec, dx_rec)]
        sups = np.zeros((len(ok), len(config.alphas), len(t["deltas"])))
        cols = [i for i, d in enumerate(t["deltas"]) if resolvable(d, t["a"], dt_rec, dx_rec)]
        for ai in range(len(config.alphas)):
            if deltas:
                sups[:, ai, cols] = sup_increments(values[:, ai], t["a"], deltas, dt_rec, dx_rec)
        out["sups"] = sups
        out["finals"] = values[:, :, -1, :].copy()
    return out


def _worker(config_dict, blocks, cache_dir):
    config = RunConfig.from_dict(config_dict)
    for b in blocks:
        path = Path(cache_dir) / f"block_{b:06d}.pkl"
        if path.exists():
            continue
        res = block_work(config, b)
        tmp = path.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(res, fh, protocol=4)
        os.replace(tmp, path)
        log.info("block %d/%d done", b + 1, config.n_blocks)
    return list(blocks)


def run_blocks(config, cache_dir):
    """Compute (or load from cache) every block; returns results in block order."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    chunks = [list(c) for c in np.array_split(np.arange(config.n_blocks), config.workers) if len(c)]
    chunks = [[int(b) for b in c] for c in chunks]
    cdict = config.to_dict()
    if config.workers == 1:
        _worker(cdict, chunks[0], str(cache_dir))
    else:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(len(chunks)) as pool:
            pool.starmap(_worker, [(cdict, c, str(cache_dir)) for c in chunks])
    results = []
    for b in range(config.n_blocks):
        with open(cache_dir / f"block_{b:06d}.pkl", "rb") as fh:
            results.append(pickle.load(fh))
    return results


# -- finalizers -------------------------------------------------------------------------


@dataclass
class RunResult:
    config: RunConfig
    tables: dict
    checks: list
    blowups: list
    timing: dict = field(default_factory=dict)
    out_dir: str = None

    @property
    def passed(self):
        return all(c["passed"] for c in self.checks)

    def to_json(self):
        return {
            "config": self.config.to_dict(execution=False),
            "tables": self.tables,
            "checks": self.checks,
            "blowups": self.blowups,
        }

    @classmethod
    def load(cls, out_dir):
        out_dir = Path(out_dir)
        with open(out_dir / "result.json") as fh:
            d = json.load(fh)
        return cls(RunConfig.from_dict(d["config"]), d["tables"], d["checks"], d["blowups"], {}, str(out_dir))


TABLE_COLUMNS = {
    "estimates": ["estimator", "params", "estimate", "std_error", "M", "seed", "build"],
    "kernels": ["quantity", "params", "closed_form", "oracle", "rel_err", "tol", "passed"],
    "norms": ["alpha", "reference_alpha", "k", "gamma", "estimate", "std_error", "M"],
    "gamma_sensitivity": ["alpha", "reference_alpha", "k", "gamma", "estimate", "std_error", "M"],
    "fdd": ["alpha", "reference_alpha", "t", "x", "w1", "std_error", "M"],
    "exponents": ["alpha", "k", "direction", "slope", "exponent", "std_error", "intercept", "r2", "M"],
    "structure": ["alpha", "k", "direction", "lag", "log_lag", "value", "log_value", "std_error", "M"],
    "tail": ["alpha", "delta", "epsilon", "probability", "std_error", "M", "skipped"],
    "tail_max": ["delta", "epsilon", "max_probability", "argmax_alpha"],
}


def _estimate_row(estimator, params, estimate, std_error, M, seed):
    return {
        "estimator": estimator, "params": canonical_json(params), "estimate": estimate,
        "std_error": std_error, "M": M, "seed": seed, "build": build_id(),
    }


def _monotone_checks(name, rows, key="estimate"):
    """Consecutive rows (ordered toward the reference) nonincreasing within 2 combined se."""
    out = []
    for r0, r1 in zip(rows, rows[1:]):
        slack = 2.0 * math.hypot(r0["std_error"], r1["std_error"])
        ok = r1[key] <= r0[key] + slack
        out.append({
            "name": f"{name}: alpha {r0['alpha']} -> {r1['alpha']} nonincreasing",
            "passed": bool(ok),
            "detail": f"{r1[key]:.6g} <= {r0[key]:.6g} + {slack:.3g}",
        })
    return out


def _finalize_coupled(config, blocks):
    ref = config.reference_alpha
    times = config.grid.dt * config.recording().time_indices(config.grid)
    order = sorted(range(len(config.alphas)), key=lambda i: -abs(config.alphas[i] - ref))
    norms, sens, estimates, checks = [], [], [], []
    for ki, k in enumerate(config.k_list):
        rows = []
        for ai in order:
            sums = [BatchSum(b["sums"][ai, ki], len(b["replicas"])) for b in blocks if b["replicas"]]
            for g in GAMMA_SENSITIVITY:
                gamma = config.gamma * g
                st = n_gamma_k_from_sums(sums, times, gamma, k)
                row = {"alpha": config.alphas[ai], "reference_alpha": ref, "k": k, "gamma": gamma,
                       "estimate": st.estimate, "std_error": st.std_error, "M": st.M}
                sens.append(row)
                if g == 1.0:
                    rows.append(row)
                    params = dict(st.params, alpha=config.alphas[ai], reference_alpha=ref)
                    estimates.append(_estimate_row("n_gamma_k_norm", params, st.estimate, st.std_error, st.M, config.seed))
        norms.extend(rows)
        checks.extend(_monotone_checks(f"N_gamma,{k}", rows))
        if config.experiment == "alpha-to-one" and len(rows) > 1:
            ok = rows[-1]["estimate"] <= 0.5 * rows[0]["estimate"]
            checks.append({
                "name": f"N_gamma,{k}: alpha {rows[-1]['alpha']} at most half of alpha {rows[0]['alpha']}",
                "passed": bool(ok), "detail": f"{rows[-1]['estimate']:.6g} <= 0.5 * {rows[0]['estimate']:.6g}",
            })
    points = config.fdd_points or config.default_fdd_points
    fdd_all = np.concatenate([b["fdd"] for b in blocks if b["replicas"]])
    fdd_rows = []
    for p, (t_idx, x_idx) in enumerate(points):
        ref_samples = fdd_all[:, -1, p : p + 1]
        for ai in order:
            if fdd_all.shape[0] < 500:
                continue
            st = fdd_from_samples(fdd_all[:, ai, p : p + 1], ref_samples, paired=True, boot_seed=config.seed)[0]
            t, x = float(config.grid.dt * t_idx), float(config.grid.x[x_idx])
            fdd_rows.append({"alpha": config.alphas[ai], "reference_alpha": ref, "t": t, "x": x,
                             "w1": st.estimate, "std_error": st.std_error, "M": st.M})
            estimates.append(_estimate_row("fdd_distance", {"alpha": config.alphas[ai], "reference_alpha": ref, "t": t, "x": x},
                                           st.estimate, st.std_error, st.M, config.seed))
    return {"norms": norms, "gamma_sensitivity": sens, "fdd": fdd_rows, "estimates": estimates}, checks


def _finalize_holder(config, blocks):
    g = config.grid
    exps, structure, estimates = [], [], []
    for ai, a in enumerate(config.alphas):
        for ki, k in enumerate(config.k_list):
            sums = [BatchSum(b["sums"][ai, ki], len(b["replicas"])) for b in blocks if b["replicas"]]
            fit = exponents_from_sums(sums, k, config.space_lags, config.time_lags, g.dx, g.dt)
            for direction, part, h in (("space", fit.space, g.dx), ("time", fit.time, g.dt)):
                exps.append({"alpha": a, "k": k, "direction": direction, "slope": part.get("slope", math.nan),
                             "exponent": part.get("exponent", math.nan), "std_error": part.get("exponent_se", math.nan),
                             "intercept": part.get("intercept", math.nan), "r2": part.get("r2", math.nan), "M": fit.M})
                estimates.append(_estimate_row(f"structure_exponent_{direction}", {"alpha": a, "k": k, "lags": part["lags"]},
                                               part.get("exponent", math.nan), part.get("exponent_se", math.nan), fit.M, config.seed))
                for lag, v, se in zip(part["lags"], part["values"], part["std_errors"]):
                    structure.append({"alpha": a, "k": k, "direction": direction, "lag": lag * h,
                                      "log_lag": math.log(lag * h), "value": v,
                                      "log_value": math.log(v) if v > 0 else math.nan, "std_error": se, "M": fit.M})
    return {"exponents": exps, "structure": structure, "estimates": estimates}, []


def _finalize_tightness(config, blocks):
    t = config.tail
    good = [b for b in blocks if b["replicas"]]
    sups = np.concatenate([b["sups"] for b in good])
    finals = np.concatenate([b["finals"] for b in good])
    eps = t.get("epsilon")
    if eps is None:
        eps = t["iqr_factor"] * field_iqr(finals)
    dt_rec = config.grid.dt * config.time_stride
    dx_rec = config.grid.dx * config.space_stride
    deltas = list(t["deltas"])
    usable = [True if resolvable(d, t["a"], dt_rec, dx_rec) else f"delta={d:g} below resolution 2*max(dx^a, dt^(1/4))"
              for d in deltas]
    rows, estimates, per_alpha = [], [], []
    for ai, a in enumerate(config.alphas):
        ests = tail_from_sups(sups[:, ai], deltas, eps, usable, config.block_size)
        per_alpha.append(ests)
        for te in ests:
            rows.append({"alpha": a, "delta": te.delta, "epsilon": eps, "probability": te.probability,
                         "std_error": te.std_error, "M": te.M, "skipped": te.skipped})
            estimates.append(_estimate_row("modulus_tail_probability", {"alpha": a, "a": t["a"], "delta": te.delta, "epsilon": eps},
                                           te.probability, te.std_error, te.M, config.seed))
    order = sorted(range(len(deltas)), key=lambda i: -deltas[i])
    tail_max = []
    for i in order:
        if usable[i] is not True:
            continue
        probs = [per_alpha[ai][i].probability for ai in range(len(config.alphas))]
        j = int(np.argmax(probs))
        tail_max.append({"delta": deltas[i], "epsilon": eps, "max_probability": probs[j], "argmax_alpha": config.alphas[j]})
    checks = []
    for r0, r1 in zip(tail_max, tail_max[1:]):
        checks.append({"name": f"max tail probability nonincreasing from delta {r0['delta']:g} to {r1['delta']:g}",
                       "passed": bool(r1["max_probability"] <= r0["max_probability"]),
                       "detail": f"{r1['max_probability']:.6g} <= {r0['max_probability']:.6g}"})
    if tail_max:
        last = tail_max[-1]
        checks.append({"name": f"max tail probability reaches 0 at delta {last['delta']:g}",
                       "passed": bool(last["max_probability"] == 0.0), "detail": f"{last['max_probability']:.6g}"})
    return {"tail": rows, "tail_max": tail_max, "estimates": estimates}, checks


def _kernel_verify(config):
    rows, checks, estimates = [], [], []
    for q, params, closed, oracle, err, tol in verification_table(config.tol_overrides):
        ok = bool(err <= tol)
        rows.append({"quantity": q, "params": canonical_json(params), "closed_form": closed, "oracle": oracle,
                     "rel_err": err, "tol": tol, "passed": ok})
        estimates.append(_estimate_row(q, params, closed, err, 1, config.seed))
        if not ok:
            checks.append({"name": f"{q} {canonical_json(params)}", "passed": False, "detail": f"rel_err {err:.3g} > tol {tol:.3g}"})
    checks.append({"name": "kernel verification table", "passed": all(r["passed"] for r in rows), "detail": f"{len(rows)} rows"})
    return {"kernels": rows, "estimates": estimates}, checks


# -- driver ----------------------------------------------------------------------------


def result_dir(config):
    return Path(config.output_dir) / f"{config.experiment}-{config.config_hash()}"


def run_experiment(config):
    """Run (or reload) the experiment described by ``config``.

    Raises ``BlowUpBudgetError`` when more than 1% of replicas blow up;
    the partial blow-up log is written first.
    """
    out = result_dir(config)
    echo = config.canonical_json()
    if (out / "result.json").exists() and (out / "config.json").read_text() == echo + "\n":
        log.info("%s already complete; nothing to do", out)
        return RunResult.load(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(echo + "\n")
    t0 = time.perf_counter()
    if config.experiment == "kernel-verify":
        tables, checks = _kernel_verify(config)
        blowups = []
    else:
        blocks = run_blocks(config, out / "blocks")
        blowups = [f for b in blocks for f in b["blowups"]]
        if len(blowups) > BLOWUP_BUDGET * config.M:
            with open(out / "blowups.json", "w") as fh:
                json.dump(blowups, fh, indent=2)
            raise BlowUpBudgetError(f"{len(blowups)} of {config.M} replicas blew up (budget {BLOWUP_BUDGET:.0%})")
        finalize = {
            "alpha-to-one": _finalize_coupled,
            "alpha-continuity": _finalize_coupled,
            "holder": _finalize_holder,
            "tightness": _finalize_tightness,
        }[config.experiment]
        tables, checks = finalize(config, blocks)
    result = RunResult(config, tables, checks, blowups, {"wall_seconds": time.perf_counter() - t0, "workers": config.workers}, str(out))
    with open(out / "result.json", "w") as fh:
        json.dump(_json_safe(result.to_json()), fh, indent=1, sort_keys=True)
        fh.write("\n")
    log.info("%s finished in %.1f s with %d worker(s)", out, result.timing["wall_seconds"], config.workers)
    emit_plotdata(result)
    shutil.rmtree(out / "blocks", ignore_errors=True)
    return result


def _json_safe(obj):
    """Floats as exact 17-digit values; NaN becomes None."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _fmt(v):
    if isinstance(v, bool) or v is None:
        return "" if v is None else str(v).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_table(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def emit_plotdata(result, kind=None, out_dir=None):
    """Write one tidy CSV per table (``kind`` selects one); empty tables get a header only.

    ``estimates`` goes to ``results.csv``. Returns the written paths.
    """
    out_dir = Path(out_dir or result.out_dir)
    names = [kind] if kind else sorted(TABLE_COLUMNS)
    paths = []
    for name in names:
        if name not in TABLE_COLUMNS:
            raise ConfigError(f"unknown table {name!r}")
        if name not in result.tables and kind is None:
            continue
        fname = "results.csv" if name == "estimates" else f"{name}.csv"
        write_table(out_dir / fname, TABLE_COLUMNS[name], result.tables.get(name, []))
        paths.append(out_dir / fname)
    return paths
