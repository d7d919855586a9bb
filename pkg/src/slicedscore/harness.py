"""Benchmark and grid-search experiment drivers used by the CLI."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np

from . import objectives as obj
from .models import GaussianModel, MlpEnergy
from .training import ProjectionConfig, TrainConfig, TrainingDiverged, evaluate, train

__all__ = ["BenchRecord", "DsmGridRow", "run_bench_scaling", "run_dsm_grid", "map_cells"]


@dataclass
class BenchRecord:
    dimension: int
    objective: str
    wall_clock_seconds: float     # median over reps, one warmup excluded
    backward_passes: int
    reps: int

    def as_row(self):
        return [self.dimension, self.objective, repr(self.wall_clock_seconds), self.backward_passes]


def _bench_objective(kind: str, model, batch, m: int, seed: int, sampler_kind: str):
    fld = model.score_field()
    if kind == "sm":
        return obj.sm_exact(fld, batch)
    block = obj.ProjectionSampler(sampler_kind, model.dim, seed=seed).sample(batch.shape[0], m)
    if kind == "ssm":
        return obj.ssm(fld, batch, block)
    if kind == "ssm_vr":
        return obj.ssm_vr(fld, batch, block)
    if kind == "dsm":
        return obj.dsm(fld, batch, obj.DsmConfig(0.1), seed=seed)
    raise ValueError(f"unknown bench objective {kind!r}")


def run_bench_scaling(dims, objectives, m: int = 1, reps: int = 5, batch_size: int = 100,
                      seed: int = 0, hidden=(32, 32), sampler_kind: str = "rademacher") -> list[BenchRecord]:
    """Objective-build wall clock per minibatch across data dimensions.

    Uses the energy-network autodiff path so the backward-pass scaling
    (D+1 for the exact objective, M+1 for the sliced one) is what is timed.
    """
    dims = list(dims)
    if any(b <= a for a, b in zip(dims, dims[1:])):
        raise ValueError("dims must be strictly increasing")
    records = []
    for d in dims:
        model = MlpEnergy.init(int(d), hidden=hidden, seed=seed)
        rng = np.random.default_rng([seed, int(d)])
        batch = rng.standard_normal((batch_size, int(d)))
        for kind in objectives:
            est = _bench_objective(kind, model, batch, m, seed, sampler_kind)  # warmup, excluded
            times = []
            for rep in range(max(reps, 1)):
                t0 = time.perf_counter()
                est = _bench_objective(kind, model, batch, m, seed + rep, sampler_kind)
                times.append(time.perf_counter() - t0)
            records.append(
                BenchRecord(
                    dimension=int(d),
                    objective=kind,
                    wall_clock_seconds=float(np.median(times)),
                    backward_passes=est.backward_passes,
                    reps=len(times),
                )
            )
    return records


@dataclass
class DsmGridRow:
    sigma: float
    val_loss: float               # exact objective on the held-out set
    fitted_precision: list | None
    is_argmin: bool = False
    failed: bool = False
    error: str = ""

    def as_row(self):
        prec = "" if self.fitted_precision is None else repr(self.fitted_precision)
        return [repr(self.sigma), repr(self.val_loss), prec, int(self.is_argmin), int(self.failed)]


def _dsm_cell(args):
    sigma, data, val, model, base_cfg = args
    cfg = TrainConfig(
        objective="dsm",
        dsm_sigma=float(sigma),
        steps=base_cfg["steps"],
        batch_size=base_cfg["batch_size"],
        learning_rate=base_cfg["learning_rate"],
        seed=base_cfg["seed"],
        projection=ProjectionConfig(),
        patience=None,
        eval_every=base_cfg["eval_every"],
    )
    try:
        report = train(model, data, cfg)
    except TrainingDiverged as exc:
        return DsmGridRow(float(sigma), float("inf"), None, failed=True, error=str(exc))
    fitted = report.final_model
    loss = evaluate(fitted, val, "sm_exact")
    prec = fitted.precision().tolist() if isinstance(fitted, GaussianModel) else None
    return DsmGridRow(float(sigma), float(loss), prec)


def run_dsm_grid(sigmas, data: np.ndarray, model, *, steps: int = 4000, batch_size: int = 128,
                 learning_rate: float = 1e-3, seed: int = 0, eval_every: int = 200,
                 val_fraction: float = 0.2, workers: int = 1) -> list[DsmGridRow]:
    """Train one model per corruption scale; report held-out exact loss per cell."""
    sigmas = [float(s) for s in sigmas]
    if any(s <= 0 for s in sigmas):
        raise ValueError("sigmas must be > 0")
    data = np.asarray(data, dtype=np.float64)
    n_val = int(round(val_fraction * data.shape[0]))
    rng = np.random.default_rng([seed, 9])
    perm = rng.permutation(data.shape[0])
    val, rest = data[perm[:n_val]], data[perm[n_val:]]
    base_cfg = {
        "steps": steps,
        "batch_size": batch_size,
        "learning_rate": learning_rate,
        "seed": seed,
        "eval_every": eval_every,
    }
    cells = [(s, rest, val, model, base_cfg) for s in sigmas]
    rows = list(map_cells(_dsm_cell, cells, workers))
    finite = [(i, r.val_loss) for i, r in enumerate(rows) if not r.failed]
    if finite:
        best = min(finite, key=lambda t: t[1])[0]
        rows[best].is_argmin = True
    return rows


def map_cells(fn, items, workers: int = 1):
    """Deterministic map over independent cells; processes when workers > 1."""
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def bench_records_to_dicts(records):
    return [asdict(r) for r in records]
