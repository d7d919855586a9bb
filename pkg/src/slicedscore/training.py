"""Minibatch optimization of models under any objective.

Also holds the closed-form ridge solve for kernel-family coefficients and the
held-out evaluation helper.  Training is deterministic given the config seed:
minibatch indices, projection vectors, and corruption noise each come from
their own (seed, stream, step)-keyed generator.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import objectives as obj
from .models import KefModel, model_to_json

__all__ = [
    "ProjectionConfig",
    "TrainConfig",
    "TrainReport",
    "TrainingDiverged",
    "Adam",
    "Sgd",
    "train",
    "fit_kef_alpha",
    "evaluate",
]

_STREAM_DATA, _STREAM_PROJ, _STREAM_NOISE, _STREAM_VAL = 0, 1, 2, 3


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the offending step index."""

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"objective became non-finite ({value}) at step {step}")


@dataclass(frozen=True)
class ProjectionConfig:
    kind: str = "rademacher"
    m: int = 1
    scale_to_identity: bool = False

    def sampler(self, dim: int, seed) -> obj.ProjectionSampler:
        return obj.ProjectionSampler(self.kind, dim, seed=seed, scale_to_identity=self.scale_to_identity)


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "ssm_vr"
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 128
    steps: int = 1000
    seed: int = 0
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    dsm_sigma: float | None = None
    cv_beta: float = 1.0
    validation_fraction: float = 0.1
    patience: int | None = 200
    eval_every: int = 10
    restore_best: bool = False  # hand back the best-validation checkpoint

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.objective not in obj.OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.objective == "dsm" and self.dsm_sigma is None:
            raise ValueError("dsm objective requires dsm_sigma")


@dataclass
class TrainReport:
    final_model: object
    curve: list  # rows (step, train value, validation value or None)
    seconds_per_step: float
    backward_passes: int
    stopped_at: int
    config: TrainConfig
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "final_model": json.loads(model_to_json(self.final_model)),
            "curve": [[s, t, v] for (s, t, v) in self.curve],
            "seconds_per_step": self.seconds_per_step,
            "backward_passes": self.backward_passes,
            "stopped_at": self.stopped_at,
            "config": asdict(self.config),
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=2)

    def curve_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "train", "val"])
            for step, tr, val in self.curve:
                w.writerow([step, repr(tr), "" if val is None else repr(val)])


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        return {k: params[k] - self.lr * grads[k] for k in params}


class Adam:
    """Adam with bias correction; defaults lr 1e-3, betas (0.9, 0.999)."""

    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        self.t += 1
        out = {}
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g**2
            m_hat = self.m[k] / (1 - self.b1**self.t)
            v_hat = self.v[k] / (1 - self.b2**self.t)
            out[k] = params[k] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


def _make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.learning_rate, cfg.betas, cfg.eps)
    if cfg.optimizer == "sgd":
        return Sgd(cfg.learning_rate)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def _objective_estimate(kind, fld, batch, cfg: TrainConfig, sampler, step, stream):
    if kind == "sm_exact":
        return obj.sm_exact(fld, batch)
    if kind == "dsm":
        return obj.dsm(fld, batch, obj.DsmConfig(cfg.dsm_sigma), seed=[cfg.seed, stream, step])
    block = sampler.sample(batch.shape[0], cfg.projection.m, step=step)
    if kind == "ssm":
        return obj.ssm(fld, batch, block)
    if kind == "ssm_vr":
        return obj.ssm_vr(fld, batch, block)
    if kind == "ssm_cv":
        return obj.ssm_cv(fld, batch, block, obj.ControlVariateConfig(cfg.cv_beta))
    raise ValueError(kind)


def train(model, data, cfg: TrainConfig) -> TrainReport:
    """Optimize a model's parameters; deterministic given cfg.

    ``data`` is an (N, D) array; minibatches are drawn i.i.d. with
    replacement.  A non-finite objective aborts with TrainingDiverged.
    """
    data = np.asarray(data, dtype=np.float64)
    params = model.param_arrays()
    if not params:
        raise ValueError("model exposes no trainable parameters")
    dim = model.dim

    rng_data = np.random.default_rng([cfg.seed, _STREAM_DATA])
    perm = rng_data.permutation(data.shape[0])
    n_val = int(round(cfg.validation_fraction * data.shape[0]))
    val_set = data[perm[:n_val]]
    train_set = data[perm[n_val:]]
    if train_set.shape[0] == 0:
        raise ValueError("validation split leaves no training data")

    sampler = cfg.projection.sampler(dim, seed=(cfg.seed, _STREAM_PROJ))
    val_sampler = cfg.projection.sampler(dim, seed=(cfg.seed, _STREAM_VAL))
    optimizer = _make_optimizer(cfg)

    curve = []
    best_val = np.inf
    best_params = None
    stale = 0
    passes_total = 0
    current = model
    stopped_at = cfg.steps
    t0 = time.perf_counter()

    for step in range(cfg.steps):
        idx = rng_data.integers(0, train_set.shape[0], size=cfg.batch_size)
        batch = train_set[idx]

        tape = ad.Tape()
        fld = current.score_field(tape)
        est = _objective_estimate(cfg.objective, fld, batch, cfg, sampler, step, _STREAM_NOISE)
        if not np.isfinite(est.value):
            raise TrainingDiverged(step, est.value)

        names = list(fld.params)
        grads_t = ad.grad(est.value_tensor, [fld.params[k] for k in names])
        grads = {k: g.values for k, g in zip(names, grads_t)}
        passes_total += tape.backward_passes

        params = optimizer.step(params, grads)
        current = current.with_param_arrays(params)

        if step % cfg.eval_every == 0 or step == cfg.steps - 1:
            val_value = None
            if val_set.shape[0] > 0:
                # fixed projection/noise draw (step 0) so evaluations compare
                # parameters, not sampling noise
                val_est = _objective_estimate(
                    cfg.objective, current.score_field(), val_set, cfg, val_sampler, 0, _STREAM_VAL
                )
                val_value = val_est.value
                if not np.isfinite(val_value):
                    raise TrainingDiverged(step, val_value)
                if val_value < best_val - 1e-12:
                    best_val = val_value
                    stale = 0
                    if cfg.restore_best:
                        best_params = {k: v.copy() for k, v in params.items()}
                else:
                    stale += 1
            curve.append((step, est.value, val_value))
            if cfg.patience is not None and stale > cfg.patience:
                stopped_at = step + 1
                break

    if cfg.restore_best and best_params is not None:
        current = current.with_param_arrays(best_params)
    elapsed = time.perf_counter() - t0
    steps_done = stopped_at if stopped_at < cfg.steps else cfg.steps
    return TrainReport(
        final_model=current,
        curve=curve,
        seconds_per_step=elapsed / max(steps_done, 1),
        backward_passes=passes_total,
        stopped_at=steps_done,
        config=cfg,
        metadata={"projection_resampling": "per-step", "seed": cfg.seed},
    )


def fit_kef_alpha(kef: KefModel, batch, projections, lambda_alpha: float = 0.01) -> np.ndarray:
    """Ridge-regularized closed-form coefficients: alpha = -(G + lambda I)^{-1} b.

    G and b are the quadratic and linear blocks of the sliced objective in
    alpha; lambda_alpha must be strictly positive (fixed, not trained).
    """
    if lambda_alpha <= 0:
        raise ValueError("fit_kef_alpha: lambda_alpha must be > 0")
    batch = np.asarray(batch, dtype=np.float64)
    block = projections if isinstance(projections, obj.ProjectionBlock) else obj.ProjectionBlock(projections)
    n, m = block.n, block.m
    ell = kef.n_inducing
    base = kef.base_score(batch)

    g_mat = np.zeros((ell, ell))
    b_vec = np.zeros(ell)
    for j in range(m):
        vj = block.vectors[:, j, :]
        proj = kef.kernel_grad_proj(batch, vj)           # (N, L): v' grad k
        quad = kef.kernel_hess_quad(batch, vj)           # (N, L): v' grad2 k v
        base_proj = np.sum(vj * base, axis=1)            # (N,): v' grad log q0
        g_mat += proj.T @ proj
        b_vec += np.sum(quad + base_proj[:, None] * proj, axis=0)
    g_mat /= n * m
    b_vec /= n * m

    try:
        lo = np.linalg.cholesky(g_mat + lambda_alpha * np.eye(ell))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"fit_kef_alpha: G + lambda I numerically singular (lambda={lambda_alpha}); "
            "check for duplicated inducing points"
        ) from exc
    y = np.linalg.solve(lo, -b_vec)
    return np.linalg.solve(lo.T, y)


def evaluate(model, batch, metric: str, sampler: obj.ProjectionSampler | None = None,
             data_score=None, m: int = 1, seed: int = 0) -> float:
    """Held-out metric value; no parameter mutation."""
    batch = np.asarray(batch, dtype=np.float64)
    fld = model.score_field()
    if metric == "sm_exact":
        return obj.sm_exact(fld, batch).value
    if sampler is None:
        sampler = obj.ProjectionSampler("rademacher", model.dim, seed=seed)
    block = sampler.sample(batch.shape[0], m, step=seed)
    if metric == "ssm_vr":
        return obj.ssm_vr(fld, batch, block).value
    if metric == "sliced_fisher_exact":
        if data_score is None:
            raise ValueError("sliced_fisher_exact needs the analytic data score")
        return obj.sliced_fisher_exact(fld, data_score, batch, block).value
    raise ValueError(f"unknown metric {metric!r}")
