"""Estimation objectives built on score fields.

Implements exact score matching, sliced score matching (plain, variance
reduced, control variate), denoising score matching, the exact sliced Fisher
divergence against an oracle data score, and stochastic trace estimation.
Every objective returns an ``ObjectiveEstimate`` whose ``value_tensor`` is
differentiable w.r.t. the field's parameter leaves.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor
from .models import ScoreField

__all__ = [
    "ProjectionSampler",
    "ProjectionBlock",
    "ObjectiveEstimate",
    "DsmConfig",
    "ControlVariateConfig",
    "MomentRequirementError",
    "sample_projections",
    "ssm",
    "ssm_vr",
    "ssm_cv",
    "sm_exact",
    "dsm",
    "sliced_fisher_exact",
    "hutchinson_trace",
    "OBJECTIVES",
]


class MomentRequirementError(ValueError):
    """Projection distribution fails E[v v'] = I where it is required."""


@dataclass(frozen=True)
class ProjectionSampler:
    """Distribution over projection vectors with second-moment metadata.

    kinds: 'gaussian' (standard normal), 'rademacher' (uniform on {-1,+1}^D),
    'sphere' (uniform on the unit sphere; E[v v'] = I/D unless
    ``scale_to_identity`` multiplies draws by sqrt(D)).
    """

    kind: str
    dim: int
    seed: int | tuple = 0
    scale_to_identity: bool = False

    def __post_init__(self):
        if self.kind not in ("gaussian", "rademacher", "sphere"):
            raise ValueError(f"unknown projection kind {self.kind!r}")
        if self.scale_to_identity and self.kind != "sphere":
            raise ValueError("scale_to_identity only applies to the sphere sampler")

    def _seed_words(self) -> list:
        return list(self.seed) if isinstance(self.seed, (tuple, list)) else [self.seed]

    @property
    def unit_second_moment(self) -> bool:
        return self.kind in ("gaussian", "rademacher") or self.scale_to_identity

    def _draw(self, rng, n_vectors: int) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal((n_vectors, self.dim))
        if self.kind == "rademacher":
            return rng.integers(0, 2, size=(n_vectors, self.dim)) * 2.0 - 1.0
        v = rng.standard_normal((n_vectors, self.dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        if self.scale_to_identity:
            v *= np.sqrt(self.dim)
        return v

    def sample(self, n: int, m: int, step: int = 0) -> "ProjectionBlock":
        """An (N, M, D) i.i.d. block, deterministic given (seed, step)."""
        if n < 1 or m < 1:
            raise ValueError("sample: n and m must be >= 1")
        rng = np.random.default_rng([*self._seed_words(), step])
        flat = self._draw(rng, n * m)
        return ProjectionBlock(flat.reshape(n, m, self.dim), self.unit_second_moment)

    def sample_matrix(self, m: int, step: int = 0) -> np.ndarray:
        """m plain vectors as an (m, D) array."""
        rng = np.random.default_rng([*self._seed_words(), step])
        return self._draw(rng, m)


@dataclass(frozen=True)
class ProjectionBlock:
    """Projection vectors v_ij, shape (N, M, D), plus moment metadata."""

    vectors: np.ndarray
    unit_second_moment: bool = False

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeMismatch("projection-block", arr.shape)
        object.__setattr__(self, "vectors", arr)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def m(self) -> int:
        return self.vectors.shape[1]


def sample_projections(sampler: ProjectionSampler, n: int, m: int, step: int = 0) -> ProjectionBlock:
    return sampler.sample(n, m, step)


@dataclass
class ObjectiveEstimate:
    """One minibatch objective evaluation.

    ``value`` is the mean of ``per_sample``; ``value_tensor`` is the same
    scalar on the tape, usable for parameter gradients; ``backward_passes``
    counts gradient traversals spent building the estimate (0 on closed-form
    paths).
    """

    value: float
    per_sample: np.ndarray
    backward_passes: int
    projections_used: int
    value_tensor: Tensor | None = None
    metadata: dict = dc_field(default_factory=dict)


@dataclass(frozen=True)
class DsmConfig:
    """Gaussian corruption scale for denoising score matching."""

    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("dsm: sigma must be > 0")


@dataclass(frozen=True)
class ControlVariateConfig:
    """Multiplier beta(x) on the zero-mean control-variate correction."""

    beta: Callable[[np.ndarray], np.ndarray] | float = 1.0

    def values(self, batch: np.ndarray) -> np.ndarray:
        if callable(self.beta):
            return np.asarray([float(self.beta(x)) for x in batch])
        return np.full(batch.shape[0], float(self.beta))


def _as_block(projections) -> ProjectionBlock:
    if isinstance(projections, ProjectionBlock):
        return projections
    return ProjectionBlock(np.asarray(projections, dtype=np.float64))


def _check_batch(batch, block: ProjectionBlock):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ShapeMismatch("objective-batch", batch.shape)
    if block.vectors.shape[0] != batch.shape[0] or block.vectors.shape[2] != batch.shape[1]:
        raise ShapeMismatch("objective-projections", block.vectors.shape, batch.shape)
    return batch


def _require_unit_moment(block: ProjectionBlock, op: str):
    if not block.unit_second_moment:
        raise MomentRequirementError(
            f"{op} requires a projection distribution with E[v v'] = I "
            "(gaussian, rademacher, or sphere with scale_to_identity); "
            "got one with E[v v'] != I"
        )


class _PassMeter:
    """Counts backward passes spent inside one objective build.

    The field either carries a shared tape (training) or ``bind`` makes a
    fresh one; the meter resolves whichever tape actually ran the passes.
    """

    def __init__(self, field: ScoreField):
        self._shared = getattr(field, "_tape", None)
        self._before = self._shared.backward_passes if self._shared is not None else 0
        self._bound_tape = None

    def watch(self, bound) -> None:
        leaf = getattr(bound, "x_leaf", None)
        if leaf is not None:
            self._bound_tape = leaf.tape

    def count(self) -> int:
        tape = self._shared if self._shared is not None else self._bound_tape
        return tape.backward_passes - self._before if tape is not None else 0


def _sliced_terms(field: ScoreField, batch: np.ndarray, block: ProjectionBlock, meter: _PassMeter):
    """Shared core of the sliced objectives: per-sample tensors (t1, c, q).

    t1_i = mean_j v_ij' grad_x(v_ij' s)(x_i)
    c_i  = mean_j 1/2 (v_ij' s(x_i))^2
    q_i  = 1/2 ||s(x_i)||^2
    """
    bound = field.bind(batch)
    meter.watch(bound)
    m = block.m
    t1 = None
    c = None
    for j in range(m):
        vj = block.vectors[:, j, :]
        vj_c = ad.constant(vj)
        dj = bound.directional(vj)
        t1_j = ad.tensor_sum(ad.mul(vj_c, dj), axis=1)
        c_j = ad.mul(0.5, ad.square(ad.tensor_sum(ad.mul(vj_c, bound.score), axis=1)))
        t1 = t1_j if t1 is None else ad.add(t1, t1_j)
        c = c_j if c is None else ad.add(c, c_j)
    if m > 1:
        t1 = ad.mul(1.0 / m, t1)
        c = ad.mul(1.0 / m, c)
    q = ad.mul(0.5, ad.tensor_sum(ad.square(bound.score), axis=1))
    return t1, c, q


def _finish(per_sample_t: Tensor, block, meter: _PassMeter, extra=None) -> ObjectiveEstimate:
    value_t = ad.mean(per_sample_t)
    est = ObjectiveEstimate(
        value=float(value_t.values),
        per_sample=per_sample_t.values.copy(),
        backward_passes=meter.count(),
        projections_used=block.m if block is not None else 0,
        value_tensor=value_t,
    )
    if extra:
        est.metadata.update(extra)
    return est


def ssm(field: ScoreField, batch, projections) -> ObjectiveEstimate:
    """Sliced objective: mean_ij [v' grad_x s v + 1/2 (v' s)^2]."""
    block = _as_block(projections)
    batch = _check_batch(batch, block)
    meter = _PassMeter(field)
    t1, c, _ = _sliced_terms(field, batch, block, meter)
    return _finish(ad.add(t1, c), block, meter)


def ssm_vr(field: ScoreField, batch, projections) -> ObjectiveEstimate:
    """Variance-reduced sliced objective: quadratic term integrated to 1/2 ||s||^2."""
    block = _as_block(projections)
    _require_unit_moment(block, "ssm_vr")
    batch = _check_batch(batch, block)
    meter = _PassMeter(field)
    t1, _, q = _sliced_terms(field, batch, block, meter)
    return _finish(ad.add(t1, q), block, meter)


def ssm_cv(field: ScoreField, batch, projections, cv: ControlVariateConfig | None = None) -> ObjectiveEstimate:
    """Control-variate objective; beta=0 reduces to ssm, beta=1 to ssm_vr.

    Per sample: t1 + (1-beta) c + beta q, i.e. the plain objective minus
    beta times the zero-mean correction (c - q).
    """
    cv = cv if cv is not None else ControlVariateConfig()
    block = _as_block(projections)
    _require_unit_moment(block, "ssm_cv")
    batch = _check_batch(batch, block)
    meter = _PassMeter(field)
    t1, c, q = _sliced_terms(field, batch, block, meter)
    beta = cv.values(batch)
    per = ad.add(ad.add(t1, ad.mul(ad.constant(1.0 - beta), c)), ad.mul(ad.constant(beta), q))
    return _finish(per, block, meter)


def sm_exact(field: ScoreField, batch) -> ObjectiveEstimate:
    """Exact objective: mean_i [tr(grad_x s)(x_i) + 1/2 ||s(x_i)||^2]."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ShapeMismatch("objective-batch", batch.shape)
    meter = _PassMeter(field)
    bound = field.bind(batch)
    meter.watch(bound)
    trace = bound.jacobian_trace()
    q = ad.mul(0.5, ad.tensor_sum(ad.square(bound.score), axis=1))
    return _finish(ad.add(trace, q), None, meter)


def dsm(field: ScoreField, batch, cfg: DsmConfig, seed) -> ObjectiveEstimate:
    """Denoising objective on data corrupted by N(0, sigma^2 I) noise."""
    batch = np.asarray(batch, dtype=np.float64)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(batch.shape)
    corrupted = batch + cfg.sigma * noise
    target = (batch - corrupted) / cfg.sigma**2
    meter = _PassMeter(field)
    bound = field.bind(corrupted)
    meter.watch(bound)
    diff = ad.sub(bound.score, ad.constant(target))
    per = ad.mul(0.5, ad.tensor_sum(ad.square(diff), axis=1))
    return _finish(per, None, meter, extra={"sigma": cfg.sigma})


def sliced_fisher_exact(field: ScoreField, data_score, batch, projections) -> ObjectiveEstimate:
    """Sliced Fisher divergence against an analytic data score.

    1/2 mean_ij (v' s_model(x_i) - v' s_data(x_i))^2; always >= 0.
    """
    block = _as_block(projections)
    batch = _check_batch(batch, block)
    meter = _PassMeter(field)
    bound = field.bind(batch)
    meter.watch(bound)
    target = ad.constant(np.asarray(data_score(batch), dtype=np.float64))
    diff = ad.sub(bound.score, target)
    per = None
    for j in range(block.m):
        vj = ad.constant(block.vectors[:, j, :])
        term = ad.mul(0.5, ad.square(ad.tensor_sum(ad.mul(vj, diff), axis=1)))
        per = term if per is None else ad.add(per, term)
    if block.m > 1:
        per = ad.mul(1.0 / block.m, per)
    return _finish(per, block, meter)


def hutchinson_trace(matrix_apply, dim: int, sampler: ProjectionSampler, m: int, step: int = 0) -> float:
    """Stochastic trace (1/m) sum_j v_j' A v_j; unbiased when E[v v'] = I."""
    if not sampler.unit_second_moment:
        raise MomentRequirementError(
            "hutchinson_trace requires E[v v'] = I; use gaussian, rademacher, "
            "or sphere with scale_to_identity"
        )
    vs = sampler.sample_matrix(m, step)
    total = 0.0
    for j in range(m):
        total += float(vs[j] @ np.asarray(matrix_apply(vs[j])))
    return total / m


OBJECTIVES = {
    "ssm": ssm,
    "ssm_vr": ssm_vr,
    "ssm_cv": ssm_cv,
    "sm_exact": sm_exact,
    "dsm": dsm,
}
