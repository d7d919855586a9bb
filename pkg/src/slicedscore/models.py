"""Model zoo: unnormalized densities, score networks, and data generators.

Every model exposes a ``score_field`` that evaluates the score s(x) and its
directional derivatives, either through closed forms (Gaussian, kernel family)
or through the autodiff tape (energy/score networks).  Models are immutable
value objects; training builds new instances via ``with_param_arrays``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, ShapeMismatch

__all__ = [
    "ScoreField",
    "BoundScore",
    "GaussianModel",
    "KefModel",
    "MlpEnergy",
    "ScoreNetwork",
    "ReparamGaussian",
    "sample_data",
    "log_unnormalized_density",
    "kernel_derivatives",
    "softplus_inv",
    "model_to_json",
    "model_from_json",
]


def softplus_inv(y):
    """Inverse of log(1 + exp(.)), elementwise; y must be positive."""
    y = np.asarray(y, dtype=np.float64)
    return np.log(np.expm1(y))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _as_batch(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeMismatch("batch", x.shape, (dim,))
    return x


# ---------------------------------------------------------------------------
# score field abstraction


class BoundScore:
    """Score of one batch, with directional-derivative queries.

    ``score`` is an (N, D) tensor; ``directional(v)`` returns the rows
    grad_x(v_i' s)(x_i); ``jacobian_trace`` the per-sample trace of grad_x s.
    """

    score: Tensor

    def directional(self, v: np.ndarray) -> Tensor:
        raise NotImplementedError

    def jacobian_trace(self) -> Tensor:
        raise NotImplementedError


class ScoreField:
    """A vector field s(x) with value and directional-derivative queries."""

    dim: int
    params: dict[str, Tensor]

    def bind(self, x: np.ndarray) -> BoundScore:
        raise NotImplementedError

    # numpy conveniences for tests and oracles
    def value(self, x) -> np.ndarray:
        x2 = _as_batch(x, self.dim)
        out = self.bind(x2).score.values
        return out[0] if np.asarray(x).ndim == 1 else out

    def directional_jacobian(self, x, v) -> np.ndarray:
        x2 = _as_batch(x, self.dim)
        v2 = _as_batch(v, self.dim)
        out = self.bind(x2).directional(v2).values
        return out[0] if np.asarray(x).ndim == 1 else out


class _AnalyticBound(BoundScore):
    def __init__(self, score, directional_fn, trace_fn):
        self.score = score
        self._directional_fn = directional_fn
        self._trace_fn = trace_fn

    def directional(self, v):
        return self._directional_fn(v)

    def jacobian_trace(self):
        return self._trace_fn()


class _EnergyBound(BoundScore):
    """Score obtained by one gradient pass through an unnormalized log-density."""

    def __init__(self, x_leaf: Tensor, score: Tensor, dim: int):
        self.x_leaf = x_leaf
        self.score = score
        self.dim = dim

    def directional(self, v):
        proj = ad.tensor_sum(ad.mul(ad.constant(v), self.score))
        (out,) = ad.grad(proj, [self.x_leaf], create_graph=True)
        return out

    def jacobian_trace(self):
        n = self.score.shape[0]
        total = None
        eye = np.eye(self.dim)
        for d in range(self.dim):
            basis = ad.constant(eye[d])
            col_sum = ad.tensor_sum(ad.mul(self.score, basis))
            (rows,) = ad.grad(col_sum, [self.x_leaf], create_graph=True)
            contrib = ad.tensor_sum(ad.mul(rows, basis), axis=1)
            total = contrib if total is None else ad.add(total, contrib)
        return total if total is not None else ad.constant(np.zeros(n))


class EnergyScoreField(ScoreField):
    """Score field of an unnormalized log-density built on the tape."""

    def __init__(self, dim, logp_fn, params, tape=None):
        self.dim = dim
        self._logp_fn = logp_fn
        self.params = params
        self._tape = tape

    def log_density(self, x) -> Tensor:
        """Per-sample unnormalized log-density as an (N,) tensor."""
        return self._logp_fn(self.params, ad.constant(_as_batch(x, self.dim)))

    def bind(self, x):
        x = _as_batch(x, self.dim)
        tape = self._tape if self._tape is not None else Tape()
        x_leaf = tape.leaf(x)
        logp = self._logp_fn(self.params, x_leaf)
        (score,) = ad.grad(ad.tensor_sum(logp), [x_leaf], create_graph=True)
        return _EnergyBound(x_leaf, score, self.dim)


class NetworkScoreField(ScoreField):
    """Direct vector-valued score model; not necessarily a gradient field."""

    def __init__(self, dim, forward_fn, params, tape=None):
        self.dim = dim
        self._forward_fn = forward_fn
        self.params = params
        self._tape = tape

    def bind(self, x):
        x = _as_batch(x, self.dim)
        tape = self._tape if self._tape is not None else Tape()
        x_leaf = tape.leaf(x)
        h = self._forward_fn(self.params, x_leaf)
        return _EnergyBound(x_leaf, h, self.dim)


# ---------------------------------------------------------------------------
# Gaussian model


@dataclass(frozen=True)
class GaussianModel:
    """Unnormalized Gaussian with precision parameterized by a Cholesky factor.

    ``chol_raw`` stores the lower-triangular factor with the diagonal kept
    pre-softplus, so the precision L L' is positive definite for any raw
    values.  log p~(x) = -1/2 (x-mean)' L L' (x-mean).
    """

    mean: np.ndarray
    chol_raw: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "chol_raw", np.asarray(self.chol_raw, dtype=np.float64))
        if self.chol_raw.shape != (self.dim, self.dim):
            raise ShapeMismatch("gaussian-chol", self.mean.shape, self.chol_raw.shape)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @staticmethod
    def standard(dim: int) -> "GaussianModel":
        return GaussianModel.from_precision(np.zeros(dim), np.eye(dim))

    @staticmethod
    def from_precision(mean, precision) -> "GaussianModel":
        lo = np.linalg.cholesky(np.asarray(precision, dtype=np.float64))
        raw = np.tril(lo, -1) + np.diag(softplus_inv(np.diag(lo)))
        return GaussianModel(np.asarray(mean, dtype=np.float64), raw)

    def chol(self) -> np.ndarray:
        return np.tril(self.chol_raw, -1) + np.diag(_softplus(np.diag(self.chol_raw)))

    def precision(self) -> np.ndarray:
        lo = self.chol()
        return lo @ lo.T

    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision())

    def log_unnorm(self, x):
        x2 = _as_batch(x, self.dim)
        diff = x2 - self.mean
        vals = -0.5 * np.einsum("ni,ij,nj->n", diff, self.precision(), diff)
        return float(vals[0]) if np.asarray(x).ndim == 1 else vals

    def score(self, x) -> np.ndarray:
        x2 = _as_batch(x, self.dim)
        out = (self.mean - x2) @ self.precision()
        return out[0] if np.asarray(x).ndim == 1 else out

    def hessian(self) -> np.ndarray:
        """Hessian of the log-density; constant in x."""
        return -self.precision()

    def sample(self, n: int, seed) -> np.ndarray:
        """n draws from N(mean, precision^{-1}) by triangular solve."""
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, self.dim))
        lo = self.chol()
        # covariance = L^{-T} L^{-1}, so x = mean + L^{-T} z
        return self.mean + np.linalg.solve(lo.T, z.T).T

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {"mean": self.mean.copy(), "chol_raw": self.chol_raw.copy()}

    def with_param_arrays(self, arrays) -> "GaussianModel":
        return GaussianModel(arrays["mean"], arrays["chol_raw"])

    def _precision_tensor(self, params: dict[str, Tensor]) -> Tensor:
        d = self.dim
        diag_mask = ad.constant(np.eye(d))
        low_mask = ad.constant(np.tril(np.ones((d, d)), -1))
        raw = params["chol_raw"]
        lo = ad.add(ad.mul(raw, low_mask), ad.mul(ad.softplus(raw), diag_mask))
        return ad.matmul(lo, ad.transpose(lo))

    def score_field(self, tape: Tape | None = None, method: str = "analytic") -> ScoreField:
        if tape is not None:
            params = {"mean": tape.leaf(self.mean), "chol_raw": tape.leaf(self.chol_raw)}
        else:
            params = {"mean": ad.constant(self.mean), "chol_raw": ad.constant(self.chol_raw)}
        if method == "analytic":
            return _GaussianField(self, params)
        if method == "autodiff":
            def logp(p, x_t):
                diff = ad.sub(x_t, p["mean"])
                quad = ad.tensor_sum(ad.mul(ad.matmul(diff, self._precision_tensor(p)), diff), axis=1)
                return ad.mul(-0.5, quad)

            return EnergyScoreField(self.dim, logp, params, tape)
        raise ValueError(f"unknown score-field method {method!r}")


class _GaussianField(ScoreField):
    def __init__(self, model: GaussianModel, params: dict[str, Tensor]):
        self.dim = model.dim
        self.params = params
        self._prec = model._precision_tensor(params)
        self._mean = params["mean"]

    def bind(self, x):
        x = _as_batch(x, self.dim)
        n = x.shape[0]
        diff = ad.sub(self._mean, ad.constant(x))
        score = ad.matmul(diff, self._prec)  # precision is symmetric

        def directional(v):
            return ad.neg(ad.matmul(ad.constant(v), self._prec))

        def trace():
            tr = ad.neg(ad.tensor_sum(ad.mul(self._prec, ad.constant(np.eye(self.dim)))))
            return ad.mul(tr, ad.constant(np.ones(n)))

        return _AnalyticBound(score, directional, trace)


# ---------------------------------------------------------------------------
# kernel exponential family


@dataclass(frozen=True)
class KefFeatureNet:
    """One-hidden-layer softplus feature map with a skip connection."""

    w1: np.ndarray  # (H, D)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (D, H)
    b2: np.ndarray  # (D,)

    @staticmethod
    def init(dim: int, hidden: int = 30, seed=0) -> "KefFeatureNet":
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(hidden)
        return KefFeatureNet(
            rng.normal(size=(hidden, dim)) / np.sqrt(dim),
            np.zeros(hidden),
            rng.normal(size=(dim, hidden)) * scale,
            np.zeros(dim),
        )

    def apply(self, x: np.ndarray) -> np.ndarray:
        h = _softplus(x @ self.w1.T + self.b1)
        return x + h @ self.w2.T + self.b2

    def apply_tensor(self, x_t: Tensor) -> Tensor:
        h = ad.softplus(ad.add(ad.matmul(x_t, ad.constant(self.w1.T)), ad.constant(self.b1)))
        return ad.add(ad.add(x_t, ad.matmul(h, ad.constant(self.w2.T))), ad.constant(self.b2))


@dataclass(frozen=True)
class KefModel:
    """Kernel exponential family: log p~(x) = sum_l alpha_l k(x, z_l) + log q0(x).

    The kernel is a nonnegative mixture of Gaussian kernels; the base measure
    q0 is an isotropic Gaussian of scale ``base_scale``.  An optional feature
    extractor moves the kernel onto learned features (off by default; closed
    forms below require it off).
    """

    inducing_points: np.ndarray       # (L, D)
    alpha: np.ndarray                 # (L,)
    bandwidths: np.ndarray = field(default_factory=lambda: np.array([1.0, 3.3, 10.0]))
    weights: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0]))
    base_scale: float = 2.0
    feature_net: KefFeatureNet | None = None

    def __post_init__(self):
        for name in ("inducing_points", "alpha", "bandwidths", "weights"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.weights < 0) or np.any(self.bandwidths <= 0) or self.base_scale <= 0:
            raise ValueError("kef: weights must be >= 0, bandwidths and base_scale > 0")

    @property
    def dim(self) -> int:
        return self.inducing_points.shape[1]

    @property
    def n_inducing(self) -> int:
        return self.inducing_points.shape[0]

    def _features(self, x: np.ndarray) -> np.ndarray:
        return x if self.feature_net is None else self.feature_net.apply(x)

    def kernel(self, x, y) -> np.ndarray:
        """Mixture kernel on feature space; x (N,D) against y (L,D) -> (N,L)."""
        fx = self._features(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        fy = self._features(np.atleast_2d(np.asarray(y, dtype=np.float64)))
        sq = np.sum(fx**2, axis=1)[:, None] + np.sum(fy**2, axis=1)[None, :] - 2 * fx @ fy.T
        out = np.zeros_like(sq)
        for rho, sig in zip(self.weights, self.bandwidths):
            out += rho * np.exp(-sq / (2 * sig**2))
        return out

    def log_base(self, x) -> np.ndarray:
        x2 = _as_batch(x, self.dim)
        d = self.dim
        return -np.sum(x2**2, axis=1) / (2 * self.base_scale**2) - 0.5 * d * np.log(
            2 * np.pi * self.base_scale**2
        )

    def base_score(self, x) -> np.ndarray:
        return -_as_batch(x, self.dim) / self.base_scale**2

    def log_unnorm(self, x):
        x2 = _as_batch(x, self.dim)
        vals = self.kernel(x2, self.inducing_points) @ self.alpha + self.log_base(x2)
        return float(vals[0]) if np.asarray(x).ndim == 1 else vals

    def with_alpha(self, alpha) -> "KefModel":
        return replace(self, alpha=np.asarray(alpha, dtype=np.float64))

    # closed-form kernel derivative blocks (raw-input kernel only)

    def _require_plain_kernel(self):
        if self.feature_net is not None:
            raise ValueError("closed-form kernel derivatives require feature_net=None")

    def kernel_grad_proj(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """v_i' grad_x k(x_i, z_l) for all l; x, v are (N, D) -> (N, L)."""
        self._require_plain_kernel()
        z = self.inducing_points
        diff = x[:, None, :] - z[None, :, :]              # (N, L, D)
        sq = np.sum(diff**2, axis=2)                      # (N, L)
        vdiff = np.einsum("nd,nld->nl", v, diff)          # (N, L)
        out = np.zeros_like(sq)
        for rho, sig in zip(self.weights, self.bandwidths):
            gamma = 1.0 / sig**2
            out += -rho * gamma * np.exp(-sq * gamma / 2) * vdiff
        return out

    def kernel_hess_quad(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """v_i' grad2_x k(x_i, z_l) v_i for all l -> (N, L)."""
        self._require_plain_kernel()
        z = self.inducing_points
        diff = x[:, None, :] - z[None, :, :]
        sq = np.sum(diff**2, axis=2)
        vdiff = np.einsum("nd,nld->nl", v, diff)
        vv = np.sum(v**2, axis=1)[:, None]
        out = np.zeros_like(sq)
        for rho, sig in zip(self.weights, self.bandwidths):
            gamma = 1.0 / sig**2
            out += rho * np.exp(-sq * gamma / 2) * (gamma**2 * vdiff**2 - gamma * vv)
        return out

    def _score_blocks(self, x: np.ndarray):
        """Per-inducing-point score gradients: (N, L, D) array of grad_x k."""
        self._require_plain_kernel()
        z = self.inducing_points
        diff = x[:, None, :] - z[None, :, :]
        sq = np.sum(diff**2, axis=2)
        grad = np.zeros_like(diff)
        for rho, sig in zip(self.weights, self.bandwidths):
            gamma = 1.0 / sig**2
            grad += (-rho * gamma * np.exp(-sq * gamma / 2))[:, :, None] * diff
        return grad

    def score(self, x) -> np.ndarray:
        x2 = _as_batch(x, self.dim)
        out = np.einsum("l,nld->nd", self.alpha, self._score_blocks(x2)) + self.base_score(x2)
        return out[0] if np.asarray(x).ndim == 1 else out

    def score_field(self, tape: Tape | None = None, method: str = "analytic") -> ScoreField:
        if method == "analytic" and self.feature_net is None:
            return _KefAnalyticField(self)
        if method not in ("analytic", "autodiff"):
            raise ValueError(f"unknown score-field method {method!r}")

        alpha_c = ad.constant(self.alpha)
        z_feat = self._features(self.inducing_points)
        zn = np.sum(z_feat**2, axis=1)

        def logp(_params, x_t):
            ft = x_t if self.feature_net is None else self.feature_net.apply_tensor(x_t)
            xn = ad.tensor_sum(ad.square(ft), axis=1)
            cross = ad.matmul(ft, ad.constant(z_feat.T))
            sq = ad.add(
                ad.add(ad.tile_cols(xn, self.n_inducing), ad.constant(zn)),
                ad.mul(-2.0, cross),
            )
            kmat = None
            for rho, sig in zip(self.weights, self.bandwidths):
                term = ad.mul(float(rho), ad.exp(ad.mul(-0.5 / sig**2, sq)))
                kmat = term if kmat is None else ad.add(kmat, term)
            fvec = ad.matmul(kmat, alpha_c)
            base = ad.mul(-0.5 / self.base_scale**2, ad.tensor_sum(ad.square(x_t), axis=1))
            base_const = -0.5 * self.dim * np.log(2 * np.pi * self.base_scale**2)
            return ad.add(ad.add(fvec, base), ad.constant(base_const))

        return EnergyScoreField(self.dim, logp, {}, tape)


class _KefAnalyticField(ScoreField):
    def __init__(self, model: KefModel):
        self.dim = model.dim
        self.params = {}
        self._m = model

    def bind(self, x):
        x = _as_batch(x, self.dim)
        m = self._m
        score = ad.constant(m.score(x))

        def directional(v):
            z = m.inducing_points
            diff = x[:, None, :] - z[None, :, :]
            sq = np.sum(diff**2, axis=2)
            vdiff = np.einsum("nd,nld->nl", v, diff)
            out = np.zeros_like(x)
            for rho, sig in zip(m.weights, m.bandwidths):
                gamma = 1.0 / sig**2
                e = rho * gamma * np.exp(-sq * gamma / 2)
                coeff = np.einsum("l,nl->n", m.alpha, e)
                pull = np.einsum("l,nl,nld->nd", m.alpha, e * vdiff * gamma, diff)
                out += -coeff[:, None] * v + pull
            return ad.constant(out - v / m.base_scale**2)

        def trace():
            z = m.inducing_points
            diff = x[:, None, :] - z[None, :, :]
            sq = np.sum(diff**2, axis=2)
            tr = np.zeros(x.shape[0])
            for rho, sig in zip(m.weights, m.bandwidths):
                gamma = 1.0 / sig**2
                e = rho * np.exp(-sq * gamma / 2)
                tr += np.einsum("l,nl->n", m.alpha, e * (gamma**2 * sq - gamma * self.dim))
            return ad.constant(tr - self.dim / m.base_scale**2)

        return _AnalyticBound(score, directional, trace)


def kernel_derivatives(kef: KefModel, x, z, v) -> tuple[float, float]:
    """Closed-form (v' grad_x k(x, z), v' grad2_x k(x, z) v) for one triple."""
    x = np.asarray(x, dtype=np.float64)[None, :]
    v = np.asarray(v, dtype=np.float64)[None, :]
    z = np.asarray(z, dtype=np.float64)[None, :]
    probe = replace(kef, inducing_points=z, alpha=np.ones(1))
    return float(probe.kernel_grad_proj(x, v)[0, 0]), float(probe.kernel_hess_quad(x, v)[0, 0])


# ---------------------------------------------------------------------------
# MLP energy and score network


def _init_layers(sizes, seed, out_dim):
    rng = np.random.default_rng(seed)
    dims = list(sizes) + [out_dim]
    params = {}
    prev = sizes[0]
    # sizes[0] is the input dimension; weight scale 1/sqrt(fan_in)
    for i, h in enumerate(dims[1:]):
        params[f"w{i}"] = rng.normal(size=(h, prev)) / np.sqrt(prev)
        params[f"b{i}"] = np.zeros(h)
        prev = h
    return params


@dataclass(frozen=True)
class MlpEnergy:
    """Fully-connected softplus network ending in a scalar energy."""

    dim: int
    layers: dict[str, np.ndarray]

    @staticmethod
    def init(dim: int, hidden=(32, 32), seed=0) -> "MlpEnergy":
        return MlpEnergy(dim, _init_layers([dim, *hidden], seed, out_dim=1))

    @property
    def n_layers(self) -> int:
        return len(self.layers) // 2

    def log_unnorm(self, x):
        x2 = _as_batch(x, self.dim)
        h = x2
        for i in range(self.n_layers - 1):
            h = _softplus(h @ self.layers[f"w{i}"].T + self.layers[f"b{i}"])
        last = self.n_layers - 1
        out = h @ self.layers[f"w{last}"].T + self.layers[f"b{last}"]
        vals = out[:, 0]
        return float(vals[0]) if np.asarray(x).ndim == 1 else vals

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.layers.items()}

    def with_param_arrays(self, arrays) -> "MlpEnergy":
        return MlpEnergy(self.dim, {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})

    def score_field(self, tape: Tape | None = None) -> ScoreField:
        params = {
            k: (tape.leaf(v) if tape is not None else ad.constant(v))
            for k, v in self.layers.items()
        }
        n_layers = self.n_layers

        def logp(p, x_t):
            h = x_t
            for i in range(n_layers - 1):
                h = ad.softplus(ad.add(ad.matmul(h, ad.transpose(p[f"w{i}"])), p[f"b{i}"]))
            last = n_layers - 1
            out = ad.add(ad.matmul(h, ad.transpose(p[f"w{last}"])), p[f"b{last}"])
            return ad.tensor_sum(out, axis=1)  # (N, 1) -> (N,)

        return EnergyScoreField(self.dim, logp, params, tape)


@dataclass(frozen=True)
class ScoreNetwork:
    """Fully-connected tanh network R^D -> R^D used as a direct score model."""

    dim: int
    layers: dict[str, np.ndarray]

    @staticmethod
    def init(dim: int, hidden=(64, 64, 64), seed=0) -> "ScoreNetwork":
        return ScoreNetwork(dim, _init_layers([dim, *hidden], seed, out_dim=dim))

    @property
    def n_layers(self) -> int:
        return len(self.layers) // 2

    def forward(self, x) -> np.ndarray:
        x2 = _as_batch(x, self.dim)
        h = x2
        for i in range(self.n_layers - 1):
            h = np.tanh(h @ self.layers[f"w{i}"].T + self.layers[f"b{i}"])
        last = self.n_layers - 1
        out = h @ self.layers[f"w{last}"].T + self.layers[f"b{last}"]
        return out[0] if np.asarray(x).ndim == 1 else out

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.layers.items()}

    def with_param_arrays(self, arrays) -> "ScoreNetwork":
        return ScoreNetwork(self.dim, {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})

    def score_field(self, tape: Tape | None = None) -> ScoreField:
        params = {
            k: (tape.leaf(v) if tape is not None else ad.constant(v))
            for k, v in self.layers.items()
        }
        n_layers = self.n_layers

        def fwd(p, x_t):
            h = x_t
            for i in range(n_layers - 1):
                h = ad.tanh(ad.add(ad.matmul(h, ad.transpose(p[f"w{i}"])), p[f"b{i}"]))
            last = n_layers - 1
            return ad.add(ad.matmul(h, ad.transpose(p[f"w{last}"])), p[f"b{last}"])

        return NetworkScoreField(self.dim, fwd, params, tape)


# ---------------------------------------------------------------------------
# reparameterized Gaussian (implicit-distribution stand-in)


@dataclass(frozen=True)
class ReparamGaussian:
    """Sampler x = mean + exp(log_scales) * eps with eps ~ N(0, I)."""

    mean: np.ndarray
    log_scales: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "log_scales", np.asarray(self.log_scales, dtype=np.float64))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, n: int, seed, return_eps: bool = False):
        rng = np.random.default_rng(seed)
        eps = rng.standard_normal((n, self.dim))
        x = self.mean + np.exp(self.log_scales) * eps
        return (x, eps) if return_eps else x

    def entropy(self) -> float:
        d = self.dim
        return float(np.sum(self.log_scales) + 0.5 * d * (1.0 + np.log(2 * np.pi)))

    def as_gaussian(self) -> GaussianModel:
        """The marginal N(mean, diag(exp(2 log_scales))) as a GaussianModel."""
        prec = np.diag(np.exp(-2.0 * self.log_scales))
        return GaussianModel.from_precision(self.mean, prec)

    def marginal_score(self, x) -> np.ndarray:
        x2 = _as_batch(x, self.dim)
        out = -(x2 - self.mean) * np.exp(-2.0 * self.log_scales)
        return out[0] if np.asarray(x).ndim == 1 else out

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {"mean": self.mean.copy(), "log_scales": self.log_scales.copy()}

    def with_param_arrays(self, arrays) -> "ReparamGaussian":
        return ReparamGaussian(arrays["mean"], arrays["log_scales"])


# ---------------------------------------------------------------------------
# module-level operations


def sample_data(generator, n: int, seed) -> np.ndarray:
    """Deterministic i.i.d. batch from a GaussianModel or ReparamGaussian."""
    if n < 1:
        raise ValueError("sample_data: n must be >= 1")
    return generator.sample(n, seed)


def log_unnormalized_density(model, x):
    return model.log_unnorm(x)


_MODEL_KINDS = {}


def _register(kind, cls):
    _MODEL_KINDS[kind] = cls


_register("gaussian", GaussianModel)
_register("kef", KefModel)
_register("mlp_energy", MlpEnergy)
_register("score_network", ScoreNetwork)
_register("reparam_gaussian", ReparamGaussian)


def model_to_json(model) -> str:
    """Serialize to {"model": kind, "params": {...}, "dim": D}."""
    kind = next(k for k, c in _MODEL_KINDS.items() if isinstance(model, c))
    if isinstance(model, (MlpEnergy, ScoreNetwork)):
        params = {k: v.tolist() for k, v in model.layers.items()}
    elif isinstance(model, GaussianModel):
        params = {"mean": model.mean.tolist(), "chol_raw": model.chol_raw.tolist()}
    elif isinstance(model, ReparamGaussian):
        params = {"mean": model.mean.tolist(), "log_scales": model.log_scales.tolist()}
    else:
        if model.feature_net is not None:
            raise ValueError("kef with a feature extractor is not serializable")
        params = {
            "inducing_points": model.inducing_points.tolist(),
            "alpha": model.alpha.tolist(),
            "bandwidths": model.bandwidths.tolist(),
            "weights": model.weights.tolist(),
            "base_scale": model.base_scale,
        }
    return json.dumps({"model": kind, "params": params, "dim": model.dim})


def model_from_json(text: str):
    doc = json.loads(text)
    kind = doc["model"]
    params = doc["params"]
    if kind == "gaussian":
        return GaussianModel(np.array(params["mean"]), np.array(params["chol_raw"]))
    if kind == "reparam_gaussian":
        return ReparamGaussian(np.array(params["mean"]), np.array(params["log_scales"]))
    if kind == "kef":
        return KefModel(
            np.array(params["inducing_points"]),
            np.array(params["alpha"]),
            np.array(params["bandwidths"]),
            np.array(params["weights"]),
            params["base_scale"],
        )
    if kind in ("mlp_energy", "score_network"):
        layers = {k: np.array(v) for k, v in params.items()}
        cls = MlpEnergy if kind == "mlp_energy" else ScoreNetwork
        return cls(doc["dim"], layers)
    raise ValueError(f"unknown model kind {kind!r}")
