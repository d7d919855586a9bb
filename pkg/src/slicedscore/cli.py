"""Command-line harness: training, benchmarking, and validation runs.

Configuration comes from an optional TOML file with flag overrides (flags
win).  Every run writes ``manifest.json`` (resolved config, its hash, seed,
versions), ``results.csv`` and ``report.json`` into the output directory;
re-running a manifest's config reproduces all numbers bitwise except wall
clocks.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from . import harness, validation
from .models import GaussianModel, MlpEnergy, ReparamGaussian, model_to_json
from .score_estimation import ScoreEstimatorConfig, entropy_gradient, fit_score_network, score_error
from .training import ProjectionConfig, TrainConfig, train

__all__ = ["main", "ConfigError"]


class ConfigError(ValueError):
    """Invalid run configuration; carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


# ---------------------------------------------------------------------------
# config plumbing


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError("config", f"file not found: {path}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"invalid TOML: {exc}") from exc


def _merge_flags(cfg: dict, args: argparse.Namespace, keys) -> dict:
    out = dict(cfg)
    for key in keys:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            out[key] = val
    return out


def _int_list(text: str, field: str) -> list[int]:
    try:
        return [int(tok) for tok in str(text).split(",") if tok != ""]
    except ValueError as exc:
        raise ConfigError(field, f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text, field: str) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(t) for t in text]
    try:
        return [float(tok) for tok in str(text).split(",") if tok != ""]
    except ValueError as exc:
        raise ConfigError(field, f"expected comma-separated numbers, got {text!r}") from exc


def _write_manifest(out: Path, command: str, cfg: dict) -> None:
    blob = json.dumps(cfg, sort_keys=True)
    manifest = {
        "command": command,
        "config": cfg,
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "seed": cfg.get("seed", 0),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "slicedscore": __version__,
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _write_csv(out: Path, header, rows) -> None:
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_report(out: Path, doc: dict) -> None:
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _out_dir(args) -> Path:
    out = Path(args.out if args.out else ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_generator(cfg: dict, field: str):
    kind = cfg.get("kind", "gaussian")
    dim = int(cfg.get("dim", 1))
    if kind == "gaussian":
        mean = np.asarray(cfg.get("mean", np.zeros(dim)), dtype=np.float64)
        prec = np.asarray(cfg.get("precision", np.eye(dim)), dtype=np.float64)
        if prec.shape != (dim, dim):
            raise ConfigError(f"{field}.precision", f"expected {dim}x{dim} matrix")
        return GaussianModel.from_precision(mean, prec)
    if kind == "reparam_gaussian":
        mean = np.asarray(cfg.get("mean", np.zeros(dim)), dtype=np.float64)
        log_scales = np.asarray(cfg.get("log_scales", np.zeros(dim)), dtype=np.float64)
        return ReparamGaussian(mean, log_scales)
    raise ConfigError(f"{field}.kind", f"unknown generator kind {kind!r}")


def _build_model(cfg: dict, dim: int):
    kind = cfg.get("kind", "gaussian")
    if kind == "gaussian":
        return GaussianModel.standard(int(cfg.get("dim", dim)))
    if kind == "mlp_energy":
        hidden = tuple(int(h) for h in cfg.get("hidden", (32, 32)))
        return MlpEnergy.init(int(cfg.get("dim", dim)), hidden=hidden, seed=int(cfg.get("init_seed", 0)))
    raise ConfigError("model.kind", f"unknown model kind {kind!r}")


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    proj = ProjectionConfig(
        kind=cfg.get("sampler", "rademacher"),
        m=int(cfg.get("projections", 1)),
        scale_to_identity=bool(cfg.get("scale_to_identity", False)),
    )
    try:
        return TrainConfig(
            objective=cfg.get("objective", "ssm_vr"),
            optimizer=cfg.get("optimizer", "adam"),
            learning_rate=float(cfg.get("learning_rate", 1e-3)),
            batch_size=int(cfg.get("batch_size", 128)),
            steps=int(cfg.get("steps", 1000)),
            seed=seed,
            projection=proj,
            dsm_sigma=cfg.get("dsm_sigma"),
            validation_fraction=float(cfg.get("validation_fraction", 0.1)),
            patience=cfg.get("patience", 200),
            eval_every=int(cfg.get("eval_every", 10)),
        )
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from exc


# ---------------------------------------------------------------------------
# commands


def _cmd_train(args) -> int:
    cfg = _merge_flags(_load_config(args.config), args, ["seed"])
    cfg.setdefault("seed", 0)
    # flat flags override the [train] table
    for key, flag in (("sampler", args.sampler), ("projections", args.projections)):
        if flag is not None:
            cfg.setdefault("train", {})[key] = flag
    out = _out_dir(args)
    data_cfg = cfg.get("data", {"kind": "gaussian", "dim": 1, "n": 10000})
    generator = _build_generator(data_cfg, "data")
    data = generator.sample(int(data_cfg.get("n", 10000)), seed=[int(cfg["seed"]), 1000])
    model = _build_model(cfg.get("model", {}), generator.dim)
    tcfg = _train_config(cfg.get("train", {}), int(cfg["seed"]))
    report = train(model, data, tcfg)
    _write_manifest(out, "train", cfg)
    _write_csv(out, ["step", "train", "val"],
               [[s, repr(t), "" if v is None else repr(v)] for s, t, v in report.curve])
    _write_report(out, json.loads(report.to_json()))
    (out / "model.json").write_text(model_to_json(report.final_model))
    return 0


def _cmd_bench(args) -> int:
    cfg = _merge_flags(
        _load_config(args.config), args, ["seed", "dims", "objectives", "projections", "sampler"]
    )
    cfg.setdefault("seed", 0)
    dims = _int_list(cfg.get("dims", "50,100,200,400"), "dims")
    objectives = [t for t in str(cfg.get("objectives", "sm,ssm")).split(",") if t]
    m = int(cfg.get("projections", 1))
    reps = int(cfg.get("reps", 5))
    sampler_kind = cfg.get("sampler", "rademacher")
    out = _out_dir(args)
    records = harness.run_bench_scaling(
        dims, objectives, m=m, reps=reps, seed=int(cfg["seed"]), sampler_kind=sampler_kind
    )
    _write_manifest(out, "bench-scaling", cfg)
    _write_csv(out, ["dimension", "objective", "wall_clock_seconds", "backward_passes"],
               [r.as_row() for r in records])
    by_obj = {}
    for r in records:
        by_obj.setdefault(r.objective, {})[r.dimension] = r.wall_clock_seconds
    ratios = {
        kind: times[max(times)] / times[min(times)]
        for kind, times in by_obj.items()
        if len(times) >= 2
    }
    _write_report(out, {
        "records": harness.bench_records_to_dicts(records),
        "time_ratio_largest_over_smallest": ratios,
    })
    return 0


_VALIDATE_CHECKS = ("integration-by-parts", "nce-taylor", "consistency", "asymptotics-1d", "variance-ordering")


def _run_check(name: str, cfg: dict, seed: int) -> dict:
    if name == "integration-by-parts":
        rep = validation.check_integration_by_parts()
        return {
            "check": name,
            "passed": rep.max_deviation <= 1e-6,
            "metric": rep.max_deviation,
            "threshold": 1e-6,
            "details": json.loads(rep.to_json()),
        }
    if name == "nce-taylor":
        rep = validation.check_nce_taylor()
        ratios = rep.residual_over_v2
        ok = all(a > b for a, b in zip(ratios, ratios[1:])) and rep.limit_gap <= 1e-4
        return {
            "check": name,
            "passed": bool(ok),
            "metric": rep.limit_gap,
            "threshold": 1e-4,
            "details": json.loads(rep.to_json()),
        }
    if name == "consistency":
        sub = cfg.get("consistency", {})
        ns = [int(n) for n in sub.get("ns", (100, 1000, 10000))]
        reps = int(sub.get("reps", 20))
        fam = validation.GaussianPrecisionFamily1D()
        gen = GaussianModel.standard(1)
        sweep = validation.run_consistency_sweep(
            gen, fam, validation.EstimatorConfig("ssm_vr", "rademacher", 1), ns, reps, seed
        )
        ok = -0.65 <= sweep.slope <= -0.35 and sweep.medians[-1] <= 0.05
        return {
            "check": name,
            "passed": bool(ok),
            "metric": sweep.slope,
            "threshold": [-0.65, -0.35],
            "details": json.loads(sweep.to_json()),
        }
    if name == "asymptotics-1d":
        sub = cfg.get("asymptotics", {})
        reps = int(sub.get("reps", 300))
        n = int(sub.get("n", 10000))
        fam = validation.GaussianPrecisionFamily1D()
        gen = GaussianModel.standard(1)
        rep = validation.estimate_asymptotic_covariance(
            gen, fam, validation.EstimatorConfig("ssm", "rademacher", 1), n, reps, seed
        )
        ok = rep.valid and rep.relative_deviation is not None and rep.relative_deviation <= 0.15
        return {
            "check": name,
            "passed": bool(ok),
            "metric": rep.relative_deviation,
            "threshold": 0.15,
            "details": json.loads(rep.to_json()),
        }
    if name == "variance-ordering":
        rng = np.random.default_rng([seed, 77])
        model = GaussianModel.standard(2)
        batch = 2.5 * rng.standard_normal((10, 2))
        table = validation.compare_estimator_variances(batch, model, draws=int(cfg.get("draws", 10000)), seed=seed)
        return {
            "check": name,
            "passed": bool(table.orderings_hold),
            "metric": table.orderings_hold,
            "threshold": True,
            "details": json.loads(table.to_json()),
        }
    raise ConfigError("check", f"unknown check {name!r}; available: {', '.join(_VALIDATE_CHECKS)} or 'all'")


def _cmd_validate(args) -> int:
    cfg = _merge_flags(_load_config(args.config), args, ["seed", "check"])
    cfg.setdefault("seed", 0)
    cfg.setdefault("check", "all")
    names = list(_VALIDATE_CHECKS) if cfg["check"] == "all" else [cfg["check"]]
    for name in names:
        if name not in _VALIDATE_CHECKS:
            raise ConfigError("check", f"unknown check {name!r}; available: {', '.join(_VALIDATE_CHECKS)} or 'all'")
    out = _out_dir(args)
    results = [_run_check(name, cfg, int(cfg["seed"])) for name in names]
    _write_manifest(out, "validate", cfg)
    _write_csv(out, ["check", "passed", "metric", "threshold"],
               [[r["check"], int(r["passed"]), repr(r["metric"]), repr(r["threshold"])] for r in results])
    _write_report(out, {"checks": results, "all_passed": all(r["passed"] for r in results)})
    return 0 if all(r["passed"] for r in results) else 1


def _cmd_estimate_score(args) -> int:
    cfg = _merge_flags(_load_config(args.config), args, ["seed"])
    cfg.setdefault("seed", 0)
    seed = int(cfg["seed"])
    out = _out_dir(args)
    data_cfg = cfg.get("data", {"kind": "gaussian", "dim": 2, "n": 20000})
    generator = _build_generator(data_cfg, "data")
    n = int(data_cfg.get("n", 20000))
    samples = generator.sample(n, seed=[seed, 1000])
    est_cfg = cfg.get("estimator", {})
    sec = ScoreEstimatorConfig(
        hidden=tuple(int(h) for h in est_cfg.get("hidden", (64, 64, 64))),
        steps=int(est_cfg.get("steps", 10000)),
        batch_size=int(est_cfg.get("batch_size", 128)),
        learning_rate=float(est_cfg.get("learning_rate", 1e-3)),
        seed=seed,
    )
    network = fit_score_network(samples, sec)
    test = generator.sample(int(data_cfg.get("n_test", 5000)), seed=[seed, 2000])
    if isinstance(generator, ReparamGaussian):
        oracle = generator.marginal_score
    else:
        oracle = generator.score
    mse = score_error(network.score_field(), oracle, test)
    doc = {"held_out_score_mse": mse, "steps": sec.steps, "seed": seed}
    rows = [["held_out_score_mse", repr(mse)]]
    if isinstance(generator, ReparamGaussian):
        grad = entropy_gradient(generator, network.score_field(), n=int(cfg.get("entropy_samples", 4000)), seed=seed + 1)
        doc["entropy_gradient"] = {k: v.tolist() for k, v in grad.gradient.items()}
        doc["entropy_gradient_se"] = {k: v.tolist() for k, v in grad.standard_error.items()}
        doc["entropy_gradient_analytic"] = {
            "mean": [0.0] * generator.dim,
            "log_scales": [1.0] * generator.dim,
        }
        rows += [[f"entropy_grad_log_scales_{i}", repr(v)] for i, v in enumerate(grad.gradient["log_scales"])]
    _write_manifest(out, "estimate-score", cfg)
    _write_csv(out, ["metric", "value"], rows)
    _write_report(out, doc)
    (out / "model.json").write_text(model_to_json(network))
    return 0


def _cmd_dsm_grid(args) -> int:
    cfg = _merge_flags(_load_config(args.config), args, ["seed", "sigma_grid", "workers"])
    cfg.setdefault("seed", 0)
    seed = int(cfg["seed"])
    sigmas = _float_list(cfg.get("sigma_grid", "0.1,0.5,1.0"), "sigma_grid")
    out = _out_dir(args)
    data_cfg = cfg.get("data", {"kind": "gaussian", "dim": 1, "n": 20000})
    generator = _build_generator(data_cfg, "data")
    data = generator.sample(int(data_cfg.get("n", 20000)), seed=[seed, 1000])
    model = _build_model(cfg.get("model", {}), generator.dim)
    grid_cfg = cfg.get("grid", {})
    rows = harness.run_dsm_grid(
        sigmas,
        data,
        model,
        steps=int(grid_cfg.get("steps", 4000)),
        batch_size=int(grid_cfg.get("batch_size", 128)),
        learning_rate=float(grid_cfg.get("learning_rate", 1e-3)),
        seed=seed,
        workers=int(cfg.get("workers", 1)),
    )
    _write_manifest(out, "dsm-grid", cfg)
    _write_csv(out, ["sigma", "val_loss", "fitted_precision", "is_argmin", "failed"],
               [r.as_row() for r in rows])
    argmin = next((r.sigma for r in rows if r.is_argmin), None)
    _write_report(out, {
        "rows": [r.__dict__ for r in rows],
        "argmin_sigma": argmin,
        "seed": seed,
    })
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicedscore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file; flags override its fields")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="output directory (default: cwd)")

    p_train = sub.add_parser("train", help="fit a model to generated data")
    common(p_train)
    p_train.add_argument("--sampler", choices=("gaussian", "rademacher", "sphere"), default=None)
    p_train.add_argument("--projections", type=int, default=None, help="projection count M")

    p_bench = sub.add_parser("bench-scaling", help="objective wall clock across dimensions")
    common(p_bench)
    p_bench.add_argument("--dims", help="comma-separated dimensions, e.g. 50,100,200,400")
    p_bench.add_argument("--objectives", help="comma-separated: sm,ssm,ssm_vr,dsm")
    p_bench.add_argument("--projections", type=int, default=None, help="projection count M")
    p_bench.add_argument("--sampler", choices=("gaussian", "rademacher", "sphere"), default=None)

    p_val = sub.add_parser("validate", help="run statistical validation checks")
    common(p_val)
    p_val.add_argument("--check", help=f"one of {', '.join(_VALIDATE_CHECKS)} or 'all'")

    p_est = sub.add_parser("estimate-score", help="fit a score network to samples")
    common(p_est)

    p_dsm = sub.add_parser("dsm-grid", help="grid-search the denoising corruption scale")
    common(p_dsm)
    p_dsm.add_argument("--sigma-grid", help="comma-separated sigmas, e.g. 0.1,0.5,1.0")
    p_dsm.add_argument("--workers", type=int, default=None)

    return parser


_HANDLERS = {
    "train": _cmd_train,
    "bench-scaling": _cmd_bench,
    "validate": _cmd_validate,
    "estimate-score": _cmd_estimate_score,
    "dsm-grid": _cmd_dsm_grid,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(json.dumps({"error": str(exc), "field": exc.field}), file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: machine-readable, exit 1
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
