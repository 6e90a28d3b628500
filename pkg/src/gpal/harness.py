"""Replayable comparison runs: configuration, seed derivation, outputs and manifest.

A run is fully determined by its :class:`RunConfig`.  Every random stream
(oracle, pools, observations, random selection) gets its own child seed
derived from the master seed and a role tag, so adding or removing a
strategy never changes the numbers produced for the others.

Output directory layout::

    manifest.json          effective config, config hash, seeds, versions, per-strategy status
    oracle.json            the synthetic truth surface
    curves/<strategy>.csv  learning curve
    models/<strategy>.json final fitted model (with its dataset)
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import platform
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import gp
from .active import ALL_STRATEGIES, LoopConfig, LoopResult, Pools, Strategy, run_loop
from .core import ModelSpec, Variant, as_bounds
from .design import LhdConfig, maximin_lhd
from .errors import ConfigError
from .evaluation import EvalPool
from .oracle import OracleConfig, OracleSpec, build_oracle, oracle_truth

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = 1


def derive_seed(master: int, role: str) -> int:
    """Child seed from ``sha256("<master>/<role>")``, reduced to 62 bits."""
    digest = hashlib.sha256(f"{int(master)}/{role}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 2


@dataclass
class RunConfig:
    master_seed: int = 0
    variant: str = "kriging"
    oracle: dict = field(default_factory=dict)  # OracleConfig fields
    oracle_path: str | None = None  # a saved OracleSpec JSON, overrides ``oracle``
    bounds: tuple = (-450.0, 450.0)
    n_initial: int = 11
    n_pool: int = 200
    n_eval: int = 200
    n_iter: int = 30
    threshold: float | None = 0.007
    patience: int = 3
    weights: list | None = None
    strategies: list = field(default_factory=lambda: [s.value for s in ALL_STRATEGIES])
    output_dir: str = "gpal-run"
    fit_restarts: int = 8
    cv_restarts: int = 1
    cv_refit: bool = True
    lhd_sweeps: int = 2000
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("n_initial", "n_pool", "n_eval", "patience", "fit_restarts", "cv_restarts", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if int(self.n_iter) < 0:
            raise ConfigError("n_iter must be >= 0")
        try:
            Variant(self.variant)
        except ValueError:
            raise ConfigError(f"unknown variant {self.variant!r}") from None
        bad = [s for s in self.strategies if s not in {x.value for x in Strategy}]
        if bad or not self.strategies:
            raise ConfigError(f"unknown or empty strategy list: {bad or self.strategies}")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("duplicate strategy names")
        unknown = set(self.oracle) - {f.name for f in dataclasses.fields(OracleConfig)}
        if unknown:
            raise ConfigError(f"unknown oracle settings: {sorted(unknown)}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
                raise ConfigError("weights must be nonnegative with a positive sum")
            if abs(w.sum() - 1.0) > 1e-12:
                warnings.warn(f"weights sum to {w.sum():g}; normalizing", UserWarning, stacklevel=3)
                self.weights = (w / w.sum()).tolist()
        if self.threshold is not None and not np.isfinite(self.threshold):
            raise ConfigError("threshold must be finite; use null to disable threshold stopping")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["bounds"] = list(self.bounds)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "bounds" in doc:
            doc["bounds"] = tuple(doc["bounds"])
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def hash(self) -> str:
        """Hash of the replay-relevant settings (``output_dir`` and ``workers`` excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config; ``overrides`` (non-None values only) win over file values."""
    try:
        doc = json.loads(Path(path).read_text()) if path else {}
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(doc)


def seeds_for(cfg: RunConfig) -> dict:
    m = cfg.master_seed
    out = {role: derive_seed(m, role) for role in ("oracle", "initial", "pool", "eval", "initial_obs", "static")}
    for s in cfg.strategies:
        out[f"obs:{s}"] = derive_seed(m, f"obs:{s}")
        out[f"pick:{s}"] = derive_seed(m, f"pick:{s}")
    return out


def make_oracle(cfg: RunConfig, seeds: dict) -> OracleSpec:
    if cfg.oracle_path:
        try:
            return OracleSpec.from_dict(json.loads(Path(cfg.oracle_path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"cannot load oracle {cfg.oracle_path}: {exc}") from exc
    ocfg = OracleConfig.from_dict({"bounds": tuple(cfg.bounds), **cfg.oracle})
    return build_oracle(ocfg, seed=seeds["oracle"])


def make_pools(cfg: RunConfig, oracle: OracleSpec, seeds: dict) -> Pools:
    b = oracle.bounds

    def lhd(n, role):
        return maximin_lhd(LhdConfig(n, oracle.q, b, seed=seeds[role], sweeps=cfg.lhd_sweeps))

    ev = lhd(cfg.n_eval, "eval")
    if ev.shape[0] < 2:
        raise ConfigError("n_eval must be >= 2")
    return Pools(
        initial=lhd(cfg.n_initial, "initial"),
        candidates=lhd(cfg.n_pool, "pool"),
        evaluation=EvalPool(ev, oracle_truth(oracle, ev)),
    )


def model_spec(cfg: RunConfig, oracle: OracleSpec) -> ModelSpec:
    variant = Variant(cfg.variant)
    return ModelSpec(
        variant,
        oracle.q,
        oracle.p,
        sigma_F=oracle.sigma_F_star if variant is Variant.SURROGATE else None,
        weights=cfg.weights,
        bounds=oracle.bounds,
    )


def loop_config(cfg: RunConfig, spec: ModelSpec, seeds: dict, strategy: str) -> LoopConfig:
    return LoopConfig(
        spec=spec,
        n_iter=cfg.n_iter,
        threshold=-np.inf if cfg.threshold is None else cfg.threshold,
        patience=cfg.patience,
        fit=gp.FitConfig(restarts=cfg.fit_restarts),
        cv_fit=gp.FitConfig(restarts=cfg.cv_restarts, ftol=1e-6),
        cv_refit=cfg.cv_refit,
        initial_obs_seed=seeds["initial_obs"],
        obs_seed=seeds[f"obs:{strategy}"],
        strategy_seed=seeds[f"pick:{strategy}"],
        static_seed=seeds["static"],
        lhd_sweeps=cfg.lhd_sweeps,
    )


def _run_one(args) -> tuple[str, LoopResult]:
    cfg, spec, seeds, strategy, oracle, pools = args
    return strategy, run_loop(loop_config(cfg, spec, seeds, strategy), strategy, oracle, pools)


def versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"gpal": pkg, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def run_comparison(cfg: RunConfig, out_dir=None) -> dict:
    """Run every configured strategy and write curves, models, oracle and manifest.

    Component failures inside a strategy are recorded in the manifest (the
    partial curve is still written); the returned manifest's ``status`` is
    ``"partial"`` when any strategy failed.
    """
    out = Path(out_dir or cfg.output_dir)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(parents=True, exist_ok=True)
    seeds = seeds_for(cfg)
    oracle = make_oracle(cfg, seeds)
    pools = make_pools(cfg, oracle, seeds)
    spec = model_spec(cfg, oracle)
    (out / "oracle.json").write_text(json.dumps(oracle.to_dict()))

    jobs = [(cfg, spec, seeds, s, oracle, pools) for s in cfg.strategies]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = dict(ex.map(_run_one, jobs))
    else:
        results = dict(map(_run_one, jobs))

    per_strategy = {}
    for s in cfg.strategies:
        res = results[s]
        curve_path = Path("curves") / f"{s}.csv"
        res.curve.write_csv(out / curve_path)
        entry = {
            "curve": str(curve_path),
            "rows": len(res.curve.rows),
            "stop_reason": res.curve.stop_reason,
            "final_streak": res.curve.rows[-1].streak if res.curve.rows else 0,
            "error": res.curve.error,
            "clamp_events": sum(1 for e in res.events if e.get("event") == "clamp"),
            "model": None,
        }
        if res.model is not None:
            model_path = Path("models") / f"{s}.json"
            (out / model_path).write_text(json.dumps(res.model.to_dict()))
            entry["model"] = str(model_path)
        per_strategy[s] = entry

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seeds": seeds,
        "versions": versions(),
        "status": "partial" if any(e["error"] for e in per_strategy.values()) else "ok",
        "strategies": per_strategy,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def config_from_manifest(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    if doc.get("schema") != MANIFEST_SCHEMA or "config" not in doc:
        raise ConfigError(f"{path} is not a run manifest")
    cfg = RunConfig.from_dict(doc["config"])
    if cfg.hash() != doc.get("config_hash"):
        raise ConfigError("manifest config hash does not match its config")
    return cfg


def replay(manifest_path, out_dir=None) -> dict:
    """Rerun the comparison described by a manifest."""
    cfg = config_from_manifest(manifest_path)
    return run_comparison(cfg, out_dir or Path(manifest_path).parent)


__all__ = [
    "RunConfig",
    "config_from_manifest",
    "derive_seed",
    "load_config",
    "make_oracle",
    "make_pools",
    "model_spec",
    "replay",
    "run_comparison",
    "seeds_for",
]
