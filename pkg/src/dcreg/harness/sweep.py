"""Cross-product sweeps with a per-digest data cache and resume by digest."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os

from .config import ConfigError, ExperimentConfig
from .data import ensure
from .results import write_tables
from .train import RunResult, run

log = logging.getLogger(__name__)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def expand_grid(spec: dict) -> list[ExperimentConfig]:
    """Configs for every combination in ``spec["grid"]`` applied over ``spec["base"]``.

    Both parts use dotted keys (``"loss.main"``) or nested sections.
    """
    unknown = set(spec) - {"base", "grid"}
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    base = ExperimentConfig().with_overrides(_flatten(spec.get("base", {})))
    grid = _flatten(spec.get("grid", {}))
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid entry {key!r} must be a non-empty list")
    keys = list(grid)
    configs = [base.with_overrides(dict(zip(keys, combo)))
               for combo in itertools.product(*(grid[k] for k in keys))]
    digests = [c.digest() for c in configs]
    if len(set(digests)) != len(digests):
        raise ConfigError("grid produces duplicate configurations")
    return configs


def run_dir(out: str, cfg: ExperimentConfig) -> str:
    return os.path.join(out, "runs", cfg.digest()[:16])


def _finished(path: str) -> RunResult | None:
    try:
        with open(os.path.join(path, "run.json")) as f:
            result = RunResult.from_dict(json.load(f))
    except (OSError, ValueError, TypeError):
        return None
    return result if result.status == "ok" else None


def cmd_sweep(spec: dict, out: str) -> list[RunResult]:
    """Run every configuration not already completed, then rewrite the aggregate tables."""
    configs = expand_grid(spec)
    os.makedirs(out, exist_ok=True)
    results = []
    for i, cfg in enumerate(configs):
        rdir = run_dir(out, cfg)
        done = _finished(rdir)
        if done is not None:
            log.info("[%d/%d] %s already complete", i + 1, len(configs), cfg.digest()[:12])
            results.append(done)
            continue
        log.info("[%d/%d] %s running", i + 1, len(configs), cfg.digest()[:12])
        try:
            data_dir = ensure(cfg.data, os.path.join(out, "data", cfg.data_digest()[:16]))
            result = run(cfg, data_dir, rdir)
        except Exception as exc:  # a failed run must not stop the sweep
            log.exception("run %s failed", cfg.digest()[:12])
            result = RunResult(cfg.digest(), cfg.to_dict(), status="error", error=f"{type(exc).__name__}: {exc}")
            os.makedirs(rdir, exist_ok=True)
            with open(os.path.join(rdir, "run.json"), "w") as f:
                json.dump(result.to_dict(), f, indent=2)
        results.append(result)
    ok = [(r.digest[:12], r.config, r.summary) for r in results if r.status == "ok"]
    write_tables(os.path.join(out, "results.csv"), ok)
    with open(os.path.join(out, "failures.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run_id", "status", "error"])
        w.writerows([r.digest[:12], r.status, r.error] for r in results if r.status != "ok")
    return results
