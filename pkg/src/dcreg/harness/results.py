"""CSV rows for evaluated runs: results.csv (one row per run) and bins.csv (one row per bin)."""

from __future__ import annotations

import csv
import fcntl
import os

RESULT_FIELDS = ["run_id", "seed", "loss", "gc", "scheme", "N", "sigma_choice", "dot_bias", "mae", "rmse"]
BIN_FIELDS = ["run_id", "bin", "mean_abs_err", "n"]


def bins_path_for(results_path: str) -> str:
    head, name = os.path.split(results_path)
    if name == "results.csv":
        return os.path.join(head, "bins.csv")
    stem, ext = os.path.splitext(name)
    return os.path.join(head, f"{stem}_bins{ext or '.csv'}")


def result_row(run_id: str, cfg: dict, summary: dict) -> dict:
    uses_partition = cfg["loss"]["main"] != "reg"
    return {
        "run_id": run_id,
        "seed": cfg["training"]["seed"],
        "loss": cfg["loss"]["main"],
        "gc": cfg["loss"]["gc"],
        "scheme": cfg["partition"]["scheme"] if uses_partition else "",
        "N": cfg["partition"]["n_intervals"] if uses_partition else "",
        "sigma_choice": cfg["data"]["sigma"],
        "dot_bias": cfg["data"]["dot_bias"],
        "mae": repr(float(summary["mae"])),
        "rmse": repr(float(summary["rmse"])),
    }


def bin_rows(run_id: str, summary: dict) -> list[dict]:
    return [{"run_id": run_id, "bin": label, "mean_abs_err": "" if err is None else repr(float(err)), "n": n}
            for label, err, n in summary["per_bin"]]


def _count_rows(f) -> int:
    f.seek(0)
    return max(sum(1 for _ in csv.reader(f)) - 1, 0)


def append_run(results_path: str, run_prefix: str, cfg: dict, summary: dict) -> str:
    """Append one evaluation under an exclusive lock; returns the new run id.

    The id is the config digest prefix plus the row number, so repeated
    evaluations of the same checkpoint stay distinct.
    """
    parent = os.path.dirname(results_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(results_path, "a+", newline="") as f:
        fcntl.flock(f, fcntl.LOCK_EX)
        try:
            n = _count_rows(f)
            run_id = f"{run_prefix}-{n + 1:04d}"
            f.seek(0, os.SEEK_END)
            w = csv.DictWriter(f, RESULT_FIELDS)
            if n == 0 and f.tell() == 0:
                w.writeheader()
            w.writerow(result_row(run_id, cfg, summary))
            _append_bins(bins_path_for(results_path), run_id, summary)
        finally:
            fcntl.flock(f, fcntl.LOCK_UN)
    return run_id


def _append_bins(path: str, run_id: str, summary: dict) -> None:
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as f:
        w = csv.DictWriter(f, BIN_FIELDS)
        if fresh:
            w.writeheader()
        w.writerows(bin_rows(run_id, summary))


def write_tables(results_path: str, runs: list[tuple[str, dict, dict]]) -> None:
    """Rewrite both tables from (run_id, config, summary) triples."""
    with open(results_path, "w", newline="") as f:
        w = csv.DictWriter(f, RESULT_FIELDS)
        w.writeheader()
        for run_id, cfg, summary in runs:
            w.writerow(result_row(run_id, cfg, summary))
    with open(bins_path_for(results_path), "w", newline="") as f:
        w = csv.DictWriter(f, BIN_FIELDS)
        w.writeheader()
        for run_id, _, summary in runs:
            w.writerows(bin_rows(run_id, summary))


def read_rows(path: str) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
