"""Kernel-grid experiments: one row per training mode, one column group per kernel."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .train import prepare, train

log = logging.getLogger(__name__)

ROW_LABELS = {"encrypted": "encrypted", "plaintext": "w/o encryption", "source_only": "source only"}
CSV_COLUMNS = ("kernel", "mode", "fscore", "auc", "precision", "seed", "wall_ms", "error")


def parse_grid(text: str) -> list[dict]:
    """``"linear;polynomial:2;gaussian:1"`` -> kernel override dicts."""
    grid = []
    for item in filter(None, (t.strip() for t in text.split(";"))):
        name, _, arg = item.partition(":")
        name = {"poly": "polynomial", "rbf": "gaussian"}.get(name, name)
        if name == "linear":
            grid.append({"kernel": "linear"})
        elif name == "polynomial":
            grid.append({"kernel": "polynomial", "poly_degree": int(arg or 2), "c": 0.0})
        elif name == "gaussian":
            grid.append({"kernel": "gaussian", "sigma": float(arg or 1.0)})
        else:
            raise ConfigError(f"unknown kernel in grid: {item!r}")
    return grid


def kernel_label(cell: dict) -> str:
    if cell["kernel"] == "polynomial":
        return f"poly(d={cell.get('poly_degree', 2)})"
    if cell["kernel"] == "gaussian":
        return f"gaussian(sigma={cell.get('sigma', 1.0):g})"
    return "linear"


@dataclass
class Report:
    base: dict
    kernels: list[str]
    modes: list[str]
    seeds: list[int]
    cells: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        out = {}
        for k in self.kernels:
            for m in self.modes:
                rows = [c for c in self.cells if c["kernel"] == k and c["mode"] == m and not c["error"]]
                entry = {"n": len(rows)}
                for metric in ("fscore", "auc", "precision"):
                    vals = np.array([r[metric] for r in rows], dtype=float)
                    entry[metric] = (float(vals.mean()), float(vals.std())) if vals.size else (float("nan"),) * 2
                out[(k, m)] = entry
        return out

    def to_text(self) -> str:
        summ = self.summary()
        head = f"{'':16s}" + "".join(f"| {k:^44s}" for k in self.kernels)
        sub = f"{'':16s}" + "| fscore          auc             precision     " * len(self.kernels)
        lines = [head, sub, "-" * len(sub)]
        for m in self.modes:
            row = f"{ROW_LABELS[m]:16s}"
            for k in self.kernels:
                e = summ[(k, m)]
                row += "| " + " ".join(f"{e[x][0]:.3f}+-{e[x][1]:.3f}  " for x in ("fscore", "auc", "precision"))
            lines.append(row)
        failures = [c for c in self.cells if c["error"]]
        if failures:
            lines.append(f"{len(failures)} cell(s) failed: " + "; ".join(
                f"{c['kernel']}/{c['mode']}/seed{c['seed']}: {c['error']}" for c in failures))
        return "\n".join(lines)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "table.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
            w.writeheader()
            w.writerows(self.cells)
        summ = {f"{k}|{m}": v for (k, m), v in self.summary().items()}
        manifest = {"config": self.base, "kernels": self.kernels, "modes": self.modes, "seeds": self.seeds,
                    "summary": summ}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
        (out / "table.txt").write_text(self.to_text() + "\n")


def run_table_experiment(base: RunConfig, grid: list[dict],
                         modes=("encrypted", "plaintext", "source_only"), n_seeds: int = 3) -> Report:
    """Every (kernel, mode) cell over ``n_seeds`` seeds; failures are recorded, not raised."""
    if not grid:
        raise ConfigError("empty kernel grid")
    if n_seeds < 1:
        raise ConfigError("need at least one seed")
    seeds = list(range(n_seeds))
    report = Report(base.to_dict(), [kernel_label(c) for c in grid], list(modes), seeds)
    for s in seeds:
        seeded = dataclasses.replace(base, seed_data=base.seed_data + s, seed_model=base.seed_model + s,
                                     seed_crypto=base.seed_crypto + s, notes=[])
        prep = prepare(seeded)
        so_cache = None
        for cell, label in zip(grid, report.kernels):
            for mode in modes:
                row = {"kernel": label, "mode": mode, "seed": s, "error": ""}
                t0 = time.perf_counter()
                try:
                    if mode == "source_only" and so_cache is not None:
                        m = so_cache
                    else:
                        cfg = dataclasses.replace(seeded, mode=mode, notes=[], **cell)
                        if mode == "plaintext" and cfg.kernel == "gaussian" and cfg.kernel_mode == "auto":
                            # same kernel form as the encrypted row so the gap isolates encryption
                            cfg.kernel_mode = "taylor2" if "encrypted" in modes else "exact"
                        _, m = train(cfg, prep)
                        if mode == "source_only":
                            so_cache = m
                    row.update(fscore=m.fscore, auc=m.auc, precision=m.precision)
                except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the table
                    log.exception("cell %s/%s seed %d failed", label, mode, s)
                    row.update(fscore=float("nan"), auc=float("nan"), precision=float("nan"),
                               error=f"{type(exc).__name__}: {exc}")
                row["wall_ms"] = round(1000 * (time.perf_counter() - t0), 1)
                report.cells.append(row)
    return report
