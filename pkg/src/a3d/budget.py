"""Configuration-budget table: the deployable summary of a trade-off table.

Construction keeps the Pareto-optimal set under (minimize gflops, maximize
top1): a configuration survives only if nothing cheaper-or-equal scores at
least as well. Ties on cost prefer higher top1, then fewer parameters. The
resulting entries are strictly monotone (less compute, strictly less
accuracy), so budget lookup is a scan.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .configspace import Configuration
from .errors import ConfigError, InfeasibleBudgetError


@dataclass(frozen=True)
class BudgetEntry:
    config: Configuration
    frames: int
    pixels: int
    gflops: float
    params: int
    top1: float


@dataclass(frozen=True)
class BudgetTable:
    """Entries sorted by gflops descending; top1 descends with them."""

    arch: str
    views: tuple[int, int]
    entries: tuple[BudgetEntry, ...]

    def to_json(self) -> str:
        return json.dumps({
            "arch": self.arch,
            "views": list(self.views),
            "entries": [{
                "gamma_w": e.config.gamma_w, "gamma_s": e.config.gamma_s,
                "gamma_t": e.config.gamma_t, "frames": e.frames, "pixels": e.pixels,
                "gflops": e.gflops, "params": e.params, "top1": e.top1,
            } for e in self.entries],
        }, indent=2)

    @staticmethod
    def from_json(text: str) -> "BudgetTable":
        raw = json.loads(text)
        try:
            entries = tuple(
                BudgetEntry(config=Configuration(r["gamma_w"], r["gamma_s"], r["gamma_t"]),
                            frames=r["frames"], pixels=r["pixels"], gflops=r["gflops"],
                            params=r["params"], top1=r["top1"])
                for r in raw["entries"]
            )
            return BudgetTable(arch=raw["arch"], views=tuple(raw["views"]), entries=entries)
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed budget table: {e}") from e

    @staticmethod
    def load(path) -> "BudgetTable":
        with open(path) as f:
            return BudgetTable.from_json(f.read())

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())


def build_budget_table(rows, arch: str = "", views: tuple[int, int] = (1, 1)) -> BudgetTable:
    """Pareto-prune trade-off rows (dicts with gamma_*, gflops, params, top1)."""
    if not rows:
        raise ConfigError("cannot build a budget table from zero rows")
    ordered = sorted(rows, key=lambda r: (r["gflops"], -r["top1"], r["params"]))
    kept = []
    best = float("-inf")
    for r in ordered:
        if r["top1"] > best:
            kept.append(r)
            best = r["top1"]
    entries = tuple(
        BudgetEntry(config=Configuration(r["gamma_w"], r["gamma_s"], r["gamma_t"]),
                    frames=r.get("frames", 0), pixels=r.get("pixels", 0),
                    gflops=r["gflops"], params=r["params"], top1=r["top1"])
        for r in reversed(kept)
    )
    return BudgetTable(arch=arch, views=views, entries=entries)


def select_config(table: BudgetTable, budget_gflops: float) -> BudgetEntry:
    """Best entry whose per-view cost fits the budget."""
    feasible = [e for e in table.entries if e.gflops <= budget_gflops]
    if not feasible:
        raise InfeasibleBudgetError(
            f"budget {budget_gflops} GFLOPs is below the cheapest entry "
            f"({table.entries[-1].gflops:.3f})"
        )
    return max(feasible, key=lambda e: (e.top1, -e.gflops))


def assert_monotone(table: BudgetTable):
    """Pareto construction guarantee: cost and accuracy descend together."""
    for a, b in zip(table.entries, table.entries[1:]):
        if not (a.gflops >= b.gflops and a.top1 > b.top1):
            raise ConfigError(
                f"budget table not monotone at {a.config.key()} -> {b.config.key()}"
            )
