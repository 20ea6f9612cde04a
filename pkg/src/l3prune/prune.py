"""Suffix layer pruning: keep the first n* blocks and rewrite the config.

n* = floor(n * (1 - p)) for a pruning fraction p, or an explicit layer
count. Kept weights are copied verbatim, the final norm is retained, and
the source model is never modified; there is no separate healing phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import L3PruneError
from .model import Transformer, count_params
from .numeric import Tensor

# Absorbs float crumbs in n * (1 - p) so the mathematical floor is returned
# (e.g. 10 * (1 - 0.8) evaluates to 1.9999999999999998).
_FLOOR_GUARD = 1e-9

CSV_HEADER = "p,layers_before,layers_after,params_before,params_after,percent_kept"


class PruneError(L3PruneError):
    """The requested prune target is out of range."""


@dataclass(frozen=True)
class PruneSpec:
    """Prune target: a fraction p in [0, 1) or an explicit layer count."""

    percent: float | None = None
    layers: int | None = None
    provenance: str = ""

    def __post_init__(self):
        if (self.percent is None) == (self.layers is None):
            raise PruneError("specify exactly one of percent or layers")
        if self.percent is not None and not 0.0 <= self.percent < 1.0:
            raise PruneError(f"pruning fraction must be in [0, 1), got {self.percent}")
        if self.layers is not None and self.layers < 1:
            raise PruneError(f"layer count must be >= 1, got {self.layers}")

    @classmethod
    def by_percent(cls, p: float, provenance: str = "") -> "PruneSpec":
        return cls(percent=p, provenance=provenance)

    @classmethod
    def by_layers(cls, k: int, provenance: str = "") -> "PruneSpec":
        return cls(layers=k, provenance=provenance)


@dataclass(frozen=True)
class PruneReport:
    provenance: str
    percent: float
    layers_before: int
    layers_after: int
    params_before: int
    params_after: int

    @property
    def percent_params_kept(self) -> float:
        return self.params_after / self.params_before

    def csv_row(self) -> str:
        return (
            f"{self.percent:.6g},{self.layers_before},{self.layers_after},"
            f"{self.params_before},{self.params_after},{self.percent_params_kept:.6f}"
        )


def target_layers(n_layers: int, spec: PruneSpec) -> int:
    """Resolve a spec to n*; raises when n* would leave no layers."""
    if spec.layers is not None:
        if spec.layers > n_layers:
            raise PruneError(f"cannot keep {spec.layers} of {n_layers} layers")
        return spec.layers
    kept = math.floor(n_layers * (1.0 - spec.percent) + _FLOOR_GUARD)
    if kept < 1:
        raise PruneError(
            f"pruning {spec.percent:.0%} of {n_layers} layers leaves none"
        )
    return kept


def prune_layers(model: Transformer, spec: PruneSpec) -> tuple[Transformer, PruneReport]:
    """Return a pruned copy of ``model`` plus a size report."""
    n = model.config.n_layers
    kept = target_layers(n, spec)
    pruned = Transformer(
        token_embedding=_copy(model.token_embedding),
        layers=[block.copy() for block in model.layers[:kept]],
        final_norm=_copy(model.final_norm),
        config=model.config.with_layers(kept),
    )
    report = PruneReport(
        provenance=spec.provenance,
        percent=spec.percent if spec.percent is not None else 1.0 - kept / n,
        layers_before=n,
        layers_after=kept,
        params_before=count_params(model),
        params_after=count_params(pruned),
    )
    pruned.prune_report = report
    return pruned, report


def sweep(model: Transformer, percents: list[float]) -> list[PruneReport]:
    """One report per pruning fraction, sorted by p."""
    reports = []
    for p in sorted(percents):
        _, report = prune_layers(model, PruneSpec.by_percent(p, provenance="sweep"))
        reports.append(report)
    return reports


def reports_to_csv(reports: list[PruneReport]) -> str:
    return "\n".join([CSV_HEADER] + [r.csv_row() for r in reports]) + "\n"


def _copy(t: Tensor) -> Tensor:
    return Tensor(t.data.copy())
