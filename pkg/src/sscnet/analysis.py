"""Filter redundancy measures: Pearson correlation, layer correlation and
within-group dot products of decompressed filters."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .layout import LayerLayout


class UndefinedCorrelationError(ValueError):
    pass


def pearson(a, b) -> float:
    """Pearson correlation of two flat vectors; constant vectors raise."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ValueError(f"need equal-length vectors of length >= 2, got {a.size} and {b.size}")
    da = a - a.mean()
    db = b - b.mean()
    na = np.sqrt(np.dot(da, da))
    nb = np.sqrt(np.dot(db, db))
    if na == 0 or nb == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    return float(np.clip(np.dot(da, db) / (na * nb), -1.0, 1.0))


def correlation_matrix(filters) -> np.ndarray:
    """``|rho|`` for every ordered filter pair; rows of ``filters`` are filters."""
    F = np.asarray(filters, dtype=np.float64)
    F = F.reshape(F.shape[0], -1)
    if F.shape[1] < 2:
        raise ValueError("filters need at least 2 entries")
    D = F - F.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", D, D))
    if np.any(norms == 0):
        raise UndefinedCorrelationError(
            f"filter(s) {np.flatnonzero(norms == 0).tolist()} are constant")
    Z = D / norms[:, None]
    return np.clip(Z @ Z.T, -1.0, 1.0)


def layer_correlation(filters) -> float:
    """Mean of ``|rho(f_i, f_j)|`` over all ``N^2`` ordered pairs, diagonal included."""
    R = correlation_matrix(filters)
    return float(np.abs(R).mean())


@dataclass
class PairDot:
    i: int
    j: int
    dot: float
    disjoint: bool


@dataclass
class GroupOrthogonality:
    pairs: list[PairDot]

    @property
    def max_abs_dot(self) -> float:
        return max((abs(p.dot) for p in self.pairs), default=0.0)

    @property
    def disjoint_pairs(self) -> list[PairDot]:
        return [p for p in self.pairs if p.disjoint]

    @property
    def violations(self) -> list[PairDot]:
        """Disjoint-support pairs whose dot product is not exactly zero."""
        return [p for p in self.disjoint_pairs if p.dot != 0.0]


def group_orthogonality(layout: LayerLayout | None, dense_weights) -> GroupOrthogonality:
    """Exact dot products of decompressed filters for all same-group pairs.

    With ``layout=None`` (a dense layer) every pair of filters forms one
    group and none counts as structurally disjoint.
    """
    W = np.asarray(dense_weights)
    N = W.shape[0]
    F = W.reshape(N, -1)
    if layout is None:
        groups = [(0, N)]
        support = None
    else:
        groups = layout.groups
        support = layout.support.reshape(N, -1)
    pairs = []
    for a, b in groups:
        for i in range(a, b):
            for j in range(i + 1, b):
                disjoint = support is not None and not np.any(support[i] & support[j])
                pairs.append(PairDot(i, j, float(np.dot(F[i], F[j])), bool(disjoint)))
    return GroupOrthogonality(pairs)


@dataclass
class CorrelationReport:
    model_tag: str
    layers: list[str]
    c_values: list[float]
    group_max_dot: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.layers) != len(self.c_values):
            raise ValueError("one C value per layer required")
        if not self.group_max_dot:
            self.group_max_dot = [float("nan")] * len(self.layers)

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "C_l", "group_max_dot", "model_tag"])
        for name, c, d in zip(self.layers, self.c_values, self.group_max_dot):
            w.writerow([name, repr(c), repr(d), self.model_tag])
        return buf.getvalue()


def model_report(model, tag: str) -> CorrelationReport:
    """C^l and within-group max |f.f'| for every conv layer of a model."""
    names, cs, dots = [], [], []
    for layer in model.conv_layers():
        W = layer.dense_weight()
        layout = getattr(layer, "layout", None)
        names.append(layer.name)
        cs.append(layer_correlation(W))
        dots.append(group_orthogonality(layout, W).max_abs_dot)
    return CorrelationReport(tag, names, cs, dots)


@dataclass
class Comparison:
    csv: str
    lower_counts: dict[str, int]
    layer_count: int
    reference_tag: str = ""

    def summary(self) -> str:
        return "; ".join(f"{self.reference_tag} lower than {k} in {v} of {self.layer_count} layers"
                         for k, v in self.lower_counts.items())


def compare_models(reports: list[CorrelationReport]) -> Comparison:
    """Side-by-side C^l table; the first report is compared against each other one."""
    if not reports:
        raise ValueError("compare_models needs at least one report")
    ref = reports[0]
    for r in reports[1:]:
        if r.layers != ref.layers:
            raise ValueError(f"layer mismatch between {ref.model_tag} and {r.model_tag}: "
                             f"{ref.layer_count} vs {r.layer_count} layers")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["layer"] + [f"C_l[{r.model_tag}]" for r in reports]
    head += [f"diff[{ref.model_tag}-{r.model_tag}]" for r in reports[1:]]
    w.writerow(head)
    for k, name in enumerate(ref.layers):
        row = [name] + [repr(r.c_values[k]) for r in reports]
        row += [repr(ref.c_values[k] - r.c_values[k]) for r in reports[1:]]
        w.writerow(row)
    lower = {r.model_tag: sum(a < b for a, b in zip(ref.c_values, r.c_values))
             for r in reports[1:]}
    return Comparison(buf.getvalue(), lower, ref.layer_count, ref.model_tag)
