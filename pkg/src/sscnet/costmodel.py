"""FLOP and parameter accounting for dense and SSC convolution layers.

One multiply-accumulate counts as one FLOP; bias and activation costs are
left out. Reductions are percentages relative to a dense layer with the same
``M``, ``N`` and ``K``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

from .layout import (KernelStyle, LayerLayout, LayerSpec, Parity, SlotKind,
                     build_layer_layout, valid_g_values, valid_p_values)


@dataclass(frozen=True)
class CostReport:
    flops_dense: int
    params_dense: int
    flops_kxk: int
    params_kxk: int
    flops_pw: int
    params_pw: int
    reduction_flops: float
    reduction_params: float
    spatial_out: int
    closed_form_rp: float | None = None

    @property
    def params(self) -> int:
        return self.params_kxk + self.params_pw

    @property
    def flops(self) -> int:
        return self.flops_kxk + self.flops_pw

    def as_row(self) -> dict:
        return asdict(self)


CSV_FIELDS = [f.name for f in fields(CostReport)]


def zero_count(K: int, parity: Parity | str, style: KernelStyle = KernelStyle.SPARSE) -> int:
    """Structural zeros in one K x K kernel (``c``)."""
    if KernelStyle(style) is KernelStyle.STANDARD:
        return 0
    half = math.ceil(K * K / 2)
    return half if Parity(parity) is Parity.ODD else K * K - half


def dense_cost(spec: LayerSpec, i_l: int) -> tuple[int, int]:
    """``(F_l, P_l)`` of the dense layer matching ``spec``."""
    if i_l < 1:
        raise ValueError(f"output size must be >= 1, got {i_l}")
    params = spec.N * spec.K ** 2 * spec.M
    return i_l ** 2 * params, params


def reduction_closed_form(K: int, g: int, p: int, c: float) -> float:
    """Percentage parameter (= FLOP) reduction from the per-kernel formula.

    ``c`` may be fractional (``K^2 / 2`` for a half-odd, half-even layer).
    ``1/g`` and ``1/p`` read as 0 when the hyperparameter is 0.
    """
    KK = K * K
    inv_g = 0.0 if g == 0 else 1.0 / g
    inv_p = 0.0 if p == 0 else 1.0 / p
    return (1.0 - (1.0 - c / KK) * inv_g - (1.0 - inv_g) * inv_p / KK) * 100.0


def ssc_cost(spec: LayerSpec, i_l: int, parity: Parity | str = Parity.ODD) -> CostReport:
    """Closed-form cost of a layer whose filters all have ``parity``."""
    F_l, P_l = dense_cost(spec, i_l)
    KK = spec.K ** 2
    c = zero_count(spec.K, parity, spec.kernel_style)
    P_sg = spec.N * (KK - c) * spec.kxk_per_filter if spec.g else 0
    P_sp = spec.N * spec.one_by_one_per_filter if spec.p else 0
    area = i_l ** 2
    rp = (1.0 - (P_sg + P_sp) / P_l) * 100.0
    rf = (1.0 - (area * (P_sg + P_sp)) / F_l) * 100.0
    return CostReport(F_l, P_l, area * P_sg, P_sg, area * P_sp, P_sp, rf, rp, i_l,
                      reduction_closed_form(spec.K, spec.g, spec.p, c))


def layer_cost(layout: LayerLayout, i_l: int) -> CostReport:
    """Exact cost from mask popcounts over every filter of ``layout``.

    ``closed_form_rp`` carries the per-filter closed form averaged over the
    layer's parity mix, which must agree with the popcount value.
    """
    spec = layout.spec
    F_l, P_l = dense_cost(spec, i_l)
    P_sg = sum(f.count(SlotKind.KXK) * f.kxk_mask.popcount for f in layout.filters)
    P_sp = sum(f.count(SlotKind.ONE_BY_ONE) for f in layout.filters)
    area = i_l ** 2
    rp = (1.0 - (P_sg + P_sp) / P_l) * 100.0
    rf = (1.0 - area * (P_sg + P_sp) / F_l) * 100.0
    cf = sum(reduction_closed_form(spec.K, spec.g, spec.p,
                                   zero_count(spec.K, f.parity, spec.kernel_style))
             for f in layout.filters) / spec.N
    return CostReport(F_l, P_l, area * P_sg, P_sg, area * P_sp, P_sp, rf, rp, i_l, cf)


def network_cost(layers: Iterable[tuple[LayerSpec | LayerLayout, int]]) -> CostReport:
    """Aggregate cost over several layers.

    The reductions are recomputed from the summed counts, so the overall
    pruning ratio is ``1 - sum(P_ssc) / sum(P_dense)``.
    """
    tot = dict(flops_dense=0, params_dense=0, flops_kxk=0, params_kxk=0,
               flops_pw=0, params_pw=0)
    n = 0
    for item, i_l in layers:
        layout = item if isinstance(item, LayerLayout) else build_layer_layout(item)
        r = layer_cost(layout, i_l)
        for k in tot:
            tot[k] += getattr(r, k)
        n += 1
    if n == 0:
        raise ValueError("network_cost needs at least one layer")
    rp = (1.0 - (tot["params_kxk"] + tot["params_pw"]) / tot["params_dense"]) * 100.0
    rf = (1.0 - (tot["flops_kxk"] + tot["flops_pw"]) / tot["flops_dense"]) * 100.0
    return CostReport(**tot, reduction_flops=rf, reduction_params=rp, spatial_out=0)


def solve_hyperparams(target_rp: float, K: int, M: int, tolerance: float = 0.5,
                      parity: str = "mixed") -> list[tuple[int, int, float]]:
    """All divisor-valid ``(g, p)`` whose reduction lies within ``tolerance``.

    ``parity`` is ``"mixed"`` (layer average, half odd / half even filters),
    ``"odd"`` or ``"even"``. Results are sorted by distance to the target,
    then by smaller ``g``.
    """
    if not 0 < target_rp < 100:
        raise ValueError(f"target reduction must lie in (0, 100), got {target_rp}")
    KK = K * K
    if parity == "mixed":
        c = KK / 2
    else:
        c = zero_count(K, Parity(parity))
    out = []
    for g in valid_g_values(M):
        if g > 0 and K < 3:
            continue
        rest = M - (M // g if g else 0)
        for p in valid_p_values(M, g):
            if (g == 0 and p == 0) or (rest == 0 and p > 0):
                continue
            rp = reduction_closed_form(K, g, p, c)
            if abs(rp - target_rp) <= tolerance:
                out.append((g, p, rp))
    out.sort(key=lambda t: (abs(t[2] - target_rp), t[0], t[1]))
    return out


def to_csv(reports: Sequence[CostReport], labels: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    cols = (["label"] if labels is not None else []) + CSV_FIELDS
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for i, r in enumerate(reports):
        row = r.as_row()
        if labels is not None:
            row = {"label": labels[i], **row}
        w.writerow(row)
    return buf.getvalue()


def format_table(r: CostReport, title: str = "") -> str:
    lines = [title] if title else []
    lines += [
        f"  dense params  P_l  : {r.params_dense:>14,d}",
        f"  dense FLOPs   F_l  : {r.flops_dense:>14,d}",
        f"  K x K params  P_sg : {r.params_kxk:>14,d}",
        f"  1x1 params    P_sp : {r.params_pw:>14,d}",
        f"  SSC FLOPs          : {r.flops:>14,d}",
        f"  R_p                : {r.reduction_params:>13.2f}%",
        f"  R_F                : {r.reduction_flops:>13.2f}%",
    ]
    if r.closed_form_rp is not None:
        lines.append(f"  R_p (closed form)  : {r.closed_form_rp:>13.2f}%")
    return "\n".join(lines)
