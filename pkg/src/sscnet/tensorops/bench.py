"""Throughput comparison of the dense and SSC convolution paths."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..costmodel import layer_cost
from ..layout import KernelStyle, LayerSpec, ParityPolicy, build_layer_layout
from . import _backend
from .conv import ConvGeometry, SscWeights, conv2d_dense, conv2d_ssc


@dataclass
class BenchRow:
    label: str
    backend: str
    M: int
    N: int
    K: int
    g: int
    p: int
    reduction_params: float
    batch: int
    size: int
    dense_median_s: float
    ssc_median_s: float
    dense_elems_per_s: float
    ssc_elems_per_s: float
    speedup: float


BENCH_FIELDS = list(BenchRow.__dataclass_fields__)


def default_grid(M: int = 32, N: int = 32) -> list[tuple[str, LayerSpec]]:
    """Specs from a dense-equivalent layout up to high sparsity."""
    std, odd = KernelStyle.STANDARD, ParityPolicy.ODD_ONLY
    return [
        ("rp0", LayerSpec(M, N, 3, 1, 0, kernel_style=std)),
        ("rp50", LayerSpec(M, N, 3, 2, 0, kernel_style=std)),
        ("rp75", LayerSpec(M, N, 3, 2, 2, parity_policy=odd)),
        ("rp90", LayerSpec(M, N, 3, 4, 4, parity_policy=odd)),
    ]


def _paired_medians(fa, fb, repetitions: int) -> tuple[float, float]:
    # Alternate the two calls so slow drifts of a shared machine hit both.
    fa()
    fb()
    ta, tb = [], []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fa()
        t1 = time.perf_counter()
        fb()
        t2 = time.perf_counter()
        ta.append(t1 - t0)
        tb.append(t2 - t1)
    return float(np.median(ta)), float(np.median(tb))


def benchmark_conv(grid=None, geom: ConvGeometry | None = None, repetitions: int = 9,
                   batch: int = 16, size: int = 16, backends=None, seed: int = 0,
                   dtype=np.float32) -> list[BenchRow]:
    """Median wall time of ``conv2d_dense`` vs ``conv2d_ssc`` for each spec.

    Both paths see identical inputs and the dense path gets the decompressed
    SSC weights, so the only difference is the work skipped on structural
    zeros. Elements/s counts output elements.
    """
    grid = grid if grid is not None else default_grid()
    backends = backends or [_backend.DEFAULT]
    rng = np.random.default_rng(seed)
    rows = []
    for label, spec in grid:
        layout = build_layer_layout(spec)
        g = geom or ConvGeometry.same(spec.K)
        w = SscWeights.init(layout, rng, dtype=dtype)
        dense_w = w.dense()
        x = rng.standard_normal((batch, spec.M, size, size)).astype(dtype)
        out_elems = batch * spec.N * g.output_size(size, spec.K) ** 2
        rp = layer_cost(layout, g.output_size(size, spec.K)).reduction_params
        for be in backends:
            td, ts = _paired_medians(lambda: conv2d_dense(x, dense_w, g, backend=be),
                                     lambda: conv2d_ssc(x, w, g, backend=be), repetitions)
            rows.append(BenchRow(label, be, spec.M, spec.N, spec.K, spec.g, spec.p, rp,
                                 batch, size, td, ts, out_elems / td, out_elems / ts,
                                 td / ts))
    return rows


def rows_to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(asdict(r))
    return buf.getvalue()


def format_rows(rows: list[BenchRow]) -> str:
    lines = [f"{'label':<8}{'backend':<10}{'R_p %':>8}{'dense ms':>11}{'ssc ms':>10}{'speedup':>9}"]
    for r in rows:
        lines.append(f"{r.label:<8}{r.backend:<10}{r.reduction_params:>8.2f}"
                     f"{r.dense_median_s * 1e3:>11.3f}{r.ssc_median_s * 1e3:>10.3f}"
                     f"{r.speedup:>9.2f}")
    return "\n".join(lines)
