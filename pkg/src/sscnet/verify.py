"""Self-check suites run by ``sscnet verify``.

Each suite returns :class:`Check` rows. The oracle suite can be run against a
deliberately corrupted kernel plan to confirm that a broken mask is caught
and located.
"""

from __future__ import annotations

import dataclasses
import itertools
import time
from dataclasses import dataclass

import numpy as np

from .costmodel import layer_cost, ssc_cost
from .layout import (LayerSpec, SlotKind, build_layer_layout, expected_counts, export_layout,
                     import_layout, valid_g_values, valid_p_values)
from .rng import stream
from .tensorops import ConvGeometry, SscWeights, conv2d_masked_oracle, conv2d_ssc, conv2d_ssc_backward

SCOPES = ("layout", "cost", "oracle", "grad", "ortho")


@dataclass
class Check:
    scope: str
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def as_dict(self):
        return dataclasses.asdict(self)


def valid_specs(M_values, K: int = 3, N: int = 4, policies=("block_halves", "odd_only", "even_only")):
    for M in M_values:
        for g in valid_g_values(M):
            for p in valid_p_values(M, g):
                if g == 0 and p == 0:
                    continue
                for pol in policies:
                    yield LayerSpec(M, N, K, g, p, pol)


def _timed(scope, name, fn) -> Check:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as e:  # a crash is a failed check, not a crashed suite
        ok, detail = False, f"{type(e).__name__}: {e}"
    return Check(scope, name, bool(ok), detail, time.perf_counter() - t0)


def suite_layout() -> list[Check]:
    def counts():
        for spec in valid_specs(range(1, 25)):
            lay = build_layer_layout(spec)
            want = expected_counts(spec)
            for f in lay.filters:
                got = (f.count(SlotKind.KXK), f.count(SlotKind.ONE_BY_ONE), f.count(SlotKind.EMPTY))
                if got != want:
                    return False, f"{spec} filter {f.index}: counts {got} != {want}"
        return True, "slot counts match closed forms"

    def roundtrip():
        for spec in list(valid_specs([4, 8, 12]))[::5]:
            lay = build_layer_layout(spec)
            if import_layout(export_layout(lay)) != lay:
                return False, f"round trip failed for {spec}"
        return True, "export/import round trip"

    return [_timed("layout", "slot_counts", counts), _timed("layout", "roundtrip", roundtrip)]


def suite_cost() -> list[Check]:
    def popcount():
        for spec in valid_specs(range(4, 33)):
            r = layer_cost(build_layer_layout(spec), 1)
            if abs(r.reduction_params - r.closed_form_rp) > 1e-9:
                return False, f"{spec}: popcount {r.reduction_params} != closed form {r.closed_form_rp}"
        return True, "popcount equals closed form"

    def spot():
        v = ssc_cost(LayerSpec(36, 4, 3, 2, 2, "odd_only"), 8).reduction_params
        m = layer_cost(build_layer_layout(LayerSpec(36, 4, 3, 2, 2)), 8).reduction_params
        ok = abs(v - 75.0) < 1e-9 and abs(m - 2600 / 36) < 1e-9
        return ok, f"odd {v:.4f}%, mixed {m:.4f}%"

    return [_timed("cost", "popcount_vs_closed_form", popcount), _timed("cost", "spot_values", spot)]


def _oracle_cases(n: int, seed: int):
    rng = stream(seed, "verify-oracle")
    specs = [s for s in valid_specs([4, 6, 8, 12], N=4) if s.M * 3 <= 36]
    for k in range(n):
        spec = specs[rng.integers(len(specs))]
        geom = ConvGeometry(int(rng.integers(1, 3)), int(rng.integers(0, 2)))
        yield k, spec, geom, rng


def corrupt_plan(w: SscWeights, rng):
    """Move one active weight to a masked-off tap; returns ``(plan, (n, c, tap))``."""
    plan = w.plan
    spec = w.spec
    support = w.layout.support
    for e in rng.permutation(plan.size):
        n, c = int(plan.fil[e]), int(plan.ch[e])
        free = np.flatnonzero(~support[n, c])
        if free.size:
            t = int(free[0])
            ky, kx = plan.ky.copy(), plan.kx.copy()
            ky[e], kx[e] = t // spec.K, t % spec.K
            return dataclasses.replace(plan, ky=ky, kx=kx), (n, c, t)
    raise ValueError("layout has no masked-off position to corrupt")


def suite_oracle(cases: int = 100, seed: int = 0, inject_corruption: bool = False) -> list[Check]:
    def run():
        worst = {np.float32: 0.0, np.float64: 0.0}
        for k, spec, geom, rng in _oracle_cases(cases, seed):
            dtype = np.float32 if k % 2 == 0 else np.float64
            w = SscWeights.init(spec, rng, dtype=dtype, bias=True)
            w.bias[:] = rng.standard_normal(spec.N)
            x = rng.standard_normal((2, spec.M, 7, 6)).astype(dtype)
            plan, where = (None, None)
            if inject_corruption:
                plan, where = corrupt_plan(w, rng)
            y = conv2d_ssc(x, w, geom, plan=plan)
            ref = conv2d_masked_oracle(x, w, geom)
            err = np.abs(y - ref) / (np.abs(ref).max() + 1e-30)
            tol = 1e-5 if dtype is np.float32 else 1e-12
            if err.max() > tol:
                bad = np.unravel_index(err.argmax(), err.shape)
                msg = (f"case {k} {spec.to_dict()} stride={geom.stride} pad={geom.padding}: "
                       f"max rel err {err.max():.3e} at output filter {bad[1]}")
                if where is not None:
                    msg += f"; corrupted mask at filter {where[0]}, channel {where[1]}, tap {where[2]}"
                return False, msg
            worst[dtype] = max(worst[dtype], float(err.max()))
        return True, f"{cases} cases, max rel err f32 {worst[np.float32]:.2e} f64 {worst[np.float64]:.2e}"

    return [_timed("oracle", "ssc_vs_masked_dense", run)]


def finite_difference(f, x, h=1e-3, idx=None):
    """Central differences of scalar ``f`` w.r.t. the given flat entries of ``x``."""
    flat = x.reshape(-1)
    idx = range(flat.size) if idx is None else idx
    out = []
    for i in idx:
        o = flat[i]
        flat[i] = o + h
        a = f()
        flat[i] = o - h
        b = f()
        flat[i] = o
        out.append((a - b) / (2 * h))
    return np.array(out)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def suite_grad(seed: int = 0) -> list[Check]:
    def conv():
        rng = stream(seed, "verify-grad")
        worst = 0.0
        for spec in [LayerSpec(4, 4, 3, 2, 2), LayerSpec(6, 4, 3, 2, 3), LayerSpec(4, 2, 3, 0, 1)]:
            w = SscWeights.init(spec, rng, dtype=np.float64, bias=True)
            x = rng.standard_normal((2, spec.M, 6, 6))
            geom = ConvGeometry.same(3)
            r = rng.standard_normal(conv2d_ssc(x, w, geom).shape)
            f = lambda: float(np.sum(r * conv2d_masked_oracle(x, w, geom)))  # noqa: E731
            gx, gw, gb = conv2d_ssc_backward(x, w, geom, r)
            worst = max(worst, rel_err(gx.ravel(), finite_difference(f, x)),
                        rel_err(gw, finite_difference(f, w.values)),
                        rel_err(gb, finite_difference(f, w.bias)))
        return worst < 1e-4, f"max rel err {worst:.2e}"

    return [_timed("grad", "ssc_conv_finite_difference", conv)]


def suite_ortho() -> list[Check]:
    def disjoint():
        n_pairs = 0
        for M, g, p in itertools.product([4, 8, 12, 16, 24], [2, 3, 4, 6], [0, 1, 2, 3, 4, 6]):
            if M % g or p > g or (p and (M - M // g) % p) or (0 < p < g - 1):
                continue
            N = 2 * g * 2
            spec = LayerSpec(M, N, 3, g, p)
            lay = build_layer_layout(spec)
            for a, b in lay.groups:
                if lay.filters[a].parity.value != "odd":
                    continue
                for i in range(a, b):
                    for j in range(i + 1, b):
                        if np.any(lay.support[i] & lay.support[j]):
                            return False, f"{spec}: filters {i},{j} share support"
                        n_pairs += 1
        return True, f"{n_pairs} odd same-group pairs with disjoint support"

    return [_timed("ortho", "odd_group_disjoint_support", disjoint)]


def run(scope: str = "all", inject_corruption: bool = False, seed: int = 0) -> list[Check]:
    scopes = SCOPES if scope == "all" else (scope,)
    out = []
    for s in scopes:
        if s == "layout":
            out += suite_layout()
        elif s == "cost":
            out += suite_cost()
        elif s == "oracle":
            out += suite_oracle(seed=seed, inject_corruption=inject_corruption)
        elif s == "grad":
            out += suite_grad(seed)
        elif s == "ortho":
            out += suite_ortho()
        else:
            raise ValueError(f"unknown scope {s!r}; have {('all',) + SCOPES}")
    return out
