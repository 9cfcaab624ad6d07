"""Sparsity structure of SSC layers.

A layer is fully described by :class:`LayerSpec`; everything else in this
module (kernel masks, per-filter slot patterns, shifts and shift groups) is a
pure, deterministic function of it. No data is ever consulted.

Conventions
-----------
* Masks are flattened row-major over the ``K x K`` grid.
* A 1x1 kernel inside a ``K x K`` layer sits on the centre tap, so it lines up
  with the window centre under "same" padding.
* Channel slots are 0-indexed; K x K kernels start at channel 0, 1x1 kernels
  take every ``p``-th of the remaining channels, and the whole pattern of
  filter ``n`` is rotated by ``n mod q`` with ``q = max(g, p)``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

FORMAT_VERSION = 1


class LayoutError(ValueError):
    """Invalid layer hyperparameters or layout document."""


class KernelGeometryError(LayoutError):
    """Kernel size unsupported by the requested mask."""


class ParityPolicy(str, enum.Enum):
    BLOCK_HALVES = "block_halves"
    ALTERNATING = "alternating"
    ODD_ONLY = "odd_only"
    EVEN_ONLY = "even_only"


class KernelStyle(str, enum.Enum):
    SPARSE = "sparse"  # odd/even masked K x K kernels
    STANDARD = "standard"  # unmasked K x K kernels (GWC/DWC equivalents)


class Parity(str, enum.Enum):
    ODD = "odd"
    EVEN = "even"


class MaskKind(str, enum.Enum):
    ODD = "odd_kxk"
    EVEN = "even_kxk"
    FULL = "full_kxk"
    ONE_BY_ONE = "one_by_one"


class SlotKind(str, enum.Enum):
    KXK = "kxk"
    ONE_BY_ONE = "one_by_one"
    EMPTY = "empty"


# --------------------------------------------------------------------------
# kernel masks


@dataclass(frozen=True)
class KernelMask:
    K: int
    bits: tuple[bool, ...]
    kind: MaskKind

    @property
    def popcount(self) -> int:
        return sum(self.bits)

    @property
    def zeros(self) -> int:
        return len(self.bits) - self.popcount

    def active_indices(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=bool).reshape(self.K, self.K)

    def to_bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def from_bitstring(cls, K: int, s: str, kind: MaskKind) -> "KernelMask":
        if len(s) != K * K or set(s) - {"0", "1"}:
            raise LayoutError(f"bad mask bitstring {s!r} for K={K}")
        return cls(K, tuple(c == "1" for c in s), kind)


def _check_masked_k(K: int) -> None:
    if not isinstance(K, (int, np.integer)) or K < 3 or K % 2 == 0:
        raise KernelGeometryError(
            f"kernel geometry: odd/even masks need an odd K >= 3, got K={K}")


def odd_kernel_mask(K: int) -> KernelMask:
    """Mask with trainable weights at the odd flat indices 1, 3, 5, ...

    Flat index 0 is zero, so the kernel has exactly ``ceil(K^2 / 2)`` zeros.
    """
    _check_masked_k(K)
    return KernelMask(K, tuple(i % 2 == 1 for i in range(K * K)), MaskKind.ODD)


def even_kernel_mask(K: int) -> KernelMask:
    """Mask with trainable weights at the even flat indices 0, 2, 4, ..."""
    _check_masked_k(K)
    return KernelMask(K, tuple(i % 2 == 0 for i in range(K * K)), MaskKind.EVEN)


def full_kernel_mask(K: int) -> KernelMask:
    if K < 1 or K % 2 == 0:
        raise KernelGeometryError(f"kernel geometry: K must be odd, got K={K}")
    return KernelMask(K, (True,) * (K * K), MaskKind.FULL)


def one_by_one_mask(K: int) -> KernelMask:
    """A 1x1 kernel embedded in a ``K x K`` window (centre tap only)."""
    if K < 1 or K % 2 == 0:
        raise KernelGeometryError(f"kernel geometry: K must be odd, got K={K}")
    centre = (K * K - 1) // 2
    return KernelMask(K, tuple(i == centre for i in range(K * K)),
                      MaskKind.ONE_BY_ONE)


# --------------------------------------------------------------------------
# layer hyperparameters


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def valid_g_values(M: int) -> list[int]:
    return [0] + _divisors(M)


def valid_p_values(M: int, g: int) -> list[int]:
    rest = M - (M // g if g else 0)
    if rest == 0:
        return [0] + list(range(1, M + 1))
    return [0] + _divisors(rest)


@dataclass(frozen=True)
class LayerSpec:
    """Hyperparameters of one SSC convolution layer.

    ``g = 0`` means no K x K kernels, ``p = 0`` means no 1x1 kernels.
    """

    M: int
    N: int
    K: int
    g: int
    p: int
    parity_policy: ParityPolicy = ParityPolicy.BLOCK_HALVES
    kernel_style: KernelStyle = KernelStyle.SPARSE

    def __post_init__(self) -> None:
        object.__setattr__(self, "parity_policy", ParityPolicy(self.parity_policy))
        object.__setattr__(self, "kernel_style", KernelStyle(self.kernel_style))
        M, N, K, g, p = self.M, self.N, self.K, self.g, self.p
        for name, v in (("M", M), ("N", N), ("K", K), ("g", g), ("p", p)):
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise LayoutError(f"{name} must be an integer, got {v!r}")
        if M < 1 or N < 1:
            raise LayoutError(f"M and N must be positive, got M={M}, N={N}")
        if K < 1 or K % 2 == 0:
            raise KernelGeometryError(f"kernel geometry: K must be odd, got K={K}")
        if g == 0 and p == 0:
            raise LayoutError("g = 0 and p = 0 leaves filters without kernels")
        if not 0 <= g <= M:
            raise LayoutError(f"g must lie in [0, M={M}], got {g}")
        if not 0 <= p <= M:
            raise LayoutError(f"p must lie in [0, M={M}], got {p}")
        if g > 0 and M % g:
            raise LayoutError(
                f"g={g} does not divide M={M}; valid g: {valid_g_values(M)}")
        rest = M - (M // g if g else 0)
        if p > 0 and rest % p:
            raise LayoutError(
                f"p={p} does not divide the {rest} channels left after the "
                f"K x K kernels (M={M}, g={g}); valid p: {valid_p_values(M, g)}")
        if g > 0 and K < 3:
            raise KernelGeometryError(
                "kernel geometry: K x K kernels need K >= 3; express a 1x1 "
                "layer as g = 0, p >= 1")
        if self.uses_both_parities and N % 2:
            raise LayoutError(
                f"equal odd/even filter counts need an even N, got N={N}")

    @property
    def uses_both_parities(self) -> bool:
        return (self.g > 0 and self.kernel_style is KernelStyle.SPARSE
                and self.parity_policy in (ParityPolicy.BLOCK_HALVES,
                                           ParityPolicy.ALTERNATING))

    @property
    def q(self) -> int:
        return max(self.g, self.p)

    @property
    def kxk_per_filter(self) -> int:
        return self.M // self.g if self.g else 0

    @property
    def one_by_one_per_filter(self) -> int:
        return (self.M - self.kxk_per_filter) // self.p if self.p else 0

    @property
    def empty_per_filter(self) -> int:
        return self.M - self.kxk_per_filter - self.one_by_one_per_filter

    def parity_of(self, n: int) -> Parity:
        policy = self.parity_policy
        if policy is ParityPolicy.ODD_ONLY:
            return Parity.ODD
        if policy is ParityPolicy.EVEN_ONLY:
            return Parity.EVEN
        if policy is ParityPolicy.ALTERNATING:
            return Parity.ODD if n % 2 == 0 else Parity.EVEN
        return Parity.ODD if n < self.N // 2 else Parity.EVEN

    def kxk_mask(self, parity: Parity) -> KernelMask:
        if self.kernel_style is KernelStyle.STANDARD:
            return full_kernel_mask(self.K)
        if parity is Parity.ODD:
            return odd_kernel_mask(self.K)
        return even_kernel_mask(self.K)

    def to_dict(self) -> dict:
        return {"M": self.M, "N": self.N, "K": self.K, "g": self.g, "p": self.p,
                "parity_policy": self.parity_policy.value,
                "kernel_style": self.kernel_style.value}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(int(d["M"]), int(d["N"]), int(d["K"]), int(d["g"]), int(d["p"]),
                   ParityPolicy(d.get("parity_policy", "block_halves")),
                   KernelStyle(d.get("kernel_style", "sparse")))


# --------------------------------------------------------------------------
# filters and layers


@dataclass(frozen=True)
class FilterLayout:
    spec: LayerSpec
    index: int
    parity: Parity
    slots: tuple[SlotKind, ...]
    shift: int

    @property
    def kxk_mask(self) -> KernelMask:
        return self.spec.kxk_mask(self.parity)

    def slot_mask(self, channel: int) -> KernelMask | None:
        kind = self.slots[channel]
        if kind is SlotKind.KXK:
            return self.kxk_mask
        if kind is SlotKind.ONE_BY_ONE:
            return one_by_one_mask(self.spec.K)
        return None

    def count(self, kind: SlotKind) -> int:
        return sum(1 for s in self.slots if s is kind)

    def support(self) -> np.ndarray:
        """Boolean ``(M, K*K)`` array of active weight positions."""
        KK = self.spec.K ** 2
        out = np.zeros((self.spec.M, KK), dtype=bool)
        kxk = np.array(self.kxk_mask.bits, dtype=bool)
        centre = (KK - 1) // 2
        for c, kind in enumerate(self.slots):
            if kind is SlotKind.KXK:
                out[c] = kxk
            elif kind is SlotKind.ONE_BY_ONE:
                out[c, centre] = True
        return out

    @property
    def popcount(self) -> int:
        return (self.count(SlotKind.KXK) * self.kxk_mask.popcount
                + self.count(SlotKind.ONE_BY_ONE))


def _base_slots(spec: LayerSpec) -> list[SlotKind]:
    slots = [SlotKind.EMPTY] * spec.M
    if spec.g:
        for c in range(0, spec.M, spec.g):
            slots[c] = SlotKind.KXK
    if spec.p:
        rest = [c for c in range(spec.M) if slots[c] is SlotKind.EMPTY]
        for c in rest[::spec.p]:
            slots[c] = SlotKind.ONE_BY_ONE
    return slots


def build_filter_layout(spec: LayerSpec, n: int) -> FilterLayout:
    """Slot pattern of filter ``n``: base pattern rotated by ``n mod q``."""
    if not 0 <= n < spec.N:
        raise LayoutError(f"filter index {n} outside [0, {spec.N})")
    base = _base_slots(spec)
    shift = n % spec.q
    M = spec.M
    slots = [SlotKind.EMPTY] * M
    for c, kind in enumerate(base):
        slots[(c + shift) % M] = kind
    return FilterLayout(spec, n, spec.parity_of(n), tuple(slots), shift)


def shift_groups(N: int, q: int) -> tuple[tuple[int, int], ...]:
    """Consecutive half-open filter ranges of length ``q`` (last may be short)."""
    return tuple((a, min(a + q, N)) for a in range(0, N, q))


@dataclass(frozen=True)
class LayerLayout:
    spec: LayerSpec
    filters: tuple[FilterLayout, ...]
    groups: tuple[tuple[int, int], ...]

    @cached_property
    def support(self) -> np.ndarray:
        """Boolean ``(N, M, K*K)`` support of the whole layer."""
        s = np.stack([f.support() for f in self.filters])
        s.setflags(write=False)
        return s

    @property
    def popcount(self) -> int:
        return int(self.support.sum())

    def group_of(self, n: int) -> int:
        return n // self.spec.q


@lru_cache(maxsize=256)
def build_layer_layout(spec: LayerSpec) -> LayerLayout:
    filters = tuple(build_filter_layout(spec, n) for n in range(spec.N))
    return LayerLayout(spec, filters, shift_groups(spec.N, spec.q))


def support_overlap(a: FilterLayout, b: FilterLayout) -> int:
    """Number of (channel, tap) positions active in both filters."""
    if a.spec != b.spec:
        raise LayoutError("support_overlap needs filters from the same spec")
    return int(np.logical_and(a.support(), b.support()).sum())


# --------------------------------------------------------------------------
# structure predicates for the GWC / DWC / PWC special cases


def _channel_sets(layout: LayerLayout) -> list[set[int]]:
    return [{c for c, s in enumerate(f.slots) if s is not SlotKind.EMPTY}
            for f in layout.filters]


def is_pointwise(layout: LayerLayout) -> bool:
    """Every filter is a full 1x1 kernel over all channels."""
    return all(all(s is SlotKind.ONE_BY_ONE for s in f.slots)
               for f in layout.filters)


def is_groupwise(layout: LayerLayout, groups: int | None = None) -> bool:
    """Standard K x K kernels on the interleaved channel group ``n mod g``."""
    spec = layout.spec
    g = spec.g if groups is None else groups
    if spec.kernel_style is not KernelStyle.STANDARD or spec.p != 0 or g < 1:
        return False
    for f, chans in zip(layout.filters, _channel_sets(layout)):
        if chans != set(range(f.index % g, spec.M, g)):
            return False
        if any(s is SlotKind.ONE_BY_ONE for s in f.slots):
            return False
    return True


def is_depthwise(layout: LayerLayout) -> bool:
    """One standard K x K kernel per filter, on channel ``n mod M``."""
    spec = layout.spec
    return spec.g == spec.M and is_groupwise(layout) and all(
        chans == {f.index % spec.M}
        for f, chans in zip(layout.filters, _channel_sets(layout)))


def structure_tag(layout: LayerLayout) -> str:
    if is_pointwise(layout):
        return "PWC-equivalent"
    if is_depthwise(layout):
        return "DWC-equivalent"
    if is_groupwise(layout):
        return "GWC-equivalent"
    spec = layout.spec
    if spec.p == 1 and spec.g > 0:
        return "GWC+PWC composition" if spec.g < spec.M else "DWC+PWC composition"
    return "SSC"


# --------------------------------------------------------------------------
# serialisation


def export_layout(layout: LayerLayout) -> str:
    """Self-describing JSON document for a layout."""
    spec = layout.spec
    masks = {MaskKind.ONE_BY_ONE.value: one_by_one_mask(spec.K).to_bitstring()}
    filters = []
    for f in layout.filters:
        if f.count(SlotKind.KXK):
            m = f.kxk_mask
            masks[m.kind.value] = m.to_bitstring()
        filters.append({
            "index": f.index,
            "parity": f.parity.value,
            "shift": f.shift,
            "kxk_mask": f.kxk_mask.kind.value if f.count(SlotKind.KXK) else None,
            "slots": [[c, s.value] for c, s in enumerate(f.slots)
                      if s is not SlotKind.EMPTY],
        })
    doc = {
        "format_version": FORMAT_VERSION,
        "spec": spec.to_dict(),
        "q": spec.q,
        "groups": [list(g) for g in layout.groups],
        "masks": masks,
        "filters": filters,
    }
    return json.dumps(doc, indent=1)


def import_layout(doc: str | dict) -> LayerLayout:
    """Parse a document written by :func:`export_layout`.

    The document is checked against the layout regenerated from its spec, so
    a hand-edited or corrupted file is rejected rather than silently used.
    """
    d = json.loads(doc) if isinstance(doc, str) else doc
    if d.get("format_version") != FORMAT_VERSION:
        raise LayoutError(f"unsupported layout format_version {d.get('format_version')!r}")
    spec = LayerSpec.from_dict(d["spec"])
    if len(d["filters"]) != spec.N:
        raise LayoutError("filter count does not match spec.N")
    filters = []
    for fd in d["filters"]:
        slots = [SlotKind.EMPTY] * spec.M
        for c, kind in fd["slots"]:
            slots[int(c)] = SlotKind(kind)
        filters.append(FilterLayout(spec, int(fd["index"]), Parity(fd["parity"]),
                                    tuple(slots), int(fd["shift"])))
    for kind, bits in d.get("masks", {}).items():
        kind = MaskKind(kind)
        mask = KernelMask.from_bitstring(spec.K, bits, kind)
        expected = {MaskKind.ODD: odd_kernel_mask, MaskKind.EVEN: even_kernel_mask,
                    MaskKind.FULL: full_kernel_mask,
                    MaskKind.ONE_BY_ONE: one_by_one_mask}[kind](spec.K)
        if mask != expected:
            raise LayoutError(f"mask {kind.value} disagrees with its definition")
    layout = LayerLayout(spec, tuple(filters),
                         tuple((int(a), int(b)) for a, b in d["groups"]))
    if layout != build_layer_layout(spec):
        raise LayoutError("layout document is inconsistent with its spec")
    return layout


def expected_counts(spec: LayerSpec) -> tuple[int, int, int]:
    """Closed-form (K x K, 1x1, empty) slot counts per filter.

    Terms with ``1/g`` or ``1/p`` read as 0 when that hyperparameter is 0.
    """
    M, g, p = spec.M, spec.g, spec.p
    inv_g = 0 if g == 0 else 1 / g
    inv_p = 0 if p == 0 else 1 / p
    kxk = M * inv_g
    pw = M * (1 - inv_g) * inv_p
    empty = M * (1 - inv_p) * (1 - inv_g)
    return (int(round(kxk)), int(round(pw)), int(round(empty)))


def centre_tap(K: int) -> int:
    return (K * K - 1) // 2
