import os
from pathlib import Path

import numpy as np
import pytest

from sscnet.tensorops import available_backends

DATA_ROOT = Path(os.environ.get("SSC_DATA_DIR", "/root/data"))
BACKENDS = available_backends()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def naive_conv(x, w, stride=1, pad=0, bias=None):
    """Quadruple-loop cross-correlation used as a brute-force oracle."""
    B, M, H, W = x.shape
    N, _, K, _ = w.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - K) // stride + 1
    Wo = (W + 2 * pad - K) // stride + 1
    out = np.zeros((B, N, Ho, Wo))
    for b in range(B):
        for n in range(N):
            for i in range(Ho):
                for j in range(Wo):
                    s = 0.0
                    for c in range(M):
                        for u in range(K):
                            for v in range(K):
                                s += xp[b, c, i * stride + u, j * stride + v] * w[n, c, u, v]
                    out[b, n, i, j] = s
    if bias is not None:
        out += np.asarray(bias)[None, :, None, None]
    return out


def bars_dataset(n=400, size=8, seed=0, split="train", noise=40):
    """Two classes: a bright horizontal bar versus a bright vertical bar."""
    from sscnet.data import _make
    r = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    px = r.integers(0, noise, (n, 1, size, size))
    pos = r.integers(1, size - 1, n)
    for i in range(n):
        if labels[i]:
            px[i, 0, :, pos[i]] = 255
        else:
            px[i, 0, pos[i], :] = 255
    return _make("bars", split, px.astype(np.uint8), labels.astype(np.int64), 2, f"bars{seed}")


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
        terminalreporter.write_line(line)
