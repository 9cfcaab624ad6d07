import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sscnet.analysis import (UndefinedCorrelationError, compare_models, correlation_matrix,
                             CorrelationReport, group_orthogonality, layer_correlation,
                             model_report, pearson)
from sscnet.autograd import build_model
from sscnet.layout import LayerSpec, build_layer_layout
from sscnet.tensorops import SscWeights


def pearson_loop(a, b):
    """Textbook two-pass formula in plain Python floats."""
    n = len(a)
    ma = sum(a) / n
    mb = sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / (va * vb) ** 0.5


finite = st.floats(-100, 100, allow_nan=False, width=64)


class TestPearson:
    def test_known(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
        assert pearson([1, 0, -1, 0], [0, 1, 0, -1]) == pytest.approx(0.0)

    def test_constant_raises(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1, 1, 1], [1, 2, 3])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pearson([1, 2], [1, 2, 3])

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=finite))
    def test_matches_loop_and_bounded(self, a, b):
        if np.ptp(a) < 1e-3 or np.ptp(b) < 1e-3:
            return
        r = pearson(a, b)
        assert -1.0 <= r <= 1.0
        assert r == pytest.approx(pearson_loop(list(a), list(b)), abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 5, elements=finite), st.floats(0.1, 10), st.floats(-5, 5))
    def test_affine_invariance(self, a, s, t):
        if np.ptp(a) < 1e-3:
            return
        assert pearson(a, s * a + t) == pytest.approx(1.0, abs=1e-9)


class TestLayerCorrelation:
    def test_matrix_matches_pairwise(self, rng):
        F = rng.standard_normal((4, 9))
        R = correlation_matrix(F)
        for i in range(4):
            for j in range(4):
                assert R[i, j] == pytest.approx(pearson(F[i], F[j]))

    def test_diagonal_included(self, rng):
        F = rng.standard_normal((3, 27))
        R = np.abs(correlation_matrix(F))
        assert layer_correlation(F) == pytest.approx(R.sum() / 9)
        assert layer_correlation(F) >= 1 / 3

    def test_identical_filters(self, rng):
        f = rng.standard_normal(9)
        assert layer_correlation(np.stack([f, -f, 2 * f])) == pytest.approx(1.0)

    def test_constant_filter_raises(self, rng):
        F = rng.standard_normal((3, 9))
        F[1] = 0.5
        with pytest.raises(UndefinedCorrelationError, match=r"\[1\]"):
            correlation_matrix(F)


class TestGroupOrthogonality:
    def test_odd_groups_exact_zero(self, rng):
        spec = LayerSpec(12, 8, 3, 4, 3)
        w = SscWeights.init(spec, rng, np.float64).dense()
        res = group_orthogonality(build_layer_layout(spec), w)
        odd = [p for p in res.pairs if p.i < 4]
        assert odd and all(p.disjoint and p.dot == 0.0 for p in odd)
        assert not res.violations

    def test_violation_reported(self, rng):
        spec = LayerSpec(12, 8, 3, 4, 3)
        lay = build_layer_layout(spec)
        w = SscWeights.init(spec, rng, np.float64).dense()
        w[1][~lay.support[1].reshape(12, 3, 3)] = 1.0  # break the structure on purpose
        res = group_orthogonality(lay, w)
        assert any(p.i == 0 and p.j == 1 for p in res.violations)

    def test_dense_has_no_disjoint(self, rng):
        res = group_orthogonality(None, rng.standard_normal((3, 2, 3, 3)))
        assert len(res.pairs) == 3 and not res.disjoint_pairs


class TestReports:
    def test_model_report_and_compare(self):
        a = model_report(build_model("mnist_cnn4", "ssc", width=4, seed=1), "ssc")
        b = model_report(build_model("mnist_cnn4", "dense", width=4, seed=1), "dense")
        assert a.layers == b.layers == ["conv1", "conv2", "conv3", "conv4"]
        assert a.to_csv().splitlines()[0] == "layer,C_l,group_max_dot,model_tag"
        cmp = compare_models([a, b])
        assert cmp.layer_count == 4
        assert cmp.csv.splitlines()[0] == "layer,C_l[ssc],C_l[dense],diff[ssc-dense]"
        assert "ssc lower than dense in" in cmp.summary()

    def test_lower_count(self):
        a = CorrelationReport("a", ["l1", "l2", "l3"], [0.1, 0.5, 0.2])
        b = CorrelationReport("b", ["l1", "l2", "l3"], [0.2, 0.4, 0.3])
        assert compare_models([a, b]).lower_counts == {"b": 2}

    def test_layer_mismatch(self):
        a = CorrelationReport("a", ["l1"], [0.1])
        b = CorrelationReport("b", ["l1", "l2"], [0.1, 0.2])
        with pytest.raises(ValueError, match="mismatch"):
            compare_models([a, b])

    def test_report_lengths(self):
        with pytest.raises(ValueError):
            CorrelationReport("a", ["l1"], [0.1, 0.2])
