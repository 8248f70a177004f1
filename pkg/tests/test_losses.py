import numpy as np
import pytest
from gradcheck import max_relative_error, tiny_problem
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wshar.errors import ContractError, ParameterError
from wshar.losses import (
    LossWeights,
    combine_stage1,
    combine_stage2,
    contrastive_loss,
    feature_consistency_loss,
    label_consistency_loss,
    recon_loss,
    stage1_loss,
    stage1_objective,
    stage2_loss,
    stage2_objective,
    temporal_consistency_loss,
)

vec = arrays(np.float64, 3, elements=st.floats(-50, 50))


def test_recon_examples():
    assert recon_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert recon_loss([0.0, 0.0], [3.0, 4.0]) == 25.0
    with pytest.raises(ContractError):
        recon_loss([0.0], [0.0, 1.0])


def test_consistency_examples():
    assert temporal_consistency_loss([[2.0]], [2.0]) == 0.0
    assert temporal_consistency_loss([[1.0], [3.0]], [2.0]) == 1.0
    assert feature_consistency_loss([[0.0, 0.0], [2.0, 0.0]], [1.0, 0.0]) == 1.0
    assert temporal_consistency_loss([[4.0, 1.0]], [1.0, 5.0]) == recon_loss([4.0, 1.0], [1.0, 5.0])
    assert temporal_consistency_loss([], [1.0]) == 0.0


def test_label_consistency_examples():
    assert label_consistency_loss([1.0, 1.0], [1.0, 1.0]) == 0.0
    assert label_consistency_loss([0.0, 0.0], [3.0, 4.0]) == 25.0
    with pytest.raises(ContractError):
        label_consistency_loss([0.0], [0.0, 0.0])


def test_contrastive_examples():
    assert contrastive_loss([0.0, 0.0], [2.0, 0.0], 1) == 2.0
    assert contrastive_loss([0.0, 0.0], [0.0, 0.0], 0, margin=1.0) == 0.5
    assert contrastive_loss([0.0, 0.0], [1.0, 0.0], 0, margin=1.0) == 0.0
    assert contrastive_loss([0.0, 0.0], [3.0, 4.0], 0, margin=1.0) == 0.0
    # summed over a batch
    assert contrastive_loss([[0.0], [0.0]], [[2.0], [0.0]], [1, 0]) == 2.5
    with pytest.raises(ContractError):
        contrastive_loss([0.0], [1.0], 2)


@given(vec, vec, st.floats(0.01, 10))
@settings(max_examples=200, deadline=None)
def test_contrastive_far_negative_is_exactly_zero(a, b, margin):
    if np.linalg.norm(a - b) >= margin:
        assert contrastive_loss(a, b, 0, margin) == 0.0


def test_contrastive_shape_in_distance():
    ds = np.linspace(0, 3, 61)
    pos = [contrastive_loss([0.0], [d], 1, 1.5) for d in ds]
    neg = [contrastive_loss([0.0], [d], 0, 1.5) for d in ds]
    assert all(np.diff(pos) > 0)
    assert all(np.diff(neg) <= 0)
    assert all(v == 0.0 for d, v in zip(ds, neg) if d >= 1.5)


@given(vec, vec, vec, st.lists(vec, max_size=3), st.integers(0, 1))
@settings(max_examples=200, deadline=None)
def test_all_terms_non_negative(x, r, e, nb, y):
    assert recon_loss(x, r) >= 0
    assert temporal_consistency_loss(nb, r) >= 0
    assert label_consistency_loss(e, r) >= 0
    assert contrastive_loss(e, r, y) >= 0
    assert label_consistency_loss(e, r) == label_consistency_loss(r, e)


def test_weight_validation():
    with pytest.raises(ParameterError):
        LossWeights(0.6, 0.6).validate(1)
    with pytest.raises(ParameterError):
        LossWeights(-0.1, 0.2).validate(1)
    with pytest.raises(ParameterError):
        LossWeights(0.4, 0.4, 0.4).validate(2)
    with pytest.raises(ParameterError):
        LossWeights(0.1, 0.1, 0.1, margin=0).validate(2)
    with pytest.raises(ParameterError):
        stage1_loss([0.0], [0.0], [], [], LossWeights(0.7, 0.7))


def test_stage1_arithmetic_and_collapse():
    assert combine_stage1(2.0, 4.0, 6.0, LossWeights(0.25, 0.25)) == 3.5
    x, r = [0.0, 0.0], [3.0, 4.0]
    t_nb, f_nb = [[1.0, 1.0]], [[2.0, 0.0], [0.0, 2.0]]
    assert stage1_loss(x, r, t_nb, f_nb, LossWeights(0, 0)) == recon_loss(x, r)
    assert stage1_loss(x, r, t_nb, f_nb, LossWeights(1, 0)) == temporal_consistency_loss(t_nb, r)
    assert stage1_loss(x, r, t_nb, f_nb, LossWeights(0, 1)) == feature_consistency_loss(f_nb, r)


def test_stage2_arithmetic_and_collapse():
    assert combine_stage2(1, 1, 1, 1, 1, 1, 1, LossWeights(0.2, 0.2, 0.4)) == pytest.approx(1.6, abs=1e-15)
    rng = np.random.default_rng(0)
    x_a, x_b, r_a, r_b = (rng.normal(size=4) for _ in range(4))
    nb_a = ([rng.normal(size=4)], [rng.normal(size=4) for _ in range(3)])
    nb_b = ([rng.normal(size=4) for _ in range(2)], [rng.normal(size=4)])
    e_a, e_b = rng.normal(size=2), rng.normal(size=2)
    w = LossWeights(0.2, 0.3, 0.0)
    split = (stage1_loss(x_a, r_a, *nb_a, LossWeights(0.2, 0.3))
             + stage1_loss(x_b, r_b, *nb_b, LossWeights(0.2, 0.3)))
    assert abs(stage2_loss(x_a, x_b, r_a, r_b, nb_a, nb_b, e_a, e_b, 1, w) - split) <= 1e-12
    pure = stage2_loss(x_a, x_b, r_a, r_b, nb_a, nb_b, e_a, e_b, 0, LossWeights(0, 0, 1.0, 5.0))
    assert pure == contrastive_loss(e_a, e_b, 0, 5.0)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
@settings(max_examples=200, deadline=None)
def test_stage1_is_a_convex_combination(a, b, ae, tc, fc):
    if a + b > 1:
        a, b = a / (a + b), b / (a + b)
    w = LossWeights(a, b)
    got = combine_stage1(ae, tc, fc, w)
    assert min(ae, tc, fc) - 1e-9 <= got <= max(ae, tc, fc) + 1e-9
    assert got == pytest.approx((1 - a - b) * ae + a * tc + b * fc, abs=1e-12)


def test_batch_collapse_identities():
    rng = np.random.default_rng(1)
    x, r = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
    t = (rng.normal(size=(6, 2, 5)), np.ones((6, 2)))
    f = (rng.normal(size=(6, 3, 5)), np.ones((6, 3)))
    ae = float(((x - r) ** 2).sum(axis=1).mean())
    assert abs(stage1_loss(x, r, t, f, LossWeights(0, 0)) - ae) <= 1e-12


# ------------------------------------------------------- gradient checks

def test_stage1_gradient_matches_finite_differences():
    params, b, _ = tiny_problem()
    w = LossWeights(0.25, 0.25)
    err = max_relative_error(lambda p: stage1_objective(params, p, b, w)[0], params.arrays)
    assert err < 1e-4


def test_stage2_gradient_matches_finite_differences():
    params, a, b = tiny_problem(1)
    y = np.array([1, 0, 1, 0, 0])
    w = LossWeights(0.15, 0.15, 0.5, margin=3.0)  # margin above the typical distance keeps hinges active
    err = max_relative_error(lambda p: stage2_objective(params, p, a, b, y, w)[0], params.arrays)
    assert err < 1e-4
