import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fd_grad, rel_err
from gminfer.conditions import (
    ComponentCondition,
    DiscriminatorCondition,
    MaskCondition,
    NoCondition,
    cond_grad,
    cond_log_likelihood,
)
from gminfer.nets import init_mlp
from gminfer.numerics import make_rng
from gminfer.targets import target_from_components

PAIR = target_from_components([(0.5, (-1.0, 0.0), 0.7), (0.5, (1.0, 0.0), 0.7)])


def test_none_is_zero():
    c = NoCondition()
    assert cond_log_likelihood(c, [1.0, 2.0]) == 0.0
    np.testing.assert_array_equal(cond_grad(c, [1.0, 2.0]), [0.0, 0.0])


def test_mask_exact_match():
    c = MaskCondition((0,), [3.0], tau=1.0)
    assert cond_log_likelihood(c, [3.0, 7.0]) == 0.0


def test_mask_gradient_formula_and_sparsity():
    c = MaskCondition((0,), [3.0], tau=0.5)
    g = cond_grad(c, [2.0, 7.0])
    np.testing.assert_array_equal(g, [4.0, 0.0])


def test_mask_validation():
    with pytest.raises(ValueError):
        MaskCondition((0, 1), [1.0])
    with pytest.raises(ValueError):
        MaskCondition((0,), [1.0], tau=0.0)
    with pytest.raises(ValueError):
        cond_grad(MaskCondition((5,), [1.0]), [0.0, 0.0])


def test_component_symmetric_point():
    c = ComponentCondition(PAIR, 0, beta=2.0)
    assert cond_log_likelihood(c, [0.0, 0.3]) == pytest.approx(2.0 * np.log(0.5), rel=1e-14)


def test_component_gradient_matches_fd():
    c = ComponentCondition(PAIR, 1, beta=1.0)
    for x in make_rng(0).standard_normal((10, 2)):
        assert rel_err(cond_grad(c, x), fd_grad(lambda v: cond_log_likelihood(c, v), x)) < 1e-4


def test_component_beta_scaling_is_exact():
    x = make_rng(1).standard_normal((5, 2))
    g1 = cond_grad(ComponentCondition(PAIR, 0, 1.0), x)
    g3 = cond_grad(ComponentCondition(PAIR, 0, 3.0), x)
    np.testing.assert_array_equal(g3, 3.0 * g1)


def test_component_index_checked():
    with pytest.raises(ValueError):
        ComponentCondition(PAIR, 2)


def test_discriminator_gradient_matches_fd():
    c = DiscriminatorCondition(init_mlp([2, 16, 16, 1], make_rng(2)))
    for x in make_rng(3).standard_normal((20, 2)):
        assert rel_err(cond_grad(c, x), fd_grad(lambda v: cond_log_likelihood(c, v), x)) < 1e-4


def test_describe_fields():
    assert MaskCondition((1,), [0.5]).describe() == {"variant": "mask", "observed": [1], "values": [0.5], "tau": 0.05}
    assert ComponentCondition(PAIR, 1).describe()["index"] == 1


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 2.0))
def test_mask_gradient_zero_off_mask(a, b, tau):
    g = cond_grad(MaskCondition((1,), [0.2], tau), [a, b])
    assert g[0] == 0.0
