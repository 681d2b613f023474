import numpy as np
import pytest

from semmtl import autodiff as ad
from semmtl.layers import ConfigError
from semmtl.sharing import AUX, MAIN, build_topology, fsn_forward, lws_gate, psn_forward
from semmtl.verify import check_sharing


def _x(rng, T=3, d=6):
    return ad.constant(rng.normal(size=(2, T, d))), np.ones((2, T), bool)


@pytest.mark.parametrize("name", ["fsn_no_private_params", "psn_main_grad_on_aux_private_zero",
                                  "lws_a2m_leaves_aux_unchanged", "lws_zero_gates_halve",
                                  "lws_gate_hand_example"])
def test_sharing_invariants(name):
    passed, detail = check_sharing()[name]
    assert passed, detail


def test_fsn_tasks_share_one_stream(rng):
    topo = build_topology("FSN", [8, 8], input_dim=6, rng=rng)
    x, mask = _x(rng)
    outs = topo.forward(x, mask)
    assert outs[MAIN][-1] is outs[AUX][-1]
    assert fsn_forward(topo, x, mask).shape == (2, 3, 8)
    assert topo.report()["private-main"] == 0


def test_psn_private_top_layers_differ(rng):
    topo = build_topology("PSN", [8, 8], input_dim=6, rng=rng)
    x, mask = _x(rng)
    outs = topo.forward(x, mask)
    assert outs[MAIN][0] is outs[AUX][0]
    assert not np.allclose(psn_forward(topo, x, MAIN, mask).value, psn_forward(topo, x, AUX, mask).value)


def test_lws_gate_hand_value():
    gm, ga = lws_gate(ad.constant(np.array([1.0, 2.0])), ad.constant(np.array([3.0])),
                      ad.constant(np.array([[0.1, -0.2]])), ad.constant(np.array([[0.5], [0.0]])))
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    np.testing.assert_allclose(gm.value, [1.0 * sig(0.3), 2.0 * sig(-0.6)], atol=1e-12)
    np.testing.assert_allclose(ga.value, [3.0 * sig(0.5)], atol=1e-12)


def test_lws_gate_shape_error():
    with pytest.raises(ad.ShapeError):
        lws_gate(ad.constant(np.ones(2)), ad.constant(np.ones(2)), ad.constant(np.ones((3, 2))),
                 ad.constant(np.ones((2, 2))))


def test_lws_private_subspace_untouched_by_gates(rng):
    topo = build_topology("LWS", [8], (4, 4), input_dim=6, rng=rng)
    x, mask = _x(rng)
    base = topo.forward(x, mask)[MAIN][0].value.copy()
    topo.gate["0"]["a2m"].value = rng.normal(size=(4, 4))
    after = topo.forward(x, mask)[MAIN][0].value
    shared, private = topo._shared_columns(8, 4)
    np.testing.assert_array_equal(base[..., private], after[..., private])
    assert not np.allclose(base[..., shared], after[..., shared])


@pytest.mark.parametrize("kind,dims,kw", [
    ("XYZ", [8], {}),
    ("PSN", [8], {}),
    ("LWS", [8], {"subspace_split": (5, 3)}),
    ("LWS", [8], {"subspace_split": (10, -2)}),
    ("FSN", [7], {}),
])
def test_invalid_topologies_raise(kind, dims, kw, rng):
    with pytest.raises(ConfigError):
        build_topology(kind, dims, input_dim=6, rng=rng, **kw)


def test_st_has_no_aux_path(rng):
    topo = build_topology("ST", [8], input_dim=6, rng=rng)
    assert topo.tasks == (MAIN,) and topo.aux_depth == 0
