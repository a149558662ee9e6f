import numpy as np
import pytest

from bitvolt.grid import RadialNetwork, build_matrices, voltage_map

from conftest import make_chain3, make_two_bus, random_net

# Frozen from the eigensolve oracle below: eig(A) = (1 +- sqrt(0.68)) / 2
CHAIN3_L = 22.983142938920608
CHAIN3_LAMBDA_MAX = 0.912310562561766


def test_two_bus_entries():
    model = build_matrices(make_two_bus())
    assert np.allclose(model.A, [[0.4]], atol=1e-15)
    assert np.allclose(model.B, [[0.2]], atol=1e-15)
    assert np.allclose(model.A_inv, [[2.5]], atol=1e-15)  # half the inverse reactance


def test_chain3_path_sums_and_closed_form_inverse():
    model = build_matrices(make_chain3())
    assert np.allclose(model.A, [[0.4, 0.4], [0.4, 0.6]], atol=1e-15)
    assert np.allclose(model.B, [[0.2, 0.2], [0.2, 0.3]], atol=1e-15)
    assert np.allclose(model.A_inv, [[7.5, -5.0], [-5.0, 5.0]], atol=1e-12)
    # oracle: dense inversion of the independently written-out A
    dense = np.linalg.inv(np.array([[0.4, 0.4], [0.4, 0.6]]))
    assert np.allclose(model.A_inv, dense, atol=1e-12)


def test_chain3_spectral_constants():
    model = build_matrices(make_chain3())
    # oracle: symmetric eigensolve, L = max 2(lam + 1/lam)
    eig = np.linalg.eigvalsh(np.array([[0.4, 0.4], [0.4, 0.6]]))
    assert model.eig_A == pytest.approx(eig, abs=1e-14)
    assert model.L == pytest.approx(float(np.max(2 * (eig + 1 / eig))), rel=1e-14)
    assert model.L == pytest.approx(CHAIN3_L, rel=1e-12)
    assert model.L == pytest.approx(22.98, abs=1e-2)
    assert model.lambda_max_A == pytest.approx(CHAIN3_LAMBDA_MAX, rel=1e-12)


def test_lipschitz_constant_at_least_four():
    rng = np.random.default_rng(7)
    for _ in range(20):
        model = build_matrices(random_net(rng, int(rng.integers(1, 30))))
        assert model.L >= 4.0  # lam + 1/lam >= 2 with equality only at lam = 1


def test_voltage_map_two_bus_load():
    net = make_two_bus()
    model = build_matrices(net)
    d = model.B @ np.array([-0.1]) + model.v0  # q_u = 0
    assert voltage_map(model, np.zeros(1), d) == pytest.approx([0.98])


def test_voltage_map_zero_injection_identity():
    model = build_matrices(make_chain3())
    d = np.array([1.01, 0.97])
    assert np.array_equal(voltage_map(model, np.zeros(2), d), d)


def test_voltage_map_chain3_value():
    model = build_matrices(make_chain3())
    v = voltage_map(model, np.array([0.1, 0.0]), np.ones(2))
    assert v == pytest.approx([1.04, 1.04])


def test_voltage_map_rejects_bad_shapes():
    model = build_matrices(make_chain3())
    with pytest.raises(ValueError):
        voltage_map(model, np.zeros(3), np.ones(2))
    with pytest.raises(ValueError):
        voltage_map(model, np.zeros(2), np.ones(3))


def test_random_trees_identity_and_definiteness():
    rng = np.random.default_rng(123)
    for _ in range(25):
        n = int(rng.integers(2, 51))
        model = build_matrices(random_net(rng, n))
        assert np.all(model.eig_A > 0.0)
        err = np.max(np.abs(model.A @ model.A_inv - np.eye(n)))
        assert err <= 1e-9
        assert np.array_equal(model.A, model.A.T)
        assert np.array_equal(model.B, model.B.T)


def test_inverse_sparsity_is_diagonal_plus_tree_edges():
    rng = np.random.default_rng(5)
    net = random_net(rng, 24)
    model = build_matrices(net)
    allowed = set((i, i) for i in range(24))
    for p, c in net.edges:
        if p >= 1:
            allowed.add((p - 1, c - 1))
            allowed.add((c - 1, p - 1))
    nz = set(zip(*np.nonzero(model.A_inv)))
    assert nz == allowed


def test_relabeling_equivariance():
    rng = np.random.default_rng(11)
    net = random_net(rng, 12)
    model = build_matrices(net)
    perm = rng.permutation(12) + 1  # new label of bus b is perm[b-1]
    relabel = lambda b: 0 if b == 0 else int(perm[b - 1])
    net2 = RadialNetwork(bus_count=12,
                         edges=tuple((relabel(p), relabel(c)) for p, c in net.edges),
                         r=net.r, x=net.x, v0=net.v0)
    model2 = build_matrices(net2)
    for i in range(12):
        for j in range(12):
            pi, pj = perm[i] - 1, perm[j] - 1
            assert model2.A[pi, pj] == pytest.approx(model.A[i, j], abs=1e-14)
            assert model2.A_inv[pi, pj] == pytest.approx(model.A_inv[i, j], abs=1e-12)


@pytest.mark.parametrize("n,edges", [
    (2, ((0, 1), (1, 2), (2, 1))),   # bus with two parents (and extra edge)
    (3, ((0, 1), (2, 3), (3, 2))),   # cycle detached from the root
    (2, ((0, 1),)),                  # wrong edge count for N=2
    (2, ((0, 1), (2, 2))),           # self loop
])
def test_rejects_non_trees(n, edges):
    with pytest.raises(ValueError):
        RadialNetwork(bus_count=n, edges=edges,
                      r=[0.1] * len(edges), x=[0.2] * len(edges), v0=1.0)


def test_rejects_bad_impedances():
    with pytest.raises(ValueError, match="positive"):
        RadialNetwork(1, ((0, 1),), r=[0.1], x=[0.0], v0=1.0)
    with pytest.raises(ValueError, match="nonnegative"):
        RadialNetwork(1, ((0, 1),), r=[-0.1], x=[0.2], v0=1.0)


def test_zero_resistance_lines_allowed():
    model = build_matrices(RadialNetwork(1, ((0, 1),), r=[0.0], x=[0.2], v0=1.0))
    assert model.B[0, 0] == 0.0
