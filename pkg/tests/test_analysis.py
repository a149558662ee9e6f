import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitvolt import analysis
from bitvolt.analysis import (Certificates, build_M, descent_increment,
                              dual_gradient, dual_objective, effective_bounds,
                              feasibility, feasibility_from_dual,
                              iteration_bound, merit_V, pack_dual,
                              prescribe_steps, primal_from_dual,
                              projection_identities,
                              projection_identity_violations, step_size_caps)
from bitvolt.control import ControllerParams, Variant
from bitvolt.grid import build_matrices
from bitvolt.plant import constant_term
from bitvolt.sim import Scenario, StaticSchedule, run_static

from conftest import box_condition, make_chain3, make_two_bus, random_net

# Frozen oracle values for the reference chain (eigensolve / direct formula)
CHAIN3_L = 22.983142938920608
CHAIN3_ALPHA = 0.04351015014167442       # 1 / L
CHAIN3_BETA = 0.0003845790276952851      # 0.1 / (4 * 2^1.5 * L)
CHAIN3_DELTA = 6.79846095963663e-06      # = eps^2 / (16 N^2 L) at these steps
CHAIN3_BOUND = 67097                     # ceil(16 N^3 L Q lam_max / eps^2)


@pytest.fixture
def chain3_model():
    return build_matrices(make_chain3())


@pytest.fixture
def loaded_cond():
    return box_condition(2, p=[-0.8, -0.8])


# --- feasibility metric ------------------------------------------------------

def test_feasibility_interior_is_zero(chain3_model, loaded_cond):
    q = np.zeros(2)
    v = np.array([1.0, 1.0])
    assert feasibility(q, v, loaded_cond) == 0.0


def test_feasibility_single_violation(loaded_cond):
    q = np.array([0.6, 0.0])  # exceeds the 0.5 cap by 0.1
    v = np.array([1.0, 1.0])
    assert feasibility(q, v, loaded_cond) == pytest.approx(0.1)


def test_feasibility_two_violations_euclidean(loaded_cond):
    q = np.array([0.8, 0.0])              # +0.3 above the cap
    v = np.array([1.0, 0.5025])           # 0.4 below the band
    assert feasibility(q, v, loaded_cond) == pytest.approx(0.5)  # sqrt(.09+.16)


# --- dual machinery ----------------------------------------------------------

def test_dual_gradient_at_zero(chain3_model, loaded_cond):
    d = constant_term(chain3_model, loaded_cond)
    g = dual_gradient(np.zeros(8), chain3_model, loaded_cond)
    expected = np.concatenate((loaded_cond.v_min - d, d - loaded_cond.v_max,
                               loaded_cond.q_min, -loaded_cond.q_max))
    assert np.array_equal(g, expected)


def test_dual_gradient_nonpositive_at_feasible_origin(chain3_model):
    cond = box_condition(2)  # no load: v(0) = 1 strictly inside the band
    g = dual_gradient(np.zeros(8), chain3_model, cond)
    assert np.all(g <= 0.0)


def test_dual_gradient_single_bus_substitution():
    model = build_matrices(make_two_bus())
    cond = box_condition(1, p=[-0.1])
    z = pack_dual([0.1], [0.0], [0.2], [0.0])
    q = primal_from_dual(z, model)
    assert q == pytest.approx([0.6])
    g = dual_gradient(z, model, cond)
    v = 0.4 * 0.6 + 0.98
    assert g == pytest.approx([0.9025 - v, v - 1.1025, -0.5 - 0.6, 0.6 - 0.5])


def test_dual_objective_zero_at_origin(chain3_model, loaded_cond):
    assert dual_objective(np.zeros(8), chain3_model, loaded_cond) == 0.0


def test_dual_objective_bounded_by_capacity_energy(chain3_model, loaded_cond):
    # D(z) <= D* <= lam_max * N * Q for all z >= 0
    cap_bound = chain3_model.lambda_max_A * 2 * 0.25
    rng = np.random.default_rng(0)
    for _ in range(200):
        z = rng.uniform(0.0, 5.0, size=8)
        assert dual_objective(z, chain3_model, loaded_cond) <= cap_bound + 1e-12


def test_dual_gradient_matches_finite_differences(chain3_model, loaded_cond):
    rng = np.random.default_rng(9)
    h = 1e-6
    for _ in range(5):
        z = rng.uniform(0.05, 2.0, size=8)
        g = dual_gradient(z, chain3_model, loaded_cond)
        fd = np.zeros(8)
        for i in range(8):
            zp = z.copy(); zp[i] += h
            zm = z.copy(); zm[i] -= h
            fd[i] = (dual_objective(zp, chain3_model, loaded_cond)
                     - dual_objective(zm, chain3_model, loaded_cond)) / (2 * h)
        assert np.max(np.abs(fd - g)) <= 1e-6 * max(1.0, np.max(np.abs(g)))


# --- merit function ----------------------------------------------------------

def _converged_dual(model, cond, rounds=60000):
    gamma = 1.0 / model.L
    params = ControllerParams(alpha=gamma, beta=gamma,
                              variant=Variant.BASELINE, gamma=gamma)
    scn = Scenario(kind=StaticSchedule(rounds=rounds), params=params,
                   record_stride=0, store_scalars=False)
    net = make_chain3()
    return run_static(net, cond, scn, model).final_dual()


def test_merit_vanishes_at_converged_baseline_point(chain3_model, loaded_cond):
    z_star = _converged_dual(chain3_model, loaded_cond)
    assert merit_V(z_star, chain3_model, loaded_cond) <= 1e-6


def test_merit_dominates_feasibility_on_random_duals(chain3_model, loaded_cond):
    rng = np.random.default_rng(21)
    for _ in range(1000):
        scale = 10.0 ** rng.uniform(-3, 1)
        z = rng.uniform(0.0, scale, size=8)
        fes_lin, merit = feasibility_from_dual(z, chain3_model, loaded_cond)
        assert fes_lin <= merit


def test_merit_at_origin_equals_positive_gradient_norm(chain3_model, loaded_cond):
    g = dual_gradient(np.zeros(8), chain3_model, loaded_cond)
    expected = float(np.linalg.norm(np.maximum(g, 0.0)))
    assert merit_V(np.zeros(8), chain3_model, loaded_cond) == pytest.approx(expected, rel=1e-15)
    assert expected > 0.0  # origin is not optimal for a loaded feeder


def test_merit_rejects_negative_duals(chain3_model, loaded_cond):
    with pytest.raises(ValueError):
        merit_V(np.full(8, -0.1), chain3_model, loaded_cond)


# --- step sizes, increments, bounds ------------------------------------------

def test_prescribed_steps_chain3(chain3_model, loaded_cond):
    pres = prescribe_steps(chain3_model, loaded_cond, 0.1)
    assert pres.alpha == pytest.approx(CHAIN3_ALPHA, rel=1e-12)
    assert pres.beta == pytest.approx(CHAIN3_BETA, rel=1e-12)
    # oracle: direct formula evaluation
    assert pres.alpha == pytest.approx(1.0 / CHAIN3_L, rel=1e-14)
    assert pres.beta == pytest.approx(0.1 / (4 * 2 ** 1.5 * CHAIN3_L), rel=1e-14)


def test_prescribed_steps_always_satisfy_side_conditions():
    rng = np.random.default_rng(4)
    for _ in range(20):
        model = build_matrices(random_net(rng, int(rng.integers(2, 25))))
        eps = 10.0 ** rng.uniform(-3, 0)
        pres = prescribe_steps(model, None, eps)
        n, L = model.n_bus, model.L
        assert pres.alpha < 2.0 / L
        assert pres.beta < eps / (2 * n ** 1.5 * L)
        assert pres.beta < np.sqrt(pres.alpha * (1 - L * pres.alpha / 2)
                                   * eps ** 2 / (2 * n * L))


def test_prescribe_steps_rejects_bad_epsilon(chain3_model):
    for eps in (0.0, -1.0, 1.5):
        with pytest.raises(ValueError):
            prescribe_steps(chain3_model, None, eps)


def test_descent_increment_chain3(chain3_model):
    delta = descent_increment(CHAIN3_ALPHA, CHAIN3_BETA, 0.1, chain3_model)
    assert delta == pytest.approx(CHAIN3_DELTA, rel=1e-12)
    # oracle: the closed form under the certified steps
    assert delta == pytest.approx(0.1 ** 2 / (16 * 4 * chain3_model.L), rel=1e-12)


def test_descent_increment_vanishes_at_beta_cap(chain3_model):
    n, L = 2, chain3_model.L
    beta_edge = 0.1 / (2 * n ** 1.5 * L)  # first arm of the beta cap
    delta = descent_increment(CHAIN3_ALPHA, beta_edge, 0.1, chain3_model)
    assert delta == pytest.approx(0.0, abs=1e-18)


def test_descent_increment_positive_inside_admissible_region():
    rng = np.random.default_rng(17)
    tried = 0
    while tried < 1000:
        model = build_matrices(random_net(rng, int(rng.integers(2, 21))))
        eps = 10.0 ** rng.uniform(-2, 0)
        for _ in range(10):
            alpha = rng.uniform(0.0, 2.0 / model.L)
            if alpha <= 0.0:
                continue
            _, beta_cap = step_size_caps(model, eps, alpha)
            beta = rng.uniform(0.0, beta_cap)
            if beta <= 0.0:
                continue
            assert descent_increment(alpha, beta, eps, model) > 0.0
            tried += 1


def test_iteration_bound_chain3(chain3_model, loaded_cond):
    assert iteration_bound(chain3_model, loaded_cond, 0.1) == CHAIN3_BOUND


def test_iteration_bound_scalings(chain3_model, loaded_cond):
    n, L, lam = 2, chain3_model.L, chain3_model.lambda_max_A
    raw = lambda eps, nn: 16 * nn ** 3 * L * 0.25 * lam / eps ** 2
    assert raw(0.1, 2) / raw(1.0, 2) == pytest.approx(100.0, rel=1e-12)
    assert raw(0.1, 4) / raw(0.1, 2) == 8.0
    b1 = iteration_bound(chain3_model, loaded_cond, 1.0)
    assert b1 == int(np.ceil(raw(1.0, 2)))


def test_iteration_bound_rho_mode(chain3_model, loaded_cond):
    # exact-solution mode replaces the accuracy target by rho
    assert (iteration_bound(chain3_model, loaded_cond, 1.0, rho=0.1)
            == iteration_bound(chain3_model, loaded_cond, 0.1))


# --- gradient affinity matrix -------------------------------------------------

def test_build_M_single_bus_spectrum():
    model = build_matrices(make_two_bus())
    M = build_M(model)
    eig = np.linalg.eigvalsh(M)
    assert eig[0] == pytest.approx(-5.8, abs=1e-12)  # -2 (0.4 + 2.5)
    assert np.max(np.abs(eig[1:])) <= 1e-12


def test_build_M_rank_and_sign(chain3_model):
    M = build_M(chain3_model)
    assert np.array_equal(M, M.T)
    sv = np.linalg.svd(M, compute_uv=False)
    assert np.sum(sv > 1e-9 * sv[0]) == 2
    assert np.max(np.linalg.eigvalsh(M)) <= 1e-12


def test_gradient_affinity(chain3_model, loaded_cond):
    M = build_M(chain3_model)
    g0 = dual_gradient(np.zeros(8), chain3_model, loaded_cond)
    rng = np.random.default_rng(2)
    for _ in range(20):
        z = rng.uniform(0.0, 3.0, size=8)
        g = dual_gradient(z, chain3_model, loaded_cond)
        assert np.max(np.abs(g - (M @ z + g0))) <= 1e-9


def test_build_M_spectrum_matches_formula(chain3_model):
    M = build_M(chain3_model)
    eig = np.sort(np.linalg.eigvalsh(M))
    expected = np.sort(-2.0 * (chain3_model.eig_A + 1.0 / chain3_model.eig_A))
    assert np.max(np.abs(eig[:2] - expected) / np.abs(expected)) <= 1e-12


# --- projection identity kernels ----------------------------------------------

def test_projection_identities_hand_example():
    # x=1, z=-3, b=0.5: 0.5*|1 - [1-3]+| = 0.5 <= |1 - [1-1.5]+| = 1
    assert projection_identities(1.0, -3.0, 0.5, a1=0.7, a2=0.2)


def test_projection_identities_zero_direction():
    assert projection_identities(2.0, 0.0, 0.3, a1=0.0, a2=1.0)


def test_projection_identities_positive_step():
    # x=2, z=1, a2=0.3: z * ([x + 0.3]+ - x) = 0.3 >= 0
    assert projection_identities(2.0, 1.0, 1.0, a1=0.5, a2=0.3)


def test_projection_identities_enforce_precondition():
    with pytest.raises(ValueError):
        projection_identities(1.0, -0.5, 0.5, a1=0.9, a2=0.1)  # a1 > |x-[x+z]+|
    with pytest.raises(ValueError):
        projection_identities(-1.0, 0.5, 0.5, a1=0.0, a2=0.1)
    with pytest.raises(ValueError):
        projection_identities(1.0, 0.5, 1.5, a1=0.0, a2=0.1)


def test_projection_identities_random_batch():
    rng = np.random.default_rng(33)
    k = 20000
    scale = 10.0 ** rng.uniform(-3, 3, size=k)
    x = np.abs(rng.normal(size=k)) * scale
    z = rng.normal(size=k) * scale
    base = np.where(x + z >= 0.0, np.abs(z), x)
    assert projection_identity_violations(
        x, z, rng.uniform(0, 1, size=k), rng.uniform(0, 1, size=k) * base,
        np.abs(rng.normal(size=k)) * scale) == 0


@given(x=st.floats(min_value=0, max_value=1e6),
       z=st.floats(allow_nan=False, allow_infinity=False,
                   min_value=-1e6, max_value=1e6),
       b=st.floats(min_value=0, max_value=1.0),
       u=st.floats(min_value=0, max_value=1.0),
       a2=st.floats(min_value=0, max_value=1e6))
def test_projection_identities_property(x, z, b, u, a2):
    base = abs(z) if x + z >= 0.0 else x
    assert projection_identities(x, z, b, a1=u * base, a2=a2)


# --- certificates -------------------------------------------------------------

def test_certificates_reject_domination_violation():
    with pytest.raises(ValueError):
        Certificates(fes=0.2, V=0.1, D=0.0, delta=1e-6, iteration_bound=10,
                     step_alpha=0.1, step_beta=1e-4, alpha_cap=0.2, beta_cap=1e-3)


def test_effective_bounds_reject_emptying_rho(loaded_cond):
    with pytest.raises(ValueError):
        effective_bounds(loaded_cond, rho=0.6)
