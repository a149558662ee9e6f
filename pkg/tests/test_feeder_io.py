import numpy as np
import pytest

from bitvolt.feeder import (FeederFormatError, emit_feeder, parse_feeder,
                            parse_feeder_text)
from bitvolt.generator import (GeneratorSpec, generate_feeder,
                               generate_with_witness, parse_generator_spec)
from bitvolt.grid import build_matrices
from bitvolt.plant import constant_term

from conftest import box_condition, make_two_bus

MINIMAL = """\
# two buses, one line
buses=1 v0=1.0
edge 0 1 r=0.1 x=0.2
bus 1 p=-0.1 qu=0.0 qmin=-0.5 qmax=0.5 vmin=0.9025 vmax=1.1025
"""


def test_parse_minimal():
    net, cond = parse_feeder_text(MINIMAL)
    assert net.bus_count == 1
    assert net.edges == ((0, 1),)
    assert net.r[0] == 0.1 and net.x[0] == 0.2
    assert cond.p[0] == -0.1 and cond.q_max[0] == 0.5


def test_round_trip_identity_minimal():
    net, cond = parse_feeder_text(MINIMAL)
    text = emit_feeder(net, cond)
    net2, cond2 = parse_feeder_text(text)
    assert net2.edges == net.edges and net2.v0 == net.v0
    assert np.array_equal(net2.r, net.r) and np.array_equal(net2.x, net.x)
    for name in ("p", "q_u", "v_min", "v_max", "q_min", "q_max"):
        assert np.array_equal(getattr(cond2, name), getattr(cond, name)), name


def test_round_trip_identity_generated(tmp_path):
    net, cond = generate_feeder(GeneratorSpec(n_bus=17, seed=4, margin=0.05))
    path = tmp_path / "g.feeder"
    path.write_text(emit_feeder(net, cond))
    net2, cond2 = parse_feeder(path)
    assert net2.edges == net.edges
    assert np.array_equal(net2.x, net.x)
    assert np.array_equal(cond2.v_min, cond.v_min)
    assert emit_feeder(net2, cond2) == emit_feeder(net, cond)


def test_cycle_is_rejected_as_non_tree():
    text = MINIMAL.replace("buses=1", "buses=2") + \
        "edge 1 2 r=0.1 x=0.2\nbus 2 p=0 qu=0 qmin=-1 qmax=1 vmin=0.9 vmax=1.1\n"
    bad = text.replace("edge 1 2", "edge 2 1")  # 1 gets no parent, 1<-2 cycles
    with pytest.raises(FeederFormatError, match="tree"):
        parse_feeder_text(bad)


def test_empty_box_names_bus_and_line():
    text = MINIMAL.replace("qmin=-0.5 qmax=0.5", "qmin=0.6 qmax=0.5")
    with pytest.raises(FeederFormatError, match=r":4: bus 1: empty reactive box"):
        parse_feeder_text(text)


def test_unknown_key_rejected_with_line_number():
    text = MINIMAL + "bus 1 p=0 tap=1.0\n"
    with pytest.raises(FeederFormatError, match=":5:"):
        parse_feeder_text(text)


def test_unknown_record_rejected():
    with pytest.raises(FeederFormatError, match="unknown record"):
        parse_feeder_text(MINIMAL + "transformer 0 1\n")


def test_missing_bus_record():
    text = "buses=2 v0=1.0\nedge 0 1 r=0.1 x=0.2\nedge 1 2 r=0.1 x=0.2\n" \
           "bus 1 p=0 qu=0 qmin=-1 qmax=1 vmin=0.9 vmax=1.1\n"
    with pytest.raises(FeederFormatError, match=r"missing bus records.*\[2\]"):
        parse_feeder_text(text)


def test_duplicate_bus_record():
    text = MINIMAL + "bus 1 p=0 qu=0 qmin=-1 qmax=1 vmin=0.9 vmax=1.1\n"
    with pytest.raises(FeederFormatError, match="duplicate bus"):
        parse_feeder_text(text)


def test_missing_header():
    with pytest.raises(FeederFormatError, match="header"):
        parse_feeder_text("edge 0 1 r=0.1 x=0.2\n")


def test_non_numeric_value_cites_line():
    with pytest.raises(FeederFormatError, match=":3:"):
        parse_feeder_text(MINIMAL.replace("x=0.2", "x=fast"))


# --- generator ----------------------------------------------------------------

def test_generator_spec_parser():
    spec = parse_generator_spec("chain,N=5,seed=9,margin=0.07,x=0.1:0.3,band=fixed")
    assert spec.topology == "chain" and spec.n_bus == 5
    assert spec.seed == 9 and spec.margin == 0.07
    assert spec.x_range == (0.1, 0.3) and spec.band == "paper"
    with pytest.raises(ValueError):
        parse_generator_spec("ring,N=5")
    with pytest.raises(ValueError):
        parse_generator_spec("chain,N=5,power=3")
    with pytest.raises(ValueError):
        parse_generator_spec("chain")  # N missing


def test_chain_topology_reproduces_reference_network():
    spec = GeneratorSpec(n_bus=2, topology="chain", seed=0)
    net, cond = generate_feeder(spec)
    assert net.edges == ((0, 1), (1, 2))


def test_generated_instances_are_strictly_feasible():
    for seed in range(12):
        n = 5 + (seed * 7) % 40
        spec = GeneratorSpec(n_bus=n, seed=seed, margin=0.05)
        net, cond, q_hat = generate_with_witness(spec)
        model = build_matrices(net)
        v_hat = model.A @ q_hat + constant_term(model, cond)
        m = min(np.min(q_hat - cond.q_min), np.min(cond.q_max - q_hat),
                np.min(v_hat - cond.v_min), np.min(cond.v_max - v_hat))
        assert m >= 0.05 - 1e-12


def test_generated_paper_band_instance_requires_regulation():
    spec = GeneratorSpec(n_bus=30, seed=6, band="fixed",
                         r_range=(0.01, 0.04), x_range=(0.02, 0.08))
    net, cond, q_hat = generate_with_witness(spec)
    model = build_matrices(net)
    d = constant_term(model, cond)
    assert np.min(d) < np.min(cond.v_min)  # unregulated profile dips below band
    assert np.max(np.abs(q_hat)) <= 0.5


def test_generator_determinism():
    a = generate_feeder(GeneratorSpec(n_bus=9, seed=13))
    b = generate_feeder(GeneratorSpec(n_bus=9, seed=13))
    assert a[0].edges == b[0].edges
    assert np.array_equal(a[1].p, b[1].p)
    assert emit_feeder(*a) == emit_feeder(*b)
