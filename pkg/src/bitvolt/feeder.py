"""Line-oriented feeder file format.

Grammar (``#`` starts a comment, blank lines ignored)::

    buses=N v0=<real>
    edge <parent> <child> r=<real> x=<real>        # one per edge
    bus <id> p=<real> qu=<real> qmin=<real> qmax=<real> vmin=<real> vmax=<real>

The header comes first; exactly N ``edge`` and N ``bus`` records must
follow, one per branch bus.  Unknown keys are rejected.  Error messages
cite the offending line number.
"""

from __future__ import annotations

import numpy as np

from .grid import RadialNetwork
from .plant import OperatingCondition

__all__ = ["FeederFormatError", "parse_feeder", "parse_feeder_text", "emit_feeder"]

_BUS_KEYS = ("p", "qu", "qmin", "qmax", "vmin", "vmax")


class FeederFormatError(ValueError):
    pass


def _fail(source, lineno, msg):
    where = f"{source}:{lineno}: " if lineno else f"{source}: "
    raise FeederFormatError(where + msg)


def _keyvals(fields, allowed, source, lineno):
    out = {}
    for field in fields:
        if "=" not in field:
            _fail(source, lineno, f"expected key=value, got {field!r}")
        key, val = field.split("=", 1)
        if key not in allowed:
            _fail(source, lineno, f"unknown key {key!r} (allowed: {', '.join(allowed)})")
        if key in out:
            _fail(source, lineno, f"duplicate key {key!r}")
        try:
            out[key] = float(val)
        except ValueError:
            _fail(source, lineno, f"value of {key!r} is not a number: {val!r}")
    missing = [k for k in allowed if k not in out]
    if missing:
        _fail(source, lineno, f"missing keys: {', '.join(missing)}")
    return out


def parse_feeder_text(text: str, source: str = "<feeder>"):
    header = None
    edges = []
    edge_r = []
    edge_x = []
    bus_rows: dict[int, dict] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if fields[0].startswith("buses="):
            if header is not None:
                _fail(source, lineno, "duplicate header record")
            header = _keyvals(fields, ("buses", "v0"), source, lineno)
            if header["buses"] != int(header["buses"]) or header["buses"] < 1:
                _fail(source, lineno, "buses must be a positive integer")
        elif fields[0] == "edge":
            if header is None:
                _fail(source, lineno, "edge record before header")
            if len(fields) != 5:
                _fail(source, lineno, "edge record needs: edge <parent> <child> r=<v> x=<v>")
            try:
                parent, child = int(fields[1]), int(fields[2])
            except ValueError:
                _fail(source, lineno, "edge endpoints must be integers")
            kv = _keyvals(fields[3:], ("r", "x"), source, lineno)
            edges.append((parent, child))
            edge_r.append(kv["r"])
            edge_x.append(kv["x"])
        elif fields[0] == "bus":
            if header is None:
                _fail(source, lineno, "bus record before header")
            try:
                bus = int(fields[1])
            except (IndexError, ValueError):
                _fail(source, lineno, "bus record needs an integer bus id")
            if bus in bus_rows:
                _fail(source, lineno, f"duplicate bus record for bus {bus}")
            kv = _keyvals(fields[2:], _BUS_KEYS, source, lineno)
            kv["_line"] = lineno
            bus_rows[bus] = kv
        else:
            _fail(source, lineno, f"unknown record type {fields[0]!r}")

    if header is None:
        _fail(source, 0, "missing header record 'buses=N v0=<real>'")
    n = int(header["buses"])
    try:
        net = RadialNetwork(bus_count=n, edges=tuple(edges),
                            r=np.asarray(edge_r), x=np.asarray(edge_x),
                            v0=header["v0"])
    except ValueError as exc:
        _fail(source, 0, f"invalid network: {exc}")

    missing = sorted(set(range(1, n + 1)) - set(bus_rows))
    if missing:
        _fail(source, 0, f"missing bus records for buses {missing}")
    extra = sorted(set(bus_rows) - set(range(1, n + 1)))
    if extra:
        _fail(source, bus_rows[extra[0]]["_line"],
              f"bus id {extra[0]} outside 1..{n}")

    def col(key):
        return np.asarray([bus_rows[b][key] for b in range(1, n + 1)])

    for b in range(1, n + 1):
        row = bus_rows[b]
        if row["qmin"] > row["qmax"]:
            _fail(source, row["_line"], f"bus {b}: empty reactive box (qmin > qmax)")
        if row["vmin"] > row["vmax"]:
            _fail(source, row["_line"], f"bus {b}: empty voltage box (vmin > vmax)")
    cond = OperatingCondition(p=col("p"), q_u=col("qu"),
                              v_min=col("vmin"), v_max=col("vmax"),
                              q_min=col("qmin"), q_max=col("qmax"))
    return net, cond


def parse_feeder(path):
    """Parse a feeder file into a validated (network, condition) pair."""
    with open(path) as fh:
        return parse_feeder_text(fh.read(), source=str(path))


def emit_feeder(net: RadialNetwork, cond: OperatingCondition) -> str:
    """Serialize an instance; floats use repr so parsing round-trips exactly."""
    f = lambda x: repr(float(x))
    lines = [f"buses={net.bus_count} v0={f(net.v0)}"]
    for (p, c), r_e, x_e in zip(net.edges, net.r, net.x):
        lines.append(f"edge {p} {c} r={f(r_e)} x={f(x_e)}")
    for b in range(net.bus_count):
        lines.append(
            f"bus {b + 1} p={f(cond.p[b])} qu={f(cond.q_u[b])} "
            f"qmin={f(cond.q_min[b])} qmax={f(cond.q_max[b])} "
            f"vmin={f(cond.v_min[b])} vmax={f(cond.v_max[b])}")
    return "\n".join(lines) + "\n"
