"""Built-in cases: packaged data files and constructed study networks."""

from __future__ import annotations

import math
from importlib import resources

import numpy as np

from .casefile import (
    Branch, Bus, BusKind, FixedShunt, Generator, Load, NetworkCase, validate,
    parse_matpower,
)


def load_packaged_case(name: str) -> NetworkCase:
    text = resources.files("pffa.data").joinpath(f"{name}.m").read_text()
    return parse_matpower(text, name=name)


def make_two_bus(p_load: float = 0.1, q_load: float = 0.05,
                 g: float = 1.0, b: float = -10.0) -> NetworkCase:
    """Slack feeding one PQ load over a single line with admittance g + jb."""
    y = 1.0 / complex(g, b)
    return validate(NetworkCase(
        name="two_bus",
        buses=(Bus(1, BusKind.SLACK, v_set=1.0), Bus(2, BusKind.PQ)),
        branches=(Branch(1, 2, r=y.real, x=y.imag),),
        loads=(Load(2, p_load, q_load),),
    ))


def make_radial_3bus(p_load: float = 0.8, q_load: float = 0.3,
                     r: float = 0.05, x: float = 0.20) -> NetworkCase:
    """Slack - line - middle bus - line - load bus, no charging, no middle load.

    With identical lossless-charging lines the chain reduces to a single
    series impedance 2(r + jx), so the loading factor at which the load bus
    voltage collapses has the closed maximum-power-transfer form used by the
    tests (see radial_3bus_collapse_loading).
    """
    return validate(NetworkCase(
        name="radial3",
        buses=(Bus(1, BusKind.SLACK, v_set=1.0), Bus(2, BusKind.PQ),
               Bus(3, BusKind.PQ)),
        branches=(Branch(1, 2, r=r, x=x), Branch(2, 3, r=r, x=x)),
        loads=(Load(3, p_load, q_load),),
    ))


def radial_3bus_collapse_loading(case: NetworkCase) -> float:
    """Analytic collapse loading factor for make_radial_3bus networks.

    Solvability of a PQ load P + jQ behind total impedance R + jX from a
    1.0 p.u. source requires the voltage-magnitude quartic to keep a real
    root; the discriminant vanishes at loading eta = 1 / (2 (A + B)) with
    A = P R + Q X and B = |S| |Z|.
    """
    (load,) = case.loads
    branches = [br for br in case.branches if br.in_service]
    rr = sum(br.r for br in branches)
    xx = sum(br.x for br in branches)
    a = load.p * rr + load.q * xx
    b = math.hypot(load.p, load.q) * math.hypot(rr, xx)
    return 1.0 / (2.0 * (a + b))


def make_parallel_pair(p_load: float = 1.6, x_line: float = 0.4,
                       x_feed: float = 0.02) -> NetworkCase:
    """Slack - stiff feeder - bus 2 - two parallel reactive lines - load bus.

    A lossless line of reactance x carries at most 1/(2x) p.u. to a unity
    source, so with the defaults the pair carries the 1.6 p.u. load but a
    single survivor (limit 1.25 p.u.) cannot: dropping either parallel line
    makes the case infeasible with the deficiency at the load bus.
    """
    return validate(NetworkCase(
        name="parallel3",
        buses=(Bus(1, BusKind.SLACK, v_set=1.0), Bus(2, BusKind.PQ),
               Bus(3, BusKind.PQ)),
        branches=(Branch(1, 2, r=0.0, x=x_feed),
                  Branch(2, 3, r=0.0, x=x_line),
                  Branch(2, 3, r=0.0, x=x_line)),
        loads=(Load(3, p_load, 0.0),),
    ))


def make_pv_toy(p_load: float = 0.9, q_load: float = 0.4,
                q_min: float = -0.2, q_max: float = 0.25) -> NetworkCase:
    """Slack, one PV generator, one load bus; tight Q limits for switch tests.

    At the default loading the PV machine needs more reactive output than
    q_max allows, so outer-loop limit enforcement must pin it and let the
    controlled voltage sag.
    """
    return validate(NetworkCase(
        name="pv_toy",
        buses=(Bus(1, BusKind.SLACK, v_set=1.02), Bus(2, BusKind.PV),
               Bus(3, BusKind.PQ)),
        branches=(Branch(1, 2, r=0.02, x=0.12, b_charge=0.02),
                  Branch(2, 3, r=0.04, x=0.18),
                  Branch(1, 3, r=0.05, x=0.25)),
        generators=(Generator(2, p_set=0.4, q_min=q_min, q_max=q_max,
                              v_set=1.05),),
        loads=(Load(3, p_load, q_load),),
    ))


def make_mixed_demo(with_transformer: bool = True) -> NetworkCase:
    """Five-bus network exercising every element type in one case."""
    branches = [
        Branch(1, 2, r=0.02, x=0.10, b_charge=0.04),
        Branch(2, 3, r=0.03, x=0.15, b_charge=0.02),
        Branch(2, 4, r=0.045, x=0.22),
        Branch(3, 5, r=0.04, x=0.20),
        Branch(4, 5, r=0.06, x=0.24),
    ]
    if with_transformer:
        branches.append(Branch(1, 4, r=0.005, x=0.09, tap=0.98,
                               shift=math.radians(2.0)))
    return validate(NetworkCase(
        name="mixed5",
        buses=(Bus(1, BusKind.SLACK, v_set=1.04), Bus(2, BusKind.PV),
               Bus(3, BusKind.PQ), Bus(4, BusKind.PQ), Bus(5, BusKind.PQ)),
        branches=tuple(branches),
        generators=(Generator(2, p_set=0.5, q_min=-1.0, q_max=1.0,
                              v_set=1.03),),
        loads=(Load(3, 0.45, 0.15), Load(4, 0.4, 0.05), Load(5, 0.6, 0.2)),
        shunts=(FixedShunt(5, g=0.0, b=0.15),),
    ))


def make_synthetic_grid(n_rings: int = 8, ring_size: int = 12,
                        seed: int = 0) -> NetworkCase:
    """Deterministic medium-size meshed network for scale and homotopy tests.

    Concentric rings tied radially, PV machines sprinkled every few buses,
    loads everywhere else. Sized so total demand stays comfortably inside
    the generation capability (the case is feasible by construction).
    """
    rng = np.random.default_rng(seed)
    n = n_rings * ring_size
    buses: list[Bus] = [Bus(1, BusKind.SLACK, v_set=1.03)]
    gens: list[Generator] = []
    loads: list[Load] = []
    for i in range(2, n + 1):
        if i % 7 == 3:
            buses.append(Bus(i, BusKind.PV))
            gens.append(Generator(
                i, p_set=round(0.3 + 0.2 * rng.random(), 4),
                q_min=-1.5, q_max=1.5,
                v_set=round(1.0 + 0.03 * rng.random(), 4)))
        else:
            buses.append(Bus(i, BusKind.PQ))
            loads.append(Load(i, p=round(0.02 + 0.05 * rng.random(), 4),
                              q=round(0.005 + 0.02 * rng.random(), 4)))

    def bid(ring: int, pos: int) -> int:
        return ring * ring_size + pos % ring_size + 1

    branches: list[Branch] = []
    for ring in range(n_rings):
        for pos in range(ring_size):
            r = round(0.01 + 0.01 * rng.random(), 5)
            branches.append(Branch(bid(ring, pos), bid(ring, pos + 1),
                                   r=r, x=4 * r, b_charge=0.01))
        if ring:
            for pos in range(0, ring_size, 3):
                r = round(0.008 + 0.008 * rng.random(), 5)
                branches.append(Branch(bid(ring - 1, pos), bid(ring, pos),
                                       r=r, x=5 * r))
    return validate(NetworkCase(
        name=f"synthetic_{n}", buses=tuple(buses), branches=tuple(branches),
        generators=tuple(gens), loads=tuple(loads),
    ))


BUILTIN_BUILDERS = {
    "case14": lambda: load_packaged_case("case14"),
    "two_bus": make_two_bus,
    "radial3": make_radial_3bus,
    "parallel3": make_parallel_pair,
    "pv_toy": make_pv_toy,
    "mixed5": make_mixed_demo,
    "synthetic96": make_synthetic_grid,
}


def builtin_case(name: str) -> NetworkCase:
    try:
        return BUILTIN_BUILDERS[name]()
    except KeyError:
        raise KeyError(
            f"unknown builtin case {name!r}; available: "
            + ", ".join(sorted(BUILTIN_BUILDERS))
        ) from None
