#!/usr/bin/env python3
"""Writes the bundled case files under data/.

two_bus.case    minimal slack + PQ pair used by closed-form checks
five_bus.case   small meshed system with two 6-node feeders and one IBR
ieee30_37.case  IEEE 30-bus transmission system, 20 of its 21 loads backed by
                scaled copies of an IEEE 37-node style feeder with PV DERs

The IEEE 30-bus data follow the standard published tables; transformer taps and
bus shunts are dropped because the case schema has no fields for them.
Generators at buses 5, 8, 11 and 13 get active ratings so that every unit can
be dispatched by the scenario sampler.
"""
import json
import math
import pathlib
import sys

OUT = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else pathlib.Path(__file__).resolve().parent.parent / "data")


def bus(i, kind, load_p=0.0, load_q=0.0, v_min=0.94, v_max=1.06):
    return {"id": i, "kind": kind, "v_min": v_min, "v_max": v_max, "load_p": load_p, "load_q": load_q}


def branch(i, f, t, r, x, b=0.0):
    return {"id": i, "from": f, "to": t, "r": r, "x": x, "b": b, "in_service": True}


def write(name, doc):
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / name, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


# ----------------------------------------------------------------------------
def two_bus():
    return {
        "base_mva": 100.0,
        "slack_bus": 1,
        "transmission": {
            "buses": [bus(1, "slack", v_min=0.5, v_max=1.5), bus(2, "pq", 50.0, 0.0, v_min=0.5, v_max=1.5)],
            "branches": [branch(1, 1, 2, 0.0, 0.1)],
            "generators": [{"bus": 1, "p": 0.0, "v_set": 1.0, "q_min": -999.0, "q_max": 999.0, "p_max": 2000.0}],
            "ibrs": [],
        },
        "feeders": [],
        "boundary": [],
    }


def small_feeder(fid, scale):
    # 0 -- 1 -- 2 -- 3
    #      |
    #      4 -- 5
    loads = {
        0: ([0, 0, 0], [0, 0, 0]),
        1: ([300, 250, 350], [120, 100, 140]),
        2: ([450, 500, 400], [180, 200, 160]),
        3: ([350, 300, 400], [140, 120, 160]),
        4: ([250, 300, 200], [100, 120, 80]),
        5: ([400, 350, 450], [160, 140, 180]),
    }
    nodes = []
    for n in range(6):
        p, q = loads[n]
        nodes.append({"id": n, "p": [v * scale for v in p], "q": [v * scale for v in q],
                      "v_min": 0.95, "v_max": 1.05})
    edges = [
        {"from": 0, "to": 1, "r": 0.004, "x": 0.008},
        {"from": 1, "to": 2, "r": 0.006, "x": 0.010},
        {"from": 2, "to": 3, "r": 0.008, "x": 0.012},
        {"from": 1, "to": 4, "r": 0.006, "x": 0.010},
        {"from": 4, "to": 5, "r": 0.008, "x": 0.012},
    ]
    ders = [{"node": 3, "p": 400.0 * scale, "s": 800.0 * scale},
            {"node": 5, "p": 300.0 * scale, "s": 600.0 * scale}]
    return {"id": fid, "base_kva": 5000.0, "base_kv": 12.47, "tap_min": 0.9, "tap_max": 1.1,
            "tap_steps": 32, "nodes": nodes, "edges": edges, "ders": ders}


def five_bus():
    buses = [
        bus(1, "slack", v_min=0.9, v_max=1.1),
        bus(2, "pv", 10.0, 5.0, v_min=0.9, v_max=1.1),
        bus(3, "pq", v_min=0.9, v_max=1.1),
        bus(4, "pq", v_min=0.9, v_max=1.1),
        bus(5, "pv", 10.0, 3.0, v_min=0.9, v_max=1.1),
    ]
    branches = [
        branch(1, 1, 2, 0.02, 0.06, 0.03),
        branch(2, 1, 3, 0.05, 0.19, 0.02),
        branch(3, 2, 3, 0.06, 0.17, 0.02),
        branch(4, 2, 4, 0.06, 0.18, 0.02),
        branch(5, 3, 4, 0.01, 0.04, 0.01),
        branch(6, 4, 5, 0.03, 0.10, 0.01),
    ]
    gens = [
        {"bus": 1, "p": 0.0, "v_set": 1.04, "q_min": -100.0, "q_max": 150.0, "p_max": 400.0},
        {"bus": 2, "p": 40.0, "v_set": 1.02, "q_min": -30.0, "q_max": 40.0, "p_max": 100.0},
    ]
    ibrs = [{"bus": 5, "p": 15.0, "icr": 30.0, "kind": "solar", "v_set": 1.01}]
    return {
        "base_mva": 100.0,
        "slack_bus": 1,
        "transmission": {"buses": buses, "branches": branches, "generators": gens, "ibrs": ibrs},
        "feeders": [small_feeder("f3", 1.0), small_feeder("f4", 1.0)],
        "boundary": [
            {"tx_bus": 3, "feeder": "f3", "beta": 10, "kv_tx": 138.0, "kv_dx": 12.47},
            {"tx_bus": 4, "feeder": "f4", "beta": 12, "kv_tx": 138.0, "kv_dx": 12.47},
        ],
    }


# ----------------------------------------------------------------------------
# IEEE 37-node style feeder (topology of the IEEE 37 node test feeder, node 799
# is the substation; spot loads per phase in kW / kVAr).
IEEE37_EDGES = [
    (799, 701, 1850), (701, 702, 960), (702, 705, 400), (702, 713, 360), (702, 703, 1320),
    (703, 727, 240), (703, 730, 600), (704, 714, 80), (704, 720, 800), (705, 742, 320),
    (705, 712, 240), (706, 725, 280), (707, 724, 760), (707, 722, 120), (708, 733, 320),
    (708, 732, 320), (709, 731, 600), (709, 708, 320), (710, 735, 200), (710, 736, 1280),
    (711, 741, 400), (711, 740, 200), (713, 704, 520), (714, 718, 520), (720, 707, 920),
    (720, 706, 600), (727, 744, 280), (730, 709, 200), (733, 734, 560), (734, 737, 640),
    (734, 710, 520), (737, 738, 400), (738, 711, 400), (744, 728, 200), (744, 729, 280),
    (709, 775, 50),
]
IEEE37_LOADS = {
    701: ((140, 140, 350), (70, 70, 175)), 712: ((0, 0, 85), (0, 0, 40)), 713: ((0, 0, 85), (0, 0, 40)),
    714: ((17, 21, 0), (8, 10, 0)), 718: ((85, 0, 0), (40, 0, 0)), 720: ((0, 0, 85), (0, 0, 40)),
    722: ((0, 140, 21), (0, 70, 10)), 724: ((0, 42, 0), (0, 21, 0)), 725: ((0, 42, 0), (0, 21, 0)),
    727: ((0, 0, 42), (0, 0, 21)), 728: ((42, 42, 42), (21, 21, 21)), 729: ((42, 0, 0), (21, 0, 0)),
    730: ((0, 0, 85), (0, 0, 40)), 731: ((0, 85, 0), (0, 40, 0)), 732: ((0, 0, 42), (0, 0, 21)),
    733: ((85, 0, 0), (40, 0, 0)), 734: ((0, 0, 42), (0, 0, 21)), 735: ((0, 0, 85), (0, 0, 40)),
    736: ((0, 42, 0), (0, 21, 0)), 737: ((140, 0, 0), (70, 0, 0)), 738: ((126, 0, 0), (62, 0, 0)),
    740: ((0, 0, 85), (0, 0, 40)), 741: ((0, 0, 42), (0, 0, 21)), 742: ((8, 85, 0), (4, 40, 0)),
    744: ((42, 0, 0), (21, 0, 0)),
}
IEEE37_DERS = [712, 718, 725, 731, 735, 738, 741, 744]

# cable impedance per mile (ohm): self and mutual; 4.8 kV, 2.5 MVA base
ZS = complex(0.35, 0.25)
ZM = complex(0.05, 0.03)
KV, KVA = 4.8, 2500.0
ZBASE = KV * KV * 1000.0 / KVA


def ieee37(fid, p_target_kw, q_target_kvar):
    order = [799] + [t for (_, t, _) in IEEE37_EDGES]
    index = {n: i for i, n in enumerate(order)}
    p_tot = sum(sum(v[0]) for v in IEEE37_LOADS.values())
    q_tot = sum(sum(v[1]) for v in IEEE37_LOADS.values())
    ps, qs = p_target_kw / p_tot, q_target_kvar / q_tot
    nodes = []
    for n in order:
        p, q = IEEE37_LOADS.get(n, ((0, 0, 0), (0, 0, 0)))
        nodes.append({"id": index[n], "p": [round(v * ps, 6) for v in p], "q": [round(v * qs, 6) for v in q],
                      "v_min": 0.95, "v_max": 1.05})
    edges = []
    for (f, t, ft) in IEEE37_EDGES:
        miles = ft / 5280.0
        zs, zm = ZS * miles / ZBASE, ZM * miles / ZBASE
        z1 = zs - zm
        zp = []
        for a in range(3):
            for b in range(3):
                z = zs if a == b else zm
                zp.append([round(z.real, 9), round(z.imag, 9)])
        edges.append({"from": index[f], "to": index[t], "r": round(z1.real, 9), "x": round(z1.imag, 9),
                      "z_phase": zp})
    s_each = 0.5 * p_target_kw / len(IEEE37_DERS)
    ders = [{"node": index[n], "p": round(0.5 * s_each, 6), "s": round(s_each, 6)} for n in IEEE37_DERS]
    return {"id": fid, "base_kva": KVA, "base_kv": KV, "tap_min": 0.9, "tap_max": 1.1, "tap_steps": 32,
            "nodes": nodes, "edges": edges, "ders": ders}


IEEE30_BRANCHES = [
    (1, 2, 0.0192, 0.0575, 0.0528), (1, 3, 0.0452, 0.1652, 0.0408), (2, 4, 0.0570, 0.1737, 0.0368),
    (3, 4, 0.0132, 0.0379, 0.0084), (2, 5, 0.0472, 0.1983, 0.0418), (2, 6, 0.0581, 0.1763, 0.0374),
    (4, 6, 0.0119, 0.0414, 0.0090), (5, 7, 0.0460, 0.1160, 0.0204), (6, 7, 0.0267, 0.0820, 0.0170),
    (6, 8, 0.0120, 0.0420, 0.0090), (6, 9, 0.0, 0.2080, 0.0), (6, 10, 0.0, 0.5560, 0.0),
    (9, 11, 0.0, 0.2080, 0.0), (9, 10, 0.0, 0.1100, 0.0), (4, 12, 0.0, 0.2560, 0.0),
    (12, 13, 0.0, 0.1400, 0.0), (12, 14, 0.1231, 0.2559, 0.0), (12, 15, 0.0662, 0.1304, 0.0),
    (12, 16, 0.0945, 0.1987, 0.0), (14, 15, 0.2210, 0.1997, 0.0), (16, 17, 0.0524, 0.1923, 0.0),
    (15, 18, 0.1073, 0.2185, 0.0), (18, 19, 0.0639, 0.1292, 0.0), (19, 20, 0.0340, 0.0680, 0.0),
    (10, 20, 0.0936, 0.2090, 0.0), (10, 17, 0.0324, 0.0845, 0.0), (10, 21, 0.0348, 0.0749, 0.0),
    (10, 22, 0.0727, 0.1499, 0.0), (21, 22, 0.0116, 0.0236, 0.0), (15, 23, 0.1000, 0.2020, 0.0),
    (22, 24, 0.1150, 0.1790, 0.0), (23, 24, 0.1320, 0.2700, 0.0), (24, 25, 0.1885, 0.3292, 0.0),
    (25, 26, 0.2544, 0.3800, 0.0), (25, 27, 0.1093, 0.2087, 0.0), (28, 27, 0.0, 0.3960, 0.0),
    (27, 29, 0.2198, 0.4153, 0.0), (27, 30, 0.3202, 0.6027, 0.0), (29, 30, 0.2399, 0.4533, 0.0),
    (8, 28, 0.0636, 0.2000, 0.0428), (6, 28, 0.0169, 0.0599, 0.0130),
]
IEEE30_LOADS = {
    2: (21.7, 12.7), 3: (2.4, 1.2), 4: (7.6, 1.6), 5: (94.2, 19.0), 7: (22.8, 10.9), 8: (30.0, 30.0),
    10: (5.8, 2.0), 12: (11.2, 7.5), 14: (6.2, 1.6), 15: (8.2, 2.5), 16: (3.5, 1.8), 17: (9.0, 5.8),
    18: (3.2, 0.9), 19: (9.5, 3.4), 20: (2.2, 0.7), 21: (17.5, 11.2), 23: (3.2, 1.6), 24: (8.7, 6.7),
    26: (3.5, 2.3), 29: (2.4, 0.9), 30: (10.6, 1.9),
}
# bus: (p, v_set, q_min, q_max, p_max)
IEEE30_GENS = {
    1: (0.0, 1.06, -50.0, 150.0, 250.0),
    2: (40.0, 1.045, -40.0, 50.0, 80.0),
    5: (20.0, 1.01, -40.0, 40.0, 50.0),
    8: (15.0, 1.01, -10.0, 40.0, 35.0),
    11: (10.0, 1.082, -6.0, 24.0, 30.0),
    13: (10.0, 1.071, -6.0, 24.0, 40.0),
}
IEEE30_IBRS = {6: ("solar", 10.0, 1.01), 9: ("wind", 9.0, 1.02), 22: ("wind", 9.0, 1.01)}
FIXED_LOAD_BUSES = {8}
TEMPLATE_KW = 2400.0


def ieee30_37():
    buses, feeders, boundary = [], [], []
    for i in range(1, 31):
        kind = "slack" if i == 1 else ("pv" if i in IEEE30_GENS or i in IEEE30_IBRS else "pq")
        p, q = IEEE30_LOADS.get(i, (0.0, 0.0))
        if i in IEEE30_LOADS and i not in FIXED_LOAD_BUSES:
            beta = max(1, round(p * 1000.0 / TEMPLATE_KW))
            fid = "f%d" % i
            feeders.append(ieee37(fid, p * 1000.0 / beta, q * 1000.0 / beta))
            boundary.append({"tx_bus": i, "feeder": fid, "beta": beta, "kv_tx": 132.0, "kv_dx": KV})
            p, q = 0.0, 0.0
        buses.append(bus(i, kind, p, q, v_min=0.92, v_max=1.1))
    branches = [branch(k + 1, *row) for k, row in enumerate(IEEE30_BRANCHES)]
    gens = [{"bus": b, "p": g[0], "v_set": g[1], "q_min": g[2], "q_max": g[3], "p_max": g[4]}
            for b, g in IEEE30_GENS.items()]
    ibrs = [{"bus": b, "p": round(0.5 * icr, 6), "icr": icr, "kind": kind, "v_set": v}
            for b, (kind, icr, v) in IEEE30_IBRS.items()]
    return {
        "base_mva": 100.0,
        "slack_bus": 1,
        "transmission": {"buses": buses, "branches": branches, "generators": gens, "ibrs": ibrs},
        "feeders": feeders,
        "boundary": boundary,
    }


if __name__ == "__main__":
    write("two_bus.case", two_bus())
    write("five_bus.case", five_bus())
    write("ieee30_37.case", ieee30_37())
