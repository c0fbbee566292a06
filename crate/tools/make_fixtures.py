"""Regenerate the bundled grid fixtures and the power-flow oracle values.

Case data comes from PYPOWER's copies of the public MATPOWER cases; the
oracle voltages are PYPOWER's Newton power flow on the same data.

    pip install --no-deps pypower
    python tools/make_fixtures.py
"""

import os
import sys

import numpy as np
from pypower.api import case9, case39, ppoption, runpf

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, "..", "crates", "core", "data")

# Classical-machine data on the 100 MVA system base (bus: H s, X'd pu).
DYN39 = {
    30: (42.0, 0.031),
    31: (30.3, 0.0697),
    32: (35.8, 0.0531),
    33: (28.6, 0.0436),
    34: (26.0, 0.132),
    35: (34.8, 0.05),
    36: (26.4, 0.049),
    37: (24.3, 0.057),
    38: (34.5, 0.057),
    39: (500.0, 0.006),
}
DYN9 = {1: (23.64, 0.0608), 2: (6.4, 0.1198), 3: (3.01, 0.1813)}

# Lumped damping (load damping plus primary response), pu power per pu speed
# and per pu of dispatched generation.
DAMPING_PER_PU = 20.0

TYPES = {1: "PQ", 2: "PV", 3: "SLACK"}


def g(x):
    return repr(round(float(x), 12))


def write_case(path, ppc, dyn, title):
    base = ppc["baseMVA"]
    bus, branch, gen = ppc["bus"], ppc["branch"], ppc["gen"]
    assert not bus[:, 4:6].any(), "bus shunts are not represented"
    assert not branch[:, 9].any(), "phase shifters are not represented"
    gen_v = {int(r[0]): r[5] for r in gen}
    lines = [f"# {title}", "[CASE]", "s_base,f_base", f"{g(base)},60.0", "[BUS]", "id,type,v_set,p_load,q_load"]
    for r in bus:
        i = int(r[0])
        v = gen_v.get(i, 1.0)
        lines.append(f"{i},{TYPES[int(r[1])]},{g(v)},{g(r[2] / base)},{g(r[3] / base)}")
    lines += ["[BRANCH]", "from,to,r,x,b,tap"]
    for r in branch:
        tap = r[8] if r[8] != 0 else 1.0
        lines.append(f"{int(r[0])},{int(r[1])},{g(r[2])},{g(r[3])},{g(r[4])},{g(tap)}")
    lines += ["[GEN]", "bus,h,d,xd_p,p_set,v_set"]
    for r in gen:
        i = int(r[0])
        h, xd = dyn[i]
        p = r[1] / base
        d = DAMPING_PER_PU * max(p, 1.0)
        lines.append(f"{i},{g(h)},{g(d)},{g(xd)},{g(p)},{g(r[5])}")
    lines += ["[LEL]", "bus,archetype,param_file"]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def oracle(ppc):
    opt = ppoption(VERBOSE=0, OUT_ALL=0, PF_TOL=1e-12, PF_MAX_IT=30)
    res, ok = runpf(ppc, opt)
    assert ok
    return res


def main():
    c39 = case39()
    write_case(os.path.join(DATA, "ieee39.case"), c39, DYN39, "IEEE 39-bus New England system")
    write_case(os.path.join(DATA, "toy9.case"), case9(), DYN9, "WSCC 9-bus system")
    res = oracle(case39())
    with open(os.path.join(DATA, "ieee39_pf_oracle.csv"), "w") as f:
        f.write("bus,vm,va_deg\n")
        for r in res["bus"]:
            f.write(f"{int(r[0])},{g(r[7])},{g(r[8])}\n")
    slack = [r for r in res["gen"] if int(r[0]) == 31][0]
    print("slack P (MW):", slack[1], file=sys.stderr)


if __name__ == "__main__":
    main()
