"""Smoke test for the shellwalk_py extension.

Build and run from the repository root:

    cargo build --release -p shellwalk-python --features extension-module
    cp target/release/libshellwalk_py.so python/shellwalk_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import shellwalk_py as sw


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL {what}")
    print(f"ok   {what}")


def main():
    g = sw.IsingModel.grid2d(3)
    check((g.num_vars, g.num_edges) == (9, 12), "3x3 grid counts")
    check(sw.IsingModel.grid2d(60).num_edges == 7080, "60x60 grid edges")
    check(g.energy([False] * 9) == -12.0, "aligned grid energy")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.json")
        g.save(path)
        check(sw.IsingModel.load(path).edges == g.edges, "model file round trip")

    states, probs = sw.exact_shell(g, 0.44, 4)
    check(len(states) == 126 and abs(sum(probs) - 1.0) < 1e-12, "exact shell of 126 states")

    index = {tuple(s): i for i, s in enumerate(states)}
    for name, kwargs in [("im", dict(gamma=0.44, k_min=1, k_max=3)), ("metropolis", {})]:
        counts = [0] * len(states)
        recorded = 0
        for chain in range(4):
            run = sw.sample(g, 0.44, 20000, sampler=name, n=4, seed=3, chain=chain, **kwargs)
            check(sum(run["final_state"]) == 4, f"{name} chain {chain} stays on the shell")
        # Final states of many short independent chains.
        for chain in range(3000):
            run = sw.sample(g, 0.44, 40, sampler=name, n=4, stride=40, seed=11, chain=chain, **kwargs)
            counts[index[tuple(run["final_state"])]] += 1
            recorded += 1
        tv = 0.5 * sum(abs(c / recorded - p) for c, p in zip(counts, probs))
        check(tv < 0.15, f"{name} final-state TV {tv:.3f} against the exact shell")

    rho = sw.acf([math.sin(0.3 * t) + 0.1 * (t % 7) for t in range(500)], 20)
    check(abs(rho[0] - 1.0) < 1e-12 and len(rho) == 21, "acf normalization")
    check(sw.integrated_time([1.0, 0.5, 0.25, -0.1]) == 2.5, "integrated time truncation")

    report = sw.run_verify(suite="kernel")
    check(report["pass"] and report["kernel"]["num_states"] == 20, "kernel suite passes")
    bad = sw.run_verify(suite="kernel", inject_corruption=True)
    check(not bad["pass"], "corruption is detected")

    summary = sw.run_experiment("glass3d", trials=2, moves=300, seed=1)
    check(summary["n"] == 63 and summary["num_vars"] == 125, "desk glass preset")

    try:
        sw.sample(g, 0.44, 0)
    except ValueError:
        print("ok   zero moves rejected")
    else:
        raise SystemExit("FAIL zero moves accepted")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
