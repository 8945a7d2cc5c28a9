"""Smoke test for the iterpdd_py extension module.

Build and install first, e.g.

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml --features extension-module
"""

import math
import sys

import iterpdd_py as pdd


def main() -> int:
    assert math.isfinite(pdd.exact_u(0.3, 0.7))

    table = pdd.nsr_table(q=2.0, samples=20_000, seed=1)
    assert len(table) == 60
    cell = next(r for r in table if r[0] == 1.0 and r[1] == 0.0 and r[2] == 10)
    assert abs(cell[3] - 0.54) < 0.05, cell

    a = pdd.a0_from_epsilon(0.1, gamma_r=1.5, q_max=1.0, s=6)
    assert math.isclose(pdd.a0_from_epsilon(0.2, gamma_r=1.5, q_max=1.0, s=6), 2 * a)
    assert 0.0 < pdd.inverse_extreme_cdf(0.955, 6) < 5.0

    solver = pdd.Solver(domain=[0.0, 2.0, 0.0, 1.0], m=2, nodes_per_interface=4, grid_spacing=0.02)
    assert len(solver.nodes()) == 4
    assert solver.gamma_r() >= 1.0
    try:
        solver.run_plain(0.2)
    except RuntimeError:
        pass
    else:
        raise AssertionError("running before fitting must fail")

    constants = solver.fit(m_hat=12, n_hat=300, seed=3)
    assert [c["node"] for c in constants] == [0, 1, 2, 3]
    assert all(c["v_phi"] >= 0.0 for c in constants)

    plain = solver.run_plain(0.2, seed=1)
    assert plain["conserved"] and plain["cv_steps"] == 0
    assert plain["mean_nodal_error"] < 0.2, plain

    tolerances, speedup = solver.schedule(0.1)
    assert tolerances[-1] == 0.1 and speedup > 0.0
    run = solver.run_iter([0.6, 0.15], seed=2)
    assert run["conserved"] and run["modes"][0] == "Plain"
    assert run["mean_nodal_error"] < 0.15, run

    try:
        pdd.Solver(problem="nowhere")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown problem must raise ValueError")

    print(f"ok: plain {plain['weighted_steps']:.3g} steps, iter {run['weighted_steps']:.3g} steps, |rho| {run['mean_abs_rho']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
