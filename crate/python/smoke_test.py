"""Smoke test for the Python bindings; exits non-zero on the first failure."""

import math

import nonlocal_diffusion as nl


def main():
    assert abs(nl.riesz_constant(1, 0.5) - 1 / math.pi) < 1e-10
    assert abs(nl.weight_constant(1, 0.5) - math.sin(math.pi / 4) / math.sqrt(math.pi)) < 1e-10

    eq, fl = nl.equivalence_kernel(0.5, 0.0, 0.7)
    assert abs(eq / fl - 1) < 1e-6, (eq, fl)

    x, u = nl.solve_elliptic(0.5, 1 / 64)
    assert x[0] == -1.0 and x[-1] == 1.0 and u[0] == u[-1] == 0.0
    centre = u[len(u) // 2]
    assert abs(centre - 1) < 2e-2, centre

    rows = nl.convergence(0.5, [1 / 16, 1 / 32, 1 / 64])
    errors = [r[1] for r in rows]
    assert errors == sorted(errors, reverse=True), errors
    assert rows[-1][2] >= 0.5, rows

    times, x, states, ledger_ok = nl.solve_evolution(0.6, 1 / 32, 0.2, 0.02, speed=0.8, stride=5)
    assert ledger_ok and len(times) == len(states) == 3
    centres = [sum(xi * ui for xi, ui in zip(x, s)) / sum(s) for s in states]
    assert centres == sorted(centres), centres

    try:
        nl.solve_evolution(0.4, 1 / 32, 0.2, 0.02, speed=0.8)
    except ValueError as e:
        assert "0.5" in str(e)
    else:
        raise AssertionError("transport with s < 0.5 must be rejected")

    reports = nl.verify_suite(h=1 / 16)
    gating = [r for r in reports if r["gating"]]
    assert gating and all(r["pass"] for r in gating), [r for r in gating if not r["pass"]]

    print(f"python smoke test ok: u_h(0) = {centre:.5f}, order {rows[-1][2]:.3f}, {len(reports)} checks")


if __name__ == "__main__":
    main()
