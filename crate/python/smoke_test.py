"""Smoke test for the Python bindings: build, ledger, verify, meshes."""

import math
import tempfile
from pathlib import Path

import wildsphere


def main():
    run = wildsphere.build(depth=2)
    assert run.depth == 2 and run.mode == "mesh"

    ledger = wildsphere.ledger(run)
    assert ledger["pass"]
    assert ledger["total"] <= 0.1 / 3

    vertices, triangles = run.stage_mesh(2)
    assert len(vertices) > 0 and len(triangles) > 0
    # Closed sphere: V - E + F = 2 with E = 3F / 2.
    assert len(vertices) - 3 * len(triangles) // 2 + len(triangles) == 2

    ok, text, _ = run.verify()
    assert ok, text

    assert run.evaluate(0.9, -0.2, 0.0) == (0.9, -0.2, 0.0)

    with tempfile.TemporaryDirectory() as d:
        paths = run.write(d, ["json"])
        assert (Path(d) / "manifest.json").exists()
        assert any(p.endswith("stage_2.json") for p in paths)

    try:
        wildsphere.build(schedule="geometric:0.1,0.5")
    except ValueError as e:
        assert "diverges" in str(e)
    else:
        raise AssertionError("divergent schedule accepted")

    closed = wildsphere.truncation_energy(3.0, 1.0, 2)
    assert abs(closed - 2 * math.pi * math.exp(-3.0) * (1 - math.exp(-1.0))) < 1e-12
    s, _ = wildsphere.solve_s(0.1, 1.0, 2, 0.01)
    assert abs(s - 5.985) < 1e-3
    table = wildsphere.dimension_table(6)
    assert abs(table[5] - 6 * math.log(2) / 64) < 1e-15
    print("python smoke test: ok")


if __name__ == "__main__":
    main()
