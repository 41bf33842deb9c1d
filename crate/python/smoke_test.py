"""Smoke test for the spaceris_py extension.

Build and run from the repository root:

    cargo build --release -p spaceris-py --features extension-module
    python3 python/smoke_test.py
"""

import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    try:
        import spaceris_py  # noqa: F401
        return spaceris_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = os.path.join(ROOT, "target", profile, "libspaceris_py.so")
        if os.path.exists(lib):
            tmp = tempfile.mkdtemp()
            shutil.copy(lib, os.path.join(tmp, "spaceris_py.so"))
            sys.path.insert(0, tmp)
            import spaceris_py
            return spaceris_py
    sys.exit("spaceris_py not built; run cargo build -p spaceris-py --features extension-module")


def main():
    sp = load()

    s = sp.Scenario()
    assert s.num_sats == 66 and s.num_rues == 8, s
    again = sp.Scenario(s.to_json())
    assert again.to_json() == s.to_json()
    try:
        sp.Scenario('{"constellation": {"altitude_m": -1}}')
        raise AssertionError("negative altitude accepted")
    except ValueError:
        pass

    o = sp.orbit(s)
    assert abs(o["orbital_period"] - 5677.0) < 10.0, o
    assert o["slots_per_revolution"] == 568

    b = sp.link_budget(s)
    parts = ["spreading", "absorption", "rain", "cloud", "plasma", "nrp"]
    total = sum(b[k] for k in parts) - b["gain_db"]
    assert abs(total - b["total_db"]) < 1e-9, b

    perm, cost = sp.hungarian([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    assert sorted(perm) == [0, 1, 2] and cost == 5.0, (perm, cost)

    pts = [[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]]
    assign, _, mse = sp.bkmc(pts, [[0.0, 0.0], [5.0, 5.0]])
    assert assign == [0, 0, 1, 1], assign
    assert all(b <= a for a, b in zip(mse, mse[1:])), mse

    smoke = sp.Scenario.from_file(os.path.join(ROOT, "configs", "smoke.json"))
    sol = sp.simulate(smoke)
    sol2 = sp.simulate(smoke)
    assert sol.objective == sol2.objective and sol.power == sol2.power
    assert sum(sol.power) <= 10.0 + 1e-9
    tables = sol.tables()
    assert tables["bcd_trace"] == sol2.tables()["bcd_trace"]
    assert tables["bcd_trace"].splitlines()[1] == "round,block,objective,feasible"

    rows = sp.sweep("ris_elements", smoke, [4, 8])
    ris = [r[2] for r in rows if r[1] == "ris"]
    assert ris[1] >= ris[0], rows

    print("python smoke test ok:", sol)


if __name__ == "__main__":
    main()
