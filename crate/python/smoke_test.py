#!/usr/bin/env python3
"""Builds the Python extension and exercises it end to end.

Usage: python3 python/smoke_test.py [path/to/libvmkdv_py.so]

Without an argument the library is built with cargo in release mode.
"""

import importlib.util
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load(lib_path):
    tmp = pathlib.Path(tempfile.mkdtemp())
    target = tmp / "vmkdv.so"
    shutil.copy(lib_path, target)
    spec = importlib.util.spec_from_file_location("vmkdv", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def build():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "vmkdv-py"], cwd=ROOT, check=True
    )
    return ROOT / "target" / "release" / "libvmkdv_py.so"


def main():
    lib = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else build()
    vmkdv = load(lib)

    u = vmkdv.one_soliton(20.0, 0.0)
    assert abs(u[0] - 1.6) < 1e-15 and abs(u[1] - 1.2) < 1e-15, u
    assert len(vmkdv.two_soliton(25.0, 0.0)) == 2

    cfg = vmkdv.Config(
        "cells = 40\ndegree = 2\ntau = 0.01\nfinal_time = 0.1\n"
        "compare_exact = true\n[ic]\nkind = \"one_soliton\"\n"
    )
    assert cfg.dim == 2 and cfg.steps() == 10
    assert vmkdv.Config(cfg.to_toml()).to_toml() == cfg.to_toml()
    try:
        vmkdv.Config("tau = 0.0")
    except ValueError as e:
        assert "tau" in str(e)
    else:
        raise AssertionError("tau = 0 accepted")

    out = vmkdv.run(cfg)
    assert len(out["F4"]) == 11
    drift = max(abs(f - out["F4"][0]) for f in out["F4"])
    assert drift < 1e-10, drift
    assert max(abs(c) for c in out["constraint"]) <= 1e-12
    assert all(e < 0.1 for e in out["linf_l2_errors"]), out["linf_l2_errors"]

    trig = vmkdv.Config(
        "cells = 20\ntau = 0.01\nfinal_time = 0.05\n[ic]\nkind = \"trig\"\n"
    )
    sim = vmkdv.Simulation(trig)
    f4 = sim.invariants()["F4"]
    row = sim.advance(5)
    assert sim.steps_taken == 5 and math.isclose(sim.t, 0.05)
    assert abs(row["F4"] - f4) < 1e-11
    assert sim.p != 0.0
    assert len(sim.u()) == 2 and len(sim.u()[0]) == len(sim.x())

    conserved, flux = vmkdv.verify_conservation("f2", 1)
    assert conserved and flux == "-u1*u1_xx + 1/2*u1_x^2 - 3/8*u1^4", flux
    assert vmkdv.verify_conservation("quartic", 2) == (False, None)
    assert "printed/computed = 2" in vmkdv.claws_report([2])

    rates = vmkdv.eoc([1.0, 0.25, 0.0625], [1.0, 0.5, 0.25])
    assert all(abs(r - 2.0) < 1e-12 for r in rates)

    print("python smoke test passed")


if __name__ == "__main__":
    main()
