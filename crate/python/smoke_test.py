"""Smoke test for the fabsim extension module.

Build it first:

    cargo build --release -p fabsim-py

The script copies target/<profile>/libfabsim.so to fabsim.so in a scratch
directory and imports it from there, unless fabsim is already importable.
"""

import importlib
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    try:
        return importlib.import_module("fabsim")
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = os.path.join(ROOT, "target", profile, "libfabsim.so")
        if os.path.exists(lib):
            scratch = tempfile.mkdtemp(prefix="fabsim-")
            shutil.copy(lib, os.path.join(scratch, "fabsim.so"))
            sys.path.insert(0, scratch)
            return importlib.import_module("fabsim")
    sys.exit("libfabsim.so not found; run `cargo build -p fabsim-py` first")


def main():
    fabsim = load()
    assert "cresco8-ft" in fabsim.presets(), fabsim.presets()
    assert fabsim.bytes("32KiB") == 32768

    exp = fabsim.Experiment("cresco8-ft", 16, "allgather", fabsim.bytes("32KiB"))
    exp.aggressor = "incast"
    exp.set_cc("none")
    exp.iterations = 50
    exp.warmup = 5
    exp.seed = 3
    base = exp.baseline()
    cong = exp.congested()
    r = fabsim.ratio(base, cong)
    assert base.retained == 45 and len(base.samples_ns) == 45
    assert 0.0 < r <= 1.0, r
    assert fabsim.ratio(base, base) == 1.0
    st = cong.stats
    assert st["injected_bytes"] == st["delivered_bytes"] and st["capacity_violations"] == 0
    again = exp.congested()
    assert again.samples_ns == cong.samples_ns
    print(f"{exp!r}: baseline {base.mean_ns:.0f} ns, congested {cong.mean_ns:.0f} ns, ratio {r:.3f}")

    exp.bursty("100us", "50us")
    assert exp.injection == "bursty"
    clone = fabsim.Experiment.from_config_str(exp.dump())
    assert clone.dump() == exp.dump()

    for bad in (lambda: fabsim.Experiment("no-such-fabric", 8),
                lambda: exp.set_cc("dcqcn", "wobbly"),
                lambda: exp.bursty("4c", "5"),
                lambda: fabsim.Experiment.from_config_str("topology = cresco8-ft\n")):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")

    saw = fabsim.Experiment("haicgu-sw", 4, "allgather", fabsim.bytes("16MiB"))
    saw.set_cc("dcqcn", "unstable")
    saw.iterations = 3
    saw.warmup = 0
    tr = saw.trace("20us")
    s = tr.stats()
    assert len(tr) == len(tr.rates_bps) > 0
    assert max(tr.rates_bps) <= tr.capacity_bps * (1 + 1e-9)
    print(f"unstable trace: {len(tr)} bins, peak/trough {s['peak_to_trough']:.2f}, cycles {s['cycles']:.0f}")
    print("ok")


if __name__ == "__main__":
    main()
