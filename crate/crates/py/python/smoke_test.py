"""Smoke test for the extension module.

Imports an installed `eventdepth_py`, or falls back to the shared library
cargo builds with:

    cargo build -p eventdepth-py --features extension-module

Run: python3 crates/py/python/smoke_test.py
"""

import importlib.machinery
import importlib.util
import json
import math
import os
import sys
import tempfile
from pathlib import Path


def load_module():
    try:
        import eventdepth_py

        return eventdepth_py
    except ImportError:
        pass
    root = Path(__file__).resolve().parents[3]
    target = Path(os.environ.get("CARGO_TARGET_DIR", root / "target"))
    for profile in ("release", "debug"):
        lib = target / profile / "libeventdepth_py.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("eventdepth_py", str(lib))
            spec = importlib.util.spec_from_loader("eventdepth_py", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("eventdepth_py not found; build it with "
             "`cargo build -p eventdepth-py --features extension-module`")


def main():
    ed = load_module()

    seq = ed.simulate(7, height=16, width=16, duration_s=1.01)
    assert (seq.height, seq.width) == (16, 16)
    assert len(seq.depth_timestamps) == 101
    assert seq.num_events > 0

    # voxel bins sum to the event frame
    frame = seq.event_frame(0, 500_000)
    voxel = seq.voxel_grid(0, 500_000, 5)
    n = 16 * 16
    for px in range(n):
        assert sum(voxel[b * n + px] for b in range(5)) == frame[px]
    assert sum(p for (_, _, _, p) in seq.events(0, 500_000)) == sum(frame)

    _, depth = seq.depth(0)
    m = ed.evaluate(depth, depth, 16, 16)
    assert m["rmse"] == 0.0 and m["d1"] == 1.0
    m = ed.evaluate([5.0], [4.0], 1, 1)
    assert m["d1"] == 0.0 and m["d2"] == 1.0

    assert abs(ed.effective_frame_rate([k * 15_000 for k in range(100)]) - 66.67) < 0.01

    labels = seq.keyframe_labels()
    assert len(labels) == 50

    scores = ed.score_extrapolation([seq], fps=10.0)
    assert set(scores) == {"repeat", "linear", "exponential"}
    assert all(math.isfinite(v) for v in scores.values())

    report = json.loads(ed.run_pipeline(seq, detector="rule", extrapolator="gt"))
    assert report["aggregate_metrics"]["rmse"] == 0.0
    assert "measured" in report

    with tempfile.TemporaryDirectory() as d:
        seq.save(Path(d) / "s")
        back = ed.Sequence.load(Path(d) / "s")
        assert back.num_events == seq.num_events
        assert back.depth(3) == seq.depth(3)

    try:
        ed.evaluate([1.0], [1.0, 2.0], 1, 1)
    except ValueError:
        pass
    else:
        raise AssertionError("geometry mismatch accepted")

    print(f"eventdepth_py {ed.__version__}: smoke test passed ({seq!r})")


if __name__ == "__main__":
    main()
