"""Smoke test for the metaexo Python extension.

Build the extension first, e.g.

    cargo build --release -p metaexo-py --features extension-module

then run `python3 python/smoke_test.py`. If `metaexo` is not importable the
script loads target/release/libmetaexo.so (or the path in METAEXO_PY_LIB).
"""

import importlib.util
import math
import os
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    try:
        import metaexo

        return metaexo
    except ImportError:
        pass
    lib = pathlib.Path(os.environ.get("METAEXO_PY_LIB", ROOT / "target" / "release" / "libmetaexo.so"))
    if not lib.exists():
        sys.exit(f"extension not found at {lib}; build it with cargo first")
    # the loader wants the file name to match the module name
    tmp = pathlib.Path(tempfile.mkdtemp()) / "metaexo.so"
    shutil.copy(lib, tmp)
    spec = importlib.util.spec_from_file_location("metaexo", tmp)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    mx = load_module()
    print("metaexo", mx.__version__)

    assert mx.kl_divergence([0.0, 0.0], [1.0, 1.0]) == 0.0
    assert abs(mx.kl_divergence([1.0], [1.0]) - 0.5) < 1e-15

    trace = mx.simulate_step(20.0, 5.0, target=0.5, seconds=5.0)
    assert abs(trace["e"][-1]) < 1e-3, trace["e"][-1]
    assert trace["fraction_nonincreasing"][0] > 0.99
    assert all(math.isfinite(v) for v in trace["V"])

    with tempfile.TemporaryDirectory() as out:
        env = {"heldout_instances": "2", "traj_per_task": "2"}
        mx.run("synth", out, seed=3, env=env)
        heldout = [p for p in (pathlib.Path(out) / "heldout" / "tasks").iterdir() if p.is_dir()]
        assert len(heldout) == 6, heldout
        try:
            mx.run("adapt", os.path.join(out, "missing"))
        except RuntimeError as err:
            assert "missing input" in str(err), err
        else:
            raise AssertionError("adapt without a checkpoint should fail")
        try:
            mx.run("fly", out)
        except ValueError:
            pass
        else:
            raise AssertionError("unknown command should raise ValueError")
    print("smoke test passed")


if __name__ == "__main__":
    main()
