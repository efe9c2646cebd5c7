"""Smoke test for the Python extension.

Build it first:
    cargo build --release -p coint-breaks-py --features extension-module
then run:
    python3 python/smoke_test.py
"""

import importlib.util
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    for profile in ("release", "debug"):
        for name in ("libcoint_breaks_py.so", "libcoint_breaks_py.dylib", "coint_breaks_py.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                tmp = pathlib.Path(tempfile.mkdtemp())
                dest = tmp / ("coint_breaks_py.pyd" if name.endswith(".dll") else "coint_breaks_py.so")
                shutil.copy(lib, dest)
                spec = importlib.util.spec_from_file_location("coint_breaks_py", dest)
                mod = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(mod)
                return mod
    sys.exit("extension not built; see the module docstring")


def main():
    cb = load()

    y, x, truth = cb.simulate("sb2", t=200, rep=0)
    assert len(y) == 200 and len(x[0]) == 2
    assert truth == [66, 134]

    lasso = cb.estimate_breaks(y, x, max_breaks=2)
    bp = cb.bai_perron(y, x, max_breaks=3)
    print("lasso:", lasso)
    print("bai-perron:", bp)
    assert cb.hausdorff(lasso.breakpoints, truth, 200) <= 5
    assert abs(sum(r * r for r in lasso.residuals) - lasso.ssr) < 1e-8 * lasso.ssr

    fit = cb.segment_ols(y, x, truth)
    assert len(fit.segment_betas) == 3

    try:
        cb.estimate_breaks([1.0, 2.0], [[1.0], [2.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("short sample accepted")

    report = cb.monte_carlo("sb1", 200, 20, jobs=1)
    print(report.to_tsv(), end="")
    assert report.reps == 20 and report.pce >= 90.0
    print("ok")


if __name__ == "__main__":
    main()
