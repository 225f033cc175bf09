"""Smoke test for the facerefl_py extension.

Build first with `cargo build -p facerefl-python` (or `--release`), then run
`python3 python/smoke.py`. The shared library is imported from the cargo
target directory under its module name.
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_extension():
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libfacerefl_py.so"
        if lib.exists():
            break
    else:
        sys.exit("libfacerefl_py.so not found; run `cargo build -p facerefl-python`")
    staged = pathlib.Path(tempfile.mkdtemp()) / "facerefl_py.so"
    shutil.copy(lib, staged)
    spec = importlib.util.spec_from_file_location("facerefl_py", staged)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    fr = load_extension()

    a = fr.RasterMap(2, 2, 1, [0.0] * 4, colorspace="linear")
    b = fr.RasterMap(2, 2, 1, [0.1] * 4, colorspace="linear")
    db, n = fr.psnr(a, b)
    assert n == 4 and abs(db - 20.0) < 1e-6, db

    for alpha in (0.1, 0.35, 0.8):
        assert fr.lobe_albedo(alpha, 0.3) <= 1.0

    try:
        fr.RasterMap(1, 1, 3, [0.0, 0.0, 2.0], colorspace="signed-unit", kind="normals-tangent")
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range normal accepted")

    with tempfile.TemporaryDirectory() as tmp:
        config = fr.synth_case(tmp, size=(128, 96), seed=3, asset=1)
        out = fr.run_pipeline(str(config))
        assert out["metrics"]["diffuse_albedo"] >= 40.0, out["metrics"]
        ns = out["maps"]["normals_specular"]
        ns.validate()
        assert (ns.width, ns.height, ns.kind) == (128, 96, "normals-specular")
        disp, iterations, residual = fr.integrate_normals(ns)
        assert disp.kind == "displacement" and residual <= 1e-8, residual
        assert all(math.isfinite(v) for v in disp.data())
        mesh = fr.Mesh.load(pathlib.Path(out["output_dir"]) / "displacement" / "embossed.obj")
        assert mesh.vertex_count > 0 and mesh.triangle_count > 0
        print(f"albedo {out['metrics']['diffuse_albedo']:.1f} dB, "
              f"integration {iterations} iterations, mesh {mesh.vertex_count} vertices")
    print("smoke ok")


if __name__ == "__main__":
    main()
