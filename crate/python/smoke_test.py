"""Smoke test for the pyshadercorpus extension.

Build first:
    cargo build --release -p shadercorpus-python -p shadercorpus
then run:
    python3 python/smoke_test.py
"""

import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
TARGET = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target")) / "release"


def load_module(tmp):
    lib = TARGET / "libpyshadercorpus.so"
    if not lib.exists():
        sys.exit(f"missing {lib}; run cargo build --release -p shadercorpus-python")
    shutil.copy(lib, Path(tmp) / "pyshadercorpus.so")
    sys.path.insert(0, tmp)
    import pyshadercorpus

    return pyshadercorpus


def check_core(sc):
    glsl = sc.normalize("o=vec4(FC.xy/r,sin(t),1);", "twigl")
    assert glsl.startswith("#version 450")
    try:
        sc.normalize("void mainImage(out vec4 c,in vec2 f){c=texture(iChannel0,f);}", "shadertoy")
    except ValueError as e:
        assert "iChannel0" in str(e)
    else:
        raise AssertionError("channel source accepted")

    prog = sc.Program("o=vec4(FC.x/r.x,FC.y/r.y,fract(t),1);")
    px = prog.render(0.5, 16, 8)
    assert len(px) == 16 * 8 * 3
    assert px[:3] != px[-3:]
    assert prog.measure_fps(16, 16) > 0

    ts = sc.sample_timesteps(12, 3)
    assert all(k / 4 <= t < k / 4 + 0.25 for k, t in enumerate(ts))
    w = sc.sample_dirichlet(6, 1.0, 9)
    assert abs(sum(w) - 1) < 1e-9 and w == sc.sample_dirichlet(6, 1.0, 9)

    black, white = bytes(4 * 4 * 3), bytes([255]) * (4 * 4 * 3)
    assert set(sc.mixup([black, white], [0.5, 0.5], 4, 4)) == {128}
    pixels, rects = sc.cutmix([black, white, white], 4, 4, 1)
    assert len(pixels) == 48 and len(rects) == 2

    values = [float(v) for v in range(1, 101)]
    assert sc.nearest_rank(values, 0.05) == 5.0
    assert sc.summary([2.5]) == (2.5, 2.5, 2.5)


def check_pipeline(sc, tmp):
    exe = TARGET / "shadercorpus"
    if not exe.exists():
        print("skip pipeline: shadercorpus binary not built")
        return
    src = Path(tmp) / "src"
    src.mkdir()
    for i in range(4):
        (src / f"p{i}.twigl").write_text(f"o=vec4(fract(FC.x/r.x+t*{i + 1}.),{i}./255.,.5,1);")
    (src / "still.twigl").write_text("o=vec4(.1,.2,.3,1);")
    manifest = str(Path(tmp) / "corpus" / "manifest.jsonl")
    run = lambda *a: subprocess.run([str(exe), *a], check=True, capture_output=True, text=True)
    run("ingest", "--manifest", manifest, str(src))
    run("validate", "--manifest", manifest)
    run("dedup", "--manifest", manifest, "--resolution", "16")

    m = sc.Manifest.load(manifest)
    assert len(m) == 5 and m.unique_ids() == ["p0", "p1", "p2", "p3"]
    assert m.record("still")["unique"] is False

    server = subprocess.Popen(
        [str(exe), "serve", "--manifest", manifest, "--bind", "127.0.0.1:0"], stdout=subprocess.PIPE, text=True
    )
    try:
        addr = server.stdout.readline().split()[-1]
        client = sc.StreamClient(addr)
        batch = client.request(5, 3, 32, 32, n=2)
        assert len(batch) == 3
        payload, sources = batch[0]
        assert len(payload) == 32 * 32 * 3 and len(sources) == 2
        assert abs(sum(s["weight"] for s in sources) - 1) < 1e-9
        assert batch == client.request(5, 3, 32, 32, n=2)
        served, requests, _, _ = client.stats()
        assert (served, requests) == (6, 2)
    finally:
        server.terminate()
        server.wait()


def main():
    with tempfile.TemporaryDirectory() as tmp:
        sc = load_module(tmp)
        check_core(sc)
        check_pipeline(sc, tmp)
    print("smoke test ok")


if __name__ == "__main__":
    main()
