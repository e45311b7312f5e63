import hashlib
from pathlib import Path

import numpy as np
import pytest

from irtps.cli import main
from irtps.io import read_kv, read_pfm
from irtps.metrics import read_csv

SPHERE = "object.type = sphere\nresolution = 20\nspp = 8\nseed = 1\n"
BLACK = SPHERE + "".join(f"wall.{w}.albedo = 0 0 0\n"
                         for w in ("left", "right", "back", "floor", "ceiling"))


def digest(d: Path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.glob("*.pfm"))}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "sphere.cfg").write_text(SPHERE)
    (root / "black.cfg").write_text(BLACK)
    assert main(["render", str(root / "sphere.cfg"), str(root / "ds")]) == 0
    assert main(["render", str(root / "black.cfg"), str(root / "black")]) == 0
    return root


def test_render_contract(work):
    names = {p.name for p in (work / "ds").iterdir()}
    assert {f"image_{k:03d}.pfm" for k in range(8)} <= names
    assert {"gt_height.pfm", "gt_normals.pfm", "gt_albedo.pfm", "lights.txt", "scene.cfg",
            "manifest.txt"} <= names
    m = read_kv(work / "ds" / "manifest.txt")
    assert m["command"] == "render" and m["seed"] == "1" and "duration_s" in m and "version" in m


def test_render_is_deterministic(work, tmp_path):
    assert main(["render", str(work / "sphere.cfg"), str(tmp_path / "again")]) == 0
    assert digest(tmp_path / "again") == digest(work / "ds")


def test_render_missing_type(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("resolution = 8\n")
    assert main(["render", str(tmp_path / "bad.cfg"), str(tmp_path / "o")]) == 2
    assert "missing key object.type" in capsys.readouterr().err


def test_render_bad_value_names_key(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("object.type = sphere\nspp = many\n")
    assert main(["render", str(tmp_path / "bad.cfg"), str(tmp_path / "o")]) == 2
    assert "spp" in capsys.readouterr().err


def test_render_with_lights_and_overrides(work, tmp_path):
    (tmp_path / "l.txt").write_text("0 0 1\n1 0 0\n0 1 0\n")
    rc = main(["render", str(work / "sphere.cfg"), str(tmp_path / "o"), "--lights",
               str(tmp_path / "l.txt"), "--spp", "2", "--seed", "5"])
    assert rc == 0
    assert len(list((tmp_path / "o").glob("image_*.pfm"))) == 3
    assert read_kv(tmp_path / "o" / "manifest.txt")["config.spp"] == "2"


def test_ps_outputs_and_errors(work, tmp_path):
    assert main(["ps", str(work / "ds"), str(tmp_path / "ps")]) == 0
    assert {"height.pfm", "normals.pfm", "albedo.pfm"} <= {p.name for p in (tmp_path / "ps").iterdir()}
    assert main(["ps", str(tmp_path / "nowhere"), str(tmp_path / "x")]) == 3


def test_usage_errors(work, tmp_path):
    assert main(["irtps", str(work / "ds"), str(tmp_path / "o"), "--rays", "4"]) == 1
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["ps", str(work / "ds"), str(tmp_path / "o"), "--threads", "0"]) == 1


def test_irtps_dump_iters(work, tmp_path):
    out = tmp_path / "ir"
    assert main(["irtps", str(work / "ds"), str(out), "--iters", "1", "--dump-iters"]) == 0
    assert sorted(p.name for p in out.glob("iter_*")) == ["iter_0", "iter_1"]
    assert len((out / "history.csv").read_text().splitlines()) == 3
    assert (out / "convergence.log").exists()


def test_irtps_black_walls_equals_ps(work, tmp_path):
    assert main(["ps", str(work / "black"), str(tmp_path / "ps")]) == 0
    assert main(["irtps", str(work / "black"), str(tmp_path / "ir")]) == 0
    assert digest(tmp_path / "ps") == digest(tmp_path / "ir")
    assert "converged at t=1" in (tmp_path / "ir" / "convergence.log").read_text()


def test_eval_identical_is_zero(work, tmp_path, capsys):
    # the dataset's own ground truth scored against itself
    for k in ("height", "normals", "albedo"):
        (tmp_path / f"{k}.pfm").write_bytes((work / "ds" / f"gt_{k}.pfm").read_bytes())
    assert main(["eval", str(tmp_path), str(work / "ds")]) == 0
    row = read_csv("\n".join(capsys.readouterr().out.splitlines()[:2]))
    (vals,) = row.values()
    assert vals["height_err"] == 0 and vals["albedo_err"] == 0 and vals["normal_err"] == 0


def test_eval_round_trip_and_missing_gt(work, tmp_path, capsys):
    assert main(["ps", str(work / "ds"), str(tmp_path / "ps")]) == 0
    capsys.readouterr()
    assert main(["eval", str(tmp_path / "ps"), str(work / "ds"), "--no-align"]) == 0
    lines = capsys.readouterr().out.splitlines()
    row = read_csv("\n".join(lines[:2]))["PS"]
    table = {ln.split()[0]: float(ln.split()[-1]) for ln in lines[3:6]}
    assert table["Height"] == pytest.approx(row["height_err"], abs=5e-7)
    assert "Height (raw)" in "\n".join(lines)
    nogt = tmp_path / "nogt"
    nogt.mkdir()
    for p in (work / "ds").iterdir():
        if not p.name.startswith("gt_"):
            (nogt / p.name).write_bytes(p.read_bytes())
    assert main(["eval", str(tmp_path / "ps"), str(nogt)]) == 3


def test_compare_report(work, tmp_path, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", str(work / "ds"), str(out), "--iters", "2"]) == 0
    table = (out / "table.txt").read_text().splitlines()
    assert table[0].split() == ["PS", "IRTPSr1", "IRTPSr2", "IRTPSr3"]
    assert [ln.split()[0] for ln in table[1:]] == ["Height", "Albedo", "Normal"]
    rows = read_csv((out / "report.csv").read_text())
    assert list(rows) == ["PS", "IRTPSr1", "IRTPSr2", "IRTPSr3"]
    for m in rows:
        assert (out / f"errors_{m}.png").stat().st_size > 0
    assert main(["compare", str(work / "ds"), str(tmp_path / "cmp2"), "--iters", "2"]) == 0
    assert (tmp_path / "cmp2" / "report.csv").read_text() == (out / "report.csv").read_text()


def test_rerun_from_manifest_is_byte_identical(work, tmp_path, monkeypatch):
    out = tmp_path / "ir"
    assert main(["irtps", str(work / "ds"), str(out), "--iters", "2", "--seed", "3"]) == 0
    monkeypatch.chdir(tmp_path)
    assert main(["rerun", str(out / "manifest.txt"), "--out", str(tmp_path / "re"),
                 "--threads", "1"]) == 0
    assert digest(out) == digest(tmp_path / "re")
    assert main(["rerun", str(tmp_path / "missing.txt")]) == 3


def test_rerun_output_named_like_command(work, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["ps", str(work / "ds"), "ps"]) == 0
    assert main(["rerun", "ps/manifest.txt", "--out", "other"]) == 0
    assert digest(tmp_path / "ps") == digest(tmp_path / "other")


def test_threads_env_fallback(work, tmp_path, monkeypatch):
    monkeypatch.setenv("IRTPS_THREADS", "1")
    assert main(["render", str(work / "sphere.cfg"), str(tmp_path / "t1")]) == 0
    assert digest(tmp_path / "t1") == digest(work / "ds")


def test_inputs_not_mutated(work, tmp_path):
    before = {p.name: p.read_bytes() for p in (work / "ds").iterdir()}
    main(["ps", str(work / "ds"), str(tmp_path / "a")])
    main(["irtps", str(work / "ds"), str(tmp_path / "b"), "--iters", "1"])
    main(["eval", str(tmp_path / "a"), str(work / "ds")])
    assert {p.name: p.read_bytes() for p in (work / "ds").iterdir()} == before


def test_pfm_outputs_are_finite(work, tmp_path):
    main(["ps", str(work / "ds"), str(tmp_path / "a")])
    for p in (tmp_path / "a").glob("*.pfm"):
        assert np.all(np.isfinite(read_pfm(p)))
