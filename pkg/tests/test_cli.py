import json
import os

import pytest

from multienc.cli import parse_ladder, run


def _err(capsys):
    line = capsys.readouterr().err.strip().splitlines()[-1]
    assert line.startswith("error: ")
    return json.loads(line[len("error: "):])


def test_bdrate_identity(tmp_path, capsys):
    p = tmp_path / "a.csv"
    p.write_text("scheme,i,j,achieved_bitrate,psnr_y\n" + "".join(
        f"standalone,1,{j},{1000 * 2 ** j},{30 + 3 * j - 0.2 * j * j}\n" for j in range(1, 5)))
    assert run(["bdrate", str(p), str(p)]) == 0
    assert capsys.readouterr().out.strip() == "0.00%"


def test_unknown_scheme_is_machine_readable(tmp_path, capsys):
    assert run(["ladder", "--scheme", "mr9", "--out", str(tmp_path)]) != 0
    assert _err(capsys)["code"] == "unknown_scheme"


@pytest.mark.parametrize("scheme", ["mr2", "me1"])
def test_missing_predictor_is_an_error(tmp_path, capsys, scheme):
    assert run(["ladder", "--scheme", scheme, "--out", str(tmp_path)]) != 0
    assert _err(capsys)["code"] == "missing_predictor"


def test_ladder_presets_and_file(tmp_path):
    d = parse_ladder("desk")
    assert [(r.width, r.height) for r in d.resolutions] == [(192, 112), (384, 216), (768, 432)]
    assert d.bitrates[0] == (50e3, 100e3, 150e3, 200e3) and d.bitrates[2][-1] == 2.5e6
    p = parse_ladder("paper-ladder")
    assert p.bitrates[1] == (3.0e6, 4.5e6, 5.8e6, 7.0e6) and (p.resolutions[2].width, p.resolutions[2].height) == (3840, 2160)
    f = tmp_path / "l.txt"
    f.write_text("128x64: 6e4,1.2e5\n64x32: 2e4,4e4\n")
    lad = parse_ladder(str(f))
    assert [(r.width, r.height) for r in lad.resolutions] == [(64, 32), (128, 64)]
    assert lad.bitrates == ((2e4, 4e4), (6e4, 1.2e5))


def test_bad_ladder_file(tmp_path, capsys):
    f = tmp_path / "l.txt"
    f.write_text("128x64 6e4\n")
    assert run(["ladder", "--ladder", str(f), "--out", str(tmp_path / "o")]) != 0
    assert _err(capsys)["code"] == "bad_ladder"


def _tree(d):
    out = {}
    for n in sorted(os.listdir(d)):
        if n.endswith((".tvc", ".amet")):
            out[n] = (d / n).read_bytes()
    return out


def test_ladder_report_and_rerun(tmp_path, capsys):
    f = tmp_path / "l.txt"
    f.write_text("64x32: 1e4,2e4,3e4,4e4\n128x64: 4e4,6e4,9e4,1.2e5\n")
    common = ["--ladder", str(f), "--synth", "checkerboard-pan:128x64:3", "--search-range", "2"]
    assert run(["ladder", "--scheme", "standalone", "--out", str(tmp_path / "sa")] + common) == 0
    assert run(["ladder", "--scheme", "me4", "--out", str(tmp_path / "me4")] + common) == 0
    sa = tmp_path / "sa"
    assert len([n for n in os.listdir(sa) if n.endswith(".tvc")]) == 8
    assert len([n for n in os.listdir(sa) if n.endswith(".amet")]) == 8
    man = json.loads((sa / "manifest.json").read_text())
    assert man["seed"] == 1 and man["tool"] == "multienc" and "version" in man
    assert run(["report", str(sa), str(tmp_path / "me4"), "--out", str(tmp_path / "rep")]) == 0
    assert "ME-Scheme 4" in (tmp_path / "rep" / "report.md").read_text()
    assert run(["rerun", str(sa / "manifest.json"), "--out", str(tmp_path / "again")]) == 0
    assert _tree(sa) == _tree(tmp_path / "again")


def test_encode_subcommand(tmp_path):
    assert run(["encode", "--synth", "moving-gradient:64x32:2", "--qp", "30", "--out", str(tmp_path)]) == 0
    st = json.loads((tmp_path / "stats.json").read_text())
    assert st["qp"] == 30 and os.path.getsize(tmp_path / "encode.tvc") > 0


def test_train_predictor_writes_spm(tmp_path):
    f = tmp_path / "l.txt"
    f.write_text("64x64: 2e4,4e4\n128x128: 6e4,1.2e5\n")
    out = tmp_path / "m.spm"
    assert run(["train-predictor", "--ladder", str(f), "--synth", "seeded-noise:128x128:3",
                "--search-range", "2", "--out", str(out)]) == 0
    assert out.read_bytes()[:4] == b"SPM1"
