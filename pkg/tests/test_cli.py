import json

import pytest

from liebm.cli import KINDS, ConfigError, ExperimentConfig, content_hash, describe, list_experiments, load_config, main, run

QUICK = {
    "bm_check": ["--levels", "5", "--seed", "0", "--group", "r:1"],
    "tube_sharpness": ["--levels", "4"],
    "slab_sharpness": ["--levels", "5"],
    "collapse": ["--levels", "5"],
    "stability": ["--group", "r:2", "--levels", "4"],
    "fiber_suite": ["--levels", "3"],
    "dim_eval": ["--group", "sl2r"],
    "optimize": ["--levels", "4", "--seed", "0", "--param", "budget=3"],
}


def test_list_has_every_kind(capsys):
    assert main(["--list"]) == 0
    out = capsys.readouterr().out
    assert len(KINDS) == 8
    for k in KINDS:
        assert k in out
    assert list_experiments() in out


def test_describe(capsys):
    assert main(["--describe", "collapse"]) == 0
    out = capsys.readouterr().out
    assert "rho" in out and "grid_ratio" in out
    assert "collapse" in describe("collapse")
    assert main(["--describe", "nope"]) == 2


@pytest.mark.parametrize("kind", sorted(QUICK))
def test_each_kind_runs(kind, tmp_path, capsys):
    out = tmp_path / kind
    code = main(["--experiment", kind, "--out", str(out)] + QUICK[kind])
    csv_text = (tmp_path / f"{kind}.csv").read_text()
    report = json.loads((tmp_path / f"{kind}.json").read_text())
    assert csv_text.splitlines()[0].split(",") == list(KINDS[kind].columns)
    assert report["columns"] == list(KINDS[kind].columns)
    assert code == (0 if report["passed"] else 1)
    assert len(report["rows"]) == len(csv_text.splitlines()) - 1


def test_collapse_exit_code_reflects_failure(capsys):
    # the grid ratio at level 5 is above the 1.1 target
    assert main(["--experiment", "collapse", "--levels", "5"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path):
    args = ["--experiment", "bm_check", "--group", "aff", "--levels", "4", "--seed", "3", "--samples", "20000"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    ja = json.loads((tmp_path / "a.json").read_text())
    jb = json.loads((tmp_path / "b.json").read_text())
    assert ja["content_hash"] == jb["content_hash"] and ja["rows"] == jb["rows"]


def test_ini_config(tmp_path, capsys):
    ini = tmp_path / "exp.ini"
    ini.write_text("[experiment]\nkind = tube_sharpness\ngroup = r:2\nlevels = 4,5\n\n[params]\ndelta = 0.2\n")
    cfg = load_config(str(ini))
    assert cfg.kind == "tube_sharpness" and cfg.levels == [4, 5]
    assert main(["--config", str(ini)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and lines[1].split(",")[1] == "0.2"


@pytest.mark.parametrize("args", [
    ["--experiment", "bm_check", "--levels", "4"],                      # missing seed
    ["--experiment", "tube_sharpness", "--levels", "5,4"],              # decreasing schedule
    ["--experiment", "tube_sharpness"],                                 # empty schedule
    ["--experiment", "tube_sharpness", "--levels", "4", "--param", "bogus=1"],
    ["--experiment", "tube_sharpness", "--levels", "4", "--param", "delta=abc"],
    ["--experiment", "tube_sharpness", "--levels", "4", "--group", "nope"],
    ["--experiment", "unknown", "--levels", "4"],
    [],
])
def test_schema_errors_exit_2(args, capsys):
    assert main(args) == 2
    assert "error:" in capsys.readouterr().err


def test_bad_ini(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[experiment]\nkind = collapse\ncolour = red\n")
    with pytest.raises(ConfigError):
        load_config(str(ini))
    assert main(["--config", str(ini)]) == 2


def test_content_hash_stable():
    a = ExperimentConfig("collapse", levels=[5], params={"s": "0.05"}).validate()
    b = ExperimentConfig("collapse", levels=[5], params={"s": 0.05}, out="elsewhere").validate()
    assert content_hash(a) == content_hash(b)
    assert len(content_hash(a)) == 40
    c = ExperimentConfig("collapse", levels=[6]).validate()
    assert content_hash(c) != content_hash(a)


def test_run_api():
    res = run(ExperimentConfig("dim_eval", params={"expr": "ext_lie(z, t)"}))
    assert res.exit_code == 1 and res.csv.rstrip().endswith(",UNSUPPORTED")
