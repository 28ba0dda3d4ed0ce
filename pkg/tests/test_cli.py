import os

import pytest

from gpexplore.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_run_writes_four_files(tmp_path, capsys):
    out = tmp_path / "r"
    code, stdout, _ = _run(capsys, "run", "--surface", "parabola", "--policy", "gpal",
                           "--horizon", "1", "--seed", "42", "--n-max", "40",
                           "--iterations", "10", "--out", str(out))
    assert code == 0
    assert sorted(os.listdir(out)) == ["path.csv", "record.json", "rms.csv", "variance.csv"]
    fields = dict(kv.split("=") for kv in stdout.split())
    assert {"converged", "samples", "distance", "final_global_rms"} <= set(fields)
    assert fields["unique"] == "40"


def test_run_stdout_is_deterministic(capsys):
    argv = ["run", "--surface", "parabola", "--policy", "spiral", "--horizon", "4",
            "--noise", "0.02", "--iterations", "5"]
    assert _run(capsys, *argv)[1] == _run(capsys, *argv)[1]


@pytest.mark.parametrize("argv", [
    ["run", "--surface", "townsend", "--policy", "spiral", "--horizon", "global"],
    ["run", "--surface", "parabola", "--policy", "spiral", "--horizon", "1", "--n0", "4"],
    ["run", "--surface", "parabola", "--policy", "gpal", "--horizon", "zero"],
    ["run", "--surface", "parabola", "--policy", "gpal", "--horizon", "1", "--bogus"],
    ["run", "--surface", "parabola", "--policy", "gpal", "--horizon", "1", "--noise", "-1"],
    ["export", "--record", "x.json", "--series", "bogus", "--out", "x.csv"],
    ["sweep", "--out", "d"],
    [],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as err:
        main(argv)
    assert err.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_run_missing_surface_file_exits_1(capsys):
    code, _, err = _run(capsys, "run", "--surface", "missing.csv", "--policy", "spiral",
                        "--horizon", "1")
    assert code == 1
    assert "missing.csv" in err


def test_export_roundtrip_and_missing_record(tmp_path, capsys):
    out = tmp_path / "r"
    _run(capsys, "run", "--surface", "crater", "--policy", "boustrophedon", "--horizon", "2",
         "--iterations", "5", "--out", str(out))
    target = tmp_path / "x" / "rms.csv"
    code, _, _ = _run(capsys, "export", "--record", str(out / "record.json"), "--series", "rms",
                      "--out", str(target))
    assert code == 0
    assert target.read_bytes() == (out / "rms.csv").read_bytes()
    assert target.read_text().splitlines()[0] == "samples,local_rms,global_rms"
    code, _, err = _run(capsys, "export", "--record", str(tmp_path / "none.json"),
                        "--series", "rms", "--out", str(target))
    assert code == 1 and "none.json" in err


def _write_sweep(tmp_path, replicates=1):
    p = tmp_path / "sweep.yaml"
    p.write_text(
        "surface: parabola\n"
        "gp: {iterations: 5}\n"
        "experiments:\n"
        f"  - {{policy: spiral, horizons: [4, 5], replicates: {replicates}}}\n"
        f"  - {{policy: gpal, horizon: 1, n_max: 25, replicates: {replicates}}}\n")
    return str(p)


def test_sweep_writes_records_and_summaries(tmp_path, capsys):
    cfg = _write_sweep(tmp_path, replicates=2)
    code, stdout, _ = _run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path / "a"))
    assert code == 0
    files = sorted(os.listdir(tmp_path / "a"))
    assert sum(f.endswith(".json") for f in files) == 6
    assert {"summary_samples.csv", "summary_distance.csv", "summary_rms.csv",
            "summary_min_error.csv"} <= set(files)
    assert "records=6 failures=0" in stdout


def test_sweep_worker_counts_agree(tmp_path, capsys):
    cfg = _write_sweep(tmp_path)
    _run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path / "w1"), "--workers", "1")
    _run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path / "w8"), "--workers", "8")
    import json

    for name in os.listdir(tmp_path / "w1"):
        a = (tmp_path / "w1" / name).read_text()
        b = (tmp_path / "w8" / name).read_text()
        if name.endswith(".json"):
            a, b = json.loads(a), json.loads(b)
            a.pop("duration_s"), b.pop("duration_s")
        assert a == b


def test_sweep_bad_configs_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as err:
        main(["sweep", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)])
    assert err.value.code == 2
    zero = _write_sweep(tmp_path, replicates=0)
    with pytest.raises(SystemExit) as err:
        main(["sweep", "--config", zero, "--out", str(tmp_path)])
    assert err.value.code == 2
