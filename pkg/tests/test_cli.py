import csv
import subprocess
import sys

import pytest

from soar.bench import SPEC_KEYS, load_manifest
from soar.cli import FILTER_KEYS, TRACE_KEYS, build_parser, load_config, main


def run_cli(*argv):
    return main(list(argv))


def test_no_arguments_prints_usage(capsys):
    assert run_cli() == 0
    assert "usage: soar" in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "soar"], capture_output=True, text=True)
    assert out.returncode == 0 and "usage" in out.stdout


@pytest.mark.parametrize("command,keys", [("bench", SPEC_KEYS), ("solve", SPEC_KEYS),
                                          ("trace", {**SPEC_KEYS, **TRACE_KEYS}),
                                          ("filters", FILTER_KEYS)])
def test_help_lists_every_key(command, keys):
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    text = sub.format_help()
    for key in keys:
        assert f"  {key} = " in text


def test_filters_writes_curves(tmp_path):
    assert run_cli("filters", "--output-dir", str(tmp_path)) == 0
    with open(tmp_path / "filters.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * 64
    assert {"alpha", "lambda", "g", "phi", "r", "regime"} <= set(rows[0])


def test_filters_flags(tmp_path):
    code = run_cli("filters", "--output-dir", str(tmp_path), "--eta", "0.5",
                   "--alphas", "0.1,0.01", "--lambdas", "10")
    assert code == 0
    with open(tmp_path / "filters.csv") as fh:
        assert sum(1 for _ in fh) == 1 + 20


def test_bench_example2_with_overrides(tmp_path, capsys):
    code = run_cli("bench", "--config", "example2.cfg", "--output-dir", str(tmp_path),
                   "--override", "methods=soar_sv,cgne", "--override", "n=100", "-v")
    assert code == 0
    with open(tmp_path / "records.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["method"], r["rule"]) for r in rows] == [
        ("soar_sv", "dp"), ("soar_sv", "tedp"), ("cgne", "dp"), ("cgne", "tedp")]
    assert all(r["status"] == "ok" for r in rows)
    spec = load_manifest(tmp_path / "manifest.txt")
    assert spec.n == 100 and spec.methods == ("soar_sv", "cgne")
    assert "k*=" in capsys.readouterr().out


def test_preset_parameters():
    m = load_config("example1.cfg", "bench")
    assert m["n"] == "400" and float(m["dt"]) == 19.4946 and float(m["eta"]) == 2.5648e-4
    assert m["delta_primes"] == "1e-3"
    t = load_config("example1", "trace")
    assert "etas" in t and "steps" in t
    assert "etas" not in load_config("example1.cfg", "bench")


def test_solve_writes_outputs(tmp_path, capsys):
    code = run_cli("solve", "--config", "example1.cfg", "--output-dir", str(tmp_path),
                   "--override", "n=100", "--override", "eta=0.025648")
    assert code == 0
    for name in ("trajectory.csv", "solution.csv", "manifest.txt"):
        assert (tmp_path / name).exists()
    assert "reason=DiscrepancyCrossed" in capsys.readouterr().out


def test_trace_writes_files(tmp_path):
    code = run_cli("trace", "--config", "example1.cfg", "--output-dir", str(tmp_path),
                   "--override", "n=60", "--override", "steps=200")
    assert code == 0
    assert len(list((tmp_path / "trace").glob("*.csv"))) == 3


def test_step_violation_is_config_error(tmp_path, capsys):
    code = run_cli("bench", "--config", "example1.cfg", "--output-dir", str(tmp_path),
                   "--override", "allow_unstable_step=false", "--override", "n=60")
    assert code == 1
    assert "error[config]:" in capsys.readouterr().err
    with open(tmp_path / "records.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert all(r["status"] == "ConfigError" for r in rows)


def test_empty_config_uses_defaults(tmp_path, capsys):
    cfg = tmp_path / "empty.cfg"
    cfg.write_text("")
    code = run_cli("solve", "--config", str(cfg), "--output-dir", str(tmp_path),
                   "--override", "n=60", "--max-iter", "50")
    assert code == 0
    assert "soar_sv dp" in capsys.readouterr().out


@pytest.mark.parametrize("text,needle", [
    ("[bench]\nbogus = 1\n", "unknown key"),
    ("[elsewhere]\nn = 10\n", "unknown section"),
    ("[bench]\nn = 10\n  = \nnot a line\n", "line"),
    ("[bench]\nn = ten\n", "bad value"),
])
def test_bad_config_files(tmp_path, capsys, text, needle):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert run_cli("bench", "--config", str(cfg), "--output-dir", str(tmp_path)) == 1
    err = capsys.readouterr().err
    assert err.startswith("error[config]:") and needle in err


def test_missing_config(tmp_path, capsys):
    assert run_cli("bench", "--config", str(tmp_path / "none.cfg")) == 1
    assert "not found" in capsys.readouterr().err


def test_bad_override(tmp_path, capsys):
    assert run_cli("bench", "--override", "nope=1", "--output-dir", str(tmp_path)) == 1
    assert run_cli("bench", "--override", "n", "--output-dir", str(tmp_path)) == 1
    assert "error[config]" in capsys.readouterr().err


def test_cap_exceeded(tmp_path, capsys):
    code = run_cli("bench", "--override", "seeds=0,1,2", "--override", "cap=2",
                   "--output-dir", str(tmp_path))
    assert code == 1 and "cap" in capsys.readouterr().err
