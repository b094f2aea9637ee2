import json
import textwrap

import numpy as np
import pytest

from exactbridge.cli import main
from exactbridge.experiment import (
    ConfigError,
    parse_config,
    read_skeleton_file,
    resolve_seed,
    run_experiment,
)
from exactbridge.streams import stream_for

ZERO = textwrap.dedent(
    """\
    schema: 1
    model: {kind: zero}
    x: 0.0
    y: 0.0
    T: 1.0
    algorithm: cuea
    replications: 100
    seed: 3
    """
)

OU = textwrap.dedent(
    """\
    model: {kind: ou, theta: 1.0}
    x: 0.0
    y: 0.0
    T: 1.0
    algorithm: cauea
    seed: 4
    verification:
      ks_samples: 400
      query_times: [0.25, 0.5, 0.75]
      level: 0.01
    """
)


def test_zero_drift_run(tmp_path):
    cfg = parse_config(ZERO)
    assert run_experiment(cfg, out=tmp_path) == 0
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert diag["summary"]["acceptance_rate"] == 1.0
    header, skeletons = read_skeleton_file(tmp_path / "skeletons.csv")
    assert len(skeletons) == 100
    assert header["algorithm"] == "cuea" and header["seed"] == "3" and header["schema"] == "1"


def test_same_seed_gives_identical_files(tmp_path):
    cfg = parse_config(OU.replace("ks_samples: 400", "ks_samples: 100"))
    run_experiment(cfg, out=tmp_path / "a")
    run_experiment(cfg, out=tmp_path / "b", threads=3)
    for name in ("skeletons.csv", "diagnostics.json", "restored.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_ou_verification_exit_status(tmp_path):
    assert run_experiment(parse_config(OU), out=tmp_path / "good") == 0
    diag = json.loads((tmp_path / "good" / "diagnostics.json").read_text())
    assert [c["status"] for c in diag["verification"]] == ["pass"] * 3
    # at level 0.999 a check passes only with p >= 0.999, so the run must flag failure
    strict = parse_config(OU.replace("level: 0.01", "level: 0.999"))
    assert run_experiment(strict, out=tmp_path / "strict") == 1


def test_rows_sorted_and_jump_rows_share_a_time(tmp_path):
    cfg = parse_config(
        ZERO.replace("{kind: zero}", "{kind: zero, jumps: {rate: 2.0}}").replace("cuea", "caujea").replace("100", "20")
    )
    run_experiment(cfg, out=tmp_path)
    lines = [ln for ln in (tmp_path / "skeletons.csv").read_text().splitlines() if not ln.startswith("#")][1:]
    rows = [ln.split(",") for ln in lines]
    keys = [(int(r[0]), float(r[2])) for r in rows]
    assert keys == sorted(keys)
    kinds = [r[-1] for r in rows]
    for i, k in enumerate(kinds):
        if k == "jump-pre":
            assert kinds[i + 1] == "jump-post" and rows[i][2] == rows[i + 1][2]


def test_skeleton_file_round_trip(tmp_path):
    cfg = parse_config(OU.replace("ks_samples: 400", "ks_samples: 100"))
    run_experiment(cfg, out=tmp_path)
    _, sk = read_skeleton_file(tmp_path / "skeletons.csv")
    from exactbridge.experiment import format_skeleton_file

    again = format_skeleton_file(sorted(sk.items()), model="ou", algorithm="cauea", seed=4, T=1.0)
    assert again == (tmp_path / "skeletons.csv").read_text()


@pytest.mark.parametrize(
    "text, field, line",
    [
        (ZERO.replace("T: 1.0", "T: -1.0"), "T", 5),
        (ZERO.replace("algorithm: cuea", "algorithm: euler"), "algorithm", 6),
        (ZERO.replace("replications: 100", "replications: 0"), "replications", 7),
        (ZERO + "colour: red\n", "colour", 9),
        (ZERO.replace("{kind: zero}", "{kind: custom}"), "model", 2),
        (ZERO.replace("x: 0.0", "x: zero"), "x", 3),
    ],
)
def test_config_errors_name_field_and_line(text, field, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.field == field and err.value.line == line
    assert f"line {line}" in str(err.value)


def test_bad_yaml_reports_line():
    with pytest.raises(ConfigError) as err:
        parse_config("model: {kind: zero\nx: [1,\n")
    assert err.value.line is not None


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("EXACTBRIDGE_SEED", raising=False)
    assert resolve_seed(None, 5) == 5
    monkeypatch.setenv("EXACTBRIDGE_SEED", "9")
    assert resolve_seed(None, 5) == 9
    assert resolve_seed(11, 5) == 11


def test_cli_simulate_restore_and_density(tmp_path, capsys):
    cfg = tmp_path / "zero.yaml"
    cfg.write_text(ZERO.replace("100", "10"))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim"), "--seed", "8"]) == 0
    assert main(
        ["restore", "--skeletons", str(tmp_path / "sim" / "skeletons.csv"), "--times", "0.5", "--out", str(tmp_path / "res")]
    ) == 0
    restored = (tmp_path / "res" / "restored.csv").read_text().splitlines()
    assert len(restored) == 11
    capsys.readouterr()
    assert main(["density", "--config", str(cfg), "-n", "100"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["estimate"] == pytest.approx(1 / np.sqrt(2 * np.pi))


def test_cli_reports_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(ZERO.replace("T: 1.0", "T: 0"))
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert "field 'T'" in capsys.readouterr().err


def test_cli_verify_named_model(capsys):
    assert main(["verify", "zero", "-n", "200"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 6 and all(ln.startswith("PASS") for ln in lines)


def test_streams_are_reproducible_and_distinct():
    a = [stream_for(1, i).uniform() for i in range(3)]
    b = [stream_for(1, i).uniform() for i in range(3)]
    assert a == b and len(set(a)) == 3
    s = stream_for(2)
    assert s.exponential(0.0) == float("inf")
