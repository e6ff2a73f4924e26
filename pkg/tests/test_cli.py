import csv
import json
from pathlib import Path

import pytest
import yaml

from kahlerlab.cli import consolidate, load_config, main, poincare_moment_closed_form
from kahlerlab.errors import ConfigInvalid, MissingManifest

ROOT = Path(__file__).resolve().parents[1]


def write(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_iterate_poincare_end_to_end(tmp_path):
    cfg = write(tmp_path, {"experiment": "iterate", "start": {"kind": "shift", "value": 1.0},
                           "numeric": {"k0": 2, "k_max": 30}})
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "out")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "trace.csv")))
    assert len(rows) == 29
    assert float(rows[8]["sup_error"]) == pytest.approx(1 / 9, abs=1e-9)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["passed"]
    listed = {f["name"] for f in manifest["files"]} | {"manifest.json"}
    assert listed == {p.name for p in (tmp_path / "out").iterdir()}


def test_k0_one_is_rejected(tmp_path, capsys):
    cfg = write(tmp_path, {"experiment": "iterate", "numeric": {"k0": 1}})
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 1
    assert "degenerate" in capsys.readouterr().err


def test_unknown_keys_rejected(tmp_path):
    cfg = write(tmp_path, {"experiment": "iterate", "numeric": {"tolerence": 1e-3}})
    with pytest.raises(ConfigInvalid, match="tolerence"):
        load_config(cfg)
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 1


def test_usage_errors_exit_one(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--out-dir", str(tmp_path)]) == 1


def test_tol_override(tmp_path):
    cfg = write(tmp_path, {"experiment": "laplace"})
    assert load_config(cfg, 1e-3)["numeric"]["tolerance"] == 1e-3


def test_failed_invariant_exit_two(tmp_path):
    cfg = write(tmp_path, {"experiment": "variation",
                           "variation": {"profile": "growing", "expected": "yes", "n_t": 3, "n_z": 3}})
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["failed_checks"] == ["verdict"]


def test_oracle_dump_matches_beta(tmp_path):
    cfg = write(tmp_path, {"experiment": "oracle-dump", "oracle": {"k": 3, "J": 64}})
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "moments.csv")))
    assert len(rows) == 65
    assert max(float(r["rel_err"]) for r in rows) <= 1e-11


def test_closed_form_moment():
    # k = 3, j = 0: pi B(1, 5) / 4 = pi / 20
    assert poincare_moment_closed_form(3, 0) == pytest.approx(3.141592653589793 / 20, rel=1e-15)


def test_reproducible_csv(tmp_path):
    cfg = write(tmp_path, {"experiment": "iterate", "instance": {"kind": "manufactured", "perturbation": [0.05]},
                           "schedule": {"kind": "generic"}, "numeric": {"k_max": 6}})
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_report_merges_runs(tmp_path, capsys):
    for kind in ("kahler_einstein", "generic"):
        cfg = write(tmp_path, {"experiment": "iterate", "schedule": {"kind": kind},
                               "start": {"kind": "shift", "value": 0.5},
                               "numeric": {"k0": 2, "k_max": 12}}, f"{kind}.yaml")
        assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / kind)]) == 0
    rows = consolidate([tmp_path / "kahler_einstein", tmp_path / "generic"])
    assert [r["schedule"] for r in rows] == ["generic", "kahler_einstein"]
    assert all(r["alpha"] is not None for r in rows)
    assert main(["report", str(tmp_path / "generic"), str(tmp_path / "kahler_einstein"),
                 "--out-dir", str(tmp_path / "rep")]) == 0
    table = list(csv.DictReader(open(tmp_path / "rep" / "report.csv")))
    assert len(table) == 2 and "alpha" in table[0]


def test_report_empty_and_corrupted(tmp_path, capsys):
    assert main(["report"]) == 0
    assert json.loads(capsys.readouterr().out) == []
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "manifest.json").write_text("{not json")
    with pytest.raises(MissingManifest, match="bad"):
        consolidate([bad])
    assert main(["report", str(bad)]) == 1


def test_shipped_configs_validate():
    for path in sorted((ROOT / "configs").glob("*.yaml")):
        load_config(path)
