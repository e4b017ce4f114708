import json
import shutil

import pytest
from hypothesis import given, strategies as st

from rfcw.cli import main
from rfcw.config import RunConfig
from rfcw.errors import DomainError

ROOTS_C005_B15 = (-0.818822539437953654669918482976, -0.152392836148161952722715567823,
                  0.886314367175917432574794239907)


def write_config(path, text):
    path.write_text(text)
    return str(path)


def test_default_config_round_trip():
    cfg = RunConfig.default()
    back = RunConfig.from_text(cfg.to_text())
    assert back.as_dict() == cfg.as_dict()


@given(st.dictionaries(st.sampled_from(["N", "beta", "seed", "extra_key"]),
                       st.from_regex(r"[A-Za-z0-9_.:,-]{1,12}", fullmatch=True), max_size=4))
def test_config_round_trip_keeps_unknown_keys(values):
    cfg = RunConfig.default()
    for k, v in values.items():
        cfg.set("model", k, v)
    cfg.set("custom", "key", "value")
    back = RunConfig.from_text(cfg.to_text())
    assert back.as_dict() == cfg.as_dict()


def test_typed_accessors():
    cfg = RunConfig.from_text("[simulate]\nR = 1e3\n[solver]\nwindow = 40,25\n")
    assert cfg.get_int("simulate", "R") == 1000
    assert cfg.get_window() == (40, 25)
    assert RunConfig.default().get_window() is None
    with pytest.raises(DomainError):
        RunConfig.from_text("[model]\nN = ten\n").get_int("model", "N")
    with pytest.raises(DomainError):
        RunConfig.from_text("[solver]\nwindow = 40\n").get_window()
    with pytest.raises(DomainError):
        RunConfig.default().get("model", "missing")
    with pytest.raises(DomainError):
        RunConfig.from_text("not a config")


def test_landscape_command_reports_three_critical_points(tmp_path):
    cfg = write_config(tmp_path / "c.ini", "[model]\nN = 500\nbeta = 1.5\ndist = constant:0.05\n")
    out = tmp_path / "o"
    assert main(["--config", cfg, "--out", str(out), "landscape"]) == 0
    rec = json.loads((out / "landscape.json").read_text())
    cps = rec["payload"]["critical_points"]
    assert [c["kind"] for c in cps] == ["minimum", "maximum", "minimum"]
    for c, m in zip(cps, ROOTS_C005_B15):
        assert c["m_star"] == pytest.approx(m, abs=1e-10)
    assert rec["command"] == "landscape" and "version" in rec
    assert (out / "landscape.csv").read_text().startswith("m,F,I,a")


def test_landscape_without_barrier_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.ini", "[model]\nN = 100\nbeta = 0.5\n")
    assert main(["--config", cfg, "--out", str(tmp_path / "o"), "landscape"]) == 2
    assert "rfcw landscape" in capsys.readouterr().err


def test_domain_errors_exit_2(tmp_path):
    cfg = write_config(tmp_path / "c.ini", "[model]\nN = -4\n")
    assert main(["--config", cfg, "--out", str(tmp_path / "o"), "predict"]) == 2
    assert main(["--seed", "-1", "--out", str(tmp_path / "o"), "predict"]) == 2
    assert main(["--threads", "0", "--out", str(tmp_path / "o"), "predict"]) == 2


def test_missing_field_file_exits_1(tmp_path):
    cfg = write_config(tmp_path / "c.ini", f"[model]\nfield_file = {tmp_path / 'nope.txt'}\n")
    assert main(["--config", cfg, "--out", str(tmp_path / "o"), "predict"]) == 1


def test_outputs_are_byte_identical_across_runs(tmp_path):
    cfg = write_config(tmp_path / "c.ini",
                       "[model]\nN = 60\nbeta = 1.5\ndist = two_valued:0.2\nseed = 3\n"
                       "[partition]\nn = 2\n[simulate]\nR = 50\n")
    out = tmp_path / "o"
    for cmd in ("predict", "exact", "simulate"):
        assert main(["--config", cfg, "--out", str(out), cmd]) == 0
    first = {p.name: p.read_bytes() for p in out.iterdir() if not p.name.endswith(".timing.json")}
    shutil.rmtree(out)
    for cmd in ("predict", "exact", "simulate"):
        assert main(["--config", cfg, "--out", str(out), "--threads", "3", cmd]) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir() if not p.name.endswith(".timing.json")}
    assert first.keys() == second.keys() and first == second
    assert {"predict.json", "exact.json", "simulate.json", "replicas.csv"} <= set(first)


def test_seed_flag_changes_the_field(tmp_path):
    cfg = write_config(tmp_path / "c.ini", "[model]\nN = 60\ndist = uniform:-0.2:0.2\n")
    a, b = tmp_path / "a", tmp_path / "b"
    main(["--config", cfg, "--out", str(a), "--seed", "1", "predict"])
    main(["--config", cfg, "--out", str(b), "--seed", "2", "predict"])
    pa = json.loads((a / "predict.json").read_text())["payload"]
    pb = json.loads((b / "predict.json").read_text())["payload"]
    assert pa["seed"] == 1 and pb["seed"] == 2 and pa["zstar"] != pb["zstar"]


def test_validate_and_report(tmp_path):
    cfg = write_config(tmp_path / "c.ini",
                       "[model]\nN = 60\nbeta = 1.5\ndist = two_valued:0.2\nseed = 3\n"
                       "[partition]\nn = 2\n[simulate]\nR = 50\n[bounds]\npaths = 500\n")
    out = tmp_path / "o"
    assert main(["--config", cfg, "--out", str(out), "validate"]) == 0
    rec = json.loads((out / "validate.json").read_text())
    assert rec["payload"] and rec["methods"]
    assert main(["--config", cfg, "--out", str(out), "report"]) == 0
    assert (out / "report.md").read_text().strip()
