from __future__ import annotations

import json
import re

import pytest

from conftest import write_tree
from qaforge.cli import main

METHOD = """  int work{n}(int count) {{
    int total = 0;
    for (int i = 0; i < count; i++) {{
      total = total + i;
      log(total);
    }}
    if (total > 100) {{
      total = 100;
    }}
    store(total);
    return total;
  }}
"""


def project(root, version: int):
    """Version k has k copies of the same method in the data layer and a
    presentation class that reaches into the data layer from version 2."""
    data = "package app.data;\nclass Repo {\n" + "".join(METHOD.format(n=k) for k in range(version + 1)) + "}\n"
    ui = "package app.ui;\nimport app.logic.Svc;\n"
    if version >= 2:
        ui += "import app.data.Repo;\n"
    ui += "class Form {\n  void show() {\n    render();\n  }\n}\n"
    logic = "package app.logic;\nimport app.data.Repo;\nclass Svc {\n  void run() {\n    go();\n  }\n}\n"
    write_tree(root, {"app/data/Repo.java": data, "app/ui/Form.java": ui, "app/logic/Svc.java": logic})
    return root


MODEL = {
    "schema": "archmodel.v1",
    "components": [
        {"name": "UI", "maps": ["app.ui.*"], "layer_rank": 0},
        {"name": "Logic", "maps": ["app.logic.*"], "layer_rank": 1},
        {"name": "Data", "maps": ["app.data.*"], "layer_rank": 2},
    ],
    "rules": [{"from": "UI", "to": "Logic", "policy": "allow"}, {"from": "Logic", "to": "Data", "policy": "allow"}],
}


def setup(tmp_path, version=1, gates=None, **extra):
    src = project(tmp_path / f"src{version}", version)
    (tmp_path / "arch.json").write_text(json.dumps(MODEL))
    cfg = {
        "version_label": f"V{version}",
        "sequence": version,
        "corpus": {"root": src.name, "profile": "java"},
        "clones": {"min_length": 5},
        "architecture": "arch.json",
        "out": "out",
        "history": "history",
        **extra,
    }
    if gates is not None:
        (tmp_path / "gates.json").write_text(json.dumps({"schema": "gates.v1", "gates": gates}))
        cfg["gates"] = "gates.json"
    path = tmp_path / f"config{version}.json"
    path.write_text(json.dumps(cfg))
    return path


PASSING = [{"id": "entity", "metric": "arch_violations_entity", "op": "=", "threshold": 0}]
FAILING = PASSING + [{"id": "cov", "metric": "clone_coverage", "op": "<", "threshold": 1}]


def test_gate_all_pass(tmp_path, capsys):
    assert main(["gate", "--config", str(setup(tmp_path, 1, PASSING))]) == 0
    out = capsys.readouterr().out
    assert "overall: PASS" in out
    result = json.loads((tmp_path / "out" / "gates-result.json").read_text())
    assert result["passed"] and result["exit_code"] == 0


def test_gate_hard_failure(tmp_path):
    assert main(["gate", "--config", str(setup(tmp_path, 1, FAILING))]) == 1


def test_gate_soft_failure_passes(tmp_path, capsys):
    soft = PASSING + [{"id": "cov", "metric": "clone_coverage", "op": "<", "threshold": 1, "hard": False}]
    assert main(["gate", "--config", str(setup(tmp_path, 1, soft))]) == 0
    assert "-> warn" in capsys.readouterr().out


def test_gate_unknown_metric_exit_2(tmp_path):
    bad = [{"id": "x", "metric": "nonsense", "op": "<", "threshold": 1}]
    assert main(["gate", "--config", str(setup(tmp_path, 1, bad))]) == 2


def test_default_gates(tmp_path):
    cfg = setup(tmp_path, 2)
    data = json.loads(cfg.read_text())
    data["gates"] = "default"
    cfg.write_text(json.dumps(data))
    # version 2 has a presentation -> data violation, which the defaults treat as hard
    assert main(["gate", "--config", str(cfg)]) == 1


def test_missing_architecture_names_path(tmp_path, capsys):
    cfg = setup(tmp_path, 1)
    (tmp_path / "arch.json").unlink()
    assert main(["arch", "--config", str(cfg)]) == 2
    assert str(tmp_path / "arch.json") in capsys.readouterr().err


def test_config_errors(tmp_path):
    assert main(["clones", "--config", str(tmp_path / "nope.json")]) == 2
    cfg = setup(tmp_path, 1)
    data = json.loads(cfg.read_text())
    data["version_label"] = ""
    cfg.write_text(json.dumps(data))
    assert main(["clones", "--config", str(cfg)]) == 2
    data["version_label"] = "x"
    data["findings"] = {"inputs": [{"path": "missing.json"}]}
    cfg.write_text(json.dumps(data))
    assert main(["findings", "--config", str(cfg)]) == 2


def test_lock_file(tmp_path):
    cfg = setup(tmp_path, 1)
    (tmp_path / "out").mkdir()
    (tmp_path / "out" / ".qaforge.lock").write_text("123")
    assert main(["clones", "--config", str(cfg)]) == 2


def test_commands_write_artifacts(tmp_path, capsys):
    cfg = setup(tmp_path, 2)
    for cmd in ("clones", "arch", "metrics"):
        assert main([cmd, "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    assert json.loads((out / "clones.json").read_text())["schema"] == "clones.v1"
    arch = json.loads((out / "archreport.json").read_text())
    assert arch["summary"]["entity_violations"] == 1
    assert arch["entity_level"][0]["defect_class"] == "layer_circumvention"
    assert json.loads((out / "metrics.json").read_text())["schema"] == "metrics.v1"
    manifest = json.loads((out / "run-manifest.json").read_text())
    assert manifest["command"] == "metrics" and "metrics.json" in manifest["outputs"]
    text = capsys.readouterr().out
    assert "conventional:" in text and "architecture:" in text and "metrics:" in text


def test_findings_command(tmp_path):
    cfg = setup(tmp_path, 1)
    report = tmp_path / "bugs.json"
    report.write_text(json.dumps({"schema": "findings.v1", "findings": [
        {"tool": "sb", "rule_id": "NP", "category": "correctness", "severity": 5, "path": "app/ui/Form.java", "line": 4},
        {"tool": "sb", "rule_id": "ST", "category": "style", "severity": 1, "path": "app/ui/Form.java", "line": 5},
    ]}))
    (tmp_path / "tax.json").write_text(json.dumps({"rules": [{"rule_id": "NP", "class": "bug"}]}))
    data = json.loads(cfg.read_text())
    data["findings"] = {"inputs": [{"path": "bugs.json"}], "taxonomy": "tax.json", "selector": {"min_severity": 2}}
    cfg.write_text(json.dumps(data))
    assert main(["findings", "--config", str(cfg)]) == 0
    doc = json.loads((tmp_path / "out" / "findings.json").read_text())
    assert [(f["rule_id"], f["taxonomy_class"]) for f in doc["findings"]] == [("NP", "bug")]


def test_byte_identical_reruns(tmp_path):
    cfg = setup(tmp_path, 2, PASSING)
    out = tmp_path / "out"
    assert main(["gate", "--config", str(cfg)]) == 1
    first = {p.name: p.read_bytes() for p in out.glob("*.json") if p.name != "run-manifest.json"}
    assert main(["gate", "--config", str(cfg)]) == 1
    second = {p.name: p.read_bytes() for p in out.glob("*.json") if p.name != "run-manifest.json"}
    assert first == second and "bundle.json" in first


def test_trend_needs_two_versions(tmp_path):
    cfg = setup(tmp_path, 1, PASSING)
    assert main(["gate", "--config", str(cfg)]) == 0
    assert main(["trend", "--config", str(cfg)]) == 2


def test_report_three_versions(tmp_path, capsys):
    for v in (1, 2, 3):
        code = main(["report", "--config", str(setup(tmp_path, v, PASSING))])
        assert code == (0 if v == 1 else 1)
    html = (tmp_path / "out" / "dashboard.html").read_text()
    assert len(re.findall(r'<tr class="trend-row">', html)) == 3
    for v in (1, 2, 3):
        assert f"V{v}" in html
    assert 'id="artifact-clones"' in html and "http" not in html.split("<body", 1)[1].split("artifact-", 1)[0]
    trends = json.loads((tmp_path / "out" / "trends.json").read_text())
    assert trends["versions"] == ["V1", "V2", "V3"]
    blow = next(s for s in trends["series"] if s["metric"] == "clone_blow_up")
    assert blow["direction"] == "worsening"
    assert [v for _, v in blow["points"]] == sorted(v for _, v in blow["points"])
    assert main(["trend", "--config", str(setup(tmp_path, 3, PASSING))]) == 0
    assert "clone_coverage" in capsys.readouterr().out


def test_cli_flags_override(tmp_path):
    cfg = setup(tmp_path, 1)
    out = tmp_path / "elsewhere"
    assert main(["clones", "--config", str(cfg), "--out", str(out), "--version-label", "custom"]) == 0
    assert json.loads((out / "clones.json").read_text())["version_label"] == "custom"


def test_change_set_scope(tmp_path):
    gates = [{"id": "cs", "metric": "arch_violations_entity", "op": "=", "threshold": 0, "scope": "change_set"}]
    cfg = setup(tmp_path, 2, gates, change_set=["app/logic/Svc.java"])
    assert main(["gate", "--config", str(cfg)]) == 0
    cfg = setup(tmp_path, 2, gates, change_set=["app/ui/Form.java"])
    assert main(["gate", "--config", str(cfg)]) == 1


def test_version_flag(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert "qaforge" in capsys.readouterr().out
