import csv
import json

import numpy as np
import pytest

from s2attn.cli import main
from s2attn.config import LayerSchedule, dense_config, strided_config
from s2attn.pattern import build_head_mask
from s2attn.render import parse_pgm, parse_text


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return str(path)


@pytest.fixture
def left_cfg(tmp_path):
    return write(tmp_path, {"pattern": strided_config(8, 1, 4, 2, 3).to_dict()})


def test_render_text_row7(left_cfg, capsys):
    assert main(["pattern", "render", "--config", left_cfg, "--head", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 8
    assert lines[7] == ".#..#.##"


def test_render_text_roundtrip(left_cfg, tmp_path):
    out = tmp_path / "m.txt"
    assert main(["pattern", "render", "--config", left_cfg, "--head", "2", "--out", str(out)]) == 0
    parsed = parse_text(out.read_text(), head_index=2)
    assert parsed == build_head_mask(strided_config(8, 1, 4, 2, 3), 2)


def test_render_dense_triangle(tmp_path, capsys):
    cfg = write(tmp_path, dense_config(40, 8).to_dict())
    main(["pattern", "render", "--config", cfg])
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["#" * (i + 1) + "." * (4 - i) for i in range(5)]


def test_render_pgm(left_cfg, tmp_path):
    out = tmp_path / "m.pgm"
    assert main(["pattern", "render", "--config", left_cfg, "--head", "1", "--format", "pgm",
                 "--out", str(out)]) == 0
    data = out.read_bytes()
    assert data.startswith(b"P5\n8 8\n255\n")
    assert len(data) == len(b"P5\n8 8\n255\n") + 64
    assert parse_pgm(data, 1) == build_head_mask(strided_config(8, 1, 4, 2, 3), 1)


def test_render_unknown_head(left_cfg, capsys):
    assert main(["pattern", "render", "--config", left_cfg, "--head", "9"]) != 0
    assert "head" in capsys.readouterr().err


def test_render_unwritable_path(left_cfg, tmp_path):
    assert main(["pattern", "render", "--config", left_cfg, "--out", str(tmp_path / "no" / "x.txt")]) != 0


def test_verify_passes(tmp_path):
    cfg = write(tmp_path, strided_config(64 * 40, 64, 16, 2, 3).to_dict())
    out = tmp_path / "report.json"
    assert main(["pattern", "verify", "--config", cfg, "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["union_complete"] and report["heterogeneous"] and report["kv_cache_efficient"]
    assert report["violations"] == []


def test_verify_union_failure(tmp_path, capsys):
    cfg = write(tmp_path, strided_config(64 * 40, 64, 16, 1, 17).to_dict())
    out = tmp_path / "report.json"
    assert main(["pattern", "verify", "--config", cfg, "--out", str(out)]) != 0
    report = json.loads(out.read_text())
    assert not report["union_complete"]
    union = [v for v in report["violations"] if v["rule"] == "union"]
    assert union and all(v["key_block"] % 17 == 16 for v in union)


def test_verify_single_head(tmp_path, capsys):
    cfg = write(tmp_path, strided_config(256, 16, 1, 1, 1).to_dict())
    assert main(["pattern", "verify", "--config", cfg]) != 0
    text = capsys.readouterr().out
    assert "heterogeneous: FAIL" in text and "at least 2 heads" in text


def test_invalid_config_diagnostic(tmp_path, capsys):
    doc = {"pattern": strided_config(64, 8, 4, 1, 2).to_dict()}
    doc["pattern"]["num_kv_heads"] = 3
    cfg = write(tmp_path, doc)
    assert main(["pattern", "verify", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "pattern.num_kv_heads" in err and "cfg.json:" in err


def test_malformed_json_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seq_len": 8,\n  oops\n}')
    assert main(["pattern", "verify", "--config", str(path)]) == 2
    assert "bad.json:3" in capsys.readouterr().err


def test_report_flops_prints_analytic(tmp_path, capsys):
    cfg = write(tmp_path, strided_config(8192, 64, 16, 1, 16).to_dict())
    out = tmp_path / "flops.csv"
    assert main(["report", "flops", "--config", cfg, "--out", str(out)]) == 0
    assert "14.32" in capsys.readouterr().out
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["layer", "head", "metric", "value"]
    assert len(rows) == 1 + 16 * 3 + 2


def test_report_flops_dense(tmp_path, capsys):
    cfg = write(tmp_path, dense_config(1024, 64, 2).to_dict())
    main(["report", "flops", "--config", cfg])
    assert "reduction: 1.00" in capsys.readouterr().out


def test_report_kvcache_targets(tmp_path, capsys):
    sched = LayerSchedule(24, strided_config(8192, 64, 16, 1, 15), {0, 1})
    doc = {"pattern": sched.sparse_pattern.to_dict(),
           "schedule": {"num_layers": 24, "dense_layer_ids": [0, 1]}}
    cfg = write(tmp_path, doc)
    out = tmp_path / "kv.csv"
    assert main(["report", "kvcache", "--config", cfg, "--out", str(out)]) == 0
    line = capsys.readouterr().out.strip()
    value = float(line.rsplit(" ", 1)[1].rstrip("%"))
    assert abs(value - 85.0) <= 0.5
    rows = list(csv.DictReader(out.open()))
    assert set(rows[0]) == {"layer", "head", "metric", "value"}
    dense_rows = [r for r in rows if r["layer"] == "0" and r["metric"] == "retained_fraction"]
    assert all(float(r["value"]) == 1.0 for r in dense_rows)


def test_report_kvcache_dense(tmp_path, capsys):
    cfg = write(tmp_path, dense_config(1024, 64, 2).to_dict())
    main(["report", "kvcache", "--config", cfg])
    assert "0.00%" in capsys.readouterr().out


def test_report_json_summary(tmp_path):
    cfg = write(tmp_path, {"pattern": strided_config(8192, 64, 16, 1, 16).to_dict(),
                           "report": {"format": "json", "out": str(tmp_path / "s.json")}})
    assert main(["report", "flops", "--config", cfg]) == 0
    summary = json.loads((tmp_path / "s.json").read_text())
    assert round(summary["analytic_reduction"], 2) == 14.32


def test_selftest_passes_and_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["selftest", "--seed", "3", "--instances", "12", "--out", str(a)]) == 0
    assert main(["selftest", "--seed", "3", "--instances", "12", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(a.open()))
    assert all(r["passed"] == "pass" for r in rows)


def test_selftest_detects_corruption(capsys):
    assert main(["selftest", "--instances", "4", "--corrupt-mask"]) != 0
    assert "FAIL" in capsys.readouterr().out


def test_render_is_byte_identical(left_cfg, tmp_path):
    outs = []
    for n in range(2):
        path = tmp_path / f"r{n}.pgm"
        main(["pattern", "render", "--config", left_cfg, "--head", "3", "--format", "pgm", "--out", str(path)])
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
