import json
import re

import numpy as np
import pytest

from conceptrace.report import build_report, cell_color, discover_traces, heatmap_svg
from conceptrace.tracer import TokenInfo, TraceConfig, TraceResult, save_trace


def _cells(svg):
    return re.findall(r'<rect class="cell"[^>]*data-token="(\d+)" data-layer="(\d+)" '
                      r'data-value="([^"]+)"', svg)


@pytest.mark.parametrize("kind,full", [("hidden", "#54278f"), ("mlp", "#006d2c"), ("mha", "#a50f15")])
def test_cell_color_ends(kind, full):
    assert cell_color(0.0, kind) == "#ffffff"
    assert cell_color(1.0, kind) == full
    assert cell_color(2.0, kind) == full


def test_single_hot_cell():
    m = np.zeros((3, 4))
    m[1, 2] = 1.0
    svg = heatmap_svg(m, ["a*", "b", "c"], "hidden")
    cells = _cells(svg)
    assert len(cells) == 12
    hot = [(int(t), int(l)) for t, l, v in cells if float(v) == 1.0]
    assert hot == [(1, 2)]
    assert svg.count('fill="#54278f"') == 1
    assert "linearGradient" in svg and ">a*<" in svg


def _fake(sid, T, kind="hidden", value=0.5):
    m = np.full((T, 2), value)
    m[0, 0] = 1.0
    toks = tuple(TokenInfo(f"w{i}", i < 2) for i in range(T))
    return TraceResult(sid, kind, m, m, 0.9, 0.1, TraceConfig(kind=kind), toks)


def test_build_report(tmp_path):
    traces = tmp_path / "traces"
    for i, T in enumerate([4, 4, 5, 4, 9]):
        save_trace(_fake(f"s{i}", T), traces)
    save_trace(_fake("s0", 4, "mlp"), traces)
    (traces / "junk.json").write_text("{}")
    (traces / "junk.csv").write_text("1,2\n")
    out = tmp_path / "report"
    summary = build_report(traces, out, [1, 3])
    assert sorted(summary["kinds"]) == ["hidden", "mlp"]
    assert [s["file"] for s in summary["skipped"]] == ["junk.json"]
    hidden = summary["kinds"]["hidden"]
    assert hidden["aggregate"]["bucket"]["lo"] == 4 and hidden["aggregate"]["bucket"]["hi"] == 5
    assert hidden["per_k"]["1"]["layer_histogram"]["counts"] == [5, 0]
    mean = np.loadtxt(out / "hidden_mean.csv", delimiter=",")
    assert mean.shape == (5, 2)
    assert (out / "svg" / "s4.hidden.svg").exists()
    svg = (out / "svg" / "s4.hidden.svg").read_text()
    assert len(_cells(svg)) == 9 * 2
    json.dumps(summary)


def test_build_report_empty(tmp_path):
    with pytest.raises(FileNotFoundError, match="no traces found"):
        build_report(tmp_path, tmp_path / "out")
    found, skipped = discover_traces(tmp_path)
    assert found == [] and skipped == []
