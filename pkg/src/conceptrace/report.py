"""SVG heatmaps and the aggregate summary produced by ``conceptrace report``."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .analytics import (aggregate_traces, group_by_pos, layer_histogram, length_stats,
                        select_length_bucket, shares, top_k)
from .tracer import TraceResult, format_matrix, load_trace

# Full-intensity colour per kind; cells interpolate linearly from white.
KIND_COLORS = {"hidden": (84, 39, 143), "mlp": (0, 109, 44), "mha": (165, 15, 21)}
CELL_W, CELL_H = 28, 18
CHAR_W = 7


def cell_color(value: float, kind: str) -> str:
    v = min(1.0, max(0.0, float(value)))
    full = KIND_COLORS.get(kind, (0, 0, 0))
    r, g, b = (round(255 + (c - 255) * v) for c in full)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(matrix: np.ndarray, row_labels: Sequence[str], kind: str, title: str = "") -> str:
    """Tokens top-to-bottom, layers 0..L-1 left-to-right, with a value colorbar."""
    m = np.asarray(matrix, dtype=np.float64)
    T, L = m.shape
    left = 16 + CHAR_W * max([len(s) for s in row_labels] + [4])
    top = 34
    grid_w, grid_h = L * CELL_W, T * CELL_H
    bar_x = left + grid_w + 24
    width = bar_x + 60
    height = top + grid_h + 48
    full = cell_color(1.0, kind)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<defs><linearGradient id="bar" x1="0" y1="1" x2="0" y2="0">'
        f'<stop offset="0" stop-color="#ffffff"/><stop offset="1" stop-color="{full}"/>'
        f'</linearGradient></defs>',
        f'<text x="{left}" y="16" font-size="12">{escape(title)}</text>',
    ]
    for t in range(T):
        y = top + t * CELL_H
        out.append(f'<text class="token" x="{left - 6}" y="{y + CELL_H - 5}" '
                   f'text-anchor="end">{escape(row_labels[t])}</text>')
        for l in range(L):
            v = float(m[t, l])
            out.append(f'<rect class="cell" x="{left + l * CELL_W}" y="{y}" width="{CELL_W}" '
                       f'height="{CELL_H}" fill="{cell_color(v, kind)}" data-token="{t}" '
                       f'data-layer="{l}" data-value="{v:.9g}"/>')
    for l in range(L):
        out.append(f'<text class="layer" x="{left + l * CELL_W + CELL_W / 2}" '
                   f'y="{top + grid_h + 14}" text-anchor="middle">{l}</text>')
    out.append(f'<text x="{left + grid_w / 2}" y="{top + grid_h + 32}" '
               f'text-anchor="middle">layer</text>')
    out.append(f'<text x="12" y="{top + grid_h / 2}" text-anchor="middle" '
               f'transform="rotate(-90 12 {top + grid_h / 2})">token</text>')
    out.append(f'<rect class="colorbar" x="{bar_x}" y="{top}" width="12" height="{grid_h}" '
               f'fill="url(#bar)" stroke="#999"/>')
    out.append(f'<text x="{bar_x + 16}" y="{top + 9}">1.0</text>')
    out.append(f'<text x="{bar_x + 16}" y="{top + grid_h}">0.0</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def trace_svg(result: TraceResult) -> str:
    labels = [tok.label for tok in result.tokens]
    title = f"{result.kind} restoration, {result.sample_id}"
    if result.definiendum:
        title += f" -> {result.definiendum}"
    return heatmap_svg(result.matrix, labels, result.kind, title)


def discover_traces(trace_dir) -> tuple[list[tuple[Path, TraceResult]], list[dict]]:
    """Every JSON with a sibling CSV is a trace; unparseable pairs are reported."""
    found, skipped = [], []
    for json_path in sorted(Path(trace_dir).glob("*.json")):
        if not json_path.with_suffix(".csv").exists():
            continue
        try:
            found.append((json_path, load_trace(json_path)))
        except Exception as exc:  # any malformed pair is reported, never fatal
            skipped.append({"file": json_path.name, "reason": f"{type(exc).__name__}: {exc}"})
    return found, skipped


def _kind_summary(traces: list[TraceResult], k_values: Sequence[int]) -> tuple[dict, object]:
    n_layers = traces[0].n_layers
    pos = {t.sample_id: (t.overlay.definiendum_pos if t.overlay else None) for t in traces}
    per_k = {}
    for k in k_values:
        sums = [top_k(t, k, t.overlay) for t in traces]
        dsr_cells, seg_cells = [], []
        for t, s in zip(traces, sums):
            if t.overlay is not None:
                dsr_cells += [t.overlay.dsr[c[0]] for c in s.cells]
                seg_cells += [t.overlay.segments[c[0]] for c in s.cells]
        per_k[str(k)] = {
            "layer_histogram": layer_histogram(sums, n_layers).to_json(),
            "label_shares": shares(dsr_cells),
            "segment_shares": shares(seg_cells),
            "pos_groups": {p: h.to_json() for p, h in group_by_pos(sums, pos, n_layers).items()},
            "length_stats": {str(n): v for n, v in length_stats(sums, n_layers).items()},
        }
    bucket, selected = select_length_bucket(traces)
    agg = aggregate_traces(selected, bucket)
    agg_json = {"bucket": bucket.to_json(), "n_samples": agg.n_samples, "shape": list(agg.shape)}
    for name, mat in (("mean", agg.mean), ("median", agg.median)):
        agg_json[f"{name}_top_k"] = {str(k): top_k(mat, k).to_json() for k in k_values}
    return {"n_traces": len(traces), "n_layers": n_layers, "per_k": per_k,
            "aggregate": agg_json}, agg


def build_report(trace_dir, out_dir, k_values: Sequence[int] = (10, 50)) -> dict:
    out_dir = Path(out_dir)
    found, skipped = discover_traces(trace_dir)
    if not found:
        raise FileNotFoundError(f"no traces found in {trace_dir}")
    svg_dir = out_dir / "svg"
    svg_dir.mkdir(parents=True, exist_ok=True)

    per_trace = []
    by_kind: dict[str, list[TraceResult]] = {}
    for path, tr in found:
        (svg_dir / f"{path.stem}.svg").write_text(trace_svg(tr))
        by_kind.setdefault(tr.kind, []).append(tr)
        per_trace.append({
            "file": path.name, "sample_id": tr.sample_id, "kind": tr.kind,
            "n_tokens": tr.n_tokens,
            "top_k": {str(k): top_k(tr, k, tr.overlay).to_json() for k in k_values},
        })

    kinds = {}
    for kind in sorted(by_kind):
        kinds[kind], agg = _kind_summary(by_kind[kind], k_values)
        for name, mat in (("mean", agg.mean), ("median", agg.median)):
            (out_dir / f"{kind}_{name}.csv").write_text(format_matrix(mat))
            labels = [f"t{i}" for i in range(mat.shape[0])]
            (svg_dir / f"{kind}_{name}.svg").write_text(
                heatmap_svg(mat, labels, kind, f"{name} {kind} trace (n={agg.n_samples})"))
    return {"k_values": list(k_values), "traces": per_trace, "kinds": kinds, "skipped": skipped}
