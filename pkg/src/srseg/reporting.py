"""Result emission: comparison tables, confusion matrices, image panels.

The comparison table carries one row per evaluated run with columns
``dataset,degradation,method,psnr,acc,norm_acc,iou,kappa``, grouped by
(dataset, degradation) with the LR baseline first, the end-to-end run second
and the HR baseline last, so improvement reads top to bottom. Undefined cells
render as ``n/a``; a PSNR with zero error renders as ``identical``.
"""

import math
from pathlib import Path

import numpy as np

from .data import save_image, save_labels, save_paletted
from .resample import bicubic_upsample
from .training import MODES

TABLE_COLUMNS = ("dataset", "degradation", "method", "psnr", "acc",
                 "norm_acc", "iou", "kappa")


def _cell(value):
    if value is None:
        return "n/a"
    if isinstance(value, float) and math.isinf(value):
        return "identical"
    return f"{value:.4f}"


def _row_key(report):
    md = report.metadata
    mode = md.get("mode", "")
    order = MODES.index(mode) if mode in MODES else len(MODES)
    return (str(md.get("dataset", "")), str(md.get("factor", "")), order)


def format_table(reports):
    rows = [",".join(TABLE_COLUMNS)]
    for rep in sorted(reports, key=_row_key):
        md = rep.metadata
        factor = md.get("factor")
        rows.append(",".join([
            str(md.get("dataset", "?")),
            f"x{factor}" if factor else "n/a",
            str(md.get("mode", "?")),
            _cell(rep.psnr), _cell(rep.acc), _cell(rep.norm_acc),
            _cell(rep.miou), _cell(rep.kappa),
        ]))
    return "\n".join(rows) + "\n"


def format_confusion(report):
    """Raw counts and the row-normalized matrix side by side in one text file."""
    cm = np.asarray(report.confusion, dtype=np.int64)
    k = cm.shape[0]
    lines = [f"# {k}x{k} confusion, rows = ground truth, cols = prediction",
             "counts:"]
    width = max(len(str(int(cm.max()))), 1)
    for r in range(k):
        lines.append(" ".join(f"{cm[r, c]:>{width}d}" for c in range(k)))
    lines.append("row-normalized:")
    rowsum = cm.sum(axis=1)
    for r in range(k):
        if rowsum[r]:
            lines.append(" ".join(f"{cm[r, c] / rowsum[r]:.4f}" for c in range(k)))
        else:
            lines.append(" ".join("n/a" for _ in range(k)))
    return "\n".join(lines) + "\n"


def _label_rgb(labels, palette):
    out = np.zeros(labels.shape + (3,), dtype=np.float64)
    for cid, rgb in palette.items():
        out[labels == cid] = rgb
    return out


def write_panel(panel, palette, path):
    """One side-by-side strip: HR, upsampled input, reconstruction,
    ground-truth map, predicted map, all at native tile resolution."""
    h, w = panel["hr"].shape[:2]
    shown_input = panel["input"]
    if shown_input.shape[:2] != (h, w):
        shown_input = bicubic_upsample(shown_input, h // shown_input.shape[0])
    columns = [panel["hr"], shown_input, panel["output"],
               _label_rgb(panel["truth"], palette),
               _label_rgb(panel["pred"], palette)]
    gap = np.full((h, 4, 3), 255.0)
    strip = columns[0]
    for col in columns[1:]:
        strip = np.concatenate([strip, gap, np.clip(col, 0, 255)], axis=1)
    save_image(path, strip)
    return path


def emit_report(reports, out_dir, panels=None, palette=None):
    """Write the comparison table, one confusion file per run, and any image
    panels. Returns every path written."""
    if not reports:
        raise ValueError("no reports to emit")
    k = reports[0].confusion.shape[0]
    for rep in reports:
        if rep.confusion.shape[0] != k:
            raise ValueError(
                f"cannot compare runs with {k} and {rep.confusion.shape[0]} "
                f"classes ({rep.metadata.get('dataset', '?')})")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    table = out_dir / "comparison.csv"
    table.write_text(format_table(reports))
    written.append(table)

    for i, rep in enumerate(sorted(reports, key=_row_key)):
        tag = f"{rep.metadata.get('dataset', 'run')}_" \
              f"{rep.metadata.get('mode', i)}_{i:02d}"
        conf = out_dir / f"confusion_{tag}.txt"
        conf.write_text(format_confusion(rep))
        written.append(conf)

    for i, group in enumerate(panels or []):
        for panel in group:
            sid = panel["source_id"]
            written.append(write_panel(panel, palette or {},
                                       out_dir / f"panel_{i:02d}_{sid}.png"))
            pal_path = out_dir / f"pred_{i:02d}_{sid}.png"
            save_paletted(pal_path, panel["pred"], palette or {})
            written.append(pal_path)
            ids_path = out_dir / f"pred_ids_{i:02d}_{sid}.png"
            save_labels(ids_path, panel["pred"])
            written.append(ids_path)
    return written
