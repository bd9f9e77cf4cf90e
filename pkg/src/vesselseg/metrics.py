"""Evaluation suite: vessel Dice/Recall/Precision, centerline metrics via
hard 3D thinning, and mean +/- std aggregation.

Conventions (documented in output metadata): 0/0 count ratios evaluate to
1.0; the centerline dice is the harmonic mean of the two skeleton-in-mask
ratios and is 0 when both are 0.  Aggregation uses the population standard
deviation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kernels
from .errors import ShapeError
from .volume import BinaryMask

CSV_HEADER = "method,case_id,v_dice,v_re,v_pr,c_dice,c_re,c_pr"

METRIC_CONVENTIONS = "0/0 ratios are reported as 1.0; std is population std"


def _mask_data(m):
    if isinstance(m, BinaryMask):
        return m.data
    return np.asarray(m).astype(bool)


def _ratio(num, den):
    return num / den if den > 0 else 1.0


def overlap_metrics(pred, gt):
    """Voxelwise dice/recall/precision from TP/FP/FN counts."""
    p = _mask_data(pred)
    g = _mask_data(gt)
    if p.shape != g.shape:
        raise ShapeError(f"overlap_metrics: grids differ {p.shape} vs {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return {"dice": _ratio(2 * tp, 2 * tp + fp + fn),
            "recall": _ratio(tp, tp + fn),
            "precision": _ratio(tp, tp + fp)}


# U/D along the slowest axis first, then H, then W
_DIRECTIONS = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))


def skeletonize3d(mask):
    """Topology-preserving 3D thinning to a ~1-voxel-wide skeleton.

    Iterates 6 border-direction subiterations until fixpoint; each removes
    simple, non-endpoint border points (sequentially rechecked), so the
    26-connectivity component count is preserved exactly and the skeleton is
    a subset of the input.
    """
    data = _mask_data(mask)
    img = np.pad(data.astype(np.uint8), 1)
    changed = True
    while changed:
        changed = False
        for dz, dy, dx in _DIRECTIONS:
            neighbor = np.roll(img, (-dz, -dy, -dx), axis=(0, 1, 2))
            border = (img == 1) & (neighbor == 0)
            cand = np.flatnonzero(border)
            if cand.size == 0:
                continue
            if kernels.thin_subiter(img, cand):
                changed = True
    out = img[1:-1, 1:-1, 1:-1] != 0
    if isinstance(mask, BinaryMask):
        return BinaryMask(out, mask.spacing)
    return out


def centerline_metrics(pred, gt, pred_skeleton=None, gt_skeleton=None):
    """Skeleton-in-mask ratios: precision = |skel(pred) & gt| / |skel(pred)|,
    recall = |skel(gt) & pred| / |skel(gt)|, dice = harmonic mean.
    Precomputed skeletons may be passed to avoid rethinning."""
    p = _mask_data(pred)
    g = _mask_data(gt)
    if p.shape != g.shape:
        raise ShapeError(f"centerline_metrics: grids differ {p.shape} vs {g.shape}")
    sp = _mask_data(pred_skeleton) if pred_skeleton is not None else skeletonize3d(p)
    sg = _mask_data(gt_skeleton) if gt_skeleton is not None else skeletonize3d(g)
    precision = _ratio(int(np.count_nonzero(sp & g)), int(np.count_nonzero(sp)))
    recall = _ratio(int(np.count_nonzero(sg & p)), int(np.count_nonzero(sg)))
    dice = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"dice": dice, "recall": recall, "precision": precision}


@dataclass
class MetricsRecord:
    case_id: str
    vessel: dict
    centerline: dict

    def validate(self):
        for group in (self.vessel, self.centerline):
            for k in ("dice", "recall", "precision"):
                v = group[k]
                if not 0.0 <= v <= 1.0:
                    raise ShapeError(f"metric {k}={v} outside [0,1]")
        return self


def evaluate_case(case_id, pred, gt, gt_skeleton=None):
    """Both metric triples for one case."""
    return MetricsRecord(
        case_id=str(case_id),
        vessel=overlap_metrics(pred, gt),
        centerline=centerline_metrics(pred, gt, gt_skeleton=gt_skeleton),
    ).validate()


def aggregate(records):
    """Mean and population std of the six metrics over records."""
    if not records:
        raise ShapeError("aggregate needs >= 1 record")
    out = {}
    for group in ("vessel", "centerline"):
        out[group] = {}
        for k in ("dice", "recall", "precision"):
            vals = np.array([getattr(r, group)[k] for r in records], dtype=np.float64)
            out[group][k] = (float(vals.mean()), float(vals.std()))
    return out


def csv_case_row(method, record):
    v, c = record.vessel, record.centerline
    cells = [method, record.case_id,
             v["dice"], v["recall"], v["precision"],
             c["dice"], c["recall"], c["precision"]]
    return ",".join(cells[:2] + [f"{x:.6f}" for x in cells[2:]])


def csv_aggregate_row(method, agg):
    v, c = agg["vessel"], agg["centerline"]
    means = [v["dice"][0], v["recall"][0], v["precision"][0],
             c["dice"][0], c["recall"][0], c["precision"][0]]
    return ",".join([method, "ALL"] + [f"{x:.6f}" for x in means])


def format_aggregate_table(method_aggs):
    """Aligned text table in the vessel-then-centerline column order;
    method_aggs is an ordered {method: aggregate(...)} mapping."""
    headers = ["Method", "V-Dice", "V-Re", "V-Pr", "C-Dice", "C-Re", "C-Pr"]
    rows = [headers]
    for method, agg in method_aggs.items():
        v, c = agg["vessel"], agg["centerline"]
        cells = [method]
        for m, s in (v["dice"], v["recall"], v["precision"],
                     c["dice"], c["recall"], c["precision"]):
            cells.append(f"{m:.2f}+/-{s:.2f}")
        rows.append(cells)
    widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + f"\n({METRIC_CONVENTIONS})"
