"""Evaluation metrics and the brute-force topology oracle.

The oracle computes Betti numbers of a binary mask without touching the
persistence engine: components come from scipy's connected-component
labelling, the Euler characteristic from direct cell counting on the mask,
and (in 3D) enclosed voids from bounded background components under the
dual connectivity.  It is the independent reference the engine is checked
against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .complexes import T_CONSTRUCTION, V_CONSTRUCTION, _normalize_construction
from .grid import BitField, LabelMap, ProbSegmentation, argmax_labels


def _structure(ndim: int, full: bool) -> np.ndarray:
    # full=True: 8-/26-connectivity; full=False: 4-/6-connectivity
    return ndimage.generate_binary_structure(ndim, ndim if full else 1)


def _cell_count(mask: np.ndarray, odd_axes, construction: str) -> int:
    """Number of cells whose extent is an interval exactly on ``odd_axes``.

    V: a cell is present iff all its vertices are foreground (AND over the
    2^|odd| window).  T: present iff any incident top cell is foreground
    (OR over the window, with the window clipped at the borders).
    """
    nd = mask.ndim
    if construction == V_CONSTRUCTION:
        acc = None
        for shifts in product((0, 1), repeat=len(odd_axes)):
            sl = [slice(None)] * nd
            for ax, s in zip(odd_axes, shifts):
                n = mask.shape[ax]
                sl[ax] = slice(s, n - 1 + s)
            win = mask[tuple(sl)]
            acc = win if acc is None else (acc & win)
        return int(np.count_nonzero(acc))
    # T: even axes index corner positions 0..n, clipped windows via padding
    padded = np.pad(mask, 1, constant_values=False)
    even_axes = [a for a in range(nd) if a not in odd_axes]
    acc = None
    for shifts in product((0, 1), repeat=len(even_axes)):
        sl = [slice(None)] * nd
        for ax in odd_axes:
            sl[ax] = slice(1, padded.shape[ax] - 1)
        for ax, s in zip(even_axes, shifts):
            sl[ax] = slice(s, padded.shape[ax] - 1 + s)
        win = padded[tuple(sl)]
        acc = win if acc is None else (acc | win)
    return int(np.count_nonzero(acc))


def euler_characteristic(mask: BitField, construction: str = V_CONSTRUCTION) -> int:
    """Alternating cell-count sum of the mask's cubical complex."""
    construction = _normalize_construction(construction)
    mask = np.asarray(mask, dtype=bool)
    chi = 0
    for d in range(mask.ndim + 1):
        for odd_axes in combinations(range(mask.ndim), d):
            chi += (-1) ** d * _cell_count(mask, odd_axes, construction)
    return chi


def betti_oracle(mask: BitField, construction: str = V_CONSTRUCTION) -> tuple[int, ...]:
    """Betti numbers of a binary mask, independently of the engine.

    2D: (b0, b1) with b1 = b0 - chi.  3D: (b0, b1, b2) with b2 counted as
    bounded background components under the dual connectivity (26-connected
    background for V foreground, 6-connected for T) and b1 = b0 + b2 - chi.
    """
    construction = _normalize_construction(construction)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim not in (2, 3):
        raise ValueError("oracle handles 2D and 3D masks")
    full = construction == T_CONSTRUCTION
    _, b0 = ndimage.label(mask, structure=_structure(mask.ndim, full))
    chi = euler_characteristic(mask, construction)
    if mask.ndim == 2:
        return b0, b0 - chi
    bg = np.pad(~mask, 1, constant_values=True)
    lab, nbg = ndimage.label(bg, structure=_structure(3, not full))
    b2 = nbg - 1 if nbg else 0  # padding fuses everything unbounded into one
    return b0, b0 + b2 - chi, b2


@dataclass(frozen=True)
class TopoReport:
    """Per-case evaluation: topology against the prior, overlap against GT."""

    BE: int
    TS: int
    dsc: dict  # class -> DSC
    gdsc: float
    hdd: dict  # class -> mm (math.inf when undefined)
    betti_pred: dict  # subset key -> predicted Betti vector
    betti_prior: dict  # subset key -> prior Betti vector

    def to_json_dict(self) -> dict:
        return {
            "BE": self.BE,
            "TS": self.TS,
            "dsc": {str(k): v for k, v in self.dsc.items()},
            "gdsc": self.gdsc,
            "hdd": {str(k): (None if math.isinf(v) else v) for k, v in self.hdd.items()},
            "betti_pred": {k: list(v) for k, v in self.betti_pred.items()},
            "betti_prior": {k: list(v) for k, v in self.betti_prior.items()},
        }


def subset_mask(labels: LabelMap, classes) -> BitField:
    out = np.zeros(labels.shape.dims, dtype=bool)
    for c in classes:
        out |= labels.labels == c
    return out


def betti_error(pred: LabelMap, prior, construction: str = V_CONSTRUCTION):
    """Summed L1 deviation of predicted vs prior Betti vectors.

    Uses the prior's evaluation subsets: singletons and pairs in 2D, plus
    triples in 3D.
    """
    ndim = pred.shape.ndim
    detail = {}
    be = 0
    for subset in prior.eval_subsets(ndim):
        vec = prior.entries[subset]
        got = betti_oracle(subset_mask(pred, subset), construction)
        detail[prior.subset_key(subset)] = (got, vec)
        be += int(sum(abs(int(g) - int(v)) for g, v in zip(got, vec)))
    return be, detail


def dice(pred: LabelMap, gt: LabelMap, c: int) -> float:
    """DSC of class c; defined as 1.0 when both masks are empty."""
    if pred.shape.dims != gt.shape.dims:
        raise ValueError("shape mismatch")
    p = pred.labels == c
    g = gt.labels == c
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def gdice(pred: LabelMap, gt: LabelMap) -> float:
    """Generalised DSC pooled over all foreground classes."""
    if pred.shape.dims != gt.shape.dims:
        raise ValueError("shape mismatch")
    K = max(pred.K, gt.K)
    inter = 0
    denom = 0
    for c in range(2, K + 1):
        p = pred.labels == c
        g = gt.labels == c
        inter += int((p & g).sum())
        denom += int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * inter / denom


def _boundary_points(mask: np.ndarray) -> np.ndarray:
    eroded = ndimage.binary_erosion(mask, structure=_structure(mask.ndim, False), border_value=0)
    return np.argwhere(mask & ~eroded)


def hausdorff(pred: LabelMap, gt: LabelMap, c: int, spacing=None) -> float:
    """Symmetric Hausdorff distance between class-c boundaries, in mm.

    Returns math.inf (the undefined sentinel) when either mask is empty.
    """
    if pred.shape.dims != gt.shape.dims:
        raise ValueError("shape mismatch")
    spacing = np.asarray(spacing if spacing is not None else pred.shape.spacing, dtype=np.float64)
    p = pred.labels == c
    g = gt.labels == c
    if not p.any() or not g.any():
        return math.inf
    bp = _boundary_points(p) * spacing
    bg = _boundary_points(g) * spacing
    d_pg, _ = cKDTree(bg).query(bp, k=1)
    d_gp, _ = cKDTree(bp).query(bg, k=1)
    return float(max(d_pg.max(), d_gp.max()))


def cca_baseline(seg: ProbSegmentation) -> LabelMap:
    """Keep only the largest connected component of each foreground class.

    Components use the V-construction connectivity; removed points fall
    back to background.  Size ties resolve to the lowest component id.
    """
    labels = argmax_labels(seg)
    out = np.array(labels.labels)
    struct = _structure(labels.shape.ndim, False)
    for c in range(2, labels.K + 1):
        m = out == c
        lab, ncomp = ndimage.label(m, structure=struct)
        if ncomp <= 1:
            continue
        sizes = np.bincount(lab.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1  # argmax returns the first (lowest id) maximum
        out[m & (lab != keep)] = 1
    return LabelMap(labels.shape, out, K=labels.K)


def evaluate_case(
    pred: LabelMap,
    gt: LabelMap,
    prior,
    construction: str = V_CONSTRUCTION,
    spacing=None,
) -> TopoReport:
    be, detail = betti_error(pred, prior, construction)
    K = max(pred.K, gt.K)
    dsc = {c: dice(pred, gt, c) for c in range(2, K + 1)}
    hdd = {c: hausdorff(pred, gt, c, spacing) for c in range(2, K + 1)}
    return TopoReport(
        BE=be,
        TS=1 if be == 0 else 0,
        dsc=dsc,
        gdsc=gdice(pred, gt),
        hdd=hdd,
        betti_pred={k: tuple(int(x) for x in got) for k, (got, _) in detail.items()},
        betti_prior={k: tuple(int(x) for x in vec) for k, (_, vec) in detail.items()},
    )


def _percentiles(xs, qs):
    return {f"P{q:g}": float(np.percentile(xs, q)) for q in qs}


def aggregate(reports: list[TopoReport]) -> dict:
    """Summary statistics over cases.

    BE additionally reports the upper tail (P98/P99/P100); rho is the TS
    success rate in percent with its binomial standard deviation.
    Undefined (infinite) HDD entries are skipped and counted.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    n = len(reports)
    be = [r.BE for r in reports]
    ts = [r.TS for r in reports]
    rho = 100.0 * sum(ts) / n
    sigma = 100.0 * math.sqrt((rho / 100.0) * (1.0 - rho / 100.0) / n)
    summary = {
        "n": n,
        "BE": {**_percentiles(be, (25, 50, 75)), **_percentiles(be, (98, 99, 100))},
        "TS": {"rho": rho, "sigma_rho": sigma},
        "gDSC": _percentiles([r.gdsc for r in reports], (25, 50, 75)),
    }
    classes = sorted(reports[0].dsc)
    summary["DSC"] = {str(c): _percentiles([r.dsc[c] for r in reports], (25, 50, 75)) for c in classes}
    hdd_summary = {}
    for c in classes:
        vals = [r.hdd[c] for r in reports if not math.isinf(r.hdd[c])]
        entry = {"undefined": sum(1 for r in reports if math.isinf(r.hdd[c]))}
        if vals:
            entry.update(_percentiles(vals, (25, 50, 75)))
        hdd_summary[str(c)] = entry
    summary["HDD"] = hdd_summary
    return summary


def write_report_json(reports: list[TopoReport], path):
    doc = {"cases": [r.to_json_dict() for r in reports], "summary": aggregate(reports)}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def format_report_csv(reports: list[TopoReport]) -> str:
    classes = sorted(reports[0].dsc)
    cols = ["case", "BE", "TS", "gDSC"]
    cols += [f"DSC_{c}" for c in classes] + [f"HDD_{c}" for c in classes]
    lines = [",".join(cols)]
    for i, r in enumerate(reports):
        row = [str(i), str(r.BE), str(r.TS), repr(r.gdsc)]
        row += [repr(r.dsc[c]) for c in classes]
        row += ["" if math.isinf(r.hdd[c]) else repr(r.hdd[c]) for c in classes]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
