"""Synthetic segmentation cases with known topology and injectable defects.

Two tasks are provided.  The 2D short-axis layout nests a blood-pool disc
(lv) inside a ring of muscle (my) with a crescent (rv) hugging the ring's
outer wall.  The 3D whole-heart layout fills a bowl-shaped muscle shell
with one chamber (lv), docks a second chamber (la) onto the bowl's
opening, and leans a third (rv) with its own neighbour (ra) against the
outer wall, keeping the left and right pairs separate.

Ground-truth label maps are verified against the emitted prior with the
brute-force oracle at generation time; impossible geometry raises instead
of silently emitting a broken case.  Probabilities are a softmax over
per-class signed boundary distances, so every channel is strictly positive
and boundaries blur smoothly.  Defects perturb only the probabilities;
the ground truth stays intact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .grid import GridShape, LabelMap, ProbSegmentation
from .loss import BettiPrior
from .metrics import betti_error
from . import npyio

SHORTAXIS_2D = "shortaxis2d"
WHOLEHEART_3D = "wholeheart3d"

DEFECT_KINDS = ("extra-component", "hole-puncture", "bridge", "loop-break")


@dataclass(frozen=True)
class Defect:
    kind: str
    target: str  # class name; bridges read it as the class that gets painted
    magnitude: float = 2.0

    def __post_init__(self):
        if self.kind not in DEFECT_KINDS:
            raise ValueError(f"unknown defect kind {self.kind!r}; expected one of {DEFECT_KINDS}")
        if self.magnitude <= 0:
            raise ValueError("defect magnitude must be > 0")


@dataclass(frozen=True)
class PhantomSpec:
    task: str
    shape: GridShape | None = None
    seed: int = 0
    defects: tuple = ()
    softness: float = 0.15

    def __post_init__(self):
        if self.task not in (SHORTAXIS_2D, WHOLEHEART_3D):
            raise ValueError(f"unknown task {self.task!r}")
        if not 0.0 < self.softness <= 0.5:
            raise ValueError("softness must lie in (0, 0.5]")
        shape = self.shape
        if shape is None:
            shape = GridShape((64, 64)) if self.task == SHORTAXIS_2D else GridShape((40, 40, 40))
        if (self.task == SHORTAXIS_2D) != (shape.ndim == 2):
            raise ValueError(f"task {self.task} needs a {'2D' if self.task == SHORTAXIS_2D else '3D'} shape")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "defects", tuple(self.defects))


SHORTAXIS_CLASSES = ("bg", "rv", "my", "lv")
SHORTAXIS_PRIOR = {
    ("rv",): (1, 0),
    ("my",): (1, 1),
    ("lv",): (1, 0),
    ("rv", "my"): (1, 1),
    ("rv", "lv"): (2, 0),
    ("my", "lv"): (1, 0),
}

WHOLEHEART_CLASSES = ("bg", "my", "la", "lv", "ra", "rv")
WHOLEHEART_PRIOR = {
    ("my",): (1, 0, 0),
    ("la",): (1, 0, 0),
    ("lv",): (1, 0, 0),
    ("ra",): (1, 0, 0),
    ("rv",): (1, 0, 0),
    ("my", "la"): (1, 0, 0),
    ("my", "lv"): (1, 0, 0),
    ("my", "ra"): (1, 0, 0),
    ("my", "rv"): (1, 0, 0),
    ("la", "lv"): (1, 0, 0),
    ("la", "ra"): (2, 0, 0),
    ("la", "rv"): (2, 0, 0),
    ("lv", "ra"): (2, 0, 0),
    ("lv", "rv"): (2, 0, 0),
    ("ra", "rv"): (1, 0, 0),
    ("my", "la", "lv"): (1, 0, 0),
    ("my", "la", "ra"): (1, 0, 0),
    ("my", "la", "rv"): (1, 0, 0),
    ("my", "lv", "ra"): (1, 0, 0),
    ("my", "lv", "rv"): (1, 0, 0),
    ("my", "ra", "rv"): (1, 0, 0),
    ("la", "lv", "ra"): (2, 0, 0),
    ("la", "lv", "rv"): (2, 0, 0),
    ("la", "ra", "rv"): (2, 0, 0),
    ("lv", "ra", "rv"): (2, 0, 0),
}


def _named_prior(ndim: int, class_names, table) -> BettiPrior:
    index = {n: i + 1 for i, n in enumerate(class_names)}
    entries = {tuple(index[n] for n in names): vec for names, vec in table.items()}
    return BettiPrior(ndim, tuple(class_names), entries)


def shortaxis_prior() -> BettiPrior:
    return _named_prior(2, SHORTAXIS_CLASSES, SHORTAXIS_PRIOR)


def wholeheart_prior() -> BettiPrior:
    return _named_prior(3, WHOLEHEART_CLASSES, WHOLEHEART_PRIOR)


def _grid_coords(dims):
    return np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")


def _labels_shortaxis(dims, rng) -> tuple[np.ndarray, dict]:
    h, w = dims
    scale = min(h, w) / 64.0
    cy = h / 2.0 + rng.uniform(-1.5, 1.5) * scale
    cx = w / 2.0 + 0.09 * w + rng.uniform(-1.5, 1.5) * scale
    r_lv = (8.5 + rng.uniform(-0.7, 0.7)) * scale
    r_my = r_lv + (6.0 + rng.uniform(-0.4, 0.4)) * scale
    w_rv = (5.5 + rng.uniform(-0.5, 0.5)) * scale
    arc = 1.15 + rng.uniform(-0.1, 0.1)

    yy, xx = _grid_coords(dims)
    d = np.hypot(yy - cy, xx - cx)
    ang = np.arctan2(yy - cy, xx - cx)  # crescent opens toward -x
    lab = np.ones(dims, dtype=np.int64)
    lab[d <= r_my] = 3  # my ring (lv overwrites the core)
    lab[d <= r_lv] = 4
    crescent = (d > r_my) & (d <= r_my + w_rv) & (np.abs(np.abs(ang) - np.pi) <= arc)
    lab[crescent] = 2
    geom = {"cy": cy, "cx": cx, "r_lv": r_lv, "r_my": r_my, "w_rv": w_rv, "arc": arc}
    return lab, geom


def _labels_wholeheart(dims, rng) -> tuple[np.ndarray, dict]:
    """Bowl-shaped shell (my) filled by lv; la plugs part of the opening;
    rv leans on the outer wall with ra bridging rv and the wall.

    The opening is a wide cone tilted away from the rv side and la covers
    only its upper portion, so my+la never seal a cavity (the lv-shaped
    hollow stays connected to the outside through the uncovered part).
    """
    nz, ny, nx = dims
    scale = min(dims) / 40.0
    jit = lambda a: rng.uniform(-a, a) * scale

    c_lv = np.array([nz * 0.42 + jit(0.8), ny * 0.50 + jit(0.8), nx * 0.34 + jit(0.8)])
    r_lv = (6.2 + rng.uniform(-0.3, 0.3)) * scale
    t_my = (3.2 + rng.uniform(-0.2, 0.2)) * scale
    r_la = (5.0 + rng.uniform(-0.2, 0.2)) * scale
    r_rv = (5.0 + rng.uniform(-0.2, 0.2)) * scale
    r_ra = (4.4 + rng.uniform(-0.2, 0.2)) * scale

    zz, yy, xx = _grid_coords(dims)

    def dist(c):
        return np.sqrt((zz - c[0]) ** 2 + (yy - c[1]) ** 2 + (xx - c[2]) ** 2)

    d_lv = dist(c_lv)
    # opening cone (half-angle ~55 deg), tilted up and away from the rv side
    u_open = np.array([0.75, 0.0, -0.55])
    u_open /= np.linalg.norm(u_open)
    with np.errstate(invalid="ignore"):
        axis = ((zz - c_lv[0]) * u_open[0] + (yy - c_lv[1]) * u_open[1] + (xx - c_lv[2]) * u_open[2]) / np.maximum(
            d_lv, 1e-9
        )
    opening = axis > 0.574

    lab = np.ones(dims, dtype=np.int64)
    my = (d_lv > r_lv) & (d_lv <= r_lv + t_my) & ~opening
    lab[my] = 2
    lab[d_lv <= r_lv] = 4  # lv fills the shell

    # la is clipped to the opening cone: it meets lv across the cone's
    # base, meets my through the cone surface, and cannot wrap around the
    # shell rim (which would knot the carved remainder)
    u_la = np.array([0.995, 0.0, 0.0995])
    c_la = c_lv + (r_lv + 0.32 * r_la) * u_la
    la = (dist(c_la) <= r_la) & opening & (lab == 1)
    lab[la] = 3

    c_rv = c_lv + np.array([0.6 * scale, 0.0, r_lv + t_my + 0.72 * r_rv])
    rv = (dist(c_rv) <= r_rv) & (lab == 1)
    lab[rv] = 6

    # ra leaves the la/rv meridian plane: beside rv in y, grazing both the
    # wall and rv's ball shallowly so the carved remainder stays ball-like
    side = 1.0 if rng.random() < 0.5 else -1.0
    u_ra = np.array([0.30, 0.55 * side, 0.78])
    u_ra /= np.linalg.norm(u_ra)
    c_ra = c_lv + (r_lv + r_ra + 0.55 * t_my) * u_ra
    ra = (dist(c_ra) <= r_ra) & (lab == 1)
    lab[ra] = 5

    geom = {
        "c_lv": c_lv, "r_lv": r_lv, "t_my": t_my, "u_open": u_open,
        "c_la": c_la, "r_la": r_la,
        "c_rv": c_rv, "r_rv": r_rv,
        "c_ra": c_ra, "r_ra": r_ra,
    }
    return lab, geom


def _soft_probs(lab: np.ndarray, K: int, softness: float) -> np.ndarray:
    """Softmax over per-class signed boundary distances."""
    tau = max(softness * 10.0, 1e-3)
    scores = np.empty((K,) + lab.shape, dtype=np.float64)
    for c in range(1, K + 1):
        m = lab == c
        if m.any() and not m.all():
            sd = ndimage.distance_transform_edt(m) - ndimage.distance_transform_edt(~m)
        else:
            sd = np.where(m, 1.0, -1.0) * (max(lab.shape) + tau)
        scores[c - 1] = sd / tau
    z = scores - scores.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def _raise_channel(probs: np.ndarray, channel: int, bump: np.ndarray):
    """Lift one channel to at least ``bump`` and rescale the rest.

    Capped just below 1 so the rescaled channels stay strictly positive.
    """
    old = np.minimum(probs[channel], 1.0 - 1e-9)
    new = np.clip(np.maximum(old, bump), None, 1.0 - 1e-9)
    scale = (1.0 - new) / (1.0 - old)
    for c in range(probs.shape[0]):
        if c != channel:
            probs[c] *= scale
    probs[channel] = new


def _blob_bump(dims, center, radius, peak, falloff=0.6) -> np.ndarray:
    coords = _grid_coords(dims)
    d = np.sqrt(sum((cc - c) ** 2 for cc, c in zip(coords, center)))
    return peak / (1.0 + np.exp((d - radius) / falloff))


def _segment_bump(dims, a, b, width, peak) -> np.ndarray:
    """Capsule profile along the segment a..b."""
    coords = _grid_coords(dims)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    denom = float(ab @ ab) or 1.0
    t = sum((cc - aa) * dd for cc, aa, dd in zip(coords, a, ab)) / denom
    t = np.clip(t, 0.0, 1.0)
    d2 = sum((cc - (aa + t * dd)) ** 2 for cc, aa, dd in zip(coords, a, ab))
    return peak / (1.0 + np.exp((np.sqrt(d2) - width) / 0.6))


def _apply_defect(probs, lab, geom, task, defect: Defect, class_names, rng):
    dims = lab.shape
    ch = {n: i for i, n in enumerate(class_names)}
    if defect.target not in ch or defect.target == class_names[0]:
        raise ValueError(f"defect target {defect.target!r} is not a foreground class")
    tgt = ch[defect.target]
    peak = 0.88

    if defect.kind == "extra-component":
        # a remote, probabilistically credible blob of the target class
        r = defect.magnitude
        fg = lab != 1
        clearance = ndimage.distance_transform_edt(~fg)
        border = np.ones(dims, dtype=bool)
        core = tuple(slice(int(np.ceil(r + 2)), n - int(np.ceil(r + 2))) for n in dims)
        border[core] = False
        cand = np.flatnonzero((clearance > r + 3.0) & ~border)
        if cand.size == 0:
            raise ValueError("no room for an extra-component defect at this shape")
        center = np.unravel_index(cand[int(rng.integers(cand.size))], dims)
        _raise_channel(probs, tgt, _blob_bump(dims, center, r, peak))
        return

    if task == SHORTAXIS_2D:
        cy, cx, r_lv, r_my = geom["cy"], geom["cx"], geom["r_lv"], geom["r_my"]
        if defect.kind == "hole-puncture":
            # background bubble strictly inside the target ring
            if defect.target != "my":
                raise ValueError("hole-puncture targets the ring class 'my'")
            r = min(defect.magnitude, (r_my - r_lv) / 2.0 - 1.6)
            if r <= 0.5:
                raise ValueError("ring too thin to puncture at this shape")
            theta = rng.uniform(-np.pi / 2, np.pi / 2)  # away from the crescent
            mid = (r_lv + r_my) / 2.0
            center = (cy + mid * np.sin(theta), cx + mid * np.cos(theta))
            _raise_channel(probs, 0, _blob_bump(dims, center, r, 0.92, falloff=0.4))
            return
        if defect.kind == "bridge":
            # paint the target class across the ring, joining rv and lv
            theta = np.pi + rng.uniform(-geom["arc"] * 0.6, geom["arc"] * 0.6)
            a = (cy + (r_lv - 1.5) * np.sin(theta), cx + (r_lv - 1.5) * np.cos(theta))
            b = (cy + (r_my + 2.0) * np.sin(theta), cx + (r_my + 2.0) * np.cos(theta))
            _raise_channel(probs, tgt, _segment_bump(dims, a, b, defect.magnitude, peak))
            return
        if defect.kind == "loop-break":
            # background slit across the ring, away from the crescent
            theta = rng.uniform(-np.pi / 3, np.pi / 3)
            a = (cy + (r_lv + 0.8) * np.sin(theta), cx + (r_lv + 0.8) * np.cos(theta))
            b = (cy + (r_my + 1.5) * np.sin(theta), cx + (r_my + 1.5) * np.cos(theta))
            _raise_channel(probs, 0, _segment_bump(dims, a, b, defect.magnitude, peak))
            return
    else:
        if defect.kind == "bridge":
            # arc the target class over the shell, joining the two atria
            a = geom["c_la"] + np.array([geom["r_la"] * 0.75, 0.0, 0.0])
            b = geom["c_ra"] + np.array([geom["r_ra"] * 0.75, 0.0, 0.0])
            _raise_channel(probs, tgt, _segment_bump(dims, a, b, defect.magnitude, peak))
            return
        if defect.kind in ("hole-puncture", "loop-break"):
            if defect.kind == "hole-puncture" and defect.target != "my":
                raise ValueError("hole-puncture targets the shell class 'my'")
            # pick a wall direction clear of the opening and the chambers
            u = None
            for _ in range(64):
                cand = rng.normal(size=3)
                cand /= np.linalg.norm(cand)
                if cand @ geom["u_open"] > 0.35:
                    continue
                probe = geom["c_lv"] + (geom["r_lv"] + geom["t_my"] / 2.0) * cand
                if np.linalg.norm(probe - geom["c_rv"]) < geom["r_rv"] + 2.5:
                    continue
                if np.linalg.norm(probe - geom["c_ra"]) < geom["r_ra"] + 2.5:
                    continue
                if np.linalg.norm(probe - geom["c_la"]) < geom["r_la"] + 2.5:
                    continue
                u = cand
                break
            if u is None:
                raise ValueError("no clear wall direction for this defect at this shape")
            if defect.kind == "hole-puncture":
                r = min(defect.magnitude, geom["t_my"] / 2.0 - 0.4)
                if r <= 0.4:
                    raise ValueError("shell too thin to puncture at this shape")
                center = geom["c_lv"] + (geom["r_lv"] + geom["t_my"] / 2.0) * u
                _raise_channel(probs, 0, _blob_bump(dims, center, r, peak))
            else:
                # background tunnel drilled through the shell wall
                a = geom["c_lv"] + (geom["r_lv"] + 0.6) * u
                b = geom["c_lv"] + (geom["r_lv"] + geom["t_my"] + 1.2) * u
                _raise_channel(probs, 0, _segment_bump(dims, a, b, defect.magnitude, peak))
            return
    raise ValueError(f"defect {defect.kind} unsupported for task {task}")


def generate(spec: PhantomSpec) -> tuple[ProbSegmentation, LabelMap, BettiPrior]:
    """One deterministic case: probabilities with defects, clean GT, prior."""
    rng = np.random.default_rng(spec.seed)
    dims = spec.shape.dims
    if spec.task == SHORTAXIS_2D:
        lab_arr, geom = _labels_shortaxis(dims, rng)
        prior = shortaxis_prior()
        class_names = SHORTAXIS_CLASSES
    else:
        lab_arr, geom = _labels_wholeheart(dims, rng)
        prior = wholeheart_prior()
        class_names = WHOLEHEART_CLASSES

    labels = LabelMap(spec.shape, lab_arr, K=len(class_names))
    be, _ = betti_error(labels, prior)
    if be != 0:
        raise ValueError(
            f"phantom geometry violates its prior (BE={be}) for task {spec.task}, "
            f"shape {dims}, seed {spec.seed}; enlarge the grid"
        )

    probs = _soft_probs(lab_arr, len(class_names), spec.softness)
    for defect in spec.defects:
        _apply_defect(probs, lab_arr, geom, spec.task, defect, class_names, rng)
    probs /= probs.sum(axis=0, keepdims=True)
    seg = ProbSegmentation(spec.shape, probs)
    return seg, labels, prior


def batch(template: PhantomSpec, n: int, seed: int | None = None):
    """n cases with per-case seeds derived from one master seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    master = template.seed if seed is None else seed
    seeds = np.random.SeedSequence(master).generate_state(n)
    return [generate(replace(template, seed=int(s))) for s in seeds]


def write_case(case_dir, seg: ProbSegmentation, labels: LabelMap, prior: BettiPrior):
    """Emit one case directory: probs.npy, labels.npy, prior.json."""
    os.makedirs(case_dir, exist_ok=True)
    npyio.save_prob_stack(os.path.join(case_dir, "probs.npy"), seg)
    npyio.save_labels(os.path.join(case_dir, "labels.npy"), labels)
    with open(os.path.join(case_dir, "prior.json"), "w") as f:
        f.write(prior.to_json())
