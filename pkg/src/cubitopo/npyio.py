"""NPY (v1.0) array I/O for fields, probability stacks and label maps.

Axis order on disk is (z, y, x) ((y, x) in 2D); probability stacks carry a
leading class axis (K, z, y, x).  Fields are little-endian float32/float64,
labels uint8/uint16.  Spacing is not stored in NPY; callers pass it
explicitly (the CLI exposes ``--spacing``).
"""

from __future__ import annotations

import numpy as np

from .grid import GridShape, LabelMap, ProbSegmentation, ScalarField

_FIELD_DTYPES = (np.float32, np.float64)
_LABEL_DTYPES = (np.uint8, np.uint16)


def _load(path) -> np.ndarray:
    try:
        arr = np.load(path, allow_pickle=False)
    except (ValueError, OSError) as e:
        raise ValueError(f"cannot read NPY file {path}: {e}") from None
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def _check_dtype(arr: np.ndarray, allowed, path, kind: str):
    if arr.dtype not in [np.dtype(d) for d in allowed]:
        names = "/".join(np.dtype(d).name for d in allowed)
        raise ValueError(f"{path}: expected {names} for {kind}, got {arr.dtype.name}")


def load_field(path, spacing=None) -> ScalarField:
    arr = _load(path)
    _check_dtype(arr, _FIELD_DTYPES, path, "a scalar field")
    if arr.ndim not in (2, 3):
        raise ValueError(f"{path}: expected a 2D or 3D field, got {arr.ndim} axes")
    return ScalarField(GridShape(arr.shape, spacing), arr)


def save_field(path, fld: ScalarField, dtype=np.float64):
    np.save(path, np.ascontiguousarray(fld.values, dtype=dtype))


def load_prob_stack(path, spacing=None, validate: bool = True) -> ProbSegmentation:
    arr = _load(path)
    _check_dtype(arr, _FIELD_DTYPES, path, "a probability stack")
    if arr.ndim not in (3, 4):
        raise ValueError(f"{path}: expected a (K, ...) probability stack, got {arr.ndim} axes")
    shape = GridShape(arr.shape[1:], spacing)
    return ProbSegmentation(shape, arr, validate=validate)


def save_prob_stack(path, seg: ProbSegmentation, dtype=np.float64):
    np.save(path, np.ascontiguousarray(seg.probs, dtype=dtype))


def load_labels(path, spacing=None, K: int = 0) -> LabelMap:
    arr = _load(path)
    _check_dtype(arr, _LABEL_DTYPES, path, "a label map")
    if arr.ndim not in (2, 3):
        raise ValueError(f"{path}: expected a 2D or 3D label map, got {arr.ndim} axes")
    return LabelMap(GridShape(arr.shape, spacing), arr.astype(np.int64), K=K)


def save_labels(path, labels: LabelMap):
    dtype = np.uint8 if labels.K <= 255 else np.uint16
    np.save(path, np.ascontiguousarray(labels.labels, dtype=dtype))
