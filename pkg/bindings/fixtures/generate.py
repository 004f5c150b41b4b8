"""Regenerate the frozen parity fixtures from the primary library.

Run from the repository root:  PYTHONPATH=src python3 bindings/fixtures/generate.py
"""

from __future__ import annotations

import json
import os

import numpy as np

from cubitopo.grid import GridShape, ProbSegmentation, ScalarField
from cubitopo.loss import topo_loss, combined_loss
from cubitopo.persistence import barcode_of_field
from cubitopo.phantom import PhantomSpec, generate

HERE = os.path.dirname(os.path.abspath(__file__))


def bars_doc(bc):
    out = []
    for d in range(bc.ndim):
        for i in bc.rank_order(d):
            out.append(
                {
                    "dim": int(bc.dims[i]),
                    "birth": float(bc.births[i]),
                    "death": float(bc.deaths[i]),
                    "birthIndex": int(bc.birth_points[i]),
                    "deathIndex": int(bc.death_points[i]) if bc.death_cells[i] >= 0 else None,
                }
            )
    return out


def main():
    rng = np.random.default_rng(20240817)

    # a bumpy field with a ring: dim-0 and dim-1 bars, no tied values
    vals = rng.permutation(np.linspace(0.02, 0.55, 100)).reshape(10, 10)
    vals[2:7, 2:7] = 0.9 + 0.001 * np.arange(25).reshape(5, 5)
    vals[4, 4] = 0.15
    field = ScalarField(GridShape((10, 10)), vals)
    np.save(os.path.join(HERE, "field_ring.npy"), vals)
    doc = {
        "shape": [10, 10],
        "V": bars_doc(barcode_of_field(field, "V")),
        "T": bars_doc(barcode_of_field(field, "T")),
    }
    with open(os.path.join(HERE, "field_ring_bars.json"), "w") as f:
        json.dump(doc, f, indent=1)

    # a small defective phantom: loss value + gradient, topo-only and combined
    seg, labels, prior = generate(
        PhantomSpec("shortaxis2d", shape=GridShape((32, 32)), seed=11)
    )
    np.save(os.path.join(HERE, "probs.npy"), seg.probs)
    with open(os.path.join(HERE, "prior.json"), "w") as f:
        f.write(prior.to_json())
    bd, grad = topo_loss(seg, prior, "V")
    np.save(os.path.join(HERE, "grad_topo.npy"), grad.data)
    ref = ProbSegmentation(seg.shape, np.roll(seg.probs, 1, axis=1))
    np.save(os.path.join(HERE, "reference.npy"), ref.probs)
    bd2, grad2 = combined_loss(seg, ref, prior, 250.0, "V")
    np.save(os.path.join(HERE, "grad_combined.npy"), grad2.data)
    with open(os.path.join(HERE, "loss_expected.json"), "w") as f:
        json.dump(
            {
                "topo": {"L_topo": bd.total, "L_TP": bd.combined},
                "combined": {"L_topo": bd2.total, "L_mse": bd2.mse, "L_TP": bd2.combined, "lambda": 250.0},
            },
            f,
            indent=1,
        )
    print("fixtures written to", HERE)


if __name__ == "__main__":
    main()
