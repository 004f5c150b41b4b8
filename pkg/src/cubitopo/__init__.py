"""Persistence barcodes over cubical complexes and Betti-prior driven
topological post-processing of multi-class probabilistic segmentations."""

from .grid import (
    GridShape,
    LabelMap,
    ProbSegmentation,
    ScalarField,
    argmax_labels,
    binarize,
    one_hot,
    union_field,
)
from .complexes import Cell, FilteredComplex, T_CONSTRUCTION, V_CONSTRUCTION, boundary, build_complex
from .persistence import (
    Bar,
    Barcode,
    barcode_of_field,
    barcodes_parallel,
    compute_barcode,
    rank_bars,
    write_barcode_csv,
)
from .loss import (
    BettiPrior,
    GradField,
    LossBreakdown,
    combined_loss,
    load_prior,
    mse_loss,
    prior_from_json,
    topo_loss,
)
from .optimize import AdamState, OptimizerConfig, RunTrace, adam_step, post_process, softmax
from .metrics import (
    TopoReport,
    aggregate,
    betti_error,
    betti_oracle,
    cca_baseline,
    dice,
    euler_characteristic,
    evaluate_case,
    gdice,
    hausdorff,
)
from .phantom import Defect, PhantomSpec, batch, generate, shortaxis_prior, wholeheart_prior

__version__ = "0.1.0"
