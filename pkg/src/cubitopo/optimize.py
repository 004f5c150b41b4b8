"""Per-case adaptation: Adam on a logit field under the combined loss.

The probabilistic segmentation is parameterized by unconstrained logits
whose softmax produces the channel probabilities, so the simplex constraint
holds structurally at every step.  The similarity term is anchored to the
initial segmentation, limiting the adaptation to the minimal change that
aligns the topology with the prior.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .complexes import V_CONSTRUCTION, _normalize_construction
from .grid import ProbSegmentation
from .loss import BettiPrior, combined_loss

PROB_CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class OptimizerConfig:
    iterations: int = 100
    learning_rate: float = 1e-2
    lam: float = 1000.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    construction: str = V_CONSTRUCTION
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < b < 1.0:
                raise ValueError("Adam betas must lie in (0, 1)")
        object.__setattr__(self, "construction", _normalize_construction(self.construction))


@dataclass(frozen=True)
class AdamState:
    """Parameters plus first/second moment estimates and step count."""

    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float

    @classmethod
    def init(cls, params: np.ndarray, cfg: OptimizerConfig) -> "AdamState":
        return cls(
            np.array(params, dtype=np.float64),
            np.zeros_like(params, dtype=np.float64),
            np.zeros_like(params, dtype=np.float64),
            0,
            cfg.learning_rate,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_epsilon,
        )


def adam_step(state: AdamState, grad: np.ndarray) -> AdamState:
    """One bias-corrected Adam update; pure function of (state, grad)."""
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    params = state.params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, params=params, m=m, v=v, t=t)


@dataclass(frozen=True)
class RunTrace:
    """Per-iteration loss triples and timings, plus the final field."""

    topo: tuple[float, ...]
    mse: tuple[float, ...]
    combined: tuple[float, ...]
    ms: tuple[float, ...]
    final: ProbSegmentation

    def __len__(self) -> int:
        return len(self.topo)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "L_topo", "L_mse", "L_TP", "ms"])
        for i in range(len(self)):
            w.writerow([i, repr(self.topo[i]), repr(self.mse[i]), repr(self.combined[i]), repr(self.ms[i])])
        return buf.getvalue()


def write_trace_csv(trace: RunTrace, path):
    with open(path, "w", newline="") as f:
        f.write(trace.to_csv())


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def post_process(
    initial: ProbSegmentation,
    prior: BettiPrior,
    cfg: OptimizerConfig | None = None,
    clamp: bool = False,
) -> tuple[ProbSegmentation, RunTrace]:
    """Adapt a segmentation to its topological prior.

    Logits start at log(initial probabilities), so zero probabilities are
    rejected unless ``clamp`` is set, which clips them to PROB_CLAMP_EPS
    and renormalizes.  The run is deterministic for a fixed (input, config,
    seed); timings are telemetry only.
    """
    cfg = cfg or OptimizerConfig()
    p0 = np.array(initial.probs, dtype=np.float64)
    if np.any(p0 <= 0.0):
        if not clamp:
            raise ValueError(
                "initial probabilities contain zeros; pass clamp=True (CLI: --clamp) "
                f"to clip them at {PROB_CLAMP_EPS:g} before taking logits"
            )
        p0 = np.clip(p0, PROB_CLAMP_EPS, None)
        p0 /= p0.sum(axis=0, keepdims=True)
    reference = ProbSegmentation(initial.shape, p0)

    logits = np.log(p0)
    state = AdamState.init(logits, cfg)
    topo_hist: list[float] = []
    mse_hist: list[float] = []
    comb_hist: list[float] = []
    ms_hist: list[float] = []
    seg = reference
    for _ in range(cfg.iterations):
        t0 = time.perf_counter()
        breakdown, grad = combined_loss(seg, reference, prior, cfg.lam, cfg.construction, cfg.threads)
        p = seg.probs
        g = grad.data
        glogit = p * (g - (g * p).sum(axis=0, keepdims=True))
        state = adam_step(state, glogit)
        seg = ProbSegmentation(initial.shape, softmax(state.params))
        topo_hist.append(breakdown.total)
        mse_hist.append(breakdown.mse)
        comb_hist.append(breakdown.combined)
        ms_hist.append((time.perf_counter() - t0) * 1000.0)
    trace = RunTrace(tuple(topo_hist), tuple(mse_hist), tuple(comb_hist), tuple(ms_hist), seg)
    return seg, trace
