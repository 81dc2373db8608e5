"""Maximum-likelihood state reconstruction from photon-counting data.

The estimator climbs the log-likelihood with the R-rho-R fixed-point map,
falling back to diluted steps (I + eps R)/(1 + eps) on stagnation or
non-monotone behavior, with eps reduced geometrically down a ladder. The
stopping bound r_k = max eig(R-hat) - 1 dominates the likelihood gap to the
maximizer, so iteration ends once r_k falls below the requested threshold.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .povm import MeasurementContext, ic_check
from .sim import Dataset
from .twirl import BlockOperator

_EPS_INF = math.inf


@dataclass(frozen=True)
class ReconstructionParams:
    delta_L: float = 1e-12
    r_stop: float | None = None  # None: 1 / total shots, chosen at run time
    eps_start: float = 1e30
    eps_floor: float = 1e-30
    eps_decay: float = 0.5
    max_iter: int = 500000

    def __post_init__(self):
        if self.delta_L < 0:
            raise ValueError("delta_L must be >= 0")
        if self.r_stop is not None and not self.r_stop > 0:
            raise ValueError("r_stop must be > 0")
        if not self.eps_floor < self.eps_start:
            raise ValueError("eps_floor must be below eps_start")
        if not 0 < self.eps_decay < 1:
            raise ValueError("eps_decay must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    def to_json(self) -> dict:
        return {
            "delta_L": self.delta_L,
            "r_stop": self.r_stop,
            "eps_start": self.eps_start,
            "eps_floor": self.eps_floor,
            "eps_decay": self.eps_decay,
            "max_iter": self.max_iter,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ReconstructionParams":
        kwargs = {}
        for name in ("delta_L", "r_stop", "eps_start", "eps_floor", "eps_decay"):
            if name in d and d[name] is not None:
                kwargs[name] = float(d[name])
        if d.get("r_stop") is None and "r_stop" in d:
            kwargs["r_stop"] = None
        if "max_iter" in d:
            kwargs["max_iter"] = int(d["max_iter"])
        return cls(**kwargs)


@dataclass
class ReconstructionReport:
    estimate: BlockOperator
    loglik_trace: list[float]
    rk_trace: list[float]
    termination: str  # stopped_on_r | eps_exhausted | max_iter
    iterations: int

    def to_json(self) -> dict:
        return {
            "estimate": self.estimate.to_json(),
            "loglik_trace": [float(v) for v in self.loglik_trace],
            "rk_trace": [float(v) for v in self.rk_trace],
            "termination": self.termination,
            "iterations": int(self.iterations),
        }


def _aligned_counts(context: MeasurementContext, dataset: Dataset) -> list[dict]:
    if len(dataset.counts) != len(context.settings):
        raise ValueError(f"dataset has {len(dataset.counts)} settings, "
                         f"context has {len(context.settings)}")
    for povm, counts in zip(context.povms, dataset.counts):
        unknown = set(counts) - set(povm)
        if unknown:
            raise ValueError(f"counts contain outcomes absent from the POVM: "
                             f"{sorted(map(str, unknown))}")
    return dataset.counts


def log_likelihood(state: BlockOperator, context: MeasurementContext,
                   dataset: Dataset) -> float:
    """sum_i m(i) log tr(E_i rho), natural log; -inf when a counted outcome
    has nonpositive probability."""
    total = 0.0
    for povm, counts in zip(context.povms, _aligned_counts(context, dataset)):
        for outcome, m in counts.items():
            if m == 0:
                continue
            p = state.pair_trace(povm[outcome].op).real
            if p <= 0.0:
                return -math.inf
            total += m * math.log(p)
    return total


def r_operator(state: BlockOperator, context: MeasurementContext,
               dataset: Dataset) -> BlockOperator:
    """R-hat = (1/M) sum_i m(i)/p(i) E_i over all settings and outcomes."""
    counts_list = _aligned_counts(context, dataset)
    M = dataset.total_shots()
    template = next(iter(context.povms[0].values())).op
    out = BlockOperator.zeros(template.N, template.tuple_length,
                              context.settings[0].partition)
    for povm, counts in zip(context.povms, counts_list):
        for outcome, m in counts.items():
            if m == 0:
                continue
            element = povm[outcome].op
            p = state.pair_trace(element).real
            if p <= 0.0:
                raise ValueError(f"outcome {outcome} has zero probability "
                                 f"but {m} counts")
            out = out + element.scale(m / (M * p))
    return out


def diluted_step(state: BlockOperator, R: BlockOperator, eps: float) -> BlockOperator:
    """rho -> A rho A with A = (I + eps R)/(1 + eps); eps = inf gives A = R."""
    if not (eps > 0):
        raise ValueError("eps must be positive (math.inf selects the R rho R map)")
    if math.isinf(eps):
        A = R
    else:
        ident = BlockOperator.identity(R.N, R.tuple_length, R.partition)
        A = (ident + R.scale(eps)).scale(1.0 / (1.0 + eps))
    new = (A @ state @ A).hermitize()
    tr = new.trace().real
    if tr < 1e-300:
        raise ValueError("iterate trace collapsed")
    return new.scale(1.0 / tr)


# vectorized internals ------------------------------------------------------
#
# Hermitian block operators are mapped isometrically to real vectors
# (diagonal, then sqrt(2) Re / sqrt(2) Im of the upper triangle, block by
# block), so tr(X Y) = vec(X) . vec(Y) and each iteration's probabilities
# and R-hat reduce to matvecs against fixed per-setting matrices.

def _herm_vec(m: np.ndarray) -> np.ndarray:
    d = m.shape[0]
    iu = np.triu_indices(d, 1)
    return np.concatenate([np.real(np.diag(m)),
                           math.sqrt(2.0) * np.real(m[iu]),
                           math.sqrt(2.0) * np.imag(m[iu])])


def _herm_unvec(v: np.ndarray, d: int) -> np.ndarray:
    iu = np.triu_indices(d, 1)
    n_off = iu[0].size
    off = (v[d:d + n_off] + 1j * v[d + n_off:]) / math.sqrt(2.0)
    m = np.zeros((d, d), dtype=np.complex128)
    m[iu] = off
    m = m + m.conj().T
    m[np.diag_indices(d)] = v[:d]
    return m


class _Linearized:
    """Fixed matrices turning states into outcome probabilities per setting."""

    def __init__(self, context: MeasurementContext, dataset: Dataset):
        counts_list = _aligned_counts(context, dataset)
        template = next(iter(context.povms[0].values())).op
        self.keys = list(template.keys())
        self.dims = [template.blocks[k].shape[0] for k in self.keys]
        self.N = template.N
        self.partition = context.settings[0].partition
        self.P: list[np.ndarray] = []
        self.m: list[np.ndarray] = []
        for povm, counts in zip(context.povms, counts_list):
            rows = [np.concatenate([_herm_vec(e.op.blocks[k]) for k in self.keys])
                    for e in povm.values()]
            self.P.append(np.stack(rows))
            self.m.append(np.array([counts.get(o, 0) for o in povm],
                                   dtype=float))
        self.M = float(dataset.total_shots())

    def vec(self, blocks: list[np.ndarray]) -> np.ndarray:
        return np.concatenate([_herm_vec(b) for b in blocks])

    def unvec(self, v: np.ndarray) -> list[np.ndarray]:
        out, at = [], 0
        for d in self.dims:
            out.append(_herm_unvec(v[at:at + d * d], d))
            at += d * d
        return out

    def loglik_and_r(self, blocks: list[np.ndarray]):
        """Returns (loglik, R blocks, r_k) at the given state."""
        x = self.vec(blocks)
        loglik = 0.0
        r_vec = np.zeros_like(x)
        for P, m in zip(self.P, self.m):
            p = P @ x
            pos = m > 0
            if np.any(p[pos] <= 0.0):
                bad = int(np.argmax((p <= 0.0) & pos))
                raise ValueError(f"outcome index {bad} has zero probability "
                                 f"but nonzero counts")
            loglik += float(np.sum(m[pos] * np.log(p[pos])))
            w = np.zeros_like(p)
            w[pos] = m[pos] / p[pos]
            r_vec += P.T @ w
        r_blocks = self.unvec(r_vec / self.M)
        r_k = max(float(np.max(np.linalg.eigvalsh(b))) for b in r_blocks) - 1.0
        return loglik, r_blocks, r_k

    def to_operator(self, blocks: list[np.ndarray]) -> BlockOperator:
        return BlockOperator(self.N, dict(zip(self.keys, blocks)), self.partition)


def _step_blocks(blocks: list[np.ndarray], r_blocks: list[np.ndarray],
                 eps: float) -> list[np.ndarray]:
    out = []
    for rho, R in zip(blocks, r_blocks):
        if math.isinf(eps):
            A = R
        else:
            A = (np.eye(R.shape[0]) + eps * R) / (1.0 + eps)
        m = A @ rho @ A
        out.append((m + m.conj().T) / 2.0)
    tr = sum(float(np.trace(b).real) for b in out)
    if tr < 1e-300:
        raise ValueError("iterate trace collapsed")
    return [b / tr for b in out]


def reconstruct(context: MeasurementContext, dataset: Dataset,
                params: ReconstructionParams | None = None) -> ReconstructionReport:
    """Run the full estimator from the maximally mixed state.

    Phase 1 applies the R rho R map; the first stagnation (delta log-lik
    below delta_L) or likelihood decrease switches to the eps ladder, which
    keeps stepping with (I + eps R)/(1 + eps) and shrinks eps on further
    stagnation until r_k <= r_stop, eps reaches its floor, or the iteration
    budget runs out. Likelihood-decreasing candidates are discarded.
    """
    if params is None:
        params = ReconstructionParams()
    lin = _Linearized(context, dataset)
    r_stop = params.r_stop if params.r_stop is not None else 1.0 / lin.M

    icr = ic_check(context)
    if not icr["is_ic"]:
        warnings.warn(f"context is not informationally complete "
                      f"(rank {icr['rank']} of {icr['required']}); "
                      f"the estimate may not be unique", stacklevel=2)

    mixed = BlockOperator.maximally_mixed(lin.N, len(lin.keys[0]), lin.partition)
    blocks = [mixed.blocks[k] for k in lin.keys]
    loglik, r_blocks, r_k = lin.loglik_and_r(blocks)
    loglik_trace, rk_trace = [loglik], [r_k]

    eps = _EPS_INF
    iterations = 0
    termination = None
    while True:
        if r_k <= r_stop:
            termination = "stopped_on_r"
            break
        if iterations >= params.max_iter:
            termination = "max_iter"
            break
        candidate = _step_blocks(blocks, r_blocks, eps)
        iterations += 1
        new_loglik, new_r_blocks, new_r_k = lin.loglik_and_r(candidate)
        accepted = new_loglik >= loglik
        stagnant = (new_loglik - loglik) < params.delta_L
        if accepted:
            blocks, loglik, r_blocks, r_k = candidate, new_loglik, new_r_blocks, new_r_k
            loglik_trace.append(loglik)
            rk_trace.append(r_k)
        if not accepted or stagnant:
            if math.isinf(eps):
                eps = params.eps_start
            else:
                eps *= params.eps_decay
                if eps <= params.eps_floor:
                    termination = "eps_exhausted"
                    break

    return ReconstructionReport(estimate=lin.to_operator(blocks),
                                loglik_trace=loglik_trace, rk_trace=rk_trace,
                                termination=termination, iterations=iterations)
