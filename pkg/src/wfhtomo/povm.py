"""POVM elements of the weak-field-homodyne photon counter over block state space.

Outcomes are tuples: two-counter counting outcomes (k, l) where each part is a
photon count or ">" (overflow past the counter range), single-counter outcomes
(k,) / (">",), and click-detector outcomes with parts 0 (no click) or "I"
(click). All elements are block operators over the sector-photon tuples of a
partition, truncated at max photon number N.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .fock import complex_from_json, complex_to_json
from .optics import PartitionSpec
from .twirl import BlockOperator, block_tuples

__all__ = [
    "CounterConfig",
    "PovmElement",
    "Setting",
    "MeasurementContext",
    "pi_kl",
    "pi_k",
    "overflow_elements",
    "apply_loss",
    "apply_detector_response",
    "compose_response",
    "identity_response",
    "click_povm",
    "build_povm",
    "ic_check",
]

DEFAULT_TAIL_TOL = 1e-12
DEFAULT_CONV_CUT = 25


@dataclass(frozen=True)
class CounterConfig:
    """Detector description: counter count, resolvable range, and imperfections.

    ``loss`` is a pair of transmission probabilities (nu_1, nu_2); ``response``
    is a pair of conditional-probability matrices with rows indexed by the
    detected outcome (0..N_c then ">") and columns by the number of photons
    present (0..M_cut). For a single counter each optional is a 1-tuple.
    """

    counters: int
    N_c: int
    loss: tuple[float, ...] | None = None
    response: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        if self.counters not in (1, 2):
            raise ValueError("counters must be 1 or 2")
        if self.N_c < 0:
            raise ValueError("N_c must be >= 0")
        if self.loss is not None:
            nus = tuple(float(v) for v in self.loss)
            if len(nus) != self.counters:
                raise ValueError("loss must give one transmission per counter")
            for nu in nus:
                if not (0.0 <= nu <= 1.0):
                    raise ValueError("transmission nu must lie in [0,1]")
            object.__setattr__(self, "loss", nus)
        if self.response is not None:
            mats = tuple(np.asarray(t, dtype=float) for t in self.response)
            if len(mats) != self.counters:
                raise ValueError("response must give one matrix per counter")
            cols = {m.shape[1] for m in mats}
            if len(cols) != 1:
                raise ValueError("response matrices must share a column count")
            for m in mats:
                if m.shape[0] != self.N_c + 2:
                    raise ValueError("response must have N_c + 2 rows (counts then overflow)")
                if np.max(np.abs(m.sum(axis=0) - 1.0)) > 1e-10:
                    raise ValueError("response columns must sum to 1")
            object.__setattr__(self, "response", mats)

    def to_json(self) -> dict:
        return {
            "counters": self.counters,
            "n_c": self.N_c,
            "loss": list(self.loss) if self.loss is not None else None,
            "response": [m.tolist() for m in self.response] if self.response is not None else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CounterConfig":
        loss = d.get("loss")
        response = d.get("response")
        return cls(
            counters=int(d["counters"]),
            N_c=int(d["n_c"]),
            loss=tuple(loss) if loss is not None else None,
            response=tuple(np.array(m, dtype=float) for m in response)
            if response is not None else None,
        )


def _outcome_to_json(outcome: tuple) -> list:
    return [p if isinstance(p, str) else int(p) for p in outcome]


def _outcome_from_json(parts) -> tuple:
    return tuple(p if isinstance(p, str) else int(p) for p in parts)


@dataclass
class PovmElement:
    outcome: tuple
    op: BlockOperator
    gamma: complex
    meta: dict = field(default_factory=dict)

    def validate_psd(self, tol: float = -1e-9) -> None:
        if self.op.min_eigenvalue() < tol:
            raise ValueError(f"element {self.outcome} is not PSD within {tol}")

    def to_json(self) -> dict:
        return {
            "outcome": _outcome_to_json(self.outcome),
            "gamma": complex_to_json(self.gamma),
            "op": self.op.to_json(),
            "meta": dict(self.meta),
        }


def _slot_sectors(partition: PartitionSpec) -> list[int]:
    """Sector index backing each block-tuple slot."""
    if partition.s1_multi:
        return list(range(partition.K))
    return list(range(1, partition.K))


def _w_vector(eta: float, zeta: float, gamma: complex, k1: int, l1: int,
              dim: int) -> np.ndarray:
    """Fock coefficients of (eta a^dag + zeta conj(gamma))^k1
    (zeta a^dag - eta conj(gamma))^l1 |0>, truncated to the given dimension."""
    c = zeta * np.conj(gamma)
    d = -eta * np.conj(gamma)
    p1 = np.array([math.comb(k1, p) * eta ** p * c ** (k1 - p) for p in range(k1 + 1)],
                  dtype=np.complex128)
    p2 = np.array([math.comb(l1, q) * zeta ** q * d ** (l1 - q) for q in range(l1 + 1)],
                  dtype=np.complex128)
    conv = np.convolve(p1, p2)
    out = np.zeros(dim, dtype=np.complex128)
    top = min(dim, conv.size)
    for m in range(top):
        out[m] = conv[m] * math.sqrt(math.factorial(m))
    return out


def pi_kl(gamma: complex, k: int, l: int, partition: PartitionSpec, N: int) -> PovmElement:
    """Ideal two-counter element for k photons at counter 1 and l at counter 2.

    Photons from the auxiliary sector modes split binomially between the
    counters through their sector's beam splitter; the remaining counts come
    from the mode-1 pair, whose contribution is an outer product of the
    probe-displaced creation-polynomial vectors.
    """
    if partition.K > 2:
        raise ValueError("analytic elements support K <= 2 only; use the dense oracle")
    if k < 0 or l < 0:
        raise ValueError("counts must be >= 0")
    gamma = complex(gamma)
    eta1, zeta1 = partition.sectors[0]
    slots = _slot_sectors(partition)
    length = len(slots)
    pref = math.exp(-abs(gamma) ** 2)
    out = BlockOperator.zeros(N, length, partition)
    for key in block_tuples(N, length):
        dim = N - sum(key) + 1
        block = np.zeros((dim, dim), dtype=np.complex128)
        for ks in itertools.product(*(range(i + 1) for i in key)):
            k1 = k - sum(ks)
            l1 = l - sum(i - x for i, x in zip(key, ks))
            if k1 < 0 or l1 < 0:
                continue
            coef = 1.0
            for slot, (i, x) in enumerate(zip(key, ks)):
                eta_s, zeta_s = partition.sectors[slots[slot]]
                coef *= math.comb(i, x) * eta_s ** (2 * x) * zeta_s ** (2 * (i - x))
            w = _w_vector(eta1, zeta1, gamma, k1, l1, dim)
            block += (coef / (math.factorial(k1) * math.factorial(l1))) * np.outer(w, w.conj())
        out.blocks[key] = pref * block
    return PovmElement(outcome=(k, l), op=out, gamma=gamma)


def pi_k(gamma: complex, k: int, partition: PartitionSpec, N: int,
         tail_tol: float = DEFAULT_TAIL_TOL, counter: int = 1) -> PovmElement:
    """Single-counter element: k photons at the chosen counter, the other summed out.

    The sum over the unobserved counter's index runs until three consecutive
    terms fall below tail_tol in block max-norm.
    """
    if tail_tol <= 0:
        raise ValueError("tail_tol must be > 0")
    if counter not in (1, 2):
        raise ValueError("counter must be 1 or 2")
    length = partition.K if partition.s1_multi else partition.K - 1
    acc = BlockOperator.zeros(N, length, partition)
    streak = 0
    last_norm = 0.0
    other = 0
    while True:
        term = (pi_kl(gamma, k, other, partition, N) if counter == 1
                else pi_kl(gamma, other, k, partition, N))
        acc = acc + term.op
        last_norm = max(float(np.max(np.abs(m))) for m in term.op.blocks.values())
        streak = streak + 1 if last_norm < tail_tol else 0
        if streak >= 3:
            break
        other += 1
        if other > 500:
            raise ValueError("single-counter tail sum failed to converge by l = 500")
    return PovmElement(outcome=(k,), op=acc, gamma=complex(gamma),
                       meta={"counter": counter, "terms": other + 1, "tail_bound": last_norm})


def _identity_like(any_op: BlockOperator) -> BlockOperator:
    return BlockOperator.identity(any_op.N, any_op.tuple_length, any_op.partition)


def overflow_elements(elements: dict, pi_row: list[PovmElement], pi_col: list[PovmElement],
                      N_c: int) -> dict:
    """Overflow outcomes by complement.

    Pi_{k,>} = Pi_k - sum_{l<=N_c} Pi_{kl}; Pi_{>,l} symmetrically;
    Pi_{>,>} = I - sum_k Pi_k - sum_l Pi_{.,l} + sum_{kl} Pi_{kl}.
    """
    if len(pi_row) != N_c + 1 or len(pi_col) != N_c + 1:
        raise ValueError("need single-counter elements for every count <= N_c")
    gamma = pi_row[0].gamma
    out: dict = {}
    ident = _identity_like(pi_row[0].op)
    rest = ident
    for e in pi_row:
        rest = rest - e.op
    for e in pi_col:
        rest = rest - e.op
    for k in range(N_c + 1):
        row_rest = pi_row[k].op
        for l in range(N_c + 1):
            row_rest = row_rest - elements[(k, l)].op
            rest = rest + elements[(k, l)].op
        out[(k, ">")] = PovmElement((k, ">"), row_rest, gamma)
    for l in range(N_c + 1):
        col_rest = pi_col[l].op
        for k in range(N_c + 1):
            col_rest = col_rest - elements[(k, l)].op
        out[(">", l)] = PovmElement((">", l), col_rest, gamma)
    out[(">", ">")] = PovmElement((">", ">"), rest, gamma)
    for e in out.values():
        low = e.op.min_eigenvalue()
        if low < -1e-6:
            raise ValueError(
                f"overflow element {e.outcome} has eigenvalue {low:.3e}; "
                "inconsistent truncation of the inputs")
    return out


def _thinning_matrix(nu: float, cut: int) -> np.ndarray:
    """w[k, m] = P(k photons survive | m present) under transmission nu."""
    w = np.zeros((cut + 1, cut + 1))
    for m in range(cut + 1):
        for k in range(m + 1):
            w[k, m] = math.comb(m, k) * nu ** k * (1 - nu) ** (m - k)
    return w


def _stack_ops(ops: list[BlockOperator]) -> np.ndarray:
    return np.stack([np.concatenate([m.ravel() for m in op.blocks.values()]) for op in ops])


def _unstack_op(row: np.ndarray, template: BlockOperator) -> BlockOperator:
    blocks = {}
    pos = 0
    for key, m in template.blocks.items():
        n = m.size
        blocks[key] = row[pos:pos + n].reshape(m.shape)
        pos += n
    return BlockOperator(template.N, blocks, template.partition)


def apply_loss(elements: dict, nu_1: float, nu_2: float,
               conv_cut: int = DEFAULT_CONV_CUT) -> dict:
    """Binomial-thinning loss channel applied to ideal counting elements.

    Pi'_{kl} = sum_{m>=k} sum_{n>=l} C(m,k) C(n,l) nu_1^k (1-nu_1)^(m-k)
    nu_2^l (1-nu_2)^(n-l) Pi_{mn}, with both sums truncated at conv_cut.
    Input keys may be (m, n) pairs or single-counter (m,) tuples (then only
    nu_1 applies). Returns elements over the same keys.
    """
    for nu in (nu_1, nu_2):
        if not (0.0 <= nu <= 1.0):
            raise ValueError("transmission nu must lie in [0,1]")
    keys = list(elements)
    arity = len(keys[0])
    template = elements[keys[0]].op
    gamma = elements[keys[0]].gamma
    if arity == 1:
        ms = sorted(key[0] for key in keys)
        cut = min(conv_cut, max(ms))
        if template.N > conv_cut:
            raise ValueError("conv_cut must be at least the photon cutoff N")
        for m in range(cut + 1):
            if (m,) not in elements:
                raise ValueError(f"missing input element {(m,)}")
        w1 = _thinning_matrix(nu_1, cut)
        v = _stack_ops([elements[(m,)].op for m in range(cut + 1)])
        out_rows = w1 @ v
        out = {}
        for m in ms:
            if m <= cut:
                op = _unstack_op(out_rows[m], template)
            else:
                op = BlockOperator.zeros(template.N, template.tuple_length, template.partition)
            out[(m,)] = PovmElement((m,), op, gamma)
        return out
    if template.N > conv_cut:
        raise ValueError("conv_cut must be at least the photon cutoff N")
    max_m = max(k[0] for k in keys)
    max_n = max(k[1] for k in keys)
    cut_m = min(conv_cut, max_m)
    cut_n = min(conv_cut, max_n)
    for m in range(cut_m + 1):
        for n in range(cut_n + 1):
            if (m, n) not in elements:
                raise ValueError(f"missing input element {(m, n)}")
    w1 = _thinning_matrix(nu_1, cut_m)
    w2 = _thinning_matrix(nu_2, cut_n)
    v = _stack_ops([elements[(m, n)].op
                    for m in range(cut_m + 1) for n in range(cut_n + 1)])
    weights = np.einsum("km,ln->klmn", w1, w2).reshape(
        (cut_m + 1) * (cut_n + 1), (cut_m + 1) * (cut_n + 1))
    rows = weights @ v
    out = {}
    for key in keys:
        m, n = key
        if m <= cut_m and n <= cut_n:
            op = _unstack_op(rows[m * (cut_n + 1) + n], template)
        else:
            op = BlockOperator.zeros(template.N, template.tuple_length, template.partition)
        out[key] = PovmElement(key, op, gamma)
    return out


def compose_response(T: np.ndarray, nu: float) -> np.ndarray:
    """Fold a transmission nu into a detector response: T'[n,m] = sum_j T[n,j]
    C(m,j) nu^j (1-nu)^(m-j)."""
    T = np.asarray(T, dtype=float)
    m_cut = T.shape[1] - 1
    thin = _thinning_matrix(nu, m_cut)
    return T @ thin


def identity_response(N_c: int, M_cut: int) -> np.ndarray:
    """Ideal counter as a response matrix: counts reported faithfully up to N_c,
    anything above lands in the overflow row."""
    T = np.zeros((N_c + 2, M_cut + 1))
    for m in range(M_cut + 1):
        if m <= N_c:
            T[m, m] = 1.0
        else:
            T[N_c + 1, m] = 1.0
    return T


def _overflow_label(row: int, N_c: int):
    return row if row <= N_c else ">"


def apply_detector_response(elements: dict, config: CounterConfig) -> dict:
    """Convolve ideal counting elements with measured detector responses.

    Pi''_{o1,o2} = sum_{m,n} T'_1[o1,m] T'_2[o2,n] Pi_{mn}. Output outcomes
    are (0..N_c and ">") per counter, so the overflow rows replace a separate
    complement step.
    """
    if config.response is None:
        raise ValueError("counter config carries no response matrices")
    mats = config.response
    if config.loss is not None:
        mats = tuple(compose_response(t, nu) for t, nu in zip(mats, config.loss))
    n_c = config.N_c
    m_cut = mats[0].shape[1] - 1
    keys = list(elements)
    arity = len(keys[0])
    if arity != config.counters:
        raise ValueError("element outcome arity does not match counter count")
    template = elements[keys[0]].op
    gamma = elements[keys[0]].gamma
    if arity == 1:
        t1 = mats[0]
        v = _stack_ops([elements[(m,)].op for m in range(m_cut + 1)])
        rows = t1 @ v
        return {
            (_overflow_label(r, n_c),): PovmElement(
                (_overflow_label(r, n_c),), _unstack_op(rows[r], template), gamma)
            for r in range(n_c + 2)
        }
    t1, t2 = mats
    for m in range(m_cut + 1):
        for n in range(m_cut + 1):
            if (m, n) not in elements:
                raise ValueError(f"missing ideal element {(m, n)} for response convolution")
    v = _stack_ops([elements[(m, n)].op
                    for m in range(m_cut + 1) for n in range(m_cut + 1)])
    weights = np.einsum("km,ln->klmn", t1, t2).reshape(
        (n_c + 2) ** 2, (m_cut + 1) ** 2)
    rows = weights @ v
    out = {}
    for r1 in range(n_c + 2):
        for r2 in range(n_c + 2):
            label = (_overflow_label(r1, n_c), _overflow_label(r2, n_c))
            out[label] = PovmElement(label, _unstack_op(rows[r1 * (n_c + 2) + r2], template),
                                     gamma)
    return out


def click_povm(gamma: complex, partition: PartitionSpec, N: int,
               tail_tol: float = DEFAULT_TAIL_TOL) -> dict:
    """Four-outcome click/no-click POVM for a K=1 partition.

    Pi_00 = e^{-|gamma|^2} |vac><vac|; the single-click elements are the
    no-photon marginals of the opposite counter minus Pi_00; Pi_II is the
    complement.
    """
    if partition.K != 1:
        raise ValueError("click POVM requires K = 1")
    gamma = complex(gamma)
    p00 = pi_kl(gamma, 0, 0, partition, N)
    row0 = pi_k(gamma, 0, partition, N, tail_tol, counter=1)  # counter 1 dark
    col0 = pi_k(gamma, 0, partition, N, tail_tol, counter=2)  # counter 2 dark
    ident = _identity_like(p00.op)
    ops = {
        (0, 0): p00.op,
        ("I", 0): col0.op - p00.op,
        (0, "I"): row0.op - p00.op,
        ("I", "I"): ident - row0.op - col0.op + p00.op,
    }
    return {k: PovmElement(k, op, gamma) for k, op in ops.items()}


@dataclass(frozen=True)
class Setting:
    """One probe setting: amplitude, detector configuration, partition, cutoff."""

    gamma: complex
    counter: CounterConfig
    partition: PartitionSpec
    N: int
    detector: str = "counting"

    def __post_init__(self):
        if self.detector not in ("counting", "click"):
            raise ValueError("detector must be counting or click")
        if self.detector == "click" and (self.counter.loss or self.counter.response):
            raise ValueError("click detectors with loss/response are not supported")
        object.__setattr__(self, "gamma", complex(self.gamma))

    def to_json(self) -> dict:
        return {
            "gamma": complex_to_json(self.gamma),
            "counter": self.counter.to_json(),
            "partition": self.partition.to_json(),
            "N": int(self.N),
            "detector": self.detector,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Setting":
        return cls(
            gamma=complex_from_json(d["gamma"]),
            counter=CounterConfig.from_json(d["counter"]),
            partition=PartitionSpec.from_json(d["partition"]),
            N=int(d["N"]),
            detector=d.get("detector", "counting"),
        )


def build_povm(setting: Setting, tail_tol: float = DEFAULT_TAIL_TOL,
               conv_cut: int = DEFAULT_CONV_CUT) -> dict:
    """Complete outcome map for one setting, in a fixed construction order."""
    gamma, cfg, part, N = setting.gamma, setting.counter, setting.partition, setting.N
    if setting.detector == "click":
        return click_povm(gamma, part, N, tail_tol)
    n_c = cfg.N_c
    if cfg.counters == 1:
        if cfg.response is not None:
            m_cut = cfg.response[0].shape[1] - 1
            ideal = {(m,): pi_k(gamma, m, part, N, tail_tol) for m in range(m_cut + 1)}
            return apply_detector_response(ideal, cfg)
        top = conv_cut if cfg.loss is not None else n_c
        ideal = {(m,): pi_k(gamma, m, part, N, tail_tol) for m in range(top + 1)}
        if cfg.loss is not None:
            ideal = apply_loss(ideal, cfg.loss[0], 0.0, conv_cut)
        out = {}
        ident = _identity_like(ideal[(0,)].op)
        rest = ident
        for k in range(n_c + 1):
            out[(k,)] = ideal[(k,)]
            rest = rest - ideal[(k,)].op
        out[(">",)] = PovmElement((">",), rest, complex(gamma))
        low = rest.min_eigenvalue()
        if low < -1e-6:
            raise ValueError(f"overflow element has eigenvalue {low:.3e}")
        return out
    if cfg.response is not None:
        m_cut = cfg.response[0].shape[1] - 1
        ideal = {(m, n): pi_kl(gamma, m, n, part, N)
                 for m in range(m_cut + 1) for n in range(m_cut + 1)}
        return apply_detector_response(ideal, cfg)
    if cfg.loss is not None:
        rect = {(m, n): pi_kl(gamma, m, n, part, N)
                for m in range(conv_cut + 1) for n in range(conv_cut + 1)}
        lossy = apply_loss(rect, cfg.loss[0], cfg.loss[1], conv_cut)
        grid = {(k, l): lossy[(k, l)] for k in range(n_c + 1) for l in range(n_c + 1)}
        rows_ideal = {(m,): pi_k(gamma, m, part, N, tail_tol, counter=1)
                      for m in range(conv_cut + 1)}
        cols_ideal = {(m,): pi_k(gamma, m, part, N, tail_tol, counter=2)
                      for m in range(conv_cut + 1)}
        rows = apply_loss(rows_ideal, cfg.loss[0], 0.0, conv_cut)
        cols = apply_loss(cols_ideal, cfg.loss[1], 0.0, conv_cut)
        pr = [rows[(k,)] for k in range(n_c + 1)]
        pc = [cols[(l,)] for l in range(n_c + 1)]
    else:
        grid = {(k, l): pi_kl(gamma, k, l, part, N)
                for k in range(n_c + 1) for l in range(n_c + 1)}
        pr = [pi_k(gamma, k, part, N, tail_tol, counter=1) for k in range(n_c + 1)]
        pc = [pi_k(gamma, l, part, N, tail_tol, counter=2) for l in range(n_c + 1)]
    over = overflow_elements(grid, pr, pc, n_c)
    out = {}
    for k in range(n_c + 1):
        for l in range(n_c + 1):
            out[(k, l)] = grid[(k, l)]
    for k in range(n_c + 1):
        out[(k, ">")] = over[(k, ">")]
    for l in range(n_c + 1):
        out[(">", l)] = over[(">", l)]
    out[(">", ">")] = over[(">", ">")]
    return out


@dataclass
class MeasurementContext:
    """All probe settings of an experiment together with their POVMs."""

    settings: list[Setting]
    povms: list[dict]
    tail_tol: float = DEFAULT_TAIL_TOL
    conv_cut: int = DEFAULT_CONV_CUT

    @classmethod
    def build(cls, settings: list[Setting], tail_tol: float = DEFAULT_TAIL_TOL,
              conv_cut: int = DEFAULT_CONV_CUT) -> "MeasurementContext":
        if not settings:
            raise ValueError("context needs at least one setting")
        povms = []
        for s in settings:
            povm = build_povm(s, tail_tol, conv_cut)
            total = None
            for e in povm.values():
                total = e.op if total is None else total + e.op
            ident = _identity_like(total)
            dev = max(float(np.max(np.abs(a - b)))
                      for a, b in zip(total.blocks.values(), ident.blocks.values()))
            if dev > 1e-8:
                raise ValueError(f"POVM for gamma={s.gamma} sums to identity only "
                                 f"within {dev:.3e}")
            povms.append(povm)
        return cls(settings=list(settings), povms=povms, tail_tol=tail_tol,
                   conv_cut=conv_cut)

    def to_json(self) -> dict:
        return {
            "settings": [s.to_json() for s in self.settings],
            "tail_tol": self.tail_tol,
            "conv_cut": self.conv_cut,
        }

    @classmethod
    def from_json(cls, d: dict) -> "MeasurementContext":
        settings = [Setting.from_json(s) for s in d["settings"]]
        return cls.build(settings, tail_tol=float(d.get("tail_tol", DEFAULT_TAIL_TOL)),
                         conv_cut=int(d.get("conv_cut", DEFAULT_CONV_CUT)))


def ic_check(context: MeasurementContext) -> dict:
    """Rank test for informational completeness of a context.

    Each element is vectorized block by block (rows stacked, blocks
    concatenated); the context is IC when the stack of element vectors has
    rank equal to the total number of free (complex) block entries.
    """
    parts = {(s.partition, s.N) for s in context.settings}
    if len(parts) != 1:
        raise ValueError("ic_check requires a single (partition, N) across settings")
    rows = []
    for povm in context.povms:
        for e in povm.values():
            rows.append(np.concatenate([m.ravel() for m in e.op.blocks.values()]))
    mat = np.stack(rows)
    sv = np.linalg.svd(mat, compute_uv=False)
    rank = int(np.sum(sv >= 1e-10 * sv[0])) if sv.size and sv[0] > 0 else 0
    any_op = next(iter(context.povms[0].values())).op
    required = sum(m.shape[0] ** 2 for m in any_op.blocks.values())
    return {"rank": rank, "required": required, "is_ic": rank == required}
