"""Matrix measures and contraction certificates for the fast tracking-error subsystem.

The certificate chain: closed-form partial bounds of the formation law give
entrywise intervals for the fast Jacobian ``A + F(x)`` over all ``x``; block
measures/norms of those intervals give a Metzler lower-triangular majorant
``Bbar``; a positive diagonal ``D`` with ``mu_2(D Bbar D^-1) = -eta2 < 0``
then certifies contraction at rate ``eta2`` in the composite block norm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import PlatoonConfig, jacobian_fast, matrix_G
from .formation import ConditionViolation, contraction_constants
from .signals import BlockPartition, WeightedNormSpec, norm_star

EIG_TOL = 1e-9
MAX_WEIGHT_RATIO = 1e3


class CertificationError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


def _square(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def _p(p):
    if p in (1, 2):
        return p
    if p in (np.inf, "inf", math.inf):
        return np.inf
    raise ValueError(f"unsupported p={p!r}; use 1, 2 or inf")


def mu_p(M, p=np.inf) -> float:
    """Matrix measure induced by the vector p-norm, p in {1, 2, inf}."""
    M = _square(M)
    p = _p(p)
    if p == 2:
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])
    if p == 1:
        M = M.T
    off = np.abs(M).sum(axis=1) - np.abs(np.diag(M))
    return float(np.max(np.diag(M) + off))


def induced_norm(M, p=np.inf) -> float:
    return float(np.linalg.norm(_square(M), ord=_p(p)))


def mu_limit(M, p=np.inf, h: float = 1e-7) -> float:
    """One-sided difference quotient ``(||I + hM|| - 1) / h`` of the induced norm."""
    M = _square(M)
    return (induced_norm(np.eye(len(M)) + h * M, p) - 1.0) / h


def mu_weighted_2(M, D) -> float:
    """``mu_2(D M D^-1)`` for a positive diagonal given by its entries."""
    q = np.asarray(D, dtype=float)
    if np.any(q <= 0):
        raise ValueError("weights must be strictly positive")
    M = _square(M)
    return mu_p(q[:, None] * M / q[None, :], 2)


def chain_mu2(m: int) -> float:
    """``mu_2`` of the m x m chain with -1 diagonal and +1 subdiagonal."""
    return -1.0 + math.cos(math.pi / (m + 1))


def chain_matrix(m: int) -> np.ndarray:
    return -np.eye(m) + np.eye(m, k=-1)


def epsilon_bar(cfg: PlatoonConfig, c: float) -> float:
    if cfg.r == 1:
        return math.inf
    return float(cfg.kbar.min() / (2.0 * c * (cfg.r - 1)))


# -- majorant ----------------------------------------------------------------

def _iv_add(a, b):
    return a[0] + b[0], a[1] + b[1]


def _iv_neg(a):
    return -a[1], -a[0]


def fast_jacobian_bounds(cfg: PlatoonConfig, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise ``(lo, hi)`` of ``A + F(x)`` over all x, at a fixed ``eps``."""
    n, kbar = cfg.n, cfg.kbar
    p_lo, p_hi, f_lo, f_hi = cfg.law.partial_bounds()
    P = lambda k: (p_lo[k], p_hi[k])  # noqa: E731
    Fv = lambda k: (f_lo[k], f_hi[k]) if k >= 0 else (0.0, 0.0)  # noqa: E731
    lo = np.zeros((n, n))
    hi = np.zeros((n, n))
    for i in range(n):
        for k in range(i + 1):
            if k == i:
                iv = Fv(i - 1)
            elif k == i - 1:
                iv = _iv_add(_iv_add(P(i - 1), Fv(i - 2)), _iv_neg(Fv(i - 1)))
            else:
                iv = _iv_add(_iv_add(P(k), Fv(k - 1)), _iv_neg(_iv_add(P(k + 1), Fv(k))))
            lo[i, k], hi[i, k] = eps * iv[0], eps * iv[1]
    lo[np.arange(n), np.arange(n)] -= kbar
    hi[np.arange(n), np.arange(n)] -= kbar
    rows = np.arange(cfg.r, n)
    lo[rows, rows - cfg.r] += kbar[rows]
    hi[rows, rows - cfg.r] += kbar[rows]
    return lo, hi


def block_matrix(partition: BlockPartition, diag_rows, off_abs) -> np.ndarray:
    """Block reduction: diagonal blocks by infinity-measure, others by infinity-norm.

    ``diag_rows[i]`` is the (upper bound of the) diagonal entry of row i and
    ``off_abs`` holds (upper bounds of) absolute values of all entries.
    """
    m = partition.m
    B = np.zeros((m, m))
    for I, si in enumerate(partition.slices):
        for J, sj in enumerate(partition.slices):
            blk = off_abs[si, sj]
            if I == J:
                inner = blk.sum(axis=1) - np.diag(blk)
                B[I, J] = np.max(diag_rows[si] + inner)
            else:
                B[I, J] = np.max(blk.sum(axis=1))
    return B


def block_majorant(cfg: PlatoonConfig, eps: float | None = None) -> np.ndarray:
    """Constant Metzler matrix dominating the block matrix ``B(x)`` for all x and
    every fast-time scale in ``(0, eps]``.

    Entries are affine in eps, so the union of the interval bounds at 0 and at
    ``eps`` covers the whole range.
    """
    eps = cfg.eps if eps is None else float(eps)
    lo0, hi0 = fast_jacobian_bounds(cfg, 0.0)
    lo1, hi1 = fast_jacobian_bounds(cfg, eps)
    lo, hi = np.minimum(lo0, lo1), np.maximum(hi0, hi1)
    part = BlockPartition(cfg.n, cfg.r)
    return block_matrix(part, np.diag(hi), np.maximum(np.abs(lo), np.abs(hi)))


def block_matrix_at(cfg: PlatoonConfig, x, eps: float | None = None) -> np.ndarray:
    """The state-dependent block matrix ``B(x)`` built from the exact Jacobian."""
    J = jacobian_fast(cfg, x, eps)
    return block_matrix(BlockPartition(cfg.n, cfg.r), np.diag(J), np.abs(J))


# -- diagonal stability ------------------------------------------------------

def _check_majorant(B):
    if np.any(np.triu(B, 1) != 0):
        raise CertificationError("diagonal-stability", "majorant is not lower triangular")
    off = B - np.diag(np.diag(B))
    if np.any(off < 0):
        raise CertificationError("diagonal-stability", "majorant is not Metzler")
    diag = np.diag(B)
    if np.any(diag >= 0):
        i = int(np.flatnonzero(diag >= 0)[0])
        raise CertificationError("diagonal-stability", f"diagonal entry {i + 1} is {diag[i]:.6g} >= 0; not Hurwitz")


def recursion_weights(B) -> np.ndarray:
    """Backward recursion from ``q_m = 1``.

    Each earlier weight is made large enough that every off-diagonal entry of
    the symmetrised ``D B D^-1`` is at most ``min|B_ii| / (4 (m - 1))``, so by
    Gershgorin the weighted measure is at most ``-3/4 min|B_ii|``.
    """
    m = len(B)
    q = np.ones(m)
    if m == 1:
        return q
    delta = np.min(-np.diag(B)) / (4.0 * (m - 1))
    for i in range(m - 2, -1, -1):
        need = max(q[j] * B[j, i] / (2.0 * delta) for j in range(i + 1, m))
        q[i] = max(need, 1.0)
    return q


def disturbance_gain(B, D, partition: BlockPartition) -> float:
    """``||G||_{inf,*} |1|_* / eta2``: how a unit sup-norm disturbance enters the
    certified spacing asymptote, up to ``eps / eta1``. Invariant to scaling D."""
    eta2 = -mu_weighted_2(B, D)
    if eta2 <= 0:
        return math.inf
    spec = WeightedNormSpec(partition, tuple(D))
    return induced_norm_inf_star(matrix_G(partition.n), spec, "exact") * norm_star(np.ones(partition.n), spec) / eta2


def _descend(cost, logq, cap, tol):
    """Coordinate search over log-weights with a halving step, min weight pinned at 1."""
    best = logq - logq.min()
    val = cost(best)
    step = math.log(2.0)
    while step > tol:
        improved = False
        for i in range(len(best)):
            for sgn in (1.0, -1.0):
                trial = best.copy()
                trial[i] += sgn * step
                trial -= trial.min()
                if trial.max() > cap + 1e-12:
                    continue
                tv = cost(trial)
                if tv < val:
                    best, val, improved = trial, tv, True
                    break
        if not improved:
            step *= 0.5
    return best, val


def diagonal_stability(B, objective: str = "rate", partition: BlockPartition | None = None,
                       max_ratio: float = MAX_WEIGHT_RATIO, tol: float = 1e-3):
    """Positive weights ``D`` (min entry 1) and ``eta2 = -mu_2(D B D^-1) > 0``.

    ``B`` must be Metzler and lower triangular with a negative diagonal. The
    search starts from the better of ``D = I`` and :func:`recursion_weights`
    and moves one log-weight at a time until the step drops below ``tol``.

    ``objective="rate"`` maximises eta2 with weight ratios capped at
    ``max_ratio`` (the supremum ``min|B_ii|`` is only approached as the ratios
    blow up). ``objective="gain"`` minimises :func:`disturbance_gain` instead
    and needs the block ``partition``.
    """
    B = _square(B)
    _check_majorant(B)
    m = len(B)
    if objective == "rate":
        cost = lambda lq: mu_weighted_2(B, np.exp(lq))  # noqa: E731
        cap = math.log(max_ratio)
    elif objective == "gain":
        if partition is None or partition.m != m:
            raise ValueError("the gain objective needs the block partition matching B")
        cost = lambda lq: disturbance_gain(B, np.exp(lq), partition)  # noqa: E731
        cap = math.inf
    else:
        raise ValueError(f"unknown objective {objective!r}")

    rec = np.log(recursion_weights(B))
    if rec.max() > cap:
        rec *= cap / rec.max()
    starts = [np.zeros(m), rec]
    start = min(starts, key=lambda lq: (mu_weighted_2(B, np.exp(lq)) >= 0, cost(lq)))
    logq, _ = _descend(cost, start, cap, tol)
    D = np.exp(logq)
    eta2 = -mu_weighted_2(B, D)
    if eta2 <= 0:
        raise CertificationError(
            "diagonal-stability",
            f"no weights with ratio <= {max_ratio:g} give a negative weighted measure (best {-eta2:.6g})",
        )
    return D, float(eta2)


def lyapunov_residual(B, D, eta2) -> float:
    """Largest eigenvalue of ``D^2 B + B^T D^2 + 2 eta2 I`` (<= 0 certifies)."""
    D2 = np.diag(np.asarray(D, dtype=float) ** 2)
    B = _square(B)
    M = D2 @ B + B.T @ D2 + 2.0 * eta2 * np.eye(len(B))
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


# -- composite induced norm --------------------------------------------------

def _dual_star(g, spec: WeightedNormSpec) -> float:
    blocks = np.array([np.abs(g[s]).sum() for s in spec.partition.slices])
    return float(np.sqrt(np.sum((blocks / spec.weights) ** 2)))


def dual_maximizer(g, spec: WeightedNormSpec) -> np.ndarray:
    """Unit-``|.|_*`` vector ``a`` maximising ``g . a``; the value is the dual norm of g."""
    g = np.asarray(g, dtype=float)
    a = np.zeros_like(g)
    w = spec.weights
    for b, s in enumerate(spec.partition.slices):
        a[s] = np.sign(g[s]) * np.abs(g[s]).sum() / w[b] ** 2
    nrm = norm_star(a, spec)
    return a / nrm if nrm > 0 else a


def induced_norm_inf_star(G, spec: WeightedNormSpec, mode: str = "upper_bound",
                          samples: int = 2000, seed: int = 0) -> float:
    """``max |G a|_inf / |a|_*``.

    ``upper_bound``: ``||G||_inf / min D``. ``exact``: the largest dual
    composite norm over the rows of G. ``sampled``: a lower estimate from random
    directions and block sign patterns.
    """
    G = np.asarray(G, dtype=float)
    if mode == "upper_bound":
        return induced_norm(G, np.inf) / min(spec.D)
    if mode == "exact":
        return max(_dual_star(row, spec) for row in G)
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    n = G.shape[1]
    rng = np.random.default_rng(seed)
    cand = [rng.standard_normal(n) for _ in range(samples)]
    cand += [rng.choice([-1.0, 1.0], size=n) * rng.uniform(0.0, 1.0, size=spec.partition.m).repeat(
        spec.partition.block_sizes) for _ in range(samples)]
    cand += list(np.eye(n))
    for s in spec.partition.slices:
        a = np.zeros(n)
        a[s] = 1.0
        cand.append(a)
    best = 0.0
    for a in cand:
        den = norm_star(a, spec)
        if den > 0:
            best = max(best, float(np.max(np.abs(G @ a))) / den)
    return best


# -- certificate -------------------------------------------------------------

@dataclass(frozen=True)
class ContractionCertificate:
    partition: BlockPartition
    D: tuple[float, ...]
    eta1: float
    eta2: float
    eps_bar: float
    Bbar: np.ndarray
    c: float
    eps: float

    @property
    def m(self) -> int:
        return self.partition.m

    @property
    def norm_spec(self) -> WeightedNormSpec:
        return WeightedNormSpec(self.partition, self.D)

    def g_norm(self, mode: str = "exact") -> float:
        return induced_norm_inf_star(matrix_G(self.partition.n), self.norm_spec, mode)

    @property
    def range_factor(self) -> float:
        """``sqrt(ceil(n / r))``."""
        return math.sqrt(self.m)

    def range_constant(self, mode: str = "exact") -> float:
        """Disturbance gain multiplying ``eps * range_factor * ||w||_inf``."""
        return max(self.D) * self.g_norm(mode) / (self.eta1 * self.eta2)

    def residual(self) -> float:
        return lyapunov_residual(self.Bbar, self.D, self.eta2)

    def to_text(self) -> str:
        fmt = lambda v: repr(float(v))  # noqa: E731
        lines = [
            "# contraction certificate for the fast tracking-error subsystem",
            f"n = {self.partition.n}",
            f"r = {self.partition.r}",
            f"m = {self.m}",
            "block_sizes = " + " ".join(str(b) for b in self.partition.block_sizes),
            f"eps = {fmt(self.eps)}",
            f"eps_bar = {fmt(self.eps_bar)}",
            f"eta1 = {fmt(self.eta1)}",
            f"c = {fmt(self.c)}",
            f"eta2 = {fmt(self.eta2)}",
            "D = " + " ".join(fmt(q) for q in self.D),
        ]
        lines += [f"Bbar[{i + 1}] = " + " ".join(fmt(v) for v in row) for i, row in enumerate(self.Bbar)]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "ContractionCertificate":
        kv = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"malformed certificate line: {raw!r}")
            kv[key.strip()] = val.strip()
        part = BlockPartition(int(kv["n"]), int(kv["r"]))
        rows = [[float(v) for v in kv[f"Bbar[{i + 1}]"].split()] for i in range(part.m)]
        return cls(part, tuple(float(v) for v in kv["D"].split()), float(kv["eta1"]),
                   float(kv["eta2"]), float(kv["eps_bar"]), np.array(rows), float(kv["c"]),
                   float(kv["eps"]))

    @classmethod
    def load(cls, path) -> "ContractionCertificate":
        with open(path) as fh:
            return cls.from_text(fh.read())


def certify(cfg: PlatoonConfig, eps: float | None = None, objective: str = "gain",
            max_ratio: float = MAX_WEIGHT_RATIO) -> ContractionCertificate:
    """Run the certificate chain for ``cfg``.

    The majorant is built for ``min(eps, eps_bar)`` where ``eps`` defaults to
    the configuration's ``1 / k_min``. ``objective`` selects how the weights
    are picked, see :func:`diagonal_stability`.
    """
    try:
        const = contraction_constants(cfg.law)
    except ConditionViolation as exc:
        raise CertificationError("formation-law", str(exc)) from exc
    eb = epsilon_bar(cfg, const.c)
    eps_used = min(cfg.eps if eps is None else float(eps), eb)
    Bbar = block_majorant(cfg, eps_used)
    part = BlockPartition(cfg.n, cfg.r)
    D, eta2 = diagonal_stability(Bbar, objective, part, max_ratio)
    # shave rounding so the eigenvalue certificate holds with min(D) = 1
    eta2 *= 1.0 - 1e-12
    return ContractionCertificate(part, tuple(D), const.eta1, eta2, eb,
                                  Bbar, const.c, eps_used)
