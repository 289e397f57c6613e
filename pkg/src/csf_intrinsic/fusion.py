"""Consistency-aware selective fusion of pairwise shading orders.

The pixels are embedded on the unit circle, ``Z_p = exp(i S^b(p))``.  Three
steps alternate: the embedding is solved spectrally from the currently
selected orders, each pair re-selects the estimator that best trades
confidence against consistency with the embedding, and per-pixel pair weights
are re-fit under an elastic-net penalty whose ridge weight shrinks every
round, so that inconsistent pairs drop out.

Pair weights, selections and multipliers live on *directed* entries: entry
``e < P`` is ``(p, q)`` of pair ``e`` and entry ``P + e`` is ``(q, p)``, with
order ``-O``.  Each pixel owns the entries whose source it is.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import AdmmDiverged, EmptyGraph, NoGap, SolverDiverged
from .orders import METHODS, PairOrderTable

log = logging.getLogger(__name__)


@dataclass
class CsfConfig:
    alpha1: float = 1.0
    alpha2_init: float = 2.0
    tau: float = 0.2
    omega_min: float = 1.0 / 3.0
    rho: float = 5.0
    eta1: float = 0.05
    eta2: float = 1.0
    eta3: float = 1.0
    # allowed band of the per-pixel loop gain eta1 * sum(Ct^2) / (alpha2 + 2 rho)
    eta1_gain_min: float = 0.1
    eta1_gain_max: float = 0.5
    admm_max_iter: int = 500
    admm_tw: float = 1e-3   # times the pixel's entry count
    admm_td: float = 1e-3   # times D_p
    eig_tol: float = 1e-8
    eig_max_iter: int = 20000
    eig_residual_tol: float = 1e-4
    eigensolver: str = "lanczos"  # lanczos | power
    refine_iter: int = 200
    refine_tol: float = 1e-12
    choose_sweeps: int = 5
    choose_step: float = 0.1
    nu_init: float = 4.0
    equal_weights: bool = False   # angular-synchronisation ablation
    max_outer_iter: int = 100

    def __post_init__(self):
        for name in ("alpha2_init", "tau", "rho", "eta1", "eta2", "eta3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.eta1_gain_min <= self.eta1_gain_max < 2:
            raise ValueError("loop gain band must satisfy 0 < min <= max < 2")
        if self.alpha1 < 0:
            raise ValueError("alpha1 must be >= 0")
        if not 0 < self.omega_min <= 1:
            raise ValueError("omega_min must lie in (0, 1]")
        if self.eigensolver not in ("lanczos", "power"):
            raise ValueError(f"unknown eigensolver {self.eigensolver!r}")


@dataclass
class FusionState:
    n: int
    src: np.ndarray         # (2P,) source pixel of each directed entry
    dst: np.ndarray
    M: np.ndarray           # (2P,) selected method
    W: np.ndarray           # (2P,) nonnegative weight
    Ct: np.ndarray          # (2P,) confidence of the selected method
    D: np.ndarray           # (n,) degree: sum over entries of the max confidence
    Z: np.ndarray | None = None
    lam: np.ndarray | None = None    # (n,) ADMM multiplier of the degree constraint
    gamma1: np.ndarray | None = None  # (2P,)
    gamma2: np.ndarray | None = None
    X: np.ndarray | None = None
    Y: np.ndarray | None = None
    nu: np.ndarray | None = None     # (n,) multiplier used when choosing methods
    alpha1: float = 1.0
    alpha2: float = 2.0
    history: list = field(default_factory=list)

    @property
    def n_pairs(self) -> int:
        return len(self.src) // 2

    @property
    def active(self) -> np.ndarray:
        return self.D > 0


# --- helpers ---------------------------------------------------------------

def _directed(table: PairOrderTable):
    nb = table.nb
    src = np.concatenate([nb.p, nb.q])
    dst = np.concatenate([nb.q, nb.p])
    return src, dst


def _pair_index(state: FusionState):
    P = state.n_pairs
    idx = np.arange(2 * P) % P if P else np.zeros(0, int)
    sign = np.where(np.arange(2 * P) < P, 1.0, -1.0)
    return idx, sign


def selected(table: PairOrderTable, state: FusionState):
    """Per directed entry: (order, confidence) of the selected method."""
    idx, sign = _pair_index(state)
    order = sign * table.orders[idx, state.M]
    conf = table.confidence[idx, state.M]
    return order, conf


def pair_errors(Z: np.ndarray, table: PairOrderTable) -> np.ndarray:
    """``|Z_p - Z_q exp(i O)|^2`` for every pair and method, shape (P, 4).

    The value is the same for both directions of a pair.
    """
    zp = Z[table.nb.p][:, None]
    zq = Z[table.nb.q][:, None]
    return np.abs(zp - zq * np.exp(1j * table.orders)) ** 2


def embedding_energy(Z, src, dst, weight, order) -> float:
    """Angular-embedding error: sum of ``weight * |Z_src - Z_dst e^{iO}|^2``."""
    Z = np.asarray(Z)
    return float(np.sum(weight * np.abs(Z[src] - Z[dst] * np.exp(1j * order)) ** 2))


def state_energy(table: PairOrderTable, state: FusionState, Z=None) -> float:
    order, conf = selected(table, state)
    Z = state.Z if Z is None else Z
    return embedding_energy(Z, state.src, state.dst, state.W * conf, order)


# --- initialisation -------------------------------------------------------

def initialize(table: PairOrderTable, cfg: CsfConfig | None = None) -> FusionState:
    cfg = cfg or CsfConfig()
    if len(table) == 0:
        raise EmptyGraph("no pixel pairs")
    n = table.nb.n_pixels
    src, dst = _directed(table)
    best = np.argmax(table.confidence, axis=1)  # first maximum: BO, BOB, FS, SS
    M = np.concatenate([best, best])
    cmax = table.confidence.max(axis=1)
    D = np.bincount(src, weights=np.concatenate([cmax, cmax]), minlength=n)
    W = np.ones(len(src))
    state = FusionState(n=n, src=src, dst=dst, M=M, W=W, Ct=np.concatenate([cmax, cmax]),
                        D=D, alpha1=cfg.alpha1, alpha2=cfg.alpha2_init)
    state.nu = np.full(n, cfg.nu_init)
    return state


# --- embedding ----------------------------------------------------------

def hermitian_affinity(n, src, dst, weight, order) -> sp.csr_matrix:
    """``A + A^H`` with ``A[src, dst] = weight * exp(i order)``."""
    a = weight * np.exp(1j * order)
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    data = np.concatenate([a, np.conj(a)])
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def laplacian(D, affinity) -> sp.csr_matrix:
    return (sp.diags(D.astype(complex)) - affinity).tocsr()


def _power_top(Nmat, v0, tol, max_iter):
    """Largest eigenpair of a Hermitian matrix by shifted power iteration."""
    shift = float(np.abs(Nmat).sum(axis=1).max())  # Gershgorin bound
    v = v0 / np.linalg.norm(v0)
    mu = 0.0
    for _ in range(max_iter):
        w = Nmat @ v + shift * v
        v_new = w / np.linalg.norm(w)
        mu = float(np.real(np.vdot(v_new, Nmat @ v_new)))
        # remove the global phase before measuring the change
        phase = np.vdot(v, v_new)
        phase = phase / abs(phase) if abs(phase) > 0 else 1.0
        if np.linalg.norm(v_new - phase * v) < tol:
            return mu, v_new
        v = v_new
    raise SolverDiverged(f"power iteration did not converge in {max_iter} iterations")


def spectral_embedding(D, affinity, cfg: CsfConfig, v0=None):
    """Smallest generalised eigenvector of ``(D - affinity, D)`` on pixels with D > 0.

    Returns the eigenvector (zeros on inactive pixels) and the eigenvalue.
    """
    n = len(D)
    act = np.flatnonzero(D > 0)
    if len(act) == 0:
        raise EmptyGraph("every pixel has zero degree")
    dinv = 1.0 / np.sqrt(D[act])
    A = affinity[act][:, act]
    Nmat = (sp.diags(dinv) @ A @ sp.diags(dinv)).tocsr()
    start = np.ones(len(act), dtype=complex) if v0 is None else v0[act] * np.sqrt(D[act])
    if not np.all(np.isfinite(start)) or np.linalg.norm(start) == 0:
        start = np.ones(len(act), dtype=complex)
    if len(act) <= 400:
        vals, vecs = np.linalg.eigh(Nmat.toarray())
        mu, y = vals[-1], vecs[:, -1]
    elif cfg.eigensolver == "power":
        mu, y = _power_top(Nmat, start, cfg.eig_tol, cfg.eig_max_iter)
    else:
        try:
            vals, vecs = eigsh(Nmat, k=1, which="LA", v0=start, tol=cfg.eig_tol,
                               maxiter=cfg.eig_max_iter)
        except ArpackNoConvergence as exc:
            raise SolverDiverged(str(exc)) from exc
        mu, y = float(vals[0]), vecs[:, 0]
    z = np.zeros(n, dtype=complex)
    z[act] = y * dinv
    lam = 1.0 - mu  # generalised eigenvalue of (D - A, D)
    L = laplacian(D[act], A)
    Dz = D[act] * z[act]
    res = np.linalg.norm(L @ z[act] - lam * Dz) / max(np.linalg.norm(Dz), 1e-300)
    if res > cfg.eig_residual_tol:
        raise SolverDiverged(f"eigen residual {res:.3g} exceeds {cfg.eig_residual_tol:.3g}")
    return z, lam


def unit_normalize(z):
    mod = np.abs(z)
    out = np.ones_like(z, dtype=complex)
    nz = mod > 0
    out[nz] = z[nz] / mod[nz]
    return out


def refine_embedding(Z, affinity, D, n_iter=200, tol=1e-12):
    """Monotone polishing of a unit-modulus embedding.

    On unit-modulus vectors the embedding error equals a constant minus
    ``Z^H A Z``; iterating ``Z <- unit((A + G) Z)`` with the diagonal
    Gershgorin shift ``G`` (which makes ``A + G`` positive semidefinite and is
    constant on unit-modulus vectors) never increases it.
    """
    act = D > 0
    g = np.asarray(np.abs(affinity).sum(axis=1)).ravel()
    y = affinity @ Z
    prev = np.real(np.vdot(Z, y))
    for _ in range(n_iter):
        nz = unit_normalize(y + g * Z)
        nz[~act] = Z[~act]
        y = affinity @ nz
        cur = np.real(np.vdot(nz, y))
        Z = nz
        if abs(cur - prev) <= tol * max(1.0, abs(cur)):
            break
        prev = cur
    return Z


def solve_embedding(state: FusionState, table: PairOrderTable, cfg: CsfConfig | None = None):
    cfg = cfg or CsfConfig()
    order, conf = selected(table, state)
    weight = state.W * conf
    aff = hermitian_affinity(state.n, state.src, state.dst, weight, order)
    z, lam = spectral_embedding(state.D, aff, cfg, v0=state.Z)
    Z = unit_normalize(z)
    if cfg.refine_iter > 0:
        Z = refine_embedding(Z, aff, state.D, cfg.refine_iter, cfg.refine_tol)
    state.Z = Z
    return Z


# --- method selection -------------------------------------------------------

def choose_methods(state: FusionState, table: PairOrderTable, cfg: CsfConfig | None = None):
    """Lagrangian re-selection of the estimator of every directed entry.

    For multiplier ``nu_p`` entry ``(p, q)`` takes the method minimising
    ``W C_m (|Z_p - Z_q e^{iO_m}|^2 - nu_p)``; ``nu`` then ascends on the
    degree constraint ``sum_q W C_M = D_p``.
    """
    cfg = cfg or CsfConfig()
    err = pair_errors(state.Z, table)
    idx, _ = _pair_index(state)
    C = table.confidence[idx]            # (2P, 4)
    E = err[idx]
    Wc = state.W[:, None] * C
    rows = np.arange(len(idx))
    safe_D = np.where(state.D > 0, state.D, 1.0)
    for _ in range(cfg.choose_sweeps):
        obj = Wc * (E - state.nu[state.src][:, None])
        state.M = np.argmin(obj, axis=1)
        s = np.bincount(state.src, weights=Wc[rows, state.M], minlength=state.n)
        state.nu = state.nu + cfg.choose_step * (state.D - s) / safe_D
    state.Ct = C[rows, state.M]
    return state.M


# --- weights -------------------------------------------------------------

def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@njit(cache=True)
def _admm_kernel(ptr, E, Ct, d, tw, td, alpha1, alpha2, rho, eta1, gain_lo, gain_hi, eta2, eta3,
                 max_iter,
                 W, X, Y, lam, g1, g2, iters, r_out, gap_out):
    n = len(ptr) - 1
    denom = alpha2 + 2.0 * rho
    for p in range(n):
        a, b = ptr[p], ptr[p + 1]
        if a == b:
            continue
        # the gap responds to lambda with gain sum(Ct^2) / denom; the step is
        # eta1 unless that puts the loop gain outside [gain_lo, gain_hi]
        cc = 0.0
        for e in range(a, b):
            cc += Ct[e] * Ct[e]
        step = eta1
        if cc > 0.0:
            if step * cc / denom > gain_hi:
                step = gain_hi * denom / cc
            elif step * cc / denom < gain_lo:
                step = gain_lo * denom / cc
        it = 0
        r = 0.0
        gap = 0.0
        while it < max_iter:
            it += 1
            cw = 0.0
            r = 0.0
            for e in range(a, b):
                w = (rho * X[e] + rho * Y[e] - E[e] + lam[p] * Ct[e] - g1[e] - g2[e]) / denom
                t = w + g1[e] / rho
                th = alpha1 / rho
                if t > th:
                    x = t - th
                elif t < -th:
                    x = t + th
                else:
                    x = 0.0
                y = w + g2[e] / rho
                if y < 0.0:
                    y = 0.0
                W[e] = w
                X[e] = x
                Y[e] = y
                g1[e] += eta2 * (w - x)
                g2[e] += eta3 * (w - y)
                # feasibility is measured on the weights that are returned
                if x > 0.0:
                    cw += Ct[e] * y
                r += abs(w - x) + abs(w - y)
            gap = d[p] - cw
            lam[p] += step * gap
            if r < tw[p] and abs(gap) < td[p]:
                break
        iters[p] = it
        r_out[p] = r
        gap_out[p] = abs(gap)


def admm_weights(E, Ct, src, d, n, alpha1, alpha2, cfg: CsfConfig,
                 init=None, max_iter=None, tw=None, td=None):
    """Per-pixel elastic-net weights by ADMM.

    Solves, independently for every source pixel ``p``::

        min_W  E.W + alpha1 |W|_1 + alpha2/2 |W|^2
        s.t.   Ct.W = d_p,  W >= 0

    with the splitting ``W = X = Y`` (X carries the L1 term, Y the sign
    constraint).  Each pixel stops on its own residuals.  Returns
    ``(W, state_dict, info)``; the returned weights are the nonnegative copy
    ``Y``, zeroed where the L1 copy ``X`` is zero.
    """
    max_iter = cfg.admm_max_iter if max_iter is None else max_iter
    src = np.asarray(src, np.int64)
    m = len(E)
    count = np.bincount(src, minlength=n).astype(float)
    d = np.asarray(d, float)
    tw = cfg.admm_tw * np.maximum(count, 1.0) if tw is None else np.broadcast_to(tw, n).astype(float)
    td = cfg.admm_td * np.maximum(d, 1e-12) if td is None else np.broadcast_to(td, n).astype(float)
    if init is None:
        W, X, Y = np.ones(m), np.ones(m), np.ones(m)
        lam = np.full(n, 2.0)
        g1, g2 = np.ones(m), np.ones(m)
    else:
        W, X, Y, lam, g1, g2 = (np.array(init[k], dtype=float)
                               for k in ("W", "X", "Y", "lam", "gamma1", "gamma2"))
    order = np.argsort(src, kind="stable")
    ptr = np.zeros(n + 1, np.int64)
    ptr[1:] = np.cumsum(count.astype(np.int64))
    Ws, Xs, Ys = W[order], X[order], Y[order]
    g1s, g2s = g1[order], g2[order]
    iters = np.zeros(n, np.int64)
    r = np.zeros(n)
    gap = np.zeros(n)
    _admm_kernel(ptr, np.asarray(E, float)[order], np.asarray(Ct, float)[order], d,
                 np.ascontiguousarray(tw), np.ascontiguousarray(td),
                 float(alpha1), float(alpha2), cfg.rho, cfg.eta1, cfg.eta1_gain_min,
                 cfg.eta1_gain_max, cfg.eta2, cfg.eta3,
                 int(max_iter), Ws, Xs, Ys, lam, g1s, g2s, iters, r, gap)
    for full, part in ((W, Ws), (X, Xs), (Y, Ys), (g1, g1s), (g2, g2s)):
        full[order] = part
    has = count > 0
    converged = ~(has & ((r >= tw) | (gap >= td)))
    out = np.where(X > 0, Y, 0.0)
    info = {"iterations": int(iters.max()) if n else 0,
            "mean_iterations": float(iters[has].mean()) if has.any() else 0.0,
            "converged": bool(converged.all()),
            "max_gap": float(gap[has].max()) if has.any() else 0.0,
            "max_residual": float(r[has].max()) if has.any() else 0.0,
            "unconverged_pixels": int((~converged).sum()),
            "far": bool(np.any(has & ((r > 10 * tw) | (gap > 10 * td))))}
    state = {"W": W, "X": X, "Y": Y, "lam": lam, "gamma1": g1, "gamma2": g2}
    return out, state, info


def elastic_net_objective(W, E, alpha1, alpha2) -> float:
    return float(E @ W + alpha1 * np.abs(W).sum() + 0.5 * alpha2 * (W @ W))


def update_weights(state: FusionState, table: PairOrderTable, cfg: CsfConfig | None = None,
                   strict: bool = True):
    cfg = cfg or CsfConfig()
    order, conf = selected(table, state)
    state.Ct = conf
    E = conf * np.abs(state.Z[state.src] - state.Z[state.dst] * np.exp(1j * order)) ** 2
    init = None
    if state.lam is not None:
        init = {"W": state.W, "X": state.X, "Y": state.Y, "lam": state.lam,
                "gamma1": state.gamma1, "gamma2": state.gamma2}
    W, st, info = admm_weights(E, conf, state.src, state.D, state.n,
                               state.alpha1, state.alpha2, cfg, init=init)
    if info["far"] and strict:
        raise AdmmDiverged(f"ADMM stopped far from feasibility: {info}")
    state.W = W
    state.X, state.Y, state.lam = st["X"], st["Y"], st["lam"]
    state.gamma1, state.gamma2 = st["gamma1"], st["gamma2"]
    return info


# --- decoding -------------------------------------------------------------

def decode_angles(Z, scale: float = 1.0, n_bins: int = 256, mask=None) -> np.ndarray:
    """Shading brightness from embedding angles.

    The largest circular run of empty histogram bins marks the gap between the
    brightest and darkest pixels; angles are unwrapped so the darkest pixel
    sits at 0, then divided by ``scale``.
    """
    Z = np.asarray(Z)
    ang = np.mod(np.angle(Z), 2 * np.pi)
    use = ang if mask is None else ang[np.asarray(mask, bool)]
    width = 2 * np.pi / n_bins
    hist = np.bincount(np.minimum((use / width).astype(int), n_bins - 1), minlength=n_bins)
    empty = hist == 0
    if not empty.any():
        raise NoGap("no empty angle bin; compress the brightness range further")
    if empty.all():
        return np.zeros(ang.shape)
    # longest circular run of empty bins
    start = int(np.flatnonzero(~empty)[0])
    rolled = np.roll(empty, -start)
    best_len, best_end, run = 0, 0, 0
    for i, e in enumerate(rolled):
        run = run + 1 if e else 0
        if run > best_len:
            best_len, best_end = run, i
    gap_end = (best_end + start) % n_bins        # last empty bin of the gap
    origin = (gap_end + 1) * width                # first bin after the gap
    sb = np.mod(ang - origin, 2 * np.pi)
    ref = sb if mask is None else sb[np.asarray(mask, bool)]
    sb = sb - ref.min()
    return sb / scale


# --- driver ----------------------------------------------------------------

def _snapshot(table, state, it):
    counts = np.bincount(state.M, minlength=4)
    return {"iteration": it, "alpha2": state.alpha2,
            "energy": state_energy(table, state),
            "density": float(np.count_nonzero(state.W) / len(state.W)),
            "methods": {m: int(c) for m, c in zip(METHODS, counts)}}


def run_csf(table: PairOrderTable, cfg: CsfConfig | None = None, callback=None) -> FusionState:
    cfg = cfg or CsfConfig()
    state = initialize(table, cfg)
    if cfg.equal_weights:
        state.Ct = np.ones_like(state.Ct)
        state.D = np.bincount(state.src, minlength=state.n).astype(float)
        order, _ = selected(table, state)
        aff = hermitian_affinity(state.n, state.src, state.dst, np.ones(len(order)), order)
        z, _ = spectral_embedding(state.D, aff, cfg)
        state.Z = unit_normalize(z)
        if cfg.refine_iter > 0:
            state.Z = refine_embedding(state.Z, aff, state.D, cfg.refine_iter, cfg.refine_tol)
        state.history.append({"iteration": 0, "mode": "equal_weights",
                              "energy": embedding_energy(state.Z, state.src, state.dst,
                                                         np.ones(len(order)), order)})
        return state

    it = 0
    while state.alpha2 > 0 and it < cfg.max_outer_iter:
        it += 1
        try:
            solve_embedding(state, table, cfg)
            choose_methods(state, table, cfg)
            state.alpha2 = round(state.alpha2 - cfg.tau, 12)
            if state.alpha2 <= 0:
                state.history.append(_snapshot(table, state, it))
                break
            info = update_weights(state, table, cfg)
        except (SolverDiverged, AdmmDiverged) as exc:
            raise type(exc)(f"CSF iteration {it}: {exc}") from exc
        snap = _snapshot(table, state, it)
        snap["admm"] = info
        state.history.append(snap)
        if callback is not None:
            callback(snap)
        log.debug("csf iteration %d: %s", it, snap)
        if np.count_nonzero(state.W) < cfg.omega_min * len(state.W):
            break
    return state
