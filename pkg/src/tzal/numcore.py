"""Numeric kernels for the per-video adaptation: projections, the two cosine
losses with analytic gradients, bias-corrected Adam, softmax, and a central
finite-difference gradient checker.

All computation is float64; feature files only constrain storage precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_NORM_FLOOR = 1e-12


class NumericError(Exception):
    """Numeric failure: non-finite values, degenerate norms, failed gradient
    verification (exit code 4 at the CLI)."""


@dataclass(eq=False)
class AdapterState:
    """Adaptable parameters (two projection matrices and a temperature) plus
    their Adam moment estimates. Instances are treated as immutable: adam_step
    returns a new state, so resetting after a video means discarding it."""

    w_v: np.ndarray          # (D_v, D) visual projection
    w_l: np.ndarray          # (D_l, D) language projection
    tau: float
    m_wv: np.ndarray = field(repr=False, default=None)
    v_wv: np.ndarray = field(repr=False, default=None)
    m_wl: np.ndarray = field(repr=False, default=None)
    v_wl: np.ndarray = field(repr=False, default=None)
    m_tau: float = 0.0
    v_tau: float = 0.0
    step_count: int = 0

    @classmethod
    def initial(cls, w_v: np.ndarray, w_l: np.ndarray, tau: float = 1.0) -> "AdapterState":
        w_v = np.array(w_v, dtype=np.float64)
        w_l = np.array(w_l, dtype=np.float64)
        if w_v.ndim != 2 or w_l.ndim != 2 or w_v.shape[1] != w_l.shape[1]:
            raise NumericError(f"projection shapes incompatible: {w_v.shape} vs {w_l.shape}")
        if not (np.isfinite(w_v).all() and np.isfinite(w_l).all() and math.isfinite(tau)):
            raise NumericError("non-finite projection initialization")
        return cls(w_v=w_v, w_l=w_l, tau=float(tau),
                   m_wv=np.zeros_like(w_v), v_wv=np.zeros_like(w_v),
                   m_wl=np.zeros_like(w_l), v_wl=np.zeros_like(w_l))

    @classmethod
    def identity(cls, dim: int, tau: float = 1.0) -> "AdapterState":
        return cls.initial(np.eye(dim), np.eye(dim), tau)

    def copy(self) -> "AdapterState":
        return AdapterState(w_v=self.w_v.copy(), w_l=self.w_l.copy(), tau=self.tau,
                            m_wv=self.m_wv.copy(), v_wv=self.v_wv.copy(),
                            m_wl=self.m_wl.copy(), v_wl=self.v_wl.copy(),
                            m_tau=self.m_tau, v_tau=self.v_tau,
                            step_count=self.step_count)


@dataclass
class Gradients:
    w_v: np.ndarray
    w_l: np.ndarray
    tau: float


@dataclass
class LossBreakdown:
    step: int
    repr_term: float
    sep_term: float
    total: float


def project_frames(state: AdapterState, x: np.ndarray) -> np.ndarray:
    """Map raw frame embeddings (N, D_v) or (D_v,) into the shared space."""
    return np.asarray(x, dtype=np.float64) @ state.w_v


def project_text(state: AdapterState, t: np.ndarray) -> np.ndarray:
    return np.asarray(t, dtype=np.float64) @ state.w_l


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with the denominator clamped away from zero."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(a) * np.linalg.norm(b)), _NORM_FLOOR)
    return float(np.clip(a @ b / denom, -1.0, 1.0))


def representation_loss(z_a: np.ndarray, z_b: np.ndarray) -> float:
    """2 - 2 cos(z_a, z_b); zero iff the pair is colinear with positive sign."""
    return 2.0 - 2.0 * cosine(z_a, z_b)


def separation_loss(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """Cosine distance between the stacked score vector [s+, s-] and the
    binary target [1...1, 0...0]."""
    s = np.concatenate([np.asarray(pos_scores, dtype=np.float64).ravel(),
                        np.asarray(neg_scores, dtype=np.float64).ravel()])
    k = len(pos_scores)
    target = np.concatenate([np.ones(k), np.zeros(len(s) - k)])
    return 2.0 - 2.0 * cosine(s, target)


def logistic(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray, scale: float = 1.0) -> np.ndarray:
    z = scale * np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _norm_checked(v: np.ndarray, what: str) -> float:
    n = float(np.linalg.norm(v))
    if n < _NORM_FLOOR:
        raise NumericError(f"zero-norm projected vector ({what})")
    return n


def loss_and_grad(state: AdapterState,
                  pos_frames: np.ndarray,
                  neg_frames: np.ndarray,
                  text: np.ndarray,
                  pair: tuple[int, int] | None,
                  pair_weight: float = 1.0,
                  frame_offset: np.ndarray | None = None,
                  tau_sigmoid: bool = False) -> tuple[LossBreakdown, Gradients]:
    """One adaptation step's loss and its exact gradients.

    pos_frames/neg_frames are raw (K, D_v) frame embeddings; text is the raw
    (D_l,) pseudo-label embedding. Projected frames optionally get a constant
    `frame_offset` subtracted (background removal); gradients flow through the
    projections only, the offset is a constant.

    The representation term compares the projected positive pair `pair`
    (skipped when pair is None, e.g. K == 1). The separation term pushes the
    2K scores toward [1]*K + [0]*K. Scores are tau * cos by default; cosine
    similarity is scale-invariant in the score vector, so tau's gradient is
    identically zero there. With tau_sigmoid the scores become
    logistic(tau * cos) and tau gets a real gradient.
    """
    w_v, w_l, tau = state.w_v, state.w_l, state.tau
    xp = np.asarray(pos_frames, dtype=np.float64)
    xn = np.asarray(neg_frames, dtype=np.float64)
    t = np.asarray(text, dtype=np.float64).ravel()
    if xp.ndim != 2 or xn.ndim != 2:
        raise NumericError("sample sets must be (K, D_v) arrays")
    kp, kn = xp.shape[0], xn.shape[0]
    if kp < 1 or kn < 1:
        raise NumericError("empty sample set")

    x_all = np.vstack([xp, xn])
    q = x_all @ w_v
    if frame_offset is not None:
        q = q - np.asarray(frame_offset, dtype=np.float64)
    u = t @ w_l

    g_wv = np.zeros_like(w_v)
    g_wl = np.zeros_like(w_l)
    g_tau = 0.0

    # representation term on the sampled positive pair
    l_repr = 0.0
    if pair is not None:
        i, j = pair
        if not (0 <= i < kp and 0 <= j < kp) or i == j:
            raise NumericError(f"invalid positive pair {pair} for K={kp}")
        a, b = q[i], q[j]
        na = _norm_checked(a, f"positive frame {i}")
        nb = _norm_checked(b, f"positive frame {j}")
        cab = float(a @ b) / (na * nb)
        l_repr = pair_weight * (2.0 - 2.0 * cab)
        ga = -2.0 * pair_weight * (b / (na * nb) - cab * a / (na * na))
        gb = -2.0 * pair_weight * (a / (na * nb) - cab * b / (nb * nb))
        g_wv += np.outer(xp[i], ga) + np.outer(xp[j], gb)

    # separation term on all 2K scores
    nu = _norm_checked(u, "text")
    nq = np.linalg.norm(q, axis=1)
    for idx in np.nonzero(nq < _NORM_FLOOR)[0]:
        side, local = ("positive", idx) if idx < kp else ("negative", idx - kp)
        raise NumericError(f"zero-norm projected vector ({side} frame {local})")
    cos_k = (q @ u) / (nq * nu)
    if tau_sigmoid:
        s = logistic(tau * cos_k)
        ds_dc = s * (1.0 - s) * tau
        ds_dtau = s * (1.0 - s) * cos_k
    else:
        s = tau * cos_k
        ds_dc = np.full_like(cos_k, tau)
        ds_dtau = None  # analytically zero, see docstring

    target = np.concatenate([np.ones(kp), np.zeros(kn)])
    ns = _norm_checked(s, "score vector")
    nt = math.sqrt(kp)
    csb = float(s @ target) / (ns * nt)
    l_sep = 2.0 - 2.0 * csb
    dl_ds = -2.0 * (target / (ns * nt) - csb * s / (ns * ns))
    g_c = dl_ds * ds_dc                                   # dL/dcos_k
    # dcos_k/dq_k = u/(|q||u|) - cos_k q/|q|^2 ; chain back through q = x W_v
    gq = (g_c / (nq * nu))[:, None] * u[None, :] - (g_c * cos_k / nq**2)[:, None] * q
    g_wv += x_all.T @ gq
    du = (q.T @ (g_c / (nq * nu))) - u * float(g_c @ cos_k) / nu**2
    g_wl += np.outer(t, du)
    if tau_sigmoid:
        g_tau = float(dl_ds @ ds_dtau)

    total = l_repr + l_sep
    if not (math.isfinite(total) and np.isfinite(g_wv).all()
            and np.isfinite(g_wl).all() and math.isfinite(g_tau)):
        raise NumericError("non-finite loss or gradient")
    return (LossBreakdown(step=0, repr_term=l_repr, sep_term=l_sep, total=total),
            Gradients(w_v=g_wv, w_l=g_wl, tau=g_tau))


def adam_step(state: AdapterState, grads: Gradients, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdapterState:
    """Bias-corrected Adam update; consumes a state, returns a new one."""
    if not (np.isfinite(grads.w_v).all() and np.isfinite(grads.w_l).all()
            and math.isfinite(grads.tau)):
        raise NumericError("non-finite gradient passed to adam_step")
    t = state.step_count + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t

    def upd(w, m, v, g):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        w = w - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        return w, m, v

    w_v, m_wv, v_wv = upd(state.w_v, state.m_wv, state.v_wv, grads.w_v)
    w_l, m_wl, v_wl = upd(state.w_l, state.m_wl, state.v_wl, grads.w_l)
    m_tau = beta1 * state.m_tau + (1.0 - beta1) * grads.tau
    v_tau = beta2 * state.v_tau + (1.0 - beta2) * grads.tau**2
    tau = state.tau - lr * (m_tau / c1) / (math.sqrt(v_tau / c2) + eps)
    return AdapterState(w_v=w_v, w_l=w_l, tau=tau,
                        m_wv=m_wv, v_wv=v_wv, m_wl=m_wl, v_wl=v_wl,
                        m_tau=m_tau, v_tau=v_tau, step_count=t)


# ---------------------------------------------------------------------------
# finite-difference verification

def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-4)


def finite_difference_check(state: AdapterState,
                            pos_frames: np.ndarray,
                            neg_frames: np.ndarray,
                            text: np.ndarray,
                            pair: tuple[int, int] | None,
                            pair_weight: float = 1.0,
                            frame_offset: np.ndarray | None = None,
                            tau_sigmoid: bool = False,
                            step: float = 1e-5) -> float:
    """Compare every analytic partial against central differences of the total
    loss. Returns the maximum relative error over all parameter entries."""

    def total_at(w_v, w_l, tau):
        probe = AdapterState.initial(w_v, w_l, tau)
        breakdown, _ = loss_and_grad(probe, pos_frames, neg_frames, text, pair,
                                     pair_weight=pair_weight,
                                     frame_offset=frame_offset,
                                     tau_sigmoid=tau_sigmoid)
        return breakdown.total

    _, grads = loss_and_grad(state, pos_frames, neg_frames, text, pair,
                             pair_weight=pair_weight, frame_offset=frame_offset,
                             tau_sigmoid=tau_sigmoid)
    worst = 0.0
    for mat, gmat in ((state.w_v, grads.w_v), (state.w_l, grads.w_l)):
        for idx in np.ndindex(mat.shape):
            saved = mat[idx]
            mat[idx] = saved + step
            hi = total_at(state.w_v, state.w_l, state.tau)
            mat[idx] = saved - step
            lo = total_at(state.w_v, state.w_l, state.tau)
            mat[idx] = saved
            worst = max(worst, _rel_err(float(gmat[idx]), (hi - lo) / (2 * step)))
    hi = total_at(state.w_v, state.w_l, state.tau + step)
    lo = total_at(state.w_v, state.w_l, state.tau - step)
    worst = max(worst, _rel_err(grads.tau, (hi - lo) / (2 * step)))
    return worst


def random_gradient_trial(rng: np.random.Generator, max_dim: int = 8,
                          max_k: int = 4) -> float:
    """One randomized gradient check; exercises offsets, pair weights and both
    score modes. Returns that trial's max relative error."""
    d_v = int(rng.integers(2, max_dim + 1))
    d_l = int(rng.integers(2, max_dim + 1))
    d = int(rng.integers(2, max_dim + 1))
    k = int(rng.integers(1, max_k + 1))
    state = AdapterState.initial(rng.standard_normal((d_v, d)),
                                 rng.standard_normal((d_l, d)),
                                 tau=float(rng.uniform(0.5, 2.0)))
    pos = rng.standard_normal((k, d_v))
    neg = rng.standard_normal((k, d_v))
    text = rng.standard_normal(d_l)
    pair = None
    if k >= 2:
        i, j = rng.choice(k, size=2, replace=False)
        pair = (int(i), int(j))
    offset = 0.1 * rng.standard_normal(d) if rng.random() < 0.5 else None
    return finite_difference_check(
        state, pos, neg, text, pair,
        pair_weight=float(rng.uniform(0.5, 2.0)),
        frame_offset=offset,
        tau_sigmoid=bool(rng.random() < 0.5))
