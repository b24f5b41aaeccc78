"""Graph network that maps a QP instance to an orthonormal projection matrix.

The instance graph has one node per variable and one per constraint; nonzero
Hessian entries connect variable pairs (diagonal included), nonzero rows of A
connect variables to constraints. Node updates aggregate degree-normalized
weighted neighbor sums; a shared feed-forward head emits one projection row
per variable node, and the rows are orthogonalized by thin QR with the
diag(R) >= 0 sign convention.

Differentiation is manual reverse mode over a replay tape, including the QR
adjoint; no autodiff framework is involved. The architecture is fixed and
small, so the tape is just the stored intermediates of one forward pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import ProjectionMatrix, QpInstance

LEAKY_SLOPE = 0.01
RANK_RTOL = 1e-10          # |R_ii| below this (times ||P_raw||_F) is deficient
JITTER_SCALE = 1e-6


@dataclass
class ModelParams:
    """All learnable tensors. Shapes depend only on (H, L, K, H_g), never on
    the instance size, so one parameter set serves QPs of any (N, M)."""

    w0v: np.ndarray          # (H,)   initial variable embedding weight
    s0v: np.ndarray          # (H,)   initial variable embedding bias
    w0c: np.ndarray          # (H,)
    s0c: np.ndarray          # (H,)
    Wv: np.ndarray           # (L, H, H) self transform, variable update
    Wvv: np.ndarray          # (L, H, H) variable-neighbor transform
    Wcv: np.ndarray          # (L, H, H) constraint-neighbor transform
    Wc: np.ndarray           # (L, H, H) self transform, constraint update
    Wvc: np.ndarray          # (L, H, H) variable-neighbor transform (constraints)
    g1: np.ndarray           # (H_g, H) head layer 1
    b1: np.ndarray           # (H_g,)
    g2: np.ndarray           # (H_g, H_g)
    b2: np.ndarray           # (H_g,)
    g3: np.ndarray           # (K, H_g) linear output
    b3: np.ndarray           # (K,)

    @property
    def hidden(self) -> int:
        return self.w0v.shape[0]

    @property
    def layers(self) -> int:
        return self.Wv.shape[0]

    @property
    def k(self) -> int:
        return self.g3.shape[0]

    @property
    def head_hidden(self) -> int:
        return self.g1.shape[0]

    _FIELDS = (
        "w0v", "s0v", "w0c", "s0c",
        "Wv", "Wvv", "Wcv", "Wc", "Wvc",
        "g1", "b1", "g2", "b2", "g3", "b3",
    )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, f).ravel() for f in self._FIELDS])

    def from_vector(self, vec) -> "ModelParams":
        vec = np.asarray(vec, dtype=np.float64)
        out = {}
        pos = 0
        for f in self._FIELDS:
            a = getattr(self, f)
            out[f] = vec[pos : pos + a.size].reshape(a.shape).copy()
            pos += a.size
        if pos != vec.size:
            raise ValueError(f"vector has {vec.size} entries, expected {pos}")
        return ModelParams(**out)

    def zeros_like(self) -> "ModelParams":
        return ModelParams(**{f: np.zeros_like(getattr(self, f)) for f in self._FIELDS})

    @property
    def n_params(self) -> int:
        return sum(getattr(self, f).size for f in self._FIELDS)


def param_count(h: int, l: int, k: int, h_g: int) -> int:
    """4H init terms + 5 LxHxH message matrices + head."""
    head = h_g * h + h_g + h_g * h_g + h_g + k * h_g + k
    return 4 * h + 5 * l * h * h + head


def init_params(seed: int, h: int = 32, l: int = 4, k: int = 10, h_g: int = 32) -> ModelParams:
    """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases."""
    if min(h, l, k, h_g) < 1:
        raise ValueError("all dimensions must be positive")
    rng = np.random.Generator(np.random.Philox(seed))

    def u(fan_in, *shape):
        bound = np.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ModelParams(
        w0v=u(1, h), s0v=np.zeros(h),
        w0c=u(1, h), s0c=np.zeros(h),
        Wv=u(h, l, h, h), Wvv=u(h, l, h, h), Wcv=u(h, l, h, h),
        Wc=u(h, l, h, h), Wvc=u(h, l, h, h),
        g1=u(h, h_g, h), b1=np.zeros(h_g),
        g2=u(h_g, h_g, h_g), b2=np.zeros(h_g),
        g3=u(h_g, k, h_g), b3=np.zeros(k),
    )


@dataclass
class QpGraph:
    """Explicit adjacency view of a QP instance. Neighbor lists are sorted
    ascending by node index; an entry is an edge iff it is exactly nonzero."""

    var_var: list            # per variable: [(n', Q[n', n]), ...]
    var_con: list            # per variable: [(m, A[m, n]), ...]
    con_var: list            # per constraint: [(n, A[m, n]), ...]
    c: np.ndarray
    b: np.ndarray


def build_graph(inst: QpInstance) -> QpGraph:
    Q, A = inst.Q, inst.A
    n, m = inst.n_vars, inst.n_cons
    var_var = [
        [(int(j), float(Q[j, i])) for j in np.flatnonzero(Q[:, i] != 0.0)]
        for i in range(n)
    ]
    var_con = [
        [(int(r), float(A[r, i])) for r in np.flatnonzero(A[:, i] != 0.0)]
        for i in range(n)
    ]
    con_var = [
        [(int(j), float(A[r, j])) for j in np.flatnonzero(A[r] != 0.0)]
        for r in range(m)
    ]
    return QpGraph(var_var=var_var, var_con=var_con, con_var=con_var,
                   c=inst.c.copy(), b=inst.b.copy())


@dataclass
class ForwardTape:
    """Replayable record of one forward pass; backward() never recomputes."""

    inst: QpInstance
    inv_vv: np.ndarray       # (N,) 1/|N_vv| with 0 for empty neighborhoods
    inv_cv: np.ndarray       # (N,)
    inv_vc: np.ndarray       # (M,)
    zv: list = field(default_factory=list)       # embeddings per layer, (N, H)
    zc: list = field(default_factory=list)       # (M, H)
    pre_v: list = field(default_factory=list)    # pre-activations
    pre_c: list = field(default_factory=list)
    agg_vv: list = field(default_factory=list)   # normalized neighbor sums
    agg_cv: list = field(default_factory=list)
    agg_vc: list = field(default_factory=list)
    h1: np.ndarray = None
    a1: np.ndarray = None
    h2: np.ndarray = None
    a2: np.ndarray = None
    p_raw: np.ndarray = None                     # head output before QR
    p: np.ndarray = None                         # orthonormal output
    r: np.ndarray = None                         # sign-fixed R factor
    qr_applied: bool = True
    fallback: bool = False                       # jitter fallback engaged
    degenerate: bool = False                     # jitter also failed


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(pre):
    return (pre > 0.0).astype(np.float64)


def _leaky(x):
    return np.where(x > 0.0, x, LEAKY_SLOPE * x)


def _leaky_grad(pre):
    # derivative defined as 0 at exactly 0
    return np.where(pre > 0.0, 1.0, np.where(pre < 0.0, LEAKY_SLOPE, 0.0))


def orthonormalize(p_raw):
    """Thin QR with diag(R) >= 0; returns (P, R, deficient_flag)."""
    qf, r = np.linalg.qr(p_raw, mode="reduced")
    fro = np.linalg.norm(p_raw, "fro")
    deficient = fro == 0.0 or np.abs(np.diag(r)).min() < RANK_RTOL * fro
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return qf * signs, signs[:, None] * r, bool(deficient)


def _forward_embeddings(params: ModelParams, inst: QpInstance) -> ForwardTape:
    Q, A, c, b = inst.Q, inst.A, inst.c, inst.b
    n, m = inst.n_vars, inst.n_cons
    deg_vv = np.count_nonzero(Q != 0.0, axis=0).astype(np.float64)
    deg_cv = np.count_nonzero(A != 0.0, axis=0).astype(np.float64)
    deg_vc = np.count_nonzero(A != 0.0, axis=1).astype(np.float64)
    with np.errstate(divide="ignore"):
        inv_vv = np.where(deg_vv > 0, 1.0 / deg_vv, 0.0)
        inv_cv = np.where(deg_cv > 0, 1.0 / deg_cv, 0.0)
        inv_vc = np.where(deg_vc > 0, 1.0 / deg_vc, 0.0)

    tape = ForwardTape(inst=inst, inv_vv=inv_vv, inv_cv=inv_cv, inv_vc=inv_vc)
    zv = c[:, None] * params.w0v + params.s0v
    zc = b[:, None] * params.w0c + params.s0c if m else np.zeros((0, params.hidden))
    tape.zv.append(zv)
    tape.zc.append(zc)

    for layer in range(params.layers):
        agg_vv = inv_vv[:, None] * (Q @ zv)
        agg_cv = inv_cv[:, None] * (A.T @ zc) if m else np.zeros_like(zv)
        pre_v = zv @ params.Wv[layer].T + agg_vv @ params.Wvv[layer].T \
            + agg_cv @ params.Wcv[layer].T
        agg_vc = inv_vc[:, None] * (A @ zv) if m else np.zeros((0, params.hidden))
        pre_c = zc @ params.Wc[layer].T + agg_vc @ params.Wvc[layer].T
        zv, zc = _relu(pre_v), _relu(pre_c)
        tape.agg_vv.append(agg_vv)
        tape.agg_cv.append(agg_cv)
        tape.agg_vc.append(agg_vc)
        tape.pre_v.append(pre_v)
        tape.pre_c.append(pre_c)
        tape.zv.append(zv)
        tape.zc.append(zc)

    tape.h1 = zv @ params.g1.T + params.b1
    tape.a1 = _leaky(tape.h1)
    tape.h2 = tape.a1 @ params.g2.T + params.b2
    tape.a2 = _leaky(tape.h2)
    tape.p_raw = tape.a2 @ params.g3.T + params.b3
    return tape


def forward_raw(params: ModelParams, inst: QpInstance) -> tuple[np.ndarray, ForwardTape]:
    """Head output without orthogonalization (used by the direct-prediction
    baseline, where the single output column is the solution estimate)."""
    tape = _forward_embeddings(params, inst)
    tape.qr_applied = False
    tape.p = tape.p_raw
    return tape.p_raw, tape


def forward(params: ModelParams, inst: QpInstance, k: int) -> tuple[ProjectionMatrix, ForwardTape]:
    """Generate the instance-specific projection matrix.

    Rank-deficient head outputs fall back to a deterministic jitter (scaled
    identity columns added to the raw output); the tape is flagged and the
    jitter treated as constant in backward().
    """
    if k != params.k:
        raise ValueError(f"model emits K={params.k} columns, requested {k}")
    if k > inst.n_vars:
        raise ValueError(f"K={k} exceeds N={inst.n_vars}")
    tape = _forward_embeddings(params, inst)
    p_raw = tape.p_raw
    p, r, deficient = orthonormalize(p_raw)
    if deficient:
        tape.fallback = True
        scale = JITTER_SCALE * max(np.linalg.norm(p_raw, "fro"), 1.0)
        jitter = np.zeros_like(p_raw)
        jitter[:k, :k] = scale * np.eye(k)
        p, r, deficient = orthonormalize(p_raw + jitter)
        if deficient:
            tape.degenerate = True
            p = np.zeros((inst.n_vars, k))
            p[:k, :k] = np.eye(k)
            r = np.eye(k)
    tape.p, tape.r = p, r
    return ProjectionMatrix(P=p), tape


def qr_backward(p, r, d_p):
    """Adjoint of thin QR (gradient w.r.t. the pre-QR matrix), loss depending
    on the orthonormal factor only: dA = (dP - P sym(P'dP)) R^{-T}, where
    sym() mirrors the upper triangle (diagonal kept once)."""
    g = p.T @ d_p
    msym = np.triu(g) + np.triu(g, 1).T
    rhs = d_p - p @ msym
    z = scipy.linalg.solve_triangular(r, rhs.T, lower=False, check_finite=False)
    return z.T


def backward(tape: ForwardTape, params: ModelParams, d_p: np.ndarray) -> ModelParams:
    """Exact reverse-mode gradient of <d_p, P(theta)> w.r.t. every parameter."""
    inst = tape.inst
    Q, A, c, b = inst.Q, inst.A, inst.c, inst.b
    m = inst.n_cons
    g = params.zeros_like()

    d_p = np.asarray(d_p, dtype=np.float64)
    if tape.qr_applied:
        if tape.degenerate:
            return g          # output was a constant identity block
        d_praw = qr_backward(tape.p, tape.r, d_p)
    else:
        d_praw = d_p

    # head
    g.g3 += d_praw.T @ tape.a2
    g.b3 += d_praw.sum(axis=0)
    d_a2 = d_praw @ params.g3
    d_h2 = d_a2 * _leaky_grad(tape.h2)
    g.g2 += d_h2.T @ tape.a1
    g.b2 += d_h2.sum(axis=0)
    d_a1 = d_h2 @ params.g2
    d_h1 = d_a1 * _leaky_grad(tape.h1)
    g.g1 += d_h1.T @ tape.zv[-1]
    g.b1 += d_h1.sum(axis=0)

    d_zv = d_h1 @ params.g1
    d_zc = np.zeros_like(tape.zc[-1])

    for layer in range(params.layers - 1, -1, -1):
        d_pre_v = d_zv * _relu_grad(tape.pre_v[layer])
        d_pre_c = d_zc * _relu_grad(tape.pre_c[layer])
        zv_in, zc_in = tape.zv[layer], tape.zc[layer]

        g.Wv[layer] += d_pre_v.T @ zv_in
        g.Wvv[layer] += d_pre_v.T @ tape.agg_vv[layer]
        g.Wcv[layer] += d_pre_v.T @ tape.agg_cv[layer]
        g.Wc[layer] += d_pre_c.T @ zc_in
        g.Wvc[layer] += d_pre_c.T @ tape.agg_vc[layer]

        d_zv = d_pre_v @ params.Wv[layer]
        d_agg_vv = d_pre_v @ params.Wvv[layer]
        d_zv += Q @ (tape.inv_vv[:, None] * d_agg_vv)
        d_zc = d_pre_c @ params.Wc[layer]
        if m:
            d_agg_cv = d_pre_v @ params.Wcv[layer]
            d_zc += A @ (tape.inv_cv[:, None] * d_agg_cv)
            d_agg_vc = d_pre_c @ params.Wvc[layer]
            d_zv += A.T @ (tape.inv_vc[:, None] * d_agg_vc)

    g.w0v += c @ d_zv
    g.s0v += d_zv.sum(axis=0)
    if m:
        g.w0c += b @ d_zc
        g.s0c += d_zc.sum(axis=0)
    return g


# ---------------------------------------------------------------------------
# Checkpoint format: JSON with hyperparameters and flat parameter arrays.

def save_checkpoint(path, params: ModelParams, seed=None, extra=None) -> None:
    doc = {
        "format": "qproj-model-v1",
        "hidden": params.hidden,
        "layers": params.layers,
        "k": params.k,
        "head_hidden": params.head_hidden,
        "seed": seed,
        "params": {f: getattr(params, f).ravel().tolist() for f in ModelParams._FIELDS},
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, allow_nan=False)


def load_checkpoint(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    h, l, k, h_g = doc["hidden"], doc["layers"], doc["k"], doc["head_hidden"]
    template = init_params(0, h=h, l=l, k=k, h_g=h_g)
    fields = {}
    for f in ModelParams._FIELDS:
        a = getattr(template, f)
        fields[f] = np.asarray(doc["params"][f], dtype=np.float64).reshape(a.shape)
    return ModelParams(**fields)
