"""Comparison methods: random coordinate selection, PCA of training optima,
a single shared learned projection, and direct solution prediction."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .core import ProjectionMatrix, QpInstance, max_violation, project, recover
from .gnn import (
    ModelParams,
    backward,
    forward_raw,
    init_params,
    orthonormalize,
)
from .solver import SolveStatus, solve_qp
from .training import Adam, TrainConfig, envelope_grad, guarded_relative_error
from .evaluate import SolutionCache


def rand_projection(n: int, k: int, seed: int) -> ProjectionMatrix:
    """Selection matrix: K distinct coordinates drawn uniformly. Columns are
    identity columns, hence orthonormal by construction."""
    if k > n:
        raise ValueError(f"K={k} exceeds N={n}")
    rng = np.random.Generator(np.random.Philox(seed))
    idx = rng.choice(n, size=k, replace=False)
    P = np.zeros((n, k))
    P[idx, np.arange(k)] = 1.0
    return ProjectionMatrix(P=P)


def pca_projection(train_solutions, k: int) -> ProjectionMatrix:
    """Top-K left singular vectors of the (N x D) matrix whose columns are
    training optima. Uncentered: recovery x = Py is linear, so the subspace
    must contain the solutions themselves rather than their deviations.
    Rank-deficient solution sets are padded with an orthonormal complement
    (with a warning)."""
    sols = np.asarray(train_solutions, dtype=np.float64)
    if sols.ndim != 2 or sols.shape[0] < 1:
        raise ValueError("need a D x N matrix of training solutions")
    n = sols.shape[1]
    if k > n:
        raise ValueError(f"K={k} exceeds N={n}")
    u, s, _ = np.linalg.svd(sols.T, full_matrices=False)
    rank = int(np.sum(s > 1e-12 * max(s[0], 1e-300)))
    if rank >= k:
        return ProjectionMatrix(P=u[:, :k])
    warnings.warn(
        f"solution matrix rank {rank} < K={k}; padding with an orthonormal complement",
        stacklevel=2,
    )
    basis, _ = np.linalg.qr(np.hstack([u[:, :rank], np.eye(n)]))
    return ProjectionMatrix(P=basis[:, :k])


def adapt_projection(P, n_test: int) -> ProjectionMatrix:
    """Fit a fixed N_train x K matrix to another variable count: zero-pad
    extra rows (columns stay orthonormal); truncation re-orthonormalizes."""
    P = np.asarray(P, dtype=np.float64)
    n_train, k = P.shape
    if n_test == n_train:
        return ProjectionMatrix(P=P)
    if n_test > n_train:
        out = np.zeros((n_test, k))
        out[:n_train] = P
        return ProjectionMatrix(P=out)
    warnings.warn(
        f"truncating projection rows {n_train} -> {n_test} and re-orthonormalizing",
        stacklevel=2,
    )
    if n_test < k:
        raise ValueError(f"cannot adapt K={k} columns to N={n_test} rows")
    q, _, deficient = orthonormalize(P[:n_test])
    if deficient:
        basis, _ = np.linalg.qr(np.hstack([P[:n_test], np.eye(n_test)]))
        q = basis[:, :k]
    return ProjectionMatrix(P=q)


@dataclass
class SharedProjection:
    """One projection matrix shared across instances of a family."""

    P: np.ndarray
    n_train: int

    def projection_for(self, n: int) -> ProjectionMatrix:
        return adapt_projection(self.P, n)


@dataclass
class DirectModel:
    """GNN backbone with a single-output head; the raw head column is the
    predicted solution. No feasibility repair is applied."""

    params: ModelParams
    lambda_pen: float


def _shared_val_loss(P, val_set, config, u_stars):
    total, failures = 0.0, 0
    for inst, u_star in zip(val_set, u_stars):
        proj = adapt_projection(P, inst.n_vars)
        res = solve_qp(project(inst, proj), config.solver)
        if res.status is not SolveStatus.SOLVED:
            failures += 1
            total += 1.0
            continue
        x = recover(proj, res.y_star)
        if max_violation(inst, x) > config.feas_tol:
            failures += 1
            total += 1.0
            continue
        total += guarded_relative_error(res.objective, u_star)
    return total + failures / len(val_set) * config.validation_penalty


def sharedp_train(train_set, val_set, k: int, config: TrainConfig) -> SharedProjection:
    """Optimize one shared orthonormal matrix with the same Adam + envelope
    gradient loop used for the generator; re-orthonormalize by QR after each
    step and keep the best validation epoch."""
    ns = {inst.n_vars for inst in train_set}
    if len(ns) != 1:
        raise ValueError(f"shared projection needs a single N, got {sorted(ns)}")
    n = ns.pop()
    rng = np.random.Generator(np.random.Philox(config.seed))
    # start from a coordinate selection: on families with sign-constrained
    # variables a dense random subspace pins the reduced optimum at zero,
    # where the envelope gradient vanishes and learning cannot start
    P = rand_projection(n, k, config.seed).P.copy()

    opt = Adam(n * k, config.learning_rate, config.beta1, config.beta2,
               config.adam_eps)
    u_stars_val = [solve_qp(inst, config.solver).objective for inst in val_set]
    best = (np.inf, P.copy())

    for _ in range(config.max_epochs):
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            grad = np.zeros((n, k))
            for idx in batch:
                inst = train_set[int(idx)]
                proj = ProjectionMatrix(P=P)
                res = solve_qp(project(inst, proj), config.solver)
                if res.status is not SolveStatus.SOLVED:
                    continue
                grad += envelope_grad(inst, P, res.y_star, res.lambda_star)
            vec = opt.step(P.ravel(), grad.ravel() / len(batch))
            P, _, deficient = orthonormalize(vec.reshape(n, k))
            if deficient:
                basis, _ = np.linalg.qr(np.hstack([vec.reshape(n, k), np.eye(n)]))
                P = basis[:, :k]
        val = _shared_val_loss(P, val_set, config, u_stars_val)
        if val < best[0]:
            best = (val, P.copy())

    return SharedProjection(P=best[1], n_train=n)


DIRECT_PENALTY_GRID = (1e-1, 1.0, 10.0, 1e2)


def direct_predict(model: DirectModel, inst: QpInstance) -> np.ndarray:
    x, _ = forward_raw(model.params, inst)
    return x[:, 0]


def _direct_val_loss(params, val_set, config, u_stars):
    total, failures = 0.0, 0
    for inst, u_star in zip(val_set, u_stars):
        x, _ = forward_raw(params, inst)
        x = x[:, 0]
        if max_violation(inst, x) > config.feas_tol:
            failures += 1
            total += 1.0
            continue
        u_hat = 0.5 * x @ (inst.Q @ x) + inst.c @ x + inst.constant
        total += guarded_relative_error(u_hat, u_star)
    return total + failures / len(val_set) * config.validation_penalty


def direct_loss_grad(inst: QpInstance, x, x_star, lambda_pen: float):
    """Squared solution error plus weighted constraint-violation norm; the
    gradient in x is returned alongside the loss value."""
    x = np.asarray(x, dtype=np.float64)
    diff = x - np.asarray(x_star, dtype=np.float64)
    loss = float(diff @ diff)
    grad = 2.0 * diff
    if inst.n_cons:
        r = np.maximum(inst.A @ x - inst.b, 0.0)
        rnorm = float(np.linalg.norm(r))
        loss += lambda_pen * rnorm
        if rnorm > 0.0:
            grad += lambda_pen * (inst.A.T @ (r / rnorm))
    return loss, grad


def direct_train(train_set, val_set, config: TrainConfig,
                 cache: SolutionCache | None = None) -> DirectModel:
    """Supervised training on precomputed optima, with the penalty weight
    selected from a fixed grid by validation loss."""
    cache = cache or SolutionCache(settings=config.solver)
    cache.warm(train_set)
    x_stars = [cache.x_star(inst) for inst in train_set]
    u_stars_val = [solve_qp(inst, config.solver).objective for inst in val_set]

    best = (np.inf, None, None)
    for lambda_pen in DIRECT_PENALTY_GRID:
        rng = np.random.Generator(np.random.Philox(config.seed))
        params = init_params(config.seed, h=config.hidden, l=config.layers,
                             k=1, h_g=config.head_hidden)
        opt = Adam(params.n_params, config.learning_rate,
                   config.beta1, config.beta2, config.adam_eps)
        vec = params.to_vector()
        best_val_here = (np.inf, vec.copy())
        for _ in range(config.max_epochs):
            order = rng.permutation(len(train_set))
            for start in range(0, len(order), config.batch_size):
                batch = order[start : start + config.batch_size]
                grad_acc = np.zeros_like(vec)
                params = params.from_vector(vec)
                for idx in batch:
                    inst = train_set[int(idx)]
                    x_col, tape = forward_raw(params, inst)
                    _, gx = direct_loss_grad(inst, x_col[:, 0], x_stars[int(idx)],
                                             lambda_pen)
                    grad_acc += backward(tape, params, gx[:, None]).to_vector()
                vec = opt.step(vec, grad_acc / len(batch))
            params = params.from_vector(vec)
            val = _direct_val_loss(params, val_set, config, u_stars_val)
            if val < best_val_here[0]:
                best_val_here = (val, vec.copy())
        if best_val_here[0] < best[0]:
            best = (best_val_here[0], best_val_here[1], lambda_pen)

    params = init_params(config.seed, h=config.hidden, l=config.layers,
                         k=1, h_g=config.head_hidden).from_vector(best[1])
    return DirectModel(params=params, lambda_pen=best[2])


# ---------------------------------------------------------------------------
# Baseline artifacts: JSON alongside model checkpoints, with a method tag.

def save_artifact(path, obj) -> None:
    if isinstance(obj, SharedProjection):
        doc = {"method": "sharedp", "n_train": obj.n_train,
               "k": obj.P.shape[1], "P": obj.P.ravel().tolist()}
    elif isinstance(obj, ProjectionMatrix):
        doc = {"method": "pca", "n_train": obj.n, "k": obj.k,
               "P": obj.P.ravel().tolist()}
    elif isinstance(obj, DirectModel):
        from .gnn import ModelParams as MP
        doc = {"method": "direct", "lambda_pen": obj.lambda_pen,
               "hidden": obj.params.hidden, "layers": obj.params.layers,
               "head_hidden": obj.params.head_hidden,
               "params": {f: getattr(obj.params, f).ravel().tolist()
                          for f in MP._FIELDS}}
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, allow_nan=False)


def load_artifact(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    method = doc.get("method")
    if method in ("pca", "sharedp"):
        P = np.asarray(doc["P"], dtype=np.float64).reshape(doc["n_train"], doc["k"])
        if method == "pca":
            return ProjectionMatrix(P=P)
        return SharedProjection(P=P, n_train=doc["n_train"])
    if method == "direct":
        template = init_params(0, h=doc["hidden"], l=doc["layers"], k=1,
                               h_g=doc["head_hidden"])
        fields = {f: np.asarray(doc["params"][f], dtype=np.float64)
                  .reshape(getattr(template, f).shape)
                  for f in ModelParams._FIELDS}
        return DirectModel(params=ModelParams(**fields),
                           lambda_pen=doc["lambda_pen"])
    raise ValueError(f"unknown artifact method {method!r}")
