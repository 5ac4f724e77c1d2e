"""The problem zoo.

Four families, all with analytic first-order gradients and analytic VJPs
(validated against the finite-difference fallback in the test suite):

* a closed-form scalar quadratic whose outer objective is known exactly,
* a degenerate two-dimensional quadratic whose inner problem leaves one
  coordinate free, separating the improved and basic model optima,
* data hyper-cleaning: per-sample sigmoid weights on a corrupted training
  set, tuned against a clean validation set, linear softmax model,
* toy hyper-representation: a shared linear feature map (outer) with
  independent per-task softmax heads (inner) over few-shot episodes.

Losses are plain sums over samples, not means.  Softmax cross-entropy is not
strongly convex in the weights, so the hyper-cleaning and hyper-representation
outer objectives add a small ridge term (default 1e-4) on the inner variable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import Dataset, EpisodeSet, corrupt_labels, gen_synthetic, make_episodes, split, stream
from .problem import BilevelProblem

__all__ = [
    "QuadraticBilevelSpec",
    "make_quadratic",
    "make_closedform_quadratic",
    "make_degenerate_quadratic",
    "make_hypercleaning",
    "make_hyperrep",
    "hyperclean_f1_metric",
    "hyperrep_accuracy_metric",
    "ZooInstance",
    "zoo_problem",
    "ZOO_NAMES",
    "sigmoid",
    "softmax",
    "sample_losses",
]


# ---------------------------------------------------------------------------
# numerics helpers

def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(Z: np.ndarray) -> np.ndarray:
    """Row-wise softmax along the last axis."""
    Z = Z - Z.max(axis=-1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=-1, keepdims=True)


def sample_losses(Z: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Per-sample softmax cross-entropy from logits Z and one-hot targets Y."""
    m = Z.max(axis=-1)
    lse = m + np.log(np.exp(Z - m[..., None]).sum(axis=-1))
    return lse - (Z * Y).sum(axis=-1)


def _softmax_jvp(P: np.ndarray, dZ: np.ndarray) -> np.ndarray:
    """Directional derivative of softmax rows along a logit perturbation."""
    return P * dZ - P * (P * dZ).sum(axis=-1, keepdims=True)


def _onehot(y: np.ndarray, C: int) -> np.ndarray:
    return np.eye(C)[y]


# ---------------------------------------------------------------------------
# quadratics

@dataclass(frozen=True)
class QuadraticBilevelSpec:
    """h = 1/2 w' A_h w - (B_h lam + d_h)' w,  g = 1/2 (w - c_g)' A_g (w - c_g).

    A_h must be symmetric PSD (possibly singular; a singular direction is what
    makes the inner argmin set non-trivial) and A_g symmetric PD.
    """

    A_h: np.ndarray
    B_h: np.ndarray
    d_h: np.ndarray
    A_g: np.ndarray
    c_g: np.ndarray

    def __post_init__(self):
        n = self.A_h.shape[0]
        m = self.B_h.shape[1]
        if self.A_h.shape != (n, n) or self.A_g.shape != (n, n):
            raise ValueError("quadratic forms must be square and matching")
        if self.B_h.shape != (n, m) or self.d_h.shape != (n,) or self.c_g.shape != (n,):
            raise ValueError("inconsistent quadratic spec shapes")
        if not (np.allclose(self.A_h, self.A_h.T) and np.allclose(self.A_g, self.A_g.T)):
            raise ValueError("quadratic forms must be symmetric")
        if np.min(np.linalg.eigvalsh(self.A_h)) < -1e-10:
            raise ValueError("A_h must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(self.A_g)) <= 0:
            raise ValueError("A_g must be positive definite")


def make_quadratic(spec: QuadraticBilevelSpec, name: str = "quadratic") -> BilevelProblem:
    """Bilevel problem from a quadratic spec, with exact derivatives."""
    A_h, B_h, d_h, A_g, c_g = spec.A_h, spec.B_h, spec.d_h, spec.A_g, spec.c_g
    n, m = B_h.shape

    def b(lam):
        return B_h @ lam + d_h

    return BilevelProblem(
        inner_dim=n, outer_dim=m, name=name,
        h_value=lambda w, lam: float(0.5 * w @ (A_h @ w) - b(lam) @ w),
        g_value=lambda w, lam: float(0.5 * (w - c_g) @ (A_g @ (w - c_g))),
        grad1_h=lambda w, lam: A_h @ w - b(lam),
        grad1_g=lambda w, lam: A_g @ (w - c_g),
        grad2_g=lambda w, lam: np.zeros(m),
        vjp11_h=lambda a, w, lam: A_h @ a,
        vjp12_h=lambda a, w, lam: -(B_h.T @ a),
        vjp11_g=lambda a, w, lam: A_g @ a,
        vjp12_g=lambda a, w, lam: np.zeros(m),
        g_lambda_free=True,
    )


def make_closedform_quadratic() -> BilevelProblem:
    """Scalar instance h = (w - lam)^2 / 2, g = w^2 / 2.

    The inner minimizer is w = lam, so the exact outer objective is
    f(lam) = lam^2 / 2 with gradient lam, minimized at lam = 0 with value 0.
    """
    p = BilevelProblem(
        inner_dim=1, outer_dim=1, name="closedform_quadratic",
        h_value=lambda w, lam: float(0.5 * (w[0] - lam[0]) ** 2),
        g_value=lambda w, lam: float(0.5 * w[0] ** 2),
        grad1_h=lambda w, lam: w - lam,
        grad1_g=lambda w, lam: w.copy(),
        grad2_g=lambda w, lam: np.zeros(1),
        vjp11_h=lambda a, w, lam: a.copy(),
        vjp12_h=lambda a, w, lam: -a,
        vjp11_g=lambda a, w, lam: a.copy(),
        vjp12_g=lambda a, w, lam: np.zeros(1),
        h_batch=lambda W, lam: 0.5 * (W[:, 0] - lam[0]) ** 2,
        g_batch=lambda W, lam: 0.5 * W[:, 0] ** 2,
        g_lambda_free=True,
    )
    p.answers = {
        "inner_solution": lambda lam: np.array([lam[0]]),
        "f": lambda lam: 0.5 * lam[0] ** 2,
        "grad_f": lambda lam: np.array([lam[0]]),
        "min_f": 0.0,
        "argmin_f": np.zeros(1),
    }
    return p


def make_degenerate_quadratic() -> BilevelProblem:
    """Two-dimensional witness separating the two bilevel formulations.

    h = (w1 - lam)^2 / 2 ignores w2, so the inner argmin set is the line
    {(lam, u)}.  g = w1^2/2 + (w2 - 1)^2/2 selects (lam, 1) on that line; a
    pure inner-gradient solver started at w2 = 0 never moves w2 and lands on
    (lam, 0).  The respective outer minima are 0 and 1/2, both at lam = 0.
    """
    first_coord = np.array([1.0, 0.0])     # h only sees w1
    g_center = np.array([0.0, 1.0])
    p = BilevelProblem(
        inner_dim=2, outer_dim=1, name="degenerate_quadratic",
        h_value=lambda w, lam: float(0.5 * (w[0] - lam[0]) ** 2),
        g_value=lambda w, lam: float(0.5 * w[0] ** 2 + 0.5 * (w[1] - 1.0) ** 2),
        grad1_h=lambda w, lam: (w - lam[0]) * first_coord,
        grad1_g=lambda w, lam: w - g_center,
        grad2_g=lambda w, lam: np.zeros(1),
        vjp11_h=lambda a, w, lam: a * first_coord,
        vjp12_h=lambda a, w, lam: -a[:1],
        # the outer quadratic form is the identity: adjoint passes through
        vjp11_g=lambda a, w, lam: a,
        vjp12_g=lambda a, w, lam: np.zeros(1),
        h_batch=lambda W, lam: 0.5 * (W[:, 0] - lam[0]) ** 2,
        g_batch=lambda W, lam: 0.5 * W[:, 0] ** 2 + 0.5 * (W[:, 1] - 1.0) ** 2,
        g_lambda_free=True,
    )
    p.answers = {
        "inner_solution_improved": lambda lam: np.array([lam[0], 1.0]),
        "inner_solution_basic": lambda lam: np.array([lam[0], 0.0]),
        "min_f_improved": 0.0,
        "min_f_basic": 0.5,
        "argmin_f": np.zeros(1),
        "formulation_gap": 0.5,
    }
    return p


# ---------------------------------------------------------------------------
# data hyper-cleaning

def make_hypercleaning(train: Dataset, val: Dataset, ridge: float = 1e-4) -> BilevelProblem:
    """Per-sample reweighting of a noisy training set, tuned on clean validation.

    Inner variable: flattened d x C softmax weights.  Outer variable: one
    unnormalized weight per training sample, squashed through a sigmoid in
    the inner objective

        h(w, lam) = sum_i sigmoid(lam_i) * loss_i(w),
        g(w, lam) = sum_j val_loss_j(w) + ridge * |w|^2.

    A sample is flagged corrupted when its weight lam_i goes negative.
    """
    if train.d != val.d:
        raise ValueError("train/validation feature dimensions differ")
    C = train.C
    if val.C != C:
        raise ValueError("bad-label: train/validation class counts differ")
    Xtr, Xva = train.X, val.X
    Ytr, Yva = _onehot(train.y, C), _onehot(val.y, C)
    XtrT = np.ascontiguousarray(Xtr.T)
    XvaT = np.ascontiguousarray(Xva.T)
    d = train.d
    n = d * C
    m = len(train)

    # value-keyed sigmoid cache: lam is fixed across the many gradient calls
    # of one inner solve, and the lookup is observationally pure
    sig_cache: dict = {}

    def _sig_col(lam):
        key = lam.tobytes()
        hit = sig_cache.get(key)
        if hit is None:
            if len(sig_cache) > 128:
                sig_cache.clear()
            hit = sigmoid(lam)[:, None]
            sig_cache[key] = hit
        return hit

    def W(w):
        return w.reshape(d, C)

    def h_value(w, lam):
        return float(sigmoid(lam) @ sample_losses(Xtr @ W(w), Ytr))

    def g_value(w, lam):
        return float(sample_losses(Xva @ W(w), Yva).sum() + ridge * (w @ w))

    def _softmax_owned(Z):
        # in-place on a freshly allocated logits matrix
        Z -= Z.max(axis=1, keepdims=True)
        np.exp(Z, out=Z)
        Z /= Z.sum(axis=1, keepdims=True)
        return Z

    def grad1_h(w, lam):
        P = _softmax_owned(Xtr @ W(w))
        np.subtract(P, Ytr, out=P)
        P *= _sig_col(lam)
        return (XtrT @ P).ravel()

    def grad1_g(w, lam):
        P = _softmax_owned(Xva @ W(w))
        np.subtract(P, Yva, out=P)
        out = (XvaT @ P).ravel()
        out += (2.0 * ridge) * w
        return out

    def vjp11_h(a, w, lam):
        P = _softmax_owned(Xtr @ W(w))
        dP = _softmax_jvp(P, Xtr @ W(a))
        dP *= _sig_col(lam)
        return (XtrT @ dP).ravel()

    def vjp12_h(a, w, lam):
        sig = _sig_col(lam)[:, 0]
        P = _softmax_owned(Xtr @ W(w))
        return sig * (1.0 - sig) * ((Xtr @ W(a)) * (P - Ytr)).sum(axis=1)

    def vjp11_g(a, w, lam):
        P = _softmax_owned(Xva @ W(w))
        dP = _softmax_jvp(P, Xva @ W(a))
        out = (XvaT @ dP).ravel()
        out += (2.0 * ridge) * a
        return out

    def grad1_h_many(ws, lams):
        P = softmax(np.matmul(Xtr, ws.reshape(-1, d, C)))
        P -= Ytr
        P *= sigmoid(lams)[:, :, None]
        return np.matmul(XtrT, P).reshape(ws.shape[0], n)

    def grad1_g_many(ws, lams):
        P = softmax(np.matmul(Xva, ws.reshape(-1, d, C)))
        P -= Yva
        return np.matmul(XvaT, P).reshape(ws.shape[0], n) + (2.0 * ridge) * ws

    p = BilevelProblem(
        inner_dim=n, outer_dim=m, name="hypercleaning",
        h_value=h_value, g_value=g_value,
        grad1_h=grad1_h, grad1_g=grad1_g,
        grad2_g=lambda w, lam: np.zeros(m),
        vjp11_h=vjp11_h, vjp12_h=vjp12_h, vjp11_g=vjp11_g,
        vjp12_g=lambda a, w, lam: np.zeros(m),
        g_lambda_free=True,
        grad1_h_many=grad1_h_many, grad1_g_many=grad1_g_many,
    )
    p.answers = {
        "train_losses": lambda w: sample_losses(Xtr @ W(w), Ytr),
        # dh/dlam_i = sigmoid'(lam_i) * loss_i(w)
        "grad2_h": lambda w, lam: sigmoid(lam) * (1.0 - sigmoid(lam)) * sample_losses(Xtr @ W(w), Ytr),
        "mask": train.mask.copy(),
        "ridge": ridge,
    }
    return p


def hyperclean_f1_metric(mask: np.ndarray) -> Callable:
    """Detection F1 of the negative-weight flagging rule against a known mask."""
    mask = np.asarray(mask, dtype=bool).copy()

    def metric(omega, lam):
        from .data import f1_score
        return f1_score(lam < 0.0, mask)

    return metric


# ---------------------------------------------------------------------------
# toy hyper-representation

def _stack_episodes(episodes: EpisodeSet):
    try:
        Xtr = np.stack([e.X_tr for e in episodes.episodes])
        Xva = np.stack([e.X_val for e in episodes.episodes])
        ytr = np.stack([e.y_tr for e in episodes.episodes])
        yva = np.stack([e.y_val for e in episodes.episodes])
    except ValueError as exc:
        raise ValueError(f"bad-episode: episodes are not identically shaped ({exc})") from exc
    return Xtr, ytr, Xva, yva


def make_hyperrep(episodes: EpisodeSet, rep_dim: int, ridge: float = 1e-4) -> BilevelProblem:
    """Shared linear representation (outer) with per-task softmax heads (inner).

    The outer variable reshapes to a d x r map applied as x -> x @ L; the
    inner variable concatenates one r x way head per task, trained on the
    episode's training split (h) and scored on its validation split (g).
    Heads of different tasks never interact: each task's loss touches only
    its own block of the inner variable.
    """
    if rep_dim < 1:
        raise ValueError("rep_dim must be at least 1")
    if len(episodes) == 0:
        raise ValueError("bad-episode: empty episode set")
    Xtr, ytr, Xva, yva = _stack_episodes(episodes)
    n_tasks, _, d = Xtr.shape
    way = episodes.way
    if int(ytr.max()) >= way or int(yva.max()) >= way:
        raise ValueError("bad-episode: episode labels exceed way")
    Ytr = _onehot(ytr, way)
    Yva = _onehot(yva, way)
    r = rep_dim
    n = n_tasks * r * way
    m = d * r

    def L(lam):
        return lam.reshape(d, r)

    def W(w):
        return w.reshape(n_tasks, r, way)

    def _forward(X, w, lam):
        F = X @ L(lam)                                  # task, sample, r
        Z = np.einsum("tnr,trc->tnc", F, W(w))
        return F, softmax(Z), Z

    def h_value(w, lam):
        _, _, Z = _forward(Xtr, w, lam)
        return float(sample_losses(Z, Ytr).sum())

    def g_value(w, lam):
        _, _, Z = _forward(Xva, w, lam)
        return float(sample_losses(Z, Yva).sum() + ridge * (w @ w))

    def grad1_h(w, lam):
        F, P, _ = _forward(Xtr, w, lam)
        return np.einsum("tnr,tnc->trc", F, P - Ytr).ravel()

    def grad1_g(w, lam):
        F, P, _ = _forward(Xva, w, lam)
        return np.einsum("tnr,tnc->trc", F, P - Yva).ravel() + 2.0 * ridge * w

    def grad2_g(w, lam):
        _, P, _ = _forward(Xva, w, lam)
        return np.einsum("tnd,tnc,trc->dr", Xva, P - Yva, W(w)).ravel()

    def _vjp11(X, Y, a, w, lam, rg):
        F, P, _ = _forward(X, w, lam)
        dP = _softmax_jvp(P, np.einsum("tnr,trc->tnc", F, W(a)))
        out = np.einsum("tnr,tnc->trc", F, dP).ravel()
        return out + 2.0 * rg * a if rg else out

    def _vjp12(X, Y, a, w, lam):
        F, P, _ = _forward(X, w, lam)
        A = W(a)
        dP = _softmax_jvp(P, np.einsum("tnr,trc->tnc", F, A))
        return (np.einsum("tnd,tnc,trc->dr", X, dP, W(w))
                + np.einsum("tnd,tnc,trc->dr", X, P - Y, A)).ravel()

    p = BilevelProblem(
        inner_dim=n, outer_dim=m, name="hyperrep",
        h_value=h_value, g_value=g_value,
        grad1_h=grad1_h, grad1_g=grad1_g, grad2_g=grad2_g,
        vjp11_h=lambda a, w, lam: _vjp11(Xtr, Ytr, a, w, lam, 0.0),
        vjp12_h=lambda a, w, lam: _vjp12(Xtr, Ytr, a, w, lam),
        vjp11_g=lambda a, w, lam: _vjp11(Xva, Yva, a, w, lam, ridge),
        vjp12_g=lambda a, w, lam: _vjp12(Xva, Yva, a, w, lam),
    )
    p.answers = {"n_tasks": n_tasks, "rep_dim": r, "way": way, "ridge": ridge}
    return p


def hyperrep_accuracy_metric(episodes: EpisodeSet, rep_dim: int) -> Callable:
    """Mean accuracy on the episodes' validation splits with the current heads."""
    Xtr, _, Xva, yva = _stack_episodes(episodes)
    n_tasks, _, d = Xtr.shape
    way = episodes.way

    def metric(omega, lam):
        F = Xva @ lam.reshape(d, rep_dim)
        Z = np.einsum("tnr,trc->tnc", F, omega.reshape(n_tasks, rep_dim, way))
        return float((np.argmax(Z, axis=-1) == yva).mean())

    return metric


# ---------------------------------------------------------------------------
# desk-scale registry

ZOO_NAMES = ("closedform_quadratic", "degenerate_quadratic",
             "hyperclean_synthetic", "hyperrep_synthetic")


@dataclass(frozen=True)
class ZooInstance:
    """A ready-to-run problem: oracle record, start point, tuned constants."""

    name: str
    problem: BilevelProblem
    lam0: np.ndarray
    defaults: dict            # t, s, eta, K, T
    metric: Optional[Callable]
    data_spec: dict


def zoo_problem(name: str, seed: int = 0, rho: float = 0.5) -> ZooInstance:
    """Build a named desk-scale instance deterministically from a seed.

    Step sizes and budgets are per problem: the quadratic instances move on
    unit scales while the learning problems use sum-over-samples losses and
    need far smaller inner steps.
    """
    if name == "closedform_quadratic":
        return ZooInstance(
            name=name, problem=make_closedform_quadratic(),
            lam0=np.array([2.0]),
            defaults=dict(t=0.1, s=0.1, eta=0.5, K=200, T=100),
            metric=None,
            data_spec={"kind": "analytic"},
        )
    if name == "degenerate_quadratic":
        return ZooInstance(
            name=name, problem=make_degenerate_quadratic(),
            lam0=np.array([1.0]),
            defaults=dict(t=0.1, s=0.1, eta=0.5, K=200, T=100),
            metric=None,
            data_spec={"kind": "analytic"},
        )
    if name == "hyperclean_synthetic":
        spec = {"kind": "synthetic", "n": 1000, "d": 10, "C": 2, "margin": 3.0,
                "n_tr": 400, "n_val": 400, "rho": rho, "seed": seed}
        ds = gen_synthetic(seed, spec["n"], spec["d"], spec["C"], spec["margin"])
        train, val = split(ds, spec["n_tr"], spec["n_val"], seed)
        train = corrupt_labels(train, rho, seed)
        problem = make_hypercleaning(train, val)
        return ZooInstance(
            name=name, problem=problem,
            lam0=np.zeros(problem.outer_dim),
            defaults=dict(t=0.01, s=0.001, eta=1.0, K=100, T=100),
            metric=hyperclean_f1_metric(train.mask),
            data_spec=spec,
        )
    if name == "hyperrep_synthetic":
        spec = {"kind": "synthetic", "n": 1200, "d": 20, "C": 20, "margin": 3.0,
                "way": 5, "shot": 1, "val_per_class": 10, "n_tasks": 8,
                "rep_dim": 8, "seed": seed}
        ds = gen_synthetic(seed, spec["n"], spec["d"], spec["C"], spec["margin"])
        episodes = make_episodes(ds, spec["way"], spec["shot"], spec["val_per_class"],
                                 spec["n_tasks"], seed)
        problem = make_hyperrep(episodes, spec["rep_dim"])
        lam0 = stream(seed, "lambda0").normal(0.0, 1.0 / np.sqrt(spec["d"]),
                                              spec["d"] * spec["rep_dim"])
        return ZooInstance(
            name=name, problem=problem, lam0=lam0,
            defaults=dict(t=0.01, s=0.01, eta=0.003, K=30, T=60),
            metric=hyperrep_accuracy_metric(episodes, spec["rep_dim"]),
            data_spec=spec,
        )
    raise KeyError(f"unknown problem {name!r}; known: {', '.join(ZOO_NAMES)}")
