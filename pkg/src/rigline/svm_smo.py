"""Two-class SVM trained by Sequential Minimal Optimization.

The solver maximizes the dual objective

    W(a) = sum_i a_i - 1/2 sum_ij y_i y_j k(x_i, x_j) a_i a_j

subject to 0 <= a_i <= C and sum_i y_i a_i = 0, by repeatedly picking two
multipliers and solving their restricted subproblem in closed form. Class
order maps the first class to +1 and the second to -1.
"""

import math
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset, class_order, stratified_folds
from .errors import ConfigError, ShapeError, SingleClassError
from .baseline_learners import TrainedModel

_SNAP = 1e-8  # multipliers this close to a bound are set exactly onto it


@dataclass(frozen=True)
class KernelSpec:
    """Kernel function selector.

    kind: linear (the default), rbf, or polynomial. gamma applies to rbf
    (None means 1/feature-count, resolved at training time); degree/coef0
    to polynomial.
    """

    kind: str = "linear"
    gamma: float | None = None
    degree: int = 3
    coef0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf", "polynomial"):
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        if self.gamma is not None and self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.kind == "polynomial" and self.degree < 1:
            raise ConfigError(f"degree must be >= 1, got {self.degree}")


@dataclass(frozen=True)
class SmoConfig:
    # eps (the minimum alpha step) sits well below kkt_tol: with the two
    # equal, points violating KKT by just over the tolerance can need a step
    # smaller than eps to clear, so they stall the outer loop and survive
    # into the "converged" model. max_passes caps outer-loop sweeps (full and
    # non-bound alike) as a runaway guard; thousands of the cheap non-bound
    # sweeps are normal on larger training sets, so the cap sits high.
    C: float = 1.0
    kkt_tol: float = 1e-3
    eps: float = 1e-6
    kernel: KernelSpec = KernelSpec()
    max_passes: int = 20000
    seed: int = 0
    cache_bytes: int = 256 * 1024 * 1024

    def __post_init__(self):
        if self.C <= 0:
            raise ConfigError(f"C must be > 0, got {self.C}")
        if self.kkt_tol <= 0 or self.eps <= 0:
            raise ConfigError("kkt_tol and eps must be > 0")
        if self.max_passes < 1:
            raise ConfigError("max_passes must be >= 1")


def resolve_kernel(spec: KernelSpec, n_features: int) -> KernelSpec:
    if spec.kind == "rbf" and spec.gamma is None:
        return replace(spec, gamma=1.0 / n_features)
    return spec


def kernel_matrix(spec: KernelSpec, A, B) -> np.ndarray:
    """k(a_i, b_j) for every row pair; shape (len(A), len(B))."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    G = A @ B.T
    if spec.kind == "linear":
        return G
    if spec.kind == "polynomial":
        return (G + spec.coef0) ** spec.degree
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * G
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-spec.gamma * sq)


class SolverState:
    """Mutable SMO working state.

    The error cache holds E_i = f(x_i) - y_i and is valid exactly for the
    non-bound multipliers (0 < a_i < C); bound-point errors are recomputed on
    demand. Kernel rows are memoized under an LRU byte budget.
    """

    def __init__(self, X, y, cfg: SmoConfig):
        self.X = X
        self.y = y
        self.cfg = cfg
        self.kernel = resolve_kernel(cfg.kernel, X.shape[1])
        self.n = X.shape[0]
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        self.e_cache = np.zeros(self.n)
        self.e_valid = np.zeros(self.n, dtype=bool)
        self.rng = np.random.default_rng(cfg.seed)
        self._rows = OrderedDict()
        self._max_rows = max(1, cfg.cache_bytes // (8 * self.n))
        self.step_monitor = None
        # Bound-point errors depend only on (alpha, b), so a value computed
        # since the last successful step can be handed back verbatim. The
        # epoch counter advances on every mutation.
        self.step_epoch = 0
        self._e_bound = np.zeros(self.n)
        self._e_bound_epoch = np.full(self.n, -1, dtype=np.int64)

    def kernel_row(self, i: int) -> np.ndarray:
        row = self._rows.get(i)
        if row is not None:
            self._rows.move_to_end(i)
            return row
        row = kernel_matrix(self.kernel, self.X[i : i + 1], self.X)[0]
        self._rows[i] = row
        if len(self._rows) > self._max_rows:
            self._rows.popitem(last=False)
        return row

    def decision(self, i: int) -> float:
        """f(x_i) recomputed from the multipliers and the kernel row; this
        never reads the running error cache, so it doubles as its checker."""
        row = self.kernel_row(i)
        return float(np.dot(self.alpha * self.y, row) + self.b)

    def get_error(self, i: int) -> float:
        if self.e_valid[i]:
            return float(self.e_cache[i])
        if self._e_bound_epoch[i] == self.step_epoch:
            return float(self._e_bound[i])
        e = self.decision(i) - float(self.y[i])
        self._e_bound[i] = e
        self._e_bound_epoch[i] = self.step_epoch
        return e

    def cache_drift(self) -> float:
        """Largest gap between cached errors and freshly computed ones."""
        worst = 0.0
        for i in np.flatnonzero(self.e_valid):
            worst = max(worst, abs(self.e_cache[i] - (self.decision(i) - self.y[i])))
        return worst


def _restricted_w(a1, a2, k11, k12, k22, s, y1, y2, v1, v2):
    """Dual objective restricted to the two active multipliers, dropping
    terms that do not involve them."""
    return (
        a1
        + a2
        - 0.5 * k11 * a1 * a1
        - 0.5 * k22 * a2 * a2
        - s * k12 * a1 * a2
        - y1 * a1 * v1
        - y2 * a2 * v2
    )


def take_step(state: SolverState, i1: int, i2: int, e2: float = None) -> bool:
    """Jointly re-optimize multipliers i1, i2. Returns True on real progress.

    e2 short-circuits the E2 lookup: inside one examine pass over candidate
    partners nothing mutates until a step succeeds, so the caller's value
    stays correct across failed attempts.
    """
    if i1 == i2:
        return False
    C = state.cfg.C
    eps = state.cfg.eps
    alph1 = float(state.alpha[i1])
    alph2 = float(state.alpha[i2])
    y1 = float(state.y[i1])
    y2 = float(state.y[i2])
    s = y1 * y2

    # The equality constraint confines (a1, a2) to a diagonal segment. The
    # bounds need no errors or kernel values, so check them first.
    if s > 0:
        L = max(0.0, alph1 + alph2 - C)
        H = min(C, alph1 + alph2)
    else:
        L = max(0.0, alph2 - alph1)
        H = min(C, C + alph2 - alph1)
    if L >= H:
        return False

    E1 = state.get_error(i1)
    E2 = state.get_error(i2) if e2 is None else e2

    row1 = state.kernel_row(i1)
    row2 = state.kernel_row(i2)
    k11 = float(row1[i1])
    k12 = float(row1[i2])
    k22 = float(row2[i2])
    eta = k11 + k22 - 2.0 * k12
    if eta > 0.0:
        a2 = alph2 + y2 * (E1 - E2) / eta
        a2 = min(max(a2, L), H)
    else:
        # Flat or concave direction: compare the objective at both ends.
        f1 = E1 + y1  # f(x1)
        f2 = E2 + y2
        v1 = f1 - state.b - y1 * alph1 * k11 - y2 * alph2 * k12
        v2 = f2 - state.b - y1 * alph1 * k12 - y2 * alph2 * k22
        gamma = alph1 + s * alph2
        w_l = _restricted_w(gamma - s * L, L, k11, k12, k22, s, y1, y2, v1, v2)
        w_h = _restricted_w(gamma - s * H, H, k11, k12, k22, s, y1, y2, v1, v2)
        if w_l > w_h + eps:
            a2 = L
        elif w_h > w_l + eps:
            a2 = H
        else:
            a2 = alph2

    if a2 < _SNAP:
        a2 = 0.0
    elif a2 > C - _SNAP:
        a2 = C
    if abs(a2 - alph2) < eps * (a2 + alph2 + eps):
        return False

    a1 = alph1 + s * (alph2 - a2)
    # Rounding can push a1 a hair outside the box; clamp and push the
    # correction back into a2 so the equality constraint survives exactly.
    if a1 < 0.0 or a1 > C:
        a1 = min(max(a1, 0.0), C)
        a2 = alph2 + s * (alph1 - a1)
        a2 = min(max(a2, 0.0), C)

    d1 = a1 - alph1
    d2 = a2 - alph2
    b1 = state.b - E1 - y1 * d1 * k11 - y2 * d2 * k12
    b2 = state.b - E2 - y1 * d1 * k12 - y2 * d2 * k22
    if 0.0 < a1 < C:
        b_new = b1
    elif 0.0 < a2 < C:
        b_new = b2
    else:
        b_new = 0.5 * (b1 + b2)
    db = b_new - state.b

    valid = state.e_valid
    state.e_cache[valid] += y1 * d1 * row1[valid] + y2 * d2 * row2[valid] + db
    state.e_cache[i1] = E1 + y1 * d1 * k11 + y2 * d2 * k12 + db
    state.e_cache[i2] = E2 + y1 * d1 * k12 + y2 * d2 * k22 + db
    state.alpha[i1] = a1
    state.alpha[i2] = a2
    state.b = b_new
    state.e_valid[i1] = 0.0 < a1 < C
    state.e_valid[i2] = 0.0 < a2 < C
    state.step_epoch += 1
    if state.step_monitor is not None:
        state.step_monitor(state)
    return True


def examine_example(state: SolverState, i2: int) -> int:
    """If i2 violates its KKT condition beyond kkt_tol, try to step it against
    a partner: first the cached-error point maximizing |E1 - E2|, then the
    other non-bound points, then everything, the latter two in seeded-random
    rotation. Returns 1 when some step made progress."""
    tol = state.cfg.kkt_tol
    C = state.cfg.C
    y2 = float(state.y[i2])
    alph2 = float(state.alpha[i2])
    E2 = state.get_error(i2)
    r2 = E2 * y2
    if not ((r2 < -tol and alph2 < C) or (r2 > tol and alph2 > 0)):
        return 0
    non_bound = np.flatnonzero(state.e_valid)
    if len(non_bound) > 1:
        i1 = int(non_bound[np.argmax(np.abs(state.e_cache[non_bound] - E2))])
        if take_step(state, i1, i2, E2):
            return 1
    if len(non_bound) > 0:
        start = int(state.rng.integers(len(non_bound)))
        for k in range(len(non_bound)):
            if take_step(state, int(non_bound[(start + k) % len(non_bound)]), i2, E2):
                return 1
    start = int(state.rng.integers(state.n))
    for k in range(state.n):
        if take_step(state, (start + k) % state.n, i2, E2):
            return 1
    return 0


def dual_objective_value(X, y, alpha, kernel: KernelSpec) -> float:
    """W(a) evaluated directly from its definition."""
    nz = np.flatnonzero(alpha)
    if len(nz) == 0:
        return 0.0
    K = kernel_matrix(kernel, X[nz], X[nz])
    u = alpha[nz] * y[nz]
    return float(np.sum(alpha[nz]) - 0.5 * (u @ K @ u))


class SvmModel:
    """Trained SVM: support vectors with their multipliers plus the bias."""

    def __init__(
        self,
        classes,
        sv_X,
        sv_y,
        alpha,
        b,
        kernel,
        C,
        dual_objective,
        converged,
        sv_indices,
        n_train,
    ):
        self.classes = list(classes)
        self.sv_X = sv_X
        self.sv_y = sv_y
        self.alpha = alpha
        self.b = b
        self.kernel = kernel
        self.C = C
        self.dual_objective = dual_objective
        self.converged = converged
        self.sv_indices = sv_indices
        self.n_train = n_train
        self.arity = sv_X.shape[1] if sv_X.size else 0

    def n_support(self) -> int:
        return len(self.alpha)


def _final_bias(state: SolverState, C: float, sv) -> float:
    """Bias recomputed from the final multipliers.

    Two-multiplier steps only see error differences, so the bias never
    influences which optimum the multipliers reach; when every multiplier
    ends on a bound the running value can sit outside the interval the
    optimality cases allow. Each training point bounds the bias from below
    or above (or both, when interior); the midpoint of the tightest bounds
    satisfies every case with equal slack.
    """
    if len(sv):
        K = kernel_matrix(state.kernel, state.X[sv], state.X)
        g = (state.alpha[sv] * state.y[sv]) @ K
    else:
        g = np.zeros(state.n)
    t = state.y - g
    at_zero = state.alpha <= _SNAP
    at_c = state.alpha >= C - _SNAP
    interior = ~at_zero & ~at_c
    pos, neg = state.y > 0, state.y < 0
    from_below = (at_zero & pos) | (at_c & neg) | interior
    from_above = (at_zero & neg) | (at_c & pos) | interior
    lo = float(t[from_below].max()) if np.any(from_below) else None
    hi = float(t[from_above].min()) if np.any(from_above) else None
    if lo is None:
        return hi
    if hi is None:
        return lo
    return 0.5 * (lo + hi)


def smo_train(d: Dataset, cfg: SmoConfig = SmoConfig(), step_monitor=None) -> SvmModel:
    """Run the two-loop SMO outer iteration to KKT optimality.

    Alternates a sweep over all rows with sweeps over the non-bound subset
    until a full sweep changes nothing. Hitting max_passes sweeps first
    returns the current iterate flagged non-converged. The returned bias is
    recomputed from the final multipliers (see _final_bias); the running
    value is only pinned down while interior multipliers exist.
    """
    if not d.label_presence:
        raise SingleClassError("smo_train needs a labeled dataset")
    classes = class_order(d.labels)
    if len(classes) < 2:
        raise SingleClassError(f"need two classes, got {classes}")
    if len(classes) > 2:
        raise ConfigError(f"two-class solver, got {len(classes)} classes")
    y = np.where(d.labels == classes[0], 1.0, -1.0)
    state = SolverState(d.X, y, cfg)
    state.step_monitor = step_monitor

    examine_all = True
    converged = False
    sweeps = 0
    while sweeps < cfg.max_passes:
        sweeps += 1
        num_changed = 0
        if examine_all:
            for i2 in range(state.n):
                num_changed += examine_example(state, i2)
            if num_changed == 0:
                converged = True
                break
            examine_all = False
        else:
            for i2 in np.flatnonzero(state.e_valid):
                num_changed += examine_example(state, int(i2))
            if num_changed == 0:
                examine_all = True

    sv = np.flatnonzero(state.alpha > 0)
    w = dual_objective_value(state.X, state.y, state.alpha, state.kernel)
    return SvmModel(
        classes=classes,
        sv_X=state.X[sv].copy(),
        sv_y=state.y[sv].copy(),
        alpha=state.alpha[sv].copy(),
        b=_final_bias(state, cfg.C, sv),
        kernel=state.kernel,
        C=cfg.C,
        dual_objective=w,
        converged=converged,
        sv_indices=sv.copy(),
        n_train=state.n,
    )


def decision_values(m: SvmModel, X) -> np.ndarray:
    """Margins f(x) for each row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if m.sv_X.size and X.shape[1] != m.arity:
        raise ShapeError(f"model expects {m.arity} features, got {X.shape[1]}")
    if len(m.alpha) == 0:
        return np.full(X.shape[0], m.b)
    K = kernel_matrix(m.kernel, m.sv_X, X)
    return (m.alpha * m.sv_y) @ K + m.b


def decision_value(m: SvmModel, x) -> float:
    features = getattr(x, "features", x)
    return float(decision_values(m, np.asarray(features, dtype=float).reshape(1, -1))[0])


def svm_predict(m: SvmModel, X):
    """Sign rule: margin >= 0 predicts the +1 (first) class."""
    f = decision_values(m, X)
    return np.where(f >= 0, m.classes[0], m.classes[1])


def kkt_report(m: SvmModel, d: Dataset, tol: float) -> dict:
    """Count violations of the three optimality cases over the training set.

    a = 0       requires y f >= 1 (within tol)
    0 < a < C   requires y f = 1 (within tol)
    a = C       requires y f <= 1 (within tol)
    """
    if d.n_rows != m.n_train:
        raise ShapeError(
            f"model was trained on {m.n_train} rows, report got {d.n_rows}"
        )
    alpha = np.zeros(d.n_rows)
    alpha[m.sv_indices] = m.alpha
    y = np.where(d.labels == m.classes[0], 1.0, -1.0)
    margins = y * decision_values(m, d.X)
    at_zero = alpha <= _SNAP
    at_c = alpha >= m.C - _SNAP
    interior = ~at_zero & ~at_c
    return {
        "alpha_zero": int(np.sum(at_zero & (margins < 1.0 - tol))),
        "alpha_interior": int(np.sum(interior & (np.abs(margins - 1.0) > tol))),
        "alpha_at_c": int(np.sum(at_c & (margins > 1.0 + tol))),
    }


# ---------------------------------------------------------------------------
# Probability calibration (sigmoid on out-of-fold margins)

def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_nll(A: float, B: float, f, t) -> float:
    """Negative log-likelihood of targets t under p = 1/(1+exp(A f + B))."""
    z = -(A * f + B)
    # log p = z - log(1+e^z) for z<0, -log(1+e^-z) otherwise
    log_p = np.where(z < 0, z - np.log1p(np.exp(np.minimum(z, 0))), -np.log1p(np.exp(-np.maximum(z, 0))))
    log_q = log_p - z  # log(1-p)
    return float(-np.sum(t * log_p + (1.0 - t) * log_q))


def fit_sigmoid(f, t, max_iter: int = 100):
    """Newton fit of (A, B) minimizing sigmoid_nll; step-halved for safety."""
    f = np.asarray(f, dtype=float)
    t = np.asarray(t, dtype=float)
    n_pos = float(np.sum(t > 0.5))
    n_neg = len(t) - n_pos
    A, B = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    nll = sigmoid_nll(A, B, f, t)
    for _ in range(max_iter):
        p = _stable_sigmoid(-(A * f + B))
        g = np.array([np.dot(t - p, f), np.sum(t - p)])
        w = np.maximum(p * (1.0 - p), 1e-12)
        H = np.array(
            [
                [np.dot(w, f * f) + 1e-12, np.dot(w, f)],
                [np.dot(w, f), np.sum(w) + 1e-12],
            ]
        )
        step = np.linalg.solve(H, g)
        if not np.all(np.isfinite(step)):
            break
        scale = 1.0
        for _ in range(30):
            cand = sigmoid_nll(A - scale * step[0], B - scale * step[1], f, t)
            if cand <= nll:
                break
            scale *= 0.5
        else:
            break
        A -= scale * step[0]
        B -= scale * step[1]
        if abs(nll - cand) < 1e-12 * max(1.0, abs(nll)):
            nll = cand
            break
        nll = cand
    return A, B


class CalibratedSvm(TrainedModel):
    """SVM wrapper emitting probabilities through a fitted sigmoid.

    Class predictions keep the SVM's own sign rule; the sigmoid only maps
    margins onto [0,1] for ranking and cost estimates.
    """

    learner = "smo"

    def __init__(self, svm: SvmModel, A: float, B: float, fallback: bool = False):
        super().__init__(svm.classes)
        self.svm = svm
        self.A = A
        self.B = B
        self.fallback = fallback
        self.arity = svm.arity

    def _proba_matrix(self, X):
        f = decision_values(self.svm, X)
        if self.fallback:
            p_pos = (f >= 0).astype(float)
        else:
            p_pos = _stable_sigmoid(-(self.A * f + self.B))
        return np.column_stack([p_pos, 1.0 - p_pos])

    def ranking_scores(self, X):
        """Margins as rank scores, one column per class.

        A steep sigmoid rounds distinct margins to identical probabilities,
        so rank metrics read the margins themselves; the sigmoid is monotone,
        making this the same ordering without the float collapse.
        """
        f = decision_values(self.svm, np.atleast_2d(np.asarray(X, dtype=float)))
        return np.column_stack([f, -f])

    def predict(self, x):
        X = np.asarray(x, dtype=float)
        if X.ndim == 1:
            return str(svm_predict(self.svm, X.reshape(1, -1))[0])
        return svm_predict(self.svm, X)


def calibrate_probability(m: SvmModel, d: Dataset, folds: int = 3) -> CalibratedSvm:
    """Fit the margin-to-probability sigmoid on out-of-fold margins.

    Each fold's margins come from a fresh solver trained on the other folds
    with the model's own settings, so the sigmoid never sees resubstitution
    margins. Datasets too small to fold fall back to hard {0,1} probabilities.
    """
    if not d.label_presence:
        raise SingleClassError("calibration needs a labeled dataset")
    cfg = SmoConfig(
        C=m.C,
        kernel=m.kernel,
        max_passes=500,
    )
    try:
        assign = stratified_folds(d.labels, folds)
    except ConfigError:
        return CalibratedSvm(m, 0.0, 0.0, fallback=True)
    margins = np.empty(d.n_rows)
    for fold in sorted(set(assign)):
        hold = assign == fold
        sub = d.subset(np.flatnonzero(~hold))
        fold_model = smo_train(sub, cfg)
        margins[hold] = decision_values(fold_model, d.X[hold])
    t_raw = (d.labels == m.classes[0]).astype(float)
    n_pos = float(np.sum(t_raw))
    n_neg = float(len(t_raw) - n_pos)
    # Soft targets keep the fit finite when the margins separate perfectly.
    t = np.where(t_raw > 0.5, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    A, B = fit_sigmoid(margins, t)
    return CalibratedSvm(m, A, B)
