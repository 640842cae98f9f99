"""Max-margin estimation of binary multinomial parameters.

A soft-margin linear SVM is trained on the histograms (dual form, over a
precomputed Gram matrix). Its weights are then read as scaled per-word
log-likelihood ratios, and class-conditional word probabilities are
recovered from them given the word marginals P(v_j).
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._smo import smo_loop
from .estimation import MultinomialParams


class ConvergenceError(RuntimeError):
    """SVM solver hit its iteration cap; ``best`` holds the last iterate."""

    def __init__(self, message, best=None, gap=None):
        super().__init__(message)
        self.best = best
        self.gap = gap


class EtaTooLargeError(ValueError):
    pass


@dataclass
class SvmSolution:
    w: np.ndarray            # None when no histograms were supplied
    b: float
    dual_coefs: np.ndarray   # alpha_i in [0, slack_penalty / 2]
    objective: float         # sum w_j^2 + slack_penalty * sum xi_i
    gap: float
    converged: bool
    n_iter: int = 0

    def decision(self, kernel_rows, labels):
        """Scores for samples whose kernel rows against training data are given."""
        return kernel_rows @ (self.dual_coefs * labels) + self.b


@dataclass
class KernelCache:
    K: np.ndarray

    @classmethod
    def from_histograms(cls, h):
        h = np.asarray(h, dtype=np.float64)
        return cls(h @ h.T)

    @property
    def n(self):
        return self.K.shape[0]


def kernel_update(kernel, h_r, h_s):
    """Gram matrix after summing columns r and s of the data matrix."""
    h_r = np.asarray(h_r, dtype=np.float64)
    h_s = np.asarray(h_s, dtype=np.float64)
    n = kernel.n
    if h_r.shape != (n,) or h_s.shape != (n,):
        raise ValueError(f"columns must have length {n}")
    outer = np.outer(h_r, h_s)
    return KernelCache(kernel.K + outer + outer.T)


def _bias(y, grad, alpha, C):
    yg = y * grad
    upper = alpha >= C
    lower = alpha <= 0
    free = ~(upper | lower)
    if free.any():
        return -float(yg[free].mean())
    ub_mask = (upper & (y < 0)) | (lower & (y > 0))
    lb_mask = (upper & (y > 0)) | (lower & (y < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    return -float(0.5 * (ub + lb))


def _subspace_step(K, y, C, alpha, grad, max_free=2000):
    """One exact line search towards the dual optimum on the current free set.

    The direction solves the equality-constrained KKT system of the free
    variables (bound variables held fixed); the step is the exact minimiser
    along it, clipped to the box. Updates ``alpha`` in place; returns True
    when the step reached the unclipped subspace optimum.
    """
    free = np.flatnonzero((alpha > 0.0) & (alpha < C))
    if free.size == 0 or free.size > max_free:
        return True
    yf = y[free]
    Qff = yf[:, None] * K[np.ix_(free, free)] * yf[None, :]
    m = free.size
    # a tiny ridge keeps the saddle system non-singular when the free set
    # outnumbers the kernel rank; -grad'd = d'(Q + mu I)d > 0 then makes d a
    # descent direction (following flat directions up to the box)
    mu = 1e-10 * max(float(np.trace(Qff)) / m, 1e-300)
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = Qff + mu * np.eye(m)
    A[:m, m] = yf
    A[m, :m] = yf
    rhs = np.concatenate([-grad[free], [0.0]])
    d = np.linalg.solve(A, rhs)[:m]
    d -= yf * (float(yf @ d) / m)
    if not np.max(np.abs(d)) > 1e-12 * C:
        return True
    # grad'd = -d'(Q + mu I)d on the solved system; the direct product
    # cancels to rounding noise near the optimum and must not set the step
    curv = float(d @ Qff @ d)
    slope = -(curv + mu * float(d @ d))
    theta = -slope / curv if curv > 0 else np.inf
    with np.errstate(divide="ignore"):
        room = np.where(d > 0, (C - alpha[free]) / d, np.where(d < 0, -alpha[free] / d, np.inf))
    theta_max = float(room.min())
    full = theta <= theta_max
    theta = min(theta, theta_max)
    if not np.isfinite(theta):
        return True
    step = theta * d
    alpha[free] = np.clip(alpha[free] + step, 0.0, C)
    if not full:
        # snap the blocking variable exactly onto its bound
        k = int(np.argmin(room))
        alpha[free[k]] = C if d[k] > 0 else 0.0
    return full


def _objectives(K, y, alpha, b, slack_penalty):
    ay = alpha * y
    f = K @ ay
    wnorm2 = max(float(ay @ f), 0.0)
    hinge = np.maximum(0.0, 1.0 - y * (f + b)).sum()
    primal = wnorm2 + slack_penalty * hinge
    dual = 2.0 * alpha.sum() - wnorm2
    return primal, dual


def solve_binary_svm(kernel, labels, slack_penalty=1.0, histograms=None,
                     tol=1e-8, max_iter=10**6, init=None):
    """Minimise sum_j w_j^2 + slack_penalty * sum_i xi_i over (w, b).

    Constraints are y_i (<h_i, w> + b) >= 1 - xi_i and xi_i >= 0; the bias
    is not regularised. ``kernel`` holds the Gram matrix of the histograms.
    Converged means primal - dual <= tol * max(1, primal). ``init`` warm
    starts from a previous dual vector.
    """
    y = np.asarray(labels, dtype=np.float64)
    K = np.ascontiguousarray(kernel.K, dtype=np.float64)
    n = y.shape[0]
    if K.shape != (n, n):
        raise ValueError("kernel and labels disagree in size")
    if not np.all(np.abs(y) == 1):
        raise ValueError("labels must be -1/+1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("single class: both labels must be present")
    if not slack_penalty > 0:
        raise ValueError("slack_penalty must be positive")
    C = 0.5 * slack_penalty

    alpha = np.zeros(n)
    if init is not None and len(init) == n:
        alpha = np.clip(np.asarray(init, dtype=np.float64), 0.0, C)
        if abs(alpha @ y) > 1e-12 * max(1.0, alpha.sum()):
            alpha = np.zeros(n)

    # SMO in bounded chunks, each followed by exact line searches on the
    # free set; SMO alone crawls on ill-conditioned, high-penalty problems
    eps = 1e-3
    used = 0
    chunk = 20 * n + 100
    while True:
        grad = y * (K @ (alpha * y)) - 1.0
        steps = smo_loop(K, y, C, alpha, grad, eps, min(chunk, max_iter - used))
        used += steps
        for _ in range(4 * n):
            grad = y * (K @ (alpha * y)) - 1.0
            if _subspace_step(K, y, C, alpha, grad):
                break
        grad = y * (K @ (alpha * y)) - 1.0
        b = _bias(y, grad, alpha, C)
        primal, dual = _objectives(K, y, alpha, b, slack_penalty)
        gap = primal - dual
        if gap <= tol * max(1.0, abs(primal)):
            converged = True
            break
        if used >= max_iter or eps < 1e-15:
            converged = False
            break
        if steps < chunk:
            eps *= 0.01

    w = None
    if histograms is not None:
        w = np.asarray(histograms, dtype=np.float64).T @ (alpha * y)
    sol = SvmSolution(w, b, alpha, primal, gap, converged, used)
    if not converged:
        raise ConvergenceError(
            f"SVM did not converge in {used} steps (gap {gap:.3e})", sol, gap)
    return sol


@dataclass
class ProbModel:
    """Binary multinomial model recovered from max-margin weights.

    Row 0 of ``params.p_word_given_class`` is class -1, row 1 class +1.
    The conditional rows need not sum to one.
    """

    params: MultinomialParams
    eta: float
    w: np.ndarray = None
    b: float = None


def _softplus(x):
    return np.logaddexp(0.0, x)


def recover_probabilities(w, b, p_word, eta):
    """Solve for P(c) and P(v_j|c) given eta*w_j and eta*b as log-ratios."""
    w = np.asarray(w, dtype=np.float64)
    p_word = np.asarray(p_word, dtype=np.float64)
    if not eta > 0:
        raise ValueError("eta must be positive")
    if p_word.shape != w.shape:
        raise ValueError("w and p_word must have the same length")
    eb = eta * b
    ew = eta * w
    base = _softplus(eb) - _softplus(eb + ew)
    p_neg = p_word * np.exp(base)
    p_pos = p_word * np.exp(base + ew)
    if np.any(p_neg > 1.0) or np.any(p_pos > 1.0):
        raise EtaTooLargeError(
            f"eta too large: recovered P(v|c) exceeds 1 at eta={eta:g}")
    p_class = np.array([expit(-eb), expit(eb)])
    params = MultinomialParams(np.vstack([p_neg, p_pos]), p_word.copy(), p_class)
    return ProbModel(params, float(eta), w.copy(), float(b))


def check_prob_model(model):
    """Largest violation of each recovery identity (all should be ~0)."""
    p = model.params
    p_neg, p_pos = p.p_word_given_class
    with np.errstate(divide="ignore", invalid="ignore"):
        nz = p.p_word > 0
        log_ratio = np.log(p_pos[nz]) - np.log(p_neg[nz])
        out = {
            "word_log_ratio": float(np.max(np.abs(model.eta * model.w[nz] - log_ratio), initial=0.0)),
            "class_log_ratio": abs(model.eta * model.b
                                   - float(np.log(p.p_class[1]) - np.log(p.p_class[0]))),
        }
    mix = p_neg * p.p_class[0] + p_pos * p.p_class[1]
    out["marginal_mixture"] = float(np.max(np.abs(mix - p.p_word)))
    out["class_prior_sum"] = abs(float(p.p_class.sum()) - 1.0)
    probs = np.concatenate([p.p_word_given_class.ravel(), p.p_class])
    out["out_of_range"] = float(max(0.0, -probs.min(), probs.max() - 1.0))
    return out


def mme_pair_costs(model, joint, rs, ss):
    """Vectorised information-loss cost for index arrays ``rs``, ``ss``.

    ``joint[c, j]`` is the (empirical) joint P(v_j, c); log-ratios come from
    the model. Pairs touching a word with P(v_j) = 0 cost exactly 0.

    The per-word terms log(P(v|c)/P(v)) - log(P(v'|c)/P(v')) are formed from
    eta*w and eta*b directly (log1p/expm1), not as differences of logs of the
    recovered probabilities; for small eta the cost is a near-cancelling sum
    of O(eta) terms and the naive form loses most of its digits.
    """
    p = model.params
    rs = np.asarray(rs)
    ss = np.asarray(ss)
    pw = p.p_word
    zero = (pw[rs] <= 0) | (pw[ss] <= 0)
    eb = model.eta * model.b
    ew = model.eta * model.w
    dw = ew[ss] - ew[rs]
    # log-ratio of word s minus word r: class -1 row, then class +1 row
    d_neg = -np.log1p(expit(eb + ew[rs]) * np.expm1(dw))
    d = np.vstack([d_neg, d_neg + dw])
    with np.errstate(divide="ignore", invalid="ignore"):
        pi_r = pw[rs] / (pw[rs] + pw[ss])
        pi_s = pw[ss] / (pw[rs] + pw[ss])
        jr = joint[:, rs]
        js = joint[:, ss]
        tr = np.where(jr > 0, -jr * np.log1p(pi_s * np.expm1(d)), 0.0)
        ts = np.where(js > 0, -js * np.log1p(pi_r * np.expm1(-d)), 0.0)
        cost = (tr + ts).sum(axis=0)
    return np.where(zero, 0.0, cost)


def mme_pair_cost(model, joint, r, s):
    """Loss in sum_c sum_j P(v_j,c) log(P(v_j|c)/P(v_j)) from merging r and s,
    with the merged word's probabilities obtained by summation."""
    if r == s:
        raise ValueError("r and s must differ")
    return float(mme_pair_costs(model, np.asarray(joint, dtype=np.float64),
                                [r], [s])[0])


def taylor_residual(w, b, p_word, r, s, eta, *, joint, eta_ref=1e-6):
    """Cost of merging (r, s) at ``eta`` and its distance from the linear
    extrapolation eta * cost(eta_ref) / eta_ref."""
    cost = mme_pair_cost(recover_probabilities(w, b, p_word, eta), joint, r, s)
    slope = mme_pair_cost(recover_probabilities(w, b, p_word, eta_ref),
                          joint, r, s) / eta_ref
    return cost, abs(cost - eta * slope)
