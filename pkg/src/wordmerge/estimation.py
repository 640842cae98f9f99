"""Parameter estimation: multinomial and Gaussian MLE, conjugate marginals."""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .data import class_statistics

LOG_2PI = np.log(2.0 * np.pi)


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class MultinomialParams:
    p_word_given_class: np.ndarray    # C x t
    p_word: np.ndarray
    p_class: np.ndarray


@dataclass(frozen=True)
class GaussianStats:
    class_means: np.ndarray           # C x t
    class_vars: np.ndarray            # C x t
    means: np.ndarray
    vars: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True)
class NormalGammaHyper:
    """Normal-Gamma prior: mu | lam ~ N(mu0, 1/(kappa0 lam)), lam ~ Gamma(a, rate=b)."""

    mu0: float = 0.0
    kappa0: float = 1.0
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if not (self.kappa0 > 0 and self.a > 0 and self.b > 0):
            raise EstimationError(
                f"invalid Normal-Gamma hyper-parameters {self}")

    @classmethod
    def from_data(cls, values, kappa0=1.0, a=1.0, eps_var=1e-8):
        """Default prior centred on ``values`` with rate = their variance."""
        values = np.asarray(values, dtype=np.float64)
        return cls(float(values.mean()), kappa0, a, max(float(values.var()), eps_var))


@dataclass(frozen=True)
class DirichletHyper:
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if alpha.ndim != 1 or np.any(~(alpha > 0)):
            raise EstimationError("Dirichlet alpha entries must be positive")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def uniform(cls, t, value=1.0):
        return cls(np.full(t, float(value)))


def multinomial_mle(stats, smoothing=0.0):
    """Class-conditional word distributions from class bin sums.

    ``smoothing`` is added to every class sum before normalising. P(c) is
    the fraction of samples in class c.
    """
    s = stats.sums + smoothing
    totals = s.sum(axis=1)
    if np.any(totals <= 0):
        c = int(np.flatnonzero(totals <= 0)[0])
        raise EstimationError(f"class {stats.classes[c]} has zero total count")
    p_wc = s / totals[:, None]
    p_w = s.sum(axis=0) / s.sum()
    p_c = stats.counts / stats.counts.sum()
    return MultinomialParams(p_wc, p_w, p_c)


def log_beta(alpha):
    """Log of the multivariate Beta function, reduced over the last axis."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return gammaln(alpha).sum(axis=-1) - gammaln(alpha.sum(axis=-1))


def log_dirichlet_multinomial(alpha, counts):
    """log B(alpha + counts) - log B(alpha).

    The marginal probability of one ordered draw sequence with the given
    word counts under a Dirichlet(alpha) prior. Counts may be fractional.
    """
    if isinstance(alpha, DirichletHyper):
        alpha = alpha.alpha
    else:
        alpha = DirichletHyper(alpha).alpha
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != alpha.shape:
        raise EstimationError("alpha and counts must have the same length")
    if np.any(counts < 0):
        raise EstimationError("counts must be non-negative")
    return float(log_beta(alpha + counts) - log_beta(alpha))


def normal_gamma_log_marginal_stats(m, total, sumsq, hyper):
    """Closed-form Normal-Gamma evidence from sufficient statistics.

    ``m`` samples with sum ``total`` and raw sum of squares ``sumsq``;
    broadcasts over arrays. Returns log p(x_1..x_m).
    """
    m = np.asarray(m, dtype=np.float64)
    total = np.asarray(total, dtype=np.float64)
    sumsq = np.asarray(sumsq, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(m > 0, total / np.where(m > 0, m, 1.0), 0.0)
        ss = np.maximum(sumsq - total * mean, 0.0)
    return _ng_evidence(m, mean, ss, hyper)


def _ng_evidence(m, mean, ss, hyper):
    mu0, k0, a0, b0 = hyper.mu0, hyper.kappa0, hyper.a, hyper.b
    kn = k0 + m
    an = a0 + 0.5 * m
    bn = b0 + 0.5 * ss + 0.5 * k0 * m * (mean - mu0) ** 2 / kn
    return (gammaln(an) - gammaln(a0) + a0 * np.log(b0) - an * np.log(bn)
            + 0.5 * (np.log(k0) - np.log(kn)) - 0.5 * m * LOG_2PI)


def normal_gamma_log_marginal(values, hyper):
    """log of the Gaussian likelihood of ``values`` integrated against a
    Normal-Gamma prior over (mean, precision)."""
    if not isinstance(hyper, NormalGammaHyper):
        hyper = NormalGammaHyper(*hyper)
    x = np.asarray(values, dtype=np.float64).ravel()
    m = x.size
    if m == 0:
        return 0.0
    mean = x.mean()
    ss = float(((x - mean) ** 2).sum())
    return float(_ng_evidence(float(m), mean, ss, hyper))


def gaussian_mle(ds, eps_var=1e-8):
    """Per-class and pooled diagonal Gaussian MLE (variances divide by N).

    Variances below ``eps_var`` are clamped up to it.
    """
    if not eps_var > 0:
        raise EstimationError("eps_var must be positive")
    ci = ds.class_index()
    C = ds.n_classes
    cm = np.zeros((C, ds.t))
    cv = np.zeros((C, ds.t))
    for c in range(C):
        rows = ds.counts[ci == c]
        cm[c] = rows.mean(axis=0)
        cv[c] = ((rows - cm[c]) ** 2).mean(axis=0)
    mu = ds.counts.mean(axis=0)
    var = ((ds.counts - mu) ** 2).mean(axis=0)
    counts = class_statistics(ds).counts
    return GaussianStats(cm, np.maximum(cv, eps_var), mu,
                         np.maximum(var, eps_var), counts)
