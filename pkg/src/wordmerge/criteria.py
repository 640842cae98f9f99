"""Merging criteria behind one interface.

Every criterion turns the current histograms into a loss for merging each
live pair of words; the engine merges the smallest. States are indexed by
merge-tree node id externally and by storage slot internally: a merged node
reuses the slot of its smaller child.
"""

import numpy as np
from scipy.special import gammaln

from .config import CriterionConfig
from .data import ClassStats, DatasetError
from .estimation import NormalGammaHyper, multinomial_mle, normal_gamma_log_marginal_stats
from .maxmargin import (EtaTooLargeError, KernelCache, kernel_update, mme_pair_costs,
                        recover_probabilities, solve_binary_svm)


class CriterionError(RuntimeError):
    pass


class DegenerateScatterError(CriterionError):
    pass


def _xlogy_ratio(x, y):
    """x * log(x / y) with 0 log 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * (np.log(x) - np.log(y)), 0.0)


class CriterionState:
    """Sufficient statistics for one criterion at the current level.

    Subclasses implement ``_raw_losses`` (vectorised over slot arrays) and
    extend ``_merge_slots``. ``decomposable`` states promise that merging
    (r, s) leaves the loss of every pair disjoint from {r, s} unchanged.
    """

    kind = None
    decomposable = True
    needs_gram = False

    def __init__(self, ds, cfg=None):
        self.cfg = cfg if cfg is not None else CriterionConfig()
        self.t0 = ds.t
        self.n = ds.n
        ci = ds.class_index()
        self.n_classes = ds.n_classes
        self.class_counts = np.bincount(ci, minlength=self.n_classes).astype(np.float64)
        h = ds.counts
        onehot = np.zeros((self.n_classes, ds.n))
        onehot[ci, np.arange(ds.n)] = 1.0
        self.sums = onehot @ h                       # C x slots
        if self.needs_gram:
            self.gram = np.stack([h[ci == c].T @ h[ci == c]
                                  for c in range(self.n_classes)])
        self.slot_of = {int(node): j for j, node in enumerate(ds.word_ids)}
        self.node_at = {j: int(node) for j, node in enumerate(ds.word_ids)}
        self.next_id = int(ds.word_ids.max()) + 1

    # -- bookkeeping -------------------------------------------------------
    @property
    def live(self):
        """Live node ids in increasing order."""
        return sorted(self.slot_of)

    def is_live(self, node):
        return node in self.slot_of

    def zero_slots(self):
        return self.sums.sum(axis=0) == 0

    def pair_losses(self, ra, sa):
        """Losses for slot index arrays; pairs touching a zero-total word are 0."""
        ra = np.asarray(ra, dtype=np.intp)
        sa = np.asarray(sa, dtype=np.intp)
        zero = self.zero_slots()
        losses = np.asarray(self._raw_losses(ra, sa), dtype=np.float64)
        return np.where(zero[ra] | zero[sa], 0.0, losses)

    def loss(self, r, s):
        """Loss of merging live nodes ``r`` and ``s`` (order irrelevant)."""
        r, s = min(r, s), max(r, s)
        if r == s:
            raise ValueError("cannot merge a node with itself")
        for node in (r, s):
            if node not in self.slot_of:
                raise CriterionError(f"node {node} is not live")
        return float(self.pair_losses([self.slot_of[r]], [self.slot_of[s]])[0])

    def merge(self, r, s, new_id=None):
        """Merge live nodes r < s into ``new_id`` (default: next unused id)."""
        if new_id is None:
            new_id = self.next_id
        if not r < s:
            raise ValueError("expected r < s")
        for node in (r, s):
            if node not in self.slot_of:
                raise CriterionError(f"cannot merge dead node {node}")
        i = self.slot_of.pop(r)
        j = self.slot_of.pop(s)
        del self.node_at[i], self.node_at[j]
        self._merge_slots(i, j)
        self.slot_of[new_id] = i
        self.node_at[i] = new_id
        self.next_id = max(self.next_id, new_id + 1)
        self._after_merge()
        return self

    def _merge_slots(self, i, j):
        self.sums[:, i] += self.sums[:, j]
        self.sums[:, j] = 0.0
        if self.needs_gram:
            g = self.gram
            g[:, i, :] += g[:, j, :]
            g[:, :, i] += g[:, :, j]
            g[:, j, :] = 0.0
            g[:, :, j] = 0.0

    def _after_merge(self):
        pass

    def _raw_losses(self, ra, sa):
        raise NotImplementedError

    # moment helpers for Gaussian-type criteria
    def _class_sq(self, ra, sa=None):
        """Per-class sum of squares of slot ``ra`` (or of the sum of ra and sa)."""
        g = self.gram
        if sa is None:
            return g[:, ra, ra]
        return g[:, ra, ra] + g[:, sa, sa] + 2.0 * g[:, ra, sa]


class AIBState(CriterionState):
    """Mutual-information loss between words and class labels."""

    kind = "aib"

    def __init__(self, ds, cfg=None):
        super().__init__(ds, cfg)
        self.mean_mode = self.cfg.aib_mean_mode
        self.total = float(self._weights().sum())

    def _weights(self):
        if self.mean_mode:
            return self.sums / self.class_counts[:, None]
        return self.sums

    def joint(self):
        """P(v_j, c) as a C x slots table."""
        return self._weights() / self.total

    def _raw_losses(self, ra, sa):
        p = self.joint()
        pr, ps = p[:, ra], p[:, sa]
        mr, ms = pr.sum(axis=0), ps.sum(axis=0)
        loss = (_xlogy_ratio(pr, mr) + _xlogy_ratio(ps, ms)
                - _xlogy_ratio(pr + ps, mr + ms))
        return loss.sum(axis=0)


class CSMState(CriterionState):
    """Trace ratio tr(S_w) / tr(S_t) of the histograms after the merge."""

    kind = "csm"
    decomposable = False
    needs_gram = True

    def _scatter(self, sums, sq):
        # sums: C x m, sq: C x m -> per-dimension within and total scatter
        within = sq.sum(axis=0) - (sums ** 2 / self.class_counts[:, None]).sum(axis=0)
        total = sq.sum(axis=0) - sums.sum(axis=0) ** 2 / self.n
        return within, total

    def _raw_losses(self, ra, sa):
        live = np.fromiter(self.slot_of.values(), dtype=np.intp)
        w_all, t_all = self._scatter(self.sums[:, live], self._class_sq(live))
        W, T = w_all.sum(), t_all.sum()
        wr, tr = self._scatter(self.sums[:, ra], self._class_sq(ra))
        ws, ts = self._scatter(self.sums[:, sa], self._class_sq(sa))
        wm, tm = self._scatter(self.sums[:, ra] + self.sums[:, sa], self._class_sq(ra, sa))
        num = W - wr - ws + wm
        den = T - tr - ts + tm
        scale = max(1.0, float(self._class_sq(live).sum()))
        zero = self.zero_slots()
        bad = (den <= 1e-14 * scale) & ~(zero[ra] | zero[sa])
        if np.any(bad):
            raise DegenerateScatterError("degenerate scatter: tr(S_t) = 0 after merge")
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den > 0, num / den, 0.0)


class UVDState(CriterionState):
    """Per-bin Gaussian evidence under a shared Normal-Gamma prior."""

    kind = "uvd"
    needs_gram = True

    def __init__(self, ds, cfg=None):
        super().__init__(ds, cfg)
        c = self.cfg
        values = ds.counts
        mu0 = float(values.mean()) if c.ng_mu0 is None else c.ng_mu0
        b = max(float(values.var()), c.eps_var) if c.ng_b is None else c.ng_b
        self.hyper = NormalGammaHyper(mu0, c.ng_kappa0, c.ng_a, b)

    def _bin_score(self, sums, sq):
        nc = self.class_counts[:, None]
        per_class = normal_gamma_log_marginal_stats(nc, sums, sq, self.hyper).sum(axis=0)
        pooled = normal_gamma_log_marginal_stats(self.n, sums.sum(axis=0),
                                                 sq.sum(axis=0), self.hyper)
        return per_class - pooled

    def _raw_losses(self, ra, sa):
        jr = self._bin_score(self.sums[:, ra], self._class_sq(ra))
        js = self._bin_score(self.sums[:, sa], self._class_sq(sa))
        jm = self._bin_score(self.sums[:, ra] + self.sums[:, sa], self._class_sq(ra, sa))
        return jr + js - jm


class MLTState(CriterionState):
    """Dirichlet-multinomial evidence ratio of true labels vs one class."""

    kind = "mlt"

    def __init__(self, ds, cfg=None):
        super().__init__(ds, cfg)
        self.alpha = np.full(ds.t, float(self.cfg.mlt_alpha))
        self.keep_uniform = self.cfg.alpha_keep_uniform
        # with keep_uniform every merge shifts all losses by the same amount
        self.decomposable = not self.keep_uniform
        self.class_totals = self.sums.sum(axis=1)

    def _phi(self, alpha, sums):
        C = self.n_classes
        return (gammaln(alpha + sums).sum(axis=0) - gammaln(alpha + sums.sum(axis=0))
                - (C - 1) * gammaln(alpha))

    def _psi(self, A):
        C = self.n_classes
        return (-gammaln(A + self.class_totals).sum() + gammaln(A + self.class_totals.sum())
                + (C - 1) * gammaln(A))

    def merged_alpha(self, ar, as_):
        return np.full_like(ar, self.cfg.mlt_alpha) if self.keep_uniform else ar + as_

    def _raw_losses(self, ra, sa):
        ar, as_ = self.alpha[ra], self.alpha[sa]
        am = self.merged_alpha(ar, as_)
        sr, ss = self.sums[:, ra], self.sums[:, sa]
        loss = self._phi(ar, sr) + self._phi(as_, ss) - self._phi(am, sr + ss)
        if self.keep_uniform:
            live = np.fromiter(self.slot_of.values(), dtype=np.intp)
            A = self.alpha[live].sum()
            loss = loss + self._psi(A) - self._psi(A - ar - as_ + am)
        return loss

    def _merge_slots(self, i, j):
        self.alpha[i] = self.merged_alpha(self.alpha[i:i + 1], self.alpha[j:j + 1])[0]
        super()._merge_slots(i, j)


class GMLEState(CriterionState):
    """Plug-in diagonal Gaussian log-likelihood ratio, per dimension.

    Keeps centred cross-product matrices (per class, plus one pooled layer)
    rather than raw ones: a merged column's centred values are the sum of its
    parts' centred values, so they merge the same way, and variances come
    straight off the diagonal without the cancellation of E[x^2] - E[x]^2.
    """

    kind = "gmle"
    needs_gram = True

    def __init__(self, ds, cfg=None):
        super().__init__(ds, cfg)
        ci = ds.class_index()
        h = ds.counts
        layers = [h[ci == c] - h[ci == c].mean(axis=0) for c in range(self.n_classes)]
        layers.append(h - h.mean(axis=0))
        self.gram = np.stack([x.T @ x for x in layers])

    def _bin_score(self, css):
        eps = self.cfg.eps_var
        nc = self.class_counts[:, None]
        vc = np.maximum(css[:-1] / nc, eps)
        v = np.maximum(css[-1] / self.n, eps)
        return 0.5 * (self.n * np.log(v) - (nc * np.log(vc)).sum(axis=0))

    def _raw_losses(self, ra, sa):
        jr = self._bin_score(self._class_sq(ra))
        js = self._bin_score(self._class_sq(sa))
        jm = self._bin_score(self._class_sq(ra, sa))
        return jr + js - jm


class MMEState(CriterionState):
    """Information loss under max-margin estimated multinomial parameters.

    Parameters are re-estimated once per level, so every cached loss goes
    stale after a merge.
    """

    kind = "mme"
    decomposable = False
    max_halvings = 10

    def __init__(self, ds, cfg=None):
        super().__init__(ds, cfg)
        if ds.n_classes != 2:
            raise CriterionError(f"MME is binary-only (got {ds.n_classes} classes)")
        self.y = ds.binary_labels()
        self.h = ds.counts.copy()
        self.kernel = KernelCache.from_histograms(self.h)
        self.total = float(self.sums.sum())
        self.svm = None
        self._model = None
        self._estimate()

    @property
    def model(self):
        """ProbModel for the current level, estimated on first use."""
        if self._model is None:
            self._estimate()
        return self._model

    def _estimate(self):
        c = self.cfg
        live = np.array(self.live_slots(), dtype=np.intp)
        init = None if self.svm is None else self.svm.dual_coefs
        self.svm = solve_binary_svm(self.kernel, self.y, c.mme_slack_penalty,
                                    histograms=self.h[:, live], tol=c.mme_tol,
                                    max_iter=c.mme_max_iter, init=init)
        stats = ClassStats(np.array([-1, 1]), self.sums[:, live], self.class_counts,
                           np.zeros_like(self.sums[:, live]))
        p_word = multinomial_mle(stats, c.smoothing).p_word
        eta = c.mme_eta
        for _ in range(self.max_halvings + 1):
            try:
                self._model = recover_probabilities(self.svm.w, self.svm.b, p_word, eta)
                break
            except EtaTooLargeError:
                eta *= 0.5
        else:
            raise EtaTooLargeError(
                f"eta too large even after {self.max_halvings} halvings")
        self.pos = np.full(self.sums.shape[1], -1, dtype=np.intp)
        self.pos[live] = np.arange(live.size)
        self.joint_live = self.sums[:, live] / self.total

    def live_slots(self):
        return [self.slot_of[node] for node in self.live]

    def _raw_losses(self, ra, sa):
        model = self.model
        return mme_pair_costs(model, self.joint_live, self.pos[ra], self.pos[sa])

    def _merge_slots(self, i, j):
        self.kernel = kernel_update(self.kernel, self.h[:, i], self.h[:, j])
        self.h[:, i] += self.h[:, j]
        self.h[:, j] = 0.0
        super()._merge_slots(i, j)

    def _after_merge(self):
        self._model = None


class RandomState(CriterionState):
    """Uniformly random pair choice: fresh i.i.d. losses at every level."""

    kind = "random"
    decomposable = False

    def __init__(self, ds, cfg=None):
        super().__init__(ds, cfg)
        self.rng = np.random.default_rng(self.cfg.seed)

    def pair_losses(self, ra, sa):
        return self.rng.random(len(ra))


STATES = {cls.kind: cls for cls in
          (AIBState, CSMState, UVDState, MLTState, GMLEState, MMEState, RandomState)}


def make_state(kind, ds, cfg=None):
    try:
        cls = STATES[kind]
    except KeyError:
        raise ValueError(f"unknown criterion {kind!r}") from None
    if ds.t < 2:
        raise DatasetError("need at least two words")
    return cls(ds, cfg)


def _checked(state, kind):
    if state.kind != kind:
        raise TypeError(f"expected a {kind} state, got {state.kind}")
    return state


def pair_loss_aib(state, r, s):
    return _checked(state, "aib").loss(r, s)


def pair_loss_csm(state, r, s):
    return _checked(state, "csm").loss(r, s)


def pair_loss_uvd(state, r, s):
    return _checked(state, "uvd").loss(r, s)


def pair_loss_mlt(state, r, s):
    return _checked(state, "mlt").loss(r, s)


def pair_loss_gmle(state, r, s):
    return _checked(state, "gmle").loss(r, s)


def pair_loss_mme(state, r, s):
    return _checked(state, "mme").loss(r, s)


def apply_merge(state, r, s, new_id=None):
    return state.merge(r, s, new_id)
