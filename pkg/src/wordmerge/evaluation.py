"""Synthetic data and classification-vs-codebook-size evaluation."""

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .config import CriterionConfig
from .data import DatasetError, HistogramDataset, WordMap, apply_merge_map, preprocess
from .engine import EngineConfig, MergeAborted, build_merge_tree, cut_tree
from .maxmargin import KernelCache, solve_binary_svm

log = logging.getLogger(__name__)

REPORT_FIELDS = ("criterion", "k", "seed", "accuracy", "ap", "eer", "runtime_ms")


@dataclass
class SynthConfig:
    """Two-class multinomial word-count generator.

    ``t_disc`` words get class log-odds drawn uniformly from
    [-log class_skew, log class_skew]; ``t_noise`` words are shared. In
    ``block`` mode tokens arrive in runs of ``block_size`` that stay on a
    word or its index neighbours, so counts of nearby words co-vary.
    """

    n_per_class: int = 100
    t_disc: int = 16
    t_noise: int = 48
    counts_per_sample: int = 200
    class_skew: float = 4.0
    correlation_mode: str = "iid"
    block_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.t_disc + self.t_noise < 2:
            raise ValueError("need at least two words")
        if min(self.n_per_class, self.counts_per_sample) <= 0 or self.class_skew < 1:
            raise ValueError("counts must be positive and class_skew >= 1")
        if self.correlation_mode not in ("iid", "block"):
            raise ValueError(f"unknown correlation_mode {self.correlation_mode!r}")


def _class_distributions(cfg, rng):
    t = cfg.t_disc + cfg.t_noise
    base = rng.gamma(2.0, 1.0, t)
    log_odds = np.zeros(t)
    if cfg.t_disc:
        s = np.log(cfg.class_skew)
        log_odds[:cfg.t_disc] = rng.uniform(-s, s, cfg.t_disc)
    perm = rng.permutation(t)
    base, log_odds = base[perm], log_odds[perm]
    dists = np.vstack([base * np.exp(-0.5 * log_odds), base * np.exp(0.5 * log_odds)])
    return dists / dists.sum(axis=1, keepdims=True)


def _draw(cfg, dists, rng):
    t = dists.shape[1]
    rows, labels = [], []
    for c, p in enumerate(dists):
        for _ in range(cfg.n_per_class):
            if cfg.correlation_mode == "iid":
                h = rng.multinomial(cfg.counts_per_sample, p)
            else:
                n_blocks = -(-cfg.counts_per_sample // cfg.block_size)
                centers = rng.choice(t, size=n_blocks, p=p)
                shift = rng.integers(-1, 2, size=(n_blocks, cfg.block_size))
                shift[rng.random((n_blocks, cfg.block_size)) < 0.5] = 0
                words = ((centers[:, None] + shift) % t).ravel()[:cfg.counts_per_sample]
                h = np.bincount(words, minlength=t)
            rows.append(h)
            labels.append(c + 1)
    return HistogramDataset(np.array(rows, dtype=np.float64), np.array(labels))


def gen_synthetic(cfg):
    """One dataset of ``n_per_class`` samples per class, labels 1 and 2."""
    rng = np.random.default_rng(cfg.seed)
    return _draw(cfg, _class_distributions(cfg, rng), rng)


def gen_train_test(cfg):
    """Train and test sets drawn from the same class distributions."""
    rng = np.random.default_rng(cfg.seed)
    dists = _class_distributions(cfg, rng)
    return _draw(cfg, dists, rng), _draw(cfg, dists, rng)


def eer(scores, labels):
    """Equal error rate of a detector with scores (higher = positive).

    Walks the ROC over distinct thresholds and interpolates linearly
    between the two points where FPR - FNR changes sign.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) > 0
    n_pos, n_neg = pos.sum(), (~pos).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("single class: EER needs both labels")
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], pos[order]
    last = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(p)[last]
    fp = np.cumsum(~p)[last]
    fpr = np.r_[0.0, fp / n_neg]
    fnr = np.r_[1.0, 1.0 - tp / n_pos]
    d = fpr - fnr
    k = int(np.flatnonzero(d >= 0)[0])
    if d[k] == 0:
        return float(fpr[k])
    # crossing between point k-1 (d<0) and k (d>0)
    a = -d[k - 1] / (d[k] - d[k - 1])
    return float(fpr[k - 1] + a * (fpr[k] - fpr[k - 1]))


def average_precision(scores, labels):
    """Area under the precision-recall curve; tied scores form one step."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) > 0
    n_pos = pos.sum()
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], pos[order]
    last = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(p)[last]
    seen = np.cumsum(np.ones_like(s))[last]
    recall_step = np.diff(np.r_[0, tp]) / n_pos
    return float((recall_step * tp / seen).sum())


def _centroid_scores(train, test):
    y = train.binary_labels()
    mu_pos = train.counts[y > 0].mean(axis=0)
    mu_neg = train.counts[y < 0].mean(axis=0)
    w = mu_pos - mu_neg
    b = -0.5 * (mu_pos + mu_neg) @ w
    return test.counts @ w + b


def decision_scores(train, test, word_map=None, slack_penalty=10.0, sqrt=False,
                    classifier="svm"):
    """Scores of ``test`` under a linear classifier trained on ``train``,
    both merged through ``word_map`` first."""
    if word_map is None:
        word_map = WordMap.identity(train.t)
    if train.t != test.t:
        raise DatasetError("train and test have different numbers of bins")
    train = apply_merge_map(train, word_map)
    test = apply_merge_map(test, word_map)
    if sqrt:
        train, test = preprocess(train, sqrt=True), preprocess(test, sqrt=True)
    if classifier == "centroid":
        return _centroid_scores(train, test)
    if classifier != "svm":
        raise ValueError(f"unknown classifier {classifier!r}")
    y = train.binary_labels()
    sol = solve_binary_svm(KernelCache.from_histograms(train.counts), y, slack_penalty,
                           histograms=train.counts)
    return test.counts @ sol.w + sol.b


def _test_labels(train, test):
    classes = train.classes
    if not np.all(np.isin(test.labels, classes)):
        raise DatasetError("test set has classes not seen in training")
    return np.where(test.labels == classes[1], 1.0, -1.0)


def evaluate(train, test, word_map=None, **kwargs):
    """(accuracy at the sign threshold, average precision) on ``test``."""
    scores = decision_scores(train, test, word_map, **kwargs)
    y = _test_labels(train, test)
    pred = np.where(scores >= 0, 1.0, -1.0)
    return float(np.mean(pred == y)), average_precision(scores, y)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def summary(self):
        """Mean and standard deviation of each metric per (criterion, k)."""
        groups = {}
        for row in self.rows:
            groups.setdefault((row["criterion"], row["k"]), []).append(row)
        out = {}
        for (crit, k), rows in sorted(groups.items()):
            entry = {"criterion": crit, "k": k, "n": len(rows)}
            for key in ("accuracy", "ap", "eer", "runtime_ms"):
                vals = np.array([r[key] for r in rows], dtype=np.float64)
                entry[key + "_mean"] = float(np.nanmean(vals)) if vals.size else float("nan")
                entry[key + "_std"] = float(np.nanstd(vals)) if vals.size else float("nan")
            out[f"{crit}@{k}"] = entry
        return out

    def mean(self, criterion, k, metric="accuracy"):
        return self.summary()[f"{criterion}@{k}"][metric + "_mean"]

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({key: (repr(row[key]) if isinstance(row[key], float) else row[key])
                             for key in REPORT_FIELDS})
        return buf.getvalue()

    def to_json(self):
        return json.dumps({"config": self.config, "summary": self.summary(),
                           "errors": self.errors}, indent=2, sort_keys=True) + "\n"


BASELINE = "random"


def _bench_seed(args):
    (train, test, criteria, sizes, seed, synth, normalize, engine_kw, eval_kw,
     crit_cfg) = args
    if synth is not None:
        train, test = gen_train_test(replace(synth, seed=seed))
    if normalize:
        train, test = preprocess(train, normalize=True), preprocess(test, normalize=True)
    y = _test_labels(train, test)
    rows, errors = [], []
    min_size = max(1, min(sizes))
    for crit in list(criteria) + [BASELINE]:
        cfg = replace(crit_cfg, seed=seed)
        start = time.perf_counter()
        err = None
        try:
            tree = build_merge_tree(train, EngineConfig(criterion=crit, min_size=min(min_size, train.t - 1),
                                                        criterion_config=cfg, **engine_kw))
        except MergeAborted as e:
            tree, err = e.tree, str(e)
            errors.append({"criterion": crit, "seed": seed, "error": err})
        build_ms = 1000.0 * (time.perf_counter() - start)
        for k in sizes:
            row = {"criterion": crit, "k": k, "seed": seed}
            try:
                t0 = time.perf_counter()
                wm = cut_tree(tree, k)
                scores = decision_scores(train, test, wm, **eval_kw)
                acc = float(np.mean(np.where(scores >= 0, 1.0, -1.0) == y))
                row.update(accuracy=acc, ap=average_precision(scores, y), eer=eer(scores, y),
                           runtime_ms=build_ms + 1000.0 * (time.perf_counter() - t0))
            except Exception as e:   # per-cell failure; keep going
                row.update(accuracy=float("nan"), ap=float("nan"), eer=float("nan"),
                           runtime_ms=build_ms)
                errors.append({"criterion": crit, "k": k, "seed": seed, "error": str(e)})
            rows.append(row)
    return rows, errors


def bench(train, test, criteria, sizes, seeds, *, synth=None, normalize=True,
          policy="lazy_heap", criterion_config=None, slack_penalty=10.0, sqrt=False,
          classifier="svm", threads=1):
    """Accuracy / AP / EER for every (criterion, k, seed), plus a random-merging
    baseline.

    With ``synth`` set, each seed draws its own train/test pair and ``train``/
    ``test`` are ignored; otherwise seeds only drive the baseline.
    ``runtime_ms`` is tree construction plus evaluation at that size.
    """
    if synth is None and (train is None or test is None):
        raise ValueError("need train/test datasets or a synth config")
    crit_cfg = criterion_config or CriterionConfig()
    eval_kw = dict(slack_penalty=slack_penalty, sqrt=sqrt, classifier=classifier)
    jobs = [(train, test, tuple(criteria), tuple(sizes), seed, synth, normalize,
             {"policy": policy}, eval_kw, crit_cfg) for seed in seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_bench_seed, jobs))
    else:
        results = [_bench_seed(job) for job in jobs]
    report = EvalReport(config={
        "criteria": list(criteria), "sizes": list(sizes), "seeds": list(seeds),
        "normalize": normalize, "policy": policy, "slack_penalty": slack_penalty,
        "sqrt": sqrt, "classifier": classifier, "criterion_config": crit_cfg.to_dict(),
        "synth": asdict(synth) if synth is not None else None})
    for rows, errors in results:
        report.rows.extend(rows)
        report.errors.extend(errors)
    order = {c: i for i, c in enumerate(list(criteria) + [BASELINE])}
    report.rows.sort(key=lambda r: (order[r["criterion"]], r["k"], r["seed"]))
    return report
