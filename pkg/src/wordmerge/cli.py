"""Command-line entry point: ``wordmerge <subcommand> ...``.

Exit status is 0 on success, 1 for usage errors (bad flags, missing
files, out-of-range arguments) and 2 when a computation fails.

Settings resolve as: explicit flag > ``--set key=value`` > ``--config``
JSON file > built-in default. Nested JSON objects flatten to dotted keys,
so ``{"mme": {"eta": 0.1}}`` and ``{"mme.eta": 0.1}`` are equivalent. The
effective settings are echoed under ``"config"`` in every JSON output.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import CRITERIA, CriterionConfig, KEY_ALIASES
from .data import (MergeTree, WordMap, apply_merge_map, dataset_to_csv, load_dataset,
                   preprocess)
from .engine import POLICIES, EngineConfig, MergeAborted, build_merge_tree, cut_tree
from .evaluation import (SynthConfig, average_precision, bench, decision_scores, eer,
                         gen_synthetic, gen_train_test, _test_labels)
from .maxmargin import (KernelCache, check_prob_model, mme_pair_costs, recover_probabilities,
                        solve_binary_svm, taylor_residual)

log = logging.getLogger("wordmerge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- settings

_CRIT_DEFAULTS = CriterionConfig().to_dict()
_SYNTH_DEFAULTS = {f"synth.{k}": v for k, v in asdict(SynthConfig()).items()}

DEFAULTS = {
    "merge": {"criterion": "aib", "min_size": 1, "policy": "lazy_heap",
              "normalize": False, "sqrt": False, **_CRIT_DEFAULTS},
    "eval": {"normalize": False, "sqrt": False, "classifier": "svm", "slack_penalty": 10.0},
    "synth": {k: v for k, v in _SYNTH_DEFAULTS.items()},
    "bench": {"criteria": list(CRITERIA), "sizes": [8, 16, 32, 64, 128], "seeds": [0],
              "policy": "lazy_heap", "normalize": True, "sqrt": False, "classifier": "svm",
              "slack_penalty": 10.0, **_SYNTH_DEFAULTS, **_CRIT_DEFAULTS},
    "diag": {"normalize": False, "sqrt": False, "mme.eta": 0.01, "mme.slack_penalty": 1.0,
             "mme.tol": 1e-8, "mme.max_iter": 10**6, "eta_ref": 1e-6},
}

_CANON = {alias: key for key in _CRIT_DEFAULTS
          for alias, attr in KEY_ALIASES.items() if attr == KEY_ALIASES[key]}


def _flatten(d, prefix=""):
    out = {}
    for key, value in d.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _canonical(key, known):
    key = _CANON.get(key, key)
    if key not in known:
        raise UsageError(f"unknown config key {key!r}")
    return key


def _parse_value(text, default):
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"bad boolean {text!r}")
    if isinstance(default, list):
        return _parse_list(text)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    return value


def _parse_list(text):
    if isinstance(text, list):
        return text
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:] and part.lstrip("-").replace("-", "").isdigit():
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            try:
                out.append(int(part))
            except ValueError:
                out.append(part)
    return out


def _settings(cmd, args, flag_keys):
    """Merge defaults, config file, --set overrides and explicit flags."""
    known = DEFAULTS[cmd]
    eff = dict(known)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            blob = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise UsageError(f"{path}: invalid JSON: {e}") from None
        if not isinstance(blob, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        for key, value in _flatten(blob).items():
            eff[_canonical(key, known)] = value
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        key = _canonical(key.strip(), known)
        eff[key] = _parse_value(text, known[key])
    for dest, key in flag_keys.items():
        value = getattr(args, dest, None)
        if value is not None:
            eff[key] = value
    if "seed" in eff and getattr(args, "seed", None) is not None:
        eff["seed"] = args.seed
    return eff


def _criterion_config(eff):
    try:
        return CriterionConfig.from_dict({k: v for k, v in eff.items() if k in _CRIT_DEFAULTS})
    except (KeyError, ValueError) as e:
        raise UsageError(f"bad criterion setting: {e}") from None


def _need_file(path, what):
    if path is None:
        raise UsageError(f"missing required --{what}")
    if not Path(path).is_file():
        raise UsageError(f"{what} file not found: {path}")
    return path


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load(path, normalize=False, sqrt=False):
    ds = load_dataset(path)
    if normalize or sqrt:
        ds = preprocess(ds, normalize=normalize, sqrt=sqrt)
    return ds


# ---------------------------------------------------------------- commands

def cmd_merge(args):
    eff = _settings("merge", args, {"criterion": "criterion", "min_size": "min_size",
                                    "policy": "policy", "normalize": "normalize",
                                    "sqrt": "sqrt"})
    if eff["criterion"] not in CRITERIA + ("random",):
        raise UsageError(f"unknown criterion {eff['criterion']!r}")
    if eff["policy"] not in POLICIES:
        raise UsageError(f"unknown policy {eff['policy']!r}")
    ds = _load(_need_file(args.input, "in"), eff["normalize"], eff["sqrt"])
    if not 1 <= int(eff["min_size"]) < ds.t:
        raise UsageError(f"min_size must be in [1, {ds.t - 1}]")
    cfg = EngineConfig(criterion=eff["criterion"], min_size=int(eff["min_size"]),
                       policy=eff["policy"], criterion_config=_criterion_config(eff))
    losses_path = args.losses or str(Path(args.out).with_suffix("")) + ".losses.csv"
    try:
        tree = build_merge_tree(ds, cfg)
    except MergeAborted as e:
        _write(args.out, e.tree.to_json({"config": eff, "aborted": str(e)}))
        _write(losses_path, e.tree.loss_csv())
        raise
    _write(args.out, tree.to_json({"config": eff}))
    _write(losses_path, tree.loss_csv())
    return 0


def cmd_cut(args):
    text = Path(_need_file(args.tree, "tree")).read_text(encoding="utf-8")
    try:
        tree = MergeTree.from_json(text)
    except (ValueError, KeyError, TypeError) as e:
        raise RuntimeError(f"invalid merge tree: {e}") from e
    if not tree.min_size <= args.k <= tree.initial_size:
        raise UsageError(f"k out of range: need {tree.min_size} <= k <= "
                         f"{tree.initial_size}, got {args.k}")
    wm = cut_tree(tree, args.k)
    _write(args.out, _dump({**wm.to_dict(), "config": {"k": args.k}}))
    return 0


def cmd_apply(args):
    ds = _load(_need_file(args.input, "in"), args.normalize, args.sqrt)
    wm = WordMap.from_dict(json.loads(Path(_need_file(args.map, "map")).read_text()))
    _write(args.out, dataset_to_csv(apply_merge_map(ds, wm)))
    return 0


def cmd_eval(args):
    eff = _settings("eval", args, {"normalize": "normalize", "sqrt": "sqrt",
                                   "classifier": "classifier", "slack_penalty": "slack_penalty"})
    train = _load(_need_file(args.train, "train"), eff["normalize"])
    test = _load(_need_file(args.test, "test"), eff["normalize"])
    wm = None
    if args.map:
        wm = WordMap.from_dict(json.loads(Path(_need_file(args.map, "map")).read_text()))
    scores = decision_scores(train, test, wm, slack_penalty=float(eff["slack_penalty"]),
                             sqrt=eff["sqrt"], classifier=eff["classifier"])
    y = _test_labels(train, test)
    out = {"accuracy": float(np.mean(np.where(scores >= 0, 1.0, -1.0) == y)),
           "ap": average_precision(scores, y), "eer": eer(scores, y),
           "k": wm.k if wm is not None else train.t, "config": eff}
    _write(args.out, _dump(out))
    return 0


def _synth_config(eff, seed=None):
    kw = {k.split(".", 1)[1]: v for k, v in eff.items() if k.startswith("synth.")}
    if seed is not None:
        kw["seed"] = seed
    try:
        return SynthConfig(**kw)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad synth setting: {e}") from None


_SYNTH_FLAGS = {f.name: f"synth.{f.name}" for f in fields(SynthConfig) if f.name != "seed"}


def cmd_synth(args):
    eff = _settings("synth", args, _SYNTH_FLAGS)
    if args.seed is not None:
        eff["synth.seed"] = args.seed
    cfg = _synth_config(eff)
    if args.test_out:
        train, test = gen_train_test(cfg)
        _write(args.out, dataset_to_csv(train))
        _write(args.test_out, dataset_to_csv(test))
    else:
        _write(args.out, dataset_to_csv(gen_synthetic(cfg)))
    return 0


def cmd_bench(args):
    eff = _settings("bench", args, {"criteria": "criteria", "sizes": "sizes", "seeds": "seeds",
                                    "policy": "policy", "classifier": "classifier",
                                    "slack_penalty": "slack_penalty", "normalize": "normalize",
                                    "sqrt": "sqrt"})
    for key in ("criteria", "sizes", "seeds"):
        eff[key] = _parse_list(eff[key])
    bad = [c for c in eff["criteria"] if c not in CRITERIA]
    if bad:
        raise UsageError(f"unknown criteria: {bad}")
    if args.seed is not None:
        eff["seeds"] = [args.seed]
    train = test = synth = None
    if args.train or args.test:
        train = load_dataset(_need_file(args.train, "train"))
        test = load_dataset(_need_file(args.test, "test"))
        t0 = train.t
    else:
        synth = _synth_config(eff)
        t0 = synth.t_disc + synth.t_noise
    sizes = [int(k) for k in eff["sizes"]]
    if not sizes or min(sizes) < 1 or max(sizes) > t0:
        raise UsageError(f"sizes must lie in [1, {t0}]")
    report = bench(train, test, eff["criteria"], sizes, [int(s) for s in eff["seeds"]],
                   synth=synth, normalize=eff["normalize"], policy=eff["policy"],
                   criterion_config=_criterion_config(eff),
                   slack_penalty=float(eff["slack_penalty"]), sqrt=eff["sqrt"],
                   classifier=eff["classifier"], threads=args.threads or os.cpu_count() or 1)
    _write(args.out_csv, report.to_csv())
    summary = json.loads(report.to_json())
    summary["config"] = eff
    if args.out_json:
        _write(args.out_json, _dump(summary))
    return 2 if report.errors and args.strict else 0


def cmd_diag_mme(args):
    eff = _settings("diag", args, {"normalize": "normalize", "sqrt": "sqrt", "mme.eta": "eta",
                                   "mme.slack_penalty": "slack_penalty"})
    ds = _load(_need_file(args.input, "in"), eff["normalize"], eff["sqrt"])
    if ds.n_classes != 2:
        raise RuntimeError("diag mme needs a binary dataset")
    y = ds.binary_labels()
    sol = solve_binary_svm(KernelCache.from_histograms(ds.counts), y,
                           float(eff["mme.slack_penalty"]), histograms=ds.counts,
                           tol=float(eff["mme.tol"]), max_iter=int(eff["mme.max_iter"]))
    total = ds.counts.sum()
    p_word = ds.counts.sum(axis=0) / total
    joint = np.vstack([ds.counts[y < 0].sum(axis=0), ds.counts[y > 0].sum(axis=0)]) / total
    eta = float(eff["mme.eta"])
    model = recover_probabilities(sol.w, sol.b, p_word, eta)
    if args.pair:
        r, s = args.pair
        if not (0 <= r < ds.t and 0 <= s < ds.t and r != s):
            raise UsageError(f"--pair needs two distinct words in [0, {ds.t})")
    else:
        iu, ju = np.triu_indices(ds.t, k=1)
        costs = mme_pair_costs(model, joint, iu, ju)
        best = int(np.argmin(costs))
        r, s = int(iu[best]), int(ju[best])
    cost, resid = taylor_residual(sol.w, sol.b, p_word, r, s, eta, joint=joint,
                                  eta_ref=float(eff["eta_ref"]))
    out = {"w": sol.w.tolist(), "b": sol.b,
           "svm": {"objective": sol.objective, "gap": sol.gap, "n_iter": sol.n_iter},
           "model": {"eta": eta, "p_class": model.params.p_class.tolist(),
                     "p_word": p_word.tolist(),
                     "p_word_given_class": model.params.p_word_given_class.tolist()},
           "checks": check_prob_model(model),
           "taylor": {"r": r, "s": s, "cost": cost, "residual": resid},
           "config": eff}
    _write(args.out, _dump(out))
    return 0


# ---------------------------------------------------------------- parser

def _pair(text):
    try:
        r, s = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected r,s") from None
    return r, s


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON settings file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one setting (repeatable)")
    common.add_argument("--seed", type=int, help="seed for all randomness")
    common.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="wordmerge", description="Codebook compression by word merging.")
    p.add_argument("--version", action="store_true", help="print version as JSON and exit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    m = sub.add_parser("merge", parents=[common], help="dataset -> merge tree JSON + loss CSV")
    m.add_argument("--in", dest="input", help="dataset CSV")
    m.add_argument("--out", required=True, help="merge tree JSON")
    m.add_argument("--losses", help="loss CSV (default: <out>.losses.csv)")
    m.add_argument("--criterion", help=f"one of {', '.join(CRITERIA)} or random")
    m.add_argument("--min-size", dest="min_size", type=int)
    m.add_argument("--policy", choices=POLICIES)
    m.add_argument("--normalize", action="store_const", const=True)
    m.add_argument("--sqrt", action="store_const", const=True)
    m.set_defaults(func=cmd_merge)

    c = sub.add_parser("cut", parents=[common], help="merge tree + k -> word map JSON")
    c.add_argument("--tree")
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_cut)

    a = sub.add_parser("apply", parents=[common], help="dataset + word map -> merged CSV")
    a.add_argument("--in", dest="input")
    a.add_argument("--map")
    a.add_argument("--out")
    a.add_argument("--normalize", action="store_true")
    a.add_argument("--sqrt", action="store_true")
    a.set_defaults(func=cmd_apply)

    e = sub.add_parser("eval", parents=[common], help="train/test (+ word map) -> metrics JSON")
    e.add_argument("--train")
    e.add_argument("--test")
    e.add_argument("--map")
    e.add_argument("--out")
    e.add_argument("--classifier", choices=("svm", "centroid"))
    e.add_argument("--slack-penalty", dest="slack_penalty", type=float)
    e.add_argument("--normalize", action="store_const", const=True)
    e.add_argument("--sqrt", action="store_const", const=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", parents=[common], help="synthetic dataset CSV")
    s.add_argument("--out")
    s.add_argument("--test-out", help="also draw a test split from the same distributions")
    for f in fields(SynthConfig):
        if f.name == "seed":
            continue
        kind = str if f.type in (str, "str") else type(f.default)
        s.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind)
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bench", parents=[common], help="accuracy/AP/EER vs codebook size")
    b.add_argument("--train")
    b.add_argument("--test")
    b.add_argument("--criteria", help="comma list")
    b.add_argument("--sizes", help="comma list")
    b.add_argument("--seeds", help="comma list or range like 0-19")
    b.add_argument("--policy", choices=POLICIES)
    b.add_argument("--classifier", choices=("svm", "centroid"))
    b.add_argument("--slack-penalty", dest="slack_penalty", type=float)
    b.add_argument("--normalize", action="store_const", const=True)
    b.add_argument("--no-normalize", dest="normalize", action="store_const", const=False)
    b.add_argument("--sqrt", action="store_const", const=True)
    b.add_argument("--out-csv", dest="out_csv")
    b.add_argument("--out-json", dest="out_json")
    b.add_argument("--strict", action="store_true", help="exit 2 if any cell failed")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("diag", help="diagnostics")
    dsub = d.add_subparsers(dest="diag_command", parser_class=_Parser)
    dm = dsub.add_parser("mme", parents=[common], help="dump w, b, recovered model, Taylor check")
    dm.add_argument("--in", dest="input")
    dm.add_argument("--out")
    dm.add_argument("--eta", type=float)
    dm.add_argument("--slack-penalty", dest="slack_penalty", type=float)
    dm.add_argument("--pair", type=_pair, help="r,s (default: the cheapest pair)")
    dm.add_argument("--normalize", action="store_const", const=True)
    dm.add_argument("--sqrt", action="store_const", const=True)
    dm.set_defaults(func=cmd_diag_mme)
    return p


def dispatch(argv=None):
    """Run one command; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.version:
            print(json.dumps({"name": "wordmerge", "version": __version__}))
            return 0
        if not getattr(args, "func", None):
            raise UsageError("wordmerge: a subcommand is required (see --help)")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:        # --help
        return int(e.code or 0)
    except Exception as e:
        log.debug("compute failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
