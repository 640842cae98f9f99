"""Criterion configuration with dotted-key overrides."""

import dataclasses
import json
from dataclasses import dataclass

CRITERIA = ("aib", "csm", "uvd", "mlt", "gmle", "mme")


@dataclass
class CriterionConfig:
    aib_mean_mode: bool = False
    mlt_alpha: float = 1.0
    alpha_keep_uniform: bool = False
    ng_mu0: float = None          # None: mean of all initial bin values
    ng_kappa0: float = 1.0
    ng_a: float = 1.0
    ng_b: float = None            # None: max(variance of all bin values, eps_var)
    eps_var: float = 1e-8
    smoothing: float = 1e-6
    mme_eta: float = 0.01
    mme_slack_penalty: float = 1.0
    mme_tol: float = 1e-8
    mme_max_iter: int = 10**6
    seed: int = 0                 # random-merging baseline only

    def to_dict(self):
        return {key: getattr(self, attr) for key, attr in _CANONICAL.items()}

    def update(self, items):
        """Apply ``{dotted_key: value}`` overrides; unknown keys raise KeyError."""
        for key, value in items.items():
            attr = KEY_ALIASES.get(key)
            if attr is None:
                raise KeyError(f"unknown config key {key!r}")
            setattr(self, attr, _coerce(attr, value))
        return self

    @classmethod
    def from_dict(cls, items):
        return cls().update(items)


_CANONICAL = {
    "aib.mean_mode": "aib_mean_mode",
    "mlt.alpha": "mlt_alpha",
    "alpha.keep_uniform": "alpha_keep_uniform",
    "ng.mu0": "ng_mu0",
    "ng.kappa0": "ng_kappa0",
    "ng.a": "ng_a",
    "ng.b": "ng_b",
    "eps_var": "eps_var",
    "smoothing": "smoothing",
    "mme.eta": "mme_eta",
    "mme.slack_penalty": "mme_slack_penalty",
    "mme.tol": "mme_tol",
    "mme.max_iter": "mme_max_iter",
    "seed": "seed",
}

KEY_ALIASES = dict(_CANONICAL)
KEY_ALIASES.update({
    "alpha": "mlt_alpha",
    "mlt.alpha.keep_uniform": "alpha_keep_uniform",
    "gmle.eps_var": "eps_var",
    **{f"uvd.ng.{k}": f"ng_{k}" for k in ("mu0", "kappa0", "a", "b")},
})

_TYPES = {f.name: f.type for f in dataclasses.fields(CriterionConfig)}


def _coerce(attr, value):
    kind = _TYPES[attr]
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("none", "null", ""):
            return None
        if kind is bool:
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"bad boolean {value!r}")
        value = json.loads(value)
    if value is None:
        return None
    if kind is bool:
        return bool(value)
    if kind is int:
        return int(value)
    return float(value)
