"""Flat ``key = value`` run configuration.

Lines are ``key = value`` with ``#`` comments. Any key can be overridden from
the environment as ``PPMX_<KEY>`` with dots written as double underscores,
e.g. ``PPMX_SAMPLER__N_ITER=200`` sets ``sampler.n_iter``.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .conjugate import ConjPriorConfig, ConjugateConfig
from .core import Family, NggParams, SimilarityConfig
from .errors import ConfigError
from .recurrent import RecPriorConfig, RecurrentConfig

ENV_PREFIX = "PPMX_"

DEFAULTS = {
    "model": "conjugate_regression",
    "ngg.kappa": "1.0",
    "ngg.sigma": "0.0",
    "similarity.family": "ONE",
    "similarity.lambda": "1.0",
    "similarity.alpha": "1.0",
    "similarity.eps_star": "",
    "covariates.metric": "sample",
    "prior.mu0": "0",
    "prior.B0_scale": "100",
    "prior.a0": "2",
    "prior.b0": "1",
    "rec.R": "5",
    "rec.alpha0": "0",
    "rec.psi0": "0",
    "rec.kappa0": "10",
    "rec.kappa1": "10",
    "rec.a": "2",
    "rec.b": "1",
    "rec.nu0": "2",
    "rec.gamma0": "1",
    "rec.Sigma0_scale": "1",
    "rec.strict_shape": "false",
    "sampler.n_iter": "1000",
    "sampler.n_burnin": "500",
    "sampler.thin": "1",
    "sampler.init": "",
    "sampler.u_proposal_sd": "",
    "cv.n_splits": "50",
    "cv.train_frac": "0.9",
    "seed": "0",
    "chains": "1",
    "output_dir": "out",
}


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = val.strip()
    return out


def env_overrides(env=None) -> dict:
    env = os.environ if env is None else env
    lookup = {k.replace(".", "__").upper(): k for k in DEFAULTS}
    out = {}
    for name, val in env.items():
        if name.startswith(ENV_PREFIX):
            key = lookup.get(name[len(ENV_PREFIX):].upper())
            if key is None:
                raise ConfigError(f"environment variable {name} matches no config key")
            out[key] = val
    return out


def _num(raw, key, kind=float):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def _bool(raw, key):
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


@dataclass
class RunConfig:
    raw: dict = field(default_factory=lambda: dict(DEFAULTS))

    def get(self, key):
        return self.raw[key]

    @property
    def model(self) -> str:
        return self.raw["model"]

    @property
    def seed(self) -> int:
        return _num(self.raw["seed"], "seed", int)

    @property
    def chains(self) -> int:
        return _num(self.raw["chains"], "chains", int)

    @property
    def output_dir(self) -> str:
        return self.raw["output_dir"]

    def ngg(self) -> NggParams:
        kappa = _num(self.raw["ngg.kappa"], "ngg.kappa")
        sigma = _num(self.raw["ngg.sigma"], "ngg.sigma")
        if not kappa > 0:
            raise ConfigError("ngg.kappa must be positive")
        if not 0 <= sigma < 1:
            raise ConfigError("ngg.sigma must lie in [0, 1)")
        return NggParams(kappa, sigma)

    def similarity(self, lam=None) -> SimilarityConfig:
        fam = self.raw["similarity.family"].upper().replace("_", "")
        fam = {"1": "ONE", "A": "GA", "B": "GB", "C": "GC"}.get(fam, fam)
        if fam not in Family.__members__:
            raise ConfigError(f"similarity.family: unknown family {fam!r}")
        lam = _num(self.raw["similarity.lambda"], "similarity.lambda") if lam is None else lam
        alpha = _num(self.raw["similarity.alpha"], "similarity.alpha")
        if not lam > 0:
            raise ConfigError("similarity.lambda must be positive")
        if not alpha > 0:
            raise ConfigError("similarity.alpha must be positive")
        return SimilarityConfig(Family[fam], lam, alpha)

    @property
    def eps_star(self) -> float | None:
        raw = self.raw["similarity.eps_star"]
        if not raw:
            return None
        val = _num(raw, "similarity.eps_star")
        if not val > 0:
            raise ConfigError("similarity.eps_star must be positive")
        return val

    def _sampler(self):
        n_iter = _num(self.raw["sampler.n_iter"], "sampler.n_iter", int)
        n_burnin = _num(self.raw["sampler.n_burnin"], "sampler.n_burnin", int)
        thin = _num(self.raw["sampler.thin"], "sampler.thin", int)
        if n_iter < 0:
            raise ConfigError("sampler.n_iter must be >= 0")
        if not 0 <= n_burnin <= n_iter:
            raise ConfigError("sampler.n_burnin must lie in [0, sampler.n_iter]")
        if thin < 1:
            raise ConfigError("sampler.thin must be >= 1")
        sd = self.raw["sampler.u_proposal_sd"]
        sd = _num(sd, "sampler.u_proposal_sd") if sd else None
        if sd is not None and not sd > 0:
            raise ConfigError("sampler.u_proposal_sd must be positive")
        return n_iter, n_burnin, thin, sd

    def conj_prior(self, p) -> ConjPriorConfig:
        mu0 = [_num(t, "prior.mu0") for t in self.raw["prior.mu0"].split()]
        if len(mu0) == 1:
            mu0 = mu0 * p
        if len(mu0) != p:
            raise ConfigError(f"prior.mu0: expected 1 or {p} values")
        scale = _num(self.raw["prior.B0_scale"], "prior.B0_scale")
        a0 = _num(self.raw["prior.a0"], "prior.a0")
        b0 = _num(self.raw["prior.b0"], "prior.b0")
        for key, val in (("prior.B0_scale", scale), ("prior.a0", a0), ("prior.b0", b0)):
            if not val > 0:
                raise ConfigError(f"{key} must be positive")
        return ConjPriorConfig(np.array(mu0), scale * np.eye(p), a0, b0)

    def conjugate(self, p, lam=None) -> ConjugateConfig:
        n_iter, n_burnin, thin, sd = self._sampler()
        init = self.raw["sampler.init"] or "singletons"
        if init not in ("singletons", "one", "kmeans"):
            raise ConfigError(f"sampler.init: unknown value {init!r}")
        return ConjugateConfig(self.ngg(), self.similarity(lam), self.conj_prior(p), n_iter, n_burnin,
                               thin, init, u_proposal_sd=sd)

    def rec_prior(self, p1) -> RecPriorConfig:
        vals = {}
        for key in ("alpha0", "psi0", "kappa0", "kappa1", "a", "b", "nu0", "gamma0"):
            vals[key] = _num(self.raw[f"rec.{key}"], f"rec.{key}")
        R = _num(self.raw["rec.R"], "rec.R", int)
        scale = _num(self.raw["rec.Sigma0_scale"], "rec.Sigma0_scale")
        if not scale > 0:
            raise ConfigError("rec.Sigma0_scale must be positive")
        strict = _bool(self.raw["rec.strict_shape"], "rec.strict_shape")
        return RecPriorConfig(Sigma0=scale * np.eye(p1), R=R, strict_shape=strict, **vals)

    def recurrent(self, p1, lam=None) -> RecurrentConfig:
        n_iter, n_burnin, thin, sd = self._sampler()
        init = self.raw["sampler.init"] or "one"
        if init not in ("singletons", "one"):
            raise ConfigError(f"sampler.init: unknown value {init!r}")
        return RecurrentConfig(self.ngg(), self.similarity(lam), self.rec_prior(p1), n_iter, n_burnin,
                               thin, init, sd)

    def cv(self):
        from .summaries import SplitSpec
        return SplitSpec(_num(self.raw["cv.n_splits"], "cv.n_splits", int),
                         _num(self.raw["cv.train_frac"], "cv.train_frac"))

    def validate(self):
        """Check every key that does not depend on the data dimensions."""
        if self.model not in ("conjugate_regression", "recurrent"):
            raise ConfigError(f"model: unknown value {self.model!r}")
        self.ngg()
        self.similarity()
        self._sampler()
        self.eps_star
        self.seed
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if self.model == "recurrent":
            self.rec_prior(1)
        else:
            self.conj_prior(1) if len(self.raw["prior.mu0"].split()) == 1 else None
        return self

    def to_text(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in DEFAULTS)

    def digest(self) -> str:
        """Hash of every setting except the output location."""
        text = "".join(f"{k} = {self.raw[k]}\n" for k in DEFAULTS if k != "output_dir")
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path=None, overrides: dict | None = None, env=None, base: dict | None = None) -> RunConfig:
    """Defaults, then ``base``, then the file, then the environment, then ``overrides``."""
    raw = dict(DEFAULTS)
    for key, val in (base or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = str(val)
    if path is not None:
        with open(path) as fh:
            raw.update(parse_config_text(fh.read()))
    raw.update(env_overrides(env))
    for key, val in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = str(val)
    return RunConfig(raw).validate()
