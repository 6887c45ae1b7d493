"""Flat ``section.key = value`` experiment configuration.

Every key has a declared type and default; a file only needs to list the keys
it changes. ``emit(parse(text))`` followed by ``parse`` is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossSpec
from .sampling import SamplerConfig, TauPolicy


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str):
    return None if s.strip().lower() in ("none", "") else float(s)


def _opt_str(s: str):
    return None if s.strip().lower() in ("none", "") else s.strip()


# key -> (parser, default, help)
SCHEMA: dict[str, tuple] = {
    "experiment.seed": (int, 0, "top-level seed; every random stream derives from it"),
    "experiment.out": (str, "runs/experiment", "output directory"),
    "experiment.name": (str, "mf", "model label used in reports"),
    "experiment.threads": (int, 0, "BLAS thread cap (0 keeps the library default)"),
    "data.train": (_opt_str, None, "training pairs file"),
    "data.test": (_opt_str, None, "test pairs file"),
    "data.valid": (_opt_str, None, "validation pairs file (default: carved from train)"),
    "data.format": (str, "pairs", "pairs or adjacency"),
    "train.batch_size": (int, 512, "positives per batch"),
    "train.lr": (float, 1e-4, "initial Adam learning rate"),
    "train.lr_floor": (float, 1e-6, "stop once lr falls below this"),
    "train.lr_decay": (float, 0.5, "lr multiplier on plateau"),
    "train.plateau_patience": (int, 5, "evaluations without improvement before decay"),
    "train.plateau_tol": (float, 1e-5, "minimum Recall@20 gain counted as improvement"),
    "train.l2_reg": (float, 1e-8, "L2 weight on touched embedding rows"),
    "train.max_epochs": (int, 500, "epoch cap"),
    "train.eval_every": (int, 5, "epochs between validation passes"),
    "train.d": (int, 64, "embedding dimension"),
    "train.init_scheme": (str, "normal", "normal or xavier"),
    "train.init_sigma": (float, 0.1, "std of the normal init"),
    "train.valid_fraction": (float, 0.1, "per-user validation share carved from train"),
    "train.eval_k": (int, 20, "K of the validation Recall"),
    "train.freeze_extra": (_bool, False, "drop gradients through extra-positive scores"),
    "train.backend": (_opt_str, None, "kernel backend: cython or numpy"),
    "loss.family": (str, "bpr", "loss family"),
    "loss.temperature": (_opt_float, None, "temperature t"),
    "loss.neg_weight": (_opt_float, None, "negative weight lambda"),
    "loss.margin": (_opt_float, None, "CCL margin epsilon"),
    "loss.ccl_weight": (_opt_float, None, "negative weight w of mse / ccl"),
    "loss.score_mode": (_opt_str, None, "dot or cosine (default per family)"),
    "loss.clamp": (_bool, True, "clamp the debiased pointwise bracket at 0"),
    "loss.bound_only": (_bool, False, "bpr: use its mean score-difference lower bound"),
    "sampler.negative_mode": (str, "uniform-all", "uniform-all, uniform-unobserved or popularity"),
    "sampler.n_negatives": (int, 800, "negatives per positive"),
    "sampler.m_extra_positives": (int, 0, "extra positives per positive (debiased losses)"),
    "sampler.shared_pool": (_bool, False, "share one negative pool across the batch"),
    "tau.mode": (str, "proportional", "topk or proportional"),
    "tau.k": (int, 20, "k of the topk policy"),
    "tau.alpha": (float, 0.0, "alpha of the proportional policy"),
    "ials.d": (int, 64, "iALS factor dimension"),
    "ials.alpha0": (float, 0.1, "weight of unobserved entries"),
    "ials.lam": (float, 1e-3, "regularization"),
    "ials.nu": (float, 0.0, "frequency exponent of the regularization"),
    "ials.c": (float, 1.0, "debias weight c (debiased iALS)"),
    "ials.iters": (int, 10, "alternating sweeps"),
    "ials.init_std": (float, 0.1, "std of the item factor init"),
    "ease.lam": (float, 500.0, "ridge penalty"),
    "ease.alpha": (float, 0.0, "debias alpha (debiased EASE)"),
    "eval.k": (int, 20, "K of the final report"),
}

SECTIONS = ("experiment", "data", "train", "loss", "sampler", "tau", "ials", "ease", "eval")


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class ExperimentConfig:
    """Explicitly set values; everything else falls back to SCHEMA defaults."""

    values: dict = field(default_factory=dict)

    def get(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values.get(key, SCHEMA[key][1])

    def __getitem__(self, key: str):
        return self.get(key)

    def set(self, key: str, raw) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser = SCHEMA[key][0]
        try:
            self.values[key] = parser(raw) if isinstance(raw, str) else raw
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {e}") from None

    def merged(self, overrides: dict) -> ExperimentConfig:
        out = ExperimentConfig(dict(self.values))
        for k, v in overrides.items():
            out.set(k, v)
        return out

    def section(self, name: str) -> dict:
        pre = name + "."
        return {k[len(pre):]: self.get(k) for k in SCHEMA if k.startswith(pre)}

    def loss_spec(self) -> LossSpec:
        return LossSpec(**self.section("loss"))

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(seed=self.get("experiment.seed"), **self.section("sampler"))

    def tau_policy(self) -> TauPolicy:
        return TauPolicy(**self.section("tau"))

    def train_config(self):
        from .trainer import TrainConfig

        try:
            return TrainConfig(loss=self.loss_spec(), sampler=self.sampler_config(),
                               tau=self.tau_policy(), seed=self.get("experiment.seed"),
                               **self.section("train"))
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self.values == other.values


def parse(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in cfg.values:
            raise ConfigError(f"line {no}: duplicate key {key!r}")
        try:
            cfg.set(key, value)
        except ConfigError as e:
            raise ConfigError(f"line {no}: {e}") from None
    return cfg


def emit(cfg: ExperimentConfig) -> str:
    lines = []
    for sec in SECTIONS:
        keys = [k for k in SCHEMA if k.startswith(sec + ".") and k in cfg.values]
        if not keys:
            continue
        if lines:
            lines.append("")
        lines += [f"{k} = {_fmt(cfg.values[k])}" for k in keys]
    return "\n".join(lines) + "\n"


def load(path: str | Path) -> ExperimentConfig:
    return parse(Path(path).read_text())


def save(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(emit(cfg))
