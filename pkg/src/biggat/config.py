"""Plain-text run configuration: ``section.key = value`` lines.

Blank lines and ``#`` comments are ignored. Every key must be known; a typo
is an error rather than a silently ignored setting.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from biggat.harness import OrderSelection
from biggat.model import ModelConfig
from biggat.synthetic import STORM_CLASS_COUNTS, SuiteConfig
from biggat.training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _names(text: str) -> tuple[str, ...]:
    out = tuple(n.strip() for n in text.split(",") if n.strip())
    if not out:
        raise ValueError("empty name list")
    return out


# section -> key -> parser
SCHEMA = {
    "run": {"seed": int, "jobs": int},
    "model": {"variant": str, "kmax": int, "neighborhood_order": int, "use_bias": _bool},
    "training": {"learning_rate": float, "epochs": int, "weight_decay": float,
                 "class_weights": _bool, "adam_beta1": float, "adam_beta2": float,
                 "adam_epsilon": float, "train_clusters": str},
    "selection": {"n_max": int, "alpha": float, "n_perm": int, "rule": str},
    "generator": {"rows": int, "cols": int, "correlation_order": int, "noise_scale": float,
                  "peak_noise": float, "lattice_rows": int, "lattice_cols": int, "names": _names},
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    jobs: int = 1
    variant: str = "biggat"
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    selection: OrderSelection = field(default_factory=OrderSelection)
    generator: SuiteConfig = field(default_factory=SuiteConfig)

    def to_dict(self) -> dict:
        gen = asdict(self.generator)
        gen["lattice"] = list(gen["lattice"])
        gen["names"] = list(gen["names"])
        return {
            "run": {"seed": self.seed, "jobs": self.jobs},
            "model": dict(asdict(self.model), variant=self.variant),
            "training": asdict(self.training),
            "selection": asdict(self.selection),
            "generator": gen,
        }


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict]:
    out: dict[str, dict] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        lhs, value = (s.strip() for s in line.split("=", 1))
        if "." not in lhs:
            raise ConfigError(f"{source}:{lineno}: key {lhs!r} has no section")
        section, key = lhs.split(".", 1)
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown section {section!r}")
        if key not in SCHEMA[section]:
            raise ConfigError(f"{source}:{lineno}: unknown key {lhs!r}")
        try:
            parsed = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {lhs}: {exc}") from None
        out.setdefault(section, {})[key] = parsed
    return out


def resolve(values: dict[str, dict] | None = None, seed: int | None = None,
            variant: str | None = None) -> RunConfig:
    """Defaults, then file values, then command-line overrides."""
    values = values or {}
    run = values.get("run", {})
    model_kw = dict(values.get("model", {}))
    name = variant or model_kw.pop("variant", "biggat")
    model_kw.pop("variant", None)
    root_seed = run.get("seed", 0) if seed is None else seed
    try:
        model = ModelConfig.variant(name, **model_kw)
        training = TrainConfig(**values.get("training", {}), seed=root_seed)
        selection = OrderSelection(**values.get("selection", {}))
        gen_kw = dict(values.get("generator", {}))
        lattice = (gen_kw.pop("lattice_rows", 20), gen_kw.pop("lattice_cols", 20))
        names = gen_kw.get("names", tuple(STORM_CLASS_COUNTS))
        generator = SuiteConfig(seed=root_seed, lattice=lattice, **dict(gen_kw, names=names))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if selection.rule not in ("contiguous", "largest"):
        raise ConfigError(f"unknown selection rule {selection.rule!r}")
    if run.get("jobs", 1) < 1:
        raise ConfigError("run.jobs must be >= 1")
    return RunConfig(root_seed, run.get("jobs", 1), model.variant_name, model, training, selection, generator)


def load_config(path: str | Path | None, seed: int | None = None, variant: str | None = None) -> RunConfig:
    if path is None:
        return resolve(None, seed, variant)
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    return resolve(parse_config_text(p.read_text(encoding="utf-8"), str(p)), seed, variant)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, seed=seed, training=replace(cfg.training, seed=seed),
                   generator=replace(cfg.generator, seed=seed))


__all__ = ["ConfigError", "RunConfig", "SCHEMA", "load_config", "parse_config_text", "resolve",
           "with_seed"]
