"""Experiment configuration: a line-oriented ``key = value`` format with ``[section]`` headers.

Example::

    kind = collapse-demo
    seeds = 0..19            # or an explicit list: 0, 1, 2

    [train]
    steps = 3000
    lr = 0.001

Keys before the first header belong to the top level. ``#`` starts a comment.
Lists are comma separated. Every key has a type and a default (see
``SCHEMA``); ``kind`` is the only required key. Unknown sections or keys, type
mismatches and duplicates are reported with their line number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

KINDS = ("collapse-demo", "bound-check", "codec-bench", "plan", "dream-train", "grad-check")
TOP = ""


class ConfigError(ValueError):
    pass


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("not finite")
    return value


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError("expected true/false")


def _str(text: str) -> str:
    if not text:
        raise ValueError("empty string")
    return text


def _opt_str(text: str) -> str | None:
    return None if text.lower() == "none" else text


def _opt_float(text: str) -> float | None:
    return None if text.lower() == "none" else _float(text)


def _int_list(text: str) -> tuple[int, ...]:
    if ".." in text and "," not in text:
        lo, hi = (int(p) for p in text.split(".."))
        if hi < lo:
            raise ValueError("empty range")
        return tuple(range(lo, hi + 1))
    return tuple(int(p) for p in text.split(",") if p.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(_float(p) for p in text.split(",") if p.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


_TYPE_NAMES = {_int: "integer", _float: "number", _bool: "boolean", _str: "string", _opt_str: "string or none",
               _opt_float: "number or none", _int_list: "integer list", _float_list: "number list",
               _str_list: "string list"}

# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    TOP: {
        "kind": (_str, None),
        "seeds": (_int_list, (0,)),
        "out": (_opt_str, None),
    },
    "env": {
        "process_noise": (_float, 0.02),
        "n_distractors": (_int, 4),
        "distractor_std": (_float, 0.5),
        "dataset_size": (_int, 4096),
        "episode_length": (_int, 20),
    },
    "model": {
        "latent_dim": (_int, 8),
        "hidden": (_int_list, (64, 64)),
    },
    "train": {
        "steps": (_int, 3000),
        "batch_size": (_int, 64),
        "lr": (_float, 1e-3),
        "lr_schedule": (_str, "cosine"),
        "beta1": (_float, 0.9),
        "beta2": (_float, 0.999),
        "eps": (_float, 1e-8),
        "reg_weight": (_float, 0.0),
        "log_every": (_int, 250),
        "eval_size": (_int, 1000),
        "collapse_ratio": (_float, 0.01),
        "keep_ratio": (_float, 0.1),
        "mse_ratio": (_float, 0.5),
        "pass_fraction": (_float, 0.9),
    },
    "planner": {
        "method": (_str, "cem"),
        "horizon": (_int, 12),
        "population": (_int, 256),
        "elites": (_int, 25),
        "iterations": (_int, 8),
        "temperature": (_float, 1.0),
        "discount": (_float, 0.97),
        "noise_std": (_opt_float, None),
        "mpc_steps": (_int, 20),
        "goal_distance": (_float, 0.1),
        "optimum_tolerance": (_float, 0.1),
    },
    "codec": {
        "modes": (_str_list, ("scale_up", "scale_out")),
        "T": (_int_list, (1, 2)),
        "D": (_int_list, (1, 2, 3)),
        "K_tilde": (_float, 2.0),
        "eps_tilde": (_float_list, (0.1, 0.2)),
        "M": (_int, 2),
        "trials": (_int, 100000),
    },
    "bound": {
        "n_triples": (_int, 10000),
        "batch_size": (_int, 100),
        "latent_dim": (_int, 3),
        "obs_dim": (_int, 5),
        "tolerance": (_float, 1e-9),
    },
    "dream": {
        "updates": (_int, 300),
        "n_rollouts": (_int, 64),
        "horizon": (_int, 20),
        "lr": (_float, 0.1),
        "episodes": (_int, 10),
        "min_score": (_float, 0.8),
        "alpha": (_float, 0.05),
    },
    "gradcheck": {
        "compositions": (_int, 50),
        "fd_step": (_float, 1e-5),
        "max_error": (_float, 1e-4),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seeds: tuple[int, ...] = (0,)
    out: str | None = None
    sections: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def with_seeds(self, seeds) -> ExperimentConfig:
        return ExperimentConfig(self.kind, tuple(seeds), self.out, self.sections)

    def with_out(self, out: str | None) -> ExperimentConfig:
        return ExperimentConfig(self.kind, self.seeds, out, self.sections)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seeds": list(self.seeds), "out": self.out,
                **{name: {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
                   for name, sec in self.sections.items()}}


def default_config(kind: str) -> ExperimentConfig:
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    return ExperimentConfig(kind, (0,), None, _defaults())


def _defaults() -> dict:
    return {name: {k: default for k, (_, default) in keys.items()} for name, keys in SCHEMA.items() if name != TOP}


def parse_config(text: str) -> ExperimentConfig:
    section = TOP
    seen: dict[tuple[str, str], int] = {}
    values = {name: {} for name in SCHEMA}
    last_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        last_line = lineno
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA or section == TOP:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        where = f"[{section}] " if section else ""
        if key not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {where}{key!r}")
        if (section, key) in seen:
            raise ConfigError(f"line {lineno}: duplicate key {where}{key!r} (first set on line {seen[section, key]})")
        seen[section, key] = lineno
        parser = SCHEMA[section][key][0]
        try:
            values[section][key] = parser(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: key {where}{key!r} expects {_TYPE_NAMES[parser]}, "
                              f"got {value!r}") from None
    top = values.pop(TOP)
    if "kind" not in top:
        raise ConfigError(f"line {last_line}: missing required key 'kind' (end of input)")
    if top["kind"] not in KINDS:
        raise ConfigError(f"line {seen[TOP, 'kind']}: unknown experiment kind {top['kind']!r}")
    seeds = top.get("seeds", SCHEMA[TOP]["seeds"][1])
    if not seeds:
        raise ConfigError(f"line {seen.get((TOP, 'seeds'), last_line)}: seeds must be nonempty")
    sections = _defaults()
    for name, given in values.items():
        sections[name].update(given)
    return ExperimentConfig(top["kind"], tuple(seeds), top.get("out"), sections)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Full text form, every key written out; ``parse_config`` inverts it exactly."""
    lines = [f"kind = {cfg.kind}", f"seeds = {_format(cfg.seeds)}", f"out = {_format(cfg.out)}"]
    for name in SCHEMA:
        if name == TOP:
            continue
        lines.append("")
        lines.append(f"[{name}]")
        for key in SCHEMA[name]:
            lines.append(f"{key} = {_format(cfg.sections[name][key])}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
