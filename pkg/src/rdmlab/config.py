"""TOML run configurations.

A config file has three tables: [model] (system matrix, environment chain or
explicit levels, interaction terms), [analysis] (sweep lists, shell placement,
thresholds, sampling), and [output].  See configs/qubit_chain10.cfg for a
fully annotated example.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .model import (
    DEFECT_CHAIN_BOOST,
    DEFECT_CHAIN_G,
    DEFECT_CHAIN_H,
    DEFECT_CHAIN_J,
    EnvOperatorSpec,
    ModelSpec,
    defect_chain,
    synthetic_environment,
)


@dataclass(frozen=True)
class AnalysisConfig:
    lambdas: tuple
    epsilons: tuple
    shell_widths: tuple
    shell_center_fraction: float | None
    shell_start: float | None
    tau_small_width: float
    tau_small_q: float
    samples: int
    seed: int | None
    env_sizes: tuple = ()
    center_gate: float = 0.6


@dataclass(frozen=True)
class OutputConfig:
    directory: str
    formats: tuple = ("json", "csv")


@dataclass(frozen=True)
class RunConfig:
    label: str
    model: ModelSpec
    analysis: AnalysisConfig
    output: OutputConfig
    source_text: str = field(default="", compare=False)


def _need(table, key, where):
    if key not in table:
        raise ConfigError(f"missing required field {where}.{key}")
    return table[key]


def _matrix(value, where):
    try:
        m = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        try:
            m = np.asarray(
                [[complex(c[0], c[1]) for c in row] for row in value]
            )
        except (TypeError, ValueError, IndexError):
            raise ConfigError(f"{where} must be a numeric matrix") from None
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"{where} must be square")
    return m


def _environment(table):
    if "levels" in table:
        return synthetic_environment(np.asarray(table["levels"], dtype=float))
    n_sites = _need(table, "n_sites", "model.environment")
    return defect_chain(
        int(n_sites),
        j=float(table.get("ising_coupling", DEFECT_CHAIN_J)),
        g=float(table.get("transverse_field", DEFECT_CHAIN_G)),
        h=float(table.get("longitudinal_field", DEFECT_CHAIN_H)),
        defect_site=int(table.get("defect_site", 0)),
        defect_boost=float(table.get("defect_boost", DEFECT_CHAIN_BOOST)),
        disorder_seed=table.get("disorder_seed"),
        disorder_strength=float(table.get("disorder_strength", 0.0)),
    )


def _interaction(entries):
    terms = []
    for k, entry in enumerate(entries):
        where = f"model.interaction[{k}]"
        sys_op = _matrix(_need(entry, "system_op", where), f"{where}.system_op")
        axis = entry.get("axis")
        site = entry.get("site")
        if axis is None:
            raise ConfigError(f"missing required field {where}.axis")
        env_op = EnvOperatorSpec(
            site=None if site is None else int(site),
            axis=str(axis),
        )
        terms.append((sys_op, env_op))
    return tuple(terms)


def _positive_list(table, key, where):
    values = tuple(float(v) for v in _need(table, key, where))
    if not values:
        raise ConfigError(f"{where}.{key} must be a nonempty list")
    return values


def parse_config(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config does not parse: {exc}") from None

    label = str(raw.get("label", "run"))

    model_table = _need(raw, "model", "config")
    system = _matrix(
        _need(model_table, "system_hamiltonian", "model"), "model.system_hamiltonian"
    )
    environment = _environment(_need(model_table, "environment", "model"))
    interaction = _interaction(model_table.get("interaction", []))
    model = ModelSpec(
        system_hamiltonian=system,
        environment=environment,
        interaction_terms=interaction,
        coupling=float(model_table.get("coupling", 0.0)),
        label=label,
        dimension_cap=int(model_table.get("dimension_cap", 16384)),
    )

    a = _need(raw, "analysis", "config")
    lambdas = tuple(float(v) for v in _need(a, "lambdas", "analysis"))
    if not lambdas:
        raise ConfigError("analysis.lambdas must be a nonempty list")
    if any(v < 0 for v in lambdas):
        raise ConfigError("analysis.lambdas must be nonnegative")
    epsilons = _positive_list(a, "epsilons", "analysis")
    if any(not 0 < e < 1 for e in epsilons):
        raise ConfigError("analysis.epsilons must lie strictly between 0 and 1")
    widths = _positive_list(a, "shell_widths", "analysis")
    if any(w <= 0 for w in widths):
        raise ConfigError("analysis.shell_widths must be positive")

    fraction = a.get("shell_center_fraction")
    start = a.get("shell_start")
    if fraction is None and start is None:
        raise ConfigError(
            "missing required field analysis.shell_center_fraction (or analysis.shell_start)"
        )

    samples = int(a.get("samples", 0))
    seed = a.get("seed")
    if samples > 0 and seed is None:
        raise ConfigError("missing required field analysis.seed (samples > 0)")

    analysis = AnalysisConfig(
        lambdas=lambdas,
        epsilons=epsilons,
        shell_widths=widths,
        shell_center_fraction=None if fraction is None else float(fraction),
        shell_start=None if start is None else float(start),
        tau_small_width=float(a.get("tau_small_width", 0.05)),
        tau_small_q=float(a.get("tau_small_q", 0.05)),
        samples=samples,
        seed=None if seed is None else int(seed),
        env_sizes=tuple(int(v) for v in a.get("env_sizes", [])),
        center_gate=float(a.get("center_gate", 0.6)),
    )

    o = raw.get("output", {})
    output = OutputConfig(
        directory=str(o.get("directory", "out")),
        formats=tuple(str(f) for f in o.get("formats", ["json", "csv"])),
    )
    for fmt in output.formats:
        if fmt not in ("json", "csv"):
            raise ConfigError(f"output.formats contains unknown format {fmt!r}")

    return RunConfig(
        label=label, model=model, analysis=analysis, output=output, source_text=text
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
