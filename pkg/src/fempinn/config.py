"""Experiment configuration: INI files with an explicit schema.

Every key has a type and a default. :func:`parse_config` collects all
problems (unknown sections or keys, bad values, inconsistent combinations)
and raises a single :class:`ConfigError` listing them, before any compute.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError, InvalidArgument
from .fieldnet import BOUNDARY_KINDS
from .problems import PROBLEMS, make_problem, problem_parameters
from .timebasis import FAMILIES, elements_for_size, make_basis


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace("x", ",").split(",") if v.strip())


@dataclass(frozen=True)
class ProblemSection:
    name: str = "convection"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BasisSection:
    family: str = "lagrange-p2"
    elements: int = 8          # number of time elements per segment
    n: int | None = None       # number of basis functions minus one (alternative to elements)


@dataclass(frozen=True)
class ProjectionSection:
    kind: str = "galerkin"
    test_space: str = "bubnov"
    K: int | None = None


@dataclass(frozen=True)
class MarchingSection:
    segments: int = 1


@dataclass(frozen=True)
class NetworkSection:
    width: int = 128
    depth: int = 4


@dataclass(frozen=True)
class ConstraintSection:
    kind: str = "auto"
    pin_initial: bool = True


@dataclass(frozen=True)
class SamplingSection:
    n_r: int = 1000
    n_ic: int = 0
    n_bc: int = 0
    mesh: bool = False


@dataclass(frozen=True)
class OptimizerSection:
    iterations: int = 2000
    lr: float = 1e-3
    decay: float = 0.9
    decay_steps: int = 1000
    batches_r: int = 1
    batches_ic: int = 1
    batches_bc: int = 1
    gamma_bc: float = 1.0
    gamma_ic: float = 1.0


@dataclass(frozen=True)
class AdaptiveSection:
    enabled: bool = False
    strategy: str = "adaptive"     # adaptive | uniform (matched-budget baseline)
    n_adaptive: int = 5
    n_new: int = 500
    density_epochs: int = 500
    density_batch: int = 1000
    pool_size: int = 5000
    density_lr: float = 1e-3
    flow_layers: int = 8
    knots: int = 32
    hidden: int = 32
    n_mc: int = 2000


@dataclass(frozen=True)
class EvaluationSection:
    grid: tuple = (256, 101)   # points per spatial axis (box domains) then time levels
    points: int = 10000        # random test cloud size (ball domains)
    dump: bool = False


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    name: str = "run"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSection = ProblemSection()
    basis: BasisSection = BasisSection()
    projection: ProjectionSection = ProjectionSection()
    marching: MarchingSection = MarchingSection()
    network: NetworkSection = NetworkSection()
    constraint: ConstraintSection = ConstraintSection()
    sampling: SamplingSection = SamplingSection()
    optimizer: OptimizerSection = OptimizerSection()
    adaptive: AdaptiveSection = AdaptiveSection()
    evaluation: EvaluationSection = EvaluationSection()
    run: RunSection = RunSection()

    @property
    def n_elements(self) -> int:
        if self.basis.n is not None:
            return elements_for_size(self.basis.family, self.basis.n)
        return self.basis.elements

    def with_values(self, **sections) -> "ExperimentConfig":
        """Copy with ``section={key: value}`` overrides (no validation)."""
        out = self
        for name, values in sections.items():
            out = dataclasses.replace(out, **{name: dataclasses.replace(getattr(out, name), **values)})
        return out


SECTIONS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
_SECTION_TYPES = {
    "problem": ProblemSection, "basis": BasisSection, "projection": ProjectionSection,
    "marching": MarchingSection, "network": NetworkSection, "constraint": ConstraintSection,
    "sampling": SamplingSection, "optimizer": OptimizerSection, "adaptive": AdaptiveSection,
    "evaluation": EvaluationSection, "run": RunSection,
}
_CONVERTERS = {"bool": _bool, "int": int, "float": float, "str": str, "tuple": _ints,
               "int | None": int}


def _converter(section_type, key):
    ftype = {f.name: f.type for f in dataclasses.fields(section_type)}[key]
    return _CONVERTERS[ftype]


def _parse_section(name, items, problems):
    stype = _SECTION_TYPES[name]
    known = {f.name for f in dataclasses.fields(stype)}
    values = {}
    if name == "problem":
        params = {}
        for key, text in items:
            if key == "name":
                values["name"] = text.strip()
                continue
            try:
                params[key] = float(text)
            except ValueError:
                problems.append(f"[problem] {key}: not a number: {text!r}")
        values["params"] = params
        return stype(**values)
    for key, text in items:
        if key not in known or key == "params":
            problems.append(f"[{name}] unknown key {key!r}")
            continue
        if text.strip().lower() in ("", "none") and key in ("n", "K"):
            values[key] = None
            continue
        try:
            values[key] = _converter(stype, key)(text.strip())
        except (ValueError, TypeError) as exc:
            problems.append(f"[{name}] {key}: {exc}")
    return stype(**values)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate INI text; raises :class:`ConfigError` listing every problem."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"not valid INI: {exc}"]) from None
    problems = []
    sections = {}
    for name in parser.sections():
        if name not in _SECTION_TYPES:
            problems.append(f"unknown section [{name}]")
            continue
        sections[name] = _parse_section(name, parser.items(name), problems)
    config = ExperimentConfig(**sections)
    problems += validate(config)
    if problems:
        raise ConfigError(problems)
    return config


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def resolve_constraint(config: ExperimentConfig) -> str:
    """The boundary transform for ``kind = auto``: the one matching the problem's boundary."""
    if config.constraint.kind != "auto":
        return config.constraint.kind
    name = config.problem.name
    if name in ("convection", "allen-cahn-1d"):
        return "periodic-fourier"
    if name in ("parabolic-varcoef", "allen-cahn-ball"):
        return "dirichlet-ball"
    return "dirichlet-box"


def validate(config: ExperimentConfig) -> list[str]:
    """Consistency checks; returns a list of problem descriptions (empty when valid)."""
    out = []
    p = config.problem
    problem = None
    if p.name not in PROBLEMS:
        out.append(f"[problem] name: unknown problem {p.name!r}; expected one of {', '.join(PROBLEMS)}")
    else:
        allowed = problem_parameters(p.name)
        bad = sorted(set(p.params) - set(allowed))
        if bad:
            out.append(f"[problem] unknown parameter(s) {bad} for {p.name}; allowed {list(allowed)}")
        else:
            try:
                problem = make_problem(p.name, **p.params)
            except (InvalidArgument, ValueError) as exc:
                out.append(f"[problem] {exc}")
    b = config.basis
    if b.family not in FAMILIES:
        out.append(f"[basis] family: unknown family {b.family!r}; expected one of {', '.join(FAMILIES)}")
    else:
        try:
            m = config.n_elements
            if b.n is not None and make_basis(b.family, 0.0, 1.0, m).size != b.n + 1:
                out.append(f"[basis] n={b.n} is not reachable with family {b.family}")
            elif m < 1:
                out.append("[basis] elements must be at least 1")
        except InvalidArgument as exc:
            out.append(f"[basis] {exc}")
    pr = config.projection
    if pr.kind not in ("galerkin", "collocation"):
        out.append(f"[projection] kind: expected galerkin or collocation, got {pr.kind!r}")
    if pr.test_space not in ("bubnov", "petrov"):
        out.append(f"[projection] test_space: expected bubnov or petrov, got {pr.test_space!r}")
    if pr.K is not None and pr.K < 1:
        out.append("[projection] K must be positive")
    if config.marching.segments < 1:
        out.append("[marching] segments must be at least 1")
    if config.network.width < 1 or config.network.depth < 1:
        out.append("[network] width and depth must be positive")
    kind = config.constraint.kind
    if kind != "auto" and kind not in BOUNDARY_KINDS:
        out.append(f"[constraint] kind: unknown constraint {kind!r}; expected auto or one of {', '.join(BOUNDARY_KINDS)}")
    elif problem is not None:
        kind = resolve_constraint(config)
        if kind == "periodic-fourier" and not (problem.domain == "interval" and problem.boundary == "periodic"):
            out.append(f"[constraint] periodic-fourier needs a periodic interval domain; {p.name} has a {problem.domain} domain")
        if kind == "dirichlet-ball" and problem.domain != "ball":
            out.append(f"[constraint] dirichlet-ball needs a ball domain; {p.name} has a {problem.domain} domain")
        if kind == "dirichlet-box" and (problem.domain != "box" or problem.boundary != "dirichlet"):
            out.append(f"[constraint] dirichlet-box needs a Dirichlet box domain; {p.name} has a {problem.domain} domain")
    s = config.sampling
    if s.n_r < 1 or s.n_ic < 0 or s.n_bc < 0:
        out.append("[sampling] n_r must be positive and n_ic, n_bc non-negative")
    o = config.optimizer
    if o.iterations < 1 or o.decay_steps < 1:
        out.append("[optimizer] iterations and decay_steps must be positive")
    if not (o.lr > 0 and 0 < o.decay <= 1):
        out.append("[optimizer] need lr > 0 and 0 < decay <= 1")
    if min(o.batches_r, o.batches_ic, o.batches_bc) < 1:
        out.append("[optimizer] batch counts must be positive")
    if not config.constraint.pin_initial and s.n_ic < 1:
        out.append("[sampling] n_ic must be positive when the initial coefficient is not pinned")
    a = config.adaptive
    if a.enabled:
        if config.marching.segments != 1:
            out.append("[adaptive] adaptive sampling runs on a single time segment")
        if a.strategy not in ("adaptive", "uniform"):
            out.append(f"[adaptive] strategy: expected adaptive or uniform, got {a.strategy!r}")
        if a.n_adaptive < 1 or a.n_new < 0:
            out.append("[adaptive] need n_adaptive >= 1 and n_new >= 0")
        if min(a.density_epochs, a.density_batch, a.pool_size, a.flow_layers, a.knots, a.hidden, a.n_mc) < 1:
            out.append("[adaptive] density settings must be positive")
    e = config.evaluation
    if problem is not None and problem.domain != "ball" and len(e.grid) != 2:
        out.append("[evaluation] grid must be 'spatial,temporal' point counts")
    if len(e.grid) and min(e.grid) < 2:
        out.append("[evaluation] grid needs at least two points per axis")
    if e.points < 1:
        out.append("[evaluation] points must be positive")
    return out


def to_ini(config: ExperimentConfig) -> str:
    """INI text that parses back to ``config``."""
    lines = []
    for name in _SECTION_TYPES:
        section = getattr(config, name)
        lines.append(f"[{name}]")
        for f in dataclasses.fields(section):
            value = getattr(section, f.name)
            if name == "basis" and f.name == "elements":
                value = config.n_elements
            if f.name == "params":
                for k, v in sorted(value.items()):
                    lines.append(f"{k} = {v!r}")
                continue
            if value is None:
                text = "none"
            elif isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        lines.append("")
    return "\n".join(lines)


def to_dict(config: ExperimentConfig) -> dict:
    return {name: dataclasses.asdict(getattr(config, name)) for name in _SECTION_TYPES}
