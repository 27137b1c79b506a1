"""Job configuration files.

Grammar (one statement per line, ``#`` starts a comment)::

    [section]            # job section or one of: density, test_function
    key = value
    value := number | true | false | word | "quoted string" | [value, ...]

Keys before the first section header belong to the job section. Unknown
keys, duplicate keys and out-of-range values are errors that name the line
and column.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .functionals import ColorThreshold, FunctionalDescriptor
from .clt_harness import ExperimentConfig
from .measures import TestFunction
from .point_process import Density, load_density_csv

JOBS = ("experiment", "tails", "verify-stab", "bounds")

KIND_ALIASES = {
    "knn": "knn-edge-length",
    "knn-indicator": "knn-distance-indicator",
    "two-color": "two-color-mismatch",
    "voronoi": "voronoi-half-length",
    "sig": "sig-half-degree",
    "sig-degree": "sig-degree-indicator",
    "rsa": "rsa-packing",
    "independence": "independence-ratio",
}

RULE_ALIASES = {"nn": "nn-distance", "component": "component-extent-plus-2b", "probe": "user-supplied-probe"}

_FUNCTIONAL_KEYS = {"kind", "k", "s", "delta", "b", "r", "q_intercept", "q_coef"}
_JOB_KEYS = {
    "experiment": _FUNCTIONAL_KEYS | {"lambda", "m", "seed", "rho_alpha"},
    "tails": _FUNCTIONAL_KEYS | {"rule", "probe", "lambda", "points", "replicates", "t", "seed"},
    "verify-stab": _FUNCTIONAL_KEYS | {"rule", "probe", "lambda", "trials", "instances", "seed", "halve_radius",
                                         "negative_control"},
    "bounds": {"q", "D", "V", "theta", "d", "p", "gamma", "lambda", "variance", "C", "alpha"},
}
_SECTION_KEYS = {
    "density": {"kind", "lower", "upper", "file"},
    "test_function": {"kind", "value", "lower", "upper", "coef", "offset"},
}
_REQUIRED = {
    "experiment": ("kind", "lambda", "m", "seed"),
    "tails": ("kind", "rule", "lambda", "replicates", "t", "seed"),
    "verify-stab": ("kind", "rule", "lambda", "trials", "seed"),
    "bounds": (),
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        where = "" if line is None else f"line {line}, col {col or 1}: "
        super().__init__(where + message)
        self.line, self.col = line, col


@dataclass
class Entry:
    value: object
    line: int
    col: int


_TOKEN = re.compile(r"""\s*(?:(?P<lb>\[)|(?P<rb>\])|(?P<comma>,)|(?P<str>"[^"]*")|(?P<atom>[^\s,\[\]"#]+))""")


def _atom(text: str, line: int, col: int):
    if text == "true":
        return True
    if text == "false":
        return False
    if re.fullmatch(r"[+-]?\d+", text):
        return int(text)
    try:
        val = float(text)
    except ValueError:
        if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.\-/]*", text):
            return text
        raise ConfigError(f"malformed value {text!r}", line, col) from None
    if not math.isfinite(val):
        raise ConfigError(f"non-finite number {text!r}", line, col)
    return val


def _parse_value(text: str, line: int, col0: int):
    pos = 0
    stack: list[list] = []
    result = None
    expect_value = True
    while True:
        m = _TOKEN.match(text, pos)
        rest = text[pos:].strip()
        if not rest or rest.startswith("#"):
            break
        if not m or m.end() == pos:
            raise ConfigError(f"unexpected character {rest[0]!r}", line, col0 + pos)
        col = col0 + m.start(m.lastgroup)
        pos = m.end()
        if m.lastgroup == "lb":
            if not expect_value:
                raise ConfigError("missing comma", line, col)
            stack.append([])
            continue
        if m.lastgroup == "rb":
            if not stack:
                raise ConfigError("unbalanced ']'", line, col)
            done = stack.pop()
            item = done
        elif m.lastgroup == "comma":
            if not stack or expect_value:
                raise ConfigError("unexpected ','", line, col)
            expect_value = True
            continue
        else:
            if not expect_value:
                raise ConfigError("missing comma", line, col)
            item = m.group("str")[1:-1] if m.lastgroup == "str" else _atom(m.group("atom"), line, col)
        if stack:
            stack[-1].append(item)
            expect_value = False
        else:
            if result is not None:
                raise ConfigError("trailing content after value", line, col)
            result = item
            expect_value = False
    if stack:
        raise ConfigError("unclosed '['", line, col0 + len(text))
    if result is None:
        raise ConfigError("missing value", line, col0)
    return result


def parse_sections(text: str, job: str) -> dict[str, dict[str, Entry]]:
    """Tokenize ``text`` into ``{section: {key: Entry}}`` with key checking."""
    if job not in JOBS:
        raise ConfigError(f"unknown job {job!r}")
    sections: dict[str, dict[str, Entry]] = {job: {}}
    current = job
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        indent = len(raw) - len(raw.lstrip()) + 1
        if stripped.startswith("["):
            m = re.fullmatch(r"\[\s*([A-Za-z_\-]+)\s*\]\s*(#.*)?", stripped)
            if not m:
                raise ConfigError("malformed section header", lineno, indent)
            name = m.group(1)
            if name != job and name not in _SECTION_KEYS:
                raise ConfigError(f"unknown section [{name}]", lineno, indent)
            current = name
            sections.setdefault(name, {})
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", lineno, indent)
        key_part, value_part = raw.split("=", 1)
        key = key_part.strip()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", key):
            raise ConfigError(f"malformed key {key!r}", lineno, indent)
        allowed = _JOB_KEYS[job] if current == job else _SECTION_KEYS[current]
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{current}]", lineno, indent)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r}", lineno, indent)
        vcol = len(key_part) + 2
        offset = len(value_part) - len(value_part.lstrip())
        value = _parse_value(value_part.strip(), lineno, vcol + offset)
        sections[current][key] = Entry(value, lineno, vcol + offset)
    for key in _REQUIRED[job]:
        if key not in sections[job]:
            raise ConfigError(f"missing required key {key!r} in [{job}]")
    return sections


class _Reader:
    """Typed access to one section with located errors."""

    def __init__(self, entries: dict[str, Entry], section: str):
        self.entries, self.section = entries, section

    def has(self, key) -> bool:
        return key in self.entries

    def _fail(self, key, msg):
        e = self.entries[key]
        raise ConfigError(f"{self.section}.{key}: {msg}", e.line, e.col)

    def get(self, key, kind, default=None, *, positive=False, nonneg=False, lo=None, hi=None):
        if key not in self.entries:
            return default
        val = self.entries[key].value
        if kind is int:
            if isinstance(val, bool) or not isinstance(val, int):
                self._fail(key, f"expected an integer, got {val!r}")
        elif kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                self._fail(key, f"expected a number, got {val!r}")
            val = float(val)
        elif kind is str:
            if not isinstance(val, str):
                self._fail(key, f"expected a word, got {val!r}")
        elif kind is bool:
            if not isinstance(val, bool):
                self._fail(key, f"expected true or false, got {val!r}")
        if positive and not val > 0:
            self._fail(key, f"must be positive, got {val}")
        if nonneg and not val >= 0:
            self._fail(key, f"must be nonnegative, got {val}")
        if lo is not None and val < lo:
            self._fail(key, f"must be >= {lo}, got {val}")
        if hi is not None and val > hi:
            self._fail(key, f"must be <= {hi}, got {val}")
        return val

    def numbers(self, key, default=None, *, positive=False, nested=False):
        if key not in self.entries:
            return default
        val = self.entries[key].value
        if not isinstance(val, list) or not val:
            self._fail(key, "expected a nonempty list")
        rows = val if nested else [val]
        out = []
        for row in rows:
            if not isinstance(row, list) or not row:
                self._fail(key, "expected a list of lists" if nested else "expected a list")
            for v in row:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    self._fail(key, f"expected numbers, got {v!r}")
                if positive and not v > 0:
                    self._fail(key, f"entries must be positive, got {v}")
            out.append([float(v) for v in row])
        return out if nested else out[0]


def _descriptor(r: _Reader) -> FunctionalDescriptor:
    kind = r.get("kind", str)
    kind = KIND_ALIASES.get(kind, kind)
    params = {}
    if r.has("k"):
        params["k"] = r.get("k", int, lo=1)
    if r.has("delta"):
        params["delta"] = r.get("delta", int, nonneg=True)
    for key in ("s", "b", "r"):
        if r.has(key):
            params[key] = r.get(key, float, positive=True)
    if r.has("q_intercept") or r.has("q_coef"):
        params["q"] = ColorThreshold(r.get("q_intercept", float, 0.0),
                                     tuple(r.numbers("q_coef", default=[])))
    try:
        return FunctionalDescriptor(kind, **params)
    except ValueError as exc:
        e = r.entries["kind"]
        raise ConfigError(str(exc), e.line, e.col) from None


def _density(sections, base: Path | None) -> Density:
    entries = sections.get("density", {})
    r = _Reader(entries, "density")
    kind = r.get("kind", str, "uniform")
    if kind == "uniform":
        lower = r.numbers("lower", [0.0, 0.0])
        upper = r.numbers("upper", [1.0] * len(lower))
        try:
            return Density.uniform(lower, upper)
        except ValueError as exc:
            raise ConfigError(f"density: {exc}") from None
    if kind == "grid":
        if not r.has("file"):
            raise ConfigError("density: grid kind needs 'file'")
        path = Path(r.get("file", str))
        full = path if path.is_absolute() or base is None else base / path
        try:
            dens = load_density_csv(full)
        except (OSError, ValueError) as exc:
            e = entries["file"]
            raise ConfigError(f"density.file: {exc}", e.line, e.col) from None
        dens.source = str(path)
        return dens
    r._fail("kind", f"unknown density kind {kind!r}")


def _test_function(sections) -> TestFunction:
    r = _Reader(sections.get("test_function", {}), "test_function")
    kind = r.get("kind", str, "constant")
    try:
        return TestFunction(kind=kind, value=r.get("value", float, 1.0),
                            lower=tuple(r.numbers("lower", [])), upper=tuple(r.numbers("upper", [])),
                            coef=tuple(r.numbers("coef", [])), offset=r.get("offset", float, 0.0))
    except ValueError as exc:
        raise ConfigError(f"test_function: {exc}") from None


@dataclass
class TailJob:
    descriptor: FunctionalDescriptor
    density: Density
    rule: str
    probe: float | None
    lambdas: list[float]
    points: list[list[float]] | None
    replicates: int
    t: list[float]
    seed: int


@dataclass
class VerifyJob:
    descriptor: FunctionalDescriptor
    density: Density
    rule: str
    probe: float | None
    lam: float
    trials: int
    seed: int
    instances: int = 1
    halve_radius: bool = False
    negative_control: bool = False


@dataclass
class BoundsJob:
    values: dict = field(default_factory=dict)


def parse_config(text: str, job: str = "experiment", base: Path | None = None):
    """Parse a job file into ExperimentConfig, TailJob, VerifyJob or BoundsJob."""
    sections = parse_sections(text, job)
    r = _Reader(sections[job], job)
    if job == "bounds":
        vals = {}
        for key in ("q", "theta", "p", "gamma", "lambda", "variance", "C", "alpha"):
            if r.has(key):
                vals[key] = r.get(key, float, positive=True)
        for key in ("D", "V", "d"):
            if r.has(key):
                vals[key] = r.get(key, int, lo=1)
        if r.has("q"):
            r.get("q", float, lo=2.0, hi=3.0)
            if vals["q"] == 2.0:
                r._fail("q", "must lie in (2, 3]")
        return BoundsJob(vals)
    desc = _descriptor(r)
    density = _density(sections, base)
    seed = r.get("seed", int, nonneg=True)
    if job == "experiment":
        lambdas = r.numbers("lambda", positive=True)
        if any(v < 2 for v in lambdas):
            r._fail("lambda", "values must be >= 2")
        if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
            r._fail("lambda", "must be strictly increasing")
        return ExperimentConfig(desc, density, _test_function(sections), lambdas,
                                r.get("m", int, lo=2), seed, r.get("rho_alpha", float, positive=True))
    rule = r.get("rule", str)
    rule = RULE_ALIASES.get(rule, rule)
    if rule not in RULE_ALIASES.values():
        r._fail("rule", f"unknown rule {rule!r}")
    probe = r.get("probe", float, positive=True)
    if job == "tails":
        return TailJob(desc, density, rule, probe, r.numbers("lambda", positive=True),
                       r.numbers("points", nested=True), r.get("replicates", int, lo=1),
                       r.numbers("t", positive=True), seed)
    lam = r.get("lambda", float, lo=1.0)
    control = r.get("negative_control", bool, False)
    if control and (desc.kind != "independence-ratio" or rule != "component-extent-plus-2b"):
        r._fail("negative_control", "needs kind = independence-ratio and rule = component")
    return VerifyJob(desc, density, rule, probe, lam, r.get("trials", int, lo=1), seed,
                     r.get("instances", int, 1, lo=1), r.get("halve_radius", bool, False), control)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _descriptor_lines(desc: FunctionalDescriptor) -> list[str]:
    lines = [f"kind = {desc.kind}"]
    for key in ("k", "s", "delta", "b", "r"):
        val = getattr(desc, key)
        if val is not None:
            lines.append(f"{key} = {_fmt(val)}")
    if desc.q is not None:
        if not isinstance(desc.q, ColorThreshold):
            raise ValueError("only ColorThreshold color maps can be written to a config file")
        lines.append(f"q_intercept = {_fmt(float(desc.q.intercept))}")
        if desc.q.coef:
            lines.append(f"q_coef = {_fmt([float(c) for c in desc.q.coef])}")
    return lines


def _density_lines(density: Density) -> list[str]:
    if density.kind == "grid":
        source = getattr(density, "source", None)
        if source is None:
            raise ValueError("grid density without a source file cannot be rendered")
        return ["[density]", "kind = grid", f'file = "{source}"']
    return ["[density]", "kind = uniform",
            f"lower = {_fmt(density.domain.lower.tolist())}",
            f"upper = {_fmt(density.domain.upper.tolist())}"]


def render_config(cfg) -> str:
    """Inverse of ``parse_config`` for every job object it returns."""
    if isinstance(cfg, ExperimentConfig):
        lines = ["[experiment]", *_descriptor_lines(cfg.descriptor),
                 f"lambda = {_fmt(list(cfg.lambdas))}", f"m = {cfg.replicates}", f"seed = {cfg.seed}"]
        if cfg.rho_alpha is not None:
            lines.append(f"rho_alpha = {_fmt(float(cfg.rho_alpha))}")
        lines += _density_lines(cfg.density)
        f = cfg.test_function
        lines += ["[test_function]", f"kind = {f.kind}", f"value = {_fmt(float(f.value))}",
                  f"offset = {_fmt(float(f.offset))}"]
        for key in ("lower", "upper", "coef"):
            if getattr(f, key):
                lines.append(f"{key} = {_fmt([float(v) for v in getattr(f, key)])}")
        return "\n".join(lines) + "\n"
    if isinstance(cfg, TailJob):
        lines = ["[tails]", *_descriptor_lines(cfg.descriptor), f"rule = {cfg.rule}",
                 f"lambda = {_fmt(list(cfg.lambdas))}", f"replicates = {cfg.replicates}",
                 f"t = {_fmt(list(cfg.t))}", f"seed = {cfg.seed}"]
        if cfg.probe is not None:
            lines.append(f"probe = {_fmt(float(cfg.probe))}")
        if cfg.points is not None:
            lines.append(f"points = {_fmt(cfg.points)}")
        return "\n".join(lines + _density_lines(cfg.density)) + "\n"
    if isinstance(cfg, VerifyJob):
        lines = ["[verify-stab]", *_descriptor_lines(cfg.descriptor), f"rule = {cfg.rule}",
                 f"lambda = {_fmt(float(cfg.lam))}", f"trials = {cfg.trials}", f"seed = {cfg.seed}",
                 f"instances = {cfg.instances}", f"halve_radius = {_fmt(cfg.halve_radius)}",
                 f"negative_control = {_fmt(cfg.negative_control)}"]
        if cfg.probe is not None:
            lines.append(f"probe = {_fmt(float(cfg.probe))}")
        return "\n".join(lines + _density_lines(cfg.density)) + "\n"
    if isinstance(cfg, BoundsJob):
        return "\n".join(["[bounds]"] + [f"{k} = {_fmt(v)}" for k, v in cfg.values.items()]) + "\n"
    raise TypeError(f"cannot render {type(cfg).__name__}")
