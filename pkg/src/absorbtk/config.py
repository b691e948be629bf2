"""Line-oriented config and instance files.

Grammar::

    # comment
    [section]
    key = value
    key = matrix
    rows cols
    re,im re,im ...        (row-major, one or more lines, `rows*cols` pairs)

Repeating a key appends to a list. Floats are written with ``repr`` so a
dump followed by a load reproduces every matrix bit for bit.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cstar import AlgebraContext, InstanceSpec, builtin_instance
from .errors import ConfigError, DomainError, NotInAlgebraError
from .module import ModulePresentation, gram

__all__ = [
    "parse_sections",
    "format_matrix",
    "dump_instance",
    "load_instance",
    "loads_instance",
    "ExperimentConfig",
    "load_config",
    "DEFAULT_TOLERANCES",
    "DEFAULT_LEVELS",
]


def _parse_complex(tok, lineno, col):
    re_s, sep, im_s = tok.partition(",")
    try:
        return complex(float(re_s), float(im_s) if sep else 0.0)
    except ValueError:
        raise ConfigError(f"bad complex entry {tok!r}", lineno, col) from None


def parse_sections(text):
    """Parse text into ``{section: {key: [values]}}``.

    Scalar values are stripped strings; matrix values are complex arrays.
    """
    sections = {}
    current = None
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        raw = lines[i]
        line = raw.split("#", 1)[0].rstrip()
        i += 1
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        line = line.strip()
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError("malformed section header", lineno, indent + 1)
            current = sections.setdefault(line[1:-1].strip(), {})
            continue
        if current is None:
            raise ConfigError("key outside of any section", lineno, indent + 1)
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError("expected 'key = value'", lineno, indent + 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError("empty key", lineno, indent + 1)
        if value == "matrix":
            value, i = _read_matrix(lines, i)
        current.setdefault(key, []).append(value)
    return sections


def _read_matrix(lines, i):
    # skip blank/comment lines before the header
    while i < len(lines) and not lines[i].split("#", 1)[0].strip():
        i += 1
    if i >= len(lines):
        raise ConfigError("missing matrix header", len(lines), 1)
    header = lines[i].split("#", 1)[0].split()
    lineno = i + 1
    if len(header) != 2:
        raise ConfigError("matrix header must be 'rows cols'", lineno, 1)
    try:
        rows, cols = int(header[0]), int(header[1])
    except ValueError:
        raise ConfigError("matrix header must be two integers", lineno, 1) from None
    if rows < 1 or cols < 1:
        raise ConfigError("matrix dimensions must be positive", lineno, 1)
    i += 1
    need = rows * cols
    vals = []
    while len(vals) < need:
        if i >= len(lines):
            raise ConfigError(f"matrix ended after {len(vals)} of {need} entries", len(lines), 1)
        raw = lines[i].split("#", 1)[0]
        lineno = i + 1
        i += 1
        pos = 0
        for tok in raw.split():
            col = raw.index(tok, pos) + 1
            pos = col - 1 + len(tok)
            if len(vals) == need:
                raise ConfigError("too many matrix entries", lineno, col)
            vals.append(_parse_complex(tok, lineno, col))
    return np.array(vals, dtype=complex).reshape(rows, cols), i


def format_matrix(M):
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    out = [f"{M.shape[0]} {M.shape[1]}"]
    for row in M:
        out.append(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row))
    return "\n".join(out)


def dump_instance(ctx: AlgebraContext, pres: ModulePresentation):
    """Serialize a context and presentation to the instance-file format."""
    parts = ["[algebra]", f"name = {ctx.name}", f"d = {ctx.d}",
             "D0 = matrix", format_matrix(ctx.D0)]
    for b in ctx.basis:
        parts += ["basis = matrix", format_matrix(b)]
    parts += ["", "[module]", f"m = {pres.m}", f"J = {pres.J}"]
    for g in pres.generators:
        parts += ["generator = matrix", format_matrix(g.reshape(pres.m * pres.d, pres.d))]
    return "\n".join(parts) + "\n"


def _one(sec, key, secname):
    if key not in sec:
        raise ConfigError(f"[{secname}] is missing '{key}'")
    vals = sec[key]
    if len(vals) != 1:
        raise ConfigError(f"[{secname}] '{key}' given {len(vals)} times")
    return vals[0]


def _int(value, what):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be an integer, got {value!r}") from None


def loads_instance(text):
    """Build and validate a context and presentation from instance-file text."""
    secs = parse_sections(text)
    for name in ("algebra", "module"):
        if name not in secs:
            raise ConfigError(f"missing [{name}] section")
    alg, mod = secs["algebra"], secs["module"]
    d = _int(_one(alg, "d", "algebra"), "d")
    name = alg.get("name", ["file"])[0]
    D0 = _one(alg, "D0", "algebra")
    basis = alg.get("basis", [])
    if not basis:
        raise ConfigError("[algebra] needs at least one basis matrix")
    if isinstance(D0, str) or any(isinstance(b, str) for b in basis):
        raise ConfigError("D0 and basis must be matrices")
    try:
        ctx = AlgebraContext(name, d, tuple(basis), D0)
        ctx.check()
    except DomainError as exc:
        raise ConfigError(str(exc), invariant=str(exc)) from None
    m = _int(_one(mod, "m", "module"), "m")
    J = _int(_one(mod, "J", "module"), "J")
    gens = mod.get("generator", [])
    if len(gens) != J:
        raise ConfigError(f"[module] declares J = {J} but lists {len(gens)} generators")
    shaped = []
    for j, g in enumerate(gens):
        if isinstance(g, str) or g.shape != (m * d, d):
            raise ConfigError(f"generator {j + 1} must be a {m * d} x {d} matrix")
        shaped.append(g.reshape(m, d, d))
    try:
        pres = ModulePresentation(ctx, tuple(shaped))
        gram(pres)
    except NotInAlgebraError as exc:
        raise ConfigError(str(exc), invariant="not-in-algebra") from None
    except DomainError as exc:
        raise ConfigError(str(exc), invariant=str(exc)) from None
    return ctx, pres


def load_instance(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read instance file {path}: {exc.strerror}") from None
    return loads_instance(text)


# --- experiment configs ---------------------------------------------------------

DEFAULT_TOLERANCES = {
    "telescoping": 1e-10,
    "dfct_slack": 1e-9,
    "commutator": 1e-10,
    "agreement": 1e-8,
    "decay_growth": 1.1,
    "hermitian": 1e-12,
    "zero": 1e-12,
    "composition": 1e-12,
    "gns": 1e-10,
    "defect_minus": 0.9,
    "defect_plus": 0.1,
    "defect_gap": 0.7,
    "regularized": 0.2,
    "symmetry": 1e-10,
    "lift_apply": 0.01,
    "model_slack": 1.25,
    "normalization": 1e-12,
}

DEFAULT_LEVELS = (8, 16, 32, 64)


@dataclass
class ExperimentConfig:
    instances: list = field(default_factory=lambda: ["scalar", "pauli", "clockshift:8", "projective:4"])
    levels: tuple = DEFAULT_LEVELS
    decay_range: tuple = (16, 512)
    chain_max: int = 512
    L: float = 30.0
    divisions: tuple = (512, 1024, 2048, 4096)
    lift_L: float = 20.0
    lift_N: int = 4096
    lift_divisions: int = 4096
    samples: int = 1000
    seed: int = 0
    threads: int = 1
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    output_dir: str = field(default_factory=lambda: os.environ.get("ABSORBTK_OUT", "absorbtk-out"))

    def __post_init__(self):
        self.validate()

    def validate(self):
        lv = list(self.levels)
        if not lv or any(b <= a for a, b in zip(lv, lv[1:])) or lv[0] < 1:
            raise ConfigError("levels must be a non-empty ascending list of positive integers")
        for k, v in self.tolerances.items():
            if not v > 0:
                raise ConfigError(f"tolerance {k} must be positive")
        lo, hi = self.decay_range
        if not 1 <= lo < hi <= self.chain_max:
            raise ConfigError("decay_range must satisfy 1 <= lo < hi <= chain_max")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def set_tolerance(self, name, value):
        if name not in DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown tolerance {name!r}")
        try:
            v = float(value)
        except ValueError:
            raise ConfigError(f"tolerance {name} must be a number") from None
        if not v > 0:
            raise ConfigError(f"tolerance {name} must be positive")
        self.tolerances[name] = v

    def resolve_instances(self):
        """``(label, ctx, presentation)`` for every configured instance."""
        out = []
        for inst in self.instances:
            if inst.startswith("file:"):
                path = inst[5:]
                ctx, pres = load_instance(path)
                out.append((Path(path).stem, ctx, pres))
            else:
                spec = InstanceSpec.parse(inst)
                ctx, pres = builtin_instance(spec)
                out.append((spec.label(), ctx, pres))
        return out


def _ints(values, what):
    out = []
    for v in values:
        for tok in v.replace(",", " ").split():
            out.append(_int(tok, what))
    return tuple(out)


def _float(value, what):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{what} must be a number, got {value!r}") from None


def load_config(path=None, text=None):
    """Read an experiment config; every section and key is optional.

    Sections: ``[instance]`` (``kind``/``file``, repeatable), ``[run]``
    (``levels``, ``decay_range``, ``chain_max``, ``samples``, ``seed``,
    ``threads``, ``output_dir``), ``[grid]`` (``L``, ``divisions``,
    ``lift_L``, ``lift_N``, ``lift_divisions``) and ``[tolerances]``.
    """
    if text is None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    secs = parse_sections(text)
    unknown = set(secs) - {"instance", "run", "grid", "tolerances"}
    if unknown:
        raise ConfigError(f"unknown section [{sorted(unknown)[0]}]")
    kw = {}
    inst = secs.get("instance", {})
    names = list(inst.get("kind", [])) + [f"file:{p}" for p in inst.get("file", [])]
    if names:
        for n in names:
            if not n.startswith("file:"):
                InstanceSpec.parse(n)
        kw["instances"] = names
    run = secs.get("run", {})
    if "levels" in run:
        kw["levels"] = _ints(run["levels"], "levels")
    if "decay_range" in run:
        kw["decay_range"] = _ints(run["decay_range"], "decay_range")
        if len(kw["decay_range"]) != 2:
            raise ConfigError("decay_range needs two integers")
    for key in ("chain_max", "samples", "seed", "threads"):
        if key in run:
            kw[key] = _int(run[key][-1], key)
    if "output_dir" in run:
        kw["output_dir"] = run["output_dir"][-1]
    grid = secs.get("grid", {})
    for key in ("L", "lift_L"):
        if key in grid:
            kw[key] = _float(grid[key][-1], key)
    for key in ("lift_N", "lift_divisions"):
        if key in grid:
            kw[key] = _int(grid[key][-1], key)
    if "divisions" in grid:
        kw["divisions"] = _ints(grid["divisions"], "divisions")
    cfg = ExperimentConfig(**kw)
    for name, vals in secs.get("tolerances", {}).items():
        cfg.set_tolerance(name, vals[-1])
    return cfg

