"""Line-oriented configuration files.

::

    # comment
    [factor X1]
    states = o1 g1 g2          # first state is the root
    edge o1 g1 1
    edge g1 g2 1; edge g2 g1 1/2; edge g2 o1 0.5

    [product]
    alphas = 1/2 1/2

    [run]                      # optional
    walkers = 10000
    horizon = 10000
    seed = 1
    tol = 1e-4

Statements end at a newline or ``;``.  Probabilities are decimal strings or
exact fractions ``p/q``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .errors import ParseError, ValidationError
from .factor import FactorChain
from .xi import FreeProductSpec

_SECTION = re.compile(r"^\[\s*(\w+)(?:\s+(\S+))?\s*\]$")
RUN_KEYS = {"walkers": int, "horizon": int, "seed": int, "tol": float}


@dataclass
class RunConfig:
    source: str
    command: str = "analyze"
    tol: float | None = None
    walkers: int | None = None
    horizon: int | None = None
    seed: int = 0
    out: str | None = None
    fmt: str = "text"

    def __post_init__(self):
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tolerance must be positive")
        for name in ("walkers", "horizon"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be positive")


def _statements(text: str):
    """Yield ``(line, column, statement)`` with comments stripped; columns are 1-based."""
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        start = 0
        for part in line.split(";"):
            stripped = part.strip()
            if stripped:
                yield ln, start + (len(part) - len(part.lstrip())) + 1, stripped
            start += len(part) + 1


def _fraction(tok: str, ln: int, col: int) -> Fraction:
    try:
        value = Fraction(tok)
    except (ValueError, ZeroDivisionError):
        raise ParseError(f"not a probability: {tok!r}", ln, col) from None
    return value


def _tokens(stmt: str, col: int):
    """Whitespace/comma separated tokens with their columns."""
    return [(m.group(0), col + m.start()) for m in re.finditer(r"[^\s,]+", stmt)]


def _key_value(stmt: str, ln: int, col: int):
    if "=" not in stmt:
        raise ParseError(f"expected 'key = value', got {stmt!r}", ln, col)
    key, value = stmt.split("=", 1)
    vcol = col + len(key) + 1 + (len(value) - len(value.lstrip()))
    return key.strip(), value.strip(), vcol


def parse_config(text: str, source: str = "<config>") -> tuple[RunConfig, FreeProductSpec]:
    factors: list[dict] = []
    alphas = None
    run: dict = {}
    section = None
    for ln, col, stmt in _statements(text):
        m = _SECTION.match(stmt)
        if stmt.startswith("["):
            if not m:
                raise ParseError(f"malformed section header {stmt!r}", ln, col)
            kind, name = m.group(1), m.group(2)
            if kind == "factor":
                if name is None:
                    raise ParseError("factor section needs a name", ln, col)
                if any(f["name"] == name for f in factors):
                    raise ParseError(f"duplicate factor {name!r}", ln, col)
                factors.append({"name": name, "states": None, "edges": [], "line": ln})
                section = "factor"
            elif kind in ("product", "run") and name is None:
                section = kind
            else:
                raise ParseError(f"unknown section {stmt!r}", ln, col)
            continue
        if section is None:
            raise ParseError("statement outside any section", ln, col)
        if section == "factor":
            cur = factors[-1]
            if stmt.split(None, 1)[0] == "edge":
                toks = _tokens(stmt, col)[1:]
                if len(toks) != 3:
                    raise ParseError("edge needs: source target probability", ln, col)
                if cur["states"] is None:
                    raise ParseError("edge before states", ln, col)
                for tok, c in toks[:2]:
                    if tok not in cur["states"]:
                        raise ParseError(f"unknown state {tok!r}", ln, c)
                key = (toks[0][0], toks[1][0])
                if any((e[0], e[1]) == key for e in cur["edges"]):
                    raise ParseError(f"duplicate edge {key[0]} -> {key[1]}", ln, col)
                cur["edges"].append((toks[0][0], toks[1][0], _fraction(toks[2][0], ln, toks[2][1])))
                continue
            key, value, vcol = _key_value(stmt, ln, col)
            if key != "states":
                raise ParseError(f"unknown key {key!r} in factor section", ln, col)
            if cur["states"] is not None:
                raise ParseError("states given twice", ln, col)
            cur["states"] = [t for t, _ in _tokens(value, vcol)]
            if not cur["states"]:
                raise ParseError("empty state list", ln, vcol)
        elif section == "product":
            key, value, vcol = _key_value(stmt, ln, col)
            if key != "alphas":
                raise ParseError(f"unknown key {key!r} in product section", ln, col)
            alphas = [_fraction(t, ln, c) for t, c in _tokens(value, vcol)]
        else:
            key, value, vcol = _key_value(stmt, ln, col)
            if key not in RUN_KEYS:
                raise ParseError(f"unknown key {key!r} in run section", ln, col)
            try:
                run[key] = RUN_KEYS[key](value)
            except ValueError:
                raise ParseError(f"bad value for {key}: {value!r}", ln, vcol) from None
    if not factors:
        raise ParseError("no factor sections")
    if alphas is None:
        raise ParseError("missing [product] alphas")
    chains = []
    for i, f in enumerate(factors):
        if f["states"] is None:
            raise ParseError(f"factor {f['name']!r} has no states", f["line"])
        chains.append(FactorChain.from_edges(i, f["states"], f["edges"]))
    if len(alphas) != len(chains):
        raise ValidationError("invalid specification", [f"{len(alphas)} weights for {len(chains)} factors"])
    spec = FreeProductSpec(tuple(chains), [float(a) for a in alphas])
    violations = spec.structural_violations()
    if violations:
        raise ValidationError("invalid specification", violations)
    try:
        cfg = RunConfig(source, **run)
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    return cfg, spec


def format_config(spec: FreeProductSpec) -> str:
    """Inverse of ``parse_config`` for the spec part (probabilities as decimals)."""
    lines = []
    for f in spec.factors:
        lines.append(f"[factor F{f.factor_id}]")
        lines.append("states = " + " ".join(f.states))
        for x in range(f.size):
            for y in range(f.size):
                if f.transitions[x, y] > 0:
                    lines.append(f"edge {f.states[x]} {f.states[y]} {float(f.transitions[x, y])!r}")
        lines.append("")
    lines.append("[product]")
    lines.append("alphas = " + " ".join(repr(float(a)) for a in spec.alphas))
    return "\n".join(lines) + "\n"
