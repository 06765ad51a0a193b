"""Small fuzzy-inference engine for merge-slot scoring.

The rule base lives in a plain-text data file (see data/merge_rules_v1.txt)
so the selection policy can be swapped by pointing at a different file.
Inference is min-AND over triangular memberships with weighted-average
(centroid-of-singletons) defuzzification.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from .errors import ConfigurationError


@dataclass(frozen=True)
class Triangular:
    """Triangle (a, b, c): zero outside [a, c], one at b.

    a == b or b == c gives a vertical shoulder on that side.
    """

    a: float
    b: float
    c: float

    def __call__(self, x: float) -> float:
        if x < self.a or x > self.c:
            return 0.0
        if x == self.b:
            return 1.0
        if x < self.b:
            return (x - self.a) / (self.b - self.a)
        return (self.c - x) / (self.c - self.b)


@dataclass(frozen=True)
class FuzzyInput:
    name: str
    lo: float  # universe bounds; values are clamped before evaluation
    hi: float
    terms: dict[str, Triangular]

    def memberships(self, x: float) -> dict[str, float]:
        x = min(max(x, self.lo), self.hi)
        return {name: term(x) for name, term in self.terms.items()}


@dataclass(frozen=True)
class FuzzyRule:
    antecedents: tuple[str, ...]  # one term name per input, in input order
    consequent: str


@dataclass(frozen=True)
class FuzzyEngine:
    version: int
    inputs: tuple[FuzzyInput, ...]
    output_weights: dict[str, float]  # consequent term -> centroid weight
    rules: tuple[FuzzyRule, ...]

    def evaluate(self, values: Sequence[float]) -> float:
        """Score one candidate; zero when no rule fires."""
        if len(values) != len(self.inputs):
            raise ConfigurationError(
                f"expected {len(self.inputs)} input values, got {len(values)}")
        grades = [inp.memberships(v) for inp, v in zip(self.inputs, values)]
        num = 0.0
        den = 0.0
        for rule in self.rules:
            strength = min(g[t] for g, t in zip(grades, rule.antecedents))
            if strength > 0.0:
                num += strength * self.output_weights[rule.consequent]
                den += strength
        return num / den if den > 0.0 else 0.0


def parse_rule_base(text: str) -> FuzzyEngine:
    """Parse the plain-text rule-base grammar (see README for the format)."""
    version = None
    inputs: list[FuzzyInput] = []
    output_weights: dict[str, float] = {}
    rules: list[FuzzyRule] = []
    current: dict | None = None  # input block under construction

    def finish_input():
        nonlocal current
        if current is not None:
            if not current["terms"]:
                raise ConfigurationError(f"input '{current['name']}' has no terms")
            inputs.append(FuzzyInput(current["name"], current["lo"], current["hi"],
                                     current["terms"]))
            current = None

    mode = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "version":
                version = int(tok[1])
            elif tok[0] == "input":
                finish_input()
                if len(tok) != 5 or tok[2] != "universe":
                    raise ConfigurationError("expected: input <name> universe <lo> <hi>")
                current = {"name": tok[1], "lo": float(tok[3]), "hi": float(tok[4]),
                           "terms": {}}
                mode = "input"
            elif tok[0] == "output":
                finish_input()
                mode = "output"
            elif tok[0] == "term":
                if mode == "input":
                    if len(tok) != 6 or tok[2] != "tri":
                        raise ConfigurationError("expected: term <name> tri <a> <b> <c>")
                    a, b, c = float(tok[3]), float(tok[4]), float(tok[5])
                    if not (a <= b <= c) or a == c:
                        raise ConfigurationError(f"bad triangle ({a}, {b}, {c})")
                    current["terms"][tok[1]] = Triangular(a, b, c)
                elif mode == "output":
                    output_weights[tok[1]] = float(tok[2])
                else:
                    raise ConfigurationError("term outside an input/output block")
            elif tok[0] == "rule":
                finish_input()
                if "=>" not in tok:
                    raise ConfigurationError("rule missing '=>'")
                arrow = tok.index("=>")
                rules.append(FuzzyRule(tuple(tok[1:arrow]), tok[arrow + 1]))
            else:
                raise ConfigurationError(f"unknown directive '{tok[0]}'")
        except (ValueError, IndexError) as exc:
            raise ConfigurationError(f"rule base line {lineno}: {raw!r} ({exc})") from exc
    finish_input()

    if version is None:
        raise ConfigurationError("rule base must declare a version")
    if not rules:
        raise ConfigurationError("rule base declares no rules")
    engine = FuzzyEngine(version, tuple(inputs), output_weights, tuple(rules))
    n = len(engine.inputs)
    for rule in engine.rules:
        if len(rule.antecedents) != n:
            raise ConfigurationError(
                f"rule {rule} names {len(rule.antecedents)} antecedents, expected {n}")
        for inp, term in zip(engine.inputs, rule.antecedents):
            if term not in inp.terms:
                raise ConfigurationError(f"rule references unknown term '{term}' "
                                         f"of input '{inp.name}'")
        if rule.consequent not in output_weights:
            raise ConfigurationError(f"rule consequent '{rule.consequent}' has no weight")
    return engine


def load_rule_base(path: str) -> FuzzyEngine:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_rule_base(fh.read())


@lru_cache(maxsize=1)
def default_engine() -> FuzzyEngine:
    """The packaged merge-position rule base."""
    text = (importlib.resources.files("platoonsim") / "data" / "merge_rules_v1.txt") \
        .read_text(encoding="utf-8")
    return parse_rule_base(text)
