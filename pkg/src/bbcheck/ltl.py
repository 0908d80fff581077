"""Safety-LTL fragment: parsing, desugaring, horizons, finite-trace verdicts.

Concrete syntax (ASCII):

    true false ! & | -> X U F G    bounds [i,j) with `inf` for an open end
    atoms match [A-Za-z_][A-Za-z0-9_]* and may not be reserved words

Precedence: unary (!, X, F, G) > U > & > | > ->, with U right-associative.
Bounds attach to U, F, and G; a missing bound means [0,inf).  A lower bound
of `inf` is rejected at parse time.

Evaluation on finite traces is three-valued: True when the observed prefix
already forces satisfaction, False when it forces violation, Inconclusive
otherwise.  The evaluator is a direct recursion over the satisfaction
clauses with unknown positions propagated through strong-Kleene connectives;
it never mis-decides, and it fully decides every bounded formula once the
trace reaches the formula's horizon.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .mdp import Output


@dataclass(frozen=True)
class Formula:
    pass


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class FalseF(Formula):
    pass


@dataclass(frozen=True)
class Atom(Formula):
    name: str


@dataclass(frozen=True)
class Not(Formula):
    sub: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Next(Formula):
    sub: Formula


@dataclass(frozen=True)
class Until(Formula):
    lo: int
    hi: int | None  # None means an open upper bound
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    lo: int
    hi: int | None
    sub: Formula


@dataclass(frozen=True)
class Globally(Formula):
    lo: int
    hi: int | None
    sub: Formula


CORE_NODES = (TrueF, Atom, Not, Or, Next, Until)


class Verdict(enum.Enum):
    TRUE = "true"
    FALSE = "false"
    INCONCLUSIVE = "inconclusive"


class LtlSyntaxError(ValueError):
    pass


# --- parsing ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<arrow>->)|(?P<num>\d+)|(?P<word>[A-Za-z_][A-Za-z0-9_]*)|(?P<sym>[()\[\],!&|]))"
)
_RESERVED = {"true", "false", "inf", "X", "U", "F", "G"}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            rest = text[pos:].lstrip()
            if not rest:
                break
            raise LtlSyntaxError(f"syntax error at position {pos}: unexpected {rest[0]!r}")
        if m.group("arrow"):
            tokens.append(("->", "->", m.start("arrow")))
        elif m.group("num"):
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("word"):
            word = m.group("word")
            kind = word if word in _RESERVED else "ident"
            tokens.append((kind, word, m.start("word")))
        else:
            sym = m.group("sym")
            tokens.append((sym, sym, m.start("sym")))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, kind: str | None = None) -> tuple[str, str, int]:
        tok = self.peek()
        if tok is None:
            raise LtlSyntaxError(
                f"syntax error at position {len(self.text)}: unexpected end of input"
            )
        if kind is not None and tok[0] != kind:
            raise LtlSyntaxError(
                f"syntax error at position {tok[2]}: expected {kind!r}, got {tok[1]!r}"
            )
        self.pos += 1
        return tok

    def parse(self) -> Formula:
        f = self.implies()
        tok = self.peek()
        if tok is not None:
            raise LtlSyntaxError(
                f"syntax error at position {tok[2]}: unexpected {tok[1]!r}"
            )
        return f

    def implies(self) -> Formula:
        left = self.disjunction()
        if self.peek() and self.peek()[0] == "->":
            self.take()
            return Implies(left, self.implies())
        return left

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while self.peek() and self.peek()[0] == "|":
            self.take()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self) -> Formula:
        f = self.until()
        while self.peek() and self.peek()[0] == "&":
            self.take()
            f = And(f, self.until())
        return f

    def until(self) -> Formula:
        left = self.unary()
        if self.peek() and self.peek()[0] == "U":
            self.take()
            lo, hi = self.bound()
            right = self.until()
            return Until(lo, hi, left, right)
        return left

    def bound(self) -> tuple[int, int | None]:
        if not (self.peek() and self.peek()[0] == "["):
            return 0, None
        self.take("[")
        tok = self.take()
        if tok[0] == "inf":
            raise LtlSyntaxError(
                f"syntax error at position {tok[2]}: lower bound may not be inf"
            )
        if tok[0] != "num":
            raise LtlSyntaxError(
                f"syntax error at position {tok[2]}: expected a number, got {tok[1]!r}"
            )
        lo = int(tok[1])
        self.take(",")
        tok = self.take()
        if tok[0] == "inf":
            hi: int | None = None
        elif tok[0] == "num":
            hi = int(tok[1])
        else:
            raise LtlSyntaxError(
                f"syntax error at position {tok[2]}: expected a number or inf"
            )
        self.take(")")
        if hi is not None and lo > hi:
            raise LtlSyntaxError(
                f"syntax error at position {tok[2]}: malformed bound [{lo},{hi})"
            )
        return lo, hi

    def unary(self) -> Formula:
        tok = self.peek()
        if tok is None:
            raise LtlSyntaxError(
                f"syntax error at position {len(self.text)}: unexpected end of input"
            )
        kind = tok[0]
        if kind == "!":
            self.take()
            return Not(self.unary())
        if kind == "X":
            self.take()
            return Next(self.unary())
        if kind == "F":
            self.take()
            lo, hi = self.bound()
            return Eventually(lo, hi, self.unary())
        if kind == "G":
            self.take()
            lo, hi = self.bound()
            return Globally(lo, hi, self.unary())
        if kind == "true":
            self.take()
            return TrueF()
        if kind == "false":
            self.take()
            return FalseF()
        if kind == "ident":
            self.take()
            return Atom(tok[1])
        if kind == "(":
            self.take()
            f = self.implies()
            self.take(")")
            return f
        raise LtlSyntaxError(f"syntax error at position {tok[2]}: unexpected {tok[1]!r}")


def parse(text: str) -> Formula:
    """Parse a formula; sugar nodes are preserved until `desugar`."""
    return _Parser(text).parse()


# --- desugaring ------------------------------------------------------------


def desugar(f: Formula) -> Formula:
    """Rewrite to the core constructors (true, atoms, !, |, X, U)."""
    if isinstance(f, (TrueF, Atom)):
        return f
    if isinstance(f, FalseF):
        return Not(TrueF())
    if isinstance(f, Not):
        return Not(desugar(f.sub))
    if isinstance(f, Or):
        return Or(desugar(f.left), desugar(f.right))
    if isinstance(f, And):
        return Not(Or(Not(desugar(f.left)), Not(desugar(f.right))))
    if isinstance(f, Implies):
        return Or(Not(desugar(f.left)), desugar(f.right))
    if isinstance(f, Next):
        return Next(desugar(f.sub))
    if isinstance(f, Until):
        return Until(f.lo, f.hi, desugar(f.left), desugar(f.right))
    if isinstance(f, Eventually):
        return Until(f.lo, f.hi, TrueF(), desugar(f.sub))
    if isinstance(f, Globally):
        return Not(Until(f.lo, f.hi, TrueF(), Not(desugar(f.sub))))
    raise TypeError(f"not a formula: {f!r}")


def is_core(f: Formula) -> bool:
    if isinstance(f, (TrueF, Atom)):
        return True
    if isinstance(f, Not):
        return is_core(f.sub)
    if isinstance(f, Or):
        return is_core(f.left) and is_core(f.right)
    if isinstance(f, Next):
        return is_core(f.sub)
    if isinstance(f, Until):
        return is_core(f.left) and is_core(f.right)
    return False


def atoms(f: Formula) -> frozenset[str]:
    if isinstance(f, Atom):
        return frozenset((f.name,))
    if isinstance(f, (TrueF, FalseF)):
        return frozenset()
    if isinstance(f, (Not, Next)):
        return atoms(f.sub)
    if isinstance(f, (Eventually, Globally)):
        return atoms(f.sub)
    if isinstance(f, (Or, And, Implies, Until)):
        return atoms(f.left) | atoms(f.right)
    raise TypeError(f"not a formula: {f!r}")


def horizon(f: Formula) -> Union[int, float]:
    """Number of outputs sufficient to decide a desugared formula (inf if none).

    horizon(p) = 1, horizon(X f) = 1 + horizon(f), and a bounded until
    [lo, hi) needs (hi - 1) + max of the operand horizons; Not and Or take
    the max of their operands.
    """
    if not is_core(f):
        raise ValueError("horizon expects a desugared formula")
    if isinstance(f, TrueF):
        return 0
    if isinstance(f, Atom):
        return 1
    if isinstance(f, Not):
        return horizon(f.sub)
    if isinstance(f, Or):
        return max(horizon(f.left), horizon(f.right))
    if isinstance(f, Next):
        return 1 + horizon(f.sub)
    if isinstance(f, Until):
        if f.hi is None:
            return float("inf")
        return (f.hi - 1) + max(horizon(f.left), horizon(f.right))
    raise TypeError(f"not a formula: {f!r}")


# --- three-valued evaluation -----------------------------------------------
#
# Truth values are True / False / None (unknown).  Positions at or beyond the
# end of the trace carry no information and are all equivalent; they are
# evaluated by the END rules below.


def _not3(v):
    return None if v is None else (not v)


def _or3(a, b):
    if a is True or b is True:
        return True
    if a is False and b is False:
        return False
    return None


def _and3(a, b):
    if a is False or b is False:
        return False
    if a is True and b is True:
        return True
    return None


def evaluate(outputs: Sequence, f: Formula) -> Verdict:
    """Three-valued verdict of a desugared formula on a finite output sequence.

    `outputs` may contain `Output` values or plain sets of atomic
    propositions.  Raises on an empty sequence or a non-core formula.
    """
    seq = [o.props if isinstance(o, Output) else frozenset(o) for o in outputs]
    if not seq:
        raise ValueError("empty output sequence")
    if not is_core(f):
        raise ValueError("evaluate expects a desugared formula")
    memo: dict[tuple[int, int], object] = {}
    v = _eval3(seq, 0, f, memo)
    if v is True:
        return Verdict.TRUE
    if v is False:
        return Verdict.FALSE
    return Verdict.INCONCLUSIVE


def _eval3(seq, i, f, memo):
    n = len(seq)
    if i > n:
        i = n
    key = (i, id(f))
    hit = memo.get(key)
    if hit is not None:
        return hit[0]
    if isinstance(f, TrueF):
        v = True
    elif isinstance(f, Atom):
        v = (f.name in seq[i]) if i < n else None
    elif isinstance(f, Not):
        v = _not3(_eval3(seq, i, f.sub, memo))
    elif isinstance(f, Or):
        v = _or3(_eval3(seq, i, f.left, memo), _eval3(seq, i, f.right, memo))
    elif isinstance(f, Next):
        v = _eval3(seq, i + 1, f.sub, memo)
    else:
        v = _until3(seq, i, f, memo)
    memo[key] = (v,)
    return v


def _until3(seq, i, f, memo):
    n = len(seq)
    lo, hi = f.lo, f.hi
    if hi is not None and hi <= lo:
        return False
    result = False
    prefix = True
    # Left operand must hold from the current position up to the witness.
    for m in range(i, i + lo):
        prefix = _and3(prefix, _eval3(seq, m, f.left, memo))
        if prefix is False:
            return False
    l = i + lo
    # Disjuncts at positions >= n all evaluate identically; one extra step
    # past the end covers them all.
    while (hi is None or l < i + hi) and l <= n:
        result = _or3(result, _and3(prefix, _eval3(seq, l, f.right, memo)))
        if result is True:
            return True
        prefix = _and3(prefix, _eval3(seq, l, f.left, memo))
        if prefix is False:
            return result
        l += 1
    if hi is None or i + hi > n + 1:
        result = _or3(result, _and3(prefix, _eval3(seq, n, f.right, memo)))
    return result


def format_formula(f: Formula) -> str:
    """Render a formula in the concrete syntax accepted by `parse`."""
    def bound(lo: int, hi: int | None) -> str:
        if lo == 0 and hi is None:
            return ""
        return f"[{lo},{'inf' if hi is None else hi})"

    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, Not):
        return f"!{_wrap(f.sub)}"
    if isinstance(f, Next):
        return f"X {_wrap(f.sub)}"
    if isinstance(f, Eventually):
        return f"F{bound(f.lo, f.hi)} {_wrap(f.sub)}"
    if isinstance(f, Globally):
        return f"G{bound(f.lo, f.hi)} {_wrap(f.sub)}"
    if isinstance(f, Or):
        return f"({format_formula(f.left)} | {format_formula(f.right)})"
    if isinstance(f, And):
        return f"({format_formula(f.left)} & {format_formula(f.right)})"
    if isinstance(f, Implies):
        return f"({format_formula(f.left)} -> {format_formula(f.right)})"
    if isinstance(f, Until):
        return f"({format_formula(f.left)} U{bound(f.lo, f.hi)} {format_formula(f.right)})"
    raise TypeError(f"not a formula: {f!r}")


def _wrap(f: Formula) -> str:
    text = format_formula(f)
    if isinstance(f, (TrueF, FalseF, Atom)) or text.startswith("("):
        return text
    return f"({text})"
