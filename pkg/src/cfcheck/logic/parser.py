"""Recursive-descent parser and printer for the causal temporal logic.

Grammar (whitespace-insensitive)::

    state  := "true" | atom | "!" state | state "&" state | state "|" state
            | state "->" state | "(" state ")" | probop | rewop
            | intrv "@" int "." (probop | rewop)
            | "D" "[" ilist "," ilist "]" "@" int "." (probop | rewop)
    probop := "P" bound "[" path "]"
    rewop  := "R" bound "[" "C" iv "]"
    path   := state | "!" path | path "&" path | path "|" path | path "->" path
            | path "U" iv path | "F" iv path | "G" iv path | "X" path | "(" path ")"
    intrv  := "[" ilist "]"          ilist := "empty" | "pi" "<-" ident {"," "pi" "<-" ident}
    bound  := ("<" | "<=" | ">" | ">=") number | "=?"
    iv     := "[" nat "," nat "]"    atom := '"' chars '"'

Precedence from tightest: unary operators, ``&``, ``|``, ``->``, ``U``.
``->`` and ``U`` are right-associative. Inside ``D[...]`` a ``;`` may separate
the two lists when either holds more than one replacement.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .ast import (
    COMPARATORS,
    QUERY,
    And,
    Atom,
    Cf,
    Delta,
    Eventually,
    Globally,
    Implies,
    Next,
    Not,
    Or,
    Prob,
    Reward,
    TrueF,
    Until,
    is_state_formula,
)

MAX_DEPTH = 200


class FormulaSyntaxError(ValueError):
    def __init__(self, offset: int, expected: set[str] | frozenset[str], message: str = ""):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = message or f"expected one of {sorted(self.expected)}"
        super().__init__(f"syntax error at byte {offset}: {detail}")


@dataclass(frozen=True)
class Token:
    kind: str  # op | ident | number | atom | eof
    text: str
    offset: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<atom>"[^"\\]*")
  | (?P<number>-?(?:\d+(?:\.\d+)?|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<op><=|>=|<-|->|=\?|[<>!&|()\[\],.@;])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    pos = 0
    byte_off = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(byte_off, {"token"}, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup
        if kind != "ws":
            toks.append(Token(kind, m.group(), byte_off))
        byte_off += len(m.group().encode("utf-8"))
        pos = m.end()
    toks.append(Token("eof", "", byte_off))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.depth = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "ident") and t.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise FormulaSyntaxError(self.tok.offset, {text})
        t = self.tok
        self.i += 1
        return t

    def fail(self, expected, message=""):
        raise FormulaSyntaxError(self.tok.offset, set(expected), message)

    def enter(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            self.fail({"shallower nesting"}, "formula nested too deeply")

    # grammar
    def parse(self):
        node = self.expr()
        if self.tok.kind != "eof":
            self.fail({"end of input", "&", "|", "->", "U"})
        return node

    def expr(self):
        self.enter()
        left = self.implication()
        if self.at("U"):
            self.i += 1
            lo, hi = self.interval()
            right = self.expr()
            left = Until(left, lo, hi, right)
        self.depth -= 1
        return left

    def implication(self):
        left = self.disjunction()
        if self.at("->"):
            self.i += 1
            self.enter()
            right = self.implication()
            self.depth -= 1
            return Implies(left, right)
        return left

    def disjunction(self):
        node = self.conjunction()
        while self.at("|"):
            self.i += 1
            node = Or(node, self.conjunction())
        return node

    def conjunction(self):
        node = self.unary()
        while self.at("&"):
            self.i += 1
            node = And(node, self.unary())
        return node

    def unary(self):
        self.enter()
        t = self.tok
        if self.at("!"):
            self.i += 1
            node = Not(self.unary())
        elif self.at("F") or self.at("G"):
            self.i += 1
            lo, hi = self.interval()
            arg = self.unary()
            node = Eventually(lo, hi, arg) if t.text == "F" else Globally(lo, hi, arg)
        elif self.at("X"):
            self.i += 1
            node = Next(self.unary())
        else:
            node = self.primary()
        self.depth -= 1
        return node

    def primary(self):
        t = self.tok
        if t.kind == "atom":
            self.i += 1
            return Atom(t.text[1:-1])
        if self.at("true"):
            self.i += 1
            return TrueF()
        if self.at("("):
            self.i += 1
            node = self.expr()
            self.expect(")")
            return node
        if self.at("P"):
            return self.probop()
        if self.at("R"):
            return self.rewop()
        if self.at("["):
            self.i += 1
            names = self.ilist()
            self.expect("]")
            offset = self.at_offset()
            return Cf(names, offset, self.quant_body())
        if self.at("D") and self.peek().text == "[":
            self.i += 2
            treat, control = self.delta_lists()
            self.expect("]")
            offset = self.at_offset()
            body = self.quant_body(allow_negative=True)
            return Delta(treat, control, offset, body)
        self.fail({"true", "atom", "(", "!", "F", "G", "X", "P", "R", "[", "D"})

    def at_offset(self) -> int:
        self.expect("@")
        t = self.tok
        if t.kind != "number" or not re.fullmatch(r"-?\d+", t.text):
            self.fail({"integer offset"})
        self.i += 1
        self.expect(".")
        return int(t.text)

    def quant_body(self, allow_negative: bool = False):
        if self.at("P"):
            return self.probop(allow_negative)
        if self.at("R"):
            return self.rewop()
        self.fail({"P", "R"})

    def ilist(self) -> tuple[str, ...]:
        if self.at("empty"):
            self.i += 1
            return ()
        names = [self.replacement()]
        while self.at(",") and self.peek().text == "pi":
            self.i += 1
            names.append(self.replacement())
        return tuple(names)

    def replacement(self) -> str:
        self.expect("pi")
        self.expect("<-")
        t = self.tok
        if t.kind != "ident":
            self.fail({"policy name"})
        self.i += 1
        return t.text

    def delta_lists(self):
        items: list = []
        seps: list[str] = []
        while True:
            if self.at("empty"):
                self.i += 1
                items.append(None)
            else:
                items.append(self.replacement())
            if self.at(",") or self.at(";"):
                seps.append(self.tok.text)
                self.i += 1
                continue
            break
        if ";" in seps:
            if seps.count(";") != 1:
                self.fail({"]"}, "at most one ';' inside D[...]")
            cut = seps.index(";") + 1
        elif len(items) == 2:
            cut = 1
        else:
            self.fail({";"}, "ambiguous D[...] lists; separate them with ';'")
        return self._as_list(items[:cut]), self._as_list(items[cut:])

    def _as_list(self, items) -> tuple[str, ...]:
        if items == [None]:
            return ()
        if None in items:
            self.fail({"pi"}, "'empty' cannot be combined with replacements")
        return tuple(items)

    def bound(self, allow_negative: bool):
        t = self.tok
        if self.at(QUERY):
            self.i += 1
            return QUERY, None
        if self.at("<-"):  # "P<-0.1": comparator followed by a negative number
            nxt = self.peek()
            if nxt.kind != "number" or nxt.text.startswith("-") or nxt.offset != t.offset + 2:
                self.fail({"number"})
            self.i += 2
            op, value = "<", -float(nxt.text)
        elif t.kind == "op" and t.text in COMPARATORS:
            self.i += 1
            num = self.tok
            if num.kind != "number":
                self.fail({"number"})
            self.i += 1
            op, value = t.text, float(num.text)
        else:
            self.fail({"<", "<=", ">", ">=", "=?"})
        if not math.isfinite(value):
            self.fail({"finite number"})
        return op, value

    def probop(self, allow_negative: bool = False):
        start = self.expect("P")
        op, value = self.bound(allow_negative)
        lo_ok = -1.0 if allow_negative else 0.0
        if value is not None and not lo_ok <= value <= 1.0:
            raise FormulaSyntaxError(start.offset, {"probability threshold"}, f"threshold {value} outside [{lo_ok:g}, 1]")
        self.expect("[")
        path = self.expr()
        self.expect("]")
        return Prob(op, value, path)

    def rewop(self):
        self.expect("R")
        op, value = self.bound(True)
        self.expect("[")
        self.expect("C")
        lo, hi = self.interval()
        self.expect("]")
        return Reward(op, value, lo, hi)

    def interval(self) -> tuple[int, int]:
        start = self.expect("[")
        lo = self.nat()
        self.expect(",")
        hi = self.nat()
        self.expect("]")
        if lo > hi:
            raise FormulaSyntaxError(start.offset, {"interval with a <= b"}, f"interval [{lo},{hi}] has a > b")
        return lo, hi

    def nat(self) -> int:
        t = self.tok
        if t.kind != "number" or not t.text.isdigit():
            self.fail({"natural number"})
        self.i += 1
        return int(t.text)


def parse_formula(text) -> object:
    """Parse ``text`` (str or UTF-8 bytes) into a state-formula syntax tree.

    Raises :class:`FormulaSyntaxError` with a byte offset on any failure.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormulaSyntaxError(exc.start, {"valid UTF-8"}, "input is not valid UTF-8") from None
    p = _Parser(text)
    node = p.parse()
    if not is_state_formula(node):
        raise FormulaSyntaxError(0, {"P[...]"}, "temporal operator outside a probabilistic operator")
    return node


def parse_path_formula(text: str):
    """Parse a path formula (temporal operators allowed at top level)."""
    return _Parser(text).parse()


# printing --------------------------------------------------------------------

_LEVEL = {Until: 0, Implies: 1, Or: 2, And: 3}
_ATOMIC = 5


def _level(node) -> int:
    return _LEVEL.get(type(node), _ATOMIC if not isinstance(node, (Not, Eventually, Globally, Next)) else 4)


def _num(x: float) -> str:
    return repr(float(x))


def _ilist(names: tuple[str, ...]) -> str:
    return ",".join(f"pi<-{n}" for n in names) if names else "empty"


def pretty_print(node) -> str:
    """Render ``node`` with minimal parentheses; ``parse(pretty(f)) == f``."""
    return _pp(node)


def _wrap(node, min_level: int) -> str:
    s = _pp(node)
    return f"({s})" if _level(node) < min_level else s


def _pp(node) -> str:
    if isinstance(node, TrueF):
        return "true"
    if isinstance(node, Atom):
        return f'"{node.name}"'
    if isinstance(node, Not):
        return "!" + _wrap(node.arg, 4)
    if isinstance(node, Next):
        return "X " + _wrap(node.arg, 4)
    if isinstance(node, Eventually):
        return f"F[{node.lo},{node.hi}] " + _wrap(node.arg, 4)
    if isinstance(node, Globally):
        return f"G[{node.lo},{node.hi}] " + _wrap(node.arg, 4)
    if isinstance(node, And):
        return f"{_wrap(node.left, 3)} & {_wrap(node.right, 4)}"
    if isinstance(node, Or):
        return f"{_wrap(node.left, 2)} | {_wrap(node.right, 3)}"
    if isinstance(node, Implies):
        return f"{_wrap(node.left, 2)} -> {_wrap(node.right, 1)}"
    if isinstance(node, Until):
        return f"{_wrap(node.left, 1)} U[{node.lo},{node.hi}] {_wrap(node.right, 0)}"
    if isinstance(node, Prob):
        return f"P{_bound(node.op, node.threshold)} [ {_pp(node.path)} ]"
    if isinstance(node, Reward):
        return f"R{_bound(node.op, node.threshold)} [ C[{node.lo},{node.hi}] ]"
    if isinstance(node, Cf):
        return f"[{_ilist(node.intervention)}]@{node.offset} . {_pp(node.body)}"
    if isinstance(node, Delta):
        sep = "," if len(node.treatment) <= 1 and len(node.control) <= 1 else ";"
        return f"D[{_ilist(node.treatment)}{sep}{_ilist(node.control)}]@{node.offset} . {_pp(node.body)}"
    raise TypeError(f"not a formula node: {node!r}")


def _bound(op: str, threshold) -> str:
    if op == QUERY:
        return "=?"
    return f"{op}{_num(threshold)}" if not (op == "<" and threshold < 0) else f"< {_num(threshold)}"
