"""Parser and CFA lowering for a small integer-only imperative language.

Besides the core grammar the parser accepts a few conveniences that desugar
into it: ``x++;``, ``x--;``, ``x += e;``, ``x -= e;`` and single-statement
bodies for ``if``/``while``/``else``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union

from .cfa import Cfa, Edge, frames
from .linear import FALSE, TRUE, Atom, Formula, LinearExpr, Role, Var, conj, disj


class ParseError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


class NonlinearError(ParseError):
    pass


class UndeclaredError(ParseError):
    pass


# ---------------------------------------------------------------------------
# AST.  Positions are excluded from equality so reparsing compares equal.


@dataclass(frozen=True)
class Expr:
    """Linear integer expression; ``nondet`` adds an arbitrary integer."""

    coeffs: tuple[tuple[str, int], ...] = ()
    const: int = 0
    nondet: bool = False
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    @staticmethod
    def make(coeffs: dict[str, int], const: int, nondet: bool, line=0, col=0) -> "Expr":
        items = tuple(sorted((k, v) for k, v in coeffs.items() if v != 0))
        return Expr(items, const, nondet, line, col)


@dataclass(frozen=True)
class Cmp:
    lhs: Expr
    op: str
    rhs: Expr
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Not:
    arg: "Cond"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BoolOp:
    op: str  # "&&" or "||"
    args: tuple["Cond", ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class NondetCond:
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


Cond = Union[Cmp, Not, BoolOp, NondetCond]


@dataclass(frozen=True)
class Decl:
    name: str
    init: Expr | None = None
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Assign:
    var: str
    expr: Expr
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Block:
    stmts: tuple["Stmt", ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class If:
    cond: Cond
    then: Block
    orelse: Block | None = None
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class While:
    cond: Cond
    body: Block
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Assert:
    cond: Cond
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Assume:
    cond: Cond
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


Stmt = Union[Assign, If, While, Assert, Assume, Block]


@dataclass(frozen=True)
class Program:
    decls: tuple[Decl, ...] = ()
    stmts: tuple[Stmt, ...] = ()

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.decls)


# ---------------------------------------------------------------------------
# Lexer

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+|//[^\n]*)
  | (?P<nl>\n)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\+\+|--|\+=|-=|<=|>=|==|!=|&&|\|\||[-+*/%<>=!(){};])
    """,
    re.VERBOSE,
)

KEYWORDS = {"int", "if", "else", "while", "assert", "assume"}
NONDET = {"nondet", "unknown"}


@dataclass(frozen=True)
class Token:
    kind: str  # "int", "ident", "op", "eof"
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    out: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            out.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1))
    return out


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.declared: set[str] = set()

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "ident") and t.text == text

    def take(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            t = self.tok
            found = t.text or "end of input"
            raise ParseError(f"expected {text!r}, found {found!r}", t.line, t.col)
        return self.take()

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "ident" or t.text in KEYWORDS or t.text in NONDET:
            raise ParseError(f"expected identifier, found {t.text or 'end of input'!r}", t.line, t.col)
        return self.take()

    def use(self, t: Token) -> str:
        if t.text not in self.declared:
            raise UndeclaredError(f"undeclared variable {t.text!r}", t.line, t.col)
        return t.text

    # -- program

    def program(self) -> Program:
        decls = []
        while self.at("int"):
            start = self.take()
            name = self.ident()
            init = None
            if self.at("="):
                self.take()
                init = self.expr()
            self.expect(";")
            if name.text in self.declared:
                raise ParseError(f"redeclared variable {name.text!r}", name.line, name.col)
            self.declared.add(name.text)
            decls.append(Decl(name.text, init, start.line, start.col))
        stmts = []
        while self.tok.kind != "eof":
            if self.at("int"):
                t = self.tok
                raise ParseError("declarations must precede statements", t.line, t.col)
            stmts.append(self.stmt())
        return Program(tuple(decls), tuple(stmts))

    def stmt(self) -> Stmt:
        t = self.tok
        if self.at("{"):
            return self.block()
        if self.at("if"):
            self.take()
            self.expect("(")
            c = self.cond()
            self.expect(")")
            then = self.body()
            orelse = None
            if self.at("else"):
                self.take()
                orelse = self.body()
            return If(c, then, orelse, t.line, t.col)
        if self.at("while"):
            self.take()
            self.expect("(")
            c = self.cond()
            self.expect(")")
            return While(c, self.body(), t.line, t.col)
        if self.at("assert") or self.at("assume"):
            kw = self.take().text
            self.expect("(")
            c = self.cond()
            self.expect(")")
            self.expect(";")
            return (Assert if kw == "assert" else Assume)(c, t.line, t.col)
        if t.kind == "ident" and t.text not in KEYWORDS:
            name = self.use(self.ident())
            op = self.tok
            if self.at("="):
                self.take()
                e = self.expr()
            elif self.at("++") or self.at("--"):
                self.take()
                e = Expr.make({name: 1}, 1 if op.text == "++" else -1, False, op.line, op.col)
            elif self.at("+=") or self.at("-="):
                self.take()
                rhs = self.expr()
                sign = 1 if op.text == "+=" else -1
                coeffs = {name: 1}
                for k, v in rhs.coeffs:
                    coeffs[k] = coeffs.get(k, 0) + sign * v
                e = Expr.make(coeffs, sign * rhs.const, rhs.nondet, rhs.line, rhs.col)
            else:
                raise ParseError(f"expected '=', found {op.text or 'end of input'!r}", op.line, op.col)
            self.expect(";")
            return Assign(name, e, t.line, t.col)
        raise ParseError(f"unexpected {t.text or 'end of input'!r}", t.line, t.col)

    def body(self) -> Block:
        if self.at("{"):
            return self.block()
        s = self.stmt()
        return Block((s,), s.line, s.col)

    def block(self) -> Block:
        t = self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise ParseError("unterminated block", self.tok.line, self.tok.col)
            stmts.append(self.stmt())
        self.take()
        return Block(tuple(stmts), t.line, t.col)

    # -- expressions

    def expr(self) -> Expr:
        start = self.tok
        coeffs: dict[str, int] = {}
        const = 0
        nondet = False
        sign = 1
        while True:
            c, k, nd = self.term()
            for name, v in c.items():
                coeffs[name] = coeffs.get(name, 0) + sign * v
            const += sign * k
            nondet = nondet or nd
            if self.at("+"):
                sign = 1
            elif self.at("-"):
                sign = -1
            else:
                break
            self.take()
        if self.at("*") or self.at("/") or self.at("%"):
            t = self.tok
            raise NonlinearError(f"nonlinear operator {t.text!r}", t.line, t.col)
        return Expr.make(coeffs, const, nondet, start.line, start.col)

    def term(self) -> tuple[dict[str, int], int, bool]:
        t = self.tok
        if self.at("-"):
            self.take()
            c, k, nd = self.term()
            return {n: -v for n, v in c.items()}, -k, nd
        if t.kind == "int":
            self.take()
            n = int(t.text)
            if self.at("*"):
                self.take()
                u = self.tok
                if u.kind == "int":
                    self.take()
                    return {}, n * int(u.text), False
                if u.kind == "ident" and u.text in NONDET:
                    raise NonlinearError("multiplication of nondet()", u.line, u.col)
                name = self.use(self.ident())
                self._no_product()
                return {name: n}, 0, False
            return {}, n, False
        if t.kind == "ident" and t.text in NONDET:
            self.take()
            self.expect("(")
            self.expect(")")
            self._no_product()
            return {}, 0, True
        if t.kind == "ident" and t.text not in KEYWORDS:
            tok = self.ident()
            if self.at("*"):
                self.take()
                u = self.tok
                if u.kind != "int":
                    raise NonlinearError(f"product of variable {tok.text!r} with a non-constant", u.line, u.col)
                self.take()
                name = self.use(tok)
                self._no_product()
                return {name: int(u.text)}, 0, False
            name = self.use(tok)
            if self.at("/") or self.at("%"):
                u = self.tok
                raise NonlinearError(f"operator {u.text!r} is not linear", u.line, u.col)
            return {name: 1}, 0, False
        if self.at("("):
            raise ParseError("parentheses are not allowed inside arithmetic expressions", t.line, t.col)
        raise ParseError(f"expected expression, found {t.text or 'end of input'!r}", t.line, t.col)

    def _no_product(self):
        if self.at("*") or self.at("/") or self.at("%"):
            u = self.tok
            raise NonlinearError(f"nonlinear operator {u.text!r}", u.line, u.col)

    # -- conditions

    def cond(self) -> Cond:
        t = self.tok
        args = [self.conj()]
        while self.at("||"):
            self.take()
            args.append(self.conj())
        return args[0] if len(args) == 1 else BoolOp("||", tuple(args), t.line, t.col)

    def conj(self) -> Cond:
        t = self.tok
        args = [self.atom()]
        while self.at("&&"):
            self.take()
            args.append(self.atom())
        return args[0] if len(args) == 1 else BoolOp("&&", tuple(args), t.line, t.col)

    def atom(self) -> Cond:
        t = self.tok
        if self.at("!"):
            self.take()
            return Not(self.atom(), t.line, t.col)
        if self.at("("):
            self.take()
            c = self.cond()
            self.expect(")")
            return c
        if t.kind == "ident" and t.text in NONDET and self.peek(3).text in (")", "&&", "||"):
            # a bare nondet() condition; nondet() on one side of a comparison is an expression
            self.take()
            self.expect("(")
            self.expect(")")
            return NondetCond(t.line, t.col)
        lhs = self.expr()
        op = self.tok
        if op.text not in _RELOPS:
            raise ParseError(f"expected comparison operator, found {op.text or 'end of input'!r}", op.line, op.col)
        self.take()
        rhs = self.expr()
        return Cmp(lhs, op.text, rhs, t.line, t.col)


_RELOPS = ("<", "<=", ">", ">=", "==", "!=")


def parse(text: str) -> Program:
    return _Parser(text).program()


# ---------------------------------------------------------------------------
# Pretty printer


def format_expr(e: Expr) -> str:
    parts: list[str] = []
    for name, k in e.coeffs:
        mag = abs(k)
        body = name if mag == 1 else f"{mag}*{name}"
        parts.append(("- " if k < 0 else "+ ") + body)
    if e.nondet:
        parts.append("+ nondet()")
    if e.const or not parts:
        parts.append(("- " if e.const < 0 else "+ ") + str(abs(e.const)))
    s = " ".join(parts)
    return s[2:] if s.startswith("+ ") else "-" + s[2:]


def format_cond(c: Cond) -> str:
    if isinstance(c, Cmp):
        return f"{format_expr(c.lhs)} {c.op} {format_expr(c.rhs)}"
    if isinstance(c, Not):
        return f"!({format_cond(c.arg)})"
    if isinstance(c, NondetCond):
        return "nondet()"
    return f" {c.op} ".join(f"({format_cond(a)})" for a in c.args)


def _fmt_stmt(s: Stmt, ind: str) -> Iterator[str]:
    if isinstance(s, Assign):
        yield f"{ind}{s.var} = {format_expr(s.expr)};"
    elif isinstance(s, Assert):
        yield f"{ind}assert({format_cond(s.cond)});"
    elif isinstance(s, Assume):
        yield f"{ind}assume({format_cond(s.cond)});"
    elif isinstance(s, Block):
        yield f"{ind}{{"
        for x in s.stmts:
            yield from _fmt_stmt(x, ind + "  ")
        yield f"{ind}}}"
    elif isinstance(s, If):
        yield f"{ind}if ({format_cond(s.cond)}) {{"
        for x in s.then.stmts:
            yield from _fmt_stmt(x, ind + "  ")
        if s.orelse is not None:
            yield f"{ind}}} else {{"
            for x in s.orelse.stmts:
                yield from _fmt_stmt(x, ind + "  ")
        yield f"{ind}}}"
    elif isinstance(s, While):
        yield f"{ind}while ({format_cond(s.cond)}) {{"
        for x in s.body.stmts:
            yield from _fmt_stmt(x, ind + "  ")
        yield f"{ind}}}"
    else:
        raise TypeError(s)


def pretty(p: Program) -> str:
    lines = []
    for d in p.decls:
        lines.append(f"int {d.name};" if d.init is None else f"int {d.name} = {format_expr(d.init)};")
    for s in p.stmts:
        lines.extend(_fmt_stmt(s, ""))
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Lowering


class _Lowerer:
    def __init__(self, p: Program):
        self.names = p.names
        self.nodes: list[int] = []
        self.edges: list[Edge] = []
        self.lines: dict[int, int] = {}
        self.error: int | None = None
        self.fresh = 0

    def node(self, line: int | None = None) -> int:
        n = len(self.nodes)
        self.nodes.append(n)
        if line:
            self.lines[n] = line
        return n

    def edge(self, src: int, f: Formula, dst: int, assertion: int | None = None, label: str = ""):
        self.edges.append(Edge(src, dst, f, assertion, label))

    def aux(self) -> Var:
        self.fresh += 1
        return Var(f"nd{self.fresh}", None, Role.AUX)

    def linexpr(self, e: Expr) -> LinearExpr:
        le = LinearExpr.build({Var(n): k for n, k in e.coeffs}, e.const)
        if e.nondet:
            le = le + LinearExpr.var(self.aux())
        return le

    def guard(self, c: Cond, positive: bool = True) -> Formula:
        if isinstance(c, NondetCond):
            return TRUE
        if isinstance(c, Not):
            return self.guard(c.arg, not positive)
        if isinstance(c, BoolOp):
            parts = [self.guard(a, positive) for a in c.args]
            is_and = (c.op == "&&") == positive
            return conj(*parts) if is_and else disj(*parts)
        op = c.op if positive else _NEGATE[c.op]
        lhs, rhs = self.linexpr(c.lhs), self.linexpr(c.rhs)
        if op == "<":
            return conj(Atom.lt(lhs, rhs))
        if op == "<=":
            return conj(Atom.leq(lhs, rhs))
        if op == ">":
            return conj(Atom.gt(lhs, rhs))
        if op == ">=":
            return conj(Atom.geq(lhs, rhs))
        if op == "==":
            return conj(Atom.eq(lhs, rhs))
        return disj(Atom.lt(lhs, rhs), Atom.gt(lhs, rhs))

    def assume_edge(self, src: int, f: Formula, dst: int, assertion: int | None = None, label: str = ""):
        self.edge(src, conj(f, *frames(self.names)), dst, assertion, label)

    def assign_edge(self, src: int, name: str, e: Expr, dst: int, label: str = ""):
        others = frames(x for x in self.names if x != name)
        if e.nondet and not e.coeffs:
            f = conj(*others)  # havoc: x' is unconstrained
        else:
            f = conj(Atom.eq(Var(name, None, Role.OUTPUT), self.linexpr(e)), *others)
        self.edge(src, f, dst, label=label)

    def error_node(self) -> int:
        if self.error is None:
            self.error = self.node()
        return self.error

    def block(self, stmts, src: int, dst: int):
        if not stmts:
            self.assume_edge(src, TRUE, dst, label="skip")
            return
        cur = src
        for s in stmts[:-1]:
            nxt = self.node(_next_line(s))
            self.stmt(s, cur, nxt)
            cur = nxt
        self.stmt(stmts[-1], cur, dst)

    def stmt(self, s: Stmt, src: int, dst: int):
        if isinstance(s, Assign):
            self.assign_edge(src, s.var, s.expr, dst, f"{s.var} = {format_expr(s.expr)}")
        elif isinstance(s, Assume):
            self.assume_edge(src, self.guard(s.cond), dst, label=f"assume({format_cond(s.cond)})")
        elif isinstance(s, Assert):
            text = format_cond(s.cond)
            self.assume_edge(src, self.guard(s.cond), dst, label=f"assert({text})")
            self.assume_edge(src, self.guard(s.cond, False), self.error_node(), s.line, f"!({text})")
        elif isinstance(s, Block):
            self.block(s.stmts, src, dst)
        elif isinstance(s, If):
            text = format_cond(s.cond)
            self._branch(src, self.guard(s.cond), s.then.stmts, dst, text)
            self._branch(src, self.guard(s.cond, False), s.orelse.stmts if s.orelse else (), dst, f"!({text})")
        elif isinstance(s, While):
            head = src
            if src == 0:  # the entry node must not have incoming edges
                head = self.node(s.line)
                self.assume_edge(src, TRUE, head, label="skip")
            self.lines[head] = s.line
            text = format_cond(s.cond)
            if s.body.stmts:
                mid = self.node(_next_line(s.body.stmts[0]))
                self.assume_edge(head, self.guard(s.cond), mid, label=text)
                self.block(s.body.stmts, mid, head)
            else:
                self.assume_edge(head, self.guard(s.cond), head, label=text)
            self.assume_edge(head, self.guard(s.cond, False), dst, label=f"!({text})")
        else:
            raise TypeError(s)

    def _branch(self, src: int, g: Formula, stmts, dst: int, label: str):
        if not stmts:
            self.assume_edge(src, g, dst, label=label)
            return
        mid = self.node(_next_line(stmts[0]))
        self.assume_edge(src, g, mid, label=label)
        self.block(stmts, mid, dst)


_NEGATE = {"<": ">=", "<=": ">", ">": "<=", ">=": "<", "==": "!=", "!=": "=="}


def _next_line(s: Stmt) -> int:
    return s.line


def lower(p: Program) -> Cfa:
    lo = _Lowerer(p)
    entry = lo.node(1)
    exit_ = lo.node()
    items: list[Stmt] = [Assign(d.name, d.init, d.line, d.col) for d in p.decls if d.init is not None]
    items.extend(p.stmts)
    if items:
        lo.block(items, entry, exit_)
    else:
        lo.assume_edge(entry, TRUE, exit_, label="skip")
    return Cfa(lo.nodes, entry, lo.edges, p.names, lo.error, lo.lines)


def compile_program(text: str) -> Cfa:
    return lower(parse(text))
