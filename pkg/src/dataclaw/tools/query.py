"""Declarative query evaluation over in-memory datasets.

Pipeline order is fixed: derive -> where -> group/aggregate -> order_by
(stable) -> limit -> select projection. Null semantics: null cells fail
every predicate, aggregates skip nulls, and nulls propagate through
derived expressions (division by zero also yields null).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..core import DataClawError
from .datastore import (
    BOOLEAN,
    FLOAT,
    INTEGER,
    NUMERIC_DTYPES,
    STRING,
    Dataset,
)


class BadQuery(DataClawError):
    """The query spec violates the dataset schema or the query grammar."""


AGG_FUNCS = ("count", "sum", "mean", "min", "max")
PREDICATE_OPS = ("eq", "ne", "lt", "le", "gt", "ge", "contains")


# ---------------------------------------------------------------------------
# Arithmetic expressions for derived columns
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*|\.\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/()]))"
)

# The query grammar accepts the typographic operator glyphs as aliases.
_GLYPHS = {"−": "-", "×": "*", "÷": "/"}


def _tokenize(expr: str) -> list[tuple[str, str]]:
    for glyph, ascii_op in _GLYPHS.items():
        expr = expr.replace(glyph, ascii_op)
    tokens: list[tuple[str, str]] = []
    pos = 0
    while pos < len(expr):
        match = _TOKEN_RE.match(expr, pos)
        if not match:
            if expr[pos:].strip() == "":
                break
            raise BadQuery(f"bad character in expression at {expr[pos:]!r}")
        if match.group("num"):
            tokens.append(("num", match.group("num")))
        elif match.group("ident"):
            tokens.append(("ident", match.group("ident")))
        else:
            tokens.append(("op", match.group("op")))
        pos = match.end()
    return tokens


@dataclass
class Expr:
    """AST node: kind is num | col | unary | binary."""

    kind: str
    value: float = 0.0
    name: str = ""
    op: str = ""
    left: "Expr | None" = None
    right: "Expr | None" = None

    def columns(self) -> set[str]:
        if self.kind == "col":
            return {self.name}
        found: set[str] = set()
        if self.left:
            found |= self.left.columns()
        if self.right:
            found |= self.right.columns()
        return found


class _ExprParser:
    def __init__(self, tokens: list[tuple[str, str]], source: str) -> None:
        self.tokens = tokens
        self.pos = 0
        self.source = source

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> tuple[str, str]:
        token = self.peek()
        if token is None:
            raise BadQuery(f"unexpected end of expression {self.source!r}")
        self.pos += 1
        return token

    def parse(self) -> Expr:
        node = self.expr()
        if self.peek() is not None:
            raise BadQuery(f"trailing tokens in expression {self.source!r}")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek() and self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = Expr("binary", op=op, left=node, right=self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.peek() and self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = Expr("binary", op=op, left=node, right=self.factor())
        return node

    def factor(self) -> Expr:
        kind, text = self.take()
        if kind == "num":
            return Expr("num", value=float(text))
        if kind == "ident":
            return Expr("col", name=text)
        if text == "(":
            node = self.expr()
            closing = self.take()
            if closing[1] != ")":
                raise BadQuery(f"expected ')' in expression {self.source!r}")
            return node
        if text == "-":
            return Expr("unary", op="-", left=self.factor())
        raise BadQuery(f"unexpected token {text!r} in expression {self.source!r}")


def parse_expr(source: str) -> Expr:
    if not isinstance(source, str) or not source.strip():
        raise BadQuery("derive expr must be a non-empty string")
    return _ExprParser(_tokenize(source), source).parse()


def eval_expr(node: Expr, row_values: dict[str, object]) -> float | None:
    if node.kind == "num":
        return node.value
    if node.kind == "col":
        cell = row_values[node.name]
        return None if cell is None else float(cell)
    if node.kind == "unary":
        operand = eval_expr(node.left, row_values)
        return None if operand is None else -operand
    left = eval_expr(node.left, row_values)
    right = eval_expr(node.right, row_values)
    if left is None or right is None:
        return None
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if right == 0.0:
        return None
    return left / right


# ---------------------------------------------------------------------------
# Query spec
# ---------------------------------------------------------------------------

@dataclass
class Aggregate:
    agg: str
    col: str
    alias: str


@dataclass
class Predicate:
    col: str
    op: str
    value: object


@dataclass
class DeriveSpec:
    alias: str
    expr: Expr
    source: str


@dataclass
class OrderKey:
    col: str
    descending: bool = False


@dataclass
class QuerySpec:
    select: list = field(default_factory=list)  # str | Aggregate
    where: list[Predicate] = field(default_factory=list)
    derive: list[DeriveSpec] = field(default_factory=list)
    group_by: list[str] = field(default_factory=list)
    order_by: list[OrderKey] = field(default_factory=list)
    limit: int | None = None


_KNOWN_KEYS = {"select", "where", "derive", "group_by", "order_by", "limit"}


def parse_query(raw: dict) -> QuerySpec:
    """Turn a raw JSON-shaped mapping into a QuerySpec (schema-free checks)."""
    if not isinstance(raw, dict):
        raise BadQuery("query must be an object")
    unknown = set(raw) - _KNOWN_KEYS
    if "join" in unknown or "joins" in unknown:
        raise BadQuery("joins are not supported")
    if unknown:
        raise BadQuery(f"unknown query keys: {sorted(unknown)}")

    spec = QuerySpec()
    for item in raw.get("derive", []) or []:
        if not isinstance(item, dict) or "as" not in item or "expr" not in item:
            raise BadQuery("derive items must be objects with `as` and `expr`")
        spec.derive.append(DeriveSpec(alias=str(item["as"]), expr=parse_expr(item["expr"]), source=str(item["expr"])))

    for item in raw.get("where", []) or []:
        if not isinstance(item, dict) or not {"col", "op", "value"} <= set(item):
            raise BadQuery("where items must be objects with col, op, value")
        if item["op"] not in PREDICATE_OPS:
            raise BadQuery(f"unknown predicate op {item['op']!r}")
        spec.where.append(Predicate(col=str(item["col"]), op=item["op"], value=item["value"]))

    for item in raw.get("select", []) or []:
        if isinstance(item, str):
            spec.select.append(item)
        elif isinstance(item, dict) and "agg" in item:
            if item["agg"] not in AGG_FUNCS:
                raise BadQuery(f"unknown aggregate {item['agg']!r}")
            if "col" not in item:
                raise BadQuery("aggregates must name a col")
            alias = str(item.get("as") or f"{item['agg']}_{item['col']}")
            spec.select.append(Aggregate(agg=item["agg"], col=str(item["col"]), alias=alias))
        else:
            raise BadQuery(f"bad select item {item!r}")

    group_by = raw.get("group_by", []) or []
    if not isinstance(group_by, list):
        raise BadQuery("group_by must be a list of column names")
    spec.group_by = [str(c) for c in group_by]

    for item in raw.get("order_by", []) or []:
        if isinstance(item, str):
            spec.order_by.append(OrderKey(col=item))
        elif isinstance(item, dict) and "col" in item:
            spec.order_by.append(OrderKey(col=str(item["col"]), descending=bool(item.get("descending", False))))
        else:
            raise BadQuery(f"bad order_by item {item!r}")

    if raw.get("limit") is not None:
        limit = raw["limit"]
        if not isinstance(limit, int) or isinstance(limit, bool) or limit <= 0:
            raise BadQuery(f"limit must be a positive integer, got {limit!r}")
        spec.limit = limit
    return spec


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _check_predicate_value(pred: Predicate, dtype: str) -> None:
    v = pred.value
    if pred.op == "contains":
        if dtype != STRING:
            raise BadQuery(f"contains applies only to string columns, not {pred.col!r}")
        if not isinstance(v, str):
            raise BadQuery(f"contains value for {pred.col!r} must be a string")
        return
    if dtype in NUMERIC_DTYPES and (isinstance(v, bool) or not isinstance(v, (int, float))):
        raise BadQuery(f"predicate value for numeric column {pred.col!r} must be a number")
    if dtype == STRING and not isinstance(v, str):
        raise BadQuery(f"predicate value for string column {pred.col!r} must be a string")
    if dtype == BOOLEAN and not isinstance(v, bool):
        raise BadQuery(f"predicate value for boolean column {pred.col!r} must be a boolean")


def _predicate_holds(pred: Predicate, cell) -> bool:
    if cell is None:
        return False
    if pred.op == "contains":
        return pred.value in cell
    if pred.op == "eq":
        return cell == pred.value
    if pred.op == "ne":
        return cell != pred.value
    if pred.op == "lt":
        return cell < pred.value
    if pred.op == "le":
        return cell <= pred.value
    if pred.op == "gt":
        return cell > pred.value
    return cell >= pred.value


def _aggregate(agg: str, values: list) -> object:
    present = [v for v in values if v is not None]
    if agg == "count":
        return len(present)
    if not present:
        return None
    if agg == "sum":
        return sum(present)
    if agg == "mean":
        return sum(present) / len(present)
    if agg == "min":
        return min(present)
    return max(present)


_AGG_DTYPE = {"count": INTEGER, "mean": FLOAT}


def _sort_key(index: int):
    def key(row: tuple):
        cell = row[index]
        return (1, 0) if cell is None else (0, cell)

    return key


def run_query(ds: Dataset, spec: QuerySpec) -> Dataset:
    """Evaluate `spec` against `ds`, returning an unregistered result Dataset.

    The result carries handle "" — callers register it in their store.
    """
    columns = list(ds.columns)
    rows = list(ds.rows)
    names = [n for n, _ in columns]

    # derive (sequential: later exprs see earlier aliases)
    for d in spec.derive:
        if d.alias in names:
            raise BadQuery(f"derive alias {d.alias!r} already exists")
        for ref in sorted(d.expr.columns()):
            if ref not in names:
                raise BadQuery(f"derive expr references unknown column {ref!r}")
            dtype = columns[names.index(ref)][1]
            if dtype not in NUMERIC_DTYPES:
                raise BadQuery(f"derive expr references non-numeric column {ref!r}")
        refs = sorted(d.expr.columns())
        indexes = {r: names.index(r) for r in refs}
        rows = [
            row + (eval_expr(d.expr, {r: row[i] for r, i in indexes.items()}),)
            for row in rows
        ]
        columns.append((d.alias, FLOAT))
        names.append(d.alias)

    # where (AND of predicates; null cells never match)
    for pred in spec.where:
        if pred.col not in names:
            raise BadQuery(f"where references unknown column {pred.col!r}")
        _check_predicate_value(pred, columns[names.index(pred.col)][1])
    if spec.where:
        indexes = {p.col: names.index(p.col) for p in spec.where}
        rows = [
            row
            for row in rows
            if all(_predicate_holds(p, row[indexes[p.col]]) for p in spec.where)
        ]

    # group / aggregate
    aggregates = [s for s in spec.select if isinstance(s, Aggregate)]
    bare = [s for s in spec.select if isinstance(s, str)]
    for agg in aggregates:
        if agg.col not in names:
            raise BadQuery(f"aggregate references unknown column {agg.col!r}")
    for col in spec.group_by:
        if col not in names:
            raise BadQuery(f"group_by references unknown column {col!r}")

    if spec.group_by or aggregates:
        if not spec.group_by and bare:
            raise BadQuery(
                f"plain column {bare[0]!r} selected alongside aggregates without group_by"
            )
        for col in bare:
            if col not in spec.group_by:
                raise BadQuery(f"selected column {col!r} is not in group_by")
        if not aggregates and spec.group_by:
            raise BadQuery("group_by requires at least one aggregate in select")
        group_idx = [names.index(c) for c in spec.group_by]
        agg_idx = [names.index(a.col) for a in aggregates]
        out_columns = [(c, columns[names.index(c)][1]) for c in spec.group_by]
        for a, i in zip(aggregates, agg_idx):
            # count -> integer, mean -> float; sum/min/max keep the column dtype
            dtype = _AGG_DTYPE.get(a.agg) or columns[i][1]
            out_columns.append((a.alias, dtype))
        if spec.group_by:
            order: list[tuple] = []
            buckets: dict[tuple, list[tuple]] = {}
            for row in rows:
                key = tuple(row[i] for i in group_idx)
                if key not in buckets:
                    buckets[key] = []
                    order.append(key)
                buckets[key].append(row)
            rows = [
                tuple(key)
                + tuple(
                    _aggregate(a.agg, [r[i] for r in buckets[key]])
                    for a, i in zip(aggregates, agg_idx)
                )
                for key in order
            ]
        else:
            rows = [
                tuple(
                    _aggregate(a.agg, [r[i] for r in rows])
                    for a, i in zip(aggregates, agg_idx)
                )
            ]
        columns = out_columns
        names = [n for n, _ in columns]
        if spec.select:
            projection = [s if isinstance(s, str) else s.alias for s in spec.select]
        else:
            projection = names
    else:
        for col in bare:
            if col not in names:
                raise BadQuery(f"selected column {col!r} does not exist")
        projection = bare if spec.select else names

    # order_by (stable, applied right-to-left)
    for key in spec.order_by:
        if key.col not in names:
            raise BadQuery(f"order_by references unknown column {key.col!r}")
    for key in reversed(spec.order_by):
        rows.sort(key=_sort_key(names.index(key.col)), reverse=key.descending)

    # limit
    if spec.limit is not None:
        rows = rows[: spec.limit]

    # select projection
    if projection != names:
        idx = [names.index(c) for c in projection]
        rows = [tuple(r[i] for i in idx) for r in rows]
        columns = [columns[i] for i in idx]

    return Dataset(handle="", columns=columns, rows=rows, source_path=ds.source_path)
