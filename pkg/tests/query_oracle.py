"""A naive row-at-a-time query interpreter, independent of the engine.

Derived expressions go through Python's own eval with a restricted
namespace, aggregates through hand-written loops over dicts, and sorting
through repeated stable sorts; nothing here shares code with the engine
under test. Also holds the seeded random table/query generators.
"""

import random
import re
import string

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _alias(agg: dict) -> str:
    return agg.get("as") or f"{agg['agg']}_{agg['col']}"


def _eval_derive(expr: str, record: dict):
    expr = expr.replace("×", "*").replace("−", "-").replace("÷", "/")
    refs = set(_IDENT_RE.findall(expr))
    if any(record[r] is None for r in refs):
        return None
    namespace = {r: float(record[r]) for r in refs}
    try:
        return eval(expr, {"__builtins__": {}}, namespace)  # noqa: S307 - test oracle
    except ZeroDivisionError:
        return None


def _holds(predicate: dict, record: dict) -> bool:
    cell = record[predicate["col"]]
    if cell is None:
        return False
    op, value = predicate["op"], predicate["value"]
    if op == "eq":
        return cell == value
    if op == "ne":
        return cell != value
    if op == "lt":
        return cell < value
    if op == "le":
        return cell <= value
    if op == "gt":
        return cell > value
    if op == "ge":
        return cell >= value
    return value in cell  # contains


def _aggregate(agg: str, values: list):
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


def oracle_query(columns, rows, raw: dict):
    """Evaluate `raw` naively; returns (column_names, rows_as_tuples)."""
    names = [n for n, _ in columns]
    records = [dict(zip(names, row)) for row in rows]
    out_names = list(names)

    for d in raw.get("derive", []) or []:
        for record in records:
            record[d["as"]] = _eval_derive(d["expr"], record)
        out_names.append(d["as"])

    for predicate in raw.get("where", []) or []:
        records = [r for r in records if _holds(predicate, r)]

    select = raw.get("select", []) or []
    aggs = [s for s in select if isinstance(s, dict)]
    bare = [s for s in select if isinstance(s, str)]
    group_by = raw.get("group_by", []) or []

    if group_by or aggs:
        if group_by:
            order, groups = [], {}
            for record in records:
                key = tuple(record[c] for c in group_by)
                if key not in groups:
                    groups[key] = []
                    order.append(key)
                groups[key].append(record)
            grouped = []
            for key in order:
                out = dict(zip(group_by, key))
                for agg in aggs:
                    out[_alias(agg)] = _aggregate(agg["agg"], [g[agg["col"]] for g in groups[key]])
                grouped.append(out)
            records = grouped
            out_names = group_by + [_alias(a) for a in aggs]
        else:
            records = [
                {_alias(a): _aggregate(a["agg"], [r[a["col"]] for r in records]) for a in aggs}
            ]
            out_names = [_alias(a) for a in aggs]

    for key in reversed(raw.get("order_by", []) or []):
        col = key["col"]
        descending = bool(key.get("descending", False))

        def sort_key(record, col=col):
            cell = record[col]
            return (1, 0) if cell is None else (0, cell)

        records.sort(key=sort_key, reverse=descending)

    if raw.get("limit") is not None:
        records = records[: raw["limit"]]

    if select:
        projection = [s if isinstance(s, str) else _alias(s) for s in select]
    else:
        projection = out_names
    return projection, [tuple(record[c] for c in projection) for record in records]


# ---------------------------------------------------------------------------
# Random generators
# ---------------------------------------------------------------------------

DTYPES = ("integer", "float", "string", "boolean")


def random_table(rng: random.Random, max_rows: int = 200, max_cols: int = 6):
    n_cols = rng.randint(1, max_cols)
    columns = []
    for i in range(n_cols):
        columns.append((f"c{i}_{rng.choice(string.ascii_lowercase)}", rng.choice(DTYPES)))
    n_rows = rng.randint(0, max_rows)
    rows = []
    for _ in range(n_rows):
        row = []
        for _, dtype in columns:
            if rng.random() < 0.1:
                row.append(None)
            elif dtype == "integer":
                row.append(rng.randint(-50, 50))
            elif dtype == "float":
                row.append(round(rng.uniform(-100.0, 100.0), 3))
            elif dtype == "boolean":
                row.append(rng.random() < 0.5)
            else:
                row.append(rng.choice(["alpha", "beta", "gamma", "tip", "high tips", ""]))
        rows.append(tuple(row))
    return columns, rows


_EXPR_TEMPLATES = [
    "{a} + {b}",
    "{a} - {b}",
    "{a} * 2 + {b}",
    "({a} + 1) / ({b} + 1)",
    "{a} / {b}",
    "{a} * {b} - 0.5",
]


def _value_for(rng: random.Random, dtype: str):
    if dtype == "integer":
        return rng.randint(-50, 50)
    if dtype == "float":
        return round(rng.uniform(-100.0, 100.0), 3)
    if dtype == "boolean":
        return rng.random() < 0.5
    return rng.choice(["alpha", "beta", "tip", ""])


def random_query(rng: random.Random, columns):
    names = [n for n, _ in columns]
    dtypes = dict(columns)
    numeric = [n for n in names if dtypes[n] in ("integer", "float")]
    query: dict = {}
    current = list(names)

    if numeric and rng.random() < 0.5:
        a, b = rng.choice(numeric), rng.choice(numeric)
        template = rng.choice(_EXPR_TEMPLATES)
        alias = f"derived_{rng.randint(0, 999)}"
        while alias in current:
            alias = f"derived_{rng.randint(0, 999)}"
        query["derive"] = [{"as": alias, "expr": template.format(a=a, b=b)}]
        current.append(alias)
        dtypes[alias] = "float"
        numeric = numeric + [alias]

    if rng.random() < 0.7:
        predicates = []
        for _ in range(rng.randint(1, 2)):
            col = rng.choice(current)
            dtype = dtypes[col]
            if dtype in ("integer", "float"):
                op = rng.choice(["eq", "ne", "lt", "le", "gt", "ge"])
            elif dtype == "string":
                op = rng.choice(["eq", "ne", "contains"])
            else:
                op = rng.choice(["eq", "ne"])
            value = "tip" if op == "contains" else _value_for(rng, dtype)
            predicates.append({"col": col, "op": op, "value": value})
        query["where"] = predicates

    grouped = rng.random() < 0.4
    if grouped:
        group_cols = rng.sample(current, k=min(rng.randint(1, 2), len(current)))
        aggs = []
        for _ in range(rng.randint(1, 3)):
            agg = rng.choice(["count", "sum", "mean", "min", "max"])
            if agg in ("sum", "mean"):
                if not numeric:
                    agg = "count"
                    col = rng.choice(current)
                else:
                    col = rng.choice(numeric)
            else:
                col = rng.choice(current)
            aggs.append({"agg": agg, "col": col, "as": f"{agg}_{col}_{len(aggs)}"})
        query["group_by"] = group_cols
        query["select"] = list(group_cols) + aggs
        current = list(group_cols) + [a["as"] for a in aggs]
    elif rng.random() < 0.5:
        k = rng.randint(1, len(current))
        query["select"] = rng.sample(current, k=k)
        current = list(query["select"])

    if current and rng.random() < 0.6:
        keys = rng.sample(current, k=min(rng.randint(1, 2), len(current)))
        query["order_by"] = [
            {"col": c, "descending": rng.random() < 0.5} for c in keys
        ]

    if rng.random() < 0.4:
        query["limit"] = rng.randint(1, 50)
    return query


def rows_match(actual, expected, rel_tol=1e-9):
    """Exact for counts/ordering/values; relative tolerance for floats."""
    if len(actual) != len(expected):
        return False
    for row_a, row_e in zip(actual, expected):
        if len(row_a) != len(row_e):
            return False
        for a, e in zip(row_a, row_e):
            if isinstance(a, float) or isinstance(e, float):
                if a is None or e is None:
                    if a is not e:
                        return False
                elif abs(a - e) > rel_tol * max(abs(a), abs(e), 1.0):
                    return False
            elif a != e:
                return False
    return True
