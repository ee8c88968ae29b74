"""Randomized equivalence between the query engine and the naive oracle."""

import random

from dataclaw.tools import Dataset, parse_query, run_query

from .query_oracle import oracle_query, random_query, random_table, rows_match


def run_equivalence(seed: int, pairs: int) -> int:
    rng = random.Random(seed)
    checked = 0
    for i in range(pairs):
        columns, rows = random_table(rng)
        raw = random_query(rng, columns)
        ds = Dataset(handle="d1", columns=columns, rows=rows)
        result = run_query(ds, parse_query(raw))
        expected_names, expected_rows = oracle_query(columns, rows, raw)
        assert result.column_names() == expected_names, (i, raw)
        assert rows_match(result.rows, expected_rows), (i, raw, result.rows[:5], expected_rows[:5])
        checked += 1
    return checked


def test_engine_matches_naive_interpreter_200():
    assert run_equivalence(seed=1337, pairs=200) == 200


def test_engine_matches_naive_interpreter_other_seed():
    assert run_equivalence(seed=99, pairs=100) == 100
