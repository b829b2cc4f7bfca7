"""CSV schemas, validation with row numbers, and deterministic writers.

Every file written by the command-line tools starts with one provenance line::

    # adlearn <command> config_sha256=<hex digest> seed=<seed>

Readers skip lines starting with ``#``. Reals are written with 17
significant digits so that they round-trip exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .panel import Transaction

TRANSACTIONS_COLUMNS = ("advertiser_id", "site_id", "week", "days", "price", "impressions", "clicks")
SITES_COLUMNS = ("site_id", "daily_traffic")
TAGS_COLUMNS = ("advertiser_id", "image_id", "tag")
MENUS_COLUMNS = ("site_id", "week", "days", "price")
ADVERTISERS_COLUMNS = ("advertiser_id", "join_week")
PREDICTED_CTR_COLUMNS = ("advertiser_id", "site_id", "ctr_pred", "peer_count")
DRAWS_PREFIX = ("chain", "draw", "log_density")


def provenance_line(command: str, digest: str, seed) -> str:
    return f"# adlearn {command} config_sha256={digest} seed={seed}"


def fmt(value) -> str:
    """Serialise one cell: ints as-is, reals with 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], provenance: str | None = None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(provenance.rstrip("\n") + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


@dataclass(frozen=True)
class Issue:
    file: str
    row: int          # 1-based line number in the file; 0 for whole-file problems
    message: str

    def __str__(self) -> str:
        where = f"{self.file}:{self.row}" if self.row else self.file
        return f"{where}: {self.message}"


@dataclass
class Table:
    """Rows of a CSV file as dicts, with the line number of each row."""

    path: str
    columns: tuple
    rows: list = field(default_factory=list)
    lines: list = field(default_factory=list)


def read_table(path, required: Sequence[str]) -> tuple[Table, list[Issue]]:
    """Read a CSV, skipping ``#`` comment lines, and check the header."""
    path = str(path)
    issues: list[Issue] = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        return Table(path, ()), [Issue(path, 0, f"cannot read file: {exc.strerror}")]
    with fh:
        numbered = [(i + 1, line) for i, line in enumerate(fh) if not line.startswith("#")]
    if not numbered:
        return Table(path, ()), [Issue(path, 0, "file is empty")]
    reader = csv.reader([line for _, line in numbered])
    try:
        records = list(reader)
    except csv.Error as exc:
        return Table(path, ()), [Issue(path, 0, f"malformed CSV: {exc}")]
    header = tuple(h.strip() for h in records[0])
    missing = [c for c in required if c not in header]
    if missing:
        issues.append(Issue(path, numbered[0][0], f"missing column(s): {', '.join(missing)}"))
        return Table(path, header), issues
    table = Table(path, header)
    for (line_no, _), rec in zip(numbered[1:], records[1:]):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            issues.append(Issue(path, line_no, f"expected {len(header)} fields, found {len(rec)}"))
            continue
        table.rows.append({h: c.strip() for h, c in zip(header, rec)})
        table.lines.append(line_no)
    return table, issues


def _parse(table: Table, build: Callable[[dict], object]) -> tuple[list, list[int], list[Issue]]:
    """Build every row; returns the parsed values, their line numbers and the issues."""
    out, lines, issues = [], [], []
    for row, line in zip(table.rows, table.lines):
        try:
            out.append(build(row))
            lines.append(line)
        except (ValueError, TypeError) as exc:
            issues.append(Issue(table.path, line, str(exc)))
    return out, lines, issues


def _int(row, key) -> int:
    v = row[key]
    try:
        f = float(v)
    except ValueError:
        raise ValueError(f"{key} is not a number: {v!r}") from None
    if not f.is_integer():
        raise ValueError(f"{key} must be an integer, got {v!r}")
    return int(f)


def _real(row, key) -> float:
    v = row[key]
    try:
        f = float(v)
    except ValueError:
        raise ValueError(f"{key} is not a number: {v!r}") from None
    if not math.isfinite(f):
        raise ValueError(f"{key} must be finite, got {v!r}")
    return f


def _id(row, key) -> str:
    v = row[key]
    if not v:
        raise ValueError(f"{key} is empty")
    return v


def parse_transactions(path) -> tuple[list[Transaction], list[Issue]]:
    table, issues = read_table(path, TRANSACTIONS_COLUMNS)
    if issues:
        return [], issues

    def build(r):
        week = _int(r, "week")
        if week < 1:
            raise ValueError(f"week must be >= 1, got {week}")
        imp, clk = _int(r, "impressions"), _int(r, "clicks")
        if imp < 0:
            raise ValueError(f"impressions must be >= 0, got {imp}")
        if clk > imp:
            raise ValueError(f"clicks ({clk}) exceed impressions ({imp})")
        if clk < 0:
            raise ValueError(f"clicks must be >= 0, got {clk}")
        return Transaction(_id(r, "advertiser_id"), _id(r, "site_id"), week, _int(r, "days"),
                           _real(r, "price"), imp, clk)

    rows, lines, more = _parse(table, build)
    seen: dict = {}
    for t, line in zip(rows, lines):
        key = (t.advertiser_id, t.site_id, t.week)
        if key in seen:
            more.append(Issue(table.path, line, f"duplicate purchase for {key} (first on line {seen[key]})"))
        else:
            seen[key] = line
    return rows, more


def parse_sites(path) -> tuple[dict[str, float], list[Issue]]:
    table, issues = read_table(path, SITES_COLUMNS)
    if issues:
        return {}, issues

    def build(r):
        t = _real(r, "daily_traffic")
        if not t > 0:
            raise ValueError(f"daily_traffic must be positive, got {t}")
        return _id(r, "site_id"), t

    pairs, lines, issues = _parse(table, build)
    out: dict[str, float] = {}
    for (s, t), line in zip(pairs, lines):
        if s in out:
            issues.append(Issue(table.path, line, f"duplicate site_id {s!r}"))
        out[s] = t
    return out, issues


def parse_tags(path) -> tuple[list[tuple[str, str, str]], list[Issue]]:
    table, issues = read_table(path, TAGS_COLUMNS)
    if issues:
        return [], issues

    def build(r):
        return _id(r, "advertiser_id"), _id(r, "image_id"), _id(r, "tag")

    rows, _, issues = _parse(table, build)
    return rows, issues


def parse_menus(path) -> tuple[list[tuple[str, int, int, float]], list[Issue]]:
    table, issues = read_table(path, MENUS_COLUMNS)
    if issues:
        return [], issues

    def build(r):
        days, price, week = _int(r, "days"), _real(r, "price"), _int(r, "week")
        if days < 1:
            raise ValueError(f"days must be >= 1, got {days}")
        if not price > 0:
            raise ValueError(f"price must be positive, got {price}")
        if week < 1:
            raise ValueError(f"week must be >= 1, got {week}")
        return _id(r, "site_id"), week, days, price

    rows, _, issues = _parse(table, build)
    return rows, issues


def parse_advertisers(path) -> tuple[dict[str, int], list[Issue]]:
    table, issues = read_table(path, ADVERTISERS_COLUMNS)
    if issues:
        return {}, issues

    def build(r):
        w = _int(r, "join_week")
        if w < 1:
            raise ValueError(f"join_week must be >= 1, got {w}")
        return _id(r, "advertiser_id"), w

    pairs, _, issues = _parse(table, build)
    return dict(pairs), issues


def parse_predicted_ctr(path) -> tuple[dict[tuple[str, str], float], list[Issue]]:
    """Empty ``ctr_pred`` cells mean no prediction and are skipped."""
    table, issues = read_table(path, PREDICTED_CTR_COLUMNS)
    if issues:
        return {}, issues

    def build(r):
        key = (_id(r, "advertiser_id"), _id(r, "site_id"))
        if r["ctr_pred"] == "":
            return key, None
        c = _real(r, "ctr_pred")
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"ctr_pred outside [0, 1]: {c}")
        return key, c

    pairs, _, issues = _parse(table, build)
    return {k: v for k, v in pairs if v is not None}, issues


def parse_draws(path) -> tuple[list[str], np.ndarray, np.ndarray, list[Issue]]:
    """Posterior draws: returns (parameter names, chain ids, values (draws, params), issues)."""
    table, issues = read_table(path, DRAWS_PREFIX)
    if issues:
        return [], np.empty(0), np.empty((0, 0)), issues
    names = [c for c in table.columns if c not in DRAWS_PREFIX]
    vals = np.empty((len(table.rows), len(names)))
    chains = np.empty(len(table.rows), dtype=np.int64)
    for i, (r, line) in enumerate(zip(table.rows, table.lines)):
        try:
            chains[i] = _int(r, "chain")
            vals[i] = [float(r[n]) for n in names]
        except ValueError as exc:
            issues.append(Issue(table.path, line, str(exc)))
    return names, chains, vals, issues
