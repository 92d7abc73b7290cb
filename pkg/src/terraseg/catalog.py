"""Deterministic OpenSearch product-query construction.

A `CatalogQuery` captures the usual archive filters (sensing period,
platform, filename pattern, product type, instrument, footprint) plus paging
and sort parameters, and serializes to a single-line GET URL. The filter
grammar groups the two date-range clauses in one parenthesis, the four
platform clauses in a double parenthesis, and renders the footprint as
``footprint:Intersects(POLYGON((...)))``; groups are joined with `` AND ``.

Nothing here performs network IO. `tokenize_query` exists so tests and
callers can compare queries while ignoring whitespace layout: a token is
either a maximal run of ``[A-Za-z0-9_.*-]`` or a single other
non-whitespace character.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ParameterError
from .wkt import WktGeometry, to_wkt

__all__ = ["BASE_URL", "CatalogQuery", "build_catalog_query", "tokenize_query"]

BASE_URL = "https://scihub.copernicus.eu/dhus/api/stub/products"

_TOKEN = re.compile(r"[A-Za-z0-9_.*-]+|[^\sA-Za-z0-9_.*-]")


@dataclass(frozen=True)
class CatalogQuery:
    """Search filters; None means the clause is omitted."""

    begin: str | None = None
    end: str | None = None
    platform_name: str | None = None
    filename: str | None = None
    product_type: str | None = None
    instrument: str | None = None
    footprint: WktGeometry | None = None
    offset: int = 0
    limit: int = 25
    sorted_by: str = "ingestiondate"
    order: str = "desc"

    def __post_init__(self):
        if (self.begin is None) != (self.end is None):
            raise ParameterError("begin and end must be given together")
        if self.begin is not None and self.begin > self.end:
            raise ParameterError(f"begin {self.begin!r} is after end {self.end!r}")
        if self.offset < 0:
            raise ParameterError(f"offset must be >= 0, got {self.offset}")
        if self.limit < 1:
            raise ParameterError(f"limit must be >= 1, got {self.limit}")
        if self.order not in ("asc", "desc"):
            raise ParameterError(f"order must be 'asc' or 'desc', got {self.order!r}")
        if not self.sorted_by:
            raise ParameterError("sorted_by must be non-empty")
        if self.footprint is not None:
            for ring in self.footprint.rings:
                if len(ring) < 4:
                    raise ParameterError(
                        f"footprint ring has {len(ring)} vertices, need >= 4"
                    )
                if ring[0] != ring[-1]:
                    raise ParameterError("footprint ring is not closed")


def build_catalog_query(q: CatalogQuery) -> str:
    """Render the query as a GET URL (single line, single spaces)."""
    groups: list[str] = []
    if q.begin is not None:
        span = f"[{q.begin} TO {q.end}]"
        groups.append(f"(beginPosition:{span} AND endPosition:{span})")
    platform = [
        f"{key}:{value}"
        for key, value in (
            ("platformname", q.platform_name),
            ("filename", q.filename),
            ("producttype", q.product_type),
            ("instrumentshortname", q.instrument),
        )
        if value is not None
    ]
    if platform:
        groups.append("((" + " AND ".join(platform) + "))")
    if q.footprint is not None:
        groups.append(f"footprint:Intersects({to_wkt(q.footprint)})")
    paging = f"offset={q.offset}&limit={q.limit}&sortedby={q.sorted_by}&order={q.order}"
    if groups:
        return f"{BASE_URL}?filter={' AND '.join(groups)}&{paging}"
    return f"{BASE_URL}?{paging}"


def tokenize_query(text: str) -> list[str]:
    """Whitespace-insensitive token stream for query comparison."""
    return _TOKEN.findall(text)
