"""Corpus ingestion: page-text normalization, corpus JSONL and label loading."""

from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_HEADER_PATTERNS: tuple[str, ...] = (r"^Page \d+( of \d+)?$",)

# A repeated line must appear on at least this share of a document's pages.
REPEAT_THRESHOLD = 0.8
# Repetition stripping is skipped for documents shorter than this.
REPEAT_MIN_PAGES = 3

_HSPACE = re.compile(r"\s+")


class CorpusError(ValueError):
    """Raised for malformed corpus or label input."""


@dataclass(frozen=True)
class PageRecord:
    doc_id: str
    page_no: int
    blocks: tuple[str, ...]
    flags: tuple[str, ...] = ()

    @property
    def raw_text(self) -> str:
        return "\n".join(self.blocks)

    # prompt templates refer to ``page.text``
    @property
    def text(self) -> str:
        return self.raw_text

    @property
    def key(self) -> tuple[str, int]:
        return (self.doc_id, self.page_no)

    @property
    def is_blank(self) -> bool:
        return not self.blocks


@dataclass(frozen=True)
class CorpusLabel:
    doc_id: str
    fund_name: str
    holdings_pages: tuple[int, ...]
    net_asset_value: float
    value_in_thousands: bool = False


def clean_line(line: str) -> str:
    """NFKC-normalize one line and collapse whitespace runs to single spaces."""
    text = unicodedata.normalize("NFKC", line)
    text = _HSPACE.sub(" ", text).strip()
    # whitespace removal can leave a non-normalized sequence behind
    return unicodedata.normalize("NFKC", text)


def _compile(patterns: Iterable[str]) -> list[re.Pattern[str]]:
    return [re.compile(p) for p in patterns]


def normalize_page(
    doc_id: str,
    page_no: int,
    raw: str,
    *,
    header_patterns: Sequence[str] = DEFAULT_HEADER_PATTERNS,
    repeated_lines: frozenset[str] = frozenset(),
) -> PageRecord:
    """Normalize raw page text into a :class:`PageRecord`.

    Each surviving non-empty line becomes one block. Lines are dropped when
    they match a header/footer pattern, consist solely of the page number,
    or belong to ``repeated_lines`` (document-level running headers).
    """
    if page_no < 1:
        raise CorpusError(f"page_no must be >= 1, got {page_no}")
    compiled = _compile(header_patterns)
    blocks: list[str] = []
    for line in unicodedata.normalize("NFKC", raw).splitlines():
        text = clean_line(line)
        if not text:
            continue
        if text == str(page_no):
            continue
        if any(p.search(text) for p in compiled):
            continue
        if text in repeated_lines:
            continue
        blocks.append(text)
    flags = ("blank",) if not blocks else ()
    return PageRecord(doc_id=doc_id, page_no=page_no, blocks=tuple(blocks), flags=flags)


def repeated_lines(
    pages: Sequence[str],
    threshold: float = REPEAT_THRESHOLD,
    min_pages: int = REPEAT_MIN_PAGES,
) -> frozenset[str]:
    """Lines that occur verbatim on at least ``threshold`` of the given pages."""
    if len(pages) < min_pages:
        return frozenset()
    counts: Counter[str] = Counter()
    for raw in pages:
        seen = {clean_line(line) for line in unicodedata.normalize("NFKC", raw).splitlines()}
        seen.discard("")
        counts.update(seen)
    need = threshold * len(pages)
    return frozenset(line for line, n in counts.items() if n >= need)


_REQUIRED_PAGE_FIELDS = (("doc_id", str), ("page_no", int), ("text", str))


def load_corpus(
    path: str | Path,
    *,
    header_patterns: Sequence[str] = DEFAULT_HEADER_PATTERNS,
    repeat_threshold: float = REPEAT_THRESHOLD,
) -> list[PageRecord]:
    """Read a corpus JSONL file and return normalized pages in (doc_id, page_no) order."""
    raw_pages: dict[tuple[str, int], str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"line {lineno}: expected an object")
            for name, typ in _REQUIRED_PAGE_FIELDS:
                if name not in obj:
                    raise CorpusError(f"line {lineno}: missing field {name}")
                value = obj[name]
                if not isinstance(value, typ) or isinstance(value, bool):
                    raise CorpusError(f"line {lineno}: field {name} must be {typ.__name__}")
            if obj["page_no"] < 1:
                raise CorpusError(f"line {lineno}: page_no must be >= 1")
            key = (obj["doc_id"], obj["page_no"])
            if key in raw_pages:
                raise CorpusError(f"line {lineno}: duplicate page {key[0]!r} p.{key[1]}")
            raw_pages[key] = obj["text"]

    by_doc: dict[str, list[str]] = defaultdict(list)
    for (doc_id, _), text in raw_pages.items():
        by_doc[doc_id].append(text)
    repeats = {doc: repeated_lines(texts, repeat_threshold) for doc, texts in by_doc.items()}

    return [
        normalize_page(
            doc_id,
            page_no,
            raw_pages[(doc_id, page_no)],
            header_patterns=header_patterns,
            repeated_lines=repeats[doc_id],
        )
        for doc_id, page_no in sorted(raw_pages)
    ]


def load_labels(path: str | Path) -> list[CorpusLabel]:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"labels: invalid JSON ({exc.msg})") from None
    if not isinstance(data, list):
        raise CorpusError("labels: expected a JSON array")
    return [_parse_label(i, entry) for i, entry in enumerate(data)]


def _parse_label(index: int, entry: object) -> CorpusLabel:
    where = f"label {index}"
    if not isinstance(entry, dict):
        raise CorpusError(f"{where}: expected an object")
    for name in ("doc_id", "fund_name", "holdings_pages", "net_asset_value"):
        if name not in entry:
            raise CorpusError(f"{where}: missing field {name}")
    pages = entry["holdings_pages"]
    if not isinstance(pages, list) or not all(
        isinstance(p, int) and not isinstance(p, bool) for p in pages
    ):
        raise CorpusError(f"{where}: holdings_pages must be a list of integers")
    if any(p < 1 for p in pages):
        raise CorpusError(f"{where}: page numbers must be >= 1")
    nav = entry["net_asset_value"]
    if isinstance(nav, bool) or not isinstance(nav, (int, float)) or not math.isfinite(nav):
        raise CorpusError(f"{where}: net_asset_value must be a finite number")
    thousands = entry.get("value_in_thousands", False)
    if not isinstance(thousands, bool):
        raise CorpusError(f"{where}: value_in_thousands must be a boolean")
    return CorpusLabel(
        doc_id=str(entry["doc_id"]),
        fund_name=str(entry["fund_name"]),
        holdings_pages=tuple(sorted(pages)),
        net_asset_value=float(nav),
        value_in_thousands=thousands,
    )


def corpus_to_jsonl(pages: Iterable[tuple[str, int, str]]) -> str:
    """Serialize (doc_id, page_no, text) triples in the corpus JSONL format."""
    return "".join(
        json.dumps({"doc_id": d, "page_no": p, "text": t}, ensure_ascii=False) + "\n"
        for d, p, t in pages
    )

