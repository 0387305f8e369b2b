"""Document ingestion: cleaning, chunking into passages, and the passage store.

Raw documents come in as ``{content, metadata}`` records (metadata must carry
``source`` and ``seq_num``). Ingestion cleans the text, splits it into
token-bounded passages with stable content-hash ids, and groups them by
source so that neighbouring passages of one document can later serve as hard
negatives.
"""

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import EmptyCorpus, LoadError, SchemaViolation
from .tokenization import Tokenizer, WhitespaceTokenizer, token_spans

DEFAULT_MAX_PASSAGE_TOKENS = 400

# markdown image links, bare image URLs, then markdown links (text kept)
_MD_IMAGE_RE = re.compile(r"!\[[^\]]*\]\([^)]*\)")
_BARE_IMAGE_URL_RE = re.compile(r"https?://\S+?\.(?:png|jpe?g|gif|svg|webp)(?=[\s)\]]|$)", re.IGNORECASE)
_MD_LINK_RE = re.compile(r"\[([^\]]*)\]\([^)]*\)")

_SENTENCE_END_RE = re.compile(r"[.!?][\"')\]]*$")


@dataclass
class RawDocument:
    """One source document plus its provenance metadata."""

    content: str
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def source(self) -> str:
        return str(self.metadata.get("source", ""))

    @property
    def seq_num(self) -> Any:
        return self.metadata.get("seq_num")

    @classmethod
    def from_dict(cls, record: dict[str, Any]) -> "RawDocument":
        if "content" not in record:
            raise SchemaViolation("document record missing 'content'")
        return cls(content=record["content"], metadata=dict(record.get("metadata", {})))


@dataclass(frozen=True)
class Passage:
    """A token-bounded chunk of a document; the unit of retrieval."""

    passage_id: str
    content: str
    source: str
    seq_num: int
    token_count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "passage_id": self.passage_id,
            "content": self.content,
            "source": self.source,
            "seq_num": self.seq_num,
            "token_count": self.token_count,
        }

    @classmethod
    def from_dict(cls, record: dict[str, Any]) -> "Passage":
        try:
            return cls(
                passage_id=record["passage_id"],
                content=record["content"],
                source=record["source"],
                seq_num=int(record["seq_num"]),
                token_count=int(record["token_count"]),
            )
        except KeyError as exc:
            raise SchemaViolation(f"passage record missing {exc}") from exc


def passage_id_for(content: str, source: str) -> str:
    """Stable id: identical (content, source) always hash to the same id."""
    digest = hashlib.sha256(f"{source}\x00{content}".encode("utf-8")).hexdigest()
    return digest[:16]


def clean_text(content: str) -> str:
    """Strip markdown image links and bare image URLs; keep link text only.

    Idempotent: applying twice equals applying once.
    """
    out = _MD_IMAGE_RE.sub("", content)
    out = _BARE_IMAGE_URL_RE.sub("", out)
    out = _MD_LINK_RE.sub(r"\1", out)
    return out


class PassageStore:
    """Passages grouped by source, with O(1) id lookup.

    Construction is single-threaded; reads are safe to share across threads
    afterwards. Iteration yields passages in source-grouped order: sources in
    first-seen order, passages within a source in seq order.
    """

    def __init__(self, passages: Iterable[Passage] = ()):
        self._by_id: dict[str, Passage] = {}
        self._by_source: dict[str, list[Passage]] = {}
        for passage in passages:
            self.add(passage)

    def add(self, passage: Passage) -> bool:
        """Add a passage; returns False if its id is already present."""
        if passage.passage_id in self._by_id:
            return False
        self._by_id[passage.passage_id] = passage
        self._by_source.setdefault(passage.source, []).append(passage)
        return True

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, passage_id: str) -> bool:
        return passage_id in self._by_id

    def __iter__(self) -> Iterator[Passage]:
        for source_passages in self._by_source.values():
            yield from sorted(source_passages, key=lambda p: p.seq_num)

    def get(self, passage_id: str) -> Passage:
        return self._by_id[passage_id]

    def passage_ids(self) -> list[str]:
        return [p.passage_id for p in self]

    def sources(self) -> list[str]:
        return list(self._by_source)

    def passages_for_source(self, source: str) -> list[Passage]:
        return sorted(self._by_source.get(source, []), key=lambda p: p.seq_num)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            for passage in self:
                fh.write(json.dumps(passage.to_dict(), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PassageStore":
        store = cls()
        with Path(path).open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    store.add(Passage.from_dict(record))
                except (json.JSONDecodeError, SchemaViolation, ValueError, TypeError) as exc:
                    raise LoadError(f"corrupt passage line {lineno}: {exc}", line=lineno) from exc
        return store


def _chunk_spans(
    content: str, max_passage_tokens: int, tokenizer: Tokenizer
) -> list[tuple[int, int, int]]:
    """Greedy chunking over whitespace token spans.

    Each chunk is a (start_char, end_char, token_count) triple. Within the
    token budget we prefer to cut after the last sentence-final token; when no
    sentence boundary falls inside the window we hard-split at the budget.
    Chunks never overlap, and internal whitespace is preserved verbatim.
    """
    spans = token_spans(content)
    if not spans:
        return []
    whitespace_like = isinstance(tokenizer, WhitespaceTokenizer)
    chunks: list[tuple[int, int, int]] = []
    i = 0
    while i < len(spans):
        end = min(i + max_passage_tokens, len(spans))
        if end < len(spans):
            # look for the last sentence boundary inside the window
            cut = end
            for j in range(end - 1, i, -1):
                token = content[spans[j][0] : spans[j][1]]
                if _SENTENCE_END_RE.search(token):
                    cut = j + 1
                    break
            end = cut
        # for non-whitespace tokenizers the unit count can exceed the
        # whitespace token count; shrink the window until it fits
        while not whitespace_like and end - i > 1:
            text = content[spans[i][0] : spans[end - 1][1]]
            if len(tokenizer.tokenize(text)) <= max_passage_tokens:
                break
            end -= 1
        text = content[spans[i][0] : spans[end - 1][1]]
        chunks.append((spans[i][0], spans[end - 1][1], len(tokenizer.tokenize(text))))
        i = end
    return chunks


def ingest(
    documents: Iterable[RawDocument],
    max_passage_tokens: int = DEFAULT_MAX_PASSAGE_TOKENS,
    tokenizer: Tokenizer | None = None,
) -> PassageStore:
    """Clean, chunk, and index a document collection.

    Deterministic in (documents, max_passage_tokens, tokenizer identity).
    Raises EmptyCorpus on an empty input and SchemaViolation when a document
    lacks a non-empty ``source``.
    """
    if max_passage_tokens < 16:
        raise ValueError(f"max_passage_tokens must be >= 16, got {max_passage_tokens}")
    tokenizer = tokenizer or WhitespaceTokenizer()
    documents = list(documents)
    if not documents:
        raise EmptyCorpus("no documents to ingest")

    store = PassageStore()
    next_seq: dict[str, int] = {}
    for position, doc in enumerate(documents):
        if not doc.content or not doc.content.strip():
            raise SchemaViolation(f"document seq_num={doc.seq_num!r} has empty content")
        if not doc.source:
            raise SchemaViolation(
                f"document seq_num={doc.seq_num if doc.seq_num is not None else position!r} "
                "is missing metadata key 'source'"
            )
        cleaned = clean_text(doc.content)
        for start, end, token_count in _chunk_spans(cleaned, max_passage_tokens, tokenizer):
            chunk = cleaned[start:end]
            seq = next_seq.get(doc.source, 0)
            next_seq[doc.source] = seq + 1
            store.add(
                Passage(
                    passage_id=passage_id_for(chunk, doc.source),
                    content=chunk,
                    source=doc.source,
                    seq_num=seq,
                    token_count=token_count,
                )
            )
    return store


def load_documents(path: str | Path) -> list[RawDocument]:
    """Read raw documents from a JSONL file or a directory of .txt/.md files."""
    path = Path(path)
    docs: list[RawDocument] = []
    if path.is_dir():
        for seq, file in enumerate(sorted(path.glob("**/*"))):
            if file.suffix.lower() in {".txt", ".md"} and file.is_file():
                docs.append(
                    RawDocument(
                        content=file.read_text(encoding="utf-8"),
                        metadata={"source": str(file), "seq_num": seq},
                    )
                )
        return docs
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                docs.append(RawDocument.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise LoadError(f"corrupt document line {lineno}: {exc}", line=lineno) from exc
    return docs
