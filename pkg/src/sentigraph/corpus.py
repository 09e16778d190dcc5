"""Corpus ingestion: sentence splitting, tokenization, vocabulary and word frequencies."""

import logging
import re
from collections import Counter
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(len(SPECIAL_TOKENS))

# Delimiters stay attached to the sentence they close.
_SENTENCE_END = re.compile(r"[.!?;。！？；]+")
_TOKEN = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class CorpusError(ValueError):
    """Raised when a corpus file cannot be ingested."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message if line_number is None else f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class Token:
    """A token with its vocabulary id and character span inside its sentence."""

    surface: str
    id: int
    char_span: tuple[int, int]

    @property
    def norm(self) -> str:
        """Lowercased form used for vocabulary lookups."""
        return self.surface.lower()


@dataclass(frozen=True)
class Sentence:
    """An ordered list of tokens taken from one review line."""

    text: str
    tokens: tuple[Token, ...]
    doc_id: int = 0

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def ids(self) -> list[int]:
        return [token.id for token in self.tokens]

    @property
    def words(self) -> list[str]:
        return [token.norm for token in self.tokens]


@dataclass(frozen=True)
class Document:
    doc_id: int
    text: str
    sentences: tuple[Sentence, ...]


class Vocabulary:
    """Word-level vocabulary with reserved ids for the special tokens."""

    def __init__(self, words: Iterable[str] = (), counts: dict[str, int] | None = None):
        self._itos: list[str] = list(SPECIAL_TOKENS)
        self._stoi: dict[str, int] = {token: i for i, token in enumerate(self._itos)}
        self.counts: dict[str, int] = dict(counts or {})
        for word in words:
            self.add(word)

    def add(self, word: str) -> int:
        if word not in self._stoi:
            self._stoi[word] = len(self._itos)
            self._itos.append(word)
        return self._stoi[word]

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, word: str) -> bool:
        return word in self._stoi

    def id_of(self, word: str) -> int:
        """Vocabulary id of a (lowercased) word, `UNK_ID` when unknown."""
        return self._stoi.get(word.lower(), UNK_ID)

    def word_of(self, index: int) -> str:
        return self._itos[index]

    def encode(self, text: str) -> list[int]:
        """Token ids of an arbitrary text, using the corpus tokenizer."""
        return [self.id_of(match.group()) for match in _TOKEN.finditer(text)]

    @property
    def words(self) -> list[str]:
        return list(self._itos)

    def save(self, path: Path | str) -> None:
        """Write the vocabulary as TSV `word \\t id \\t count`."""
        lines = [f"{word}\t{i}\t{self.counts.get(word, 0)}" for i, word in enumerate(self._itos)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "Vocabulary":
        vocab = cls()
        for line_number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line:
                continue
            try:
                word, index, count = line.split("\t")
            except ValueError as e:
                raise CorpusError(f"malformed vocabulary row {line!r}", line_number) from e
            if vocab.add(word) != int(index):
                raise CorpusError(f"vocabulary id {index} for {word!r} is out of order", line_number)
            if int(count):
                vocab.counts[word] = int(count)
        return vocab


@dataclass
class FrequencyTable:
    """Occurrence count of every corpus word."""

    counts: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.counts)

    def frequency(self, term: str) -> int:
        """Frequency of a word; multi-word terms use their rarest word."""
        term = term.lower()
        if term in self.counts:
            return self.counts[term]
        words = [match.group() for match in _TOKEN.finditer(term)]
        if len(words) > 1:
            return min(self.counts.get(word, 0) for word in words)
        return 0

    def total(self) -> int:
        return sum(self.counts.values())


class Corpus:
    """Ingested reviews with their sentences and the vocabulary built over them."""

    def __init__(self, documents: list[Document], vocab: Vocabulary):
        self.documents = documents
        self.vocab = vocab

    def __len__(self) -> int:
        return len(self.documents)

    def sentences(self) -> Iterator[Sentence]:
        for document in self.documents:
            yield from document.sentences

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Corpus":
        """Build a corpus from review lines; blank lines are skipped."""
        raw = [(doc_id, line.strip()) for doc_id, line in enumerate(lines, start=1) if line.strip()]
        counts: Counter[str] = Counter()
        for _, text in raw:
            counts.update(match.group().lower() for match in _TOKEN.finditer(text))
        # first-occurrence order keeps ids stable for identical input
        vocab = Vocabulary(counts=dict(counts))
        for _, text in raw:
            for match in _TOKEN.finditer(text):
                vocab.add(match.group().lower())
        documents = [
            Document(
                doc_id=doc_id,
                text=text,
                sentences=tuple(tokenize(part, vocab, doc_id=doc_id) for part in split_sentences(text)),
            )
            for doc_id, text in raw
        ]
        return cls(documents, vocab)


def ingest(path: Path | str) -> Corpus:
    """Read a UTF-8 review file, one review per line.

    Parameters
    ----------
    path : Path | str
        Text file with one review per line.

    Returns
    -------
    Corpus
        One document per non-empty line, in file order.

    Raises
    ------
    CorpusError
        If a line is not valid UTF-8; the error carries the line number.
    OSError
        If the file cannot be read.
    """
    raw = Path(path).read_bytes()
    lines = []
    for line_number, chunk in enumerate(raw.splitlines(), start=1):
        try:
            lines.append(chunk.decode("utf-8"))
        except UnicodeDecodeError as e:
            raise CorpusError(f"invalid UTF-8 ({e.reason})", line_number) from e
    corpus = Corpus.from_lines(lines)
    logger.info(f"Ingested {len(corpus)} documents, vocabulary of {len(corpus.vocab)} from {path}")
    return corpus


def split_sentences(text: str) -> list[str]:
    """Split a review into sentences, keeping each delimiter with its sentence."""
    sentences = []
    start = 0
    for match in _SENTENCE_END.finditer(text):
        sentences.append(text[start : match.end()])
        start = match.end()
    sentences.append(text[start:])
    return [sentence.strip() for sentence in sentences if sentence.strip()]


def tokenize(text: str, vocab: Vocabulary | None = None, doc_id: int = 0) -> Sentence:
    """Split a sentence on whitespace and punctuation.

    Token surfaces keep their original casing; ids are looked up lowercased and
    fall back to `UNK_ID` without a vocabulary or for unknown words.
    """
    tokens = tuple(
        Token(
            surface=match.group(),
            id=vocab.id_of(match.group()) if vocab is not None else UNK_ID,
            char_span=(match.start(), match.end()),
        )
        for match in _TOKEN.finditer(text)
    )
    return Sentence(text=text, tokens=tokens, doc_id=doc_id)


def detokenize(sentence: Sentence) -> str:
    """Rebuild the sentence text from its token spans and the original gaps."""
    pieces = []
    cursor = 0
    for token in sentence.tokens:
        start, end = token.char_span
        pieces.append(sentence.text[cursor:start])
        pieces.append(token.surface)
        cursor = end
    pieces.append(sentence.text[cursor:])
    return "".join(pieces)


def build_frequency_table(corpus: Corpus) -> FrequencyTable:
    """Count every (lowercased) token occurrence in the corpus."""
    counts: Counter[str] = Counter(token.norm for sentence in corpus.sentences() for token in sentence.tokens)
    return FrequencyTable(counts=dict(counts))
