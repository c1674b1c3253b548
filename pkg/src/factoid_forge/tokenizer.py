"""Deterministic text<->token mapping with no learned vocabulary.

Two modes:
  * char  -- fixed alphabet of the 95 printable ASCII characters. The corpus
             generators only ever emit printable ASCII, so this vocabulary is
             closed by construction and needs no samples.
  * word  -- vocabulary is the sorted set of whitespace-separated words seen
             in the provided samples. Used for random-word-sequence data.

Ids 0..3 are reserved for PAD/BOS/EOS/SEP; sequences fed to the model are
framed as ``BOS prompt SEP response EOS``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError, OOVError

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
SEP_ID = 3

_SPECIALS = ("<pad>", "<bos>", "<eos>", "<sep>")
_PRINTABLE_ASCII = [chr(c) for c in range(32, 127)]


@dataclass(frozen=True)
class Tokenizer:
    mode: str                      # "char" | "word"
    vocab: tuple[str, ...]         # specials first, then sorted symbols
    token_to_id: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "token_to_id", {tok: i for i, tok in enumerate(self.vocab)}
        )

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def _split(self, text: str) -> list[str]:
        if self.mode == "char":
            return list(text)
        return text.split()

    def encode(self, text: str) -> list[int]:
        """Encode in-vocabulary text; raises OOVError naming the bad symbol."""
        ids = []
        for sym in self._split(text):
            idx = self.token_to_id.get(sym)
            if idx is None:
                raise OOVError(sym)
            ids.append(idx)
        return ids

    def decode(self, ids) -> str:
        """Inverse of encode. Special tokens are dropped."""
        toks = [self.vocab[i] for i in ids if i >= len(_SPECIALS)]
        if self.mode == "char":
            return "".join(toks)
        return " ".join(toks)

    def covers(self, text: str) -> bool:
        return all(sym in self.token_to_id for sym in self._split(text))

    def to_json(self) -> str:
        return json.dumps({"mode": self.mode, "vocab": list(self.vocab)})

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_json(cls, payload: str) -> "Tokenizer":
        obj = json.loads(payload)
        return cls(mode=obj["mode"], vocab=tuple(obj["vocab"]))

    @classmethod
    def load(cls, path) -> "Tokenizer":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def build_tokenizer(mode: str, corpus_samples=()) -> Tokenizer:
    """Build a tokenizer covering `corpus_samples` (plus specials).

    Char mode ignores the samples and uses the full printable-ASCII alphabet.
    Word mode requires at least one sample. The symbol list is sorted, so
    construction is a pure function of (mode, corpus_samples).
    """
    if mode == "char":
        symbols = list(_PRINTABLE_ASCII)
    elif mode == "word":
        samples = list(corpus_samples)
        if not samples:
            raise ConfigError("word-mode tokenizer needs nonempty corpus samples")
        words = set()
        for text in samples:
            words.update(text.split())
        symbols = sorted(words)
    else:
        raise ConfigError(f"unknown tokenizer mode: {mode!r}")
    return Tokenizer(mode=mode, vocab=tuple(_SPECIALS) + tuple(symbols))
