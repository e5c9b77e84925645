"""Subword tokenization: vocabulary, BPE merges, char fallback, persistence.

The whitespace scheme is marker-based: one marker is prepended to the line
and every space becomes a marker, so decode(encode(line)) is exact for any
line that does not itself contain the marker character and whose characters
were seen during training (unseen characters encode to UNK). Merges never
cross marker boundaries, which keeps per-word encoding cacheable.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .errors import ConfigError, InvalidInputError

MARKER = "\u2581"  # same glyph sentencepiece uses for word boundaries

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


def _escape(token: str) -> str:
    return token.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


@dataclass
class Vocabulary:
    """Bijection between token strings and contiguous integer ids.

    Ids 0..3 are reserved for PAD/BOS/EOS/UNK in that order.
    """

    id_to_token: list[str]
    token_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:4]) != SPECIAL_TOKENS:
            raise InvalidInputError("vocabulary must start with the special tokens")
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise InvalidInputError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.id_to_token):
                fh.write(f"{_escape(tok)}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                tok, idx = line.rstrip("\n").rsplit("\t", 1)
                if int(idx) != len(tokens):
                    raise InvalidInputError(f"non-contiguous vocabulary id {idx}")
                tokens.append(_unescape(tok))
        return cls(tokens)


def _line_units(line: str) -> list[str]:
    """Split a marker-transformed line into word units.

    Each unit starts with MARKER; consecutive spaces yield bare-marker units,
    so concatenating units reproduces the transformed line exactly.
    """
    transformed = MARKER + line.replace(" ", MARKER)
    return [MARKER + piece for piece in transformed.split(MARKER)[1:]]


def _count_pairs(unit_counts: Counter) -> Counter:
    pairs: Counter = Counter()
    for symbols, n in unit_counts.items():
        for a, b in zip(symbols, symbols[1:]):
            pairs[(a, b)] += n
    return pairs


def _merge_symbols(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    merged = []
    joined = pair[0] + pair[1]
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            merged.append(joined)
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return tuple(merged)


class SubwordModel:
    """A trained subword tokenizer: vocabulary plus ordered merge table."""

    def __init__(self, vocab: Vocabulary, merges: list[tuple[str, str]], mode: str):
        if mode not in ("bpe", "char"):
            raise ConfigError(f"unknown tokenizer mode {mode!r}")
        self.vocab = vocab
        self.merges = merges
        self.mode = mode
        self._ranks = {pair: r for r, pair in enumerate(merges)}
        self._known_chars = {t for t in vocab.id_to_token[4:] if len(t) == 1}
        self._unit_cache: dict[str, tuple[int, ...]] = {}

    # -- training ----------------------------------------------------------

    @classmethod
    def train(cls, lines, vocab_size: int, mode: str = "bpe") -> "SubwordModel":
        """Learn a tokenizer from an iterable of text lines.

        Deterministic for a fixed corpus: pair-count ties are broken by the
        lexicographically smallest pair.
        """
        unit_counts: Counter = Counter()
        chars: set[str] = set()
        n_lines = 0
        for line in lines:
            n_lines += 1
            for unit in _line_units(line):
                unit_counts[tuple(unit)] += 1
                chars.update(unit)
        if n_lines == 0:
            raise InvalidInputError("cannot train a tokenizer on an empty corpus")

        base = sorted(chars)
        floor = len(SPECIAL_TOKENS) + len(base)
        if vocab_size <= floor and mode == "bpe":
            raise ConfigError(
                f"vocab_size {vocab_size} leaves no room for merges "
                f"({len(SPECIAL_TOKENS)} specials + {len(base)} characters)"
            )
        if vocab_size < floor:
            raise ConfigError(
                f"vocab_size {vocab_size} cannot hold {len(base)} characters"
            )

        merges: list[tuple[str, str]] = []
        if mode == "bpe":
            budget = vocab_size - floor
            while len(merges) < budget:
                pairs = _count_pairs(unit_counts)
                if not pairs:
                    break
                # highest count wins; ties go to the lexicographically smallest pair
                best_pair, best_count = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
                if best_count < 2:
                    break  # nothing repeats; further merges are noise
                unit_counts = Counter(
                    {_merge_symbols(sym, best_pair): n for sym, n in unit_counts.items()}
                )
                merges.append(best_pair)

        tokens = list(SPECIAL_TOKENS) + base + [a + b for a, b in merges]
        return cls(Vocabulary(tokens), merges, mode)

    # -- encoding ----------------------------------------------------------

    def _encode_unit(self, unit: str) -> tuple[int, ...]:
        cached = self._unit_cache.get(unit)
        if cached is not None:
            return cached
        # unseen characters become a sentinel that no merge rule matches
        symbols = tuple(c if c in self._known_chars else "\0" for c in unit)
        if self.mode == "bpe":
            while len(symbols) > 1:
                ranked = [
                    (rank, pair)
                    for pair in zip(symbols, symbols[1:])
                    if (rank := self._ranks.get(pair)) is not None
                ]
                if not ranked:
                    break
                symbols = _merge_symbols(symbols, min(ranked)[1])
        ids = tuple(self.vocab.token_to_id.get(s, UNK) for s in symbols)
        self._unit_cache[unit] = ids
        return ids

    def encode(self, line: str) -> list[int]:
        ids: list[int] = []
        for unit in _line_units(line):
            ids.extend(self._encode_unit(unit))
        return ids

    def decode(self, ids) -> str:
        pieces = []
        for i in ids:
            i = int(i)
            if i in (PAD, BOS, EOS):
                continue
            pieces.append(self.vocab.id_to_token[i])
        text = "".join(pieces)
        if text.startswith(MARKER):
            text = text[1:]
        return text.replace(MARKER, " ")

    # -- persistence -------------------------------------------------------

    def save(self, vocab_path, merges_path) -> None:
        self.vocab.save(vocab_path)
        with open(merges_path, "w", encoding="utf-8") as fh:
            fh.write(f"#mode\t{self.mode}\n")
            for a, b in self.merges:
                fh.write(f"{_escape(a)}\t{_escape(b)}\n")

    @classmethod
    def load(cls, vocab_path, merges_path) -> "SubwordModel":
        vocab = Vocabulary.load(vocab_path)
        merges: list[tuple[str, str]] = []
        mode = "bpe"
        with open(merges_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#mode\t"):
                    mode = line.split("\t", 1)[1]
                    continue
                a, b = line.split("\t")
                merges.append((_unescape(a), _unescape(b)))
        return cls(vocab, merges, mode)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "tokens": self.vocab.id_to_token,
            "merges": [[a, b] for a, b in self.merges],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SubwordModel":
        merges = [tuple(p) for p in payload["merges"]]
        return cls(Vocabulary(list(payload["tokens"])), merges, payload["mode"])


def train_subword_model(lines, vocab_size: int, mode: str = "bpe") -> SubwordModel:
    return SubwordModel.train(lines, vocab_size, mode)
