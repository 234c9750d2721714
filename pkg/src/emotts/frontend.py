"""Lexicon-based toy front-end: text -> phoneme symbols -> embedding ids.

Each language owns a disjoint id range.  Id 0 is padding; language ``k``'s
symbols occupy ``offset_k + 1 .. offset_k + V_k`` where the offsets stack the
inventories in language-id order.

On disk, a front-end directory holds ``inventory_<lang>.txt`` (one symbol per
line, local id = line index + 1) and ``lexicon_<lang>.tsv``
(``word<TAB>space separated phonemes``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .container import atomic_write_text
from .errors import EncodingError, InvariantError, RegistryError, UnknownWordError


@dataclass(frozen=True)
class PhonemeInventory:
    language_id: int
    symbols: tuple
    offset: int = 0

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if len(set(self.symbols)) != len(self.symbols):
            raise InvariantError(f"inventory for language {self.language_id} has duplicate symbols")

    @property
    def symbol_to_id(self) -> dict:
        return {s: self.offset + i + 1 for i, s in enumerate(self.symbols)}

    @property
    def id_range(self) -> range:
        return range(self.offset + 1, self.offset + len(self.symbols) + 1)

    def __len__(self):
        return len(self.symbols)


@dataclass(frozen=True)
class PhonemeSequence:
    symbols: tuple
    language_id: int

    def __len__(self):
        return len(self.symbols)


def encode(seq, inventory: PhonemeInventory) -> list:
    symbols = seq.symbols if isinstance(seq, PhonemeSequence) else seq
    table = inventory.symbol_to_id
    out = []
    for s in symbols:
        try:
            out.append(table[s])
        except KeyError:
            raise EncodingError(f"symbol {s!r} not in inventory of language {inventory.language_id}") from None
    return out


def decode(ids, inventory: PhonemeInventory) -> PhonemeSequence:
    out = []
    for i in ids:
        if int(i) not in inventory.id_range:
            raise EncodingError(f"id {i} outside the range of language {inventory.language_id}")
        out.append(inventory.symbols[int(i) - inventory.offset - 1])
    return PhonemeSequence(tuple(out), inventory.language_id)


@dataclass
class Lexicon:
    entries: dict = field(default_factory=dict)  # word -> tuple of symbols

    def lookup(self, token: str):
        """Whole-token match, else greedy longest-prefix segmentation; None if stuck."""
        if token in self.entries:
            return list(self.entries[token])
        out, pos = [], 0
        longest = max((len(w) for w in self.entries), default=0)
        while pos < len(token):
            for end in range(min(len(token), pos + longest), pos, -1):
                piece = self.entries.get(token[pos:end])
                if piece is not None:
                    out.extend(piece)
                    pos = end
                    break
            else:
                return None
        return out


class FrontEnd:
    """Per-language inventories and lexicons with stacked id ranges."""

    def __init__(self, inventories: dict, lexicons: dict | None = None):
        self.inventories = {}
        offset = 0
        for lang in sorted(inventories):
            symbols = inventories[lang]
            self.inventories[lang] = PhonemeInventory(lang, tuple(symbols), offset)
            offset += len(symbols)
        self.lexicons = {lang: Lexicon(dict(v)) for lang, v in (lexicons or {}).items()}
        seen = {}
        for inv in self.inventories.values():
            for s in inv.symbols:
                if s in seen:
                    raise InvariantError(
                        f"symbol {s!r} shared by languages {seen[s]} and {inv.language_id}; inventories must be disjoint"
                    )
                seen[s] = inv.language_id

    @property
    def n_symbols(self) -> int:
        return sum(len(inv) for inv in self.inventories.values())

    @property
    def languages(self) -> list:
        return sorted(self.inventories)

    def inventory(self, language_id: int) -> PhonemeInventory:
        try:
            return self.inventories[language_id]
        except KeyError:
            raise RegistryError(f"no inventory for language {language_id}") from None

    def grapheme_to_phoneme(self, text: str, language_id: int) -> PhonemeSequence:
        lexicon = self.lexicons.get(language_id)
        if lexicon is None:
            raise RegistryError(f"no lexicon registered for language {language_id}")
        symbols = []
        for token in text.split():
            phones = lexicon.lookup(token)
            if phones is None:
                raise UnknownWordError(token, language_id)
            symbols.extend(phones)
        return PhonemeSequence(tuple(symbols), language_id)

    def encode(self, seq) -> list:
        return encode(seq, self.inventory(seq.language_id))

    def text_to_ids(self, text: str, language_id: int) -> list:
        return self.encode(self.grapheme_to_phoneme(text, language_id))

    def to_dict(self) -> dict:
        return {
            "inventories": {str(k): list(v.symbols) for k, v in self.inventories.items()},
            "lexicons": {str(k): {w: list(p) for w, p in v.entries.items()} for k, v in self.lexicons.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrontEnd":
        return cls(
            {int(k): v for k, v in d["inventories"].items()},
            {int(k): {w: tuple(p) for w, p in v.items()} for k, v in d.get("lexicons", {}).items()},
        )

    def save(self, directory) -> None:
        directory = Path(directory)
        for lang, inv in self.inventories.items():
            atomic_write_text(directory / f"inventory_{lang}.txt", "".join(s + "\n" for s in inv.symbols))
        for lang, lex in self.lexicons.items():
            lines = "".join(f"{w}\t{' '.join(p)}\n" for w, p in sorted(lex.entries.items()))
            atomic_write_text(directory / f"lexicon_{lang}.tsv", lines)

    @classmethod
    def load(cls, directory) -> "FrontEnd":
        directory = Path(directory)
        inventories, lexicons = {}, {}
        for path in sorted(directory.glob("inventory_*.txt")):
            m = re.fullmatch(r"inventory_(\d+)\.txt", path.name)
            if m:
                lines = path.read_text(encoding="utf-8").splitlines()
                inventories[int(m.group(1))] = [ln.strip() for ln in lines if ln.strip()]
        for path in sorted(directory.glob("lexicon_*.tsv")):
            m = re.fullmatch(r"lexicon_(\d+)\.tsv", path.name)
            if m:
                lexicons[int(m.group(1))] = read_lexicon(path)
        if not inventories:
            raise RegistryError(f"no inventory_<lang>.txt files in {directory}")
        return cls(inventories, lexicons)


def read_lexicon(path) -> dict:
    entries = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        word, sep, phones = line.partition("\t")
        if not sep or not phones.split():
            raise EncodingError(f"{path}:{lineno}: expected 'word<TAB>phonemes'")
        entries[word] = tuple(phones.split())
    return entries
