"""Human-friendly dataset identifiers: a random adjective plus a first name,
like ``vampiric_aviyana`` or ``branchless_eliyana``.

Mnemonics are easier to remember and exchange verbally than numeric IDs.
Uniqueness is the caller's concern (a membership oracle is passed in); the
generator rejection-samples against it and falls back to a numeric suffix if
the combination space is nearly exhausted.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

_WORD_RE = re.compile(r"^[a-z]+$")
MNEMONIC_RE = re.compile(r"^[a-z]+_[a-z]+(_[0-9]+)?$")

_MAX_TRIES = 100


class MnemonicError(Exception):
    pass


@dataclass(frozen=True)
class WordLists:
    adjectives: tuple[str, ...]
    names: tuple[str, ...]

    def __post_init__(self):
        for label, words in (("adjectives", self.adjectives), ("names", self.names)):
            if not words:
                raise MnemonicError(f"{label} list is empty")
            bad = [w for w in words if not _WORD_RE.match(w)]
            if bad:
                raise MnemonicError(f"{label} list contains invalid words (want [a-z]+): {bad[:5]}")

    @property
    def capacity(self) -> int:
        return len(self.adjectives) * len(self.names)

    @classmethod
    def bundled(cls) -> "WordLists":
        """The word lists shipped with the package."""
        root = resources.files("dabih").joinpath("wordlists")
        return cls(
            adjectives=_parse_words(root.joinpath("adjectives.txt").read_text("utf-8")),
            names=_parse_words(root.joinpath("names.txt").read_text("utf-8")),
        )

    @classmethod
    def from_files(cls, adjectives_path: str | Path, names_path: str | Path) -> "WordLists":
        """Load word lists from one-word-per-line UTF-8 files."""
        return cls(
            adjectives=_parse_words(Path(adjectives_path).read_text("utf-8")),
            names=_parse_words(Path(names_path).read_text("utf-8")),
        )


def _parse_words(text: str) -> tuple[str, ...]:
    return tuple(w.strip() for w in text.splitlines() if w.strip())


def generate_mnemonic(
    lists: WordLists,
    taken: Callable[[str], bool],
    *,
    rng: random.Random | None = None,
) -> str:
    """Draw ``<adjective>_<name>`` uniformly over untaken combinations.

    ``taken`` is a membership oracle (e.g. a database uniqueness probe). After
    100 rejected samples the last candidate gets a ``_2``, ``_3``, ... suffix
    until a free identifier is found.
    """
    rng = rng or random.SystemRandom()
    candidate = ""
    for _ in range(_MAX_TRIES):
        candidate = f"{rng.choice(lists.adjectives)}_{rng.choice(lists.names)}"
        if not taken(candidate):
            return candidate
    for suffix in range(2, 2 + 10_000):
        fallback = f"{candidate}_{suffix}"
        if not taken(fallback):
            return fallback
    raise MnemonicError("mnemonic space exhausted")
