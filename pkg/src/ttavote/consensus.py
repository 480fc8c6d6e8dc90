"""Needleman-Wunsch alignment and progressive vote-tally consensus.

Candidate transcriptions of one field are fused by aligning each new
string to the running consensus (match +1, mismatch -1, gap -1) and
tallying per-column votes. The consensus emits, per column, the non-gap
symbol with the most votes when non-gap votes outweigh gaps; character
confidence is that vote count divided by the number of samples.
"""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field

from .core import normalize_text

GAP = "␀"  # symbol reserved for alignment gaps

MATCH_SCORE = 1
MISMATCH_SCORE = -1
GAP_SCORE = -1


class CaseMode(enum.Enum):
    """How letter case is treated during alignment and voting."""

    FOLDED = "folded"  # align/vote on casefolded text, emit majority surface form
    EXACT = "exact"  # case-sensitive throughout


@dataclass(frozen=True)
class Alignment:
    aligned_a: str
    aligned_b: str
    score: int


@dataclass(frozen=True)
class SampleSet:
    """Candidate transcriptions for one field; None marks a failed extraction."""

    samples: tuple[str | None, ...]
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("SampleSet requires at least one sample")
        if not self.provenance:
            object.__setattr__(self, "provenance", tuple(str(i) for i in range(len(self.samples))))
        if len(self.provenance) != len(self.samples):
            raise ValueError("provenance length must equal sample count")

    @property
    def n(self) -> int:
        return len(self.samples)

    def present(self) -> list[str]:
        return [s for s in self.samples if s is not None]


@dataclass(frozen=True)
class ConsensusResult:
    """Consensus string, per-character confidences, and vote tallies."""

    consensus: str | None
    char_confidences: tuple[float, ...]
    columns: tuple[dict[str, int], ...]  # kept columns, parallel to consensus
    dropped_columns: tuple[dict[str, int], ...]
    unanimous: bool
    n_samples: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "consensus": self.consensus,
                "confidences": list(self.char_confidences),
                "unanimous": self.unanimous,
                "n_samples": self.n_samples,
            },
            sort_keys=True,
        )


def nw_align(a: str, b: str) -> Alignment:
    """Optimal global alignment of two strings under +1/-1/-1 scoring.

    Ties are broken deterministically, preferring (left to right) a
    character pair over a gap in ``b`` over a gap in ``a``, which places
    unavoidable gaps as late as possible.
    """
    # Aligning the reversed strings with backward traceback realizes the
    # left-to-right preference order.
    aligned_a, aligned_b, score = _align_reversed(a[::-1], b[::-1])
    return Alignment(aligned_a[::-1], aligned_b[::-1], score)


def _align_reversed(a: str, b: str) -> tuple[str, str, int]:
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = i * GAP_SCORE
    for j in range(1, m + 1):
        dp[0][j] = j * GAP_SCORE
    for i in range(1, n + 1):
        row = dp[i]
        prev = dp[i - 1]
        ca = a[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (MATCH_SCORE if ca == b[j - 1] else MISMATCH_SCORE)
            up = prev[j] + GAP_SCORE
            left = row[j - 1] + GAP_SCORE
            best = diag
            if up > best:
                best = up
            if left > best:
                best = left
            row[j] = best

    out_a: list[str] = []
    out_b: list[str] = []
    i, j = n, m
    while i > 0 or j > 0:
        here = dp[i][j]
        if i > 0 and j > 0 and here == dp[i - 1][j - 1] + (
            MATCH_SCORE if a[i - 1] == b[j - 1] else MISMATCH_SCORE
        ):
            out_a.append(a[i - 1])
            out_b.append(b[j - 1])
            i -= 1
            j -= 1
        elif i > 0 and here == dp[i - 1][j] + GAP_SCORE:
            out_a.append(a[i - 1])
            out_b.append(GAP)
            i -= 1
        else:
            out_a.append(GAP)
            out_b.append(b[j - 1])
            j -= 1
    return "".join(reversed(out_a)), "".join(reversed(out_b)), dp[n][m]


@dataclass
class _Column:
    """Vote tally for one alignment column, with surface-form bookkeeping."""

    votes: Counter = field(default_factory=Counter)  # folded symbol or GAP -> count
    surfaces: dict[str, Counter] = field(default_factory=dict)  # folded -> surface -> count

    def add(self, folded: str, surface: str | None = None) -> None:
        self.votes[folded] += 1
        if folded != GAP:
            self.surfaces.setdefault(folded, Counter())[surface if surface is not None else folded] += 1

    def winner(self, prefer: str | None) -> str:
        """Argmax non-gap symbol; ties prefer ``prefer``, then smallest."""
        best = max(count for sym, count in self.votes.items() if sym != GAP)
        tied = sorted(sym for sym, count in self.votes.items() if sym != GAP and count == best)
        if prefer is not None and prefer in tied:
            return prefer
        return tied[0]

    def surface_for(self, folded: str) -> str:
        forms = self.surfaces[folded]
        best = max(forms.values())
        return min(form for form, count in forms.items() if count == best)

    def non_gap_votes(self) -> int:
        return sum(count for sym, count in self.votes.items() if sym != GAP)

    def tally(self) -> dict[str, int]:
        return dict(self.votes)


def progressive_consensus(sample_set: SampleSet, case_mode: CaseMode = CaseMode.FOLDED) -> ConsensusResult:
    """Fuse candidate strings into a consensus with per-character confidences.

    Absent samples contribute no votes but stay in the confidence
    denominator, so extraction failures depress confidence. Columns whose
    gap votes are not outnumbered by symbol votes are dropped from the
    final string.
    """
    n_total = sample_set.n
    present = sample_set.present()
    unanimous = bool(present) and len({normalize_text(s) for s in present}) == 1

    if not present:
        return ConsensusResult(
            consensus=None,
            char_confidences=(),
            columns=(),
            dropped_columns=(),
            unanimous=False,
            n_samples=n_total,
        )

    columns: list[_Column] = []
    first_pairs = _fold_pairs(present[0], case_mode)
    for folded, surface in first_pairs:
        col = _Column()
        col.add(folded, surface)
        columns.append(col)
    running = "".join(folded for folded, _ in first_pairs)

    merged = 1
    for sample in present[1:]:
        pairs = _fold_pairs(sample, case_mode)
        aln = nw_align(running, "".join(folded for folded, _ in pairs))
        columns = _update_votes(columns, aln, pairs, merged)
        merged += 1
        running = _running_string(columns, aln, running)

    consensus_chars: list[str] = []
    confidences: list[float] = []
    kept: list[dict[str, int]] = []
    dropped: list[dict[str, int]] = []
    prev = running
    for k, col in enumerate(columns):
        gap_votes = col.votes.get(GAP, 0)
        if col.non_gap_votes() > gap_votes:
            prefer = prev[k] if k < len(prev) else None
            folded = col.winner(prefer)
            consensus_chars.append(col.surface_for(folded) if case_mode is CaseMode.FOLDED else folded)
            confidences.append(col.votes[folded] / n_total)
            kept.append(col.tally())
        else:
            dropped.append(col.tally())

    return ConsensusResult(
        consensus="".join(consensus_chars),
        char_confidences=tuple(confidences),
        columns=tuple(kept),
        dropped_columns=tuple(dropped),
        unanimous=unanimous,
        n_samples=n_total,
    )


def _fold_pairs(sample: str, case_mode: CaseMode) -> list[tuple[str, str]]:
    """(folded symbol, surface character) pairs for one sample.

    Case folding can expand a character ("ß" folds to "ss"), so surfaces
    are paired per folded symbol. Folding is context-independent, which
    keeps per-character folding identical to whole-string folding.
    """
    if case_mode is CaseMode.EXACT:
        return [(ch, ch) for ch in sample]
    return [(folded, ch) for ch in sample for folded in ch.casefold()]


def _update_votes(
    columns: list[_Column], aln: Alignment, pairs: list[tuple[str, str]], merged: int
) -> list[_Column]:
    """Merge one aligned sample into the column tallies.

    A gap on the consensus side opens a new column back-filled with gap
    votes for the samples already merged, keeping every column's total
    equal to the number of present samples processed.
    """
    out: list[_Column] = []
    col_iter = iter(columns)
    pair_iter = iter(pairs)
    for cons_sym, sample_sym in zip(aln.aligned_a, aln.aligned_b):
        if cons_sym == GAP:
            col = _Column()
            col.votes[GAP] = merged
        else:
            col = next(col_iter)
        if sample_sym == GAP:
            col.add(GAP)
        else:
            folded, surface = next(pair_iter)
            col.add(folded, surface)
        out.append(col)
    return out


def _running_string(columns: list[_Column], aln: Alignment, previous: str) -> str:
    """Per-column argmax over non-gap symbols for the next alignment round.

    Ties prefer the symbol the running consensus already had at that
    column (new columns have no incumbent).
    """
    incumbent: list[str | None] = []
    pos = 0
    for cons_sym in aln.aligned_a:
        if cons_sym == GAP:
            incumbent.append(None)
        else:
            incumbent.append(previous[pos] if pos < len(previous) else None)
            pos += 1
    return "".join(col.winner(incumbent[k]) for k, col in enumerate(columns))


def word_confidences(result: ConsensusResult) -> list[tuple[str, float]]:
    """Per-word confidence: the minimum character confidence in each word."""
    if not result.consensus:
        return []
    out = []
    word_chars: list[str] = []
    word_confs: list[float] = []
    for ch, conf in zip(result.consensus, result.char_confidences):
        if ch.isspace():
            if word_chars:
                out.append(("".join(word_chars), min(word_confs)))
                word_chars, word_confs = [], []
        else:
            word_chars.append(ch)
            word_confs.append(conf)
    if word_chars:
        out.append(("".join(word_chars), min(word_confs)))
    return out


def field_confidence(result: ConsensusResult) -> float:
    """Field-level confidence: minimum character confidence.

    Unanimous sets score 1.0; a consensus with no kept columns (or no
    present samples) scores 0.0.
    """
    if result.unanimous:
        return 1.0
    if not result.char_confidences:
        return 0.0
    return min(result.char_confidences)
