"""Evidence knowledge base and action-outcome memory.

The knowledge base holds (claim, persuasiveness) pairs.  Admission is gated
on relevance to what is already known or currently under discussion, and
persuasiveness scores evolve with the round reward: claims attached to a
rewarded intervention move up, claims attached to a punished one move down,
untouched claims stay put.  The memory stores (action, observation, reward)
tuples and only keeps the ones whose reward cleared a threshold, so recall
surfaces strategies that actually worked.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

_TOKEN_RE = re.compile(r"[a-z0-9']+")

_STOPWORDS = frozenset(
    "a an and are as at be but by for from has have in is it its of on or "
    "that the this to was were will with".split()
)


def tokenize(text: str) -> frozenset[str]:
    """Lowercased, punctuation-stripped token set with trivial words removed."""
    return frozenset(t for t in _TOKEN_RE.findall(text.lower()) if t not in _STOPWORDS)


def jaccard(a: frozenset[str] | set[str], b: frozenset[str] | set[str]) -> float:
    if not a and not b:
        return 0.0
    union = len(a | b)
    return len(a & b) / union if union else 0.0


@dataclass
class EvidenceItem:
    id: str
    claim_text: str
    persuasiveness: float
    topic_tags: tuple[str, ...]
    source_label: str = ""

    def __post_init__(self) -> None:
        if not self.claim_text:
            raise ValueError("claim_text must be nonempty")
        if not 0.0 <= self.persuasiveness <= 1.0:
            raise ValueError(f"persuasiveness must be in [0,1], got {self.persuasiveness}")
        self.topic_tags = tuple(t.lower() for t in self.topic_tags)

    @property
    def tokens(self) -> frozenset[str]:
        return tokenize(self.claim_text) | frozenset(self.topic_tags)


class KnowledgeBase:
    """Claim store with relevance-gated admission and reward-driven scores."""

    def __init__(self, delta: float = 0.2, eta: float = 0.01):
        if not 0 < delta < 1:
            raise ValueError("delta must be in (0,1)")
        self.delta = delta
        self.eta = eta
        self.items: dict[str, EvidenceItem] = {}

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.items

    def seed(self, items: list[EvidenceItem]) -> None:
        """Load the initial corpus, bypassing the admission gate."""
        for item in items:
            if item.id in self.items:
                raise ValueError(f"duplicate evidence id {item.id!r}")
            self.items[item.id] = item

    def relevance(self, tokens: frozenset[str], topic_tags: frozenset[str] = frozenset()) -> float:
        """Best token-set overlap against the corpus and the live topic."""
        best = jaccard(tokens, topic_tags) if topic_tags else 0.0
        for item in self.items.values():
            best = max(best, jaccard(tokens, item.tokens))
        return best

    def admit(self, candidate: EvidenceItem, topic_tags: frozenset[str] = frozenset()) -> bool:
        """Add the candidate iff its relevance exceeds the gate. Returns True if admitted."""
        if candidate.id in self.items:
            raise ValueError(f"duplicate evidence id {candidate.id!r}")
        if self.relevance(candidate.tokens, topic_tags) > self.delta:
            self.items[candidate.id] = candidate
            return True
        return False

    def reinforce(self, reward: float, selected_ids: set[str]) -> None:
        """Move selected items' scores by eta * reward, clamped to [0,1]."""
        unknown = selected_ids - self.items.keys()
        if unknown:
            raise KeyError(f"unknown evidence ids: {sorted(unknown)}")
        for item_id in selected_ids:
            item = self.items[item_id]
            item.persuasiveness = min(1.0, max(0.0, item.persuasiveness + self.eta * reward))

    def select_arguments(self, query_tokens: frozenset[str], m: int = 5) -> list[EvidenceItem]:
        """Top-m items by relevance-to-query times persuasiveness.

        Ties resolve toward higher persuasiveness, then lexicographic id.
        """
        if m < 1:
            raise ValueError("m must be >= 1")
        scored = [
            (jaccard(query_tokens, item.tokens) * item.persuasiveness, item)
            for item in self.items.values()
        ]
        scored.sort(key=lambda pair: (-pair[0], -pair[1].persuasiveness, pair[1].id))
        return [item for _, item in scored[:m]]


@dataclass(frozen=True)
class MemoryTuple:
    action_descriptor: str
    observation_step: int
    observation_tokens: frozenset[str]
    reward: float
    timing: str = "immediate"


class ActionOutcomeMemory:
    """Append-only log of interventions that cleared the reward threshold."""

    def __init__(self, epsilon: float = 0.05):
        if not 0 < epsilon < 1:
            raise ValueError("epsilon must be in (0,1)")
        self.epsilon = epsilon
        self.tuples: list[MemoryTuple] = []

    def __len__(self) -> int:
        return len(self.tuples)

    def record(self, entry: MemoryTuple) -> bool:
        """Keep the tuple iff reward > epsilon. Returns True if retained."""
        if entry.reward > self.epsilon:
            self.tuples.append(entry)
            return True
        return False

    def recall(self, report_tokens: frozenset[str], top_k: int = 5) -> list[MemoryTuple]:
        """Most similar past situations, ties resolved toward higher reward."""
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        scored = sorted(
            self.tuples,
            key=lambda t: (-jaccard(report_tokens, t.observation_tokens), -t.reward),
        )
        return scored[:top_k]

    def export_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tuples:
                fh.write(
                    json.dumps(
                        {
                            "action": t.action_descriptor,
                            "step": t.observation_step,
                            "tokens": sorted(t.observation_tokens),
                            "reward": t.reward,
                            "timing": t.timing,
                        }
                    )
                    + "\n"
                )


def load_kb_seed(path: str | Path, delta: float = 0.2, eta: float = 0.01) -> KnowledgeBase:
    """Build a KnowledgeBase from a JSONL file of evidence records.

    Each line: {"claim_text": ..., "persuasiveness": ..., "topic_tags": [...],
    "source_label": ...}; persuasiveness defaults to 0.5 when absent.
    """
    kb = KnowledgeBase(delta=delta, eta=eta)
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            items.append(
                EvidenceItem(
                    id=raw.get("id", f"kb_{lineno:03d}"),
                    claim_text=raw["claim_text"],
                    persuasiveness=float(raw.get("persuasiveness", 0.5)),
                    topic_tags=tuple(raw.get("topic_tags", ())),
                    source_label=raw.get("source_label", ""),
                )
            )
    kb.seed(items)
    return kb
