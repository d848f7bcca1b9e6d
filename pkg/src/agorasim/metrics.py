"""Comment grading and snapshot aggregation.

Six per-comment measures (sentiment, toxicity, viewpoint extremity,
argument quality, fallacy rate, evidence usage) aggregated over the
ordinary-user subset of busy posts at selected steps, plus the round
reward that drives the intervention loop.

In scripted runs the graders read the attributes the simulation stamped on
each comment, which keeps the whole pipeline deterministic and lets tests
recompute every mean by brute force.  Remote runs grade generated text
through chat-completion prompts and a Perspective-style toxicity scorer.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import httpx

# ---------------------------------------------------------------------------
# Label maps
# ---------------------------------------------------------------------------

SENTIMENT_LABELS = ("Very Negative", "Negative", "Neutral", "Positive", "Very Positive")
EXTREMITY_LABELS = ("Very Moderate", "Moderate", "Neutral", "Extreme", "Very Extreme")
LABEL_SCORES = (0.0, 0.25, 0.5, 0.75, 1.0)

_SENTIMENT_MAP = dict(zip(SENTIMENT_LABELS, LABEL_SCORES))
_EXTREMITY_MAP = dict(zip(EXTREMITY_LABELS, LABEL_SCORES))

FALLACY_TYPES = (
    "Ad Hominem",
    "Ad Populum",
    "False Dilemma / Black-and-White Fallacy",
    "False Cause",
    "Circular Reasoning",
    "Deductive Fallacy / Fallacy of Logic",
    "Appeal to Emotion / Emotional Language",
    "Equivocation",
    "Fallacy of Extension / Extension Fallacy",
    "Faulty Generalization / Hasty Generalization",
    "Intentional Fallacy",
    "Fallacy of Credibility / Irrelevant Authority",
    "Fallacy of Relevance / Red Herring",
)


def sentiment_score(label: str) -> float | None:
    """Five-class sentiment label to score; None marks an invalid label."""
    return _SENTIMENT_MAP.get(label)


def extremity_score(label: str) -> float | None:
    """Five-class extremity label to score; None marks an invalid label."""
    return _EXTREMITY_MAP.get(label)


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def extremity_label_for(score: float) -> str:
    """Quantize a [0,1] extremity score onto the five-class scale."""
    level = min(4, max(0, round_half_up(4.0 * score)))
    return EXTREMITY_LABELS[level]


def label_entropy(labels: Iterable[str]) -> float:
    """Shannon entropy (nats) of a label distribution."""
    counts: dict[str, int] = {}
    total = 0
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
        total += 1
    if total == 0:
        return 0.0
    return -sum((n / total) * math.log(n / total) for n in counts.values())


# ---------------------------------------------------------------------------
# Per-comment graders (scripted path reads stamped attributes)
# ---------------------------------------------------------------------------


class CommentLike(Protocol):
    id: str
    post_id: str
    agent_type: str
    time_step: int
    text: str
    stance: float
    sentiment: float
    toxicity: float
    evidence: bool
    likes: int


def aqs_value(comment: CommentLike) -> float:
    """Argument-quality rubric over stamped attributes, bounded to [0,1]."""
    raw = (
        0.3
        + 0.3 * (1.0 if comment.evidence else 0.0)
        + 0.2 * (1.0 - abs(comment.stance))
        + 0.2 * comment.sentiment * (1.0 - comment.toxicity)
    )
    return min(1.0, max(0.0, raw))


def fallacy_value(comment: CommentLike) -> tuple[bool, str]:
    """Rule-based fallacy call: hot tone, or a hard stance with nothing behind it."""
    fallacious = comment.toxicity > 0.5 or (abs(comment.stance) > 0.8 and not comment.evidence)
    return fallacious, "Appeal to Emotion / Emotional Language" if fallacious else ""


# Evidence-attribution cues: an explicit URL, a named checkable source, or a
# concrete pointer (bill/case identifier, quoted named speaker).
_URL_RE = re.compile(r"(?:https?://|www\.)\S+")
_ACCORDING_RE = re.compile(r"\baccording to (?:the )?[A-Z][\w&.'-]*")
_NAMED_SOURCE_RE = re.compile(
    r"\b[A-Z][\w&.'-]*(?: [A-Z][\w&.'-]*)*(?: \d{4})? "
    r"(?:report|study|dataset|survey|audit|journal|bulletin|review)\b"
)
_BILL_RE = re.compile(r"\b(?:H\.?R\.?|S\.?B\.?|A\.?B\.?|Bill|Ordinance|Measure)\s?\.?\s?#?\d+\b")
_CASE_RE = re.compile(r"\b[A-Z][\w.'-]+ v\.? [A-Z][\w.'-]+\b")
_QUOTED_SPEAKER_RE = re.compile(r"\"[^\"]+\"[,\s]+(?:said|per|-)\s+[A-Z][\w.'-]+")


def evidence_flag(text: str) -> int:
    """1 iff the text carries at least one verifiable attribution cue."""
    for pattern in (
        _URL_RE,
        _ACCORDING_RE,
        _NAMED_SOURCE_RE,
        _BILL_RE,
        _CASE_RE,
        _QUOTED_SPEAKER_RE,
    ):
        if pattern.search(text):
            return 1
    return 0


# ---------------------------------------------------------------------------
# Lexicon toxicity proxy
# ---------------------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z']+")


def load_lexicon(path: str | Path) -> frozenset[str]:
    words = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            word = line.strip().lower()
            if word and not word.startswith("#"):
                words.append(word)
    return frozenset(words)


def lexicon_toxicity(text: str, lexicon: frozenset[str]) -> float:
    """Fraction of tokens that hit the lexicon, clamped to [0,1]."""
    tokens = _WORD_RE.findall(text.lower())
    if not tokens:
        return 0.0
    hits = sum(1 for t in tokens if t in lexicon)
    return min(1.0, hits / len(tokens))


def lexicon_hit(text: str, lexicon: frozenset[str]) -> bool:
    return any(t in lexicon for t in _WORD_RE.findall(text.lower()))


# ---------------------------------------------------------------------------
# Reward
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("reward weights must be nonnegative")


def reward(
    prev_v: float, prev_e: float, next_v: float, next_e: float, cfg: RewardConfig = RewardConfig()
) -> float:
    """Round reward: penalize extremity growth, reward sentiment growth."""
    return -cfg.lambda1 * (next_v - prev_v) + cfg.lambda2 * (next_e - prev_e)


@dataclass
class RewardSeries:
    rewards: list[float]
    cumulative_sum: list[float]
    cumulative_average: list[float]

    @classmethod
    def from_rewards(cls, rewards: Sequence[float]) -> "RewardSeries":
        sums: list[float] = []
        avgs: list[float] = []
        running = 0.0
        for k, r in enumerate(rewards):
            running += r
            sums.append(running)
            avgs.append(running / (k + 1))
        return cls(list(rewards), sums, avgs)


# ---------------------------------------------------------------------------
# Snapshot aggregation
# ---------------------------------------------------------------------------

MIN_POST_COMMENTS = 50  # strictly more than this to be eligible


@dataclass
class MetricSnapshot:
    step: int
    sentiment: float | None
    toxicity: float | None
    extremity: float | None
    aqs: float | None
    fallacy: float | None
    evidence: float | None
    n_comments: int
    extremity_entropy: float = 0.0

    def as_row(self, case: int) -> dict[str, object]:
        def fmt(v: float | None) -> object:
            return "" if v is None else round(v, 6)

        return {
            "case": case,
            "t": self.step,
            "sentiment": fmt(self.sentiment),
            "toxicity": fmt(self.toxicity),
            "extremity": fmt(self.extremity),
            "aqs": fmt(self.aqs),
            "fallacy": fmt(self.fallacy),
            "evidence": fmt(self.evidence),
            "n_comments": self.n_comments,
        }


def eligible_comments(comments: Sequence[CommentLike], step: int) -> list[CommentLike]:
    """Ordinary-user comments up to `step` on posts with more than 50 comments.

    The busy-post threshold counts every comment on the post regardless of
    author type or step, i.e. it is a property of the recorded thread.
    """
    per_post: dict[str, int] = {}
    for c in comments:
        per_post[c.post_id] = per_post.get(c.post_id, 0) + 1
    busy = {pid for pid, n in per_post.items() if n > MIN_POST_COMMENTS}
    return [
        c
        for c in comments
        if c.agent_type == "normal" and c.time_step <= step and c.post_id in busy
    ]


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def snapshot(comments: Sequence[CommentLike], step: int) -> MetricSnapshot:
    """All six metrics (0-100 scale) over the eligible set at `step`."""
    chosen = eligible_comments(comments, step)
    if not chosen:
        return MetricSnapshot(step, None, None, None, None, None, None, 0)

    def scale(values: list[float]) -> float | None:
        m = _mean(values)
        return None if m is None else 100.0 * m

    extremities = [abs(c.stance) for c in chosen]
    return MetricSnapshot(
        step=step,
        sentiment=scale([c.sentiment for c in chosen]),
        toxicity=scale([c.toxicity for c in chosen]),
        extremity=scale(extremities),
        aqs=scale([aqs_value(c) for c in chosen]),
        fallacy=scale([1.0 if fallacy_value(c)[0] else 0.0 for c in chosen]),
        evidence=scale([1.0 if c.evidence else 0.0 for c in chosen]),
        n_comments=len(chosen),
        extremity_entropy=label_entropy(extremity_label_for(x) for x in extremities),
    )


METRIC_CSV_FIELDS = (
    "case",
    "t",
    "sentiment",
    "toxicity",
    "extremity",
    "aqs",
    "fallacy",
    "evidence",
    "n_comments",
)


def write_metrics_csv(
    path: str | Path, case: int, snapshots: Sequence[MetricSnapshot]
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_CSV_FIELDS)
        writer.writeheader()
        for snap in snapshots:
            writer.writerow(snap.as_row(case))


def write_reward_csv(path: str | Path, series: RewardSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "reward", "cumulative_sum", "cumulative_average"])
        for i, (r, s, a) in enumerate(
            zip(series.rewards, series.cumulative_sum, series.cumulative_average), start=1
        ):
            writer.writerow([i, round(r, 9), round(s, 9), round(a, 9)])


# ---------------------------------------------------------------------------
# Remote scorers
# ---------------------------------------------------------------------------


class PerspectiveClient:
    """Minimal client for a Perspective-style comment-analysis endpoint."""

    def __init__(
        self,
        endpoint: str,
        api_key_env: str = "PERSPECTIVE_API_KEY",
        timeout: float = 30.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def score(self, text: str) -> float:
        params = {}
        key = os.environ.get(self.api_key_env)
        if key:
            params["key"] = key
        response = self._client.post(
            self.endpoint,
            params=params,
            json={
                "comment": {"text": text},
                "languages": ["en"],
                "requestedAttributes": {"TOXICITY": {}},
            },
        )
        response.raise_for_status()
        payload = response.json()
        return float(payload["attributeScores"]["TOXICITY"]["summaryScore"]["value"])

    def close(self) -> None:
        self._client.close()


def parse_five_class(text: str, allowed: Sequence[str]) -> str | None:
    """Pull one of the allowed labels out of a grader reply, longest match first."""
    for label in sorted(allowed, key=len, reverse=True):
        if label.lower() in text.lower():
            return label
    return None


def parse_aqs_json(text: str) -> float | None:
    try:
        payload = json.loads(text)
        score = float(payload["score"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return None
    return score if 0.0 <= score <= 1.0 else None


def parse_fallacy_json(text: str) -> tuple[bool, str] | None:
    try:
        payload = json.loads(text)
        if isinstance(payload, list):
            payload = payload[0]
        fallacious = payload["fallacious"]
        ftype = payload.get("fallacy_type", "")
    except (json.JSONDecodeError, KeyError, IndexError, TypeError):
        return None
    if fallacious not in ("Yes", "No"):
        return None
    if fallacious == "Yes" and ftype not in FALLACY_TYPES:
        return None
    return fallacious == "Yes", ftype


def parse_evidence_json(text: str) -> int | None:
    try:
        payload = json.loads(text)
        value = int(payload["evidence_present"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return None
    return value if value in (0, 1) else None
