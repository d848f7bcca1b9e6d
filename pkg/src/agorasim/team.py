"""The coordinated intervention pipeline: analyze, plan, author, amplify, learn.

One round of intervention runs four roles in order.  The analyst reads a
thread with like-based weighting and decides whether to raise an alert; the
strategist sizes and shapes a counter-deployment from the alert plus
recalled past outcomes; the leader drafts several candidate anchor messages,
scores them on five dimensions, and keeps the best; the amplifiers fan the
chosen message out through distinct personas on a schedule.  After the next
state measurement, the round's reward reinforces the knowledge base and, if
good enough, the action memory.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from .cognition import ActionOutcomeMemory, EvidenceItem, KnowledgeBase, MemoryTuple, jaccard, tokenize
from .gateway import Gateway, RoleTag, build_request
from .metrics import RewardConfig, lexicon_hit, reward, round_half_up
from .social import Comment, PersonaRecord, Post, clamp, rank_feed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeanFieldState:
    v: float  # average opinion extremity in [0,1]
    e: float  # aggregate sentiment in [0,1]
    step: int

    def __post_init__(self) -> None:
        if not 0 <= self.v <= 1 or not 0 <= self.e <= 1:
            raise ValueError(f"state out of range: v={self.v}, e={self.e}")


INITIAL_STATE = MeanFieldState(v=0.0, e=0.5, step=0)


def estimate_state(
    comments: Sequence[Comment], step: int, previous: MeanFieldState = INITIAL_STATE
) -> MeanFieldState:
    """Like-weighted extremity and sentiment over the visible comments.

    No comments to read means no new information: the previous state carries.
    """
    if not comments:
        return MeanFieldState(previous.v, previous.e, step)
    total = sum(c.likes + 1 for c in comments)
    v = sum((c.likes + 1) * abs(c.stance) for c in comments) / total
    e = sum((c.likes + 1) * c.sentiment for c in comments) / total
    return MeanFieldState(v, e, step)


# ---------------------------------------------------------------------------
# Analyst
# ---------------------------------------------------------------------------


def comment_level(comment: Comment) -> int:
    """Discretize a stance onto the 0-4 extremism scale."""
    return min(4, max(0, round_half_up(4.0 * abs(comment.stance))))


def weighted_extremism(likes_levels: Sequence[tuple[int, int]]) -> tuple[float, int]:
    """Like-weighted mean extremism level and its rounded 0-4 value.

    Each (likes, level) pair contributes level * (likes+1) / sum(likes+1).
    """
    if not likes_levels:
        return 0.0, 0
    total = sum(likes + 1 for likes, _ in likes_levels)
    score = sum(level * (likes + 1) for likes, level in likes_levels) / total
    return score, min(4, max(0, round_half_up(score)))


HEAT_LEVELS = ("LOW", "MODERATE", "HIGH", "VIRAL")
HEAT_MULTIPLIERS = {"LOW": 1.0, "MODERATE": 1.2, "HIGH": 1.5, "VIRAL": 1.5}


def heat_level(total_likes: int) -> str:
    if total_likes > 100:
        return "VIRAL"
    if total_likes > 40:
        return "HIGH"
    if total_likes > 10:
        return "MODERATE"
    return "LOW"


@dataclass
class AnalysisReport:
    post_id: str
    core_viewpoint: str
    extremism_score: float
    extremism_level: int
    like_weighted_breakdown: list[dict]
    engagement_intensity: str
    sentiment_estimate: float
    requires_intervention: bool
    urgency: int
    top3_has_extreme: bool
    high_amplification_risk: bool
    topic_tokens: frozenset[str] = frozenset()


def trigger(report: AnalysisReport) -> bool:
    """Intervene on moderate-or-worse extremity, a sour thread, or a hot extreme comment."""
    return (
        report.extremism_level >= 2
        or report.sentiment_estimate < 0.35
        or report.top3_has_extreme
    )


def urgency_of(extremism_level: int, sentiment_estimate: float) -> int:
    return min(4, max(1, max(extremism_level, 3 if sentiment_estimate < 0.35 else 1)))


def analyze(post: Post) -> AnalysisReport:
    """Like-weighted read of one thread."""
    comments = post.comments
    likes_levels = [(c.likes, comment_level(c)) for c in comments]
    score, level = weighted_extremism(likes_levels)
    total = sum(c.likes + 1 for c in comments)
    breakdown = [
        {
            "comment_id": c.id,
            "likes": c.likes,
            "level": lvl,
            "weighted_contribution": lvl * (likes + 1) / total,
        }
        for c, (likes, lvl) in zip(comments, likes_levels)
    ]
    sentiment = (
        sum((c.likes + 1) * c.sentiment for c in comments) / total if comments else 0.5
    )
    top3 = rank_feed(post, 3) if comments else []
    top3_extreme = any(comment_level(c) >= 3 for c in top3)
    high_risk = any(c.agent_type == "malicious" for c in top3)
    report = AnalysisReport(
        post_id=post.id,
        core_viewpoint=f"dominant reaction to {post.topic}",
        extremism_score=score,
        extremism_level=level,
        like_weighted_breakdown=breakdown,
        engagement_intensity=heat_level(post.total_likes),
        sentiment_estimate=sentiment,
        requires_intervention=False,
        urgency=urgency_of(level, sentiment),
        top3_has_extreme=top3_extreme,
        high_amplification_risk=high_risk,
        topic_tokens=tokenize(post.news.text) | tokenize(post.topic),
    )
    report.requires_intervention = trigger(report)
    return report


def lexicon_alert(
    comments: Sequence[Comment], lexicon: frozenset[str], threshold: float = 0.3
) -> bool:
    """Analyst-ablation fallback: alert when too many visible comments hit the lexicon."""
    if not comments:
        return False
    hits = sum(1 for c in comments if lexicon_hit(c.text, lexicon))
    return hits / len(comments) > threshold


def surrogate_report(post: Post) -> AnalysisReport:
    """Minimal stand-in report when the analyst role is removed: a level-2 alert."""
    return AnalysisReport(
        post_id=post.id,
        core_viewpoint=f"keyword alert on {post.topic}",
        extremism_score=2.0,
        extremism_level=2,
        like_weighted_breakdown=[],
        engagement_intensity="MODERATE",
        sentiment_estimate=0.5,
        requires_intervention=True,
        urgency=2,
        top3_has_extreme=False,
        high_amplification_risk=False,
        topic_tokens=tokenize(post.news.text) | tokenize(post.topic),
    )


# ---------------------------------------------------------------------------
# Strategist
# ---------------------------------------------------------------------------

ROLE_ORDER = ("balanced_moderates", "technical_experts", "community_voices", "fact_checkers")
BASE_AGENTS = {1: 5, 2: 8, 3: 15, 4: 30}


@dataclass
class StrategyPlan:
    strategy_id: str
    post_id: str
    total_agents: int
    role_distribution: dict[str, int]
    timing: str  # immediate | staggered | progressive
    core_counter_argument: str
    leader_instruction: dict[str, object]
    selected_argument_ids: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        if sum(self.role_distribution.values()) != self.total_agents:
            raise ValueError("role distribution must sum to total_agents")
        if self.timing not in ("immediate", "staggered", "progressive"):
            raise ValueError(f"unknown timing {self.timing!r}")


def split_roles(total: int) -> dict[str, int]:
    """As even as possible, earlier roles taking the remainder."""
    q, r = divmod(total, len(ROLE_ORDER))
    return {role: q + (1 if i < r else 0) for i, role in enumerate(ROLE_ORDER)}


def agent_count(report: AnalysisReport) -> int:
    base = BASE_AGENTS[max(1, report.extremism_level)]
    mult = HEAT_MULTIPLIERS[report.engagement_intensity]
    total = math.ceil(base * mult)
    if report.urgency >= 3:
        total += 2
    if report.high_amplification_risk:
        total += 1
    return total


def plan(
    report: AnalysisReport,
    recalled: Sequence[MemoryTuple],
    kb: KnowledgeBase,
    step: int,
) -> StrategyPlan:
    """Size, shape, and ground the deployment for one alerted thread."""
    total = agent_count(report)
    timing = "immediate" if report.urgency >= 3 else "staggered"

    # Past wins vote on timing: among recalled tuples rewarded above the
    # recalled median, a strict majority timing overrides the default.
    if recalled:
        rewards = sorted(t.reward for t in recalled)
        median = rewards[len(rewards) // 2]
        winners = [t for t in recalled if t.reward >= median]
        votes: dict[str, int] = {}
        for t in winners:
            votes[t.timing] = votes.get(t.timing, 0) + 1
        if votes:
            best_timing, best_votes = max(votes.items(), key=lambda kv: (kv[1], kv[0]))
            if best_votes * 2 > len(winners):
                timing = best_timing

    args = kb.select_arguments(report.topic_tokens, m=5)
    counter = args[0].claim_text if args else "stick to the documented record"
    return StrategyPlan(
        strategy_id=f"plan-{step:03d}-{report.post_id}",
        post_id=report.post_id,
        total_agents=total,
        role_distribution=split_roles(total),
        timing=timing,
        core_counter_argument=counter,
        leader_instruction={
            "tone": "calm and specific",
            "style": "conversational",
            "key_points": [a.claim_text[:80] for a in args[:3]],
            "target_audience": "frustrated but persuadable readers",
            "content_length": "120-200 words",
        },
        selected_argument_ids={a.id for a in args},
    )


def fixed_plan(report: AnalysisReport, step: int) -> StrategyPlan:
    """Strategist-ablation fallback: constant size, even split, no recall."""
    return StrategyPlan(
        strategy_id=f"fixed-{step:03d}-{report.post_id}",
        post_id=report.post_id,
        total_agents=8,
        role_distribution=split_roles(8),
        timing="immediate",
        core_counter_argument="stick to the documented record",
        leader_instruction={
            "tone": "calm and specific",
            "style": "conversational",
            "key_points": [],
            "target_audience": "general readers",
            "content_length": "120-200 words",
        },
        selected_argument_ids=set(),
    )


# ---------------------------------------------------------------------------
# Leader (candidate generation, scoring, selection)
# ---------------------------------------------------------------------------

CREATION_ANGLES = ("rational", "empathetic", "practical")
_ANGLE_STANCE = {"rational": 0.05, "empathetic": -0.05, "practical": 0.0}
EVAL_DIMENSIONS = ("persuasiveness", "logic", "readability", "relevance", "impact")


@dataclass
class Candidate:
    text: str
    angle: str
    stance: float


@dataclass
class LeaderOutput:
    candidates: list[Candidate]
    evaluations: list[dict[str, int]]
    totals: list[int]
    chosen_index: int

    @property
    def chosen(self) -> Candidate:
        return self.candidates[self.chosen_index]


def _bounded(raw: float) -> int:
    return min(5, max(1, 1 + math.floor(4.0 * raw)))


def evaluate_candidate(
    candidate: Candidate, kb_args: Sequence[EvidenceItem], core_viewpoint: str
) -> dict[str, int]:
    """Deterministic five-dimension rubric, each score in [1,5]."""
    mean_p = sum(a.persuasiveness for a in kb_args) / len(kb_args) if kb_args else 0.0
    return {
        "persuasiveness": _bounded(mean_p),
        "logic": _bounded(1.0 if kb_args else 0.5),
        "readability": 4,
        "relevance": _bounded(jaccard(tokenize(candidate.text), tokenize(core_viewpoint))),
        "impact": _bounded(1.0 - abs(candidate.stance)),
    }


def generate_and_select(
    instruction: dict[str, object],
    kb_args: Sequence[EvidenceItem],
    gateway: Gateway,
    topic: str,
    core_viewpoint: str,
    n: int = 3,
) -> LeaderOutput:
    """Draft n candidates from different angles, score all five dimensions, keep the best."""
    if n < 1:
        raise ValueError("n must be >= 1")
    claim = kb_args[0].claim_text if kb_args else "the primary record does not support the panic."
    source = kb_args[0].source_label if kb_args else ""
    candidates = []
    for i in range(n):
        angle = CREATION_ANGLES[i % len(CREATION_ANGLES)]
        request = build_request(
            RoleTag.LEADER_CREATE,
            {
                "angle": angle,
                "tone": instruction.get("tone", "calm"),
                "audience": instruction.get("target_audience", "general readers"),
                "length": instruction.get("content_length", "150 words"),
                "arguments": "\n".join(a.claim_text for a in kb_args),
                "topic": topic,
                "claim": claim,
                "source": source,
            },
        )
        text = gateway.complete(request).text
        candidates.append(Candidate(text=text, angle=angle, stance=_ANGLE_STANCE[angle]))

    evaluations = [evaluate_candidate(c, kb_args, core_viewpoint) for c in candidates]
    totals = [sum(e.values()) for e in evaluations]
    chosen_index = max(range(len(totals)), key=lambda i: (totals[i], -i))
    return LeaderOutput(
        candidates=candidates, evaluations=evaluations, totals=totals, chosen_index=chosen_index
    )


# ---------------------------------------------------------------------------
# Amplifier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlannedComment:
    offset: int  # steps after the planning round
    persona_id: str
    role: str
    text: str
    stance: float
    sentiment: float
    toxicity: float
    evidence: bool


@dataclass
class AmplifierBatch:
    post_id: str
    planned: list[PlannedComment]

    def due(self, offset: int) -> list[PlannedComment]:
        return [p for p in self.planned if p.offset == offset]


def _timing_offsets(total: int, timing: str) -> list[int]:
    if timing == "immediate":
        return [0] * total
    if timing == "staggered":
        first = math.ceil(total / 2)
        return [0] * first + [1] * (total - first)
    first = math.ceil(total / 3)
    second = math.ceil((total - first) / 2)
    return [0] * first + [1] * second + [2] * (total - first - second)


def amplify(
    strategy: StrategyPlan,
    leader_stance: float,
    kb_args: Sequence[EvidenceItem],
    pool: Sequence[PersonaRecord],
    rng: random.Random,
    gateway: Gateway,
    topic: str,
    thread_sample: str = "",
    anchor_text: str = "",
) -> AmplifierBatch:
    """Fan the anchor out through `total_agents` distinct personas on the plan's schedule."""
    total = strategy.total_agents
    if len(pool) >= total:
        personas = rng.sample(list(pool), total)
    else:
        logger.warning(
            "amplifier pool exhausted (%d < %d); sampling with replacement", len(pool), total
        )
        personas = [pool[rng.randrange(len(pool))] for _ in range(total)]

    roles = [role for role in ROLE_ORDER for _ in range(strategy.role_distribution[role])]
    offsets = _timing_offsets(total, strategy.timing)
    claim = kb_args[0].claim_text if kb_args else ""
    source = kb_args[0].source_label if kb_args else ""

    planned = []
    for persona, role, offset in zip(personas, roles, offsets):
        evidence = bool(kb_args) and rng.random() < 0.8
        request = build_request(
            RoleTag.AMPLIFIER,
            {
                "persona": persona.describe(),
                "role": role,
                "thread": thread_sample,
                "anchor": anchor_text[:200],
                "topic": topic,
                "claim": claim if evidence else "",
                "source": source if evidence else "",
            },
        )
        text = gateway.complete(request).text
        planned.append(
            PlannedComment(
                offset=offset,
                persona_id=persona.id,
                role=role,
                text=text,
                stance=clamp(leader_stance + rng.uniform(-0.2, 0.2), -1.0, 1.0),
                sentiment=rng.uniform(0.6, 0.9),
                toxicity=rng.uniform(0.0, 0.1),
                evidence=evidence,
            )
        )
    return AmplifierBatch(post_id=strategy.post_id, planned=planned)


# ---------------------------------------------------------------------------
# Feedback
# ---------------------------------------------------------------------------


def action_digest(strategy: StrategyPlan, leader_text: str, batch: AmplifierBatch | None) -> str:
    payload = "|".join(
        (
            strategy.strategy_id,
            str(strategy.total_agents),
            strategy.timing,
            hashlib.sha256(leader_text.encode()).hexdigest()[:12],
            str(len(batch.planned) if batch else 0),
        )
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def feedback(
    prev_state: MeanFieldState,
    new_state: MeanFieldState,
    strategy: StrategyPlan,
    leader_text: str,
    batch: AmplifierBatch | None,
    kb: KnowledgeBase,
    memory: ActionOutcomeMemory,
    reward_cfg: RewardConfig,
    observation_tokens: frozenset[str],
) -> tuple[float, bool]:
    """Close the loop: score the round, evolve the knowledge base, maybe remember."""
    r = reward(prev_state.v, prev_state.e, new_state.v, new_state.e, reward_cfg)
    if strategy.selected_argument_ids:
        kb.reinforce(r, strategy.selected_argument_ids)
    retained = memory.record(
        MemoryTuple(
            action_descriptor=action_digest(strategy, leader_text, batch),
            observation_step=prev_state.step,
            observation_tokens=observation_tokens,
            reward=r,
            timing=strategy.timing,
        )
    )
    return r, retained
