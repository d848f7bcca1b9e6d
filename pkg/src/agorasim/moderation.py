"""Post-hoc fact-checking: delayed verdicts, takedowns, and labels.

Every post is reviewed exactly once, a fixed number of steps after it was
created.  The verdict depends only on the post's provenance, never on how
popular it became.  False verdicts above the confidence bar remove the post
(and its thread) from feeds; everything else just gets a visible label.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .gateway import Gateway, RoleTag, build_request
from .social import Polarity, Post

TAKEDOWN_CONFIDENCE = 0.9


@dataclass(frozen=True)
class Verdict:
    post_id: str
    label: str  # true | false | unverified
    confidence: float
    explanation: str
    sources: tuple[str, ...]
    issued_step: int

    def __post_init__(self) -> None:
        if self.label not in ("true", "false", "unverified"):
            raise ValueError(f"unknown verdict label {self.label!r}")
        if not 0 <= self.confidence <= 1:
            raise ValueError("confidence must be in [0,1]")


def schedule_checks(
    posts: list[Post], step: int, factcheck_delay: int, already_checked: set[str]
) -> list[Post]:
    """Posts whose review comes due this step, oldest id first, each at most once."""
    due = [
        p
        for p in posts
        if p.created_step == step - factcheck_delay and p.id not in already_checked
    ]
    return sorted(due, key=lambda p: p.id)


def adjudicate(post: Post, step: int, rng: random.Random, gateway: Gateway) -> Verdict:
    """Provenance oracle: extremized posts are false, follow-ups true, the rest unverified.

    Engagement counts ride along as context in the review request but never
    touch the label.
    """
    if post.news.polarity is Polarity.ADVERSARIAL:
        label, confidence = "false", rng.uniform(0.85, 0.99)
        sources: tuple[str, ...] = ("original filing", "records desk archive")
    elif post.news.polarity is Polarity.CLARIFICATION:
        label, confidence = "true", 0.95
        sources = (f"https://records.example.org/{post.news.origin_id}",)
    else:
        label, confidence = "unverified", 0.5
        sources = ()
    request = build_request(
        RoleTag.FACTCHECK,
        {
            "content": post.news.text[:300],
            "likes": post.likes,
            "shares": post.shares,
            "comments": len(post.comments),
            "topic": post.topic,
            "verdict": label,
        },
    )
    explanation = gateway.complete(request).text
    return Verdict(
        post_id=post.id,
        label=label,
        confidence=confidence,
        explanation=explanation,
        sources=sources,
        issued_step=step,
    )


def enforce(post: Post, verdict: Verdict) -> str:
    """Apply a verdict: returns "takedown" or "label".

    A takedown deactivates the post so feeds stop surfacing it from the next
    step on; the recorded thread stays in the log for evaluation.
    """
    if verdict.label == "false" and verdict.confidence > TAKEDOWN_CONFIDENCE:
        post.active = False
        post.factcheck_label = "removed: false"
        return "takedown"
    post.factcheck_label = f"fact-check: {verdict.label}"
    return "label"
