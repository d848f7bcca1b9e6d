"""Run log: ordered event records, digests, JSONL round-trips, reconstruction.

Every state change in a run is appended as one event keyed by
(step, phase, sequence).  The log is the source of truth for metrics and
replay: folding the events back together reproduces the final thread
inventory, and hashing their canonical serialization gives the digest used
for determinism checks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable

from .social import Comment


class Phase(IntEnum):
    NEWS = 1
    ADVERSARY = 2
    TEAM = 3
    USERS = 4
    MODERATION = 5
    FEEDBACK = 6
    SNAPSHOT = 7


@dataclass(frozen=True)
class EventRecord:
    step: int
    phase: int
    seq: int
    actor_id: str
    action_kind: str
    payload: dict

    def as_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "phase": self.phase,
                "seq": self.seq,
                "actor_id": self.actor_id,
                "action_kind": self.action_kind,
                "payload": self.payload,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


@dataclass(frozen=True)
class ProbeRecord:
    step: int
    user_id: str
    stance: float
    sentiment: float
    rationale: str

    def as_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "user_id": self.user_id,
                "stance": round(self.stance, 6),
                "sentiment": round(self.sentiment, 6),
                "rationale": self.rationale,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


class IncompleteLogError(RuntimeError):
    pass


@dataclass
class RunLog:
    case: int
    seed: int
    horizon: int
    events: list[EventRecord] = field(default_factory=list)
    probes: list[ProbeRecord] = field(default_factory=list)
    complete: bool = False
    abort_reason: str | None = None
    _seq: int = 0

    def append(self, step: int, phase: Phase, actor_id: str, action_kind: str, payload: dict) -> None:
        if self.events:
            last = self.events[-1]
            if (step, int(phase)) < (last.step, last.phase):
                raise ValueError(
                    f"events out of order: ({step},{int(phase)}) after ({last.step},{last.phase})"
                )
        self._seq += 1
        self.events.append(EventRecord(step, int(phase), self._seq, actor_id, action_kind, payload))

    def of_kind(self, *kinds: str) -> list[EventRecord]:
        wanted = set(kinds)
        return [e for e in self.events if e.action_kind in wanted]

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "case": self.case,
                        "seed": self.seed,
                        "horizon": self.horizon,
                        "complete": self.complete,
                        "abort_reason": self.abort_reason,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            for event in self.events:
                fh.write(event.as_json() + "\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "RunLog":
        with open(path, "r", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            log = cls(case=header["case"], seed=header["seed"], horizon=header["horizon"])
            log.complete = header.get("complete", False)
            log.abort_reason = header.get("abort_reason")
            for line in fh:
                raw = json.loads(line)
                log.events.append(
                    EventRecord(
                        step=raw["step"],
                        phase=raw["phase"],
                        seq=raw["seq"],
                        actor_id=raw["actor_id"],
                        action_kind=raw["action_kind"],
                        payload=raw["payload"],
                    )
                )
            log._seq = log.events[-1].seq if log.events else 0
        return log


def replay_digest(log: RunLog) -> str:
    """256-bit hex digest over the canonical event serialization."""
    if not log.complete:
        raise IncompleteLogError("cannot digest an incomplete run log")
    hasher = hashlib.sha256()
    hasher.update(f"{log.case}|{log.seed}|{log.horizon}\n".encode())
    for event in log.events:
        hasher.update(event.as_json().encode())
        hasher.update(b"\n")
    return hasher.hexdigest()


COMMENT_KINDS = ("user_comment", "malicious_comment", "amplifier_comment", "leader_comment")


def comments_from_log(log: RunLog) -> list[Comment]:
    """Rebuild every comment (with final like counts) by folding the event stream."""
    comments: dict[str, Comment] = {}
    for event in log.events:
        if event.action_kind in COMMENT_KINDS:
            p = event.payload
            comments[p["comment_id"]] = Comment(
                id=p["comment_id"],
                post_id=p["post_id"],
                author_id=p["author_id"],
                agent_type=p["agent_type"],
                time_step=p["time_step"],
                text=p["text"],
                stance=p["stance"],
                sentiment=p["sentiment"],
                toxicity=p["toxicity"],
                evidence=p["evidence"],
                likes=0,
            )
        elif event.action_kind == "like_comment":
            comments[event.payload["comment_id"]].add_likes(1)
        elif event.action_kind == "boost":
            comments[event.payload["comment_id"]].add_likes(event.payload["added_likes"])
    return list(comments.values())


def rewards_from_log(log: RunLog) -> list[float]:
    """Per-round rewards in round order (empty for runs without a feedback phase)."""
    by_round = {e.payload["round"]: e.payload["reward"] for e in log.of_kind("reward")}
    return [by_round[r] for r in sorted(by_round)]


def final_inventory(log: RunLog) -> dict:
    """Canonical end-of-run summary used to check replay fidelity."""
    posts: dict[str, dict] = {}
    for event in log.events:
        kind = event.action_kind
        if kind in ("news_post", "clarification_post"):
            posts[event.payload["post_id"]] = {"active": True, "label": None, "likes": 0}
        elif kind == "like_post":
            posts[event.payload["post_id"]]["likes"] += 1
        elif kind == "takedown":
            posts[event.payload["post_id"]]["active"] = False
            posts[event.payload["post_id"]]["label"] = "removed: false"
        elif kind == "label":
            posts[event.payload["post_id"]]["label"] = event.payload["label_text"]
    comment_inventory = {
        c.id: [c.post_id, c.agent_type, c.time_step, c.likes] for c in comments_from_log(log)
    }
    return {"posts": posts, "comments": comment_inventory}


def inventory_digest(inventory: dict) -> str:
    return hashlib.sha256(
        json.dumps(inventory, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
