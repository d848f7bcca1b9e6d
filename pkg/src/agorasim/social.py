"""The discourse environment: news, posts, comments, users, and the attack squad.

News items arrive on a fixed schedule; a chosen subset is replaced by
extremized variants, each followed by a corrective follow-up after a fixed
delay.  Ordinary users browse like-ranked feeds and either drift with what
they read (scripted opinion dynamics) or act through generated text (remote).
Malicious agents pile onto recent extremized items with a fixed-size squad of
distinct identities and upvote the two most extreme of their own comments.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .cognition import tokenize
from .gateway import Gateway, RoleTag, build_request


def clamp(x: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, x))


# ---------------------------------------------------------------------------
# News
# ---------------------------------------------------------------------------


class Polarity(str, Enum):
    BENIGN = "benign"
    ADVERSARIAL = "adversarial"
    CLARIFICATION = "clarification"


@dataclass(frozen=True)
class NewsItem:
    id: str
    source_label: str
    text: str
    polarity: Polarity
    publish_step: int
    origin_id: str | None = None

    @property
    def topic(self) -> str:
        """Short display phrase: the first few contentful words of the text."""
        words = re.findall(r"[A-Za-z][\w'-]*", self.text)
        keep = [w for w in words if len(w) > 3][:4]
        return " ".join(keep).lower() or "local news"

    @property
    def tokens(self) -> frozenset[str]:
        return tokenize(self.text)


def load_news_records(path: str | Path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _extremize(record: dict) -> str:
    return (
        f"EXPOSED: {record['text']} That is the sanitized version. Insiders say the real damage "
        f"is being hidden, the people in charge knew, and the official line is a cover-up."
    )


def _clarify(record: dict) -> str:
    return (
        f"Follow-up with the documented record: {record['text']} The circulating cover-up claims "
        f"are unsupported; the filed reports match the original account. Source records: "
        f"https://records.example.org/{record['id']}"
    )


def build_stream(
    records: Sequence[dict],
    adversarial_fraction: float,
    clarification_delay: int,
    rng: random.Random,
) -> list[NewsItem]:
    """Turn raw news records into the run's schedule.

    Records tagged "adversarial" are always extremized; records tagged
    "benign" never are; the remainder fill up to the requested fraction of
    the whole stream, chosen by the supplied stream RNG.  Every extremized
    item is paired with a corrective follow-up `clarification_delay` steps
    later (which may land beyond the horizon and thus never be released).
    """
    if not records:
        raise ValueError("news records must be nonempty")
    if not 0 <= adversarial_fraction <= 1:
        raise ValueError("adversarial_fraction must be in [0,1]")
    if clarification_delay < 1:
        raise ValueError("clarification_delay must be >= 1")

    forced = [r for r in records if r.get("tag") == "adversarial"]
    eligible = [r for r in records if r.get("tag") not in ("adversarial", "benign")]
    target = round(adversarial_fraction * len(records))
    extra_n = min(len(eligible), max(0, target - len(forced)))
    extra = rng.sample(eligible, extra_n) if extra_n else []
    selected_ids = {r["id"] for r in forced} | {r["id"] for r in extra}

    schedule: list[NewsItem] = []
    for r in records:
        if r["id"] in selected_ids:
            schedule.append(
                NewsItem(
                    id=r["id"],
                    source_label=r.get("source_label", "unknown"),
                    text=_extremize(r),
                    polarity=Polarity.ADVERSARIAL,
                    publish_step=int(r["step"]),
                )
            )
            schedule.append(
                NewsItem(
                    id=f"{r['id']}-clar",
                    source_label="records desk",
                    text=_clarify(r),
                    polarity=Polarity.CLARIFICATION,
                    publish_step=int(r["step"]) + clarification_delay,
                    origin_id=r["id"],
                )
            )
        else:
            schedule.append(
                NewsItem(
                    id=r["id"],
                    source_label=r.get("source_label", "unknown"),
                    text=r["text"],
                    polarity=Polarity.BENIGN,
                    publish_step=int(r["step"]),
                )
            )
    schedule.sort(key=lambda n: (n.publish_step, n.id))
    return schedule


# ---------------------------------------------------------------------------
# Posts and comments
# ---------------------------------------------------------------------------


@dataclass
class Comment:
    id: str
    post_id: str
    author_id: str
    agent_type: str  # normal | malicious | amplifier | leader
    time_step: int
    text: str
    stance: float
    sentiment: float
    toxicity: float
    evidence: bool
    likes: int = 0

    def __post_init__(self) -> None:
        if self.time_step < 1:
            raise ValueError("time_step is 1-indexed")
        if not -1 <= self.stance <= 1:
            raise ValueError(f"stance out of range: {self.stance}")
        if not 0 <= self.sentiment <= 1 or not 0 <= self.toxicity <= 1:
            raise ValueError("sentiment and toxicity must be in [0,1]")
        if self.likes < 0:
            raise ValueError("likes must be nonnegative")

    def add_likes(self, n: int) -> None:
        if n < 0:
            raise ValueError("likes never decrease")
        self.likes += n

    def as_record(self) -> dict:
        return {
            "comment_id": self.id,
            "post_id": self.post_id,
            "author_id": self.author_id,
            "agent_type": self.agent_type,
            "time_step": self.time_step,
            "text": self.text,
            "likes": self.likes,
            "stance": round(self.stance, 6),
            "sentiment": round(self.sentiment, 6),
            "toxicity": round(self.toxicity, 6),
            "evidence": self.evidence,
        }


@dataclass
class Post:
    id: str
    news: NewsItem
    created_step: int
    comments: list[Comment] = field(default_factory=list)
    likes: int = 0
    shares: int = 0
    active: bool = True
    factcheck_label: str | None = None

    @property
    def total_likes(self) -> int:
        return sum(c.likes for c in self.comments)

    @property
    def topic(self) -> str:
        return self.news.topic


def rank_feed(post: Post, k: int) -> list[Comment]:
    """Top-k comments: most likes first, newer step first on ties, then newest id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(post.comments, key=lambda c: (-c.likes, -c.time_step, _id_rank(c.id)))
    return ranked[:k]


def _id_rank(comment_id: str) -> tuple:
    # Newest-created first among full ties: sequential ids sort descending.
    match = re.search(r"(\d+)$", comment_id)
    return (-int(match.group(1)), comment_id) if match else (0, comment_id)


def visible_posts(posts: Iterable[Post], step: int, window: int) -> list[Post]:
    """Posts a browser can reach at `step`: the recent window plus the hottest thread."""
    active = [p for p in posts if p.active and p.created_step <= step]
    recent = [p for p in active if p.created_step > step - window]
    hot = max(active, key=lambda p: (p.total_likes, p.created_step, p.id), default=None)
    chosen = {p.id: p for p in recent}
    if hot is not None and hot.total_likes > 0:
        chosen.setdefault(hot.id, hot)
    return sorted(chosen.values(), key=lambda p: (p.created_step, p.id))


class IdAllocator:
    """Sequential ids with a fixed prefix; creation order is recoverable."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self.counter = 0

    def next(self) -> str:
        self.counter += 1
        return f"{self.prefix}{self.counter:05d}"


# ---------------------------------------------------------------------------
# Personas
# ---------------------------------------------------------------------------


class PersonaError(ValueError):
    pass


PERSONA_TYPES = ("neutral", "positive", "negative")
_REQUIRED_FIELDS = (
    "id",
    "type",
    "name",
    "demographics",
    "personality_traits",
    "background",
    "communication_style",
)


@dataclass(frozen=True)
class PersonaRecord:
    id: str
    type: str
    name: str
    demographics: dict
    personality_traits: tuple[str, ...]
    background: str
    communication_style: dict
    profession: str = ""

    def describe(self) -> str:
        return (
            f"{self.name}, {self.profession or 'resident'} from "
            f"{self.demographics.get('region', 'somewhere')}; {self.background}"
        )


@dataclass
class PersonaPool:
    neutral: list[PersonaRecord] = field(default_factory=list)
    positive: list[PersonaRecord] = field(default_factory=list)
    negative: list[PersonaRecord] = field(default_factory=list)

    def of_type(self, persona_type: str) -> list[PersonaRecord]:
        return getattr(self, persona_type)


def load_personas(path: str | Path) -> PersonaPool:
    """Read and validate a JSON array of persona records, partitioned by type."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise PersonaError(f"{path}: persona file must be a JSON array")

    pool = PersonaPool()
    for entry in raw:
        record_id = entry.get("id", "<missing id>")
        for fieldname in _REQUIRED_FIELDS:
            if fieldname not in entry:
                raise PersonaError(f"record {record_id!r}: missing field {fieldname!r}")
        if entry["type"] not in PERSONA_TYPES:
            raise PersonaError(f"record {record_id!r}: unknown type {entry['type']!r}")
        demographics = entry["demographics"]
        if not isinstance(demographics, dict) or "age" not in demographics:
            raise PersonaError(f"record {record_id!r}: demographics must include age")
        style = entry["communication_style"]
        if not isinstance(style, dict) or "tone" not in style:
            raise PersonaError(f"record {record_id!r}: communication_style must include tone")
        record = PersonaRecord(
            id=entry["id"],
            type=entry["type"],
            name=entry["name"],
            demographics=demographics,
            personality_traits=tuple(entry["personality_traits"]),
            background=entry["background"],
            communication_style=style,
            profession=entry.get("profession", demographics.get("profession", "")),
        )
        pool.of_type(record.type).append(record)
    return pool


# ---------------------------------------------------------------------------
# Ordinary users
# ---------------------------------------------------------------------------

# Two behavior parameterizations assigned Bernoulli(0.5) per user.
PROFILE_PARAMS = {
    "A": {"beta_scale": 1.0, "noise_scale": 1.0, "activity_scale": 1.0, "model_tag": "profile-a"},
    "B": {"beta_scale": 0.8, "noise_scale": 1.5, "activity_scale": 1.15, "model_tag": "profile-b"},
}


@dataclass
class OrdinaryUser:
    id: str
    persona: PersonaRecord
    opinion: float
    mood: float
    susceptibility: float
    activity: float
    profile_tag: str

    def __post_init__(self) -> None:
        if self.profile_tag not in PROFILE_PARAMS:
            raise ValueError(f"unknown profile tag {self.profile_tag!r}")

    @property
    def params(self) -> dict:
        return PROFILE_PARAMS[self.profile_tag]


def make_population(
    n: int, personas: list[PersonaRecord], rng: random.Random
) -> list[OrdinaryUser]:
    if not personas:
        raise PersonaError("neutral persona pool is empty")
    users = []
    for i in range(n):
        users.append(
            OrdinaryUser(
                id=f"user{i:03d}",
                persona=personas[i % len(personas)],
                opinion=rng.uniform(-0.3, 0.3),
                mood=rng.uniform(0.5, 0.75),
                susceptibility=rng.uniform(0.3, 0.9),
                activity=rng.uniform(0.25, 0.85),
                profile_tag="A" if rng.random() < 0.5 else "B",
            )
        )
    return users


def update_user(
    user: OrdinaryUser,
    visible: Sequence[Comment],
    rng: random.Random,
    influence_rate: float = 0.5,
    opinion_noise: float = 0.02,
) -> OrdinaryUser:
    """Drift opinion and mood toward the like-weighted view of the visible feed.

    o' = clamp(o + sigma*beta*(mu - o) + xi),  s' = clamp(s + sigma*beta*(nu - s))
    with mu, nu the (likes+1)-weighted mean stance and sentiment and
    xi ~ Normal(0, noise).  An empty feed leaves the user untouched.
    """
    if not visible:
        return user
    beta = influence_rate * user.params["beta_scale"]
    noise = opinion_noise * user.params["noise_scale"]
    total = sum(c.likes + 1 for c in visible)
    mu = sum((c.likes + 1) * c.stance for c in visible) / total
    nu = sum((c.likes + 1) * c.sentiment for c in visible) / total
    pull = user.susceptibility * beta
    xi = rng.gauss(0.0, noise)
    user.opinion = clamp(user.opinion + pull * (mu - user.opinion) + xi, -1.0, 1.0)
    user.mood = clamp(user.mood + pull * (nu - user.mood), 0.0, 1.0)
    return user


def comment_toxicity(opinion: float, mood: float) -> float:
    return clamp(0.1 + 0.6 * abs(opinion) * (1.0 - mood), 0.0, 1.0)


@dataclass(frozen=True)
class UserAction:
    kind: str  # like-post | share-post | comment-post | like-comment | follow-user | ignore
    target: str
    comment: Comment | None = None


_ACTION_KINDS = ("comment-post", "like-comment", "like-post", "share-post", "follow-user", "ignore")
_ACTION_WEIGHTS = (0.32, 0.24, 0.20, 0.10, 0.06, 0.08)
_RESONANCE = 0.3  # max |stance - opinion| for a comment to feel congenial
MAX_COMMENT_LIKES_PER_SESSION = 2


def act(
    user: OrdinaryUser,
    feed: Sequence[tuple[Post, Sequence[Comment]]],
    rng: random.Random,
    gateway: Gateway,
    new_comment_id: Callable[[], str],
    step: int,
    other_user_ids: Sequence[str] = (),
) -> list[UserAction]:
    """One browsing session: nothing when idle, 5-8 actions when engaged."""
    if not feed:
        return []
    engaged = rng.random() < user.activity * user.params["activity_scale"]
    if not engaged:
        return []

    n_actions = rng.randint(5, 8)
    actions: list[UserAction] = []
    comment_likes_used = 0
    for _ in range(n_actions):
        kind = rng.choices(_ACTION_KINDS, weights=_ACTION_WEIGHTS)[0]
        post, top = feed[rng.randrange(len(feed))]
        if kind == "comment-post":
            comment = _make_comment(user, post, rng, gateway, new_comment_id, step)
            actions.append(UserAction("comment-post", post.id, comment))
        elif kind == "like-comment":
            if comment_likes_used >= MAX_COMMENT_LIKES_PER_SESSION:
                actions.append(UserAction("ignore", ""))
                continue
            congenial = [c for c in top if abs(c.stance - user.opinion) <= _RESONANCE]
            if congenial:
                chosen = congenial[rng.randrange(len(congenial))]
                actions.append(UserAction("like-comment", chosen.id))
                comment_likes_used += 1
            else:
                actions.append(UserAction("ignore", ""))
        elif kind == "like-post":
            actions.append(UserAction("like-post", post.id))
        elif kind == "share-post":
            actions.append(UserAction("share-post", post.id))
        elif kind == "follow-user":
            others = [u for u in other_user_ids if u != user.id]
            if others:
                actions.append(UserAction("follow-user", others[rng.randrange(len(others))]))
            else:
                actions.append(UserAction("ignore", ""))
        else:
            actions.append(UserAction("ignore", ""))
    return actions


def _make_comment(
    user: OrdinaryUser,
    post: Post,
    rng: random.Random,
    gateway: Gateway,
    new_comment_id: Callable[[], str],
    step: int,
) -> Comment:
    stance = clamp(user.opinion + rng.gauss(0.0, 0.1), -1.0, 1.0)
    request = build_request(
        RoleTag.ORDINARY_USER,
        {
            "persona": user.persona.describe(),
            "recent_posts": "None",
            "feed": post.news.text[:160],
            "topic": post.topic,
        },
        model_tag=user.params["model_tag"],
    )
    text = gateway.complete(request).text
    return Comment(
        id=new_comment_id(),
        post_id=post.id,
        author_id=user.id,
        agent_type="normal",
        time_step=step,
        text=text,
        stance=stance,
        sentiment=user.mood,
        toxicity=comment_toxicity(user.opinion, user.mood),
        evidence=False,
    )


def validate_actions(raw_actions: list[dict], known_ids: set[str]) -> tuple[list[dict], list[dict]]:
    """Split parsed remote actions into valid ones and dropped ones (made-up ids)."""
    valid, dropped = [], []
    for action in raw_actions:
        target = action.get("target")
        if action.get("action") == "ignore" or target in known_ids:
            valid.append(action)
        else:
            dropped.append(action)
    return valid, dropped


# ---------------------------------------------------------------------------
# Coordinated attack
# ---------------------------------------------------------------------------

ATTACK_WINDOW = 3  # adversarial items stay targets for this many steps


def adversarial_targets(posts: Iterable[Post], step: int) -> list[Post]:
    """Active extremized posts published within the rolling attack window."""
    return sorted(
        (
            p
            for p in posts
            if p.active
            and p.news.polarity is Polarity.ADVERSARIAL
            and step - ATTACK_WINDOW < p.created_step <= step
        ),
        key=lambda p: (p.created_step, p.id),
    )


def attack(
    targets: Sequence[Post],
    pool: Sequence[PersonaRecord],
    rng: random.Random,
    gateway: Gateway,
    new_comment_id: Callable[[], str],
    step: int,
    squad_size: int = 15,
) -> list[Comment]:
    """Squad of distinct malicious identities piles one comment each onto every target."""
    if len(pool) < squad_size:
        raise PersonaError(
            f"malicious persona pool has {len(pool)} records; need at least {squad_size}"
        )
    comments: list[Comment] = []
    for post in targets:
        squad = rng.sample(list(pool), squad_size)
        for persona in squad:
            request = build_request(
                RoleTag.MALICIOUS,
                {
                    "persona": persona.describe(),
                    "target": post.news.text[:200],
                    "topic": post.topic,
                },
            )
            text = gateway.complete(request).text
            comments.append(
                Comment(
                    id=new_comment_id(),
                    post_id=post.id,
                    author_id=persona.id,
                    agent_type="malicious",
                    time_step=step,
                    text=text,
                    stance=rng.uniform(-1.0, -0.8),
                    sentiment=rng.uniform(0.05, 0.2),
                    toxicity=rng.uniform(0.6, 1.0),
                    evidence=False,
                )
            )
    return comments


def boost(targets: Sequence[Post], boost_likes: int = 5) -> list[Comment]:
    """Upvote the two most representative malicious comments on in-window targets."""
    malicious = [c for p in targets for c in p.comments if c.agent_type == "malicious"]
    malicious.sort(key=lambda c: (-abs(c.stance), -c.likes, c.id))
    chosen = malicious[: min(2, len(malicious))]
    for comment in chosen:
        comment.add_likes(boost_likes)
    return chosen
