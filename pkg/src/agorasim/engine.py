"""Simulation kernel: the per-round phase loop, probing, and run export.

One round runs seven phases in a fixed order: news arrival (with scheduled
corrective follow-ups), adversary attack and boost, team intervention,
ordinary-user browsing, moderation enforcement, state estimation with
cognition updates, and the snapshot marker.  Interventions land before the
user phase on purpose: whatever the team posts shapes the same round's
reactions.

Determinism: all randomness flows through per-(module, step) streams derived
from the root seed, and all agents are iterated in sorted-id order, so equal
configs produce byte-identical logs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .cognition import ActionOutcomeMemory, EvidenceItem, KnowledgeBase, load_kb_seed, tokenize
from .config import Ablation, BackendKind, Case, ScenarioConfig
from .events import Phase, ProbeRecord, RunLog, rewards_from_log
from .gateway import BackendConfig, BackendError, Gateway, RoleTag, build_request
from .metrics import (
    RewardConfig,
    RewardSeries,
    load_lexicon,
    reward,
    snapshot,
    write_metrics_csv,
    write_reward_csv,
)
from .moderation import adjudicate, enforce, schedule_checks
from .social import (
    Comment,
    IdAllocator,
    NewsItem,
    OrdinaryUser,
    PersonaError,
    PersonaPool,
    Polarity,
    Post,
    act,
    adversarial_targets,
    attack,
    boost,
    build_stream,
    load_news_records,
    load_personas,
    make_population,
    rank_feed,
    update_user,
    visible_posts,
)
from .rng import StreamRegistry
from . import team as team_mod
from .team import (
    AmplifierBatch,
    AnalysisReport,
    MeanFieldState,
    StrategyPlan,
    amplify,
    analyze,
    feedback,
    fixed_plan,
    generate_and_select,
    lexicon_alert,
    plan,
    surrogate_report,
)


def _data_path(name: str) -> Path:
    return Path(str(resources.files("agorasim").joinpath(f"data/{name}")))


@dataclass
class DataPaths:
    personas: Path = field(default_factory=lambda: _data_path("personas.json"))
    news: Path = field(default_factory=lambda: _data_path("news_stream.jsonl"))
    kb_seed: Path = field(default_factory=lambda: _data_path("kb_seed.jsonl"))
    lexicon: Path = field(default_factory=lambda: _data_path("toxicity_lexicon.txt"))


@dataclass
class PendingRound:
    """A round's executed intervention, waiting for the next state measurement."""

    step: int
    strategy: StrategyPlan
    leader_text: str
    batch: AmplifierBatch | None
    observation_tokens: frozenset[str]


class World:
    """Mutable run state: posts, users, cognition stores, and the event log."""

    def __init__(
        self,
        config: ScenarioConfig,
        paths: DataPaths | None = None,
        gateway: Gateway | None = None,
    ):
        config.validate()
        self.config = config
        self.paths = paths or DataPaths()
        self.rngs = StreamRegistry(config.seed)
        self.gateway = gateway or Gateway(BackendConfig(kind=config.backend))
        self.log = RunLog(case=config.case.value, seed=config.seed, horizon=config.horizon)
        self.comment_ids = IdAllocator("c")
        self.step_now = 0

        self.personas: PersonaPool = load_personas(self.paths.personas)
        if config.case.has_adversary and len(self.personas.negative) < config.attack_squad_size:
            raise PersonaError(
                f"need {config.attack_squad_size} negative personas, "
                f"have {len(self.personas.negative)}"
            )
        self.users: list[OrdinaryUser] = make_population(
            config.population_size, self.personas.neutral, self.rngs.stream("population")
        )
        self.schedule: list[NewsItem] = build_stream(
            load_news_records(self.paths.news),
            config.adversarial_fraction,
            config.clarification_delay,
            self.rngs.stream("news"),
        )
        self.posts: dict[str, Post] = {}
        self.lexicon = load_lexicon(self.paths.lexicon)

        self.kb: KnowledgeBase | None = None
        self.memory: ActionOutcomeMemory | None = None
        if config.case.has_team:
            self.kb = load_kb_seed(self.paths.kb_seed, delta=config.delta, eta=config.eta)
            self.memory = ActionOutcomeMemory(epsilon=config.epsilon_mem)

        self.reward_cfg = RewardConfig(config.lambda1, config.lambda2)
        self.states: dict[int, MeanFieldState] = {}
        self.pending_round: PendingRound | None = None
        self.pending_batches: list[tuple[int, AmplifierBatch]] = []
        self.checked_posts: set[str] = set()
        self.pending_clarifications: list[NewsItem] = []

        # Longitudinal probing: top-3 users by initial activity, fixed stimulus
        # = the step-1 extremized item (probing is off when there is none).
        ranked = sorted(self.users, key=lambda u: (-u.activity, u.id))
        self.tracked_users = [u.id for u in ranked[:3]]
        self.probe_stimulus: NewsItem | None = next(
            (
                n
                for n in self.schedule
                if n.polarity is Polarity.ADVERSARIAL and n.publish_step == 1
            ),
            None,
        )

    # -- helpers ----------------------------------------------------------

    def all_comments(self) -> list[Comment]:
        return [c for p in self.posts.values() for c in p.comments]

    def visible(self, step: int) -> list[Post]:
        return visible_posts(self.posts.values(), step, self.config.feed_window)

    def observation_comments(self, step: int) -> list[Comment]:
        return [c for p in self.visible(step) for c in p.comments]

    def state_digest(self) -> str:
        """Digest over all persisted run state; probing must not change it."""
        payload = {
            "users": [
                [u.id, round(u.opinion, 12), round(u.mood, 12), u.profile_tag] for u in self.users
            ],
            "posts": [
                [
                    p.id,
                    p.active,
                    p.likes,
                    p.shares,
                    p.factcheck_label,
                    [[c.id, c.likes] for c in p.comments],
                ]
                for p in sorted(self.posts.values(), key=lambda p: p.id)
            ],
            "kb": sorted(
                [i.id, round(i.persuasiveness, 12)] for i in (self.kb.items.values() if self.kb else [])
            ),
            "memory": [
                [t.action_descriptor, round(t.reward, 12)]
                for t in (self.memory.tuples if self.memory else [])
            ],
        }
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()

    # -- probing ----------------------------------------------------------

    def probe_user(self, user_id: str, stimulus: NewsItem) -> ProbeRecord:
        """Ask one user how they currently read the fixed stimulus; pure read."""
        user = next((u for u in self.users if u.id == user_id), None)
        if user is None:
            raise KeyError(f"unknown user {user_id!r}")
        if user.opinion < -0.6:
            attitude = "angry and convinced something is being hidden"
        elif user.opinion < -0.2:
            attitude = "suspicious and uneasy"
        elif user.opinion <= 0.2:
            attitude = "mixed and waiting for more"
        elif user.opinion <= 0.6:
            attitude = "cautiously trusting the record"
        else:
            attitude = "confident the record holds up"
        detail = (
            "It has worn me down."
            if user.mood < 0.35
            else "I can still talk about it calmly."
        )
        request = build_request(
            RoleTag.PROBE,
            {
                "persona": user.persona.describe(),
                "memory": f"opinion {user.opinion:+.2f}, mood {user.mood:.2f}",
                "news": stimulus.text[:200],
                "topic": stimulus.topic,
                "attitude": attitude,
                "detail": detail,
                "user_id": user.id,
            },
        )
        rationale = self.gateway.complete(request).text
        return ProbeRecord(
            step=self.step_now,
            user_id=user.id,
            stance=user.opinion,
            sentiment=user.mood,
            rationale=rationale,
        )


# ---------------------------------------------------------------------------
# The step loop
# ---------------------------------------------------------------------------


def run_scenario(
    config: ScenarioConfig,
    paths: DataPaths | None = None,
    gateway: Gateway | None = None,
) -> tuple[World, RunLog]:
    """Execute all rounds; on backend failure the partial log is flagged incomplete."""
    world = World(config, paths=paths, gateway=gateway)
    try:
        for t in range(1, config.horizon + 1):
            step(world)
        _terminal_pass(world)
        world.log.complete = True
    except BackendError as exc:
        world.log.complete = False
        world.log.abort_reason = str(exc)
    return world, world.log


def step(world: World) -> World:
    """Advance one round through the seven phases."""
    cfg = world.config
    if world.step_now >= cfg.horizon:
        raise ValueError("horizon exhausted")
    t = world.step_now = world.step_now + 1

    _probe_tracked(world, t)
    _phase_news(world, t)
    if cfg.case.has_adversary:
        _phase_adversary(world, t)
    if cfg.case.has_team:
        _phase_team(world, t)
    _phase_users(world, t)
    if cfg.case.has_moderation:
        _phase_moderation(world, t)
    if cfg.case.has_team:
        _phase_feedback(world, t)
    if t in cfg.snapshot_steps:
        world.log.append(t, Phase.SNAPSHOT, "engine", "snapshot", {"t": t})
    return world


def _probe_tracked(world: World, t: int) -> None:
    if world.probe_stimulus is None:
        return
    for user_id in world.tracked_users:
        world.log.probes.append(world.probe_user(user_id, world.probe_stimulus))


def _phase_news(world: World, t: int) -> None:
    for news in world.schedule:
        if news.publish_step != t:
            continue
        post = Post(id=news.id, news=news, created_step=t)
        world.posts[post.id] = post
        kind = (
            "clarification_post" if news.polarity is Polarity.CLARIFICATION else "news_post"
        )
        world.log.append(
            t,
            Phase.NEWS,
            news.source_label,
            kind,
            {
                "post_id": post.id,
                "polarity": news.polarity.value,
                "origin_id": news.origin_id,
                "text": news.text,
            },
        )
        if news.polarity is Polarity.CLARIFICATION:
            world.pending_clarifications.append(news)


def _phase_adversary(world: World, t: int) -> None:
    targets = adversarial_targets(world.posts.values(), t)
    if not targets:
        return
    new_comments = attack(
        targets,
        world.personas.negative,
        world.rngs.stream("attack", t),
        world.gateway,
        world.comment_ids.next,
        t,
        squad_size=world.config.attack_squad_size,
    )
    for comment in new_comments:
        world.posts[comment.post_id].comments.append(comment)
        world.log.append(
            t, Phase.ADVERSARY, comment.author_id, "malicious_comment", comment.as_record()
        )
    for comment in boost(targets, world.config.boost_likes):
        world.log.append(
            t,
            Phase.ADVERSARY,
            "attack_coordinator",
            "boost",
            {
                "comment_id": comment.id,
                "post_id": comment.post_id,
                "added_likes": world.config.boost_likes,
            },
        )


def _post_planned(world: World, t: int) -> None:
    for planned_step, batch in world.pending_batches:
        for pc in batch.due(t - planned_step):
            comment = Comment(
                id=world.comment_ids.next(),
                post_id=batch.post_id,
                author_id=pc.persona_id,
                agent_type="amplifier",
                time_step=t,
                text=pc.text,
                stance=pc.stance,
                sentiment=pc.sentiment,
                toxicity=pc.toxicity,
                evidence=pc.evidence,
            )
            post = world.posts.get(batch.post_id)
            if post is None or not post.active:
                continue
            post.comments.append(comment)
            world.log.append(
                t, Phase.TEAM, comment.author_id, "amplifier_comment", comment.as_record()
            )
    world.pending_batches = [
        (s, b) for s, b in world.pending_batches if any(p.offset > t - s for p in b.planned)
    ]


def _phase_team(world: World, t: int) -> None:
    cfg = world.config
    assert world.kb is not None and world.memory is not None
    _post_planned(world, t)

    candidates = [p for p in world.visible(t) if p.comments]
    if not candidates:
        return

    # Perception
    if Ablation.NO_ANALYST in cfg.ablations:
        alerted = [
            p
            for p in candidates
            if lexicon_alert(rank_feed(p, cfg.feed_top_k), world.lexicon, cfg.lexicon_alert_threshold)
        ]
        if not alerted:
            return
        target = alerted[-1]
        report = surrogate_report(target)
        world.log.append(
            t,
            Phase.TEAM,
            "team",
            "alert",
            {"post_id": target.id, "mode": "lexicon"},
        )
    else:
        reports = [analyze(p) for p in candidates]
        triggered = [r for r in reports if r.requires_intervention]
        if not triggered:
            return
        report = max(triggered, key=lambda r: (r.extremism_score, r.post_id))
        target = world.posts[report.post_id]
        world.log.append(
            t,
            Phase.TEAM,
            "analyst",
            "analysis",
            {
                "post_id": report.post_id,
                "extremism_level": report.extremism_level,
                "extremism_score": round(report.extremism_score, 6),
                "sentiment_estimate": round(report.sentiment_estimate, 6),
                "engagement_intensity": report.engagement_intensity,
                "urgency": report.urgency,
            },
        )
        world.log.append(
            t, Phase.TEAM, "analyst", "alert", {"post_id": report.post_id, "mode": "analysis"}
        )

    # Decision
    if Ablation.NO_STRATEGIST in cfg.ablations:
        strategy = fixed_plan(report, t)
    else:
        recalled = world.memory.recall(report.topic_tokens, top_k=5) if len(world.memory) else []
        strategy = plan(report, recalled, world.kb, t)
    world.log.append(
        t,
        Phase.TEAM,
        "strategist",
        "plan",
        {
            "strategy_id": strategy.strategy_id,
            "post_id": strategy.post_id,
            "total_agents": strategy.total_agents,
            "role_distribution": strategy.role_distribution,
            "timing": strategy.timing,
        },
    )

    # Execution: leader anchor, then amplifier batch.
    leader_text = ""
    leader_stance = 0.0
    kb_args: list[EvidenceItem] = []
    if Ablation.NO_LEADER not in cfg.ablations:
        kb_args = world.kb.select_arguments(report.topic_tokens, m=5)
        usc = generate_and_select(
            strategy.leader_instruction,
            kb_args,
            world.gateway,
            target.topic,
            report.core_viewpoint,
        )
        leader_text = usc.chosen.text
        leader_stance = usc.chosen.stance
        strategy.selected_argument_ids |= {a.id for a in kb_args}
        comment = Comment(
            id=world.comment_ids.next(),
            post_id=target.id,
            author_id="leader",
            agent_type="leader",
            time_step=t,
            text=leader_text,
            stance=leader_stance,
            sentiment=0.8,
            toxicity=0.02,
            evidence=bool(kb_args),
        )
        target.comments.append(comment)
        payload = comment.as_record()
        payload["usc_totals"] = usc.totals
        payload["usc_chosen"] = usc.chosen_index
        world.log.append(t, Phase.TEAM, "leader", "leader_comment", payload)
    else:
        top = rank_feed(target, 1)
        leader_text = top[0].text if top else ""

    batch: AmplifierBatch | None = None
    if Ablation.NO_AMPLIFIERS not in cfg.ablations:
        batch = amplify(
            strategy,
            leader_stance,
            kb_args,
            world.personas.positive,
            world.rngs.stream("team", t),
            world.gateway,
            target.topic,
            anchor_text=leader_text,
        )
        world.pending_batches.append((t, batch))
        _post_planned_now(world, t, batch)

    world.pending_round = PendingRound(
        step=t,
        strategy=strategy,
        leader_text=leader_text,
        batch=batch,
        observation_tokens=report.topic_tokens,
    )


def _post_planned_now(world: World, t: int, batch: AmplifierBatch) -> None:
    for pc in batch.due(0):
        post = world.posts[batch.post_id]
        if not post.active:
            continue
        comment = Comment(
            id=world.comment_ids.next(),
            post_id=batch.post_id,
            author_id=pc.persona_id,
            agent_type="amplifier",
            time_step=t,
            text=pc.text,
            stance=pc.stance,
            sentiment=pc.sentiment,
            toxicity=pc.toxicity,
            evidence=pc.evidence,
        )
        post.comments.append(comment)
        world.log.append(
            t, Phase.TEAM, comment.author_id, "amplifier_comment", comment.as_record()
        )


def _phase_users(world: World, t: int) -> None:
    cfg = world.config
    rng = world.rngs.stream("users", t)
    candidates = world.visible(t)
    if not candidates:
        return
    user_ids = [u.id for u in world.users]
    for user in world.users:  # creation order == sorted id order
        k = min(3, len(candidates))
        browsed = rng.sample(candidates, k)
        feed = [(p, rank_feed(p, cfg.feed_top_k)) for p in browsed]
        seen: list[Comment] = [c for _, top in feed for c in top]
        update_user(user, seen, rng, cfg.influence_rate, cfg.opinion_noise)
        actions = act(user, feed, rng, world.gateway, world.comment_ids.next, t, user_ids)
        for action in actions:
            if action.kind == "comment-post" and action.comment is not None:
                world.posts[action.target].comments.append(action.comment)
                world.log.append(
                    t, Phase.USERS, user.id, "user_comment", action.comment.as_record()
                )
            elif action.kind == "like-comment":
                comment = _find_comment(world, action.target)
                comment.add_likes(1)
                world.log.append(
                    t,
                    Phase.USERS,
                    user.id,
                    "like_comment",
                    {"comment_id": comment.id, "post_id": comment.post_id},
                )
            elif action.kind == "like-post":
                world.posts[action.target].likes += 1
                world.log.append(t, Phase.USERS, user.id, "like_post", {"post_id": action.target})
            elif action.kind == "share-post":
                world.posts[action.target].shares += 1
                world.log.append(t, Phase.USERS, user.id, "share_post", {"post_id": action.target})
            elif action.kind == "follow-user":
                world.log.append(
                    t, Phase.USERS, user.id, "follow_user", {"target_user": action.target}
                )


def _find_comment(world: World, comment_id: str) -> Comment:
    for post in world.posts.values():
        for comment in post.comments:
            if comment.id == comment_id:
                return comment
    raise KeyError(f"unknown comment {comment_id!r}")


def _phase_moderation(world: World, t: int) -> None:
    due = schedule_checks(
        list(world.posts.values()), t, world.config.factcheck_delay, world.checked_posts
    )
    rng = world.rngs.stream("moderation", t)
    for post in due:
        verdict = adjudicate(post, t, rng, world.gateway)
        world.checked_posts.add(post.id)
        world.log.append(
            t,
            Phase.MODERATION,
            "factchecker",
            "verdict",
            {
                "post_id": verdict.post_id,
                "label": verdict.label,
                "confidence": round(verdict.confidence, 6),
                "issued_step": verdict.issued_step,
                "created_step": post.created_step,
            },
        )
        outcome = enforce(post, verdict)
        if outcome == "takedown":
            world.log.append(t, Phase.MODERATION, "factchecker", "takedown", {"post_id": post.id})
        else:
            world.log.append(
                t,
                Phase.MODERATION,
                "factchecker",
                "label",
                {"post_id": post.id, "label_text": post.factcheck_label},
            )


def _phase_feedback(world: World, t: int) -> None:
    assert world.kb is not None and world.memory is not None
    previous = world.states.get(t - 1, team_mod.INITIAL_STATE)
    state = team_mod.estimate_state(world.observation_comments(t), t, previous)
    world.states[t] = state
    world.log.append(
        t,
        Phase.FEEDBACK,
        "analyst",
        "state_estimate",
        {"t": t, "v": round(state.v, 9), "e": round(state.e, 9)},
    )
    if t >= 2:
        _close_round(world, t - 1, world.states[t - 1], state, Phase.FEEDBACK, t)

    # New corrective follow-ups become candidate evidence.
    topic_tags = frozenset(
        tag
        for p in world.visible(t)
        if p.news.polarity is Polarity.ADVERSARIAL
        for tag in tokenize(p.news.text)
    )
    for news in world.pending_clarifications:
        candidate = EvidenceItem(
            id=f"clar-{news.id}",
            claim_text=news.text,
            persuasiveness=0.5,
            topic_tags=tuple(tokenize(news.topic)),
            source_label=f"records desk (https://records.example.org/{news.origin_id})",
        )
        if candidate.id not in world.kb and world.kb.admit(candidate, topic_tags):
            world.log.append(
                t, Phase.FEEDBACK, "team", "kb_admit", {"evidence_id": candidate.id}
            )
    world.pending_clarifications = []


def _close_round(
    world: World,
    round_step: int,
    prev_state: MeanFieldState,
    new_state: MeanFieldState,
    phase: Phase,
    log_step: int,
) -> None:
    """Score round `round_step` now that the following state is measured."""
    assert world.kb is not None and world.memory is not None
    pending = world.pending_round
    if pending is not None and pending.step == round_step:
        r, retained = feedback(
            prev_state,
            new_state,
            pending.strategy,
            pending.leader_text,
            pending.batch,
            world.kb,
            world.memory,
            world.reward_cfg,
            pending.observation_tokens,
        )
        world.log.append(
            log_step,
            phase,
            "engine",
            "reward",
            {"round": round_step, "reward": round(r, 9), "planned": True},
        )
        world.log.append(
            log_step,
            phase,
            "team",
            "kb_reinforce",
            {
                "reward": round(r, 9),
                "selected": sorted(pending.strategy.selected_argument_ids),
            },
        )
        world.log.append(
            log_step,
            phase,
            "team",
            "memory_record",
            {"round": round_step, "reward": round(r, 9), "retained": retained},
        )
        world.pending_round = None
    else:
        r = reward(prev_state.v, prev_state.e, new_state.v, new_state.e, world.reward_cfg)
        world.log.append(
            log_step,
            phase,
            "engine",
            "reward",
            {"round": round_step, "reward": round(r, 9), "planned": False},
        )


def _terminal_pass(world: World) -> None:
    """Measure the post-horizon state so the final round gets its reward."""
    if not world.config.case.has_team:
        return
    t = world.config.horizon
    previous = world.states.get(t, team_mod.INITIAL_STATE)
    terminal = team_mod.estimate_state(world.observation_comments(t + 1), t + 1, previous)
    world.states[t + 1] = terminal
    world.log.append(
        t + 1,
        Phase.FEEDBACK,
        "analyst",
        "state_estimate",
        {"t": t + 1, "v": round(terminal.v, 9), "e": round(terminal.e, 9), "terminal": True},
    )
    _close_round(world, t, previous, terminal, Phase.FEEDBACK, t + 1)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def export_run(world: World, log: RunLog, out_dir: str | Path) -> Path:
    """Write run_log.jsonl, probes.jsonl, per-post comments.jsonl, metrics.csv, reward.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.write_jsonl(out / "run_log.jsonl")

    with open(out / "probes.jsonl", "w", encoding="utf-8") as fh:
        for record in log.probes:
            fh.write(record.as_json() + "\n")

    scenario_dir = out / "data" / f"scenario_{log.case}"
    for post in sorted(world.posts.values(), key=lambda p: p.id):
        post_dir = scenario_dir / f"post-{post.id}"
        post_dir.mkdir(parents=True, exist_ok=True)
        with open(post_dir / "comments.jsonl", "w", encoding="utf-8") as fh:
            for comment in post.comments:
                fh.write(json.dumps(comment.as_record(), sort_keys=True) + "\n")

    comments = world.all_comments()
    snapshots = [snapshot(comments, t) for t in world.config.snapshot_steps if t <= log.horizon]
    write_metrics_csv(out / "metrics.csv", log.case, snapshots)
    write_reward_csv(out / "reward.csv", RewardSeries.from_rewards(rewards_from_log(log)))
    return out
