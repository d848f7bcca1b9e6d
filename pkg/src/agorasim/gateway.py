"""Text-generation backend: deterministic scripted templates or a remote chat API.

Every piece of generated text in the system (user comments, attack comments,
team content, grader calls, probes) is requested through one interface.  The
scripted backend expands canned phrasings keyed by a hash of the request, so
identical requests always produce identical text.  The remote backend speaks
the chat-completion JSON wire format with retries and exponential backoff.
"""

from __future__ import annotations

import hashlib
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

import httpx

from .config import BackendKind


class RoleTag(str, Enum):
    ORDINARY_USER = "ordinary_user"
    MALICIOUS = "malicious"
    ANALYST = "analyst"
    STRATEGIST = "strategist"
    LEADER_CREATE = "leader_create"
    USC_EVALUATE = "usc_evaluate"
    AMPLIFIER = "amplifier"
    FACTCHECK = "factcheck"
    GRADER_SENTIMENT = "grader_sentiment"
    GRADER_EXTREMITY = "grader_extremity"
    GRADER_AQS = "grader_aqs"
    GRADER_FALLACY = "grader_fallacy"
    GRADER_EVIDENCE = "grader_evidence"
    PROBE = "probe"
    REFLECTION = "reflection"


GRADER_TAGS = frozenset(
    {
        RoleTag.GRADER_SENTIMENT,
        RoleTag.GRADER_EXTREMITY,
        RoleTag.GRADER_AQS,
        RoleTag.GRADER_FALLACY,
        RoleTag.GRADER_EVIDENCE,
    }
)


class BackendError(RuntimeError):
    def __init__(self, message: str, role_tag: RoleTag | None = None):
        super().__init__(message)
        self.role_tag = role_tag


@dataclass(frozen=True)
class GenerationRequest:
    role_tag: RoleTag
    system_text: str
    user_text: str
    temperature: float = 0.7
    max_tokens: int = 400
    model_tag: str = "profile-a"

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.role_tag in GRADER_TAGS and self.temperature != 0:
            raise ValueError(f"grader request {self.role_tag.value} requires temperature 0")


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    finish_reason: str = "stop"
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class BackendConfig:
    kind: BackendKind = BackendKind.SCRIPTED
    endpoint: str = ""
    auth_env: str = "AGORASIM_API_KEY"
    timeout_ms: int = 30_000
    max_retries: int = 3
    backoff_base_ms: int = 500

    def validate(self) -> None:
        if self.kind is BackendKind.REMOTE and not self.endpoint:
            raise ValueError("remote backend requires an endpoint")


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def render(template: str, values: dict[str, object]) -> str:
    """Substitute known {name} placeholders; unknown braces stay literal."""

    def sub(match: re.Match[str]) -> str:
        key = match.group(1)
        return str(values[key]) if key in values else match.group(0)

    return _PLACEHOLDER_RE.sub(sub, template)


def load_template(role_tag: RoleTag) -> str:
    ref = resources.files("agorasim").joinpath(f"prompts/{role_tag.value}.txt")
    return ref.read_text(encoding="utf-8")


def build_request(
    role_tag: RoleTag,
    values: dict[str, object],
    temperature: float = 0.7,
    max_tokens: int = 400,
    model_tag: str = "profile-a",
) -> GenerationRequest:
    """Render the role's prompt file into a request.

    The template's first block (up to a line `---`) is the system text; the
    remainder is the user text.
    """
    template = load_template(role_tag)
    system_text, _, user_text = template.partition("\n---\n")
    if role_tag in GRADER_TAGS:
        temperature = 0.0
    return GenerationRequest(
        role_tag=role_tag,
        system_text=render(system_text.strip(), values),
        user_text=render(user_text.strip(), values),
        temperature=temperature,
        max_tokens=max_tokens,
        model_tag=model_tag,
    )


# ---------------------------------------------------------------------------
# Scripted expansion
# ---------------------------------------------------------------------------


def _pick(variants: list[str], key: int) -> str:
    return variants[key % len(variants)]


def _field(user_text: str, name: str, default: str = "") -> str:
    match = re.search(rf"^{name}:\s*(.+)$", user_text, flags=re.MULTILINE)
    return match.group(1).strip() if match else default


_USER_VARIANTS = [
    "I keep going back and forth on {topic}. The thread has a point but I want specifics.",
    "Reading about {topic} today. Some of these replies feel overheated to me.",
    "My take on {topic}: wait for the follow-up before deciding anything.",
    "Honestly {topic} affects people like me, so I am watching how this plays out.",
    "Not sure what to believe about {topic} yet, half this thread is shouting.",
    "The coverage of {topic} feels thin. Anyone have a primary source?",
]

_MALICIOUS_VARIANTS = [
    "WAKE UP. {topic} is a disgrace and they are lying to your face. Total corruption.",
    "This {topic} story proves it: liars and sellouts everywhere. It is a scam and an outrage.",
    "Furious about {topic}. A cover-up, plain and simple, and the silence is a betrayal.",
    "They think you are stupid. {topic} is rigged, toxic, rotten to the core. Disgusting.",
    "Outrage is the only sane reaction to {topic}. Corrupt hacks spreading poison and propaganda.",
]

_AMPLIFIER_PLAIN = [
    "Worth slowing down on {topic}. The loudest takes here skip over the actual details.",
    "I get the frustration around {topic}, but piling on will not fix anything. What would help?",
    "Reading the whole thread on {topic}, the middle-ground replies make the most sense to me.",
    "Can we keep {topic} about specifics? Shouting past each other gets us nowhere.",
    "A calmer read of {topic}: the situation is more ordinary than the hot takes suggest.",
]

_AMPLIFIER_SOURCED = [
    "On {topic}, according to the {source}, the claim going around leaves out key context: {claim}",
    "Before sharing more anger about {topic}: {claim} That is from the {source}, worth a read.",
    "The {source} already covers {topic} - {claim} Let's argue from that, not from vibes.",
]

_LEADER_VARIANTS = [
    "Stepping back on {topic}: {claim} The strongest replies in this thread already point the same "
    "way. Disagreement is fine; inventing villains is not. Judge the update on what it actually says.",
    "A lot of heat on {topic}, so here is the grounded version: {claim} If new facts land, update "
    "with them. Until then, the catastrophic framing is not earned.",
    "On {topic}, the record is duller than the outrage: {claim} Keep pressing for specifics and "
    "skip the name-calling; that is how this thread stays useful.",
]

_FACTCHECK_TEXT = (
    "Verdict: {verdict}. Reviewed the claim against the available record; see sources."
)

_PROBE_VARIANTS = [
    "Seeing this again, my reaction is {attitude}. {detail}",
    "My current read: {attitude}. {detail}",
]

_REFLECTION_TEXT = (
    "Lately my feed has circled {topic}; I notice {pattern}, my replies lean {attitude}, and I "
    "want to check sources more before reacting."
)

_REFLECTION_EMPTY = (
    "Nothing much stands out lately: no notable patterns in what I read or posted, no shifts in "
    "who I talk with or what I care about, so I will keep browsing as usual."
)


def scripted_complete(request: GenerationRequest) -> GenerationResponse:
    """Deterministic expansion: role plus input hash selects a canned phrasing."""
    key = int.from_bytes(
        hashlib.sha256(
            f"{request.role_tag.value}|{request.system_text}|{request.user_text}".encode()
        ).digest()[:4],
        "big",
    )
    text = _expand(request, key)
    return GenerationResponse(text=text)


def _expand(request: GenerationRequest, key: int) -> str:
    user_text = request.user_text
    topic = _field(user_text, "topic", "this story")
    tag = request.role_tag
    if tag is RoleTag.ORDINARY_USER:
        return _pick(_USER_VARIANTS, key).format(topic=topic)
    if tag is RoleTag.MALICIOUS:
        return _pick(_MALICIOUS_VARIANTS, key).format(topic=topic)
    if tag is RoleTag.AMPLIFIER:
        source = _field(user_text, "source")
        claim = _field(user_text, "claim")
        if source and claim:
            return _pick(_AMPLIFIER_SOURCED, key).format(topic=topic, source=source, claim=claim)
        return _pick(_AMPLIFIER_PLAIN, key).format(topic=topic)
    if tag is RoleTag.LEADER_CREATE:
        claim = _field(user_text, "claim", "the primary record does not support the panic.")
        return _pick(_LEADER_VARIANTS, key).format(topic=topic, claim=claim)
    if tag is RoleTag.FACTCHECK:
        return _FACTCHECK_TEXT.format(verdict=_field(user_text, "verdict", "unverified"))
    if tag is RoleTag.PROBE:
        return _pick(_PROBE_VARIANTS, key).format(
            attitude=_field(user_text, "attitude", "mixed"),
            detail=_field(user_text, "detail", "Still weighing it."),
        )
    if tag is RoleTag.REFLECTION:
        pattern = _field(user_text, "pattern")
        if not pattern:
            return _REFLECTION_EMPTY
        return _REFLECTION_TEXT.format(
            topic=topic, pattern=pattern, attitude=_field(user_text, "attitude", "cautious")
        )
    # Analyst/strategist/USC/grader calls are computed structurally in
    # scripted runs; completing one still returns a stable placeholder.
    return f"[{tag.value}] {topic}"


# ---------------------------------------------------------------------------
# Backend
# ---------------------------------------------------------------------------


class Gateway:
    """Uniform completion interface over the scripted and remote backends."""

    def __init__(
        self,
        config: BackendConfig | None = None,
        transport: httpx.BaseTransport | None = None,
        sleeper=time.sleep,
    ):
        self.config = config or BackendConfig()
        self.config.validate()
        self.request_count = 0
        self._sleep = sleeper
        self._client: httpx.Client | None = None
        if self.config.kind is BackendKind.REMOTE:
            self._client = httpx.Client(
                timeout=self.config.timeout_ms / 1000.0, transport=transport
            )

    @property
    def kind(self) -> BackendKind:
        return self.config.kind

    def complete(self, request: GenerationRequest) -> GenerationResponse:
        self.request_count += 1
        if self.config.kind is BackendKind.SCRIPTED:
            return scripted_complete(request)
        return self._remote_complete(request)

    def complete_batch(self, requests: list[GenerationRequest]) -> list[GenerationResponse]:
        """Per-entry completion; failures are flagged on their entry only."""
        if not requests:
            raise ValueError("batch must be nonempty")

        def one(request: GenerationRequest) -> GenerationResponse:
            try:
                return self.complete(request)
            except BackendError as exc:
                return GenerationResponse(text="", finish_reason="error", error=str(exc))

        if self.config.kind is BackendKind.SCRIPTED:
            return [one(r) for r in requests]
        with ThreadPoolExecutor(max_workers=min(8, len(requests))) as pool:
            return list(pool.map(one, requests))

    def memory_reflection(self, persona_name: str, topic: str, memories: list[str]) -> str:
        """One-paragraph self-summary of recent activity."""
        values: dict[str, object] = {
            "persona": persona_name,
            "topic": topic or "the news",
            "memories": "\n".join(memories) if memories else "(none)",
            "pattern": "repeat themes" if memories else "",
            "attitude": "cautious",
        }
        request = build_request(RoleTag.REFLECTION, values, temperature=0.7)
        return self.complete(request).text

    def _remote_complete(self, request: GenerationRequest) -> GenerationResponse:
        assert self._client is not None
        headers = {}
        token = os.environ.get(self.config.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": request.model_tag,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        last_error = "unknown"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.backoff_base_ms / 1000.0 * 2 ** (attempt - 1))
            try:
                response = self._client.post(self.config.endpoint, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
                continue
            except httpx.HTTPError as exc:
                last_error = f"transport: {exc}"
                continue
            if response.status_code >= 500:
                last_error = f"server error {response.status_code}"
                continue
            if response.status_code != 200:
                raise BackendError(
                    f"remote returned {response.status_code}: {response.text[:200]}",
                    request.role_tag,
                )
            try:
                payload = response.json()
                choice = payload["choices"][0]
                return GenerationResponse(
                    text=choice["message"]["content"],
                    finish_reason=choice.get("finish_reason", "stop"),
                )
            except (KeyError, IndexError, ValueError) as exc:
                raise BackendError(
                    f"malformed remote response ({exc}): {response.text[:200]}",
                    request.role_tag,
                ) from exc
        raise BackendError(
            f"remote backend exhausted retries ({last_error})", request.role_tag
        )

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
