"""Query profiling: pluggable estimators (deterministic mock or an
OpenAI-compatible chat endpoint), confidence gating with a recent-space
fallback window, and the periodic feedback ledger."""

from __future__ import annotations

import math
import os
import random
import re
import zlib
from collections import deque
from dataclasses import dataclass, field

import requests

from .types import (
    DEFAULT_MAX_CHUNKS,
    PIECES_DOMAIN,
    SUMMARY_LEN_DOMAIN,
    DatasetMeta,
    IntRange,
    QueryRecord,
    RagConfig,
    SynthesisMethod,
    TrueProfile,
)
from .mapping import PrunedConfigSpace, QueryProfile, hull_of_spaces, map_profile

GATE_THRESHOLD = 0.90
WINDOW_CAPACITY = 10
FEEDBACK_INTERVAL = 30
FEEDBACK_CAPACITY = 4

# Most resource-demanding configuration; its answers seed feedback entries.
GOLDEN_CONFIG = RagConfig(SynthesisMethod.MAP_REDUCE, num_chunks=30, intermediate_length=300)

# Fallback space used when the confidence gate trips before any profile
# has been accepted.
DEFAULT_FALLBACK_SPACE = PrunedConfigSpace(
    frozenset({SynthesisMethod.STUFF}), IntRange(1, 5)
)

CLEAN_CONFIDENCE = 0.99
_NOISY_CONFIDENCE_BAND = (0.55, 0.88)

# Extent added above the required summary length when deriving a profile
# range from a point truth value.
SUMMARY_SPAN = 60

PROFILE_FIELDS = ("complexity", "joint_reasoning", "pieces", "summary_range")

PROFILER_PROMPT_TEMPLATE = """\
For the given query = {query}: Analyse the language and internal structure of the query and provide the following information :

    1. Does it needs joint reasoning across multiple documents or not.
    2. Provide a complexity profile for the query:
        Complexity: High/Low
        Joint Reasoning needed: Yes/No
    3. Does this query need input chunks to be summarized and if yes, provide a range in words for the summarized chunks.
    4. How many pieces of information is needed to answer the query?

    database_metadata = {database_metadata}
    chunk_size = {chunk_size}

Estimate the query profile along with the database_metadata and chunk_size to provide the output.
"""

RESPONSE_FORMAT_INSTRUCTION = """\
Answer with exactly these four lines and nothing else:
Complexity: High|Low
Joint Reasoning needed: Yes|No
Pieces: <integer 1-10>
Summary range: <integer>-<integer tokens, within 30-200>
"""

API_KEY_ENV_VAR = "RAGSCHED_PROFILER_API_KEY"


class EstimatorUnavailable(RuntimeError):
    """The remote estimator endpoint could not produce an answer."""


class UnparseableAnswer(ValueError):
    """The estimator's raw text does not match the four-field answer shape."""


@dataclass(frozen=True)
class ProfilerOutput:
    """An estimated profile plus the estimator's verbatim answer and the
    per-field confidences its overall confidence was reduced from."""

    profile: QueryProfile
    raw_text: str
    per_field_confidence: dict[str, float]
    clamped_fields: frozenset[str] = field(default_factory=frozenset)


@dataclass(frozen=True)
class NoiseParams:
    """Per-field corruption probabilities for the mock estimator."""

    flip_joint: float = 0.01
    flip_complexity: float = 0.01
    shift_pieces: float = 0.02
    jitter_summary: float = 0.01

    def __post_init__(self) -> None:
        for name in ("flip_joint", "flip_complexity", "shift_pieces", "jitter_summary"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")


ZERO_NOISE = NoiseParams(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class FeedbackEntry:
    query_text: str
    golden_answer: str
    expected_profile: QueryProfile | None = None


class FeedbackLedger:
    """Keeps the last few feedback prompts, refreshed every 30th query."""

    def __init__(
        self,
        interval: int = FEEDBACK_INTERVAL,
        capacity: int = FEEDBACK_CAPACITY,
    ) -> None:
        self.interval = interval
        self.entries: deque[FeedbackEntry] = deque(maxlen=capacity)
        self.query_counter = 0


class RecentSpaceWindow:
    """Ring buffer of the most recently accepted pruned spaces."""

    def __init__(self, capacity: int = WINDOW_CAPACITY) -> None:
        self._spaces: deque[PrunedConfigSpace] = deque(maxlen=capacity)

    def push(self, space: PrunedConfigSpace) -> None:
        self._spaces.append(space)

    def hull(self) -> PrunedConfigSpace | None:
        if not self._spaces:
            return None
        return hull_of_spaces(list(self._spaces))

    def __len__(self) -> int:
        return len(self._spaces)


@dataclass(frozen=True)
class GateDecision:
    """Outcome of confidence gating: the space to schedule from and whether
    it came from the recent-window fallback instead of this profile."""

    space: PrunedConfigSpace
    used_fallback: bool
    confidence: float


def profile_from_truth(truth: TrueProfile, confidence: float = CLEAN_CONFIDENCE) -> QueryProfile:
    """Canonical embedding of a hidden truth as a faithful profile."""
    lo = truth.required_summary_len
    hi = min(SUMMARY_LEN_DOMAIN[1], lo + SUMMARY_SPAN)
    return QueryProfile(
        complexity_high=truth.complexity_high,
        needs_joint_reasoning=truth.needs_joint_reasoning,
        pieces_required=truth.pieces_required,
        summary_len_range=IntRange(lo, hi),
        confidence=confidence,
    )


def format_profile_text(
    complexity_high: bool, joint: bool, pieces: int, summary_lo: int, summary_hi: int
) -> str:
    """Render a profile in the four-line answer grammar."""
    return (
        f"Complexity: {'High' if complexity_high else 'Low'}\n"
        f"Joint Reasoning needed: {'Yes' if joint else 'No'}\n"
        f"Pieces: {pieces}\n"
        f"Summary range: {summary_lo}-{summary_hi}"
    )


_LINE_PATTERNS = {
    "complexity": re.compile(r"^\s*Complexity\s*:\s*(High|Low)\b", re.IGNORECASE),
    "joint_reasoning": re.compile(
        r"^\s*Joint Reasoning needed\s*:\s*(Yes|No)\b", re.IGNORECASE
    ),
    "pieces": re.compile(r"^\s*Pieces\s*:\s*(-?\d+)", re.IGNORECASE),
    "summary_range": re.compile(
        r"^\s*Summary range\s*:\s*(-?\d+)\s*-\s*(-?\d+)", re.IGNORECASE
    ),
}


def parse_profile_text(
    text: str, confidence: float = 1.0
) -> tuple[QueryProfile, frozenset[str], dict[str, int]]:
    """Parse the line-oriented answer grammar into a profile.

    Out-of-domain numbers are clamped into their domain and the field is
    flagged. Returns (profile, clamped field names, field line numbers).

    Raises UnparseableAnswer when any of the four fields is missing.
    """
    found: dict[str, object] = {}
    line_numbers: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines()):
        for name, pattern in _LINE_PATTERNS.items():
            if name in found:
                continue
            m = pattern.match(line)
            if m:
                found[name] = m.groups()
                line_numbers[name] = lineno
    missing = [name for name in PROFILE_FIELDS if name not in found]
    if missing:
        raise UnparseableAnswer(f"missing fields {missing} in estimator answer: {text!r}")

    clamped: set[str] = set()
    complexity_high = found["complexity"][0].lower() == "high"
    joint = found["joint_reasoning"][0].lower() == "yes"

    pieces = int(found["pieces"][0])
    lo_d, hi_d = PIECES_DOMAIN
    if not lo_d <= pieces <= hi_d:
        pieces = min(max(pieces, lo_d), hi_d)
        clamped.add("pieces")

    s_lo, s_hi = (int(v) for v in found["summary_range"])
    lo_d, hi_d = SUMMARY_LEN_DOMAIN
    if s_lo > s_hi:
        s_lo, s_hi = s_hi, s_lo
        clamped.add("summary_range")
    if not (lo_d <= s_lo and s_hi <= hi_d):
        s_lo = min(max(s_lo, lo_d), hi_d)
        s_hi = min(max(s_hi, lo_d), hi_d)
        clamped.add("summary_range")

    profile = QueryProfile(
        complexity_high=complexity_high,
        needs_joint_reasoning=joint,
        pieces_required=pieces,
        summary_len_range=IntRange(s_lo, s_hi),
        confidence=confidence,
    )
    return profile, frozenset(clamped), line_numbers


def mock_estimate(truth: TrueProfile, noise: NoiseParams, seed: int) -> ProfilerOutput:
    """Deterministic stand-in for the LLM profiler.

    Each field is corrupted independently with its noise probability; a
    field that ends up differing from the truth carries a confidence drawn
    from a low band, so noisy outputs sit below the gate threshold.
    """
    rng = random.Random(seed)

    joint = truth.needs_joint_reasoning
    if rng.random() < noise.flip_joint:
        joint = not joint

    complexity = truth.complexity_high
    if rng.random() < noise.flip_complexity:
        complexity = not complexity

    pieces = truth.pieces_required
    if rng.random() < noise.shift_pieces:
        pieces = pieces + rng.choice((-1, 1))
        pieces = min(max(pieces, PIECES_DOMAIN[0]), PIECES_DOMAIN[1])

    clean = profile_from_truth(truth)
    lo, hi = clean.summary_len_range.low, clean.summary_len_range.high
    if rng.random() < noise.jitter_summary:
        dom_lo, dom_hi = SUMMARY_LEN_DOMAIN
        lo = min(max(lo + rng.choice((-30, -15, 15, 30)), dom_lo), dom_hi)
        hi = min(max(hi + rng.choice((-30, -15, 15, 30)), dom_lo), dom_hi)
        if lo > hi:
            lo, hi = hi, lo

    def field_confidence(changed: bool) -> float:
        if not changed:
            return CLEAN_CONFIDENCE
        return round(rng.uniform(*_NOISY_CONFIDENCE_BAND), 4)

    per_field = {
        "complexity": field_confidence(complexity != truth.complexity_high),
        "joint_reasoning": field_confidence(joint != truth.needs_joint_reasoning),
        "pieces": field_confidence(pieces != truth.pieces_required),
        "summary_range": field_confidence(
            (lo, hi) != (clean.summary_len_range.low, clean.summary_len_range.high)
        ),
    }
    profile = QueryProfile(
        complexity_high=complexity,
        needs_joint_reasoning=joint,
        pieces_required=pieces,
        summary_len_range=IntRange(lo, hi),
        confidence=min(per_field.values()),
    )
    raw = format_profile_text(complexity, joint, pieces, lo, hi)
    return ProfilerOutput(profile=profile, raw_text=raw, per_field_confidence=per_field)


class MockEstimator:
    """Estimator backed by each query's hidden truth plus seeded noise."""

    def __init__(self, noise: NoiseParams = NoiseParams(), seed: int = 0) -> None:
        self.noise = noise
        self.seed = seed

    def _query_seed(self, q: QueryRecord) -> int:
        return (self.seed * 2654435761 + zlib.crc32(q.id.encode("utf-8"))) % (2**63)

    def profile_query(
        self, q: QueryRecord, meta: DatasetMeta, ledger: FeedbackLedger | None = None
    ) -> ProfilerOutput:
        if q.hidden_truth is None:
            raise ValueError(f"query {q.id} has no hidden truth for the mock estimator")
        return mock_estimate(q.hidden_truth, self.noise, self._query_seed(q))


class RemoteEstimator:
    """Chat-completion estimator speaking the OpenAI-compatible wire shape.

    Per-field confidence is the exponentiated mean token log-probability
    over that field's answer line. When the endpoint omits log-probs every
    field defaults to confidence 1.0, making the gate pass-through.
    """

    def __init__(
        self,
        endpoint: str,
        model: str = "profiler",
        timeout_secs: float = 30.0,
        api_key: str | None = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.timeout_secs = timeout_secs
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV_VAR)

    def _url(self) -> str:
        if self.endpoint.endswith("/chat/completions"):
            return self.endpoint
        return f"{self.endpoint}/chat/completions"

    def _messages(
        self, q: QueryRecord, meta: DatasetMeta, ledger: FeedbackLedger | None
    ) -> list[dict[str, str]]:
        system = RESPONSE_FORMAT_INSTRUCTION
        if ledger is not None and ledger.entries:
            blocks = []
            for e in ledger.entries:
                block = f"Earlier query: {e.query_text}\nBest answer: {e.golden_answer}"
                if e.expected_profile is not None:
                    p = e.expected_profile
                    block += "\nProfile it should have produced:\n" + format_profile_text(
                        p.complexity_high,
                        p.needs_joint_reasoning,
                        p.pieces_required,
                        p.summary_len_range.low,
                        p.summary_len_range.high,
                    )
                blocks.append(block)
            system += "\nFeedback from past queries:\n" + "\n---\n".join(blocks)
        user = PROFILER_PROMPT_TEMPLATE.format(
            query=q.text,
            database_metadata=meta.description,
            chunk_size=meta.chunk_size,
        )
        return [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ]

    def profile_query(
        self, q: QueryRecord, meta: DatasetMeta, ledger: FeedbackLedger | None = None
    ) -> ProfilerOutput:
        body = {
            "model": self.model,
            "messages": self._messages(q, meta, ledger),
            "temperature": 0,
            "logprobs": True,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                self._url(), json=body, headers=headers, timeout=self.timeout_secs
            )
        except requests.RequestException as exc:
            raise EstimatorUnavailable(f"estimator endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise EstimatorUnavailable(
                f"estimator endpoint returned HTTP {resp.status_code}: {resp.text[:200]}"
            )
        try:
            payload = resp.json()
            choice = payload["choices"][0]
            content = choice["message"]["content"]
        except (ValueError, KeyError, IndexError) as exc:
            raise EstimatorUnavailable(f"malformed completion payload: {exc}") from exc

        tokens = None
        logprobs = choice.get("logprobs")
        if isinstance(logprobs, dict):
            tokens = logprobs.get("content")
        per_field = _per_field_confidences(content, tokens)
        profile, clamped, _ = parse_profile_text(content, confidence=min(per_field.values()))
        return ProfilerOutput(
            profile=profile,
            raw_text=content,
            per_field_confidence=per_field,
            clamped_fields=clamped,
        )


def _per_field_confidences(
    content: str, tokens: list[dict] | None
) -> dict[str, float]:
    """Map answer tokens to the field lines they fall on and average."""
    if not tokens:
        return {name: 1.0 for name in PROFILE_FIELDS}
    try:
        _, _, line_numbers = parse_profile_text(content)
    except UnparseableAnswer:
        # Let the caller's parse raise with full context.
        return {name: 1.0 for name in PROFILE_FIELDS}

    # Character offset of each line start.
    line_starts = [0]
    for line in content.splitlines(keepends=True):
        line_starts.append(line_starts[-1] + len(line))

    per_line: dict[int, list[float]] = {}
    offset = 0
    for tok in tokens:
        text = tok.get("token", "")
        lp = tok.get("logprob")
        lineno = 0
        for i, start in enumerate(line_starts[1:]):
            if offset < start:
                lineno = i
                break
        else:
            lineno = len(line_starts) - 2
        if lp is not None:
            per_line.setdefault(lineno, []).append(float(lp))
        offset += len(text)

    confidences: dict[str, float] = {}
    for name in PROFILE_FIELDS:
        lps = per_line.get(line_numbers.get(name, -1), [])
        confidences[name] = math.exp(sum(lps) / len(lps)) if lps else 1.0
    return confidences


def gate_profile(
    out: ProfilerOutput,
    window: RecentSpaceWindow,
    threshold: float = GATE_THRESHOLD,
    *,
    default_space: PrunedConfigSpace = DEFAULT_FALLBACK_SPACE,
    max_chunks: int = DEFAULT_MAX_CHUNKS,
) -> GateDecision:
    """Accept the profile's space when confident enough, else fall back to
    the hull of recently accepted spaces (or the configured default when
    nothing has been accepted yet). Accepted spaces enter the window."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    confidence = out.profile.confidence
    if confidence >= threshold:
        space = map_profile(out.profile, max_chunks)
        window.push(space)
        return GateDecision(space=space, used_fallback=False, confidence=confidence)
    space = window.hull() or default_space
    return GateDecision(space=space, used_fallback=True, confidence=confidence)


def maybe_record_feedback(
    ledger: FeedbackLedger,
    q: QueryRecord,
    golden_answer: str,
    expected_profile: QueryProfile | None = None,
) -> FeedbackLedger:
    """Count the query; on every interval-th one, append a feedback entry
    (evicting the oldest beyond capacity)."""
    ledger.query_counter += 1
    if ledger.query_counter % ledger.interval == 0:
        ledger.entries.append(
            FeedbackEntry(
                query_text=q.text,
                golden_answer=golden_answer,
                expected_profile=expected_profile,
            )
        )
    return ledger


class QueryProfiler:
    """Owns one estimator plus the shared gate state (window and ledger).

    profile_query may be called concurrently across queries for remote
    estimators; gate and feedback mutations belong to the single loop that
    owns this object.
    """

    def __init__(
        self,
        estimator: MockEstimator | RemoteEstimator,
        threshold: float = GATE_THRESHOLD,
        default_space: PrunedConfigSpace = DEFAULT_FALLBACK_SPACE,
        max_chunks: int = DEFAULT_MAX_CHUNKS,
    ) -> None:
        self.estimator = estimator
        self.threshold = threshold
        self.default_space = default_space
        self.max_chunks = max_chunks
        self.window = RecentSpaceWindow()
        self.ledger = FeedbackLedger()

    def profile_query(self, q: QueryRecord, meta: DatasetMeta) -> ProfilerOutput:
        return self.estimator.profile_query(q, meta, self.ledger)

    def gate(self, out: ProfilerOutput) -> GateDecision:
        return gate_profile(
            out,
            self.window,
            self.threshold,
            default_space=self.default_space,
            max_chunks=self.max_chunks,
        )

    def record_feedback(
        self, q: QueryRecord, golden_answer: str, expected_profile: QueryProfile | None = None
    ) -> None:
        maybe_record_feedback(self.ledger, q, golden_answer, expected_profile)
