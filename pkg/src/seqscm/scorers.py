"""Sequence scorers and domain-restricted sampling over finite phrase spaces.

A scorer assigns a log-weight to a candidate phrase that continues a context.
Three backends exist: a tabular mock (exact-string lookup), a remote
completions endpoint scored by echoing the prompt, and a memoizing wrapper.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import httpx

from .errors import (
    AllZeroWeightError,
    RemoteProtocolError,
    RemoteUnreachableError,
    ScorerError,
    SpecSchemaError,
)
from .kernels import draw_index

SEPARATOR = " "

URL_ENV = "SEQSCM_SCORER_URL"
TOKEN_ENV = "SEQSCM_SCORER_TOKEN"
MODEL_ENV = "SEQSCM_SCORER_MODEL"


def join_context(context: str, candidate: str) -> str:
    return candidate if not context else context + SEPARATOR + candidate


class Scorer:
    """Base scorer.

    Subclasses implement :meth:`score_continuation`; everything else derives
    from it.
    """

    kind = "abstract"

    def __init__(self, label: str):
        if not label:
            raise ValueError("scorer label must be nonempty")
        self.label = label

    def score_continuation(self, context: str, candidate: str) -> float:
        raise NotImplementedError

    def score_candidates(self, context: str, candidates: Sequence[str]) -> list[float]:
        return [self.score_continuation(context, c) for c in candidates]

    def score(self, sequence: str) -> float:
        """Log-probability of a whole sequence (empty context)."""
        if not sequence:
            raise ValueError("sequence must be nonempty")
        return self.score_continuation("", sequence)

    def describe(self) -> dict:
        return {"kind": self.kind, "label": self.label}

    def __repr__(self) -> str:
        return f"{type(self).__name__}(label={self.label!r})"


# --------------------------------------------------------------------------
# tabular mock
# --------------------------------------------------------------------------


@dataclass
class TabularScoreTable:
    """Raw (unnormalized, strictly positive) scores keyed by exact strings."""

    entries: dict[tuple[str, str], float] = field(default_factory=dict)
    default: float = 1.0

    def __post_init__(self):
        if not (self.default > 0 and math.isfinite(self.default)):
            raise ValueError(f"default score must be positive and finite, got {self.default!r}")
        for key, w in self.entries.items():
            if not (w > 0 and math.isfinite(w)):
                raise ValueError(f"score for {key!r} must be positive and finite, got {w!r}")

    def set(self, context: str, candidate: str, score: float) -> None:
        if not (score > 0 and math.isfinite(score)):
            raise ValueError(f"score must be positive and finite, got {score!r}")
        self.entries[(context, candidate)] = float(score)

    def lookup(self, context: str, candidate: str) -> float:
        return self.entries.get((context, candidate), self.default)

    def to_json(self) -> dict:
        return {
            "default": self.default,
            "entries": [
                {"context": c, "candidate": k, "score": w}
                for (c, k), w in sorted(self.entries.items())
            ],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "TabularScoreTable":
        if not isinstance(doc, Mapping):
            raise SpecSchemaError("$", "score table must be a JSON object")
        if "default" not in doc:
            raise SpecSchemaError("$.default", "missing")
        entries: dict[tuple[str, str], float] = {}
        for i, e in enumerate(doc.get("entries", [])):
            try:
                entries[(str(e["context"]), str(e["candidate"]))] = float(e["score"])
            except (KeyError, TypeError, ValueError) as exc:
                raise SpecSchemaError(f"$.entries[{i}]", f"malformed entry ({exc})") from None
        try:
            return cls(entries, float(doc["default"]))
        except ValueError as exc:
            raise SpecSchemaError("$", str(exc)) from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TabularScoreTable":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SpecSchemaError(str(path), f"invalid JSON: {exc}") from None
        return cls.from_json(doc)

    def dump(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


class TabularScorer(Scorer):
    """Deterministic mock: ``log(table[(context, candidate)])``, default on misses."""

    kind = "tabular"

    def __init__(self, table: TabularScoreTable, label: str = "tabular", source: str | None = None):
        super().__init__(label)
        self.table = table
        self.source = source
        self._logs = {k: math.log(w) for k, w in table.entries.items()}
        self._default_log = math.log(table.default)

    def score_continuation(self, context: str, candidate: str) -> float:
        return self._logs.get((context, candidate), self._default_log)

    def score_candidates(self, context: str, candidates: Sequence[str]) -> list[float]:
        get, d = self._logs.get, self._default_log
        return [get((context, c), d) for c in candidates]

    def describe(self) -> dict:
        out = super().describe()
        if self.source:
            out["table"] = self.source
        return out

    @classmethod
    def from_file(cls, path: str | os.PathLike, label: str | None = None) -> "TabularScorer":
        return cls(TabularScoreTable.load(path), label=label or Path(path).stem, source=str(path))


# --------------------------------------------------------------------------
# remote completions endpoint
# --------------------------------------------------------------------------


@dataclass
class RemoteConfig:
    url: str
    model: str = ""
    token: str | None = None
    timeout: float = 30.0
    retries: int = 3
    max_in_flight: int = 4
    backoff: float = 0.5

    @classmethod
    def from_env(cls, **overrides) -> "RemoteConfig":
        """Build a config; ``SEQSCM_SCORER_URL`` / ``SEQSCM_SCORER_TOKEN`` win over overrides."""
        values = {k: v for k, v in overrides.items() if v is not None}
        if os.environ.get(URL_ENV):
            values["url"] = os.environ[URL_ENV]
        if os.environ.get(TOKEN_ENV):
            values["token"] = os.environ[TOKEN_ENV]
        if os.environ.get(MODEL_ENV) and not values.get("model"):
            values["model"] = os.environ[MODEL_ENV]
        if not values.get("url"):
            raise ScorerError(f"remote scorer needs an endpoint URL (set {URL_ENV})")
        return cls(**values)


def continuation_logprob(response: Mapping, start: int, end: int) -> float:
    """Sum echoed token log-probs whose text offset falls in ``[start, end)``.

    ``response`` is an OpenAI-style completions body produced with
    ``echo=True`` and ``logprobs`` enabled.  Tokens past ``end`` are generated
    tokens and are ignored; a ``null`` log-prob (first prompt token) is skipped.
    """
    try:
        lp = response["choices"][0]["logprobs"]
        offsets = lp["text_offset"]
        values = lp["token_logprobs"]
    except (KeyError, IndexError, TypeError):
        raise RemoteProtocolError("response lacks choices[0].logprobs.{text_offset,token_logprobs}") from None
    if len(offsets) != len(values):
        raise RemoteProtocolError("text_offset and token_logprobs lengths differ")
    total = 0.0
    seen = 0
    for off, val in zip(offsets, values):
        if start <= off < end:
            seen += 1
            if val is None:
                continue
            if not isinstance(val, (int, float)) or math.isnan(val):
                raise RemoteProtocolError(f"non-numeric token logprob {val!r}")
            total += float(val)
    if seen == 0:
        raise RemoteProtocolError("no echoed tokens cover the candidate continuation")
    return total


class RemoteScorer(Scorer):
    """Echo-scoring client for a completions endpoint.

    One request per (context, candidate); ``max_in_flight`` bounds concurrent
    requests across threads.
    """

    kind = "remote"

    def __init__(self, config: RemoteConfig, label: str = "remote", client: httpx.Client | None = None):
        super().__init__(label)
        self.config = config
        self._client = client
        self._gate = threading.BoundedSemaphore(config.max_in_flight)
        self._pool: ThreadPoolExecutor | None = None
        self.requests = 0

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_client"] = None
        state["_gate"] = None
        state["_pool"] = None
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._gate = threading.BoundedSemaphore(self.config.max_in_flight)

    @property
    def client(self) -> httpx.Client:
        if self._client is None:
            headers = {"Content-Type": "application/json"}
            if self.config.token:
                headers["Authorization"] = f"Bearer {self.config.token}"
            self._client = httpx.Client(headers=headers, timeout=self.config.timeout)
        return self._client

    def _post(self, payload: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.config.retries + 1):
            if attempt:
                time.sleep(self.config.backoff * 2 ** (attempt - 1))
            with self._gate:
                self.requests += 1
                try:
                    resp = self.client.post(self.config.url, json=payload)
                except httpx.TransportError as exc:
                    last = exc
                    continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = RuntimeError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise RemoteProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError:
                raise RemoteProtocolError("response body is not JSON") from None
        raise RemoteUnreachableError(
            f"{self.config.url} unreachable after {self.config.retries + 1} attempts: {last}"
        )

    def score_continuation(self, context: str, candidate: str) -> float:
        prompt = join_context(context, candidate)
        payload = {
            "prompt": prompt,
            "max_tokens": 1,
            "echo": True,
            "logprobs": 0,
            "temperature": 0.0,
        }
        if self.config.model:
            payload["model"] = self.config.model
        return continuation_logprob(self._post(payload), len(context), len(prompt))

    def score_candidates(self, context: str, candidates: Sequence[str]) -> list[float]:
        if self.config.max_in_flight <= 1 or len(candidates) <= 1:
            return super().score_candidates(context, candidates)
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.config.max_in_flight)
        return list(self._pool.map(lambda c: self.score_continuation(context, c), candidates))

    def describe(self) -> dict:
        out = super().describe()
        out.update(url=self.config.url, model=self.config.model)
        return out


# --------------------------------------------------------------------------
# memoization
# --------------------------------------------------------------------------


class CachedScorer(Scorer):
    """Exact-string memo in front of another scorer (bounded, LRU eviction)."""

    kind = "cached"

    def __init__(self, inner: Scorer, maxsize: int | None = 200_000):
        super().__init__(inner.label)
        self.inner = inner
        self.maxsize = maxsize
        self._memo: OrderedDict[tuple[str, str], float] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_lock"] = None
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def _get(self, key):
        with self._lock:
            val = self._memo.get(key)
            if val is not None:
                self._memo.move_to_end(key)
                self.hits += 1
            return val

    def _put(self, key, val: float) -> None:
        with self._lock:
            self._memo[key] = val
            self.misses += 1
            if self.maxsize is not None and len(self._memo) > self.maxsize:
                self._memo.popitem(last=False)

    def score_continuation(self, context: str, candidate: str) -> float:
        key = (context, candidate)
        val = self._get(key)
        if val is None:
            val = self.inner.score_continuation(context, candidate)
            self._put(key, val)
        return val

    def score_candidates(self, context: str, candidates: Sequence[str]) -> list[float]:
        out: list[float | None] = [self._get((context, c)) for c in candidates]
        missing = [i for i, v in enumerate(out) if v is None]
        if missing:
            fresh = self.inner.score_candidates(context, [candidates[i] for i in missing])
            for i, val in zip(missing, fresh):
                out[i] = val
                self._put((context, candidates[i]), val)
        return out  # type: ignore[return-value]

    def describe(self) -> dict:
        return {"kind": self.kind, "label": self.label, "inner": self.inner.describe()}


def cached(scorer: Scorer, maxsize: int | None = 200_000) -> CachedScorer:
    if isinstance(scorer, CachedScorer):
        return scorer
    return CachedScorer(scorer, maxsize=maxsize)


# --------------------------------------------------------------------------
# domain-restricted distributions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RestrictedDistribution:
    context: str
    candidates: tuple[str, ...]
    probs: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.probs)

    def check(self, tol: float = 1e-12) -> None:
        if len(self.probs) != len(self.candidates):
            raise ValueError("probability vector and candidate list differ in length")
        if any(p < 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > tol:
            raise ValueError(f"not a probability vector: {self.probs}")


def normalize_logs(logs: Sequence[float]) -> tuple[float, ...]:
    """Max-shifted softmax of log-weights; ``-inf`` entries get probability 0."""
    top = max(logs)
    if top == -math.inf:
        raise AllZeroWeightError("every candidate has zero weight")
    if math.isnan(top) or top == math.inf:
        raise ScorerError(f"scorer returned a non-finite log weight ({top})")
    exp = math.exp
    weights = [exp(x - top) for x in logs]
    total = sum(weights)
    if total != total:  # a NaN hid behind a larger finite entry
        raise ScorerError("scorer returned a NaN log weight")
    return tuple(w / total for w in weights)


def restricted_distribution(scorer: Scorer, context: str, space: Sequence[str]) -> RestrictedDistribution:
    if not space:
        raise ValueError("sample space must be nonempty")
    space = tuple(space)
    probs = normalize_logs(scorer.score_candidates(context, space))
    return RestrictedDistribution(context, space, probs)


def sample_restricted(scorer: Scorer, context: str, space: Sequence[str], rng) -> tuple[int, RestrictedDistribution]:
    dist = restricted_distribution(scorer, context, space)
    return draw_index(dist.probs, rng.random()), dist


def score(scorer: Scorer, sequence: str) -> float:
    return scorer.score(sequence)


# --------------------------------------------------------------------------
# construction from CLI-style selections
# --------------------------------------------------------------------------


def load_scorer(selection: str, label: str | None = None) -> Scorer:
    """Build a scorer from ``tabular:PATH``, ``PATH.json``, ``mock:NAME``, ``remote`` or ``remote:URL``.

    ``mock:NAME`` picks a table shipped in ``seqscm/data/mocks``.  Remote
    scorers come back wrapped in :func:`cached`.
    """
    sel = selection.strip()
    if sel.startswith("mock:"):
        from importlib import resources

        name = sel[len("mock:"):]
        ref = resources.files("seqscm") / "data" / "mocks" / f"{name}.table.json"
        if not ref.is_file():
            raise ScorerError(f"no bundled mock table named {name!r}")
        table = TabularScoreTable.from_json(json.loads(ref.read_text(encoding="utf-8")))
        return TabularScorer(table, label=label or name, source=sel)
    if sel.startswith("tabular:"):
        return TabularScorer.from_file(sel[len("tabular:"):], label=label)
    if sel == "remote" or sel.startswith("remote:"):
        url = sel[len("remote:"):] or None
        cfg = RemoteConfig.from_env(url=url)
        return cached(RemoteScorer(cfg, label=label or "remote"))
    if sel.endswith(".json"):
        return TabularScorer.from_file(sel, label=label)
    raise ScorerError(f"unrecognised scorer selection {selection!r}")
