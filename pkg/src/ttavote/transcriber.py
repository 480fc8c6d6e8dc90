"""Black-box transcription: remote multimodal-model client and a
correlated noisy-channel simulator, with JSONL response caching.

The simulator draws per-character error indicators through a Gaussian
copula (a latent component shared across sample indices mixes with a
per-sample component), so ensembles of simulated transcriptions have a
tunable error correlation.
"""

from __future__ import annotations

import base64
import json
import logging
import string
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np
from scipy.special import ndtri

from .core import FIELD_NAMES, DocumentImage, FieldSet
from .rng import keyed_generator, stable_hash

logger = logging.getLogger(__name__)

PROMPT_ID = "extract-names-v1"
PROMPT_TEXT = (
    "Transcribe the handwritten name fields on this document image. "
    "Respond with a single JSON object containing exactly these keys: "
    + ", ".join(FIELD_NAMES)
    + ". Use null for fields that are blank or unreadable. "
    "Copy spellings exactly as written; do not correct them."
)

_LETTERS = string.ascii_lowercase

MAX_RETRIES = 5
BACKOFF_BASE_SECONDS = 1.0
BACKOFF_CAP_SECONDS = 30.0
RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


class TranscriptionError(RuntimeError):
    """Remote call failed after retries, or the reply was unusable."""

    def __init__(self, message: str, raw_payload: str | None = None):
        super().__init__(message)
        self.raw_payload = raw_payload


@dataclass(frozen=True)
class GenerationParams:
    """Sampling parameters for one transcription request."""

    temperature: float = 0.0
    top_p: float = 0.95
    model_name: str = "default"
    prompt_id: str = PROMPT_ID
    sample_index: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0: {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1]: {self.top_p}")

    def cache_token(self) -> str:
        return stable_hash(
            "genparams",
            self.model_name,
            self.prompt_id,
            round(self.temperature, 6),
            round(self.top_p, 6),
            self.sample_index,
        )


def temperature_pool_params(temperature: float, n_samples: int = 20, model_name: str = "default") -> list[GenerationParams]:
    """Generation parameters for an n-sample same-image temperature pool.

    The sampling-diversity strategy queries the unaltered (half-scale)
    image n times at one temperature; 0.0 serves as the
    quasi-deterministic reference setting.
    """
    return [
        GenerationParams(temperature=temperature, model_name=model_name, sample_index=i)
        for i in range(n_samples)
    ]


@dataclass(frozen=True)
class NoiseModel:
    """Correlated character-level noisy channel.

    ``char_error_rate`` is the marginal per-character error probability,
    ``correlation`` the copula mixing weight shared across sample indices.
    ``op_mix`` gives (substitute, insert, delete) probabilities.
    """

    char_error_rate: float
    correlation: float = 0.0
    op_mix: tuple[float, float, float] = (1.0, 0.0, 0.0)
    drop_field_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.char_error_rate <= 1:
            raise ValueError(f"char_error_rate must be in [0, 1]: {self.char_error_rate}")
        if not 0 <= self.correlation <= 1:
            raise ValueError(f"correlation must be in [0, 1]: {self.correlation}")
        if not 0 <= self.drop_field_rate <= 1:
            raise ValueError(f"drop_field_rate must be in [0, 1]: {self.drop_field_rate}")
        if len(self.op_mix) != 3 or any(p < 0 for p in self.op_mix) or abs(sum(self.op_mix) - 1.0) > 1e-9:
            raise ValueError(f"op_mix must be a 3-point probability simplex: {self.op_mix}")


def simulate_transcribe(truth: FieldSet, model: NoiseModel, sample_index: int) -> FieldSet:
    """Deterministic noisy transcription of a ground-truth FieldSet."""
    out = {}
    for name in FIELD_NAMES:
        text = truth.get(name)
        out[name] = None if text is None else _simulate_field(text, name, model, sample_index)
    return FieldSet.from_dict(out)


def _simulate_field(text: str, field_name: str, model: NoiseModel, sample_index: int) -> str | None:
    rng = keyed_generator("sim", model.seed, field_name, text, sample_index)
    if model.drop_field_rate > 0 and rng.random() < model.drop_field_rate:
        return None
    n = len(text)
    if n == 0:
        return ""
    z_own = rng.standard_normal(n)
    common = keyed_generator("sim-common", model.seed, field_name, text)
    z_common = common.standard_normal(n)
    rho = model.correlation
    latent = np.sqrt(rho) * z_common + np.sqrt(1.0 - rho) * z_own
    # Error iff the copula CDF value falls below the error rate; comparing
    # in latent space keeps the 0 and 1 endpoints exact.
    errors = latent < ndtri(model.char_error_rate)

    op_draws = rng.random(n)
    sub_draws = rng.integers(0, len(_LETTERS) - 1, size=n)  # over the 25-letter pool
    ins_draws = rng.integers(0, len(_LETTERS), size=n)
    p_sub, p_ins, _ = model.op_mix

    pieces: list[str] = []
    for k, ch in enumerate(text):
        if not errors[k]:
            pieces.append(ch)
            continue
        u = op_draws[k]
        if u < p_sub:
            pieces.append(_different_letter(ch, int(sub_draws[k]), int(ins_draws[k])))
        elif u < p_sub + p_ins:
            pieces.append(ch)
            pieces.append(_LETTERS[int(ins_draws[k])])
        # else: deletion, emit nothing
    return "".join(pieces)


def _different_letter(original: str, pool_draw: int, full_draw: int) -> str:
    """Uniform letter distinct from ``original``.

    When the original is a letter, draw from the 25 remaining letters;
    otherwise any of the 26 letters already differs.
    """
    low = original.lower()
    if low in _LETTERS:
        return _LETTERS.replace(low, "")[pool_draw]
    return _LETTERS[full_draw]


@dataclass(frozen=True)
class RunRecord:
    """One cached transcription result."""

    record_id: str
    spec_hash: str
    params: GenerationParams
    fields: FieldSet
    timestamp: float
    raw_response: str | None = None

    def key(self) -> tuple[str, str, str]:
        return (self.record_id, self.spec_hash, self.params.cache_token())

    def to_json(self) -> str:
        return json.dumps(
            {
                "record_id": self.record_id,
                "spec_hash": self.spec_hash,
                "params": {
                    "temperature": self.params.temperature,
                    "top_p": self.params.top_p,
                    "model_name": self.params.model_name,
                    "prompt_id": self.params.prompt_id,
                    "sample_index": self.params.sample_index,
                },
                "fields": self.fields.to_dict(),
                "timestamp": self.timestamp,
                "raw_response": self.raw_response,
            },
            sort_keys=True,
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        data = json.loads(line)
        return cls(
            record_id=data["record_id"],
            spec_hash=data["spec_hash"],
            params=GenerationParams(**data["params"]),
            fields=FieldSet.from_dict(data["fields"]),
            timestamp=data["timestamp"],
            raw_response=data.get("raw_response"),
        )


class TranscriptionCache:
    """Append-only JSONL store of RunRecords; last write wins per key.

    Corrupt lines are quarantined to ``<path>.quarantine`` on load and
    dropped at the next compaction. Writes are serialized by a lock.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str, str], RunRecord] = {}
        self.n_quarantined = 0
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        bad: list[str] = []
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    record = RunRecord.from_json(line)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    bad.append(line)
                    continue
                self._entries[record.key()] = record
        if bad:
            self.n_quarantined = len(bad)
            quarantine = self.path.with_suffix(self.path.suffix + ".quarantine")
            with quarantine.open("a", encoding="utf-8") as fh:
                fh.write("\n".join(bad) + "\n")
            logger.warning("quarantined %d corrupt cache lines to %s", len(bad), quarantine)

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, record_id: str, spec_hash: str, params: GenerationParams) -> RunRecord | None:
        return self._entries.get((record_id, spec_hash, params.cache_token()))

    def put(self, record: RunRecord) -> None:
        with self._lock:
            self._entries[record.key()] = record
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")

    def compact(self) -> None:
        """Rewrite the store keeping only the latest entry per key."""
        with self._lock:
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            with tmp.open("w", encoding="utf-8") as fh:
                for record in self._entries.values():
                    fh.write(record.to_json() + "\n")
            tmp.replace(self.path)


class RateLimiter:
    """Enforces a minimum interval between acquisitions across threads."""

    def __init__(self, min_interval: float = 0.0):
        self.min_interval = min_interval
        self._lock = threading.Lock()
        self._next_at = 0.0

    def acquire(self) -> None:
        if self.min_interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            wait = self._next_at - now
            self._next_at = max(now, self._next_at) + self.min_interval
        if wait > 0:
            time.sleep(wait)


def parse_fieldset_payload(payload) -> FieldSet:
    """Extract the six name fields from a model reply.

    Accepts the field object directly, nested anywhere in the reply, or
    embedded as JSON text inside a string value. Missing or null fields
    are absent.
    """
    obj = _find_field_object(payload)
    if obj is None:
        raise TranscriptionError(
            "reply does not contain a recognizable field object",
            raw_payload=json.dumps(payload, ensure_ascii=False, default=str),
        )
    return FieldSet.from_dict(obj)


def _find_field_object(node) -> dict | None:
    if isinstance(node, dict):
        if any(name in node for name in FIELD_NAMES):
            return node
        for value in node.values():
            found = _find_field_object(value)
            if found is not None:
                return found
    elif isinstance(node, list):
        for item in node:
            found = _find_field_object(item)
            if found is not None:
                return found
    elif isinstance(node, str):
        start = node.find("{")
        end = node.rfind("}")
        if 0 <= start < end:
            try:
                inner = json.loads(node[start : end + 1])
            except json.JSONDecodeError:
                return None
            return _find_field_object(inner)
    return None


def encode_image_png_base64(img: DocumentImage) -> str:
    px = img.pixels
    out = px[:, :, 0] if px.shape[2] == 1 else cv2.cvtColor(px, cv2.COLOR_RGB2BGR)
    ok, buf = cv2.imencode(".png", out)
    if not ok:
        raise ValueError("PNG encoding failed")
    return base64.b64encode(buf.tobytes()).decode("ascii")


class RemoteTranscriber:
    """HTTP client for a black-box multimodal transcription endpoint.

    Sends ``{model, prompt, image, temperature, top_p}`` as JSON, retries
    transient failures with exponential backoff, and persists every reply
    to the cache before returning.
    """

    def __init__(
        self,
        endpoint_url: str,
        api_key: str | None,
        *,
        cache: TranscriptionCache | None = None,
        prompt_text: str = PROMPT_TEXT,
        prompt_id: str = PROMPT_ID,
        timeout: float = 60.0,
        max_retries: int = MAX_RETRIES,
        backoff_base: float = BACKOFF_BASE_SECONDS,
        backoff_cap: float = BACKOFF_CAP_SECONDS,
        session=None,
        limiter: RateLimiter | None = None,
        sleep=time.sleep,
    ):
        if not endpoint_url:
            raise ValueError("endpoint_url is required for live transcription")
        if api_key is None:
            raise ValueError("API credential missing (set the TTAVOTE_API_KEY environment variable)")
        if session is None:
            import requests

            session = requests.Session()
        self.endpoint_url = endpoint_url
        self.api_key = api_key
        self.cache = cache
        self.prompt_text = prompt_text
        self.prompt_id = prompt_id
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.session = session
        self.limiter = limiter
        self.sleep = sleep
        self.requests_made = 0

    def transcribe(
        self,
        img: DocumentImage,
        params: GenerationParams,
        *,
        record_id: str | None = None,
        spec_hash: str = "original",
    ) -> FieldSet:
        record_id = record_id if record_id is not None else img.id
        params = replace(params, prompt_id=self.prompt_id)
        if self.cache is not None:
            hit = self.cache.lookup(record_id, spec_hash, params)
            if hit is not None:
                return hit.fields

        payload = self._post_with_retries(img, params)
        fields = parse_fieldset_payload(payload)
        if self.cache is not None:
            self.cache.put(
                RunRecord(
                    record_id=record_id,
                    spec_hash=spec_hash,
                    params=params,
                    fields=fields,
                    timestamp=time.time(),
                    raw_response=json.dumps(payload, ensure_ascii=False, default=str),
                )
            )
        return fields

    def _post_with_retries(self, img: DocumentImage, params: GenerationParams):
        body = {
            "model": params.model_name,
            "prompt": self.prompt_text,
            "image": encode_image_png_base64(img),
            "temperature": params.temperature,
            "top_p": params.top_p,
        }
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt > 0:
                delay = min(self.backoff_base * 2 ** (attempt - 1), self.backoff_cap)
                self.sleep(delay)
            if self.limiter is not None:
                self.limiter.acquire()
            try:
                self.requests_made += 1
                response = self.session.post(
                    self.endpoint_url, json=body, headers=headers, timeout=self.timeout
                )
            except Exception as exc:  # connection errors, timeouts
                last_error = exc
                logger.warning("request failed (attempt %d): %s", attempt + 1, exc)
                continue
            status = getattr(response, "status_code", 200)
            if status in RETRYABLE_STATUS:
                last_error = TranscriptionError(f"HTTP {status}")
                logger.warning("retryable HTTP %d (attempt %d)", status, attempt + 1)
                continue
            if status >= 400:
                raise TranscriptionError(f"HTTP {status}", raw_payload=getattr(response, "text", None))
            try:
                return response.json()
            except ValueError as exc:
                raise TranscriptionError(
                    f"reply is not valid JSON: {exc}", raw_payload=getattr(response, "text", None)
                ) from exc
        raise TranscriptionError(f"request failed after {self.max_retries + 1} attempts: {last_error}")
