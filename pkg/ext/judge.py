import asyncio
import hashlib
import json
import logging
import math
import os
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import aiohttp
import numpy as np
from sklearn.feature_extraction.text import TfidfVectorizer
from sklearn.neighbors import KNeighborsRegressor, NearestCentroid
from tenacity import (
    AsyncRetrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from .base_handler import BaseLockHandler
from .constants import (
    API_KEY_ENV,
    BACKOFF_FACTOR,
    BACKOFF_START,
    MAX_IN_FLIGHT,
    MISSING,
    PROMPT_CHAR_BUDGET,
    REQUEST_TIMEOUT,
    SCHEMA_RETRIES,
    TRANSPORT_RETRIES,
    AuthError,
    ConfigError,
    ContextOverflow,
    JudgeError,
    JudgeKind,
    RateLimited,
    TaskKind,
    TransportError,
)
from .dataset import TaskSpec

logger = logging.getLogger(__name__)

ROW_ID_PREFIX = re.compile(r'^\[[^\]]*\]\s*')


@dataclass(frozen=True)
class JudgeSpec:
    kind: JudgeKind
    endpoint_url: Optional[str] = None
    model_name: Optional[str] = None
    temperature: float = 0.0
    base_accuracy: float = 1.0
    slope_per_intensity: float = 0.0
    response_jitter: float = 0.0
    seed: int = 0
    api_key_env: str = API_KEY_ENV
    timeout: float = REQUEST_TIMEOUT
    max_in_flight: int = MAX_IN_FLIGHT
    transport_retries: int = TRANSPORT_RETRIES
    backoff_start: float = BACKOFF_START
    backoff_factor: float = BACKOFF_FACTOR
    char_budget: int = PROMPT_CHAR_BUDGET

    def __post_init__(self):
        if self.kind is JudgeKind.REMOTE and (not self.endpoint_url or not self.model_name):
            raise ConfigError("Remote judge requires endpoint_url and model_name")
        if self.kind is JudgeKind.SIM_SCRIPTED and not 0.0 <= self.base_accuracy <= 1.0:
            raise ConfigError(f"base_accuracy must be in [0, 1] (got {self.base_accuracy})")
        if self.response_jitter < 0:
            raise ConfigError("response_jitter must be >= 0")

    @property
    def is_simulated(self) -> bool:
        return self.kind is not JudgeKind.REMOTE

    def fingerprint(self) -> Dict[str, Any]:
        if self.kind is JudgeKind.REMOTE:
            return {'kind': self.kind.value, 'model': self.model_name, 'temperature': self.temperature}
        if self.kind is JudgeKind.SIM_SCRIPTED:
            return {
                'kind': self.kind.value,
                'base_accuracy': self.base_accuracy,
                'slope_per_intensity': self.slope_per_intensity,
                'response_jitter': self.response_jitter,
                'seed': self.seed,
            }
        return {'kind': self.kind.value, 'seed': self.seed}

    @classmethod
    def from_dict(cls, data: Mapping) -> 'JudgeSpec':
        data = dict(data)
        try:
            kind = JudgeKind(data.pop('kind'))
        except KeyError:
            raise ConfigError("judge.kind is required")
        except ValueError as e:
            raise ConfigError(f"Unknown judge kind: {e}")
        known = set(cls.__dataclass_fields__) - {'kind'}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown judge settings: {sorted(unknown)}")
        return cls(kind=kind, **data)

    @classmethod
    def from_cli(cls, text: str, defaults: Optional[Mapping] = None) -> 'JudgeSpec':
        """
        Parse ``sim:scripted:base=0.9,slope=-0.1``, ``sim:centroid`` or ``remote:MODEL``

        Remote endpoint and the other transport settings come from ``defaults``.
        """
        aliases = {'base': 'base_accuracy', 'slope': 'slope_per_intensity', 'jitter': 'response_jitter'}
        parts = text.split(':', 2)
        settings: Dict[str, Any] = dict(defaults or {})
        settings.pop('kind', None)

        if parts[0] == 'sim' and len(parts) >= 2:
            kind = {'scripted': JudgeKind.SIM_SCRIPTED, 'centroid': JudgeKind.SIM_CENTROID}.get(parts[1])
            if kind is None:
                raise ConfigError(f"Unknown simulated judge: {parts[1]}")
            for item in filter(None, (parts[2] if len(parts) == 3 else '').split(',')):
                key, _, value = item.partition('=')
                key = aliases.get(key.strip(), key.strip())
                if key not in cls.__dataclass_fields__:
                    raise ConfigError(f"Unknown judge parameter: {key}")
                settings[key] = int(value) if key == 'seed' else float(value)
        elif parts[0] == 'remote':
            kind = JudgeKind.REMOTE
            if len(parts) >= 2 and parts[1]:
                settings['model_name'] = ':'.join(parts[1:])
        else:
            raise ConfigError(f"Cannot parse judge spec {text!r}")

        settings = {k: v for k, v in settings.items() if k in cls.__dataclass_fields__}
        return cls(kind=kind, **settings)


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    n_context: int
    eval_ids: Tuple[str, ...]
    label_space: Tuple[str, ...] = ()
    # Ground truth for simulated judges only; never rendered into the prompt
    reference: Tuple = field(default=(), repr=False, compare=False)

    @property
    def char_count(self) -> int:
        return len(self.system_text) + len(self.user_text)


@dataclass(frozen=True)
class JudgePrediction:
    example_id: str
    raw_text: str
    parsed: Any
    retries_used: int = 0

    @property
    def missing(self) -> bool:
        return self.parsed is MISSING


def _format_value(value) -> str:
    if isinstance(value, (float, int, np.floating, np.integer)) and not isinstance(value, bool):
        return f"{float(value):.6g}"
    text = str(value)
    try:
        number = float(text)
    except ValueError:
        return text
    return f"{number:.6g}" if math.isfinite(number) else text


def serialize_row(row: Mapping, features: Sequence[str], numeric: bool = True) -> str:
    """``feature=value, feature=value`` in feature order"""
    if numeric:
        return ', '.join(f"{name}={_format_value(row[name])}" for name in features)
    return ', '.join(f"{name}={' '.join(str(row[name]).split())}" for name in features)


def build_system_prompt(task: TaskSpec, dataset_meta: Mapping) -> str:
    """
    System message: dataset context, task statement, label space or regression
    target, covariate summaries and the output-format constraint
    """
    name = dataset_meta.get('name', 'dataset')
    target = dataset_meta.get('target', task.target_name)
    lines = [f'You are an expert annotator labeling records from the dataset "{name}".']
    if dataset_meta.get('description'):
        lines.append(f"Dataset description: {dataset_meta['description']}")

    if task.is_classification:
        lines.append(f'Task: classification. Predict the class of "{target}" for each evaluation row.')
        permitted = ', '.join(f'"{label}"' for label in task.label_space)
        lines.append(f"Permitted outputs: {permitted}")
        answer_rule = "exactly one of the permitted outputs"
    else:
        lines.append(f'Task: regression. Predict the numeric value of "{target}" for each evaluation row.')
        if task.value_range:
            low, high = task.value_range
            lines.append(f"Target range in the training data: {_format_value(low)} to {_format_value(high)}")
        answer_rule = "a single decimal number (use '.' as decimal point)"

    summaries = dataset_meta.get('feature_summaries') or []
    if summaries:
        lines.append("Features:")
        for summary in summaries:
            lines.append(
                f"- {summary['name']}: min {_format_value(summary['min'])}, "
                f"max {_format_value(summary['max'])}, mean {_format_value(summary['mean'])}"
            )

    lines.append(
        "Output format: reply with one line per evaluation row, in the order given, "
        f"each line containing only {answer_rule}. No explanations, no numbering."
    )
    return '\n'.join(lines)


def build_user_prompt(few_shot: Sequence[Tuple[Mapping, str]], eval_rows: Sequence[Mapping],
                      cap: int, features: Sequence[str], system_text: str = '',
                      eval_ids: Optional[Sequence[str]] = None, numeric: bool = True,
                      label_space: Sequence[str] = (), reference: Sequence = (),
                      char_budget: int = PROMPT_CHAR_BUDGET) -> PromptBundle:
    """
    Few-shot ``(X, y)`` pairs followed by the unlabeled evaluation rows

    Raises:
        ContextOverflow: system + user text longer than ``char_budget``
    """
    shown = list(features)[:cap]
    ids = list(eval_ids) if eval_ids is not None else [f"e{i}" for i in range(len(eval_rows))]
    if len(ids) != len(eval_rows):
        raise ValueError(f"{len(ids)} ids for {len(eval_rows)} evaluation rows")

    lines = []
    if few_shot:
        lines.append("Labeled examples:")
        for row, label in few_shot:
            lines.append(f"{serialize_row(row, shown, numeric)} → {label}")
        lines.append("")
    lines.append(f"Evaluation rows ({len(eval_rows)}):")
    for row_id, row in zip(ids, eval_rows):
        lines.append(f"[{row_id}] {serialize_row(row, shown, numeric)}")

    bundle = PromptBundle(
        system_text=system_text,
        user_text='\n'.join(lines),
        n_context=len(few_shot),
        eval_ids=tuple(ids),
        label_space=tuple(label_space),
        reference=tuple(reference),
    )
    if bundle.char_count > char_budget:
        raise ContextOverflow(f"Prompt has {bundle.char_count} characters (budget {char_budget})")
    return bundle


def _normalize(text: str) -> str:
    return ROW_ID_PREFIX.sub('', text.strip()).strip().casefold()


def parse_validate(raw: str, task: TaskSpec, expected_count: int,
                   eval_ids: Optional[Sequence[str]] = None) -> List[JudgePrediction]:
    """
    Match answers positionally to evaluation rows

    Classification answers are trimmed and case-folded, then matched exactly
    against the label space; regression answers must parse as finite decimals.
    A line-count mismatch leaves every slot MISSING.
    """
    ids = list(eval_ids) if eval_ids is not None else [f"e{i}" for i in range(expected_count)]
    lines = [line for line in (raw or '').splitlines() if line.strip()]
    if len(lines) != expected_count:
        return [JudgePrediction(row_id, raw or '', MISSING) for row_id in ids]

    lookup = {label.casefold(): label for label in task.label_space}
    predictions = []
    for row_id, line in zip(ids, lines):
        answer = _normalize(line)
        if task.is_classification:
            parsed = lookup.get(answer, MISSING)
        else:
            try:
                parsed = float(answer)
                if not math.isfinite(parsed):
                    parsed = MISSING
            except ValueError:
                parsed = MISSING
        predictions.append(JudgePrediction(row_id, line, parsed))
    return predictions


def _clamp(value: float, low: float, high: float) -> float:
    return min(max(value, low), high)


def sim_predict(spec: JudgeSpec, eval_rows: Sequence[Mapping], truths: Sequence, intensity: float,
                rng: np.random.Generator, task: TaskSpec,
                few_shot: Sequence[Tuple[Mapping, str]] = (), features: Sequence[str] = (),
                numeric: bool = True, eval_ids: Optional[Sequence[str]] = None) -> List[JudgePrediction]:
    """
    Simulated judge answers

    sim_scripted: correct with probability clamp(base + slope·n + jitter, 1/|labels|, 1),
    otherwise a uniformly drawn wrong label (regression: a uniform draw over the
    target range). sim_centroid: nearest class centroid of the few-shot examples
    in feature space (bag-of-words for text; 1-NN for regression), so any loss
    of accuracy comes from the noise itself.
    """
    ids = list(eval_ids) if eval_ids is not None else [f"e{i}" for i in range(len(eval_rows))]
    if spec.kind is JudgeKind.SIM_SCRIPTED:
        answers = _scripted_answers(spec, truths, intensity, rng, task)
    elif spec.kind is JudgeKind.SIM_CENTROID:
        answers = _centroid_answers(eval_rows, few_shot, features, numeric, task)
    else:
        raise JudgeError("sim_predict needs a simulated judge")
    return [JudgePrediction(row_id, str(answer), answer) for row_id, answer in zip(ids, answers)]


def _scripted_answers(spec: JudgeSpec, truths: Sequence, intensity: float,
                      rng: np.random.Generator, task: TaskSpec) -> List:
    jitter = rng.normal(0.0, spec.response_jitter) if spec.response_jitter > 0 else 0.0
    floor = 1.0 / len(task.label_space) if task.is_classification else 0.0
    p_correct = _clamp(spec.base_accuracy + spec.slope_per_intensity * intensity + jitter, floor, 1.0)

    n = len(truths)
    correct = rng.random(n) < p_correct
    if task.is_classification:
        labels = list(task.label_space)
        offsets = rng.integers(1, len(labels), size=n) if len(labels) > 1 else np.zeros(n, dtype=int)
        answers = []
        for truth, ok, offset in zip(truths, correct, offsets):
            if ok or len(labels) == 1:
                answers.append(str(truth))
            else:
                answers.append(labels[(labels.index(str(truth)) + int(offset)) % len(labels)])
        return answers

    low, high = task.value_range or (0.0, 1.0)
    draws = rng.uniform(low, high, size=n)
    return [float(truth) if ok else float(draw) for truth, ok, draw in zip(truths, correct, draws)]


def _centroid_answers(eval_rows: Sequence[Mapping], few_shot: Sequence[Tuple[Mapping, str]],
                      features: Sequence[str], numeric: bool, task: TaskSpec) -> List:
    if not few_shot:
        raise JudgeError("sim_centroid needs few-shot examples")
    if not eval_rows:
        return []

    if numeric:
        x_train = np.array([[float(row[f]) for f in features] for row, _ in few_shot])
        x_eval = np.array([[float(row[f]) for f in features] for row in eval_rows])
    else:
        vectorizer = TfidfVectorizer(token_pattern=r'\S+', lowercase=True)
        x_train = vectorizer.fit_transform([' '.join(str(row[f]) for f in features) for row, _ in few_shot])
        x_eval = vectorizer.transform([' '.join(str(row[f]) for f in features) for row in eval_rows])

    labels = [label for _, label in few_shot]
    if not task.is_classification:
        model = KNeighborsRegressor(n_neighbors=1).fit(x_train, [float(v) for v in labels])
        return [float(v) for v in model.predict(x_eval)]

    if len(set(labels)) == 1:
        return [labels[0]] * len(eval_rows)
    model = NearestCentroid().fit(x_train, labels)
    return [str(v) for v in model.predict(x_eval)]


class JudgeClient(BaseLockHandler):
    """Sends prompt bundles to a judge and enforces the output schema"""

    def __init__(self, spec: JudgeSpec, transcript_path: Optional[Path] = None,
                 session: Optional[aiohttp.ClientSession] = None):
        super().__init__(max_in_flight=spec.max_in_flight)
        self.spec = spec
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self.session = session
        self._owns_session = session is None
        self.calls = 0
        self.logger = logging.getLogger("JudgeClient")

    async def close(self):
        if self.session is not None and self._owns_session:
            await self.session.close()
            self.session = None

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        await self.close()
        self.cleanup()

    def _api_key(self) -> str:
        key = os.environ.get(self.spec.api_key_env)
        if not key:
            raise AuthError(f"Environment variable {self.spec.api_key_env} is not set")
        return key

    async def _post_once(self, payload: Dict, headers: Dict) -> str:
        if self.session is None:
            self.session = aiohttp.ClientSession()
            self._owns_session = True
        self.calls += 1
        try:
            async with self.session.post(
                self.spec.endpoint_url,
                json=payload,
                headers=headers,
                timeout=aiohttp.ClientTimeout(total=self.spec.timeout),
            ) as resp:
                if resp.status in (401, 403):
                    raise AuthError(f"Judge endpoint rejected credential (HTTP {resp.status})")
                if resp.status == 429:
                    raise RateLimited("Judge endpoint rate limited the request (HTTP 429)")
                if resp.status >= 500:
                    raise TransportError(f"Judge endpoint error (HTTP {resp.status})")
                if resp.status >= 400:
                    raise JudgeError(f"Judge endpoint refused the request (HTTP {resp.status})")
                body = await resp.json(content_type=None)
        except (aiohttp.ClientError, asyncio.TimeoutError) as e:
            raise TransportError(f"Transport failure: {e}") from e

        try:
            return body['choices'][0]['message']['content'] or ''
        except (KeyError, IndexError, TypeError):
            self.logger.warning("Judge response has no choices[0].message.content")
            return ''

    async def query(self, bundle: PromptBundle) -> str:
        """
        One completion for ``bundle``

        Remote judges POST a chat-completion request; rate limits and transport
        failures are retried with exponential backoff, auth failures are not.
        """
        if self.spec.kind is JudgeKind.SIM_SCRIPTED:
            digest = hashlib.sha256(bundle.user_text.encode('utf-8')).digest()
            rng = np.random.default_rng([self.spec.seed, int.from_bytes(digest[:8], 'big')])
            task = TaskSpec(task_kind=_task_kind_for(bundle), label_space=bundle.label_space)
            answers = _scripted_answers(self.spec, bundle.reference, 0.0, rng, task)
            return '\n'.join(str(a) for a in answers)
        if self.spec.kind is JudgeKind.SIM_CENTROID:
            raise JudgeError("sim_centroid answers from feature rows; call sim_predict")

        headers = {'Authorization': f"Bearer {self._api_key()}"}
        payload = {
            'model': self.spec.model_name,
            'messages': [
                {'role': 'system', 'content': bundle.system_text},
                {'role': 'user', 'content': bundle.user_text},
            ],
            'temperature': self.spec.temperature,
        }

        async with self.in_flight():
            started = datetime.now(timezone.utc)
            retrying = AsyncRetrying(
                retry=retry_if_exception_type(TransportError),
                wait=wait_exponential(multiplier=self.spec.backoff_start, exp_base=self.spec.backoff_factor),
                stop=stop_after_attempt(self.spec.transport_retries + 1),
                before_sleep=before_sleep_log(self.logger, logging.WARNING),
                reraise=True,
            )
            async for attempt in retrying:
                with attempt:
                    text = await self._post_once(payload, headers)
            finished = datetime.now(timezone.utc)

        self.logger.debug(f"Judge answered {len(bundle.eval_ids)} rows in {(finished - started).total_seconds():.2f}s")
        await self._write_transcript({
            'requested_at': started.isoformat(),
            'answered_at': finished.isoformat(),
            'model': self.spec.model_name,
            'eval_ids': list(bundle.eval_ids),
            'request': payload,
            'response': text,
        })
        return text

    async def predict_batch(self, bundle: PromptBundle, task: TaskSpec) -> List[JudgePrediction]:
        """Query and validate, re-asking for the whole batch up to SCHEMA_RETRIES times"""
        predictions: List[JudgePrediction] = []
        for attempt in range(SCHEMA_RETRIES + 1):
            raw = await self.query(bundle)
            predictions = parse_validate(raw, task, len(bundle.eval_ids), bundle.eval_ids)
            if not any(p.missing for p in predictions):
                return [replace(p, retries_used=attempt) for p in predictions]
            self.logger.warning(
                f"Schema validation failed for batch {bundle.eval_ids[:1]}... "
                f"(attempt {attempt + 1}/{SCHEMA_RETRIES + 1})"
            )
        return [replace(p, retries_used=SCHEMA_RETRIES) for p in predictions]

    async def _write_transcript(self, entry: Dict):
        if self.transcript_path is None:
            return
        async with self.locked('transcript'):
            self.transcript_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.transcript_path, 'a', encoding='utf-8') as f:
                f.write(json.dumps(entry, ensure_ascii=False) + '\n')


def _task_kind_for(bundle: PromptBundle) -> TaskKind:
    return TaskKind.CLASSIFICATION if bundle.label_space else TaskKind.REGRESSION
