"""Weak LGBTQ+ affiliation labeling via an instruction-tuned LLM.

Each tweet + bio pair is rendered into a language-matched annotation
prompt whose answer must be a lone ``0`` or ``1``. Responses are cached
append-only and keyed by (prompt, model, attempt), so warm reruns never
touch the network; non-conforming answers are retried a bounded number
of times with a clarifying suffix and otherwise surfaced as unresolved.
The labels are weak supervision for the user encoder only — never a
claim about any individual.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import IntEnum
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import requests

from .corpus import Instance

logger = logging.getLogger(__name__)

PRIDE_FLAG = "\U0001F3F3️‍\U0001F308"

_ITALIAN_INSTRUCTIONS = f"""Sei un annotatore per un task di classificazione.
In input riceverai la bio di un utente Twitter e alcuni suoi tweet
Il tuo compito è decidere se l'utente in questione fa parte o meno della comunità LGBT.
Basa la tua scelta sul modo di scrivere, sul contenuto della bio e dei tweet, e su tutti i fattori che ritieni rilevanti.
L'input che ti fornirò sarà nel formato TWEET - BIO.

L'output che voglio è semplicemente un numero:
0 se l'utente NON appartiene alla comunità LGBT,
1 se invece appartiene alla comunità.

Esempio di interazione:
INPUT: "fuck gender rules and the rules of society || bts || exo" - "pansexual, genderqueer and polyamorous {PRIDE_FLAG} || she/her || unito dams"
OUTPUT: 1"""

_SPANISH_INSTRUCTIONS = f"""Eres un anotador para una tarea de clasificación.
En la entrada recibirás la biografía de un usuario de Twitter y algunos de sus tuits.
Tu tarea es decidir si el usuario en cuestión forma parte o no de la comunidad LGBT.
Basarás tu decisión en la forma de escribir, el contenido de la biografía y de los tuits, y en todos los factores que consideres relevantes.
La entrada que te proporcionaré tendrá el formato TWEET - BIO.

La salida que quiero es simplemente un número:
0 si el usuario NO pertenece a la comunidad LGBT,
1 si sí pertenece a la comunidad.

Ejemplo de interacción:
ENTRADA: "fuck gender rules and the rules of society || bts || exo" - "pansexual, genderqueer and polyamorous {PRIDE_FLAG} || she/her || unito dams"
SALIDA: 1"""

_INPUT_TAGS = {"IT": "INPUT", "ES": "ENTRADA"}

_CLARIFIERS = {
    "IT": "Rispondi esclusivamente con una singola cifra: 0 oppure 1.",
    "ES": "Responde únicamente con un solo dígito: 0 o 1.",
}


class Affiliation(IntEnum):
    NOT_AFFILIATED = 0
    AFFILIATED = 1


class ResponseParseError(Exception):
    """The LLM answer was not a lone 0/1 token."""

    def __init__(self, raw: str):
        super().__init__(f"unparseable annotation response: {raw!r}")
        self.raw = raw


class LLMClientError(Exception):
    """Network or provider failure while querying the LLM."""


@dataclass(frozen=True)
class PromptTemplate:
    """Annotation prompt with a single ``{input}`` slot for the TWEET - BIO pair."""

    language: str
    text: str

    def __post_init__(self):
        if self.text.count("{input}") != 1:
            raise ValueError("prompt template must contain exactly one {input} slot")


def default_template(language: str) -> PromptTemplate:
    instructions = {"IT": _ITALIAN_INSTRUCTIONS, "ES": _SPANISH_INSTRUCTIONS}[language]
    return PromptTemplate(language=language, text=f"{instructions}\n\n{_INPUT_TAGS[language]}: {{input}}")


def default_templates() -> dict[str, PromptTemplate]:
    return {lang: default_template(lang) for lang in ("IT", "ES")}


@dataclass(frozen=True)
class ProxySignal:
    """Weak binary affiliation label for one instance, with raw provenance."""

    instance_id: str
    affiliated: Affiliation
    raw_response: str
    prompt_language: str
    model_identifier: str
    timestamp: str


@dataclass(frozen=True)
class UnresolvedAnnotation:
    instance_id: str
    attempts: int
    last_response: str | None


@dataclass
class AnnotationResult:
    signals: list[ProxySignal]
    unresolved: list[UnresolvedAnnotation]
    cache_hits: int = 0
    client_calls: int = 0

    def summary(self) -> str:
        n_pos = sum(1 for s in self.signals if s.affiliated == Affiliation.AFFILIATED)
        return (
            f"{len(self.signals)} annotated ({n_pos} affiliated, "
            f"{len(self.signals) - n_pos} not affiliated), "
            f"{len(self.unresolved)} unresolved, "
            f"{self.cache_hits} cache hits, {self.client_calls} client calls"
        )


def _quote_field(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def render_prompt(template: PromptTemplate, instance: Instance) -> str:
    """Fill the template's input slot with the quoted ``"tweet" - "bio"`` pair.

    Fields are double-quoted with backslash escaping so a literal ``-`` (or
    quote) inside either text cannot blur the field boundary.
    """
    if template.language != instance.language:
        raise ValueError(
            f"template language {template.language} does not match instance language {instance.language}"
        )
    rendered = f"{_quote_field(instance.tweet)} - {_quote_field(instance.bio)}"
    return template.text.replace("{input}", rendered)


def parse_response(raw: str) -> Affiliation:
    """Strictly parse an annotation answer: a lone 0/1, whitespace tolerated.

    Anything else — prose, both digits, empty text — raises
    ResponseParseError; no answer is ever silently coerced.
    """
    token = raw.strip()
    if token == "0":
        return Affiliation.NOT_AFFILIATED
    if token == "1":
        return Affiliation.AFFILIATED
    raise ResponseParseError(raw)


class LLMClient(Protocol):
    """Provider-agnostic completion interface: text in, text out."""

    model_identifier: str

    def complete(self, prompt: str) -> str: ...


def _heuristic_affiliation_rule(prompt: str) -> str:
    # Inspect only the final rendered input, not the instruction block
    # (which itself contains an affiliated example).
    segment = prompt.rsplit("INPUT:", 1)[-1].rsplit("ENTRADA:", 1)[-1].lower()
    return "1" if (PRIDE_FLAG in segment or "pride" in segment) else "0"


class MockLLMClient:
    """Deterministic offline client for tests and --mock-llm runs.

    The default rule labels an instance affiliated when the rendered
    input segment mentions a pride marker; pass ``rule`` to override.
    """

    def __init__(self, rule: Callable[[str], str] | None = None, model_identifier: str = "mock-affiliation-heuristic"):
        self.rule = rule or _heuristic_affiliation_rule
        self.model_identifier = model_identifier
        self.calls = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        return self.rule(prompt)


class OpenAICompatibleClient:
    """Chat-completions client for any OpenAI-style endpoint.

    Temperature is pinned to 0 so weak labels are reproducible across
    reruns of the same model.
    """

    def __init__(
        self,
        base_url: str,
        model_identifier: str,
        api_key: str,
        timeout_s: float = 60.0,
        max_tokens: int = 8,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_identifier = model_identifier
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.max_tokens = max_tokens
        self.session = session or requests.Session()

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.model_identifier,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.0,
            "max_tokens": self.max_tokens,
        }
        try:
            response = self.session.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise LLMClientError(f"request failed: {exc}") from exc
        if response.status_code != 200:
            raise LLMClientError(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise LLMClientError(f"malformed completion payload: {exc}") from exc


def cache_key(prompt: str, model_identifier: str, attempt: int) -> str:
    digest = hashlib.sha256()
    digest.update(model_identifier.encode("utf-8"))
    digest.update(b"\x1f")
    digest.update(str(attempt).encode("ascii"))
    digest.update(b"\x1f")
    digest.update(prompt.encode("utf-8"))
    return digest.hexdigest()


class AnnotationCache:
    """Append-only JSONL cache of raw LLM responses, keyed by prompt hash.

    Writes are serialized with a lock so bounded-parallel annotation can
    share one cache. Records keep the raw response verbatim for audit.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: dict[str, dict] = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as handle:
                for line in handle:
                    if line.strip():
                        record = json.loads(line)
                        self._records[record["prompt_hash"]] = record

    def __len__(self) -> int:
        return len(self._records)

    def get(self, key: str) -> dict | None:
        with self._lock:
            return self._records.get(key)

    def put(self, record: dict) -> None:
        with self._lock:
            self._records[record["prompt_hash"]] = record
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def _call_with_backoff(client: LLMClient, prompt: str, attempts: int, backoff_s: float) -> str:
    for i in range(attempts):
        try:
            return client.complete(prompt)
        except LLMClientError as exc:
            if i == attempts - 1:
                raise
            delay = backoff_s * (2**i)
            logger.warning("LLM call failed (%s); retrying in %.1fs", exc, delay)
            if delay > 0:
                time.sleep(delay)
    raise LLMClientError("unreachable")


def annotate_corpus(
    instances: Sequence[Instance],
    client: LLMClient,
    cache: AnnotationCache,
    templates: Mapping[str, PromptTemplate] | None = None,
    retries: int = 3,
    fan_out: int = 1,
    network_attempts: int = 3,
    backoff_s: float = 1.0,
) -> AnnotationResult:
    """Produce one proxy signal per instance, cache-first.

    A parse failure triggers up to ``retries`` re-asks with a clarifying
    suffix; every (prompt, attempt) response is cached, so a rerun over
    the same corpus resolves entirely from the cache. Instances that
    still fail to parse are reported as unresolved. Requests may fan out
    over ``fan_out`` threads; results are merged in corpus order.
    """
    templates = dict(templates) if templates is not None else default_templates()

    def annotate_one(inst: Instance) -> tuple[ProxySignal | UnresolvedAnnotation, int, int]:
        template = templates.get(inst.language)
        if template is None:
            raise ValueError(f"no prompt template for language {inst.language}")
        base_prompt = render_prompt(template, inst)
        calls = hits = 0
        last_raw: str | None = None
        for attempt in range(retries + 1):
            prompt = base_prompt if attempt == 0 else f"{base_prompt}\n\n{_CLARIFIERS[inst.language]}"
            key = cache_key(prompt, client.model_identifier, attempt)
            record = cache.get(key)
            if record is None:
                raw = _call_with_backoff(client, prompt, network_attempts, backoff_s)
                calls += 1
                try:
                    parsed: int | None = int(parse_response(raw))
                except ResponseParseError:
                    parsed = None
                record = {
                    "prompt_hash": key,
                    "model_identifier": client.model_identifier,
                    "attempt": attempt,
                    "raw_response": raw,
                    "parsed_label": parsed,
                    "timestamp": datetime.now(timezone.utc).isoformat(),
                }
                cache.put(record)
            else:
                hits += 1
            last_raw = record["raw_response"]
            try:
                value = parse_response(record["raw_response"])
            except ResponseParseError:
                continue
            signal = ProxySignal(
                instance_id=inst.id,
                affiliated=value,
                raw_response=record["raw_response"],
                prompt_language=inst.language,
                model_identifier=client.model_identifier,
                timestamp=record["timestamp"],
            )
            return signal, calls, hits
        return UnresolvedAnnotation(inst.id, attempts=retries + 1, last_response=last_raw), calls, hits

    if fan_out > 1:
        with ThreadPoolExecutor(max_workers=fan_out) as pool:
            outcomes = list(pool.map(annotate_one, instances))
    else:
        outcomes = [annotate_one(inst) for inst in instances]

    result = AnnotationResult(signals=[], unresolved=[])
    for outcome, calls, hits in outcomes:
        result.client_calls += calls
        result.cache_hits += hits
        if isinstance(outcome, ProxySignal):
            result.signals.append(outcome)
        else:
            result.unresolved.append(outcome)
    if result.unresolved:
        logger.warning(
            "%d instance(s) unresolved after %d attempt(s) each", len(result.unresolved), retries + 1
        )
    return result


def write_proxy_file(signals: Sequence[ProxySignal], path: str | Path) -> None:
    """Write the proxy-label file: one {instance_id, affiliated, model} row per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for signal in signals:
            handle.write(
                json.dumps(
                    {
                        "instance_id": signal.instance_id,
                        "affiliated": int(signal.affiliated),
                        "model_identifier": signal.model_identifier,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_proxy_file(path: str | Path) -> dict[str, Affiliation]:
    """Load a proxy-label file into an instance-id → affiliation map."""
    path = Path(path)
    labels: dict[str, Affiliation] = {}
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                row = json.loads(line)
                labels[row["instance_id"]] = Affiliation(int(row["affiliated"]))
    return labels
