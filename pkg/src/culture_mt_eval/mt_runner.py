"""Hypothesis generation under source-only zero-/one-shot prompting."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .acre import PROMPT_MODES, Hypothesis
from .corpus import Corpus, Instance
from .judge import JudgeClient, JudgeFailure
from .judge.parsing import ParseError

logger = logging.getLogger(__name__)


class TranslationError(ValueError):
    pass


class PromptLeakError(TranslationError):
    pass


@dataclass(frozen=True)
class Demo:
    instance_id: str
    source: str
    reference: str

    @classmethod
    def from_instance(cls, inst: Instance) -> "Demo":
        return cls(inst.id, inst.source_text, inst.reference_text)


@dataclass(frozen=True)
class TranslationRun:
    system_id: str
    backend: str
    mode: str = "zero_shot"
    demo: Optional[Demo] = None

    def __post_init__(self) -> None:
        if self.mode not in PROMPT_MODES:
            raise TranslationError(f"unknown mode {self.mode!r}")
        if self.mode == "one_shot" and self.demo is None:
            raise TranslationError("one_shot mode needs a held-out demonstration")


def _parse_translation(raw: str) -> str:
    if not isinstance(raw, str):
        raise ParseError("response is not text")
    return raw.strip()


def check_prompt_isolation(client: JudgeClient, corpus: Corpus) -> None:
    """No translation prompt may contain the reference or explication of the instance it translates."""
    by_source = {}
    for inst in corpus:
        by_source.setdefault(inst.source_text, []).append(inst)
    for t in client.transcripts:
        if not t.request.template_id.startswith("translate"):
            continue
        src = dict(t.request.bindings).get("SOURCE")
        for inst in by_source.get(src, []):
            for name, text in (("reference", inst.reference_text), ("explication", inst.explication)):
                if text and text in t.rendered_prompt:
                    raise PromptLeakError(f"{inst.id}: translation prompt contains the {name}")


def translate_corpus(corpus: Corpus, run: TranslationRun, client: JudgeClient,
                     parallelism: int = 1) -> tuple[list[Hypothesis], dict[str, str]]:
    """Returns hypotheses in corpus order plus ``{instance_id: error}`` for failures."""
    if run.mode == "one_shot" and run.demo.instance_id in set(corpus.ids):
        raise TranslationError(f"demonstration {run.demo.instance_id!r} is part of the evaluated corpus")

    def one(inst: Instance):
        if run.mode == "zero_shot":
            template, bindings = "translate_0shot", {"SOURCE": inst.source_text}
        else:
            template = "translate_1shot"
            bindings = {"SOURCE": inst.source_text, "DEMO_SOURCE": run.demo.source, "DEMO_TARGET": run.demo.reference}
        try:
            text, _ = client.ask(template, bindings, _parse_translation)
        except JudgeFailure as exc:
            logger.warning("%s: translation failed: %s", inst.id, exc)
            return None, str(exc)
        return Hypothesis(inst.id, run.system_id, text, run.mode), None

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(one, corpus.instances))
    check_prompt_isolation(client, corpus)
    hyps = [h for h, _ in results if h is not None]
    failures = {inst.id: err for inst, (_, err) in zip(corpus.instances, results) if err is not None}
    return hyps, failures
