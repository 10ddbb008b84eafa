"""Prompt assets and rendering.

Each template lives in ``assets/prompts`` as ``<id>.system.txt`` and
``<id>.user.txt`` with ``{{NAME}}`` placeholders.  Prompt wording is
never inlined in code.
"""
from __future__ import annotations

import functools
import hashlib
import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

logger = logging.getLogger(__name__)

PLACEHOLDER_RE = re.compile(r"\{\{([A-Z][A-Z0-9_]*)\}\}")

TEMPLATE_IDS = (
    "mining",
    "taxonomy",
    "dispatcher",
    "validator",
    "fidelity",
    "clarity",
    "translate_0shot",
    "translate_1shot",
)
# auxiliary templates used by ablations, error labelling, filtering and perturbation
AUX_TEMPLATE_IDS = ("fidelity_no_reference", "error_classify", "filter", "perturb", "explicate")


class PromptRenderError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0])


def assets_dir() -> Path:
    return Path(str(resources.files("culture_mt_eval") / "assets" / "prompts"))


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    system_text: str
    user_text: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for m in PLACEHOLDER_RE.finditer(self.system_text + "\n" + self.user_text):
            seen.setdefault(m.group(1))
        return tuple(seen)

    @property
    def digest(self) -> str:
        return hashlib.sha256((self.system_text + "\0" + self.user_text).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RenderedPrompt:
    template_id: str
    system: str
    user: str

    @property
    def text(self) -> str:
        return f"[System]\n{self.system}\n\n[User]\n{self.user}"

    def messages(self) -> list[dict[str, str]]:
        return [{"role": "system", "content": self.system}, {"role": "user", "content": self.user}]


@functools.lru_cache(maxsize=None)
def _load(template_id: str, root: str) -> PromptTemplate:
    base = Path(root)
    try:
        system = (base / f"{template_id}.system.txt").read_text(encoding="utf-8")
        user = (base / f"{template_id}.user.txt").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise PromptRenderError(f"no prompt asset for template {template_id!r} under {base}") from None
    return PromptTemplate(template_id, system.rstrip("\n"), user.rstrip("\n"))


def load_template(template_id: str, root: Optional[str | Path] = None) -> PromptTemplate:
    return _load(template_id, str(root or assets_dir()))


@functools.lru_cache(maxsize=None)
def load_text_asset(name: str) -> str:
    return (assets_dir() / name).read_text(encoding="utf-8").rstrip("\n")


def format_reminder(template_id: str) -> str:
    reminders = json.loads(load_text_asset("reminders.json"))
    family = template_id.split("_")[0] if template_id not in reminders else template_id
    return reminders.get(family, reminders["default"])


def render_prompt(template: PromptTemplate, bindings: Mapping[str, str]) -> RenderedPrompt:
    """Substitute every ``{{NAME}}`` in one pass; bound values are never re-scanned."""
    needed = template.placeholders
    missing = [p for p in needed if p not in bindings]
    if missing:
        raise PromptRenderError(f"template {template.template_id!r}: missing binding(s) {', '.join(missing)}")
    extra = sorted(set(bindings) - set(needed))
    if extra:
        logger.warning("template %s: ignoring unknown binding(s) %s", template.template_id, ", ".join(extra))

    def sub(text: str) -> str:
        return PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), text)

    return RenderedPrompt(template.template_id, sub(template.system_text), sub(template.user_text))
