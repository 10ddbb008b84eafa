"""Command-line entry point: ``culture-mt-eval <command> [flags]``.

Configuration file (``--config``) is ``key = value`` text.  Keys before
any section header apply to every command; keys under ``[acre]`` (or any
other command name) apply to that command only.  Flags override the
file and the file overrides built-in defaults.  Keys are the long flag
names with dashes or underscores, e.g.::

    judge = mock:script.json
    parallelism = 4

    [acre]
    weights = A=0.7/0.3, B=0.6/0.4

Each run owns a directory (``--out``, default ``runs/<command>-<run_id[:12]>``)
with its outputs, ``manifest.json`` and, while running, a ``.lock`` file.
Exit status is 0 when clean, 2 when some instances failed softly and 1
on a hard error.  Remote backends read their token from the
``CULTURE_MT_EVAL_API_KEY`` environment variable.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import logging
import os
import sys
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from . import __version__
from .acre import (ARMS, PROMPT_MODES, AcreConfig, AcreError, AcreMetric, Hypothesis, Protocol, QualityWeights,
                   DEFAULT_WEIGHTS, evaluate_system, load_hypotheses)
from .corpus import (REJECT_REASONS, CorpusError, Domain, FilterConfig, corpus_stats, dump_corpus, filter_instances,
                     load_corpus)
from .error_taxonomy import (ErrorAnnotation, classify_errors, distribution_table, error_distribution,
                             load_annotations)
from .judge import JudgeClient, JudgeFailure
from .judge.backends import backend_from_spec
from .judge.client import ResponseCache, RetryPolicy
from .judge.templates import assets_dir
from .meta_eval import (BleuMetric, ChrfMetric, CorrelationError, ExternalMetric, PerturbationError,
                        SensitivityConfig, correlate_metrics, correlation_table, load_judgments, parse_error_types,
                        sensitivity_analysis)
from .mining import (Candidate, ExtractionStats, MiningError, build_corpus, category_counts, chunk_pairs,
                     classify_candidate, dedupe, extract_candidates, read_bilingual)
from .mt_runner import Demo, TranslationError, TranslationRun, translate_corpus
from .reporting import dumps, format_table, read_jsonl, sha256_file, write_csv, write_jsonl
from .surface_metrics import ExternalScorer, corpus_bleu, span_realized

logger = logging.getLogger("culture_mt_eval")

EXIT_OK, EXIT_HARD, EXIT_SOFT = 0, 1, 2


class CliError(Exception):
    pass


class ConfigError(CliError):
    def __init__(self, problems: Sequence[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = list(problems)


class _Parser(argparse.ArgumentParser):
    # unknown flags are hard errors (exit 1), not argparse's usage exit 2
    def error(self, message: str):
        raise CliError(f"{self.prog}: {message}")


# --- configuration -----------------------------------------------------------


def _positive_int(v: str) -> int:
    n = int(v)
    if n < 1:
        raise ValueError("must be >= 1")
    return n


def _nonneg_int(v: str) -> int:
    n = int(v)
    if n < 0:
        raise ValueError("must be >= 0")
    return n


def _unit_float(v: str) -> float:
    x = float(v)
    if not 0.0 <= x <= 1.0:
        raise ValueError("must lie in [0, 1]")
    return x


def _choice(*options: str) -> Callable[[str], str]:
    def conv(v: str) -> str:
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return conv


def _csv_list(v: str) -> list[str]:
    return [x.strip() for x in v.split(",") if x.strip()]


def _arms(v: str) -> list[str]:
    arms = _csv_list(v)
    bad = [a for a in arms if a not in ARMS]
    if bad or not arms:
        raise ValueError(f"unknown arm(s) {', '.join(bad) or '(none)'}; expected from {', '.join(ARMS)}")
    return arms


def _filter_rules(v: str) -> list[str]:
    aliases = {"salience": REJECT_REASONS[0], "contextual_support": REJECT_REASONS[1],
               "context": REJECT_REASONS[1], "alignment": REJECT_REASONS[2]}
    out = []
    for r in _csv_list(v):
        r = aliases.get(r, r)
        if r not in REJECT_REASONS:
            raise ValueError(f"unknown filter rule {r!r}")
        out.append(r)
    return out


def parse_weights(spec: str) -> dict[Protocol, QualityWeights]:
    """``A=0.7/0.3,B=0.6/0.4``; a protocol left out keeps its default."""
    weights = dict(DEFAULT_WEIGHTS)
    names = {"A": Protocol.A_FACT_CENTRIC, "B": Protocol.B_STYLE_CENTRIC}
    for part in _csv_list(spec):
        key, sep, val = part.partition("=")
        key = key.strip().upper()
        if not sep or key not in names:
            raise ValueError(f"expected A=<alpha>/<beta> or B=<alpha>/<beta>, got {part!r}")
        a, sep, b = val.partition("/")
        if not sep:
            raise ValueError(f"expected <alpha>/<beta>, got {val!r}")
        try:
            weights[names[key]] = QualityWeights(float(a), float(b))
        except AcreError as exc:
            raise ValueError(str(exc)) from None
    return weights


@dataclass(frozen=True)
class Option:
    name: str
    conv: Callable[[str], Any] = str
    default: Any = None
    help: str = ""
    path: bool = False      # an input file, hashed into the manifest
    reproducible: bool = True  # part of the run identity


OPTIONS = {o.name: o for o in [
    Option("corpus", help="corpus JSONL", path=True),
    Option("hyps", help="hypotheses JSONL", path=True),
    Option("judgments", help="human judgments JSONL", path=True),
    Option("annotations", help="error annotations JSONL", path=True),
    Option("candidates", help="candidates JSONL from `mine`", path=True),
    Option("raw", help="raw bilingual text", path=True),
    Option("sidecar", help="JSON {term: {explication, target_term?, standard_equivalent?}}", path=True),
    Option("table", help="perturbation table JSON {instance_id: {ErrorType: text}}", path=True),
    Option("demo_corpus", help="corpus holding the one-shot demonstration", path=True),
    Option("scores", conv=_csv_list, help="comma-separated scores.jsonl files", path=True),
    Option("runs", conv=_csv_list, help="comma-separated run directories"),
    Option("judge", help="judge backend: mock:<script.json>, echo[:FIELD], remote:<model>@<url>"),
    Option("backend", help="translation backend, same syntax as --judge"),
    Option("mode", conv=_choice(*PROMPT_MODES), default="zero_shot", help="translation prompt mode"),
    Option("demo_id", help="instance id of the one-shot demonstration"),
    Option("system_id", help="system id recorded on hypotheses"),
    Option("weights", conv=parse_weights, default="A=0.7/0.3,B=0.6/0.4", help="quality weights"),
    Option("routing", conv=_choice("static", "judge"), default="static", help="protocol routing"),
    Option("arm", conv=_choice(*ARMS), default="full", help="ACRE ablation arm"),
    Option("arms", conv=_arms, default="full,no_gate,no_routing,no_explication,no_reference",
           help="comma-separated ablation arms"),
    Option("metric", conv=_csv_list, help="alias of --metrics"),
    Option("metrics", conv=_csv_list, default="bleu,chrf_pp",
           help="bleu, chrf_pp, acre, ext:<name>=<cmd:...|url>"),
    Option("error_types", conv=parse_error_types,
           default="Omission,Literalization,SenseError,Neutralization,MisSubstitution,PragmaticShift,"
                   "OverInterpretation", help="comma-separated error types"),
    Option("perturb_mode", conv=_choice("rule", "judge"), default="rule", help="perturbation mode"),
    Option("sensitive_threshold", conv=_unit_float, default="0.20", help="relative drop for Sensitive"),
    Option("partial_threshold", conv=_unit_float, default="0.05", help="relative drop for Partial"),
    Option("layout", conv=_choice("tsv", "interleaved"), default="tsv", help="raw text layout"),
    Option("chunk_chars", conv=_positive_int, default="2000", help="mining chunk bound"),
    Option("explications", conv=_choice("manual_file", "judge"), default="manual_file",
           help="explication source"),
    Option("id_prefix", default="m", help="id prefix for mined instances"),
    Option("domain", conv=_choice(*(d.value for d in Domain)), default="literary", help="domain tag"),
    Option("filter", conv=_filter_rules, default="", help="filter rules: salience, contextual_support, alignment"),
    Option("min_context", conv=_nonneg_int, default="4", help="contextual-support minimum (chars)"),
    Option("span_mode", conv=_choice("exact", "normalized"), default="exact", help="span realization match"),
    Option("out", help="run directory", reproducible=False),
    Option("parallelism", conv=_positive_int, default="1", help="worker threads", reproducible=False),
    Option("seed", conv=_nonneg_int, default="0", help="seed forwarded to remote backends"),
    Option("retries", conv=_nonneg_int, default="3", help="transient-error retries per judge call"),
    Option("cache_dir", help="persistent judge response cache", reproducible=False),
    Option("log_level", conv=_choice("DEBUG", "INFO", "WARNING", "ERROR"), default="WARNING",
           help="log level", reproducible=False),
]}

COMMON = ["out", "parallelism", "seed", "log_level"]
JUDGED = ["judge", "retries", "cache_dir"]

COMMANDS: dict[str, tuple[str, list[str], list[str]]] = {
    # name: (help, options, required)
    "stats": ("corpus statistics table, optionally after filtering",
              ["corpus", "filter", "min_context"] + JUDGED, ["corpus"]),
    "mine": ("extract candidates from raw bilingual text", ["raw", "layout", "chunk_chars"] + JUDGED,
             ["raw", "judge"]),
    "classify": ("taxonomy-label candidates and assemble a corpus",
                 ["candidates", "sidecar", "explications", "id_prefix", "domain", "filter", "min_context"] + JUDGED,
                 ["candidates", "judge"]),
    "translate": ("generate hypotheses with a translation backend",
                  ["corpus", "backend", "mode", "demo_corpus", "demo_id", "system_id", "retries", "cache_dir"],
                  ["corpus", "backend"]),
    "score": ("segment-level metric scores", ["corpus", "hyps", "metrics", "metric", "span_mode", "weights",
                                              "routing"] + JUDGED, ["corpus", "hyps"]),
    "acre": ("ACRE per-instance scores and system report",
             ["corpus", "hyps", "weights", "routing", "arm"] + JUDGED, ["corpus", "hyps", "judge"]),
    "errors": ("error-type distribution from annotations or judge labels",
               ["annotations", "corpus", "hyps"] + JUDGED, []),
    "correlate": ("segment-level correlation with human judgments", ["scores", "judgments"],
                  ["scores", "judgments"]),
    "sensitivity": ("metric sensitivity to injected cultural errors",
                    ["corpus", "hyps", "table", "error_types", "metrics", "metric", "perturb_mode",
                     "sensitive_threshold", "partial_threshold", "weights", "routing"] + JUDGED,
                    ["corpus", "hyps"]),
    "ablate": ("ACRE ablation arms", ["corpus", "hyps", "judgments", "arms", "weights", "routing"] + JUDGED,
               ["corpus", "hyps", "judge"]),
    "report": ("collect headline numbers of finished runs", ["runs"], ["runs"]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="culture-mt-eval", description="Culture-aware MT evaluation toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, (help_text, opts, _req) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value configuration file")
        for key in opts + COMMON:
            o = OPTIONS[key]
            default = f" (default: {o.default})" if o.default not in (None, "") else ""
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=o.help + default)
    return parser


def read_config_file(path: str, command: str) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8")
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = lambda s: s.strip().replace("-", "_")
    try:
        cp.read_string("[__top__]\n" + text, source=path)
    except configparser.Error as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    values = dict(cp["__top__"])
    unknown_sections = [s for s in cp.sections() if s not in COMMANDS and s != "__top__"]
    if unknown_sections:
        raise ConfigError([f"{path}: unknown section [{s}]" for s in unknown_sections])
    if cp.has_section(command):
        values.update(cp[command])
    bad = [f"{path}: unknown key {k!r}" for k in values if k not in OPTIONS]
    if bad:
        raise ConfigError(bad)
    return values


def resolve_config(command: str, flags: dict[str, Optional[str]], config_path: Optional[str]) -> dict[str, Any]:
    """Merge defaults < config file < flags, convert values and collect every problem."""
    allowed = COMMANDS[command][1] + COMMON
    file_values = read_config_file(config_path, command) if config_path else {}
    raw: dict[str, Any] = {k: OPTIONS[k].default for k in allowed}
    for k, v in file_values.items():
        if k in allowed:
            raw[k] = v
        else:
            logger.debug("config key %s does not apply to %s", k, command)
    for k, v in flags.items():
        if v is not None and k in allowed:
            raw[k] = v
    if raw.get("metric") is not None:
        raw["metrics"] = raw.pop("metric")
    raw.pop("metric", None)
    problems, cfg = [], {}
    for k, v in raw.items():
        if v is None:
            cfg[k] = None
            continue
        try:
            cfg[k] = OPTIONS[k].conv(v) if isinstance(v, str) else v
        except ValueError as exc:
            problems.append(f"{k}: {exc} (got {v!r})")
    for k in COMMANDS[command][2]:
        if cfg.get(k) in (None, "", []):
            problems.append(f"{k}: required for `{command}`")
    for k, v in cfg.items():
        if OPTIONS[k].path and v:
            for p in (v if isinstance(v, list) else [v]):
                if not Path(p).is_file():
                    problems.append(f"{k}: no such file {p!r}")
    if problems:
        raise ConfigError(problems)
    cfg["_raw"] = {k: raw[k] for k in raw}
    return cfg


# --- run directory and manifest ---------------------------------------------------


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def prompt_asset_hashes() -> dict[str, str]:
    root = assets_dir()
    return {p.name: sha256_file(p) for p in sorted(root.iterdir()) if p.is_file()}


class Run:
    """One invocation's run directory: lock, outputs and manifest."""

    def __init__(self, command: str, cfg: dict[str, Any], judge_model_id: Optional[str] = None,
                 extra_inputs: Optional[dict[str, str]] = None):
        self.command = command
        self.cfg = cfg
        self.started_at = _now()
        self.inputs: dict[str, str] = {}
        for k, v in cfg["_raw"].items():
            if OPTIONS[k].path and v:
                for n, p in enumerate(_csv_list(v) if isinstance(v, str) else v):
                    self.inputs[k if n == 0 else f"{k}[{n}]"] = str(p)
        self.inputs.update(extra_inputs or {})
        self.input_hashes = {k: sha256_file(p) for k, p in sorted(self.inputs.items())}
        self.prompt_hashes = prompt_asset_hashes()
        self.judge_model_id = judge_model_id
        snapshot = {k: v for k, v in sorted(cfg["_raw"].items())
                    if OPTIONS[k].reproducible and not OPTIONS[k].path}
        for k in ("judge", "backend"):
            # a mock script is identified by its content hash, not its path
            if isinstance(snapshot.get(k), str) and snapshot[k].startswith("mock:") and snapshot[k] != "mock:echo":
                snapshot[k] = "mock:<script>"

        self.config_snapshot = {k: v for k, v in sorted(cfg["_raw"].items())}
        identity = {"command": command, "config": snapshot, "inputs": self.input_hashes,
                    "prompts": self.prompt_hashes, "judge_model_id": judge_model_id, "version": __version__}
        self.run_id = hashlib.sha256(dumps(identity).encode("utf-8")).hexdigest()
        self.dir = Path(cfg.get("out") or Path("runs") / f"{command}-{self.run_id[:12]}")
        self.soft_failures: dict[str, str] = {}
        self.outputs: list[str] = []
        self._locked = False
        self._protected = {Path(p).resolve() for p in self.inputs.values()}

    def __enter__(self) -> "Run":
        self.dir.mkdir(parents=True, exist_ok=True)
        lock = self.dir / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CliError(f"run directory {self.dir} is in use by another invocation ({lock} exists)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        self._locked = True
        handler = logging.FileHandler(self.dir / "run.log", mode="w", encoding="utf-8")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logging.getLogger().addHandler(handler)
        self._handler = handler
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        status = "error" if exc_type else ("soft_failures" if self.soft_failures else "ok")
        self.write_manifest(status, None if exc is None else f"{type(exc).__name__}: {exc}")
        logging.getLogger().removeHandler(self._handler)
        self._handler.close()
        if self._locked:
            (self.dir / ".lock").unlink(missing_ok=True)

    def path(self, name: str) -> Path:
        p = self.dir / name
        if p.resolve() in self._protected:
            raise CliError(f"refusing to overwrite input file {p}")
        self.outputs.append(name)
        return p

    def stamp(self, obj: dict) -> dict:
        return {"run_id": self.run_id, "manifest": "manifest.json", "command": self.command, **obj}

    def write_report(self, name: str, obj: dict, table: Optional[str] = None) -> None:
        self.path(name + ".json").write_text(dumps(self.stamp(obj)), encoding="utf-8")
        if table is not None:
            self.path(name + ".txt").write_text(f"run_id: {self.run_id}\n\n{table}\n", encoding="utf-8")

    def write_jsonl(self, name: str, rows) -> None:
        write_jsonl(self.path(name), rows)

    def soft(self, key: str, message: str) -> None:
        self.soft_failures[key] = message

    def write_manifest(self, status: str, error: Optional[str]) -> None:
        manifest = {
            "run_id": self.run_id,
            "command": self.command,
            "config": self.config_snapshot,
            "inputs": {k: {"path": self.inputs[k], "sha256": h} for k, h in self.input_hashes.items()},
            "prompt_assets": self.prompt_hashes,
            "judge_model_id": self.judge_model_id,
            "version": __version__,
            "started_at": self.started_at,
            "finished_at": _now(),
            "status": status,
            "error": error,
            "soft_failures": dict(sorted(self.soft_failures.items())),
            "outputs": sorted(set(self.outputs)),
        }
        (self.dir / "manifest.json").write_text(dumps(manifest), encoding="utf-8")


# --- shared helpers --------------------------------------------------------------


def make_client(spec: Optional[str], cfg: dict[str, Any]) -> tuple[Optional[JudgeClient], dict[str, str]]:
    """Client plus any script file to hash as an input."""
    if not spec:
        return None, {}
    try:
        backend = backend_from_spec(spec)
    except (OSError, ValueError) as exc:
        raise ConfigError([f"judge/backend: {exc}"]) from None
    if hasattr(backend, "seed") and cfg.get("seed") is not None:
        backend.seed = cfg["seed"]
    cache = ResponseCache(cfg.get("cache_dir")) if cfg.get("cache_dir") else ResponseCache()
    retries = cfg.get("retries")
    client = JudgeClient(backend, cache=cache, retry=RetryPolicy(max_retries=3 if retries is None else retries))
    extra = {}
    if spec.startswith("mock:") and spec[5:] != "echo":
        extra["judge_script" if spec is cfg.get("judge") else "backend_script"] = spec[5:]
    return client, extra


def group_hypotheses(hyps: Sequence[Hypothesis]) -> dict[tuple[str, str], list[Hypothesis]]:
    groups: dict[tuple[str, str], list[Hypothesis]] = defaultdict(list)
    for h in hyps:
        groups[(h.system_id, h.prompt_mode)].append(h)
    return dict(sorted(groups.items()))


def acre_config(cfg: dict[str, Any], arm: str = "full") -> AcreConfig:
    return AcreConfig(weights=cfg.get("weights") or dict(DEFAULT_WEIGHTS), routing=cfg.get("routing") or "static",
                      arm=arm, parallelism=cfg.get("parallelism") or 1)


def build_metrics(specs: Sequence[str], judge: Optional[JudgeClient], cfg: dict[str, Any]):
    metrics = []
    for spec in specs:
        if spec == "bleu":
            metrics.append(BleuMetric())
        elif spec in ("chrf_pp", "chrf", "chrf++"):
            metrics.append(ChrfMetric())
        elif spec == "acre":
            if judge is None:
                raise ConfigError(["metrics: acre needs --judge"])
            metrics.append(AcreMetric(judge, acre_config(cfg)))
        elif spec.startswith("ext:"):
            name, sep, desc = spec[4:].partition("=")
            if not sep or not name or not desc:
                raise ConfigError([f"metrics: expected ext:<name>=<descriptor>, got {spec!r}"])
            metrics.append(ExternalMetric(ExternalScorer(desc, name=name)))
        else:
            raise ConfigError([f"metrics: unknown metric {spec!r}"])
    return metrics


def _filter_config(cfg: dict[str, Any], judge: Optional[JudgeClient]) -> Optional[FilterConfig]:
    rules = cfg.get("filter") or []
    if not rules:
        return None
    return FilterConfig(salience=REJECT_REASONS[0] in rules, contextual_support=REJECT_REASONS[1] in rules,
                        alignment=REJECT_REASONS[2] in rules, min_context_chars=cfg.get("min_context") or 0,
                        use_judge=judge is not None)


# --- commands -----------------------------------------------------------------------


def cmd_stats(cfg, run_factory):
    judge, extra = make_client(cfg.get("judge"), cfg)
    corpus = load_corpus(cfg["corpus"])
    with run_factory(judge, extra) as run:
        rules = _filter_config(cfg, judge)
        rejected: list[tuple[str, str]] = []
        if rules is not None:
            corpus, rejected = filter_instances(corpus, rules, judge)
            dump_corpus(corpus, run.path("corpus.filtered.jsonl"))
        stats = corpus_stats(corpus)
        run.write_report("stats", {"corpus": corpus.name, "stats": stats.to_dict(),
                                   "rejected": [{"instance_id": i, "reason": r} for i, r in rejected]},
                         stats.table())
        print(stats.table())
    return run


def cmd_mine(cfg, run_factory):
    judge, extra = make_client(cfg["judge"], cfg)
    pairs = read_bilingual(cfg["raw"], cfg["layout"])
    with run_factory(judge, extra) as run:
        stats = ExtractionStats()
        cands: list[Candidate] = []
        chunks = chunk_pairs(pairs, cfg["chunk_chars"])
        for offset, chunk in chunks:
            origin = f"{Path(cfg['raw']).name}@{offset}"
            try:
                cands.extend(extract_candidates(chunk, judge, origin, cfg["chunk_chars"], stats))
            except JudgeFailure as exc:
                run.soft(origin, str(exc))
        unique = dedupe(cands)
        run.write_jsonl("candidates.jsonl", [c.to_dict() for c in unique])
        summary = {"pairs": len(pairs), "chunks": len(chunks), "returned": stats.returned, "kept": stats.kept,
                   "dropped_invariant": stats.dropped_invariant, "dropped_malformed": stats.dropped_malformed,
                   "duplicates": len(cands) - len(unique), "candidates": len(unique),
                   "failed_chunks": len(run.soft_failures)}
        table = format_table(["Field", "Value"], [[k, str(v)] for k, v in summary.items()])
        run.write_report("mining", summary, table)
        print(table)
    return run


def cmd_classify(cfg, run_factory):
    import json

    judge, extra = make_client(cfg["judge"], cfg)
    cands = [Candidate.from_dict(r) for r in read_jsonl(cfg["candidates"])]
    sidecar = json.loads(Path(cfg["sidecar"]).read_text(encoding="utf-8")) if cfg.get("sidecar") else {}
    with run_factory(judge, extra) as run:
        labeled, reasons = [], []
        for c in cands:
            try:
                category, reason = classify_candidate(c, judge)
            except JudgeFailure as exc:
                run.soft(c.origin or c.focus_term, str(exc))
                continue
            labeled.append((c, category))
            reasons.append({"origin": c.origin, "focus_term": c.focus_term, "category": category.value,
                            "reason": reason})
        corpus = build_corpus(labeled, cfg["explications"], sidecar, judge, cfg["id_prefix"],
                              Domain(cfg["domain"]), name=Path(cfg["candidates"]).stem)
        rejected: list[tuple[str, str]] = []
        rules = _filter_config(cfg, judge)
        if rules is not None:
            corpus, rejected = filter_instances(corpus, rules, judge)
        dump_corpus(corpus, run.path("corpus.jsonl"))
        run.write_jsonl("labels.jsonl", reasons)
        body = {"category_counts": category_counts(labeled), "instances": len(corpus),
                "rejected": [{"instance_id": i, "reason": r} for i, r in rejected]}
        table = corpus_stats(corpus).table() if len(corpus) else "(empty corpus)"
        run.write_report("classify", body, table)
        print(table)
    return run


def cmd_translate(cfg, run_factory):
    client, extra = make_client(cfg["backend"], cfg)
    corpus = load_corpus(cfg["corpus"])
    demo = None
    if cfg["mode"] == "one_shot":
        if not cfg.get("demo_corpus") or not cfg.get("demo_id"):
            raise ConfigError(["demo_corpus/demo_id: one_shot mode needs a held-out demonstration"])
        demo = Demo.from_instance(load_corpus(cfg["demo_corpus"])[cfg["demo_id"]])
    system_id = cfg.get("system_id") or client.model_id
    with run_factory(client, extra) as run:
        hyps, failures = translate_corpus(corpus, TranslationRun(system_id, cfg["backend"], cfg["mode"], demo),
                                          client, cfg["parallelism"])
        for iid, err in failures.items():
            run.soft(iid, err)
        run.write_jsonl("hyps.jsonl", [h.to_dict() for h in hyps])
        body = {"system_id": system_id, "mode": cfg["mode"], "translated": len(hyps), "failed": len(failures),
                "demo_id": demo.instance_id if demo else None}
        run.write_report("translate", body, format_table(["Field", "Value"], [[k, str(v)] for k, v in body.items()]))
    return run


def _score_rows(corpus, hyps, metrics, run, parallelism):
    from concurrent.futures import ThreadPoolExecutor

    jobs = [(m, corpus[h.instance_id], h) for m in metrics for h in hyps if h.instance_id in corpus.ids]
    unknown = sorted({h.instance_id for h in hyps} - set(corpus.ids))
    for iid in unknown:
        logger.warning("hypothesis for %s has no corpus instance; skipped", iid)

    def one(job):
        m, inst, h = job
        try:
            return float(m.score(inst, h.text)), None
        except Exception as exc:  # a metric failure is a per-instance soft failure
            return None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(one, jobs))
    rows = []
    for (m, inst, h), (value, err) in zip(jobs, results):
        if err is not None:
            run.soft(f"{m.name}/{h.system_id}/{inst.id}", err)
            continue
        rows.append({"instance_id": inst.id, "system_id": h.system_id, "mode": h.prompt_mode, "metric": m.name,
                     "value": value})
    return rows


def cmd_score(cfg, run_factory):
    corpus = load_corpus(cfg["corpus"])
    hyps = load_hypotheses(cfg["hyps"])
    judge, extra = make_client(cfg.get("judge"), cfg)
    metrics = build_metrics(cfg["metrics"], judge, cfg)
    with run_factory(judge, extra) as run:
        rows = _score_rows(corpus, hyps, metrics, run, cfg["parallelism"])
        run.write_jsonl("scores.jsonl", rows)
        systems = []
        for (sid, mode), hs in group_hypotheses(hyps).items():
            hs = [h for h in hs if h.instance_id in corpus.ids]
            entry: dict[str, Any] = {"system_id": sid, "mode": mode, "n": len(hs)}
            for m in metrics:
                vals = [r["value"] for r in rows if r["system_id"] == sid and r["mode"] == mode and r["metric"] == m.name]
                entry[f"mean_{m.name}"] = sum(vals) / len(vals) if vals else None
            if any(m.name == "bleu" for m in metrics) and hs:
                entry["corpus_bleu"] = corpus_bleu([h.text for h in hs],
                                                   [corpus[h.instance_id].reference_text for h in hs]).value
            spans = [span_realized(h.text, corpus[h.instance_id], cfg["span_mode"]) for h in hs
                     if corpus[h.instance_id].reference_span is not None]
            entry["span_realized_rate"] = sum(spans) / len(spans) if spans else None
            systems.append(entry)
        cols = [k for k in systems[0] if k not in ("system_id", "mode")] if systems else []
        table = format_table(["System", "Mode"] + cols,
                             [[s["system_id"], s["mode"]] + [_cell(s[c]) for c in cols] for s in systems])
        run.write_report("score", {"systems": systems, "metrics": [m.name for m in metrics]}, table)
        print(table)
    return run


def _cell(v: Any) -> str:
    if v is None:
        return "-"
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def _evaluate_groups(corpus, hyps, cfg, judge, run, arm):
    reports, rows = [], []
    for (sid, mode), hs in group_hypotheses(hyps).items():
        report, results = evaluate_system(corpus, hs, acre_config(cfg, arm), judge)
        report.run_id = run.run_id
        for r in results:
            if r.error is not None:
                run.soft(f"{arm}/{sid}/{r.instance_id}", r.error)
            row = r.to_dict()
            row.update({"arm": arm, "mode": mode})
            rows.append(row)
        reports.append(report)
    return reports, rows


def cmd_acre(cfg, run_factory):
    judge, extra = make_client(cfg["judge"], cfg)
    corpus = load_corpus(cfg["corpus"])
    hyps = load_hypotheses(cfg["hyps"])
    with run_factory(judge, extra) as run:
        reports, rows = _evaluate_groups(corpus, hyps, cfg, judge, run, cfg["arm"])
        run.write_jsonl("instances.jsonl", rows)
        table = "\n\n".join(r.table() for r in reports)
        run.write_report("report", {"arm": cfg["arm"], "systems": [r.to_dict() for r in reports]}, table)
        print(table)
    return run


def cmd_ablate(cfg, run_factory):
    judge, extra = make_client(cfg["judge"], cfg)
    corpus = load_corpus(cfg["corpus"])
    hyps = load_hypotheses(cfg["hyps"])
    judgments = load_judgments(cfg["judgments"]) if cfg.get("judgments") else None
    with run_factory(judge, extra) as run:
        arms, all_rows, table_rows = {}, [], []
        for arm in cfg["arms"]:
            reports, rows = _evaluate_groups(corpus, hyps, cfg, judge, run, arm)
            all_rows.extend(rows)
            entry: dict[str, Any] = {"systems": [r.to_dict() for r in reports]}
            r_val = rho = None
            if judgments is not None:
                scores = {(r["instance_id"], r["system_id"]): r["final"] for r in rows if r.get("final") is not None}
                judged = [j for j in judgments if j.key in scores]
                try:
                    corr = correlate_metrics({"acre": scores}, judged)[0]
                    r_val, rho = corr.pearson_r, corr.spearman_rho
                except CorrelationError as exc:
                    run.soft(f"{arm}/correlation", str(exc))
                entry["pearson_r"], entry["spearman_rho"], entry["n_judged"] = r_val, rho, len(judged)
            arms[arm] = entry
            for r in reports:
                table_rows.append([arm, r.system_id, str(r.n), _cell(r.validity_rate), _cell(r.mean_acre),
                                   _cell(r_val), _cell(rho)])
        run.write_jsonl("instances.jsonl", all_rows)
        table = format_table(["Arm", "System", "N", "Validity", "ACRE", "Pearson r", "Spearman rho"], table_rows)
        run.write_report("ablation", {"arms": arms}, table)
        print(table)
    return run


def cmd_errors(cfg, run_factory):
    judge, extra = make_client(cfg.get("judge"), cfg)
    if cfg.get("annotations"):
        annotations = load_annotations(cfg["annotations"])
    elif cfg.get("corpus") and cfg.get("hyps") and judge is not None:
        annotations = None
    else:
        raise ConfigError(["annotations: give --annotations, or --corpus, --hyps and --judge for judge labels"])
    with run_factory(judge, extra) as run:
        if annotations is None:
            corpus = load_corpus(cfg["corpus"])
            annotations = []
            for h in load_hypotheses(cfg["hyps"]):
                if h.instance_id not in corpus.ids:
                    continue
                try:
                    labels = classify_errors(corpus[h.instance_id], h.text, judge)
                except JudgeFailure as exc:
                    run.soft(f"{h.system_id}/{h.instance_id}", str(exc))
                    continue
                annotations.append(ErrorAnnotation(h.instance_id, h.system_id, labels, "judge"))
            run.write_jsonl("annotations.jsonl", [a.to_dict() for a in annotations])
        profiles = error_distribution(annotations)
        table = distribution_table(profiles)
        body = {"systems": {sid: {"n": p.n, "n_correct": p.n_correct, "correctness_rate": p.correctness_rate,
                                  "shares": p.shares, "counts": p.counts} for sid, p in profiles.items()}}
        run.write_report("errors", body, table)
        print(table)
    return run


def cmd_correlate(cfg, run_factory):
    judgments = load_judgments(cfg["judgments"])
    scores: dict[str, dict[tuple[str, str], float]] = defaultdict(dict)
    for path in cfg["scores"]:
        for r in read_jsonl(path):
            key = (str(r["instance_id"]), str(r["system_id"]))
            if key in scores[r["metric"]]:
                raise CliError(f"{path}: duplicate {r['metric']} score for {key}")
            scores[r["metric"]][key] = float(r["value"])
    with run_factory(None, {}) as run:
        reports = correlate_metrics(scores, judgments)
        table = correlation_table(reports)
        run.write_report("correlation", {"metrics": [vars(r) for r in reports]}, table)
        print(table)
    return run


def cmd_sensitivity(cfg, run_factory):
    import json

    judge, extra = make_client(cfg.get("judge"), cfg)
    corpus = load_corpus(cfg["corpus"])
    groups = group_hypotheses(load_hypotheses(cfg["hyps"]))
    if len(groups) != 1:
        raise CliError(f"sensitivity needs base hypotheses of one system, got {len(groups)}")
    base = {h.instance_id: h.text for h in next(iter(groups.values()))}
    table_data = json.loads(Path(cfg["table"]).read_text(encoding="utf-8")) if cfg.get("table") else {}
    if cfg["perturb_mode"] == "judge" and judge is None:
        raise ConfigError(["perturb_mode: judge mode needs --judge"])
    metrics = build_metrics(cfg["metrics"], judge, cfg)
    sconf = SensitivityConfig(mode=cfg["perturb_mode"], table=table_data,
                              sensitive_threshold=cfg["sensitive_threshold"],
                              partial_threshold=cfg["partial_threshold"], parallelism=cfg["parallelism"])
    with run_factory(judge, extra) as run:
        report = sensitivity_analysis(corpus, base, cfg["error_types"], metrics, sconf, judge)
        for c in report.cells:
            for e in c.errors:
                run.soft(f"{c.metric}/{c.error_type}/{e['instance_id']}", e["error"])
        run.write_jsonl("perturbations.jsonl", [{"instance_id": iid, "error_type": et, "text": text}
                                                for iid, d in sorted(report.perturbations.items())
                                                for et, text in d.items()])
        write_csv(run.path("deltas.csv"), ["metric", "error_type", "instance_id", "base", "perturbed", "delta"],
                  report.delta_rows())
        run.write_report("sensitivity", report.to_dict(), report.table())
        print(report.table())
    return run


def cmd_report(cfg, run_factory):
    import json

    rows, entries = [], []
    for d in cfg["runs"]:
        mpath = Path(d) / "manifest.json"
        if not mpath.is_file():
            raise CliError(f"{d}: no manifest.json")
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        entries.append({"dir": str(d), "run_id": manifest["run_id"], "command": manifest["command"],
                        "status": manifest["status"], "judge_model_id": manifest.get("judge_model_id"),
                        "outputs": manifest.get("outputs", [])})
        rows.append([manifest["command"], manifest["run_id"][:12], manifest["status"],
                     str(manifest.get("judge_model_id")), str(len(manifest.get("soft_failures", {})))])
    with run_factory(None, {}) as run:
        table = format_table(["Command", "Run", "Status", "Judge", "Soft failures"], rows)
        run.write_report("summary", {"runs": entries}, table)
        print(table)
    return run


HANDLERS = {
    "stats": cmd_stats, "mine": cmd_mine, "classify": cmd_classify, "translate": cmd_translate,
    "score": cmd_score, "acre": cmd_acre, "errors": cmd_errors, "correlate": cmd_correlate,
    "sensitivity": cmd_sensitivity, "ablate": cmd_ablate, "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = build_parser().parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HARD
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    try:
        cfg = resolve_config(ns.command, flags, ns.config)
    except (CliError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HARD
    logging.basicConfig(level=cfg.get("log_level") or "WARNING", format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(cfg.get("log_level") or "WARNING")

    def run_factory(client, extra):
        model = getattr(client, "model_id", None) if client is not None else None
        return Run(ns.command, cfg, model, extra)

    try:
        run = HANDLERS[ns.command](cfg, run_factory)
    except (CliError, CorpusError, AcreError, MiningError, TranslationError, PerturbationError, CorrelationError,
            JudgeFailure, OSError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_HARD
    if run.soft_failures:
        print(f"{len(run.soft_failures)} soft failure(s); see {run.dir / 'manifest.json'}", file=sys.stderr)
        return EXIT_SOFT
    print(f"run {run.run_id[:12]} written to {run.dir}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
