import json
import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS))

FIX = TESTS / "fixtures"
DATA = TESTS.parent / "src" / "culture_mt_eval" / "data"


@pytest.fixture
def fix():
    return FIX


@pytest.fixture
def data():
    return DATA


@pytest.fixture
def sample():
    from culture_mt_eval.corpus import load_corpus

    return load_corpus(DATA / "sample_corpus.jsonl")


def mock_client(script, **kw):
    from culture_mt_eval.judge import JudgeClient
    from culture_mt_eval.judge.backends import MockBackend
    from culture_mt_eval.judge.client import RetryPolicy

    backend = MockBackend(script) if isinstance(script, dict) else MockBackend.from_file(script)
    kw.setdefault("retry", RetryPolicy(max_retries=2, base_delay=0, sleep=lambda s: None))
    return JudgeClient(backend, **kw)


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")
    return path


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.LINES, key=lambda s: int(s[2:4])):
            terminalreporter.write_line(line)
