"""Prompted judge agents: templates, backends, caching and response parsing."""
from .backends import BackendError, EchoBackend, HttpChatBackend, MockBackend, backend_from_spec
from .client import (
    DecodeConfig,
    JudgeClient,
    JudgeFailure,
    JudgeRequest,
    JudgeTranscript,
    MalformedPayloadError,
    ResponseCache,
    RetriesExhausted,
    RetryPolicy,
    query_judge,
)
from .parsing import ParseError, ScoreRangeError, parse_protocol, parse_score, parse_validity
from .templates import (
    TEMPLATE_IDS,
    PromptRenderError,
    PromptTemplate,
    RenderedPrompt,
    load_template,
    render_prompt,
)

__all__ = [
    "BackendError", "EchoBackend", "HttpChatBackend", "MockBackend", "backend_from_spec",
    "DecodeConfig", "JudgeClient", "JudgeFailure", "JudgeRequest", "JudgeTranscript",
    "MalformedPayloadError", "ResponseCache", "RetriesExhausted", "RetryPolicy", "query_judge",
    "ParseError", "ScoreRangeError", "parse_protocol", "parse_score", "parse_validity",
    "TEMPLATE_IDS", "PromptRenderError", "PromptTemplate", "RenderedPrompt", "load_template", "render_prompt",
]
