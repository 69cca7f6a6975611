"""Model backends, prompt builders and structured completion."""

from .backends import (
    Backend,
    BackendUnavailable,
    LiveBackend,
    RecordingBackend,
    ScriptedBackend,
    TranscriptMiss,
    TransportError,
    prompt_digest,
)
from .mock import MockBackend, mock_extract
from .prompts import (
    PromptStrategy,
    build_cluster_prompt,
    build_detection_prompt,
    build_extraction_prompt,
    build_recommender_prompt,
)
from .structured import BackendResponse, StructuredRequest, complete_structured

__all__ = [
    "Backend",
    "BackendResponse",
    "BackendUnavailable",
    "LiveBackend",
    "MockBackend",
    "PromptStrategy",
    "RecordingBackend",
    "ScriptedBackend",
    "StructuredRequest",
    "TranscriptMiss",
    "TransportError",
    "build_cluster_prompt",
    "build_detection_prompt",
    "build_extraction_prompt",
    "build_recommender_prompt",
    "complete_structured",
    "mock_extract",
    "prompt_digest",
]
