from .app import create_app
from .platform import AmtPlatformStub, CrowdPlatform, MockCrowdPlatform
from .service import (
    CompletionCode,
    Denial,
    PlaylistItem,
    StudyService,
    StudyState,
    SubmitRejection,
    TaskAssignment,
)

__all__ = [
    "AmtPlatformStub",
    "CompletionCode",
    "CrowdPlatform",
    "Denial",
    "MockCrowdPlatform",
    "PlaylistItem",
    "StudyService",
    "StudyState",
    "SubmitRejection",
    "TaskAssignment",
    "create_app",
]
