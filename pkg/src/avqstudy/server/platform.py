"""Crowd-platform integration boundary.

The study server only needs two things from the crowd platform: a way to
push the qualification credential to a worker, and a place to surface
completed-task confirmations. Worker identity and profile data arrive
with each task request, so no pull API is required.
"""

from __future__ import annotations

from typing import Protocol


class CrowdPlatform(Protocol):
    def grant_qualification(self, worker_id: str) -> None:
        """Attach the study's qualification credential to a worker."""
        ...


class MockCrowdPlatform:
    """In-memory platform used by tests and the cohort simulator."""

    def __init__(self) -> None:
        self.granted: list[str] = []

    def grant_qualification(self, worker_id: str) -> None:
        if worker_id not in self.granted:
            self.granted.append(worker_id)


class AmtPlatformStub:
    """Placeholder for the real Mechanical Turk integration.

    A production implementation would create a custom qualification type
    once (``CreateQualificationType``) and push grants in bulk with
    ``AssociateQualificationWithWorker`` through boto3's ``mturk``
    client. Kept as a stub so the platform stays testable offline.
    """

    def grant_qualification(self, worker_id: str) -> None:
        raise NotImplementedError(
            "wire AssociateQualificationWithWorker(QualificationTypeId=..., "
            f"WorkerId={worker_id!r}) via boto3 mturk client"
        )
