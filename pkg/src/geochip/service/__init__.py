"""Task-queue REST service: submission, three-stage pipeline, tiles, reports."""

from geochip.service.tasks import TaskEngine, TaskStore, TaskStates
from geochip.service.models import ModelRegistry
from geochip.service.app import create_app, ServiceConfig

__all__ = [
    "TaskEngine",
    "TaskStore",
    "TaskStates",
    "ModelRegistry",
    "create_app",
    "ServiceConfig",
]
