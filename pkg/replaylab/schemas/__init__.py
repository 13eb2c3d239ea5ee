from .dataset import DATASET_FORMAT_VERSION, DatasetHeader, DatasetRecord
from .results import BufferStats, ImprovementStats, RunResult
from .study import (
    AgentSection,
    BudgetSection,
    EnvSection,
    GridSection,
    OfflineSection,
    OptimSection,
    ReplaySection,
    SamplerSection,
    StatsSection,
    StudyConfig,
    StudySection,
)
from .variant import COMPONENTS, RAINBOW_N, TargetSpec, VariantSpec

__all__ = [
    "DATASET_FORMAT_VERSION",
    "DatasetHeader",
    "DatasetRecord",
    "BufferStats",
    "ImprovementStats",
    "RunResult",
    "AgentSection",
    "BudgetSection",
    "EnvSection",
    "GridSection",
    "OfflineSection",
    "OptimSection",
    "ReplaySection",
    "SamplerSection",
    "StatsSection",
    "StudyConfig",
    "StudySection",
    "COMPONENTS",
    "RAINBOW_N",
    "TargetSpec",
    "VariantSpec",
]
