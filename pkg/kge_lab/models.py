from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from . import settings
from .scoring import MODEL_KINDS

LOSS_ALIASES = {
    'ns': 'ns-original',
    'ns-original': 'ns-original',
    'ns-kge': 'ns-kge',
    'sans': 'sans',
}


class LossSpec(BaseModel):
    family: Literal['ns-original', 'ns-kge', 'sans'] = 'ns-kge'
    gamma: float = Field(default=0.0, ge=0.0)
    nu: int = Field(default=1, ge=1)
    alpha: float = Field(default=1.0, gt=0.0)
    subsampling: Literal['none', 'base', 'freq', 'uniq'] = 'none'
    rescale_subsampling: bool = True

    @field_validator('family', mode='before')
    @classmethod
    def normalize_family(cls, value: Any) -> Any:
        """Accepts the short CLI spelling `ns` for the original loss."""
        if isinstance(value, str):
            return LOSS_ALIASES.get(value.strip().lower(), value)
        return value


class TrainConfig(BaseModel):
    model: str = 'distmult'
    dim: int = Field(default=50, ge=1)
    p: Optional[Literal[1, 2]] = None
    batch_size: int = Field(default=128, ge=1)
    max_steps: int = Field(default=1000, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    lr_schedule: Literal['constant', 'halve'] = 'constant'
    halve_fraction: float = Field(default=0.5, gt=0.0, le=1.0)
    seed: int = 0
    eval_every: int = Field(default=0, ge=0)
    log_every: int = Field(default=settings.LOG_EVERY, ge=1)
    loss: LossSpec = Field(default_factory=LossSpec)
    dataset_path: Optional[str] = None
    preset: Optional[str] = None

    @field_validator('model')
    @classmethod
    def check_model(cls, value: str) -> str:
        value = value.strip().lower()
        if value not in MODEL_KINDS:
            raise ValueError(f"unknown model {value!r}; expected one of {', '.join(MODEL_KINDS)}")
        return value


class EvalReport(BaseModel):
    mrr: float = Field(ge=0.0, le=1.0)
    hits1: float = Field(ge=0.0, le=1.0)
    hits3: float = Field(ge=0.0, le=1.0)
    hits10: float = Field(ge=0.0, le=1.0)
    num_queries: int = Field(ge=0)
    split: Optional[str] = None
    filtered: bool = True
    ranks: Optional[List[int]] = None

    @model_validator(mode='after')
    def check_ordering(self) -> 'EvalReport':
        if not (self.hits1 <= self.hits3 <= self.hits10):
            raise ValueError("expected hits1 <= hits3 <= hits10")
        if self.mrr + 1e-12 < self.hits1:
            raise ValueError("expected mrr >= hits1")
        return self

    def to_tsv_row(self, header: bool = False) -> str:
        """MRR and Hits@k scaled by 100, in the column order of published tables."""
        row = '\t'.join(f"{100.0 * v:.2f}" for v in (self.mrr, self.hits1, self.hits3, self.hits10))
        if header:
            return 'MRR\tHits@1\tHits@3\tHits@10\n' + row
        return row


class RunManifest(BaseModel):
    config: Dict[str, Any]
    root_seed: int
    tool_version: str
    dataset_checksums: Dict[str, str] = Field(default_factory=dict)
    started_at: datetime
    finished_at: Optional[datetime] = None
    status: Literal['running', 'completed', 'aborted'] = 'running'
