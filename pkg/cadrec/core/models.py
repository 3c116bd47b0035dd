"""Pydantic models for reports, logs and manifests."""

from pydantic import BaseModel, Field


class UserSplitCounts(BaseModel):
    """Per-user partition sizes."""

    user: str = Field(..., description="Raw user id")
    train: int = Field(..., ge=0)
    val: int = Field(..., ge=0)
    test: int = Field(..., ge=0)
    ia: int = Field(..., ge=0, description="Distinct IA items")
    fia: int = Field(..., ge=0, description="Distinct FIA items")


class SplitManifest(BaseModel):
    """Summary of a chronological split."""

    num_users: int
    num_items: int
    num_events: int
    train_events: int
    val_events: int
    test_events: int
    dropped_users: list[str] = Field(default_factory=list)
    users: list[UserSplitCounts] = Field(default_factory=list)


class MetricRow(BaseModel):
    """Recall and NDCG at one cutoff."""

    k: int = Field(..., ge=1)
    recall: float = Field(..., ge=0.0, le=1.0)
    ndcg: float = Field(..., ge=0.0, le=1.0)


class DiagnosticRow(BaseModel):
    """Embedding standard deviations of the k most and least popular items."""

    k: int = Field(..., ge=1)
    sd_top: float = Field(..., ge=0.0)
    sd_bottom: float = Field(..., ge=0.0)

    @property
    def ratio(self) -> float:
        return self.sd_top / self.sd_bottom if self.sd_bottom > 0 else float("inf")


class PopCorrelation(BaseModel):
    """Spearman correlation between mean test scores and popularity."""

    rho: float
    degenerate: bool = Field(default=False, description="Constant input, rho forced to 0")


class RankingReport(BaseModel):
    """Evaluation output: top-K lists, metric aggregates and debias diagnostics."""

    split: str = Field(default="test", description="Which held-out split was scored")
    num_users: int = Field(..., ge=0, description="Users with a non-empty relevant set")
    top_k: dict[int, list[int]] = Field(default_factory=dict, description="user -> ranked items")
    metrics: list[MetricRow] = Field(default_factory=list)
    diagnostics: list[DiagnosticRow] = Field(default_factory=list)
    pop_correlation: PopCorrelation | None = None

    def metric(self, k: int) -> MetricRow:
        for row in self.metrics:
            if row.k == k:
                return row
        raise KeyError(k)


class EpochLog(BaseModel):
    """One line of the training log."""

    epoch: int
    loss: float
    val_recall: float
    val_ndcg: float
    seconds: float


class TrainingSummary(BaseModel):
    """Outcome of a training run."""

    best_epoch: int
    best_val_ndcg: float
    epochs_run: int
    stopped_early: bool
    steps: int = 0
    rejected_steps: int = 0
    history: list[EpochLog] = Field(default_factory=list)
    test_report: RankingReport | None = None


class SweepRow(BaseModel):
    """One grid point of a hyperparameter sweep."""

    params: dict[str, float]
    recall: float
    ndcg: float
