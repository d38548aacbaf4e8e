import json
import logging
from typing import Dict, List, Literal, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, Field, field_validator

logger = logging.getLogger(__name__)


class EvalReport(BaseModel):
    """Per-class and macro-averaged Dice of one evaluation set.

    ``per_class_dsc`` keeps palette order; ``None`` marks a class absent from every image.
    """

    per_class_dsc: Dict[str, Optional[float]] = Field(..., description="Class name to DSC in [0, 1]")
    mean_dsc: float = Field(..., ge=0.0, le=1.0, description="Unweighted mean of the present classes")
    n_images: int = Field(..., ge=0)
    per_image_mean_dsc: List[Optional[float]] = Field(default_factory=list, description="Pairing unit of the paired test")

    @field_validator("per_class_dsc")
    @classmethod
    def _in_unit_interval(cls, values: Dict[str, Optional[float]]) -> Dict[str, Optional[float]]:
        for name, value in values.items():
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"DSC of {name} outside [0, 1]: {value}")
        return values

    def to_frame(self, short_names: Optional[Sequence[str]] = None, label: Optional[str] = None) -> pd.DataFrame:
        """One-row table in percent, columns in palette order followed by ``Avg.``"""
        names = list(short_names) if short_names is not None else list(self.per_class_dsc)
        if len(names) != len(self.per_class_dsc):
            raise ValueError(f"{len(names)} column names for {len(self.per_class_dsc)} classes")
        row = {}
        if label is not None:
            row["Model"] = label
        for column, value in zip(names, self.per_class_dsc.values()):
            row[column] = None if value is None else round(100.0 * value, 2)
        row["Avg."] = round(100.0 * self.mean_dsc, 2)
        return pd.DataFrame([row])

    def to_tsv(self, short_names: Optional[Sequence[str]] = None, label: Optional[str] = None) -> str:
        return self.to_frame(short_names, label).to_csv(sep="\t", index=False, na_rep="--")

    def to_text(self) -> str:
        return json.dumps(self.model_dump(), indent=2)


class PairedTestResult(BaseModel):
    statistic: float = Field(..., ge=0.0, description="W = min(W+, W-)")
    p_value: float = Field(..., ge=0.0, le=1.0, description="Two-sided p-value")
    effect_size_r: float = Field(..., ge=0.0, le=1.0, description="|Z| / sqrt(n_pairs)")
    z_score: float = Field(..., description="Normal-approximation Z of W")
    n_pairs: int = Field(..., ge=1, description="Pairs with a nonzero difference")
    method: Literal["exact", "normal"]
