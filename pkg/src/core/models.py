from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

VARIANTS = ("dtdnn-baseline", "dkconv", "local-ms", "global-local-ms")
Variant = Literal["dtdnn-baseline", "dkconv", "local-ms", "global-local-ms"]


def _split_list(value):
    """Accept comma separated text for list fields read from key=value files"""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: Variant = Field("global-local-ms", description="Which of the three mechanisms are active")
    input_dim: int = Field(67, ge=1, description="Feature channels per frame (64 cepstral + 3 pitch)")
    init_channels: int = Field(256, ge=1, description="Width of the first TDNN layer")
    filters: int = Field(64, ge=1, description="Growth rate G of every D-TDNN layer")
    bottleneck: int = Field(128, ge=1, description="Bottleneck width B of plain and DkConv D-TDNN layers")
    kernel_size: int = Field(3, ge=1)
    block_sizes: List[int] = Field(default_factory=lambda: [6, 12])
    first_context: int = Field(5, ge=1, description="Context half-width of the first TDNN layer")
    narrow_context: int = Field(3, ge=1, description="Context half-width of the early D-TDNN layers")
    wide_context: int = Field(5, ge=1, description="Context half-width of the last wide_tail_layers layers")
    wide_tail_layers: int = Field(6, ge=0)
    scale_groups: int = Field(4, ge=1, description="Split count s of local multi-scale learning")
    reduction: int = Field(4, ge=1, description="Reduction ratio r of the DkConv attention")
    embedding_dim: int = Field(512, ge=1)
    num_classes: int = Field(16, ge=2)
    head_loss: Literal["aam", "softmax"] = "aam"
    aam_margin: float = Field(0.2, ge=0.0)
    aam_scale: float = Field(30.0, gt=0.0)
    global_taps: List[str] = Field(default_factory=lambda: ["transit1", "transit2"])
    bn_momentum: float = Field(0.99, ge=0.0, lt=1.0)
    bn_epsilon: float = Field(1e-5, gt=0.0)

    @field_validator("block_sizes", "global_taps", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split_list(value)

    @field_validator("kernel_size")
    @classmethod
    def kernel_must_be_odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {value}")
        return value

    @field_validator("block_sizes")
    @classmethod
    def blocks_positive(cls, value: List[int]) -> List[int]:
        if not value or any(size < 1 for size in value):
            raise ValueError("block_sizes needs at least one positive entry")
        return value

    @model_validator(mode="after")
    def check_combinations(self) -> "ModelConfig":
        for name in ("first_context", "narrow_context", "wide_context"):
            self.dilation_for(getattr(self, name), name)
        if self.wide_tail_layers > self.total_layers:
            raise ValueError(f"wide_tail_layers={self.wide_tail_layers} exceeds the {self.total_layers} D-TDNN layers")
        if self.uses_multiscale:
            if self.filters % self.scale_groups:
                raise ValueError(f"filters={self.filters} not divisible by scale_groups={self.scale_groups}")
            group = self.filters // self.scale_groups
            if self.scale_groups > 1 and group % self.reduction:
                raise ValueError(f"group width {group} not divisible by reduction={self.reduction}")
        elif self.uses_dkconv and self.filters % self.reduction:
            raise ValueError(f"filters={self.filters} not divisible by reduction={self.reduction}")
        if self.uses_global_pool:
            valid = {f"transit{i + 1}" for i in range(len(self.block_sizes))}
            unknown = [tap for tap in self.global_taps if tap not in valid]
            if unknown or len(self.global_taps) != 2 or len(set(self.global_taps)) != 2:
                raise ValueError(f"global_taps must name two distinct layers out of {sorted(valid)}, got {self.global_taps}")
        return self

    def dilation_for(self, half_width: int, what: str = "context") -> int:
        reach = (self.kernel_size - 1) // 2
        if reach == 0:
            return 1
        if half_width % reach:
            raise ValueError(f"{what}={half_width} is not a multiple of the kernel reach {reach}")
        return half_width // reach

    @property
    def total_layers(self) -> int:
        return sum(self.block_sizes)

    @property
    def uses_dkconv(self) -> bool:
        return self.variant != "dtdnn-baseline"

    @property
    def uses_multiscale(self) -> bool:
        return self.variant in ("local-ms", "global-local-ms")

    @property
    def uses_global_pool(self) -> bool:
        return self.variant == "global-local-ms"


class BatchSpec(BaseModel):
    languages_per_batch: int = Field(16, ge=1)
    segment_len_min_frames: int = Field(200, ge=1)
    segment_len_max_frames: int = Field(400, ge=1)

    @model_validator(mode="after")
    def check_range(self) -> "BatchSpec":
        if self.segment_len_min_frames > self.segment_len_max_frames:
            raise ValueError("segment_len_min_frames exceeds segment_len_max_frames")
        return self


class TrainingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_data: str = Field("", description="DMSF file with the training corpus")
    out_dir: str = "runs/train"
    seed: int = 0
    learning_rate: float = Field(0.01, gt=0.0)
    l2: float = Field(1e-4, ge=0.0)
    lr_decay_factor: float = Field(0.5, gt=0.0, lt=1.0)
    plateau_patience_steps: int = Field(2000, ge=1)
    plateau_smoothing: float = Field(0.98, ge=0.0, lt=1.0, description="EMA factor of the loss tracked for plateaus")
    lr_floor: float = Field(1e-6, gt=0.0)
    max_steps: int = Field(20000, ge=1)
    languages_per_batch: int = Field(16, ge=1)
    segment_len_min_frames: int = Field(200, ge=1)
    segment_len_max_frames: int = Field(400, ge=1)
    mean_norm_window_frames: int = Field(300, ge=0, description="0 disables sliding mean normalisation")
    log_every_steps: int = Field(100, ge=1)
    checkpoint_every_steps: int = Field(1000, ge=1)

    @model_validator(mode="after")
    def check_range(self) -> "TrainingConfig":
        self.batch_spec()
        return self

    def batch_spec(self) -> BatchSpec:
        return BatchSpec(
            languages_per_batch=self.languages_per_batch,
            segment_len_min_frames=self.segment_len_min_frames,
            segment_len_max_frames=self.segment_len_max_frames,
        )


class TrainingState(BaseModel):
    """Optimizer and schedule state carried inside checkpoints"""
    step: int = 0
    learning_rate: float = 0.01
    best_loss: Optional[float] = None
    smoothed_loss: Optional[float] = None
    plateau_steps: int = 0
    seed: int = 0
    mean_norm_window_frames: int = Field(0, ge=0, description="Normalisation window the network was trained with")


class SyntheticCorpusSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_languages: int = Field(6, ge=2)
    utterances_per_language: int = Field(50, ge=1)
    frames_min: int = Field(200, ge=1)
    frames_max: int = Field(400, ge=1)
    channels: int = Field(67, ge=1)
    noise_level: float = Field(0.5, ge=0.0)
    signature_scale: float = Field(1.0, gt=0.0)
    ar_pole_radius: float = Field(0.9, gt=0.0, lt=1.0)
    pole_angles: Optional[List[float]] = Field(None, description="Explicit AR pole angle per language (radians)")
    test_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    seed: int = 0

    @field_validator("pole_angles", mode="before")
    @classmethod
    def split_angles(cls, value):
        return _split_list(value)

    @model_validator(mode="after")
    def check_spec(self) -> "SyntheticCorpusSpec":
        if self.frames_min > self.frames_max:
            raise ValueError("frames_min exceeds frames_max")
        if self.pole_angles is not None and len(self.pole_angles) != self.num_languages:
            raise ValueError(f"pole_angles lists {len(self.pole_angles)} values for {self.num_languages} languages")
        return self

    def language_names(self) -> List[str]:
        return [f"lang{i:02d}" for i in range(self.num_languages)]


class FeatureSequence(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    features: np.ndarray = Field(..., description="[channels x frames] float64")
    label: int = Field(..., description="Language id")
    utt_id: str

    @field_validator("features", mode="before")
    @classmethod
    def as_feature_matrix(cls, value) -> np.ndarray:
        array = np.ascontiguousarray(value, dtype=np.float64)
        if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
            raise ValueError(f"features must be a non-empty [channels x frames] matrix, got shape {list(array.shape)}")
        if not np.all(np.isfinite(array)):
            raise ValueError("features contain NaN or Inf")
        return array

    @property
    def channels(self) -> int:
        return self.features.shape[0]

    @property
    def frames(self) -> int:
        return self.features.shape[1]


class ScoreTable(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    scores: np.ndarray = Field(..., description="[utterances x languages]")
    truth: np.ndarray = Field(..., description="Column index of the true language per utterance")
    lang_names: List[str]
    utt_ids: List[str] = Field(default_factory=list)

    @field_validator("scores", mode="before")
    @classmethod
    def as_score_matrix(cls, value) -> np.ndarray:
        array = np.asarray(value, dtype=np.float64)
        if array.ndim != 2:
            raise ValueError(f"scores must be [utterances x languages], got shape {list(array.shape)}")
        if np.any(np.isnan(array)):
            raise ValueError("scores contain NaN")
        return array

    @field_validator("truth", mode="before")
    @classmethod
    def as_labels(cls, value) -> np.ndarray:
        return np.asarray(value, dtype=np.int64).reshape(-1)

    @model_validator(mode="after")
    def check_consistency(self) -> "ScoreTable":
        utts, langs = self.scores.shape
        if len(self.truth) != utts:
            raise ValueError(f"{len(self.truth)} truth labels for {utts} score rows")
        if len(self.lang_names) != langs:
            raise ValueError(f"{len(self.lang_names)} language names for {langs} score columns")
        if utts and (self.truth.min() < 0 or self.truth.max() >= langs):
            raise ValueError("truth label outside the score columns")
        if not self.utt_ids:
            self.utt_ids = [f"utt{i:05d}" for i in range(utts)]
        elif len(self.utt_ids) != utts:
            raise ValueError(f"{len(self.utt_ids)} utterance ids for {utts} score rows")
        return self

    @property
    def num_langs(self) -> int:
        return self.scores.shape[1]

    def restrict(self, languages: List[str]) -> "ScoreTable":
        """Keep the named columns, drop utterances of other languages, renormalise rows to sum to 1"""
        missing = [name for name in languages if name not in self.lang_names]
        if missing:
            raise ValueError(f"unknown languages: {', '.join(missing)}")
        columns = [self.lang_names.index(name) for name in languages]
        keep = np.isin(self.truth, columns)
        scores = self.scores[keep][:, columns]
        totals = scores.sum(axis=1, keepdims=True)
        scores = scores / np.where(totals > 0, totals, 1.0)
        remap = {old: new for new, old in enumerate(columns)}
        truth = np.array([remap[t] for t in self.truth[keep]], dtype=np.int64)
        utt_ids = [u for u, k in zip(self.utt_ids, keep) if k]
        return ScoreTable(scores=scores, truth=truth, lang_names=list(languages), utt_ids=utt_ids)


class PairCost(BaseModel):
    target: str
    nontarget: str
    p_miss: float
    p_fa: float
    cost: float


class MetricReport(BaseModel):
    cavg: float = Field(..., ge=0.0, le=1.0)
    eer: float = Field(..., description="Equal error rate in percent")
    eer_threshold: float
    pair_costs: List[PairCost]
    languages: List[str]
    num_utterances: int

    def cost_matrix(self) -> Dict[str, Dict[str, float]]:
        matrix: Dict[str, Dict[str, float]] = {t: {} for t in self.languages}
        for pair in self.pair_costs:
            matrix[pair.target][pair.nontarget] = pair.cost
        return matrix


class ParamRow(BaseModel):
    name: str
    count: int


class ParamReport(BaseModel):
    variant: str
    total: int
    rows: List[ParamRow]
