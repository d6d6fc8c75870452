"""Typed options of every subcommand; the CLI merges config-file values and flags into these."""
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, DirectoryPath, Field, FilePath

from matting.modelgraph.accounting import ATTENTION_COMPONENTS
from matting.synth import CROP_MODES, TRAIN_PER_FG
from matting.trainkit import ToyTaskConfig
from matting.trimap import SOFTSEG_SEQUENCES

MAX_SEED = 2 ** 64 - 1


class _Options(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RunConfig(BaseModel):
    """One CLI invocation: the subcommand, its seed and its merged options."""
    model_config = ConfigDict(extra="forbid")

    subcommand: str
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    tool_version: str
    options: dict = Field(default_factory=dict)


class SynthOptions(_Options):
    fg_dir: DirectoryPath
    alpha_dir: DirectoryPath
    bg_dir: DirectoryPath
    out_dir: Path
    per_fg: int = Field(default=TRAIN_PER_FG, ge=1)
    crop_mode: Literal[CROP_MODES] = "center"
    threads: Optional[int] = Field(default=None, ge=1)


class TrimapOptions(_Options):
    # alpha mattes for gt/random, encoded trimaps for softseg/softseg-infer, binary masks for pseudo
    input_dir: DirectoryPath
    out_dir: Path
    mode: Literal["gt", "random", "softseg", "softseg-infer", "pseudo"] = "gt"
    erosion: Optional[int] = Field(default=None, ge=0)
    sequence: Literal[SOFTSEG_SEQUENCES] = "open"
    sigma: Optional[float] = Field(default=None, gt=0.0)
    fg_px: int = Field(default=15, ge=0)
    bg_px: int = Field(default=50, ge=0)
    softseg: bool = False
    threads: Optional[int] = Field(default=None, ge=1)


class EvalOptions(_Options):
    pred_dir: DirectoryPath
    gt_dir: DirectoryPath
    trimap_dir: Optional[DirectoryPath] = None
    whole_image: bool = False
    kind: Literal["alpha", "trimap"] = "alpha"
    out: Path


class FuseOptions(_Options):
    alpha_dir: DirectoryPath
    # encoded trimaps or 3-channel (B, U, F) probability images
    guide_dir: DirectoryPath
    mode: Literal["soft-a", "soft-b", "hard"] = "soft-a"
    out_dir: Path


class AccountOptions(_Options):
    graph: FilePath
    input_shape: Optional[Tuple[int, int, int]] = None
    out: Optional[Path] = None
    csv: Optional[Path] = None


class SearchOptions(_Options):
    target_params: int = Field(default=25984, ge=1)
    target_gflops: Optional[float] = Field(default=0.1416, gt=0.0)
    input_shape: Tuple[int, int, int] = (64, 64, 128)
    r: int = Field(default=4, ge=1)
    components: Optional[List[Literal[ATTENTION_COMPONENTS]]] = None
    limit: int = Field(default=10, ge=0)
    out: Optional[Path] = None


class AttendOptions(_Options):
    image_feature: FilePath
    alpha_feature: FilePath
    # MTF1 [H, W] tensor or grayscale PNG; values >= 0.5 are unknown
    unknown: FilePath
    query: Tuple[int, int]
    out: Path
    out_feature: Optional[Path] = None
    weights_dir: Optional[DirectoryPath] = None
    r: int = Field(default=4, ge=1)
    e: Optional[int] = Field(default=None, ge=1)
    kernel: Optional[int] = Field(default=None, ge=1)
    g_out: Optional[int] = Field(default=None, ge=1)


class GradcheckOptions(_Options):
    seeds: int = Field(default=20, ge=1)
    h: float = Field(default=1e-6, ge=1e-7, le=1e-5)
    tolerance: float = Field(default=1e-4, gt=0.0)
    primitives: Optional[List[str]] = None
    corrupt: Optional[str] = None
    out: Optional[Path] = None


class TrainToyOptions(ToyTaskConfig):
    model_config = ConfigDict(extra="forbid")

    out: Optional[Path] = None
    log_every: int = Field(default=0, ge=0)

    def task_config(self, seed: int) -> ToyTaskConfig:
        values = self.model_dump(exclude={"out", "log_every"})
        values["seed"] = seed
        return ToyTaskConfig(**values)


OPTIONS = {
    "synth": SynthOptions,
    "trimap": TrimapOptions,
    "eval": EvalOptions,
    "fuse": FuseOptions,
    "account": AccountOptions,
    "search": SearchOptions,
    "attend": AttendOptions,
    "gradcheck": GradcheckOptions,
    "train-toy": TrainToyOptions,
}
