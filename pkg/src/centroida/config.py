"""Experiment configuration: dataclasses, JSON round-trip, validation, hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

VARIANTS = ("full", "rm_resample", "rm_loss_c", "rm_loss_d", "source_only")
GAMMA_FORMS = ("sigmoid_ramp", "literal")
CENTROID_LABEL_MODES = ("classifier", "ground_truth")


@dataclass
class SyntheticSpec:
    """Gaussian-blob domain pair: K class means on a circle, target rotated.

    ``source_tail_p`` < 1 generates the source pool itself with a geometric
    class-size tail (class 0 largest), independent of any later subsampling.
    """

    k: int = 5
    dim: int = 10
    rotation_deg: float = 30.0
    translation: list[float] | None = None
    scale: float = 1.0
    separation: float = 4.0
    noise_sigma: float = 1.0
    offplane_scale: float = 0.25
    n_source_per_class: int = 150
    source_tail_p: float = 1.0
    n_target_per_class: int = 150
    n_test_per_class: int = 200


@dataclass
class CsvSpec:
    """Paths to pre-materialized CSV datasets (see data.load_csv for layout)."""

    source_train: str
    target_train: str
    target_test: str


@dataclass
class ExperimentConfig:
    """Everything one adaptation run needs; JSON-serializable and hashable.

    ``p_source`` / ``p_target`` control the geometric subsampling applied to
    each training domain, with ``source_order`` / ``target_order`` choosing
    which class gets which rank ("by_count_desc", "reversed", or an explicit
    majority-first class list).  ``seeds`` drives model init, samplers, and
    synthetic data; one full run happens per seed.
    """

    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    csv: CsvSpec | None = None
    n_classes: int | None = None

    p_source: float = 1.0
    p_target: float = 1.0
    source_order: str | list[int] = "by_count_desc"
    target_order: str | list[int] = "by_count_desc"

    hidden_dim: int = 64
    feature_dim: int = 32

    lambda_c: float = 5.0
    temperature: float = 2.0
    gamma_form: str = "sigmoid_ramp"
    source_centroid_labels: str = "classifier"

    batch_size: int = 50
    epochs: int = 50
    lr0: float = 0.005
    momentum: float = 0.9
    lr_decay: bool = True

    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    variant: str = "full"
    centroid_dump: bool = False
    out_dir: str = "runs/experiment"

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if d.get("synthetic") is not None and not isinstance(d["synthetic"], SyntheticSpec):
            d["synthetic"] = SyntheticSpec(**d["synthetic"])
        if d.get("csv") is not None and not isinstance(d["csv"], CsvSpec):
            d["csv"] = CsvSpec(**d["csv"])
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        with Path(path).open() as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config root must be a JSON object")
        return cls.from_dict(raw)

    def write_json(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form, for provenance stamping."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _check_order(name: str, order: str | list[int], problems: list[str]) -> None:
    if isinstance(order, str):
        if order not in ("by_count_desc", "reversed"):
            problems.append(
                f"{name} must be 'by_count_desc', 'reversed', or a class list, got {order!r}"
            )
    elif not all(isinstance(c, int) for c in order):
        problems.append(f"{name} permutation must contain integers, got {order!r}")


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Return a list of human-readable problems; empty means runnable."""
    problems: list[str] = []
    if (cfg.synthetic is None) == (cfg.csv is None):
        problems.append("exactly one of 'synthetic' or 'csv' must be set")
    if cfg.csv is not None and (cfg.n_classes is None or cfg.n_classes < 2):
        problems.append("csv mode requires n_classes >= 2")
    if cfg.csv is not None:
        for fname in ("source_train", "target_train", "target_test"):
            path = getattr(cfg.csv, fname)
            if not Path(path).exists():
                problems.append(f"csv.{fname} file not found: {path}")
    if cfg.synthetic is not None:
        s = cfg.synthetic
        if s.k < 2:
            problems.append(f"synthetic.k must be >= 2, got {s.k}")
        if s.dim < 2:
            problems.append(f"synthetic.dim must be >= 2, got {s.dim}")
        if s.scale == 0.0:
            problems.append("synthetic.scale = 0 is a rank-zero covariate shift")
        if s.noise_sigma <= 0:
            problems.append(f"synthetic.noise_sigma must be > 0, got {s.noise_sigma}")
        if not 0.0 < s.source_tail_p <= 1.0:
            problems.append(f"synthetic.source_tail_p must be in (0, 1], got {s.source_tail_p}")
        for fname in ("n_source_per_class", "n_target_per_class", "n_test_per_class"):
            if getattr(s, fname) < 1:
                problems.append(f"synthetic.{fname} must be >= 1")
    for fname in ("p_source", "p_target"):
        v = getattr(cfg, fname)
        if not 0.0 < v <= 1.0:
            problems.append(f"{fname} must be in (0, 1], got {v}")
    _check_order("source_order", cfg.source_order, problems)
    _check_order("target_order", cfg.target_order, problems)
    if cfg.variant not in VARIANTS:
        problems.append(f"variant must be one of {VARIANTS}, got {cfg.variant!r}")
    if cfg.gamma_form not in GAMMA_FORMS:
        problems.append(f"gamma_form must be one of {GAMMA_FORMS}, got {cfg.gamma_form!r}")
    if cfg.source_centroid_labels not in CENTROID_LABEL_MODES:
        problems.append(
            f"source_centroid_labels must be one of {CENTROID_LABEL_MODES}, "
            f"got {cfg.source_centroid_labels!r}"
        )
    if cfg.lambda_c < 0:
        problems.append(f"lambda_c must be >= 0, got {cfg.lambda_c}")
    if cfg.temperature <= 0:
        problems.append(f"temperature must be > 0, got {cfg.temperature}")
    if cfg.batch_size < 1:
        problems.append(f"batch_size must be >= 1, got {cfg.batch_size}")
    if cfg.epochs < 1:
        problems.append(f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.lr0 <= 0:
        problems.append(f"lr0 must be > 0, got {cfg.lr0}")
    if not 0.0 <= cfg.momentum < 1.0:
        problems.append(f"momentum must be in [0, 1), got {cfg.momentum}")
    if cfg.hidden_dim < 1 or cfg.feature_dim < 1:
        problems.append("hidden_dim and feature_dim must be >= 1")
    if not cfg.seeds:
        problems.append("seeds must be a non-empty list")
    elif not all(isinstance(s, int) for s in cfg.seeds):
        problems.append(f"seeds must be integers, got {cfg.seeds!r}")
    return problems
