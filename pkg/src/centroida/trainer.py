"""The training loop: balanced resampling, per-epoch centroid reset, loss assembly.

Each iteration, in order: draw one class-balanced source batch and one uniform
target batch, forward both, calibrate probabilities, fold both batches into
the per-domain centroid stores, then assemble

    total = CE(source) + lambda * centroid_loss + gamma(alpha) * class_wise_loss

and take one momentum-SGD step at the scheduled learning rate.  gamma ramps
from 0 to ~1 over global training progress alpha, so pair-level alignment only
kicks in once pseudo-labels have stabilized; the centroid stores reset at
every epoch start.  Target labels are never read anywhere in this module.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
import torch.nn.functional as F

from .alignment import PairAssignment, class_wise_loss, pairwise_distances
from .calibration import ProbBatch
from .centroids import CentroidsNotReady, CentroidStore, centroid_alignment_loss, nearest_centroid_labels
from .config import VARIANTS, ExperimentConfig
from .data import (
    CovariateShift,
    CsvSchema,
    DomainTag,
    ImbalanceSpec,
    LabeledDataset,
    apply_sampling_protocol,
    class_balanced_sampler,
    geometric_class_counts,
    load_csv,
    make_synthetic_pair,
    make_synthetic_target_test,
    uniform_sampler,
)
from .eval import MetricsReport, evaluate
from .model import BottleneckClassifier, MomentumSGD, lr_schedule, save_checkpoint


class TrainingAborted(RuntimeError):
    """Raised when the objective goes non-finite; message names the component."""


def gamma_schedule(alpha: float, form: str = "sigmoid_ramp") -> float:
    """Weight of the class-wise alignment term as training progresses.

    The default ``sigmoid_ramp`` form 2/(1 + exp(-10*alpha)) - 1 rises from 0
    to ~1, deferring pair-level alignment until predictions are trustworthy.
    The ``literal`` form 2*exp(10*alpha) - 1 grows explosively and exists only
    for comparison runs.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if form == "sigmoid_ramp":
        return 2.0 / (1.0 + math.exp(-10.0 * alpha)) - 1.0
    if form == "literal":
        return 2.0 * math.exp(10.0 * alpha) - 1.0
    raise ValueError(f"unknown gamma_form {form!r}")


@dataclass
class _VariantFlags:
    balanced_source: bool
    use_loss_c: bool
    use_loss_d: bool
    use_target: bool


_FLAGS = {
    "full": _VariantFlags(True, True, True, True),
    "rm_resample": _VariantFlags(False, True, True, True),
    "rm_loss_c": _VariantFlags(True, False, True, True),
    "rm_loss_d": _VariantFlags(True, True, False, True),
    "source_only": _VariantFlags(True, False, False, False),
}
assert set(_FLAGS) == set(VARIANTS)


@dataclass
class LossRecord:
    iteration: int
    ce: float
    loss_c: float
    loss_d: float
    total: float


@dataclass
class TrainState:
    """Everything mutable across epochs for one training run."""

    model: BottleneckClassifier
    optimizer: MomentumSGD
    src_store: CentroidStore
    tgt_store: CentroidStore
    source_rng: np.random.Generator
    target_rng: np.random.Generator
    total_iterations: int
    variant: str = "full"
    epoch: int = 0
    iteration: int = 0
    alpha: float = 0.0
    loss_trace: list[LossRecord] = field(default_factory=list)
    centroid_rows: list[list] = field(default_factory=list)


def _resolve_order(order: str | list[int], k: int) -> str | tuple[int, ...]:
    if order == "reversed":
        return tuple(range(k - 1, -1, -1))
    if isinstance(order, str):
        return order
    return tuple(int(c) for c in order)


def _derived_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def prepare_datasets(
    cfg: ExperimentConfig, seed: int
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Materialize (source_train, target_train, target_test) for one seed.

    Synthetic mode generates the Gaussian pair plus a held-out balanced target
    test split; CSV mode loads the three files.  Both training domains then go
    through the geometric subsampling protocol with their own p and rank
    order (p = 1 keeps counts unchanged).  The test split is never subsampled.
    """
    if cfg.synthetic is not None:
        s = cfg.synthetic
        shift = CovariateShift(
            rotation_deg=s.rotation_deg,
            translation=tuple(s.translation) if s.translation else None,
            scale=s.scale,
        )
        if s.source_tail_p < 1.0:
            src_counts = geometric_class_counts(s.n_source_per_class, s.source_tail_p, s.k)
        else:
            src_counts = s.n_source_per_class
        src, tgt = make_synthetic_pair(
            s.k, s.dim, shift, seed,
            n_source_per_class=src_counts,
            n_target_per_class=s.n_target_per_class,
            noise_sigma=s.noise_sigma,
            separation=s.separation,
            offplane_scale=s.offplane_scale,
        )
        test = make_synthetic_target_test(
            s.k, s.dim, shift, seed,
            n_per_class=s.n_test_per_class,
            noise_sigma=s.noise_sigma,
            separation=s.separation,
            offplane_scale=s.offplane_scale,
        )
        k = s.k
    else:
        if cfg.csv is None:
            raise ValueError("config has neither synthetic nor csv data")
        if cfg.n_classes is None:
            raise ValueError("csv mode requires n_classes")
        k = cfg.n_classes
        src = load_csv(cfg.csv.source_train, CsvSchema(k, DomainTag.SOURCE))
        tgt = load_csv(cfg.csv.target_train, CsvSchema(k, DomainTag.TARGET))
        test = load_csv(cfg.csv.target_test, CsvSchema(k, DomainTag.TARGET))
    src = apply_sampling_protocol(
        src, ImbalanceSpec(cfg.p_source, _derived_seed(seed, 101), _resolve_order(cfg.source_order, k))
    )
    tgt = apply_sampling_protocol(
        tgt, ImbalanceSpec(cfg.p_target, _derived_seed(seed, 102), _resolve_order(cfg.target_order, k))
    )
    return src, tgt, test


def init_state(
    src_train: LabeledDataset, cfg: ExperimentConfig, seed: int, variant: str | None = None
) -> TrainState:
    variant = cfg.variant if variant is None else variant
    if variant not in _FLAGS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    model = BottleneckClassifier(
        src_train.n_features, cfg.hidden_dim, cfg.feature_dim, src_train.n_classes, seed=seed
    )
    iters_per_epoch = math.ceil(len(src_train) / cfg.batch_size)
    return TrainState(
        model=model,
        optimizer=MomentumSGD(model.named_parameters(), cfg.lr0, cfg.momentum),
        src_store=CentroidStore(src_train.n_classes, cfg.feature_dim),
        tgt_store=CentroidStore(src_train.n_classes, cfg.feature_dim),
        source_rng=np.random.default_rng([seed, 11]),
        target_rng=np.random.default_rng([seed, 23]),
        total_iterations=cfg.epochs * iters_per_epoch,
        variant=variant,
    )


def _component_name(ce: float, lc: float, ld: float) -> str:
    for name, val in (("ce", ce), ("loss_c", lc), ("loss_d", ld)):
        if not math.isfinite(val):
            return name
    return "total"


def train_epoch(
    state: TrainState,
    src_train: LabeledDataset,
    tgt_train: LabeledDataset | None,
    cfg: ExperimentConfig,
) -> TrainState:
    """Run one epoch; mutates and returns ``state``.

    Both centroid stores are zeroed at entry.  The source stream is
    class-balanced (uniform under rm_resample) and fixes the epoch length at
    ceil(N_source / B) batches; the target stream is uniform and paced to the
    same length.  Iteration steps, in order: sample, forward, calibrate,
    store updates, losses, backprop, SGD step at the scheduled rate.
    """
    flags = _FLAGS[state.variant]
    state.src_store.reset()
    state.tgt_store.reset()
    iters_per_epoch = math.ceil(len(src_train) / cfg.batch_size)
    if flags.balanced_source:
        src_stream: Iterator[np.ndarray] = class_balanced_sampler(
            src_train, cfg.batch_size, state.source_rng
        )
    else:
        src_stream = uniform_sampler(
            src_train, cfg.batch_size, state.source_rng, n_batches=iters_per_epoch
        )
    tgt_stream: Iterator[np.ndarray] | None = None
    if flags.use_target:
        if tgt_train is None:
            raise ValueError(f"variant {state.variant!r} needs a target dataset")
        tgt_stream = uniform_sampler(
            tgt_train, cfg.batch_size, state.target_rng, n_batches=iters_per_epoch
        )
    lam = cfg.lambda_c if flags.use_loss_c else 0.0

    src_feats = src_train.features
    src_labels = src_train.labels
    for src_idx in src_stream:
        alpha = state.iteration / state.total_iterations
        gamma = gamma_schedule(alpha, cfg.gamma_form) if flags.use_loss_d else 0.0
        lr = lr_schedule(alpha, cfg.lr0) if cfg.lr_decay else cfg.lr0

        xs = torch.from_numpy(src_feats[src_idx])
        ys = torch.from_numpy(src_labels[src_idx])
        fs, zs = state.model(xs)
        if not torch.isfinite(zs).all():
            raise TrainingAborted(
                f"non-finite source logits at iteration {state.iteration} (diverged forward pass)"
            )
        ce = F.cross_entropy(zs, ys)
        ce_val = float(ce.detach())
        lc_val = 0.0
        ld_val = 0.0
        total = ce

        if tgt_stream is not None:
            xt = torch.from_numpy(tgt_train.features[next(tgt_stream)])
            ft, zt = state.model(xt)
            if not torch.isfinite(zt).all():
                raise TrainingAborted(
                    f"non-finite target logits at iteration {state.iteration} (diverged forward pass)"
                )
            probs_s = ProbBatch.from_logits(zs, cfg.temperature)
            probs_t = ProbBatch.from_logits(zt, cfg.temperature)
            pred_s = zs.detach().argmax(dim=1)
            pred_t = zt.detach().argmax(dim=1)
            store_labels_s = ys if cfg.source_centroid_labels == "ground_truth" else pred_s
            state.src_store.update(fs, probs_s.max_prob, store_labels_s)
            state.tgt_store.update(ft, probs_t.max_prob, pred_t)
            if lam != 0.0:
                lc = centroid_alignment_loss(state.src_store, state.tgt_store)
                if lc is not None:
                    lc_val = float(lc.detach())
                    total = total + lam * lc
            if gamma != 0.0:
                try:
                    corrected_t = nearest_centroid_labels(state.tgt_store, ft)
                except CentroidsNotReady:
                    corrected_t = pred_t
                assign = PairAssignment(
                    source_labels=pred_s,
                    target_labels=corrected_t,
                    source_weights=probs_s.weight,
                    target_weights=probs_t.weight,
                    dist=pairwise_distances(fs, ft),
                )
                ld = class_wise_loss(assign)
                if ld is not None:
                    ld_val = float(ld.detach())
                    total = total + gamma * ld

        total_val = float(total.detach())
        if not math.isfinite(total_val):
            raise TrainingAborted(
                f"non-finite loss component '{_component_name(ce_val, lc_val, ld_val)}' at "
                f"iteration {state.iteration} "
                f"(ce={ce_val}, loss_c={lc_val}, loss_d={ld_val})"
            )
        state.optimizer.zero_grad()
        total.backward()
        state.optimizer.step(lr=lr)
        state.loss_trace.append(
            LossRecord(state.iteration, ce_val, lc_val, ld_val, total_val)
        )
        state.iteration += 1
        state.alpha = state.iteration / state.total_iterations

    state.epoch += 1
    if cfg.centroid_dump:
        for tag, store in (("source", state.src_store), ("target", state.tgt_store)):
            c = store.centroids.detach().numpy()
            w = store.acc_weight.detach().numpy()
            for k in range(store.n_classes):
                state.centroid_rows.append(
                    [tag, state.epoch, k, float(w[k])] + [float(v) for v in c[k]]
                )
    return state


def run_training(
    src_train: LabeledDataset,
    tgt_train: LabeledDataset | None,
    cfg: ExperimentConfig,
    seed: int,
    variant: str | None = None,
) -> TrainState:
    """Train one model for ``cfg.epochs`` epochs and return the final state."""
    state = init_state(src_train, cfg, seed, variant)
    for _ in range(cfg.epochs):
        train_epoch(state, src_train, tgt_train, cfg)
    return state


def write_loss_trace(trace: list[LossRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["iter,ce,loss_c,loss_d,total"]
    for r in trace:
        lines.append(f"{r.iteration},{r.ce!r},{r.loss_c!r},{r.loss_d!r},{r.total!r}")
    path.write_text("\n".join(lines) + "\n")


def _write_centroid_dump(state: TrainState, path: Path) -> None:
    feat_cols = ",".join(f"c{i}" for i in range(state.src_store.feat_dim))
    lines = [f"domain,epoch,class,acc_weight,{feat_cols}"]
    for row in state.centroid_rows:
        lines.append(",".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def run_ablation(
    cfg: ExperimentConfig,
    variant: str | None = None,
    seed: int | None = None,
    run_dir: str | Path | None = None,
) -> MetricsReport:
    """Train one variant for one seed and evaluate on the target test split.

    ``variant`` defaults to the config's; ``seed`` to the first entry of
    ``cfg.seeds``.  When ``run_dir`` is given, writes metrics JSON, confusion
    CSV, loss-trace CSV, the final checkpoint, and (if enabled) the per-epoch
    centroid dump into it.
    """
    variant = cfg.variant if variant is None else variant
    if variant not in _FLAGS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    seed = cfg.seeds[0] if seed is None else seed
    t0 = time.perf_counter()
    src_train, tgt_train, tgt_test = prepare_datasets(cfg, seed)
    state = run_training(src_train, tgt_train, cfg, seed, variant)
    report = evaluate(
        state.model,
        tgt_test,
        metadata={
            "config_hash": cfg.config_hash(),
            "seed": seed,
            "variant": variant,
            "wall_clock_s": None,
        },
    )
    report.run_metadata["wall_clock_s"] = round(time.perf_counter() - t0, 3)
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        report.write_json(run_dir / f"metrics_seed{seed}.json")
        report.write_confusion_csv(run_dir / f"confusion_seed{seed}.csv")
        write_loss_trace(state.loss_trace, run_dir / f"loss_trace_seed{seed}.csv")
        save_checkpoint(state.model, run_dir / f"checkpoint_seed{seed}.npz")
        if cfg.centroid_dump:
            _write_centroid_dump(state, run_dir / f"centroids_seed{seed}.csv")
    return report
