"""Teacher training and student distillation."""

from __future__ import annotations

from dataclasses import dataclass, field
from json import dumps
from logging import getLogger
from math import inf, isfinite, isinf
from pathlib import Path
from typing import Any

from cfgenvy import YamlMapping

from .checkpoint import Checkpoint, save_checkpoint
from .corpus import Batch, Corpus, PatchStream, prefetch
from .distill import (
    DistillConfig,
    DistillPlan,
    StepOutputs,
    build_plan,
    total_loss,
)
from .evaluate import BicubicModel, evaluate
from .model import Model, ModelConfig, build_model
from .optim import (
    AdamState,
    DivergenceError,
    adam_step,
    clip_grad_norm,
    lr_at,
)
from .tensor import Tape, no_grad, zero_grad
from .utils import ConfigError, profile

logger = getLogger(__name__)

TERMS = ("sr", "distill", "fft")


class TrainConfig(YamlMapping):  # pylint: disable=R0902
    """Optimizer, schedule and sampling."""

    YAML = "!train_config"

    def __init__(  # pylint: disable=too-many-arguments,too-many-locals
        self,
        *,
        lr: float = 1e-4,
        halve_at_epoch: int = 150,
        epochs: int = 300,
        batch_size: int = 16,
        beta1: float = 0.9,
        beta2: float = 0.99,
        epsilon: float = 1e-8,
        seed: int = 0,
        steps_per_epoch: int = 10,
        patch_size: int = 48,
        clip_grad_norm: float | None = None,
        prefetch_depth: int = 2,
    ):
        """__init__."""
        self.lr = lr
        self.halve_at_epoch = halve_at_epoch
        self.epochs = epochs
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.seed = seed
        self.steps_per_epoch = steps_per_epoch
        self.patch_size = patch_size
        self.clip_grad_norm = clip_grad_norm
        self.prefetch_depth = prefetch_depth

    def as_yaml(self) -> dict[str, Any]:
        """As yaml."""
        return {
            "batch_size": self.batch_size,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "clip_grad_norm": self.clip_grad_norm,
            "epochs": self.epochs,
            "epsilon": self.epsilon,
            "halve_at_epoch": self.halve_at_epoch,
            "lr": self.lr,
            "patch_size": self.patch_size,
            "prefetch_depth": self.prefetch_depth,
            "seed": self.seed,
            "steps_per_epoch": self.steps_per_epoch,
        }

    def validate(self) -> None:
        """Raise ConfigError on the first invalid field."""
        if not self.lr > 0:
            raise ConfigError("lr must be > 0", "lr")
        if not 0 < self.halve_at_epoch <= self.epochs:
            raise ConfigError(
                "need 0 < halve_at_epoch <= epochs", "halve_at_epoch"
            )
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", "batch_size")
        if self.steps_per_epoch < 1:
            raise ConfigError(
                "steps_per_epoch must be >= 1", "steps_per_epoch"
            )
        if self.patch_size < 1:
            raise ConfigError("patch_size must be >= 1", "patch_size")
        for key in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, key) < 1.0:
                raise ConfigError(f"{key} must be in [0, 1)", key)
        if self.clip_grad_norm is not None and self.clip_grad_norm <= 0:
            raise ConfigError("clip_grad_norm must be > 0", "clip_grad_norm")

    def lr_at(self, epoch: int) -> float:
        """Return the learning rate of an epoch."""
        return lr_at(epoch, self.lr, self.halve_at_epoch)


class RunLog:
    """One JSON object per epoch per line; no timestamps."""

    KEYS = (
        "epoch",
        "lr",
        "loss_total",
        "loss_sr",
        "loss_distill",
        "loss_fft",
        "val_psnr",
    )

    def __init__(self, path: str | Path | None = None):
        """__init__."""
        self.path = None if path is None else Path(path)
        self.records: list[dict[str, Any]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def append(self, record: dict[str, Any]) -> None:
        """Append a record."""
        record = {key: record[key] for key in self.KEYS}
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fout:
                fout.write(dumps(record) + "\n")


@dataclass
class TrainResult:
    """Best checkpoint and the epoch history."""

    checkpoint: Checkpoint
    history: list[dict[str, Any]] = field(default_factory=list)
    best_val_psnr: float | None = None
    bicubic_psnr: float | None = None


class Trainer:  # pylint: disable=too-many-instance-attributes
    """Minimize the plan's total loss over the student and regressors."""

    EPOCH = dumps(
        {
            "key": "train.epoch",
            "epoch": "%s",
            "lr": "%s",
            "loss_total": "%s",
            "val_psnr": "%s",
        }
    )
    BEST = dumps({"key": "train.best", "epoch": "%s", "val_psnr": "%s"})
    FLOOR = dumps({"key": "train.bicubic", "val_psnr": "%s"})

    def __init__(  # pylint: disable=too-many-arguments
        self,
        student: Model,
        plan: DistillPlan,
        config: TrainConfig,
        corpus: Corpus,
        *,
        teacher: Model | None = None,
        run_dir: str | Path | None = None,
        on_y: bool = True,
    ):
        """__init__."""
        config.validate()
        if plan.needs_teacher and teacher is None:
            raise ConfigError(f"{plan.method} needs a teacher", "teacher_ckpt")
        if teacher is not None:
            if teacher.config.scale != student.config.scale:
                raise ConfigError("teacher and student scales differ", "scale")
            teacher.freeze()
        self.student = student
        self.plan = plan
        self.config = config
        self.corpus = corpus
        self.teacher = teacher if plan.needs_teacher else None
        self.run_dir = None if run_dir is None else Path(run_dir)
        self.on_y = on_y
        self.parameters = student.parameters() + plan.parameters()
        self.adam = AdamState.for_parameters(self.parameters)
        self.epoch = 0
        self.stream = PatchStream(
            corpus.split("train"),
            scale=student.config.scale,
            mean_rgb=corpus.mean_rgb,
            batch_size=config.batch_size,
            patch_size=config.patch_size,
            seed=config.seed,
        )
        self.log = RunLog(
            None if self.run_dir is None else self.run_dir / "log.jsonl"
        )

    def outputs(self, batch: Batch) -> StepOutputs:
        """Forward the student, and the frozen teacher when needed."""
        sr_t = None
        teacher_taps = {}
        if self.teacher is not None:
            with no_grad():
                sr_t, t_taps = self.teacher(batch.lr)
            teacher_taps = dict(zip(self.teacher.tap_points, t_taps))
        sr_s, s_taps = self.student(batch.lr)
        return StepOutputs(
            hr=batch.hr,
            sr_s=sr_s,
            student_taps=dict(zip(self.student.tap_points, s_taps)),
            sr_t=sr_t,
            teacher_taps=teacher_taps,
        )

    def loss(self, batch: Batch) -> dict[str, float]:
        """Return the loss terms of a batch without updating."""
        with no_grad():
            total, terms = total_loss(self.plan, self.outputs(batch))
        return {"total": total.item(), **terms}

    def step(self, batch: Batch, lr_t: float) -> dict[str, float]:
        """One optimizer step; returns the loss terms before the update."""
        zero_grad(self.parameters)
        with Tape() as tape:
            total, terms = total_loss(self.plan, self.outputs(batch))
            result = {"total": total.item(), **terms}
            for key in (*TERMS, "total"):
                if not isfinite(result[key]):
                    raise DivergenceError(
                        f"Non-finite loss term {key} at step "
                        f"{self.adam.t + 1}",
                        key,
                    )
            tape.backward(total)
        if self.config.clip_grad_norm is not None:
            clip_grad_norm(self.parameters, self.config.clip_grad_norm)
        adam_step(
            self.parameters,
            self.adam,
            lr_t,
            beta1=self.config.beta1,
            beta2=self.config.beta2,
            epsilon=self.config.epsilon,
        )
        return result

    def run_epoch(self, epoch: int) -> dict[str, float]:
        """Run one epoch and return mean loss terms."""
        lr_t = self.config.lr_at(epoch)
        sums = {key: 0.0 for key in ("total", *TERMS)}
        batches = prefetch(
            self.stream.epoch(epoch, self.config.steps_per_epoch),
            self.config.prefetch_depth,
        )
        for batch in batches:
            terms = self.step(batch, lr_t)
            for key in sums:
                sums[key] += terms[key]
        self.epoch = epoch + 1
        steps = self.config.steps_per_epoch
        return {key: value / steps for key, value in sums.items()}

    def validate(self) -> float | None:
        """Return the val PSNR of the student, None without a val split."""
        samples = self.corpus.split("val")
        if not samples:
            return None
        return evaluate(
            self.student,
            samples,
            self.student.config.scale,
            self.corpus.mean_rgb,
            on_y=self.on_y,
            method=self.plan.method,
        ).aggregate

    def bicubic_floor(self) -> float | None:
        """Return the bicubic val PSNR, None without a val split."""
        samples = self.corpus.split("val")
        if not samples:
            return None
        scale = self.student.config.scale
        return evaluate(
            BicubicModel(scale, self.corpus.mean_rgb),
            samples,
            scale,
            self.corpus.mean_rgb,
            on_y=self.on_y,
            method="bicubic",
        ).aggregate

    def checkpoint(self, **extra: Any) -> Checkpoint:
        """Snapshot parameters, regressors and optimizer state."""
        regressors = {}
        for each in self.plan.parameters():
            regressors[str(each.name)] = each.data.copy()
        return Checkpoint.build(
            model_config=self.student.config.as_yaml(),
            model_state=self.student.state(),
            regressor_state=regressors,
            adam=AdamState(
                m={k: v.copy() for k, v in self.adam.m.items()},
                v={k: v.copy() for k, v in self.adam.v.items()},
                t=self.adam.t,
            ),
            rng_state={"seed": self.config.seed, "epoch": self.epoch},
            epoch=self.epoch,
            extra={"plan": self.plan.as_yaml(), **extra},
        )

    def resume(self, ckpt: Checkpoint) -> None:
        """Restore parameters, regressors and optimizer state."""
        self.student.load_state(ckpt.model_state())
        regressors = ckpt.regressor_state()
        for each in self.plan.parameters():
            each.data[...] = regressors[str(each.name)]
        adam = ckpt.adam_state()
        if adam is not None:
            self.adam = adam
        self.epoch = ckpt.epoch

    def train(self) -> TrainResult:
        """Train from the current epoch; keep the best val checkpoint."""
        floor = self.bicubic_floor()
        if floor is not None:
            logger.info(self.FLOOR, floor)
        best: Checkpoint | None = None
        best_psnr = -inf
        for epoch in range(self.epoch, self.config.epochs):
            with profile("srdk.train.epoch"):
                terms = self.run_epoch(epoch)
            val_psnr = self.validate()
            record = {
                "epoch": epoch,
                "lr": self.config.lr_at(epoch),
                "loss_total": terms["total"],
                "loss_sr": terms["sr"],
                "loss_distill": terms["distill"],
                "loss_fft": terms["fft"],
                "val_psnr": (
                    None
                    if val_psnr is None or isinf(val_psnr)
                    else val_psnr
                ),
            }
            self.log.append(record)
            logger.info(
                self.EPOCH, epoch, record["lr"], terms["total"], val_psnr
            )
            score = -inf if val_psnr is None else val_psnr
            if best is None or score > best_psnr:
                best_psnr = score
                best = self.checkpoint(val_psnr=record["val_psnr"])
                logger.info(self.BEST, epoch, val_psnr)
            if self.run_dir is not None:
                save_checkpoint(self.checkpoint(), self.run_dir / "last.ckpt")
        if best is None:
            best = self.checkpoint()
        if self.run_dir is not None:
            save_checkpoint(best, self.run_dir / "model.ckpt")
        return TrainResult(
            checkpoint=best,
            history=list(self.log.records),
            best_val_psnr=None if best_psnr == -inf else best_psnr,
            bicubic_psnr=floor,
        )


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    """Rebuild a model and load its parameters."""
    model = build_model(ModelConfig(**ckpt.model_config), initialize=False)
    model.load_state(ckpt.model_state())
    return model


def train_teacher(  # pylint: disable=too-many-arguments
    model_config: ModelConfig,
    config: TrainConfig,
    corpus: Corpus,
    *,
    run_dir: str | Path | None = None,
    on_y: bool = True,
) -> TrainResult:
    """Train with plain L1 to HR."""
    model = build_model(model_config)
    plan = build_plan(DistillConfig(method="vanilla"), None, model)
    return Trainer(
        model, plan, config, corpus, run_dir=run_dir, on_y=on_y
    ).train()


def distill(  # pylint: disable=too-many-arguments
    teacher_ckpt: Checkpoint,
    student_config: ModelConfig,
    distill_config: DistillConfig,
    config: TrainConfig,
    corpus: Corpus,
    *,
    run_dir: str | Path | None = None,
    on_y: bool = True,
) -> TrainResult:
    """Train a student and its regressors against a frozen teacher."""
    teacher = model_from_checkpoint(teacher_ckpt)
    teacher.freeze()
    student = build_model(student_config)
    plan = build_plan(distill_config, teacher, student)
    return Trainer(
        student,
        plan,
        config,
        corpus,
        teacher=teacher,
        run_dir=run_dir,
        on_y=on_y,
    ).train()
