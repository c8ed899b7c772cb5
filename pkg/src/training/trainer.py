"""
End-to-end detector training loop.
"""
import csv
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from autograd import OptimState, Tape, Tensor, backward, sgd_momentum_step
from data.augment import CurriculumSchedule, TrainingExample, curriculum_mask, mixup, simple_augment
from data.prefetch import Prefetcher
from data.scene import SamplePair
from model.checkpoint import join_state, save_checkpoint
from model.detector import DenseOutput, rasterize_gt, total_loss
from model.network import MultimodalDetector, model_inputs
from utils.config import RunConfig
from utils.errors import NumericError
from utils.logger import logger

LOG_COLUMNS = ("step", "lr", "loss", "loss_score", "loss_geo", "mask_fraction")


@dataclass
class PreparedStep:
    """Inputs and dense targets for one optimizer step."""
    example: TrainingExample
    mask_fraction: float


@dataclass
class StepRecord:
    step: int
    lr: float
    loss: float
    loss_score: float
    loss_geo: float
    mask_fraction: float

    def as_row(self) -> List[str]:
        return [str(self.step)] + [repr(float(v)) for v in
                                   (self.lr, self.loss, self.loss_score, self.loss_geo, self.mask_fraction)]


def make_example(pair: SamplePair, model: MultimodalDetector) -> TrainingExample:
    """Rasterise a pair's boxes at the model's output resolution."""
    stride = model.output_stride
    target = rasterize_gt(pair.boxes, pair.height // stride, pair.width // stride, stride)
    return TrainingExample(rgb=pair.rgb, thermal=pair.thermal, score=target.score.data,
                           geometry=target.geometry.data, boxes=list(pair.boxes), shift=pair.shift)


class Trainer:
    """
    Trains a MultimodalDetector on a list of sample pairs.

    Sample preparation for step ``i`` draws from a generator seeded with
    ``(seed, i)``, so a run is reproducible whatever the prefetch timing.
    """

    def __init__(self, model: MultimodalDetector, cfg: RunConfig, pairs: Sequence[SamplePair],
                 checkpoint_path: Optional[str] = None, log_path: Optional[str] = None):
        if not pairs:
            raise ValueError("Training needs at least one sample pair")
        self.model = model
        self.cfg = cfg
        self.pairs = list(pairs)
        self.checkpoint_path = checkpoint_path
        self.log_path = log_path
        t = cfg.train
        self.schedule = CurriculumSchedule(max_fraction=t.curriculum_max, ramp=t.curriculum_ramp)
        self.state = OptimState(base_lr=t.base_lr, momentum=t.momentum, lr_period=t.lr_period)
        self.history: List[StepRecord] = []

    def _pick(self, index: int) -> SamplePair:
        n = len(self.pairs)
        order = np.random.default_rng([self.cfg.train.seed, index // n]).permutation(n)
        return self.pairs[int(order[index % n])]

    def _augmented(self, pair: SamplePair, rng: np.random.Generator) -> TrainingExample:
        if self.cfg.train.simple_augment:
            pair = simple_augment(pair, rng)
        return make_example(pair, self.model)

    def prepare(self, index: int) -> PreparedStep:
        """Augment, mix and mask the sample for step ``index``."""
        t = self.cfg.train
        rng = np.random.default_rng([t.seed, index, 1])
        example = self._augmented(self._pick(index), rng)
        if t.mixup:
            partner = self.pairs[int(rng.integers(len(self.pairs)))]
            example = mixup(example, self._augmented(partner, rng), rng=rng, alpha=t.mixup_alpha)
        fraction = 0.0
        if t.curriculum:
            progress = index / max(t.steps - 1, 1)
            fraction = self.schedule(progress)
            example = curriculum_mask(example, self.schedule, progress, rng)
        return PreparedStep(example=example, mask_fraction=fraction)

    def train_step(self, prepared: PreparedStep, step: int) -> Tuple[float, float, float]:
        """Forward, loss and backward for one sample; gradients accumulate in ``.grad``."""
        ex = prepared.example
        rgb, thermal = model_inputs(ex.rgb, ex.thermal, self.cfg.train.train_mode)
        target = DenseOutput(score=Tensor(ex.score), geometry=Tensor(ex.geometry), stride=self.model.output_stride)
        with Tape() as tape:
            dense, _ = self.model(rgb, thermal)
            terms = total_loss(dense, target, self.cfg.train.lambda_g)
        backward(tape, terms.total)
        return terms.as_floats()

    def save(self) -> None:
        if self.checkpoint_path:
            save_checkpoint(self.checkpoint_path, join_state(self.model.state_dict(), "detector"))

    def run(self, progress_callback: Optional[Callable[[Dict[str, Any]], None]] = None,
            cancel_check: Optional[Callable[[], bool]] = None) -> List[StepRecord]:
        """
        Run ``cfg.train.steps`` optimizer updates.

        Args:
            progress_callback: Called after each update with step/steps/loss/lr/percentage
            cancel_check: Returns True to stop after the current update

        Returns:
            One StepRecord per update

        Raises:
            NumericError: Naming the step that produced a non-finite value
        """
        t = self.cfg.train
        total_samples = t.steps * t.accumulate
        params = self.model.parameters()
        log_file = None
        writer = None
        if self.log_path:
            Path(self.log_path).parent.mkdir(parents=True, exist_ok=True)
            log_file = open(self.log_path, 'w', newline='', encoding='utf-8')
            writer = csv.writer(log_file)
            writer.writerow(LOG_COLUMNS)

        logger.info(f"Training: {t.steps} steps x {t.accumulate} accumulated, {len(self.pairs)} pairs, "
                    f"mode {t.train_mode}, lambda_g {t.lambda_g}")
        prefetcher = Prefetcher(self.prepare, total_samples, depth=t.prefetch)
        sums = np.zeros(3)
        fraction = 0.0
        try:
            for index, prepared in enumerate(prefetcher):
                step = index // t.accumulate
                if index % t.accumulate == 0:
                    self.model.zero_grad()
                    sums[:] = 0.0
                try:
                    sums += self.train_step(prepared, step)
                except NumericError as e:
                    logger.error(f"Numeric failure at step {step}: {e}")
                    raise NumericError(f"step {step}: {e}") from e
                fraction = prepared.mask_fraction
                if (index + 1) % t.accumulate:
                    continue

                lr = sgd_momentum_step(params, [p.grad for p in params], self.state)
                record = StepRecord(step, lr, *(float(v) for v in sums), mask_fraction=fraction)
                self.history.append(record)
                if writer:
                    writer.writerow(record.as_row())
                logger.debug(f"step {step}: loss={record.loss:.6f} score={record.loss_score:.6f} "
                             f"geo={record.loss_geo:.6f} lr={lr:g}")
                if (step + 1) % t.log_every == 0 or step == 0:
                    logger.info(f"Step {step + 1}/{t.steps}: loss {record.loss:.5f}")
                if (step + 1) % t.checkpoint_every == 0 and step + 1 < t.steps:
                    self.save()
                if progress_callback:
                    progress_callback({'step': step + 1, 'steps': t.steps, 'loss': record.loss, 'lr': lr,
                                       'percentage': 100.0 * (step + 1) / max(t.steps, 1)})
                if cancel_check and cancel_check():
                    logger.info(f"Training cancelled after step {step + 1}")
                    break
        finally:
            prefetcher.stop()
            if log_file:
                log_file.close()
        self.save()
        return self.history

