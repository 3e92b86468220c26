"""End-to-end training loop: per-iteration data flows, the seven-stage
sequential update order, variant gating, loss logging, and resume.

Stage order and ownership (full variant):

1. target_gen   : image GAN generator term + cycle consistency
2. disc_target  : target-image discriminator (fakes drawn from a history pool)
3. encoder      : every term that reaches the shared encoder
4. classifiers  : segmentation + prediction-space generator terms
5. decoder      : source GAN generator term + cycle + source-aux generator term
6. disc_source  : dual-head source discriminator
7. disc_pred    : prediction-space discriminators

Each stage recomputes the forward passes it needs with the parameters as they
stand when the stage runs; activations are reused across stages only when no
owning parameters changed in between, which is observationally identical.
A term weighted exactly 0 (or excluded by the variant) is disabled outright,
including the matching discriminator head, and is absent from loss records.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .batches import batch_at
from .core import LossRecord, LossWeights, Slice2D, SliceBatch
from .errors import NonFiniteLoss
from .losses import GanLossPhase, adv_loss, cycle_loss, seg_loss
from .networks import NETWORK_NAMES, ArchConfig
from .preprocess import AugmentConfig
from .state import SifaState, build_state, save_checkpoint

VARIANTS = (
    "no_adaptation_lower_bound",
    "supervised_upper_bound",
    "image_alignment_only",
    "image_plus_fap",
    "full_sifa",
)

BOUND_VARIANTS = ("no_adaptation_lower_bound", "supervised_upper_bound")

_ALL_TERMS = frozenset(
    {"adv_target", "adv_source", "cycle", "seg_main", "seg_aux",
     "adv_pred_main", "adv_pred_aux", "adv_source_aux"}
)

_VARIANT_TERMS = {
    "full_sifa": _ALL_TERMS,
    "image_plus_fap": _ALL_TERMS - {"adv_source_aux"},
    "image_alignment_only": frozenset(
        {"adv_target", "adv_source", "cycle", "seg_main", "seg_aux"}
    ),
    "no_adaptation_lower_bound": frozenset({"seg_main"}),
    "supervised_upper_bound": frozenset({"seg_main"}),
}

# (stage name, owned networks, terms that can involve the stage)
STAGES = (
    ("target_gen", ("target_gen",), frozenset({"adv_target", "cycle"})),
    ("disc_target", ("disc_target",), frozenset({"adv_target"})),
    ("encoder", ("encoder",), _ALL_TERMS - {"adv_target"}),
    ("classifiers", ("seg_main", "seg_aux"),
     frozenset({"seg_main", "seg_aux", "adv_pred_main", "adv_pred_aux"})),
    ("decoder", ("decoder",), frozenset({"adv_source", "cycle", "adv_source_aux"})),
    ("disc_source", ("disc_source",), frozenset({"adv_source", "adv_source_aux"})),
    ("disc_pred", ("disc_pred_main", "disc_pred_aux"),
     frozenset({"adv_pred_main", "adv_pred_aux"})),
)

STAGE_NAMES = tuple(s[0] for s in STAGES)
STAGE_PARAMS = {name: nets for name, nets, _ in STAGES}


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 20000
    batch_size: int = 8
    learning_rate: float = 2e-4
    loss_weights: LossWeights = LossWeights()
    gan_loss_form: Optional[str] = None  # None: use the architecture's form
    checkpoint_every: int = 0            # 0: final checkpoint only
    seed: int = 0
    image_pool_size: int = 50
    adam_betas: tuple[float, float] = (0.5, 0.999)
    augment: Optional[AugmentConfig] = None
    device: str = "cpu"

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.image_pool_size < 0 or self.checkpoint_every < 0:
            raise ValueError("image_pool_size and checkpoint_every must be >= 0")


@dataclass
class TrainData:
    """Labeled slices plus, for adaptation variants, unlabeled target slices."""

    labeled: Sequence[Slice2D]
    unlabeled: Optional[Sequence[Slice2D]] = None


def enabled_terms(variant: str, weights: LossWeights) -> frozenset:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    return frozenset(
        t for t in _VARIANT_TERMS[variant] if getattr(weights, t) > 0.0
    )


def is_bound_variant(variant: str) -> bool:
    return variant in BOUND_VARIANTS


def _to_tensors(batch: SliceBatch, device: str):
    images = torch.from_numpy(batch.images).permute(0, 3, 1, 2).to(device)
    labels = None
    if batch.labels is not None:
        labels = torch.from_numpy(batch.labels).to(device)
    return images, labels


def _set_trainable(state: SifaState, names: Sequence[str]) -> None:
    wanted = set(names)
    for name in NETWORK_NAMES:
        flag = name in wanted
        for p in getattr(state.nets, name).parameters():
            p.requires_grad_(flag)


def _check_finite(name: str, value: torch.Tensor, iteration: int) -> None:
    if not torch.isfinite(value):
        raise NonFiniteLoss(f"loss term {name!r} non-finite at iteration {iteration}")


class _StepContext:
    """Lazy, invalidatable forward-pass cache shared by the stages of one step."""

    def __init__(self, state: SifaState, terms: frozenset, gan_form: str,
                 x_s, y_s, x_t, translated: bool):
        self.state = state
        self.terms = terms
        self.gan_form = gan_form
        self.x_s, self.y_s, self.x_t = x_s, y_s, x_t
        self.translated = translated  # False for bound variants: segment x_s directly
        self._x_st = None
        self._feats = None

    # cached, gradient-free inputs -----------------------------------------
    def x_st(self) -> torch.Tensor:
        if self._x_st is None:
            with torch.no_grad():
                self._x_st = self.state.nets.target_gen(self.x_s)
        return self._x_st

    def seg_input(self) -> torch.Tensor:
        return self.x_st() if self.translated else self.x_s

    def feats(self):
        if self._feats is None:
            with torch.no_grad():
                f_seg = self.state.nets.encoder(self.seg_input())
                f_t = self.state.nets.encoder(self.x_t) if self.x_t is not None else None
            self._feats = (f_seg, f_t)
        return self._feats

    def invalidate_x_st(self):
        self._x_st = None
        self._feats = None

    def invalidate_feats(self):
        self._feats = None

    # loss helpers ----------------------------------------------------------
    def gen_adv(self, fake_logits):
        return adv_loss(None, fake_logits, GanLossPhase.GENERATOR, self.gan_form)

    def disc_adv(self, real_logits, fake_logits):
        return adv_loss(real_logits, fake_logits, GanLossPhase.DISCRIMINATOR,
                        self.gan_form)


def _record_term(record: LossRecord, name: str, value: torch.Tensor,
                 iteration: int) -> torch.Tensor:
    _check_finite(name, value, iteration)
    if getattr(record, name) is None:
        record.set(name, float(value.detach()))
    return value


def _stage_target_gen(ctx: _StepContext, record: LossRecord, w: LossWeights):
    nets = ctx.state.nets
    it = ctx.state.iteration
    x_st = nets.target_gen(ctx.x_s)
    total = 0.0
    if "adv_target" in ctx.terms:
        term = ctx.gen_adv(nets.disc_target(x_st))
        total = total + w.adv_target * _record_term(record, "adv_target", term, it)
    if "cycle" in ctx.terms:
        rec_s = nets.decoder(nets.encoder(x_st).deep)
        rec_t = nets.target_gen(nets.decoder(nets.encoder(ctx.x_t).deep))
        term = cycle_loss(rec_s, ctx.x_s, rec_t, ctx.x_t)
        total = total + w.cycle * _record_term(record, "cycle", term, it)
    return total


def _stage_disc_target(ctx: _StepContext, record: LossRecord, w: LossWeights):
    nets = ctx.state.nets
    fake = ctx.state.pool_target.query(ctx.x_st())
    term = ctx.disc_adv(nets.disc_target(ctx.x_t), nets.disc_target(fake))
    return _record_term(record, "d_target", term, ctx.state.iteration)


def _stage_encoder(ctx: _StepContext, record: LossRecord, w: LossWeights):
    nets = ctx.state.nets
    it = ctx.state.iteration
    total = 0.0

    f_seg = nets.encoder(ctx.seg_input())
    if "seg_main" in ctx.terms:
        term = seg_loss(nets.seg_main(f_seg.deep), ctx.y_s)
        total = total + w.seg_main * _record_term(record, "seg_main", term, it)
    if "seg_aux" in ctx.terms:
        term = seg_loss(nets.seg_aux(f_seg.shallow), ctx.y_s)
        total = total + w.seg_aux * _record_term(record, "seg_aux", term, it)

    if not ctx.translated:
        return total

    f_t = nets.encoder(ctx.x_t)
    src_like_st = None
    src_like_t = None
    if {"adv_source", "cycle"} & ctx.terms:
        src_like_st = nets.decoder(f_seg.deep)
    if {"cycle", "adv_source_aux"} & ctx.terms:
        src_like_t = nets.decoder(f_t.deep)

    if "adv_source" in ctx.terms:
        main_logits, _ = nets.disc_source(src_like_st)
        term = ctx.gen_adv(main_logits)
        total = total + w.adv_source * _record_term(record, "adv_source", term, it)
    if "cycle" in ctx.terms:
        rec_t = nets.target_gen(src_like_t)
        term = cycle_loss(src_like_st, ctx.x_s, rec_t, ctx.x_t)
        total = total + w.cycle * _record_term(record, "cycle", term, it)
    if "adv_pred_main" in ctx.terms:
        probs_t = F.softmax(nets.seg_main(f_t.deep), dim=1)
        term = ctx.gen_adv(nets.disc_pred_main(probs_t))
        total = total + w.adv_pred_main * _record_term(record, "adv_pred_main", term, it)
    if "adv_pred_aux" in ctx.terms:
        probs_t = F.softmax(nets.seg_aux(f_t.shallow), dim=1)
        term = ctx.gen_adv(nets.disc_pred_aux(probs_t))
        total = total + w.adv_pred_aux * _record_term(record, "adv_pred_aux", term, it)
    if "adv_source_aux" in ctx.terms:
        _, aux_logits = nets.disc_source(src_like_t)
        term = ctx.gen_adv(aux_logits)
        total = total + w.adv_source_aux * _record_term(record, "adv_source_aux", term, it)
    return total


def _stage_classifiers(ctx: _StepContext, record: LossRecord, w: LossWeights):
    nets = ctx.state.nets
    it = ctx.state.iteration
    f_seg, f_t = ctx.feats()
    total = 0.0
    if "seg_main" in ctx.terms:
        term = seg_loss(nets.seg_main(f_seg.deep), ctx.y_s)
        total = total + w.seg_main * _record_term(record, "seg_main", term, it)
    if "seg_aux" in ctx.terms:
        term = seg_loss(nets.seg_aux(f_seg.shallow), ctx.y_s)
        total = total + w.seg_aux * _record_term(record, "seg_aux", term, it)
    if "adv_pred_main" in ctx.terms:
        probs_t = F.softmax(nets.seg_main(f_t.deep), dim=1)
        term = ctx.gen_adv(nets.disc_pred_main(probs_t))
        total = total + w.adv_pred_main * _record_term(record, "adv_pred_main", term, it)
    if "adv_pred_aux" in ctx.terms:
        probs_t = F.softmax(nets.seg_aux(f_t.shallow), dim=1)
        term = ctx.gen_adv(nets.disc_pred_aux(probs_t))
        total = total + w.adv_pred_aux * _record_term(record, "adv_pred_aux", term, it)
    return total


def _stage_decoder(ctx: _StepContext, record: LossRecord, w: LossWeights):
    nets = ctx.state.nets
    it = ctx.state.iteration
    f_seg, f_t = ctx.feats()
    total = 0.0
    src_like_st = None
    src_like_t = None
    if {"adv_source", "cycle"} & ctx.terms:
        src_like_st = nets.decoder(f_seg.deep)
    if {"cycle", "adv_source_aux"} & ctx.terms:
        src_like_t = nets.decoder(f_t.deep)

    if "adv_source" in ctx.terms:
        main_logits, _ = nets.disc_source(src_like_st)
        term = ctx.gen_adv(main_logits)
        total = total + w.adv_source * _record_term(record, "adv_source", term, it)
    if "cycle" in ctx.terms:
        rec_t = nets.target_gen(src_like_t)
        term = cycle_loss(src_like_st, ctx.x_s, rec_t, ctx.x_t)
        total = total + w.cycle * _record_term(record, "cycle", term, it)
    if "adv_source_aux" in ctx.terms:
        _, aux_logits = nets.disc_source(src_like_t)
        term = ctx.gen_adv(aux_logits)
        total = total + w.adv_source_aux * _record_term(record, "adv_source_aux", term, it)
    return total


def _stage_disc_source(ctx: _StepContext, record: LossRecord, w: LossWeights):
    nets = ctx.state.nets
    it = ctx.state.iteration
    f_seg, f_t = ctx.feats()
    with torch.no_grad():
        src_like_st = nets.decoder(f_seg.deep)
        src_like_t = nets.decoder(f_t.deep)
    total = 0.0
    if "adv_source" in ctx.terms:
        real_main, _ = nets.disc_source(ctx.x_s)
        fake_main, _ = nets.disc_source(ctx.state.pool_source.query(src_like_st))
        term = ctx.disc_adv(real_main, fake_main)
        total = total + _record_term(record, "d_source", term, it)
    if "adv_source_aux" in ctx.terms:
        _, aux_st = nets.disc_source(src_like_st)
        _, aux_t = nets.disc_source(src_like_t)
        term = ctx.disc_adv(aux_st, aux_t)
        total = total + _record_term(record, "d_source_aux", term, it)
    return total


def _stage_disc_pred(ctx: _StepContext, record: LossRecord, w: LossWeights):
    nets = ctx.state.nets
    it = ctx.state.iteration
    f_seg, f_t = ctx.feats()
    total = 0.0
    if "adv_pred_main" in ctx.terms:
        with torch.no_grad():
            p_st = F.softmax(nets.seg_main(f_seg.deep), dim=1)
            p_t = F.softmax(nets.seg_main(f_t.deep), dim=1)
        term = ctx.disc_adv(nets.disc_pred_main(p_st), nets.disc_pred_main(p_t))
        total = total + _record_term(record, "d_pred_main", term, it)
    if "adv_pred_aux" in ctx.terms:
        with torch.no_grad():
            p_st = F.softmax(nets.seg_aux(f_seg.shallow), dim=1)
            p_t = F.softmax(nets.seg_aux(f_t.shallow), dim=1)
        term = ctx.disc_adv(nets.disc_pred_aux(p_st), nets.disc_pred_aux(p_t))
        total = total + _record_term(record, "d_pred_aux", term, it)
    return total


_STAGE_FNS = {
    "target_gen": _stage_target_gen,
    "disc_target": _stage_disc_target,
    "encoder": _stage_encoder,
    "classifiers": _stage_classifiers,
    "decoder": _stage_decoder,
    "disc_source": _stage_disc_source,
    "disc_pred": _stage_disc_pred,
}

# networks stepped in a stage only when one of these terms is enabled
_STEP_GATES = {
    "seg_main": frozenset({"seg_main", "adv_pred_main"}),
    "seg_aux": frozenset({"seg_aux", "adv_pred_aux"}),
    "disc_pred_main": frozenset({"adv_pred_main"}),
    "disc_pred_aux": frozenset({"adv_pred_aux"}),
}


def _stage_step_nets(stage: str, terms: frozenset) -> tuple[str, ...]:
    return tuple(
        n for n in STAGE_PARAMS[stage]
        if terms & _STEP_GATES.get(n, _ALL_TERMS)
    )


def _run_stage(ctx: _StepContext, stage_name: str, record: LossRecord,
               weights: LossWeights) -> bool:
    """Execute one stage; returns False when the variant disables it."""
    _, _, relevant = next(s for s in STAGES if s[0] == stage_name)
    if not (relevant & ctx.terms):
        return False
    step_nets = _stage_step_nets(stage_name, ctx.terms)
    if not step_nets:
        return False
    state = ctx.state
    _set_trainable(state, step_nets)
    for name in step_nets:
        state.optimizers[name].zero_grad(set_to_none=True)
    loss = _STAGE_FNS[stage_name](ctx, record, weights)
    _check_finite(f"stage {stage_name}", torch.as_tensor(loss), state.iteration)
    loss.backward()
    for name in step_nets:
        state.optimizers[name].step()
    return True


def train_step(
    state: SifaState,
    batch_s: Optional[SliceBatch],
    batch_t: Optional[SliceBatch],
    cfg: TrainConfig,
    variant: str = "full_sifa",
    stage_observer: Optional[Callable[[str], None]] = None,
) -> tuple[SifaState, LossRecord]:
    """Run one full sequential update; mutates and returns the state."""
    terms = enabled_terms(variant, cfg.loss_weights)
    bound = is_bound_variant(variant)
    if batch_s is None or batch_s.labels is None:
        raise ValueError("the labeled batch must carry labels")
    if not bound:
        if batch_t is None or batch_t.labels is not None:
            raise ValueError("adaptation variants need an unlabeled target batch")
        if batch_t.batch_size != batch_s.batch_size:
            raise ValueError("batches must have equal size")

    x_s, y_s = _to_tensors(batch_s, cfg.device)
    x_t = None
    if batch_t is not None:
        x_t, _ = _to_tensors(batch_t, cfg.device)

    state.nets.train()
    gan_form = cfg.gan_loss_form or state.arch.gan_loss_form
    ctx = _StepContext(state, terms, gan_form, x_s, y_s, x_t, translated=not bound)
    record = LossRecord(iteration=state.iteration)

    for stage_name in STAGE_NAMES:
        ran = _run_stage(ctx, stage_name, record, cfg.loss_weights)
        if ran and stage_observer is not None:
            stage_observer(stage_name)
        if stage_name == "target_gen":
            ctx.invalidate_x_st()
        elif stage_name == "encoder":
            ctx.invalidate_feats()

    _set_trainable(state, NETWORK_NAMES)
    state.iteration += 1
    return state, record


def run_single_stage(
    state: SifaState,
    stage_name: str,
    batch_s: SliceBatch,
    batch_t: Optional[SliceBatch],
    cfg: TrainConfig,
    variant: str = "full_sifa",
) -> Optional[LossRecord]:
    """Run exactly one stage with fresh forward passes (a contract-test seam).

    Returns the partial loss record, or None when the stage is disabled.
    Does not advance the iteration counter.
    """
    if stage_name not in STAGE_NAMES:
        raise ValueError(f"unknown stage {stage_name!r}")
    terms = enabled_terms(variant, cfg.loss_weights)
    bound = is_bound_variant(variant)
    x_s, y_s = _to_tensors(batch_s, cfg.device)
    x_t = None
    if batch_t is not None:
        x_t, _ = _to_tensors(batch_t, cfg.device)
    state.nets.train()
    gan_form = cfg.gan_loss_form or state.arch.gan_loss_form
    ctx = _StepContext(state, terms, gan_form, x_s, y_s, x_t, translated=not bound)
    record = LossRecord(iteration=state.iteration)
    ran = _run_stage(ctx, stage_name, record, cfg.loss_weights)
    _set_trainable(state, NETWORK_NAMES)
    return record if ran else None


@dataclass
class TrainResult:
    state: SifaState
    records: list[LossRecord] = field(default_factory=list)
    checkpoint_paths: list[Path] = field(default_factory=list)


def _stream_seed(seed: int, role: int) -> int:
    return int(np.random.SeedSequence((seed, role)).generate_state(1)[0])


def train(
    variant: str,
    data: TrainData,
    cfg: TrainConfig,
    arch: ArchConfig,
    out_dir=None,
    state: Optional[SifaState] = None,
) -> TrainResult:
    """Train a variant for ``cfg.iterations`` steps; resume from ``state``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    bound = is_bound_variant(variant)
    if not bound and not data.unlabeled:
        raise ValueError(f"variant {variant} needs unlabeled target slices")

    fresh = state is None
    if fresh:
        state = build_state(
            arch,
            seed=cfg.seed,
            learning_rate=cfg.learning_rate,
            adam_betas=cfg.adam_betas,
            image_pool_size=cfg.image_pool_size,
            loss_weights=cfg.loss_weights,
            device=cfg.device,
        )
    elif state.arch.config_hash() != arch.config_hash():
        raise ValueError("resume state was built for a different architecture")

    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "loss_log.jsonl", "w" if fresh else "a")

    seed_lab = _stream_seed(cfg.seed, 0)
    seed_unlab = _stream_seed(cfg.seed, 1)
    records: list[LossRecord] = []
    ckpt_paths: list[Path] = []
    try:
        for i in range(state.iteration, cfg.iterations):
            batch_s = batch_at(data.labeled, cfg.batch_size, seed_lab, i, cfg.augment)
            batch_t = None
            if not bound:
                batch_t = batch_at(data.unlabeled, cfg.batch_size, seed_unlab, i,
                                   cfg.augment)
            try:
                _, record = train_step(state, batch_s, batch_t, cfg, variant)
            except NonFiniteLoss as e:
                raise NonFiniteLoss(f"aborted at iteration {i}: {e}") from e
            records.append(record)
            if log_file is not None:
                line = record.present()
                line["wall_time"] = time.time()
                log_file.write(json.dumps(line) + "\n")
                log_file.flush()
            if (
                out_dir is not None
                and cfg.checkpoint_every > 0
                and state.iteration % cfg.checkpoint_every == 0
                and state.iteration < cfg.iterations
            ):
                ckpt_paths.append(
                    save_checkpoint(state, out_dir / f"ckpt_{state.iteration:06d}")
                )
        if out_dir is not None:
            ckpt_paths.append(save_checkpoint(state, out_dir / "ckpt_final"))
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(state=state, records=records, checkpoint_paths=ckpt_paths)
