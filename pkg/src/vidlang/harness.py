"""Experiment configuration, checkpointing, training runners, and ablations.

A run is described by one ExperimentConfig whose every field is explicit
after default resolution; the resolved flat form is written next to run
outputs and snapshotted into checkpoints. All randomness derives from the
root seed via named streams, so ablation arms sharing a seed see identical
data order and identical parameter initialization.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .data import VideoClip, generate_synthetic_corpus
from .errors import ConfigError
from .masking import random_video_mask
from .model import ModelConfig, VidLangModel
from .pretraining import (LossReport, PairBatch, PretrainConfig, mvm_loss,
                          pretrain_step)
from .seeding import derive_seed, derived_rng
from .tasks import (MC_QUESTION, PROBE_QUESTION, build_caption_mc,
                    build_direction_probe, build_fib, build_open_qa,
                    build_paired_corpora, clips_to_batch, default_answer_space,
                    evaluate_fib, evaluate_mc, evaluate_open_qa,
                    evaluate_retrieval, finetune_fib, finetune_mc,
                    finetune_open_qa, finetune_retrieval, iterate_batches)
from .text import Vocabulary, build_vocab
from .vq import VisualTokenizer, train_tokenizer

CHECKPOINT_VERSION = 1
FINETUNE_TASKS = ("retrieval", "mc_qa", "open_qa", "fib")


@dataclass
class DataConfig:
    n_clips: int = 64
    frames_per_clip: int = 4
    resolution: int = 64
    n_shapes_min: int = 1
    n_shapes_max: int = 3


@dataclass
class TokenizerTrainConfig:
    codebook_size: int = 256
    steps: int = 800
    code_dim: int = 32
    hidden: int = 64
    lr: float = 2e-3
    batch_size: int = 16


@dataclass
class OptimizerConfig:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 1e-3


@dataclass
class StageConfig:
    name: str
    steps: int


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_frames: int = 4
    batch_size: int = 8
    checkpoint_every: int = 0   # 0 = final checkpoint only
    data: DataConfig = field(default_factory=DataConfig)
    tokenizer: TokenizerTrainConfig = field(default_factory=TokenizerTrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    stages: list[StageConfig] = field(default_factory=lambda: [StageConfig("main", 200)])

    def resolved(self) -> "ExperimentConfig":
        """Copy with derived fields filled in and consistency enforced."""
        cfg = dataclasses.replace(self)
        cfg.model = dataclasses.replace(self.model)
        if cfg.data.resolution % cfg.model.patch_size:
            raise ConfigError("resolution must be divisible by the patch size")
        cfg.model.grid_size = cfg.data.resolution // cfg.model.patch_size
        if cfg.model.t_max < cfg.n_frames:
            cfg.model.t_max = cfg.n_frames
        if cfg.n_frames > cfg.data.frames_per_clip:
            raise ConfigError("n_frames cannot exceed frames_per_clip")
        cfg.model.codebook_size = cfg.tokenizer.codebook_size
        cfg.model.code_dim = cfg.tokenizer.code_dim
        names = [s.name for s in cfg.stages]
        if len(set(names)) != len(names):
            raise ConfigError("stage names must be unique")
        return cfg


# ---------------------------------------------------------------------------
# Flat key-value config form
# ---------------------------------------------------------------------------

_SECTIONS = ("data", "tokenizer", "model", "pretrain", "optimizer")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def flatten_config(cfg: ExperimentConfig) -> dict[str, str]:
    flat: dict[str, str] = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "stages":
            flat["stages"] = ";".join(f"{s.name}:{s.steps}" for s in value)
        elif f.name in _SECTIONS:
            for sub in fields(value):
                flat[f"{f.name}.{sub.name}"] = _format_value(getattr(value, sub.name))
        else:
            flat[f.name] = _format_value(value)
    return flat


def _parse_value(raw: str, annotation):
    raw = raw.strip()
    if annotation is bool or annotation == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if annotation is int or annotation == "int":
        return int(raw)
    if annotation is float or annotation == "float":
        return float(raw)
    if annotation is str or annotation == "str":
        return raw
    if "tuple" in str(annotation):
        return tuple(int(v) for v in raw.split(","))
    raise ConfigError(f"unsupported config field type {annotation}")


def config_from_flat(flat: dict[str, str]) -> ExperimentConfig:
    cfg = ExperimentConfig()
    section_fields = {name: {f.name: f for f in fields(getattr(cfg, name))}
                      for name in _SECTIONS}
    top_fields = {f.name: f for f in fields(cfg)}
    for key, raw in flat.items():
        if key == "stages":
            stages = []
            for part in raw.split(";"):
                name, _, steps = part.partition(":")
                if not steps:
                    raise ConfigError(f"bad stage spec {part!r}, want name:steps")
                stages.append(StageConfig(name.strip(), int(steps)))
            cfg.stages = stages
        elif "." in key:
            section, _, sub = key.partition(".")
            if section not in section_fields or sub not in section_fields[section]:
                raise ConfigError(f"unknown config key {key!r}")
            f = section_fields[section][sub]
            setattr(getattr(cfg, section), sub, _parse_value(raw, f.type))
        else:
            if key not in top_fields or key in _SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, _parse_value(raw, top_fields[key].type))
    return cfg


def load_config_file(path: str | Path) -> ExperimentConfig:
    flat: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{line_no}: expected key = value")
        flat[key.strip()] = value.strip()
    return config_from_flat(flat)


def write_resolved_config(cfg: ExperimentConfig, path: str | Path) -> None:
    flat = flatten_config(cfg.resolved())
    lines = [f"{k} = {v}" for k, v in sorted(flat.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    model: VidLangModel
    optimizer_state: dict
    step: int
    cfg: ExperimentConfig
    vocab: Vocabulary


def make_optimizer(model: torch.nn.Module, opt_cfg: OptimizerConfig,
                   lr: float | None = None) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=lr if lr is not None else opt_cfg.lr,
                             betas=(opt_cfg.beta1, opt_cfg.beta2),
                             weight_decay=opt_cfg.weight_decay)


def save_checkpoint(path: str | Path, model: VidLangModel,
                    optimizer: torch.optim.Optimizer | None, step: int,
                    cfg: ExperimentConfig, vocab: Vocabulary) -> None:
    torch.save({
        "format_version": CHECKPOINT_VERSION,
        "kind": "experiment",
        "step": step,
        "config": flatten_config(cfg),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "vocab_pieces": vocab.id_to_token,
        "task_heads": {name: head.out_features
                       for name, head in model.task_heads.items()},
    }, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    blob = torch.load(path, weights_only=True)
    if blob.get("kind") != "experiment":
        raise ConfigError(f"{path} is not an experiment checkpoint")
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {blob.get('format_version')}")
    cfg = config_from_flat(blob["config"]).resolved()
    model = VidLangModel(cfg.model)
    for name, out_dim in blob.get("task_heads", {}).items():
        model.add_task_head(name, out_dim)
    model.load_state_dict(blob["model_state"])
    return Checkpoint(model, blob["optimizer_state"], blob["step"], cfg,
                      Vocabulary(blob["vocab_pieces"]))


# ---------------------------------------------------------------------------
# Pretraining runner
# ---------------------------------------------------------------------------

def build_corpus(cfg: ExperimentConfig) -> list[VideoClip]:
    return generate_synthetic_corpus(
        cfg.data.n_clips, cfg.data.frames_per_clip, cfg.data.resolution,
        seed=derive_seed(cfg.seed, "data"),
        n_shapes_range=(cfg.data.n_shapes_min, cfg.data.n_shapes_max),
        patch_size=cfg.model.patch_size)


def train_corpus_tokenizer(cfg: ExperimentConfig,
                           corpus: list[VideoClip]) -> VisualTokenizer:
    frames = np.concatenate([c.frames for c in corpus])
    tok, _ = train_tokenizer(
        frames, cfg.tokenizer.codebook_size, cfg.tokenizer.steps,
        seed=derive_seed(cfg.seed, "tokenizer"),
        patch_size=cfg.model.patch_size, code_dim=cfg.tokenizer.code_dim,
        hidden=cfg.tokenizer.hidden, lr=cfg.tokenizer.lr,
        batch_size=cfg.tokenizer.batch_size)
    return tok


def run_pretrain(cfg: ExperimentConfig, tokenizer: VisualTokenizer | None = None,
                 corpus: list[VideoClip] | None = None,
                 vocab: Vocabulary | None = None,
                 out_dir: str | Path | None = None):
    """Execute the staged pretraining schedule.

    Returns (model, vocab, trace) where trace holds one record per step.
    """
    cfg = cfg.resolved()
    if cfg.pretrain.mvm_active and tokenizer is None:
        raise ConfigError("masked visual modeling is enabled but no tokenizer was given")
    if corpus is None:
        corpus = build_corpus(cfg)
    if vocab is None:
        vocab = build_vocab([c.caption for c in corpus], cfg.model.vocab_size)

    torch.manual_seed(derive_seed(cfg.seed, "model"))
    model = VidLangModel(cfg.model)
    optimizer = make_optimizer(model, cfg.optimizer)

    out_path = Path(out_dir) if out_dir is not None else None
    trace_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        write_resolved_config(cfg, out_path / "resolved-config")
        trace_fh = open(out_path / "trace.jsonl", "w", encoding="utf-8")

    trace: list[dict] = []
    step = 0
    try:
        for stage in cfg.stages:
            rng = derived_rng(cfg.seed, f"pretrain/{stage.name}")
            batches = iterate_batches(corpus, vocab, cfg.n_frames,
                                      cfg.model.l_max, cfg.batch_size, rng)
            for _ in range(stage.steps):
                started = time.perf_counter()
                report = pretrain_step(model, next(batches), cfg.pretrain,
                                       optimizer, tokenizer, rng)
                step += 1
                record = {"stage": stage.name, "step": step,
                          **report.as_dict(),
                          "seconds": round(time.perf_counter() - started, 4)}
                trace.append(record)
                if trace_fh is not None:
                    trace_fh.write(json.dumps(record) + "\n")
                if (out_path is not None and cfg.checkpoint_every
                        and step % cfg.checkpoint_every == 0):
                    save_checkpoint(out_path / f"step{step:06d}.pt", model,
                                    optimizer, step, cfg, vocab)
    finally:
        if trace_fh is not None:
            trace_fh.close()
    if out_path is not None:
        save_checkpoint(out_path / "final.pt", model, optimizer, step, cfg, vocab)
    return model, vocab, trace


# ---------------------------------------------------------------------------
# Finetuning runner
# ---------------------------------------------------------------------------

def run_finetune(model: VidLangModel, vocab: Vocabulary, task: str,
                 train_clips: list[VideoClip], eval_clips: list[VideoClip],
                 n_frames: int, steps: int, batch_size: int, lr: float,
                 seed: int, eval_on_train: bool = False) -> dict:
    """Train one task head (plus backbone) and report held-out metrics."""
    if task not in FINETUNE_TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {FINETUNE_TASKS}")
    l_max = model.cfg.l_max
    measured = train_clips if eval_on_train else eval_clips

    if task == "retrieval":
        if steps:
            finetune_retrieval(model, train_clips, vocab, n_frames, l_max,
                               steps, batch_size, lr, seed)
        elif "t2v" not in model.task_heads:
            model.init_retrieval_head_from_vtm()
        return evaluate_retrieval(model, measured, vocab, n_frames, l_max)

    if task == "mc_qa":
        train_ex = build_caption_mc(train_clips, 5, derive_seed(seed, "mc/train"))
        eval_ex = build_caption_mc(measured, 5, derive_seed(seed, "mc/eval"))
        if steps:
            finetune_mc(model, train_ex, vocab, n_frames, l_max, steps,
                        batch_size, lr, seed)
        return {"accuracy": evaluate_mc(model, eval_ex, vocab, n_frames, l_max)}

    if task == "open_qa":
        train_ex = build_open_qa(train_clips)
        eval_ex = build_open_qa(measured)
        space = default_answer_space(train_ex)
        if steps:
            finetune_open_qa(model, train_ex, space, vocab, n_frames, l_max,
                             steps, batch_size, lr, seed)
        elif "open_qa" not in model.task_heads:
            model.add_task_head("open_qa", len(space))
        return {"accuracy": evaluate_open_qa(model, eval_ex, space, vocab,
                                             n_frames, l_max)}

    train_ex = build_fib(train_clips)
    eval_ex = build_fib(measured)
    space = default_answer_space(train_ex)
    if steps:
        finetune_fib(model, train_ex, space, vocab, n_frames, l_max, steps,
                     batch_size, lr, seed)
    elif "fib" not in model.task_heads:
        model.add_task_head("fib", len(space))
    return {"accuracy": evaluate_fib(model, eval_ex, space, vocab, n_frames, l_max)}


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

@dataclass
class AblationBudget:
    """Matched desk-scale budget shared by every arm of an ablation."""

    resolution: int = 32
    patch_size: int = 8
    n_frames: int = 4
    width: int = 64
    video_depth: int = 2
    fusion_depth: int = 2
    heads: int = 4
    vocab_size: int = 192
    codebook_size: int = 64
    n_combos: int = 12
    train_instances: int = 3
    pretrain_steps: int = 1100
    retrieval_steps: int = 900
    mc_steps: int = 450
    probe_steps: int = 300
    finetune_steps: int = 140
    tokenizer_steps: int = 500
    batch_size: int = 8
    lr: float = 1e-3


def _budget_model_config(budget: AblationBudget, variant: str) -> ModelConfig:
    return ModelConfig(
        width=budget.width, patch_size=budget.patch_size,
        grid_size=budget.resolution // budget.patch_size,
        t_max=budget.n_frames, l_max=16, vocab_size=budget.vocab_size,
        codebook_size=budget.codebook_size, code_dim=32,
        video_depth=budget.video_depth, video_heads=budget.heads,
        window=(2, 2, 2), shift=True, variant=variant,
        fusion_depth=budget.fusion_depth, fusion_heads=budget.heads)


def _budget_corpora(budget: AblationBudget, seed: int,
                    axes=("right", "down"), shapes=("square",)):
    """Direction-discriminative corpora: mirrored pairs, one shape family.

    Shape variety is kept out of the matching corpus so the scorer converges
    on the static attributes quickly and the residual discrimination is the
    temporal one.
    """
    train, evaluation = build_paired_corpora(
        budget.n_combos, budget.train_instances, 1, budget.n_frames,
        budget.resolution, derive_seed(seed, "ablation/corpora"),
        axes=axes, shapes=shapes)
    vocab = build_vocab([c.caption for c in train]
                        + [PROBE_QUESTION, MC_QUESTION], budget.vocab_size)
    return train, evaluation, vocab


def run_video_encoding_ablation(seeds: list[int],
                                budget: AblationBudget | None = None) -> dict:
    """Mean vs Concat vs full spatio-temporal encoding under matched budgets.

    Per arm and seed: pretrain once on the direction-discriminative corpus,
    then finetune retrieval, caption multiple-choice, and a left-or-right
    motion-direction probe from the same pretrained weights, evaluating each
    on held-out mirrored pairs.
    """
    import copy

    budget = budget or AblationBudget()
    arms = ("mean", "concat", "vt")
    results = {arm: {"r@1": [], "mcqa": [], "probe": []} for arm in arms}
    for seed in seeds:
        train, evaluation, vocab = _budget_corpora(budget, seed)
        # The probe uses horizontal motion only, so the visible motion axis
        # carries no direction information; see tasks.PROBE_OPTIONS.
        # All shape families are fine here: the probe text never names them.
        probe_train_clips, probe_eval_clips = build_paired_corpora(
            budget.n_combos, budget.train_instances, 1, budget.n_frames,
            budget.resolution, derive_seed(seed, "ablation/probe"),
            axes=("right",))
        probe_train = build_direction_probe(probe_train_clips)
        probe_eval = build_direction_probe(probe_eval_clips)
        mc_train = build_caption_mc(train, 5, derive_seed(seed, "ablation/mc-train"))
        mc_eval = build_caption_mc(evaluation, 5, derive_seed(seed, "ablation/mc-eval"))
        tokenizer = _budget_tokenizer(budget, seed, train)
        l_max = 16
        for arm in arms:
            base, _ = _pretrain_arm(budget, seed, "bm+am", "mvm", train, vocab,
                                    tokenizer, variant=arm)
            model = copy.deepcopy(base)
            finetune_retrieval(model, train, vocab, budget.n_frames, l_max,
                               budget.retrieval_steps, budget.batch_size,
                               budget.lr, seed)
            results[arm]["r@1"].append(
                evaluate_retrieval(model, evaluation, vocab, budget.n_frames,
                                   l_max)["r@1"])

            model = copy.deepcopy(base)
            finetune_mc(model, mc_train, vocab, budget.n_frames, l_max,
                        budget.mc_steps, 6, budget.lr, seed)
            results[arm]["mcqa"].append(
                evaluate_mc(model, mc_eval, vocab, budget.n_frames, l_max))

            model = copy.deepcopy(base)
            finetune_mc(model, probe_train, vocab, budget.n_frames, l_max,
                        budget.probe_steps, budget.batch_size, budget.lr, seed)
            results[arm]["probe"].append(
                evaluate_mc(model, probe_eval, vocab, budget.n_frames, l_max))
    for arm in arms:
        for key in ("r@1", "mcqa", "probe"):
            results[arm][f"mean_{key}"] = float(np.mean(results[arm][key]))
    return results


def _pretrain_arm(budget: AblationBudget, seed: int, strategy: str,
                  mvm_variant: str, train: list[VideoClip], vocab: Vocabulary,
                  tokenizer: VisualTokenizer | None,
                  steps: int | None = None,
                  lambdas: tuple[float, float, float] = (1.0, 1.0, 1.0),
                  variant: str = "vt"):
    cfg = ExperimentConfig(
        seed=seed, n_frames=budget.n_frames, batch_size=budget.batch_size,
        data=DataConfig(n_clips=len(train), frames_per_clip=budget.n_frames,
                        resolution=budget.resolution),
        tokenizer=TokenizerTrainConfig(codebook_size=budget.codebook_size,
                                       steps=budget.tokenizer_steps),
        model=_budget_model_config(budget, variant),
        pretrain=PretrainConfig(strategy=strategy, mvm_variant=mvm_variant,
                                lambda_mlm=lambdas[0], lambda_vtm=lambdas[1],
                                lambda_mvm=lambdas[2]),
        optimizer=OptimizerConfig(lr=budget.lr),
        stages=[StageConfig("main", steps if steps is not None else budget.pretrain_steps)])
    model, vocab, trace = run_pretrain(cfg, tokenizer=tokenizer, corpus=train,
                                       vocab=vocab)
    return model, trace


def evaluate_mvm_accuracy(model: VidLangModel, tokenizer: VisualTokenizer,
                          clips: list[VideoClip], vocab: Vocabulary,
                          n_frames: int, seed: int = 123) -> float:
    """Masked visual-token accuracy on clips under fixed random masking."""
    batch = clips_to_batch(clips, vocab, n_frames, model.cfg.l_max)
    rng = np.random.default_rng(seed)
    g = model.cfg.grid_size
    dims = (n_frames, g, g)
    mask = np.stack([random_video_mask(dims, rng).mask for _ in range(len(clips))])
    mask_t = torch.from_numpy(mask)
    from .masking import apply_video_mask_to_frames
    masked = apply_video_mask_to_frames(batch.frames, mask_t, model.cfg.patch_size)
    with torch.no_grad():
        features = model(masked, batch.text_ids, batch.text_flags)
        h_v = features.video.reshape(len(clips), n_frames, g * g, -1)
        grid = tokenizer.tokenize_batch(batch.frames).reshape(len(clips), n_frames, g * g)
        _, accuracy = mvm_loss(h_v, mask_t.reshape(len(clips), n_frames, g * g),
                               grid, model.head_mvm)
    return accuracy


def run_masking_ablation(seeds: list[int], budget: AblationBudget | None = None,
                         arms=("random", "bm", "am", "bm+am")) -> dict:
    """Masking strategies compared by held-out zero-shot retrieval R@5."""
    budget = budget or AblationBudget()
    results = {arm: {"r@5": []} for arm in arms}
    for seed in seeds:
        train, evaluation, vocab = _budget_corpora(budget, seed)
        tokenizer = _budget_tokenizer(budget, seed, train)
        for arm in arms:
            model, _ = _pretrain_arm(budget, seed, arm, "mvm", train, vocab, tokenizer)
            metrics = evaluate_retrieval(model, evaluation, vocab,
                                         budget.n_frames, model.cfg.l_max,
                                         zero_shot=True)
            results[arm]["r@5"].append(metrics["r@5"])
    for arm in arms:
        results[arm]["mean_r@5"] = float(np.mean(results[arm]["r@5"]))
    return results


def _budget_tokenizer(budget: AblationBudget, seed: int,
                      train: list[VideoClip]) -> VisualTokenizer:
    frames = np.concatenate([c.frames for c in train])
    tok, _ = train_tokenizer(frames, budget.codebook_size, budget.tokenizer_steps,
                             seed=derive_seed(seed, "ablation/tokenizer"),
                             patch_size=budget.patch_size)
    return tok


def run_mvm_ablation(seeds: list[int], budget: AblationBudget | None = None,
                     arms=("off", "mvm")) -> dict:
    """Pretraining with vs without masked visual-token modeling."""
    budget = budget or AblationBudget()
    results = {arm: {"r@5": []} for arm in arms}
    for seed in seeds:
        train, evaluation, vocab = _budget_corpora(budget, seed)
        tokenizer = _budget_tokenizer(budget, seed, train)
        for arm in arms:
            model, _ = _pretrain_arm(budget, seed, "bm+am", arm, train, vocab,
                                     tokenizer if arm != "off" else None)
            metrics = evaluate_retrieval(model, evaluation, vocab,
                                         budget.n_frames, model.cfg.l_max,
                                         zero_shot=True)
            results[arm]["r@5"].append(metrics["r@5"])
    for arm in arms:
        results[arm]["mean_r@5"] = float(np.mean(results[arm]["r@5"]))
    return results


def run_mvm_fraction_sweep(seeds: list[int], fractions=(0.25, 0.5, 1.0),
                           budget: AblationBudget | None = None) -> list[dict]:
    """Visual-token-only pretraining on corpus fractions.

    Per fraction: pretrain with only the masked visual objective, record its
    held-out token accuracy, then finetune retrieval briefly and record R@5.
    """
    budget = budget or AblationBudget()
    records = []
    for fraction in fractions:
        accs, r5s = [], []
        for seed in seeds:
            train, evaluation, vocab = _budget_corpora(budget, seed)
            tokenizer = _budget_tokenizer(budget, seed, train)
            # Keep mirrored pairs together when truncating.
            n_keep = max(2, int(round(len(train) * fraction)) // 2 * 2)
            subset = train[:n_keep]
            model, _ = _pretrain_arm(budget, seed, "bm", "mvm", subset, vocab,
                                     tokenizer, lambdas=(0.0, 0.0, 1.0))
            accs.append(evaluate_mvm_accuracy(model, tokenizer, evaluation,
                                              vocab, budget.n_frames))
            finetune_retrieval(model, train, vocab, budget.n_frames,
                               model.cfg.l_max, budget.finetune_steps,
                               budget.batch_size, budget.lr, seed)
            r5s.append(evaluate_retrieval(model, evaluation, vocab,
                                          budget.n_frames, model.cfg.l_max)["r@5"])
        records.append({"fraction": fraction,
                        "mvm_accuracy": float(np.mean(accs)),
                        "r@5": float(np.mean(r5s))})
    return records


def run_ablation(axis: str, seeds: list[int],
                 budget: AblationBudget | None = None) -> dict:
    """Dispatch one ablation axis; returns the comparison table."""
    if axis == "video_encoding":
        return run_video_encoding_ablation(seeds, budget)
    if axis == "masking":
        return run_masking_ablation(seeds, budget)
    if axis == "mvm_variant":
        return run_mvm_ablation(seeds, budget, arms=("off", "mvm", "mfm"))
    raise ConfigError(f"unknown ablation axis {axis!r}")
