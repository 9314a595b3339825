"""Toy downstream task construction and training/eval loops.

Builds retrieval, multiple-choice QA, open-ended QA, fill-in-blank, and a
motion-direction probe from the synthetic corpus. The probe and the
retrieval splits are built from mirrored clip pairs (a clip and its exact
time reversal with the opposite direction word), so captions can only be
resolved by using temporal order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import (LINEAR_DIRECTIONS, VideoClip, generate_directed_clip,
                   reverse_clip, sample_frames)
from .downstream import (AnswerSpace, blank_position, build_answer_space,
                         compose_question_option, recall_at_k, score_matrix)
from .model import VidLangModel
from .pretraining import PairBatch, vtm_loss
from .seeding import derive_seed, derived_rng
from .text import Vocabulary, pad_sequence, tokenize_text

MC_QUESTION = "what is happening"
PROBE_QUESTION = "which direction does it move"
# Single-axis options: the motion axis is visible without temporal order, so
# a probe mixing axes would let an order-blind model guess within-axis. With
# one axis, an order-blind model sits exactly at one-of-two chance.
PROBE_OPTIONS = ["left", "right"]

OPEN_QA_TEMPLATES = (
    ("what color is the shape", "color"),
    ("what shape is moving", "shape"),
    ("which way does it move", "direction"),
)


def clip_frames_tensor(clip: VideoClip, n_frames: int) -> torch.Tensor:
    return torch.from_numpy(sample_frames(clip, n_frames).frames)


def clips_to_batch(clips: list[VideoClip], vocab: Vocabulary, n_frames: int,
                   l_max: int) -> PairBatch:
    frames = torch.stack([clip_frames_tensor(c, n_frames) for c in clips])
    seqs = [pad_sequence(tokenize_text(c.caption, vocab), l_max) for c in clips]
    return PairBatch(
        frames=frames,
        text_ids=torch.from_numpy(np.stack([s.ids for s in seqs])),
        text_flags=torch.from_numpy(np.stack([s.flags for s in seqs])),
        clip_ids=[c.clip_id for c in clips],
    )


def iterate_batches(corpus: list[VideoClip], vocab: Vocabulary, n_frames: int,
                    l_max: int, batch_size: int, rng: np.random.Generator):
    """Endless shuffled batches over the corpus."""
    while True:
        order = rng.permutation(len(corpus))
        for lo in range(0, len(corpus) - batch_size + 1, batch_size):
            yield clips_to_batch([corpus[i] for i in order[lo:lo + batch_size]],
                                 vocab, n_frames, l_max)


def build_mirrored_pairs(n_pairs: int, n_frames: int, resolution: int, seed: int,
                         axes: tuple[str, ...] = ("right", "down", "clockwise"),
                         ) -> list[tuple[VideoClip, VideoClip]]:
    """Mirrored clip pairs with distinct (shape, color, axis) programs.

    Each pair is a single-shape clip plus its exact time reversal; the two
    captions differ only in the direction word.
    """
    from .data import COLORS, SHAPES

    combos = [(s, c, a) for s in SHAPES for c in COLORS for a in axes]
    if n_pairs > len(combos):
        raise ValueError(f"at most {len(combos)} distinct pairs available")
    rng = derived_rng(seed, "mirrored-pairs")
    picked = [combos[i] for i in rng.permutation(len(combos))[:n_pairs]]
    pairs = []
    for i, (shape, color, axis) in enumerate(picked):
        clip_seed = derive_seed(seed, f"mirrored-pairs/{i}")
        base = generate_directed_clip(clip_seed, f"pair{i:04d}a", n_frames,
                                      resolution, axis, shape=shape, color=color)
        pairs.append((base, reverse_clip(base, f"pair{i:04d}b")))
    return pairs


def build_paired_corpora(n_combos: int, train_instances: int, eval_instances: int,
                         n_frames: int, resolution: int, seed: int,
                         axes: tuple[str, ...] = ("right", "down", "clockwise"),
                         shapes: tuple[str, ...] | None = None):
    """Train and held-out corpora of mirrored pairs over shared programs.

    The held-out clips reuse the training (shape, color, axis) combos with
    freshly sampled geometry, so evaluation measures recognition of familiar
    programs in new positions rather than unseen attribute composition.
    Within each split, captions are unique per instance slot, which keeps the
    retrieval diagonal well defined.
    """
    from .data import COLORS, SHAPES

    if shapes is None:
        shapes = SHAPES
    combos = [(s, c, a) for s in shapes for c in COLORS for a in axes]
    if n_combos > len(combos):
        raise ValueError(f"at most {len(combos)} distinct combos available")
    rng = derived_rng(seed, "paired-corpora")
    picked = [combos[i] for i in rng.permutation(len(combos))[:n_combos]]

    def make(split: str, instance: int, idx: int, combo) -> list[VideoClip]:
        shape, color, axis = combo
        clip_seed = derive_seed(seed, f"paired/{split}/{idx}/{instance}")
        base = generate_directed_clip(clip_seed, f"{split}{idx:03d}i{instance}a",
                                      n_frames, resolution, axis,
                                      shape=shape, color=color)
        return [base, reverse_clip(base, f"{split}{idx:03d}i{instance}b")]

    train = [clip for inst in range(train_instances)
             for idx, combo in enumerate(picked)
             for clip in make("train", inst, idx, combo)]
    heldout = [clip for inst in range(eval_instances)
               for idx, combo in enumerate(picked)
               for clip in make("eval", inst, idx, combo)]
    return train, heldout


def flatten_pairs(pairs: list[tuple[VideoClip, VideoClip]]) -> list[VideoClip]:
    return [clip for pair in pairs for clip in pair]


# ---------------------------------------------------------------------------
# Retrieval
# ---------------------------------------------------------------------------

def flip_direction_words(caption: str) -> str:
    from .data import OPPOSITE_DIRECTION
    return " ".join(OPPOSITE_DIRECTION.get(w, w) for w in caption.split())


def _task_optimizer(model: VidLangModel, lr: float, steps: int):
    """AdamW plus a cosine schedule; annealing to zero stabilizes the small
    finetunes enough to compare ablation arms across seeds."""
    opt = torch.optim.AdamW(model.parameters(), lr=lr, betas=(0.9, 0.98),
                            weight_decay=1e-3)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(steps, 1))
    return opt, sched


def finetune_retrieval(model: VidLangModel, train_clips: list[VideoClip],
                       vocab: Vocabulary, n_frames: int, l_max: int,
                       steps: int, batch_size: int, lr: float, seed: int,
                       rolled_weight: float = 0.3,
                       flipped_weight: float = 1.0) -> None:
    """Train the retrieval scorer end to end.

    Two mismatched pairings per step: another clip's caption (rolled within
    the batch, binary loss) and the clip's own caption with its direction
    words flipped. The flipped caption differs from the positive in the
    direction word alone, so it is scored against the positive as a pairwise
    contrast: shared attribute terms cancel in the logit difference, which is
    what lets the scorer pick up temporal order at this scale. Captions
    without direction words drop out of the contrast term.
    """
    if "t2v" not in model.task_heads:
        model.init_retrieval_head_from_vtm()
    opt, sched = _task_optimizer(model, lr, steps)
    rng = derived_rng(seed, "finetune/retrieval")
    caption_of = {c.clip_id: c.caption for c in train_clips}
    batches = iterate_batches(train_clips, vocab, n_frames, l_max, batch_size, rng)
    for _ in range(steps):
        batch = next(batches)
        features = model(batch.frames, batch.text_ids, batch.text_flags)
        pos = model.match_logits(features, head="t2v")
        shift = int(rng.integers(1, len(batch)))
        neg_features = model(batch.frames,
                             torch.roll(batch.text_ids, shift, dims=0),
                             torch.roll(batch.text_flags, shift, dims=0))
        loss = rolled_weight * vtm_loss(pos, model.match_logits(neg_features,
                                                                head="t2v"))
        flipped = [flip_direction_words(caption_of[i]) for i in batch.clip_ids]
        live = [i for i, (flip, cid) in enumerate(zip(flipped, batch.clip_ids))
                if flip != caption_of[cid]]
        if live and flipped_weight:
            ids, flags = _text_batch([flipped[i] for i in live], vocab, l_max)
            flip_features = model(batch.frames[live], ids, flags)
            flip_logits = model.match_logits(flip_features, head="t2v")
            contrast = torch.nn.functional.softplus(flip_logits - pos[live])
            loss = loss + flipped_weight * contrast.mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()


def evaluate_retrieval(model: VidLangModel, eval_clips: list[VideoClip],
                       vocab: Vocabulary, n_frames: int, l_max: int,
                       ks=(1, 5), zero_shot: bool = False) -> dict:
    batch = clips_to_batch(eval_clips, vocab, n_frames, l_max)
    scores = score_matrix(model, batch.frames, batch.text_ids, batch.text_flags,
                          zero_shot=zero_shot)
    return {f"r@{k}": recall_at_k(scores, k) for k in ks}


# ---------------------------------------------------------------------------
# Multiple-choice QA
# ---------------------------------------------------------------------------

@dataclass
class McExample:
    clip: VideoClip
    question: str
    options: list[str]
    answer: int


def build_caption_mc(clips: list[VideoClip], n_options: int, seed: int) -> list[McExample]:
    """Pick-the-caption task; the time-reversed caption is always a distractor
    when present in the pool, which makes direction load-bearing."""
    rng = derived_rng(seed, "caption-mc")
    captions = [c.caption for c in clips]
    examples = []
    for i, clip in enumerate(clips):
        reversed_caption = reverse_clip(clip).caption
        distractors = [reversed_caption] if reversed_caption in captions else []
        pool = [c for c in captions if c != clip.caption and c not in distractors]
        need = n_options - 1 - len(distractors)
        distractors += [pool[j] for j in rng.permutation(len(pool))[:need]]
        options = distractors + [clip.caption]
        order = rng.permutation(len(options))
        options = [options[j] for j in order]
        examples.append(McExample(clip, MC_QUESTION, options,
                                  options.index(clip.caption)))
    return examples


def build_direction_probe(clips: list[VideoClip]) -> list[McExample]:
    """Left-or-right direction question over horizontally moving clips."""
    examples = []
    for clip in clips:
        direction = clip.caption.split()[-1]
        if direction not in PROBE_OPTIONS:
            raise ValueError(f"probe needs horizontal motion, got {direction!r}")
        examples.append(McExample(clip, PROBE_QUESTION, list(PROBE_OPTIONS),
                                  PROBE_OPTIONS.index(direction)))
    return examples


def _mc_option_batch(examples: list[McExample], vocab: Vocabulary, n_frames: int,
                     l_max: int):
    n_opt = len(examples[0].options)
    seqs = [compose_question_option(ex.question, opt, vocab, l_max)
            for ex in examples for opt in ex.options]
    ids = torch.from_numpy(np.stack([s.ids for s in seqs]))
    flags = torch.from_numpy(np.stack([s.flags for s in seqs]))
    frames = torch.stack([clip_frames_tensor(ex.clip, n_frames) for ex in examples])
    frames = frames.repeat_interleave(n_opt, dim=0)
    answers = torch.tensor([ex.answer for ex in examples], dtype=torch.int64)
    return frames, ids, flags, answers, n_opt


def finetune_mc(model: VidLangModel, examples: list[McExample], vocab: Vocabulary,
                n_frames: int, l_max: int, steps: int, batch_size: int,
                lr: float, seed: int) -> None:
    """Cross-entropy over option scores, trained end to end."""
    if "mc" not in model.task_heads:
        model.add_task_head("mc", 1)
    opt, sched = _task_optimizer(model, lr, steps)
    rng = derived_rng(seed, "finetune/mc")
    for _ in range(steps):
        idx = rng.choice(len(examples), size=min(batch_size, len(examples)),
                         replace=False)
        chosen = [examples[int(i)] for i in idx]
        frames, ids, flags, answers, n_opt = _mc_option_batch(
            chosen, vocab, n_frames, l_max)
        features = model(frames, ids, flags)
        logits = model.task_heads["mc"](features.cls).reshape(len(chosen), n_opt)
        loss = torch.nn.functional.cross_entropy(logits, answers)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()


@torch.no_grad()
def evaluate_mc(model: VidLangModel, examples: list[McExample], vocab: Vocabulary,
                n_frames: int, l_max: int, batch_size: int = 8) -> float:
    hits = 0
    for lo in range(0, len(examples), batch_size):
        chosen = examples[lo:lo + batch_size]
        frames, ids, flags, answers, n_opt = _mc_option_batch(
            chosen, vocab, n_frames, l_max)
        features = model(frames, ids, flags)
        logits = model.task_heads["mc"](features.cls).reshape(len(chosen), n_opt)
        hits += int((logits.argmax(dim=1) == answers).sum())
    return hits / len(examples)


# ---------------------------------------------------------------------------
# Open-ended QA and fill-in-the-blank
# ---------------------------------------------------------------------------

@dataclass
class OpenQaExample:
    clip: VideoClip
    question: str
    answer: str


def build_open_qa(clips: list[VideoClip]) -> list[OpenQaExample]:
    """Attribute questions over single-shape clips; answers are single words."""
    examples = []
    for clip in clips:
        words = clip.caption.split()
        if len(words) != 5:
            continue  # multi-shape captions have no single answer
        _, color, shape, _, direction = words
        values = {"color": color, "shape": shape, "direction": direction}
        for question, key in OPEN_QA_TEMPLATES:
            examples.append(OpenQaExample(clip, question, values[key]))
    return examples


@dataclass
class FibExample:
    clip: VideoClip
    text_with_blank: str
    answer: str


def build_fib(clips: list[VideoClip]) -> list[FibExample]:
    """Blank out the direction word of single-shape captions."""
    examples = []
    for clip in clips:
        words = clip.caption.split()
        if len(words) != 5:
            continue
        direction = words[-1]
        examples.append(FibExample(
            clip, " ".join(words[:-1] + ["[BLANK]"]), direction))
    return examples


def _text_batch(texts: list[str], vocab: Vocabulary, l_max: int):
    seqs = [pad_sequence(tokenize_text(t, vocab), l_max) for t in texts]
    return (torch.from_numpy(np.stack([s.ids for s in seqs])),
            torch.from_numpy(np.stack([s.flags for s in seqs])))


def finetune_open_qa(model: VidLangModel, examples: list[OpenQaExample],
                     answer_space: AnswerSpace, vocab: Vocabulary, n_frames: int,
                     l_max: int, steps: int, batch_size: int, lr: float,
                     seed: int) -> None:
    if "open_qa" not in model.task_heads:
        model.add_task_head("open_qa", len(answer_space))
    opt, sched = _task_optimizer(model, lr, steps)
    rng = derived_rng(seed, "finetune/open_qa")
    for _ in range(steps):
        idx = rng.choice(len(examples), size=min(batch_size, len(examples)),
                         replace=False)
        chosen = [examples[int(i)] for i in idx]
        frames = torch.stack([clip_frames_tensor(ex.clip, n_frames) for ex in chosen])
        ids, flags = _text_batch([ex.question for ex in chosen], vocab, l_max)
        targets = torch.tensor([answer_space.id_of(ex.answer) for ex in chosen])
        features = model(frames, ids, flags)
        logits = model.task_heads["open_qa"](features.cls)
        loss = torch.nn.functional.cross_entropy(logits, targets)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()


@torch.no_grad()
def evaluate_open_qa(model: VidLangModel, examples: list[OpenQaExample],
                     answer_space: AnswerSpace, vocab: Vocabulary, n_frames: int,
                     l_max: int, batch_size: int = 16) -> float:
    hits = 0
    for lo in range(0, len(examples), batch_size):
        chosen = examples[lo:lo + batch_size]
        frames = torch.stack([clip_frames_tensor(ex.clip, n_frames) for ex in chosen])
        ids, flags = _text_batch([ex.question for ex in chosen], vocab, l_max)
        features = model(frames, ids, flags)
        preds = model.task_heads["open_qa"](features.cls).argmax(dim=1)
        targets = torch.tensor([answer_space.id_of(ex.answer) for ex in chosen])
        hits += int((preds == targets).sum())
    return hits / len(examples)


def finetune_fib(model: VidLangModel, examples: list[FibExample],
                 answer_space: AnswerSpace, vocab: Vocabulary, n_frames: int,
                 l_max: int, steps: int, batch_size: int, lr: float,
                 seed: int) -> None:
    if "fib" not in model.task_heads:
        model.add_task_head("fib", len(answer_space))
    opt, sched = _task_optimizer(model, lr, steps)
    rng = derived_rng(seed, "finetune/fib")
    for _ in range(steps):
        idx = rng.choice(len(examples), size=min(batch_size, len(examples)),
                         replace=False)
        chosen = [examples[int(i)] for i in idx]
        frames = torch.stack([clip_frames_tensor(ex.clip, n_frames) for ex in chosen])
        ids, flags = _text_batch([ex.text_with_blank for ex in chosen], vocab, l_max)
        positions = [blank_position(ids[b]) for b in range(len(chosen))]
        targets = torch.tensor([answer_space.id_of(ex.answer) for ex in chosen])
        features = model(frames, ids, flags)
        rows = features.text[torch.arange(len(chosen)), positions]
        logits = model.task_heads["fib"](rows)
        loss = torch.nn.functional.cross_entropy(logits, targets)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()


@torch.no_grad()
def evaluate_fib(model: VidLangModel, examples: list[FibExample],
                 answer_space: AnswerSpace, vocab: Vocabulary, n_frames: int,
                 l_max: int, batch_size: int = 16) -> float:
    hits = 0
    for lo in range(0, len(examples), batch_size):
        chosen = examples[lo:lo + batch_size]
        frames = torch.stack([clip_frames_tensor(ex.clip, n_frames) for ex in chosen])
        ids, flags = _text_batch([ex.text_with_blank for ex in chosen], vocab, l_max)
        positions = [blank_position(ids[b]) for b in range(len(chosen))]
        features = model(frames, ids, flags)
        rows = features.text[torch.arange(len(chosen)), positions]
        preds = model.task_heads["fib"](rows).argmax(dim=1)
        targets = torch.tensor([answer_space.id_of(ex.answer) for ex in chosen])
        hits += int((preds == targets).sum())
    return hits / len(examples)


def default_answer_space(examples) -> AnswerSpace:
    answers = [ex.answer if isinstance(ex.answer, str) else str(ex.answer)
               for ex in examples]
    return build_answer_space(answers, len(set(answers)))
