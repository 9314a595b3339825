"""Downstream heads and metrics: retrieval scoring, multiple-choice QA,
open-ended QA, fill-in-the-blank, recall at K, and accuracy."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError
from .model import VidLangModel
from .text import BLANK_ID, SEP_ID, TextSequence, Vocabulary, pad_sequence, tokenize_text

# Answer-vocabulary sizes used by the reference open-ended benchmarks.
ANSWER_SPACE_PRESETS = {
    "tgif-frame": 1540,
    "msrvtt-qa": 1500,
    "msvd-qa": 1000,
    "lsmdc-fib": 908,
}


@dataclass
class AnswerSpace:
    """Bijection between answer strings and class ids."""

    answers: list[str]

    def __post_init__(self):
        self.index = {a: i for i, a in enumerate(self.answers)}
        if len(self.index) != len(self.answers):
            raise ConfigError("duplicate answers in answer space")

    def __len__(self) -> int:
        return len(self.answers)

    def id_of(self, answer: str) -> int:
        return self.index[answer]


def build_answer_space(train_answers: list[str], size: int) -> AnswerSpace:
    """Top answers by training-split frequency; ties break lexicographically."""
    if not train_answers:
        raise ConfigError("no training answers given")
    counts = Counter(train_answers)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return AnswerSpace([a for a, _ in ranked[:size]])


def recall_at_k(scores: np.ndarray, k: int) -> float:
    """Fraction of texts whose true (diagonal) video ranks in the top k.

    Ties are broken in favor of the lower video index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n_text, n_video = scores.shape
    if not 1 <= k <= n_video:
        raise ValueError(f"k={k} out of range for {n_video} videos")
    hits = 0
    for i in range(n_text):
        row, true = scores[i], scores[i, i]
        rank = 1 + int((row > true).sum()) + int(((row == true) & (np.arange(n_video) < i)).sum())
        hits += rank <= k
    return hits / n_text


def retrieval_score(model: VidLangModel, frames: torch.Tensor, text_ids: torch.Tensor,
                    text_flags: torch.Tensor, zero_shot: bool = False) -> torch.Tensor:
    """Sigmoid match score per pair; zero-shot scores with the pretrain
    match head, otherwise with the finetuned retrieval head."""
    head = "vtm" if zero_shot or "t2v" not in model.task_heads else "t2v"
    return model.match_scores(frames, text_ids, text_flags, head=head)


@torch.no_grad()
def score_matrix(model: VidLangModel, video_frames: torch.Tensor,
                 text_ids: torch.Tensor, text_flags: torch.Tensor,
                 zero_shot: bool = False, batch_size: int = 32) -> np.ndarray:
    """(n_text, n_video) match scores; the scorer is pairwise by design."""
    n_video = video_frames.shape[0]
    n_text = text_ids.shape[0]
    out = np.empty((n_text, n_video), dtype=np.float64)
    for i in range(n_text):
        ids = text_ids[i].expand(n_video, -1)
        flags = text_flags[i].expand(n_video, -1)
        row = []
        for lo in range(0, n_video, batch_size):
            hi = min(lo + batch_size, n_video)
            row.append(retrieval_score(model, video_frames[lo:hi], ids[lo:hi],
                                       flags[lo:hi], zero_shot=zero_shot))
        out[i] = torch.cat(row).numpy()
    return out


def compose_question_option(question: str, option: str, vocab: Vocabulary,
                            l_max: int) -> TextSequence:
    """Build the Q + [SEP] + A token sequence for one answer option."""
    q = tokenize_text(question, vocab)
    a = tokenize_text(option, vocab)
    ids = np.concatenate([q.ids, [SEP_ID], a.ids])
    seq = TextSequence(ids.astype(np.int64), np.ones(len(ids), dtype=bool))
    return pad_sequence(seq, l_max)


@torch.no_grad()
def mc_qa_logits(model: VidLangModel, frames: torch.Tensor, question: str,
                 options: list[str], vocab: Vocabulary, l_max: int) -> np.ndarray:
    """Scalar score per option from one forward pass each."""
    if not options:
        raise ValueError("multiple-choice question needs at least one option")
    if "mc" not in model.task_heads:
        raise ConfigError("model has no multiple-choice head; add_task_head('mc', 1)")
    seqs = [compose_question_option(question, opt, vocab, l_max) for opt in options]
    ids = torch.from_numpy(np.stack([s.ids for s in seqs]))
    flags = torch.from_numpy(np.stack([s.flags for s in seqs]))
    batch_frames = frames[None].expand(len(options), *frames.shape)
    features = model(batch_frames, ids, flags)
    return model.task_heads["mc"](features.cls).squeeze(-1).numpy()


def mc_qa_score(model: VidLangModel, frames: torch.Tensor, question: str,
                options: list[str], vocab: Vocabulary, l_max: int) -> int:
    """Index of the highest-scoring option; ties go to the lowest index."""
    if len(options) < 2:
        raise ValueError("multiple-choice question needs at least two options")
    return int(np.argmax(mc_qa_logits(model, frames, question, options, vocab, l_max)))


@torch.no_grad()
def open_qa_logits(model: VidLangModel, frames: torch.Tensor, text_ids: torch.Tensor,
                   text_flags: torch.Tensor) -> torch.Tensor:
    if "open_qa" not in model.task_heads:
        raise ConfigError("model has no open-QA head; add_task_head('open_qa', A)")
    features = model(frames, text_ids, text_flags)
    return model.task_heads["open_qa"](features.cls)


def open_qa_predict(model: VidLangModel, frames: torch.Tensor, text_ids: torch.Tensor,
                    text_flags: torch.Tensor) -> int:
    logits = open_qa_logits(model, frames[None] if frames.ndim == 4 else frames,
                            text_ids[None], text_flags[None])
    return int(logits[0].argmax())


def blank_position(text_ids: torch.Tensor | np.ndarray) -> int:
    """Position of the single [BLANK] token; anything else is an error."""
    ids = np.asarray(text_ids)
    spots = np.nonzero(ids == BLANK_ID)[0]
    if len(spots) != 1:
        raise ValueError(f"expected exactly one [BLANK], found {len(spots)}")
    return int(spots[0])


@torch.no_grad()
def fib_logits(model: VidLangModel, frames: torch.Tensor, text_ids: torch.Tensor,
               text_flags: torch.Tensor) -> torch.Tensor:
    """Classify from the joint feature at the [BLANK] position (not [CLS])."""
    if "fib" not in model.task_heads:
        raise ConfigError("model has no fill-in-blank head; add_task_head('fib', A)")
    positions = [blank_position(text_ids[b]) for b in range(text_ids.shape[0])]
    features = model(frames, text_ids, text_flags)
    rows = features.text[torch.arange(len(positions)), positions]
    return model.task_heads["fib"](rows)


def fib_predict(model: VidLangModel, frames: torch.Tensor, text_ids: torch.Tensor,
                text_flags: torch.Tensor) -> int:
    logits = fib_logits(model, frames[None] if frames.ndim == 4 else frames,
                        text_ids[None], text_flags[None])
    return int(logits[0].argmax())


@dataclass
class EvalRecord:
    task: str
    metric: str
    value: float
    n: int


def write_eval_csv(records: list[EvalRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "metric", "value", "n"])
        for r in records:
            writer.writerow([r.task, r.metric, f"{r.value:.6f}", r.n])
