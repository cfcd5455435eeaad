"""Shared numeric oracles for the test suite.

These stay deliberately independent of the package implementations: ranks
are counted quadratically, gradients come from central differences, and the
reward oracle enumerates outcomes directly.
"""

import math

import torch


def central_difference_grads(fn, tensors, eps=1e-3):
    """Numerical gradient of the scalar fn() w.r.t. every tensor element."""
    grads = []
    for tensor in tensors:
        grad = torch.zeros_like(tensor)
        flat = tensor.data.view(-1)
        grad_flat = grad.view(-1)
        for index in range(flat.numel()):
            original = flat[index].item()
            with torch.no_grad():
                flat[index] = original + eps
                high = float(fn())
                flat[index] = original - eps
                low = float(fn())
                flat[index] = original
            grad_flat[index] = (high - low) / (2.0 * eps)
        grads.append(grad)
    return grads


def max_relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """Largest deviation relative to the gradient scale (max magnitude)."""
    scale = max(float(analytic.abs().max()), float(numeric.abs().max()), 1e-8)
    return float((analytic - numeric).abs().max()) / scale


def rank_oracle(values):
    """Quadratic averaged ranks: 1 + #smaller + (#equal - 1) / 2."""
    ranks = []
    for value in values:
        smaller = sum(1 for other in values if other < value)
        equal = sum(1 for other in values if other == value)
        ranks.append(1.0 + smaller + (equal - 1) / 2.0)
    return ranks


def pearson_oracle(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    vx = sum((x - mx) ** 2 for x in xs)
    vy = sum((y - my) ** 2 for y in ys)
    if vx == 0 or vy == 0:
        return None
    return cov / math.sqrt(vx * vy)


def spearman_oracle(xs, ys):
    return pearson_oracle(rank_oracle(xs), rank_oracle(ys))


def reward_oracle(gold, pred, z1, z2):
    """Direct transcription of the signed-gap mean over non-tie pairs."""
    total = 0.0
    count = 0
    for g, p, a, b in zip(gold, pred, z1, z2):
        if g == 0:
            continue
        count += 1
        gap = abs(a - b)
        total += gap if p == g else -gap
    return None if count == 0 else total / count


# ---------------------------------------------------------------------------
# synthetic corpora for engine-level tests

import random as _random

from headline_humor.corpus import HeadlineInstance, PairInstance

_WORDS = (
    "cat dog tree car bird house boat lamp fish coat storm river cloud "
    "piano robot candle garden rocket monkey donkey turnip wizard anchor "
    "basket cradle dragon engine falcon goblet hammer island jacket kettle "
    "ladder mirror needle orchid pebble quiver ribbon saddle teapot umpire "
    "violin walnut anthem bridge circus drawer eagle flute grape helmet "
    "igloo jungle kayak lantern magnet nutmeg onion parrot quarry raft "
    "spoon tunnel urchin vessel whale yarn zebra apron badge canyon"
).split()


def synth_task1(n, seed=0):
    """Labeled micro-edit instances; edit words stay distinct while the pool
    lasts so features separate cleanly."""
    rng = _random.Random(seed)
    edit_pool = list(_WORDS)
    rng.shuffle(edit_pool)
    instances = []
    for i in range(n):
        left = rng.sample(_WORDS, 2)
        right = rng.sample(_WORDS, 2)
        original = rng.choice(_WORDS)
        edit = edit_pool.pop() if edit_pool else rng.choice(_WORDS)
        text = f"{left[0]} {left[1]} <{original}/> {right[0]} {right[1]}"
        instances.append(
            HeadlineInstance(str(1000 + i), text, edit, round(rng.uniform(0, 3), 2))
        )
    return instances


def synth_task2(n, seed=0, tie_every=7):
    rng = _random.Random(seed)
    singles = synth_task1(2 * n, seed=seed + 1)
    pairs = []
    for k in range(n):
        first, second = singles[2 * k], singles[2 * k + 1]
        if tie_every and k % tie_every == tie_every - 1:
            second = HeadlineInstance(
                second.id, second.original_text, second.edit_word, first.mean_grade
            )
            label = 0
        else:
            label = 1 if first.mean_grade >= second.mean_grade else 2
        pairs.append(PairInstance(first, second, label))
    return pairs


def write_embedding_file(path, dimension=16, seed=0, words=_WORDS):
    """Random but reproducible word vectors in the text format, [MASK] excluded."""
    rng = _random.Random(seed)
    lines = []
    for word in words:
        values = " ".join(repr(rng.uniform(-1, 1)) for _ in range(dimension))
        lines.append(f"{word} {values}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_task1_csv(path, instances):
    lines = ["id,original,edit,grades,meanGrade"]
    for inst in instances:
        grade = "" if inst.mean_grade is None else inst.mean_grade
        lines.append(f'{inst.id},"{inst.original_text}",{inst.edit_word},,{grade}')
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_task2_csv(path, pairs):
    lines = [
        "id,original1,edit1,grades1,meanGrade1,original2,edit2,grades2,meanGrade2,label"
    ]
    for pair in pairs:
        a, b = pair.first, pair.second
        label = "" if pair.label is None else pair.label
        ga = "" if a.mean_grade is None else a.mean_grade
        gb = "" if b.mean_grade is None else b.mean_grade
        lines.append(
            f'{a.id}-{b.id},"{a.original_text}",{a.edit_word},,{ga},'
            f'"{b.original_text}",{b.edit_word},,{gb},{label}'
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
