"""Experiment harness: interaction logs, example construction, recommendation.

Input examples are concatenations of per-modality sketch segments in a fixed,
recorded order (the layout); the layout travels with every checkpoint so a
model can refuse inputs whose wiring drifted. Two tasks are supported:

* session: predict the next item from the session so far. The input is two
  sketches per modality -- the last item alone, and the decayed aggregate of
  all earlier items -- both L2-normalized along the width axis.
* topk: predict held-out items from a user's shuffled 80% split, one
  L2-normalized sketch per modality (plus optional extra channels such as
  disliked items).
"""

from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .metrics import evaluate_session_points, evaluate_topk_points
from .model import ModelParams, forward, softmax_width
from .partition import CodesMatrix
from .sketch import Sketch, encode_items, normalize, decode_scores


@dataclass(frozen=True)
class Interaction:
    session_id: str
    item_id: str
    timestamp: float
    event_type: str = "interaction"
    weight: float = 1.0


class InteractionLog:
    """Time-ordered interaction records grouped into sessions.

    Within a session, records are sorted by timestamp (stable, so file order
    breaks ties); sessions keep their order of first appearance.
    """

    def __init__(self, records):
        records = list(records)
        for r in records:
            if r.weight < 0:
                raise ValueError(f"negative weight for item {r.item_id!r}")
        by_session: dict[str, list[Interaction]] = {}
        for r in records:
            by_session.setdefault(r.session_id, []).append(r)
        self._sessions = {
            sid: sorted(rows, key=lambda r: r.timestamp)
            for sid, rows in by_session.items()
        }

    @classmethod
    def load(cls, path) -> "InteractionLog":
        records = []
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            required = {"session_id", "item_id", "timestamp"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise ValueError(
                    f"{path}: header must contain session_id,item_id,timestamp"
                )
            for row in reader:
                records.append(Interaction(
                    session_id=row["session_id"],
                    item_id=row["item_id"],
                    timestamp=float(row["timestamp"]),
                    event_type=row.get("event_type") or "interaction",
                    weight=float(row.get("weight") or 1.0),
                ))
        return cls(records)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["session_id", "item_id", "timestamp", "event_type", "weight"])
            for sid, rows in self._sessions.items():
                for r in rows:
                    writer.writerow([sid, r.item_id, r.timestamp, r.event_type, r.weight])

    def sessions(self) -> dict[str, list[Interaction]]:
        return self._sessions

    def session_items(self) -> dict[str, list[str]]:
        return {sid: [r.item_id for r in rows] for sid, rows in self._sessions.items()}

    def item_ids(self) -> list[str]:
        seen = {r.item_id for rows in self._sessions.values() for r in rows}
        return sorted(seen)

    def __len__(self) -> int:
        return sum(len(rows) for rows in self._sessions.values())


@dataclass
class Example:
    """One training/evaluation example: concatenated input vector + target."""

    input: np.ndarray
    target: Sketch
    meta: dict = field(default_factory=dict)


def layout_dim(layout) -> int:
    return sum(depth * width for _, depth, width in layout)


def layout_slices(layout):
    """Yield (label, slice) pairs locating each segment in the input vector."""
    offset = 0
    for label, depth, width in layout:
        size = depth * width
        yield label, slice(offset, offset + size)
        offset += size


def session_layout(codes_by_modality: dict[str, CodesMatrix]) -> list[tuple]:
    layout = []
    for name, codes in codes_by_modality.items():
        layout.append((f"{name}/last", codes.depth, codes.width))
        layout.append((f"{name}/history", codes.depth, codes.width))
    return layout


def topk_layout(codes_by_modality: dict[str, CodesMatrix],
                extra_channels: dict[str, CodesMatrix] | None = None) -> list[tuple]:
    layout = [(f"{name}/items", codes.depth, codes.width)
              for name, codes in codes_by_modality.items()]
    for name, codes in (extra_channels or {}).items():
        layout.append((f"channel/{name}", codes.depth, codes.width))
    return layout


def _encoded_subset(codes: CodesMatrix, items, weights=None) -> tuple[Sketch, int]:
    """Aggregate the items known to ``codes``; returns (sketch, n_dropped)."""
    if weights is None:
        weights = [1.0] * len(items)
    kept_items, kept_weights = [], []
    for item, w in zip(items, weights):
        if item in codes:
            kept_items.append(item)
            kept_weights.append(w)
    sketch = encode_items(codes, kept_items, kept_weights)
    return sketch, len(items) - len(kept_items)


def build_session_example(items, codes_by_modality: dict[str, CodesMatrix],
                          alpha: float, w: float,
                          output_modality: str) -> tuple[Example | None, int]:
    """Example from one session sequence whose last item is the target.

    The input concatenates, per modality, the L2-normalized sketch of the
    last input item and the L2-normalized decayed aggregate of all earlier
    items; the decay weight of an item ``dt`` event steps before the last
    input item is ``alpha * w**dt``. Items unknown to a modality are dropped
    and counted. Returns ``(None, dropped)`` when the session is too short
    or the target is unknown to the output modality.
    """
    items = list(items)
    dropped = 0
    if len(items) < 2:
        return None, dropped
    target_item, chunk = items[-1], items[:-1]
    out_codes = codes_by_modality[output_modality]
    if target_item not in out_codes:
        return None, 1

    last = chunk[-1]
    earlier = chunk[:-1]
    decay_weights = [alpha * w ** (len(chunk) - 1 - j) for j in range(len(earlier))]

    segments = []
    for codes in codes_by_modality.values():
        last_sketch, d1 = _encoded_subset(codes, [last])
        hist_sketch, d2 = _encoded_subset(codes, earlier, decay_weights)
        dropped += d1 + d2
        segments.append(normalize(last_sketch, "l2").values)
        segments.append(normalize(hist_sketch, "l2").values)

    target, d3 = _encoded_subset(out_codes, [target_item])
    dropped += d3
    return Example(np.concatenate(segments), target), dropped


def _stable_rng(seed: int, key: str) -> np.random.Generator:
    digest = hashlib.blake2b(f"{seed}|{key}".encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


def build_topk_example(items, codes_by_modality: dict[str, CodesMatrix],
                       output_modality: str, split_ratio: float = 0.8,
                       seed: int = 0, user_key: str = "",
                       extra_channels: dict[str, tuple[CodesMatrix, list]] | None = None,
                       ) -> tuple[Example | None, int]:
    """Example from a user's item set: shuffled 80/20 input/target split.

    The shuffle is keyed by ``(seed, user_key)`` so a user's split never
    depends on iteration order. Repeat interactions are collapsed first (a
    user's item set is a set); the input side then takes
    ``min(ceil(split_ratio * n), n - 1)`` items, guaranteeing at least one
    target. Extra channels (e.g. disliked items) append one more
    L2-normalized sketch segment each.
    """
    items = list(dict.fromkeys(items))
    dropped = 0
    if len(items) < 2:
        return None, dropped
    order = _stable_rng(seed, user_key).permutation(len(items))
    shuffled = [items[i] for i in order]
    n_input = min(math.ceil(split_ratio * len(items)), len(items) - 1)
    input_items, target_items = shuffled[:n_input], shuffled[n_input:]

    out_codes = codes_by_modality[output_modality]
    target, d = _encoded_subset(out_codes, target_items)
    dropped += d
    if target.values.sum() == 0:
        return None, dropped

    segments = []
    for codes in codes_by_modality.values():
        sketch, d = _encoded_subset(codes, input_items)
        dropped += d
        segments.append(normalize(sketch, "l2").values)
    for codes, channel_items in (extra_channels or {}).values():
        sketch, d = _encoded_subset(codes, channel_items)
        dropped += d
        segments.append(normalize(sketch, "l2").values)

    meta = {"user": user_key, "input_items": input_items, "target_items": target_items}
    return Example(np.concatenate(segments), target, meta), dropped


def build_session_dataset(log: InteractionLog, codes_by_modality, alpha, w,
                          output_modality):
    """One example per (prefix, next item) pair of every session."""
    inputs, targets, metas = [], [], []
    skipped = dropped = 0
    for sid, items in log.session_items().items():
        for pos in range(1, len(items)):
            example, d = build_session_example(
                items[:pos + 1], codes_by_modality, alpha, w, output_modality)
            dropped += d
            if example is None:
                skipped += 1
                continue
            example.meta.update(session_id=sid, position=pos)
            inputs.append(example.input)
            targets.append(example.target.values)
            metas.append(example.meta)
    if not inputs:
        raise ValueError("no usable session examples")
    return np.vstack(inputs), np.vstack(targets), metas, {"skipped": skipped, "dropped": dropped}


def build_topk_dataset(log: InteractionLog, codes_by_modality, output_modality,
                       split_ratio=0.8, seed=0, extra_channel_items=None,
                       extra_channel_codes=None):
    """One example per user; sessions double as user histories."""
    inputs, targets, metas = [], [], []
    skipped = dropped = 0
    for uid, items in log.session_items().items():
        channels = None
        if extra_channel_codes:
            channels = {
                name: (codes, (extra_channel_items or {}).get(name, {}).get(uid, []))
                for name, codes in extra_channel_codes.items()
            }
        example, d = build_topk_example(
            items, codes_by_modality, output_modality, split_ratio, seed,
            user_key=uid, extra_channels=channels)
        dropped += d
        if example is None:
            skipped += 1
            continue
        example.meta["user"] = uid
        inputs.append(example.input)
        targets.append(example.target.values)
        metas.append(example.meta)
    if not inputs:
        raise ValueError("no usable top-k examples")
    return np.vstack(inputs), np.vstack(targets), metas, {"skipped": skipped, "dropped": dropped}


def model_output_sketch(params: ModelParams, input_vec: np.ndarray) -> Sketch:
    """Eval-mode forward pass, width-softmaxed into an output sketch."""
    logits = forward(params, input_vec.reshape(1, -1), "eval")
    probs = softmax_width(logits, params.output_depth, params.output_width)
    return Sketch(params.output_depth, params.output_width, probs[0])


def pure_output_sketch(input_vec: np.ndarray, layout, output_modality: str,
                       depth: int, width: int) -> Sketch:
    """Queryable sketch for model-free recommendation.

    Sums the input vector's output-modality segments (which are
    L2-normalized) and renormalizes to L1 along the width axis, turning the
    input density itself into the output density.
    """
    total = np.zeros(depth * width)
    found = False
    prefix = output_modality + "/"
    for label, sl in layout_slices(layout):
        if label.startswith(prefix):
            total += input_vec[sl]
            found = True
    if not found:
        raise ValueError(f"layout has no segments for modality {output_modality!r}")
    return normalize(Sketch(depth, width, total), "l1")


def rank_items(output: Sketch, codes: CodesMatrix, k: int,
               aggregator: str = "gmean", exclude=()) -> list[tuple[str, float]]:
    """Top-k (item_id, score), descending score, ties broken by item id."""
    scores = decode_scores(output, codes, aggregator)
    exclude = set(exclude)
    ranked = sorted(
        ((item, score) for item, score in scores.items() if item not in exclude),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return ranked[:k]


def recommend(params: ModelParams | None, input_vec: np.ndarray, layout,
              codes: CodesMatrix, k: int, aggregator: str = "gmean",
              exclude=(), output_modality: str | None = None) -> list[tuple[str, float]]:
    """Ranked recommendations from a concatenated input sketch vector.

    With a model, decodes the network's softmaxed output sketch; without one
    (pure mode), decodes the L1-renormalized input density directly, which
    ranks items by bucket co-occupancy with the input items.
    """
    if params is not None:
        if layout_dim(layout) != params.input_dim:
            raise ValueError("input layout does not match model input width")
        output = model_output_sketch(params, input_vec)
    else:
        if output_modality is None:
            raise ValueError("pure mode needs output_modality")
        output = pure_output_sketch(input_vec, layout, output_modality,
                                    codes.depth, codes.width)
    return rank_items(output, codes, k, aggregator, exclude)


def popularity_baseline(log: InteractionLog) -> list[tuple[str, int]]:
    """Items ranked by interaction count, ties broken by item id."""
    counts: dict[str, int] = {}
    for rows in log.sessions().values():
        for r in rows:
            counts[r.item_id] = counts.get(r.item_id, 0) + 1
    if not counts:
        raise ValueError("empty interaction log")
    return sorted(counts.items(), key=lambda pair: (-pair[1], pair[0]))


def apply_popularity(scores: dict, popularity: dict) -> dict:
    """Multiply decoded scores by item popularity (the pure+pop variant)."""
    return {item: score * popularity.get(item, 0) for item, score in scores.items()}


def _map_ordered(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def make_model_ranker(params: ModelParams, layout, codes: CodesMatrix, k: int,
                      aggregator: str = "gmean"):
    """Ranker closure over a trained model; signature (input_vec, exclude)."""
    if layout_dim(layout) != params.input_dim:
        raise ValueError("input layout does not match model input width")

    def ranker(input_vec, exclude):
        return rank_items(model_output_sketch(params, input_vec), codes, k,
                          aggregator, exclude)
    return ranker


def make_pure_ranker(layout, output_modality: str, codes: CodesMatrix, k: int,
                     aggregator: str = "gmean", popularity: dict | None = None):
    """Model-free ranker; optionally multiplies scores by item popularity."""

    def ranker(input_vec, exclude):
        output = pure_output_sketch(input_vec, layout, output_modality,
                                    codes.depth, codes.width)
        if popularity is None:
            return rank_items(output, codes, k, aggregator, exclude)
        scores = apply_popularity(decode_scores(output, codes, aggregator),
                                  popularity)
        exclude = set(exclude)
        ranked = sorted(((i, s) for i, s in scores.items() if i not in exclude),
                        key=lambda pair: (-pair[1], pair[0]))
        return ranked[:k]
    return ranker


def make_static_ranker(ranked_items, k: int):
    """Input-blind ranker serving a fixed list, e.g. the popularity baseline."""
    ranked_items = [(item, float(score)) for item, score in ranked_items]

    def ranker(input_vec, exclude):
        exclude = set(exclude)
        return [(i, s) for i, s in ranked_items if i not in exclude][:k]
    return ranker


def evaluate_session_task(test_log: InteractionLog, codes_by_modality, alpha, w,
                          output_modality, ranker, k: int = 20,
                          exclude_seen: bool = False, threads: int = 1):
    """Walk test sessions left to right, predicting at every position.

    Returns ``(metrics, prediction_rows)`` where the rows hold the final
    prediction point of each session as ``(session_id, rank, item_id, score)``.
    """
    def score_session(entry):
        sid, items = entry
        points, rows = [], []
        for pos in range(1, len(items)):
            example, _ = build_session_example(
                items[:pos + 1], codes_by_modality, alpha, w, output_modality)
            if example is None:
                continue
            exclude = set(items[:pos]) if exclude_seen else set()
            ranked = ranker(example.input, exclude)
            points.append(([item for item, _ in ranked], items[pos], items[pos:]))
            if pos == len(items) - 1:
                rows = [(sid, r + 1, item, score)
                        for r, (item, score) in enumerate(ranked)]
        return points, rows

    results = _map_ordered(score_session, list(test_log.session_items().items()), threads)
    all_points = [p for points, _ in results for p in points]
    prediction_rows = [row for _, rows in results for row in rows]
    return evaluate_session_points(all_points, k), prediction_rows


def evaluate_topk_task(test_log: InteractionLog, codes_by_modality, output_modality,
                       ranker, cutoffs=(1, 5, 10, 20), split_ratio: float = 0.8,
                       seed: int = 0, exclude_seen: bool = True, threads: int = 1,
                       extra_channel_items=None, extra_channel_codes=None):
    """Score every user's held-out split; returns (metrics, prediction_rows)."""
    def score_user(entry):
        uid, items = entry
        channels = None
        if extra_channel_codes:
            channels = {
                name: (codes, (extra_channel_items or {}).get(name, {}).get(uid, []))
                for name, codes in extra_channel_codes.items()
            }
        example, _ = build_topk_example(items, codes_by_modality, output_modality,
                                        split_ratio, seed, user_key=uid,
                                        extra_channels=channels)
        if example is None:
            return None
        held_out = example.meta["target_items"]
        exclude = set(example.meta["input_items"]) if exclude_seen else set()
        ranked = ranker(example.input, exclude)
        rows = [(uid, r + 1, item, score) for r, (item, score) in enumerate(ranked)]
        return [item for item, _ in ranked], held_out, rows

    results = _map_ordered(score_user, list(test_log.session_items().items()), threads)
    points = [(res[0], res[1]) for res in results if res]
    prediction_rows = [row for res in results if res for row in res[2]]
    if not points:
        raise ValueError("no evaluable users in test log")
    return evaluate_topk_points(points, cutoffs), prediction_rows
