"""From raw traces to standardised, labelled windows with a stratified split."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .wake import DIRECTIONS, PressureTrace

DEFAULT_SPEEDS = (400.0, 500.0, 600.0, 700.0, 800.0)
CLIP_MM = 120.0


class Window(NamedTuple):
    frames: np.ndarray  # (sl, N)
    end_index: int


class MotionState(NamedTuple):
    x: float  # normalised lateral displacement
    v_class: int
    d_class: int


def debias(trace: PressureTrace, baseline_len: int = 50) -> PressureTrace:
    """Subtract each sensor's mean over the first ``baseline_len`` samples."""
    if baseline_len <= 0 or baseline_len > len(trace):
        raise ValueError(f"baseline_len must be in [1, {len(trace)}], got {baseline_len}")
    frames = trace.frames - trace.frames[:baseline_len].mean(axis=0)
    return PressureTrace(trace.times.copy(), frames, trace.x.copy(), trace.v.copy(),
                         trace.d.copy(), trace.scenario)


def clip_and_normalize(trace: PressureTrace, limit: float = CLIP_MM) -> PressureTrace:
    """Keep moving samples with ``|x| <= limit`` and rescale x to [-1, 1].

    Parked samples (``v == 0``) are dropped too; they carry no motion label.
    """
    keep = (np.abs(trace.x) <= limit) & (trace.v > 0)
    if not keep.any():
        raise ValueError(f"no moving samples left inside |x| <= {limit} mm")
    out = trace.subset(keep)
    out.x = out.x / limit
    return out


def encode_labels(v: float, d: str, speeds: Sequence[float] = DEFAULT_SPEEDS) -> tuple[int, int]:
    """Speed class = rank in the ascending speed set; P -> 0, N -> 1."""
    ordered = sorted(float(s) for s in speeds)
    matches = [i for i, s in enumerate(ordered) if s == float(v)]
    if not matches:
        raise ValueError(f"speed {v} is not one of the configured speeds {ordered}")
    if d not in DIRECTIONS:
        raise ValueError(f"direction must be P or N, got {d!r}")
    return matches[0], DIRECTIONS.index(d)


def window_indices(n: int, sl: int, stride: int = 1) -> np.ndarray:
    """End indices of every full window of length ``sl`` in a trace of ``n`` samples."""
    if sl < 1 or stride < 1:
        raise ValueError("sl and stride must be >= 1")
    return np.arange(sl - 1, n, stride)


def window_array(trace: PressureTrace, sl: int, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Stacked windows (n_windows, sl, N) and their end indices."""
    ends = window_indices(len(trace), sl, stride)
    if ends.size == 0:
        warnings.warn(f"trace of length {len(trace)} is shorter than sl={sl}; no windows",
                      RuntimeWarning, stacklevel=2)
        return np.zeros((0, sl, trace.n_sensors)), ends
    offsets = np.arange(-sl + 1, 1)
    return trace.frames[ends[:, None] + offsets], ends


def make_windows(trace: PressureTrace, sl: int, stride: int = 1,
                 speeds: Sequence[float] = DEFAULT_SPEEDS) -> list[tuple[Window, MotionState]]:
    """Windows ending at k hold frames k-sl+1..k and are labelled with the state at k."""
    X, ends = window_array(trace, sl, stride)
    out = []
    for w, k in zip(X, ends):
        vc, dc = encode_labels(trace.v[k], str(trace.d[k]), speeds)
        out.append((Window(w, int(k)), MotionState(float(trace.x[k]), vc, dc)))
    return out


def stratified_split(strata: np.ndarray, ratio: float = 0.9,
                     seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled split with every stratum represented in both parts.

    The overall test size is ``round(n * (1 - ratio))``; it is shared out by
    largest remainder with at least one test and one train sample per stratum.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    strata = np.asarray(strata)
    keys, inverse, counts = np.unique(strata, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if counts.min() < 2:
        raise ValueError(f"stratum {keys[counts.argmin()].tolist()} has fewer than 2 samples")
    quota = counts * (1.0 - ratio)
    n_test = np.clip(np.floor(quota).astype(int), 1, counts - 1)
    target = int(round(len(strata) * (1.0 - ratio)))
    for j in np.argsort(-(quota - np.floor(quota)), kind="stable"):
        if n_test.sum() >= target:
            break
        if n_test[j] < counts[j] - 1:
            n_test[j] += 1
    rng = np.random.default_rng(seed)
    train, test = [], []
    for j in range(len(keys)):
        members = rng.permutation(np.flatnonzero(inverse == j))
        test.append(members[:n_test[j]])
        train.append(members[n_test[j]:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


@dataclass
class LabeledDataset:
    windows: np.ndarray  # (n, sl, N) debiased pressures, Pa
    x: np.ndarray  # (n,) normalised displacement
    v_class: np.ndarray
    d_class: np.ndarray
    trace_id: np.ndarray
    end_index: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    split_seed: int
    mean: np.ndarray  # (N,) per-sensor stats over the training windows
    std: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.x)

    @property
    def sl(self) -> int:
        return self.windows.shape[1]

    @property
    def n_sensors(self) -> int:
        return self.windows.shape[2]

    def inputs(self, idx=None) -> np.ndarray:
        w = self.windows if idx is None else self.windows[idx]
        return (w - self.mean) / self.std

    def labels(self, idx=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if idx is None:
            return self.x, self.v_class, self.d_class
        return self.x[idx], self.v_class[idx], self.d_class[idx]

    def sample(self, i: int) -> tuple[Window, MotionState]:
        return (Window(self.windows[i], int(self.end_index[i])),
                MotionState(float(self.x[i]), int(self.v_class[i]), int(self.d_class[i])))

    def subset(self, train_idx, test_idx) -> "LabeledDataset":
        """Same windows and normalisation, different split."""
        return LabeledDataset(self.windows, self.x, self.v_class, self.d_class, self.trace_id,
                              self.end_index, np.asarray(train_idx), np.asarray(test_idx),
                              self.split_seed, self.mean, self.std, dict(self.meta))

    def save(self, path) -> None:
        arrays = {k: getattr(self, k) for k in (
            "windows", "x", "v_class", "d_class", "trace_id", "end_index",
            "train_idx", "test_idx", "mean", "std")}
        header = {"format": "wakesense-dataset/1", "split_seed": self.split_seed, "meta": self.meta}
        arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "LabeledDataset":
        with np.load(Path(path)) as data:
            header = json.loads(data["header"].tobytes().decode())
            kw = {k: data[k] for k in data.files if k != "header"}
        return cls(split_seed=header["split_seed"], meta=header["meta"], **kw)


def build_dataset(traces: Sequence[PressureTrace], sl: int = 64, stride: int = 1,
                  baseline_len: int = 50, clip_mm: float = CLIP_MM,
                  speeds: Sequence[float] = DEFAULT_SPEEDS, ratio: float = 0.9,
                  seed: int = 0, meta: dict | None = None) -> LabeledDataset:
    """Debias, clip, window and split a list of traces."""
    if not traces:
        raise ValueError("no traces given")
    Xs, xs, vs, ds, tids, ends = [], [], [], [], [], []
    for tid, raw in enumerate(traces):
        tr = clip_and_normalize(debias(raw, baseline_len), clip_mm)
        X, k = window_array(tr, sl, stride)
        if len(k) == 0:
            continue
        labels = [encode_labels(v, str(d), speeds) for v, d in zip(tr.v[k], tr.d[k])]
        Xs.append(X)
        xs.append(tr.x[k])
        vs.append([a for a, _ in labels])
        ds.append([b for _, b in labels])
        tids.append(np.full(len(k), tid))
        ends.append(k)
    if not Xs:
        raise ValueError(f"no trace is long enough for sl={sl} after clipping")
    windows = np.concatenate(Xs)
    v_class = np.concatenate(vs).astype(np.int64)
    d_class = np.concatenate(ds).astype(np.int64)
    train_idx, test_idx = stratified_split(np.stack([v_class, d_class], axis=1), ratio, seed)
    train_frames = windows[train_idx].reshape(-1, windows.shape[2])
    mean = train_frames.mean(axis=0)
    std = np.maximum(train_frames.std(axis=0), 1e-12)
    info = {"sl": sl, "stride": stride, "baseline_len": baseline_len, "clip_mm": clip_mm,
            "speeds": [float(s) for s in sorted(speeds)], "ratio": ratio, **(meta or {})}
    return LabeledDataset(windows, np.concatenate(xs), v_class, d_class,
                          np.concatenate(tids).astype(np.int64), np.concatenate(ends).astype(np.int64),
                          train_idx, test_idx, seed, mean, std, info)
