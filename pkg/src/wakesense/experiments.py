"""Experiment workflows behind the CLI commands.

Each ``run_*`` function takes a validated :class:`RunConfig`, writes its
outputs under ``config.out`` together with ``config.json`` and
``manifest.json`` and returns the main result as plain data.
"""
from __future__ import annotations

import json
import logging
import platform
import statistics
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .dataset import LabeledDataset, build_dataset
from .estimator import (Metrics, ModelConfig, TaskWeights, TrainingDiverged, evaluate, train)
from .nn import load_checkpoint, save_checkpoint
from .wake import PressureTrace, generate_corpus, write_corpus
from .woa import random_weights, tune_task_weights

log = logging.getLogger(__name__)


class RunFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# plumbing

def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def versions() -> dict:
    return {"wakesense": __version__, "numpy": np.__version__,
            "python": platform.python_version()}


def prepare_out(cfg: RunConfig, command: str) -> Path:
    if command != "gen":
        cfg.validate_model()
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc.strerror}") from exc
    write_json(out / "config.json", cfg.to_dict())
    return out


def write_manifest(out: Path, cfg: RunConfig, command: str, outputs: Iterable[str],
                   extra: dict | None = None) -> None:
    write_json(out / "manifest.json", {
        "command": command, "config_hash": cfg.hash(), "seed": cfg.seed,
        "versions": versions(), "outputs": sorted(outputs), **(extra or {})})


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


# --------------------------------------------------------------------------
# data

def corpus_traces(cfg: RunConfig, min_sl: int | None = None) -> list[PressureTrace]:
    """The full scenario grid, simulated deterministically from ``cfg.seed``."""
    min_sl = min_sl or cfg.dataset.sl
    try:
        return generate_corpus(cfg.scenarios(), cfg.geometry(), cfg.corpus.repeats, cfg.seed,
                               min_sweep_samples=2 * min_sl)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def case_dataset(cfg: RunConfig, case: int | None = None, sl: int | None = None,
                 traces: list[PressureTrace] | None = None) -> LabeledDataset:
    sl = sl or cfg.dataset.sl
    traces = traces if traces is not None else corpus_traces(cfg, sl)
    y = cfg.case_offset(case)
    chosen = [t for t in traces if t.scenario.y == y]
    ds = cfg.dataset
    try:
        return build_dataset(chosen, sl=sl, stride=ds.stride, baseline_len=ds.baseline_len,
                             clip_mm=ds.clip_mm, speeds=cfg.corpus.speeds, ratio=ds.ratio,
                             seed=cfg.seed,
                             meta={"case": case or cfg.case, "y": y,
                                   "config_hash": cfg.hash("corpus", "dataset", "seed")})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def train_cell(cfg_dict: dict, case: int, sl: int, variant: str, seed: int,
               weights: Sequence[float]) -> dict:
    """Train one model from scratch and return its test metrics as a dict."""
    cfg = RunConfig.from_dict(cfg_dict)
    dataset = case_dataset(cfg, case, sl)
    model_cfg = cfg.model_config(sl, variant)
    hyper = cfg.hyper(seed)
    try:
        params, _ = train(dataset, model_cfg, TaskWeights(*weights), hyper)
    except TrainingDiverged as exc:
        raise RunFailure(str(exc)) from exc
    m = evaluate(params, model_cfg, dataset).to_dict()
    m.update(case=case, sl=sl, variant=variant, seed=seed, weights=list(weights))
    return m


def metrics_record(m: Metrics, cfg: RunConfig, **extra) -> dict:
    rec = m.to_dict()
    rec.update(config_hash=cfg.hash(), seed=cfg.seed, case=cfg.case,
               group_hash=cfg.group_hash(), **extra)
    return rec


# --------------------------------------------------------------------------
# commands

def run_gen(cfg: RunConfig) -> Path:
    out = prepare_out(cfg, "gen")
    traces = corpus_traces(cfg)
    manifest = write_corpus(traces, out / "corpus", cfg.geometry(),
                            extra={"config_hash": cfg.hash("corpus", "seed"), "seed": cfg.seed,
                                   "repeats": cfg.corpus.repeats})
    write_manifest(out, cfg, "gen", ["corpus/manifest.json", "config.json"],
                   {"n_traces": len(traces)})
    log.info("wrote %d traces to %s", len(traces), manifest.parent)
    return manifest


def run_train(cfg: RunConfig, on_epoch: Callable[[dict], None] | None = None) -> dict:
    out = prepare_out(cfg, "train")
    dataset = case_dataset(cfg)
    dataset.save(out / "dataset.npz")
    model_cfg = cfg.model_config()
    weights = cfg.task_weights()
    meta = {"model": model_cfg.to_dict(), "config_hash": cfg.hash(), "seed": cfg.seed,
            "case": cfg.case, "weights": list(weights.as_tuple())}
    try:
        params, history = train(dataset, model_cfg, weights, cfg.hyper(), on_epoch=on_epoch)
    except TrainingDiverged as exc:
        save_checkpoint(out / "checkpoint.npz", exc.last_good, {**meta, "diverged": str(exc)})
        write_json(out / "history.json", exc.history.to_list())
        raise RunFailure(f"training diverged ({exc}); last good checkpoint saved") from exc
    save_checkpoint(out / "checkpoint.npz", params, meta)
    metrics = metrics_record(evaluate(params, model_cfg, dataset), cfg,
                             sl=model_cfg.sl, variant=model_cfg.variant,
                             weights=list(weights.as_tuple()))
    write_json(out / "metrics.json", metrics)
    write_json(out / "history.json", history.to_list())
    write_manifest(out, cfg, "train", ["config.json", "dataset.npz", "checkpoint.npz",
                                       "metrics.json", "history.json"])
    return metrics


def run_eval(cfg: RunConfig, checkpoint: str | Path) -> dict:
    out = prepare_out(cfg, "eval")
    try:
        params, meta = load_checkpoint(checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load checkpoint {checkpoint}: {exc}") from exc
    model_cfg = ModelConfig.from_dict(meta["model"])
    dataset = case_dataset(cfg, sl=model_cfg.sl)
    metrics = metrics_record(evaluate(params, model_cfg, dataset), cfg, sl=model_cfg.sl,
                             variant=model_cfg.variant, checkpoint=str(checkpoint))
    write_json(out / "eval_metrics.json", metrics)
    write_manifest(out, cfg, "eval", ["config.json", "eval_metrics.json"])
    return metrics


def run_tune(cfg: RunConfig, on_eval: Callable[[dict], None] | None = None) -> dict:
    """WOA search, full retrain with the best weights and random-weight baselines."""
    out = prepare_out(cfg, "tune")
    dataset = case_dataset(cfg)
    model_cfg = cfg.model_config()
    result = tune_task_weights(dataset, model_cfg, cfg.hyper(), cfg.woa_config(),
                               cfg.tune.proxy_epochs, on_eval=on_eval)
    search = result.search
    write_json(out / "tuning_report.json", {
        "best_weights": list(result.weights.as_tuple()), "best_proxy_fitness": result.proxy_fitness,
        "trace": search.trace, "n_evals": search.n_evals,
        "eval_seconds": search.eval_seconds, "evaluations": result.evaluations})

    cells = [(cfg.to_dict(), cfg.case, model_cfg.sl, model_cfg.variant, cfg.seed,
              list(result.weights.as_tuple()))]
    baseline_w = random_weights(cfg.tune.baselines, cfg.seed)
    cells += [(cfg.to_dict(), cfg.case, model_cfg.sl, model_cfg.variant, cfg.seed,
               list(w.as_tuple())) for w in baseline_w]
    runs = _map(train_cell, cells, cfg.jobs)
    tuned, baselines = runs[0], runs[1:]
    base_fit = [b["fitness"] for b in baselines]
    comparison = {
        "tuned": tuned, "baselines": baselines,
        "fitness_values": [tuned["fitness"], *base_fit],
        "baseline_median": statistics.median(base_fit) if base_fit else None,
        "tuned_beats_median": bool(base_fit) and tuned["fitness"] <= statistics.median(base_fit),
        "config_hash": cfg.hash(), "seed": cfg.seed,
    }
    write_json(out / "comparison.json", comparison)
    write_json(out / "tuned_weights.json", {"weights": list(result.weights.as_tuple())})
    write_manifest(out, cfg, "tune", ["config.json", "tuning_report.json", "comparison.json",
                                      "tuned_weights.json"])
    return comparison


def _deltas(hybrid: dict, cnn: dict) -> dict:
    return {"rmse_x": cnn["rmse_x"] - hybrid["rmse_x"],
            "acc_speed": hybrid["acc_speed"] - cnn["acc_speed"],
            "acc_dir": hybrid["acc_dir"] - cnn["acc_dir"],
            "fitness": cnn["fitness"] - hybrid["fitness"]}


def run_ablate(cfg: RunConfig) -> dict:
    """CNN-BiLSTM against the parameter-matched CNN-only variant, same data and seeds.

    Deltas are oriented so that positive means the hybrid is better.
    """
    out = prepare_out(cfg, "ablate")
    sl = cfg.dataset.sl
    w = list(cfg.task_weights().as_tuple())
    cells = [(cfg.to_dict(), cfg.case, sl, variant, s, w)
             for s in cfg.ablate_seeds for variant in ("cnn_bilstm", "cnn_only")]
    runs = _map(train_cell, cells, cfg.jobs)
    pairs = []
    for k, s in enumerate(cfg.ablate_seeds):
        hybrid, cnn = runs[2 * k], runs[2 * k + 1]
        pairs.append({"seed": s, "cnn_bilstm": hybrid, "cnn_only": cnn,
                      "delta": _deltas(hybrid, cnn)})
    summary = {}
    for variant in ("cnn_bilstm", "cnn_only"):
        summary[variant] = _mean_std([p[variant] for p in pairs])
    summary["delta"] = _mean_std([p["delta"] for p in pairs])
    model_cfg = cfg.model_config()
    result = {"pairs": pairs, "summary": summary,
              "param_counts": {"bilstm_stage": model_cfg.bilstm_param_count(),
                               "flat_units": cfg.model_config(variant="cnn_only").flat_width()},
              "config_hash": cfg.hash(), "seed": cfg.seed}
    write_json(out / "ablation.json", result)
    write_manifest(out, cfg, "ablate", ["config.json", "ablation.json"])
    return result


def run_sweep_seqlen(cfg: RunConfig) -> dict:
    out = prepare_out(cfg, "sweep-seqlen")
    sls = sorted(set(cfg.sweep_sl))
    w = list(cfg.task_weights().as_tuple())
    cells = [(cfg.to_dict(), cfg.case, sl, cfg.model.get("variant", "cnn_bilstm"), s, w)
             for sl in sls for s in cfg.sweep_seeds]
    runs = _map(train_cell, cells, cfg.jobs)
    rows = []
    for sl in sls:
        cell = [r for r in runs if r["sl"] == sl]
        rows.append({"sl": sl, **_mean_std(cell), "runs": cell})
    result = {"rows": rows, "config_hash": cfg.hash(), "seed": cfg.seed}
    write_json(out / "sweep_seqlen.json", result)
    (out / "sweep_seqlen.txt").write_text(format_table(rows, "sl"))
    write_manifest(out, cfg, "sweep-seqlen", ["config.json", "sweep_seqlen.json",
                                              "sweep_seqlen.txt"])
    return result


# --------------------------------------------------------------------------
# reporting

METRIC_KEYS = ("rmse_x", "acc_speed", "acc_dir", "fitness")


def _mean_std(records: Sequence[dict], keys: Sequence[str] = METRIC_KEYS) -> dict:
    out = {}
    for k in keys:
        vals = np.array([r[k] for r in records], dtype=float)
        out[k] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
                  "n": int(len(vals))}
    return out


def format_table(rows: Sequence[dict], key: str) -> str:
    head = f"{key:>12} " + " ".join(f"{k:>20}" for k in METRIC_KEYS)
    lines = [head, "-" * len(head)]
    for r in rows:
        cells = " ".join(f"{r[k]['mean']:>10.4f} ± {r[k]['std']:<7.4f}" for k in METRIC_KEYS)
        lines.append(f"{str(r[key]):>12} {cells}")
    return "\n".join(lines) + "\n"


def text_chart(values: Sequence[float], width: int = 60, height: int = 10, label: str = "") -> str:
    """Plain-text line chart of a series (resampled to ``width`` columns)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return f"{label}: (no data)\n"
    cols = np.interp(np.linspace(0, v.size - 1, min(width, v.size)), np.arange(v.size), v)
    lo, hi = float(cols.min()), float(cols.max())
    span = hi - lo or 1.0
    levels = np.round((cols - lo) / span * (height - 1)).astype(int)
    grid = [[" "] * len(cols) for _ in range(height)]
    for j, lvl in enumerate(levels):
        grid[height - 1 - lvl][j] = "*"
    lines = [f"{label}  (min {lo:.4g}, max {hi:.4g}, {v.size} points)"]
    lines += ["|" + "".join(row) for row in grid]
    lines.append("+" + "-" * len(cols))
    return "\n".join(lines) + "\n"


def run_report(run_dirs: Sequence[str | Path], out: str | Path) -> dict:
    """Aggregate ``metrics.json`` files into mean ± std tables and text charts."""
    if not run_dirs:
        raise ConfigError("report needs at least one run directory "
                          "(usage: wakesense report RUN_DIR [RUN_DIR ...] --out DIR)")
    records = []
    charts = []
    for d in map(Path, run_dirs):
        mpath = d / "metrics.json"
        if not mpath.is_file():
            raise ConfigError(f"{d} has no metrics.json; is it a train run directory?")
        rec = json.loads(mpath.read_text())
        rec["run_dir"] = str(d)
        records.append(rec)
        hpath = d / "history.json"
        if hpath.is_file():
            hist = json.loads(hpath.read_text())
            charts.append(text_chart([h["train_loss"] for h in hist], label=f"{d} train loss"))
            fit = [h["fitness"] for h in hist if "fitness" in h]
            if fit:
                charts.append(text_chart(fit, label=f"{d} test fitness"))
    groups: dict[str, list[dict]] = {}
    for rec in records:
        groups.setdefault(rec.get("group_hash", rec.get("config_hash", "?")), []).append(rec)
    rows = []
    for gh, recs in groups.items():
        first = recs[0]
        rows.append({"group": gh, "case": first.get("case"), "variant": first.get("variant"),
                     "sl": first.get("sl"), "seeds": sorted(r.get("seed") for r in recs),
                     "runs": [r["run_dir"] for r in recs], **_mean_std(recs)})
    summary = {"groups": rows, "n_runs": len(records)}
    outp = Path(out)
    outp.mkdir(parents=True, exist_ok=True)
    write_json(outp / "summary.json", summary)
    (outp / "summary.txt").write_text(format_table(rows, "group"))
    (outp / "charts.txt").write_text("\n".join(charts))
    return summary
