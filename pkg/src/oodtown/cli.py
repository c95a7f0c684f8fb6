"""Command-line front end.

Six subcommands cover the whole workflow: gen-data renders the dataset,
train-ood and train-detector fit and quantize the two models, tune-ga
searches preprocessing recipes, run-demo drives the closed-loop pipeline,
and report collects everything into one markdown summary.

Exit codes: 0 success, 2 input or config problem, 3 training failure,
4 pipeline failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, detect, ga, netpbm, pipeline, quant, sim, vae
from . import config as cfgmod
from . import flow as flowmod
from . import preproc as preprocmod
from .camera import CameraModel
from .errors import (ArgumentError, ConfigError, OodtownError,
                     PipelineError, TrainingError, UsageError)
from .lane import LaneConfig, LaneFollower
from .rng import sub_rng

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_TRAINING = 3
EXIT_PIPELINE = 4

# deterministic service-time stand-ins for virtual-clock demos, ms
VIRTUAL_ET_MS = {"lane_follow": 12.0, "object_detect": 4.0, "ood_detect": 10.0}


def _derived_seed(root: int, name: str) -> int:
    return int(sub_rng(root, name).integers(0, 2**63 - 1))


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    probe = os.path.join(path, ".write-probe")
    with open(probe, "w", encoding="utf-8") as f:
        f.write("ok")
    os.remove(probe)
    return path


def _write_run_log(out_dir: str, command: str, cfg: cfgmod.RunConfig,
                   outputs: list[str], extras: dict | None = None) -> str:
    log = {
        "command": command,
        "package_version": __version__,
        "seed": cfg.seed,
        "resolved_config": cfg.to_log(),
        "outputs": sorted(os.path.basename(p) for p in outputs),
    }
    if extras:
        log.update(extras)
    path = os.path.join(out_dir, f"{command}-run.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(log, f, indent=1, sort_keys=True)
        f.write("\n")
    return path


def _write_json(path: str, payload: dict) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    return path


def _load_gray_video(data_dir: str, name: str, limit: int | None = None):
    """Manifest directory -> (native-resolution gray frames f32, OOD labels)."""
    vdir = os.path.join(data_dir, name)
    manifest = sim.load_manifest(os.path.join(vdir, "manifest.json"))
    paths, labels = sim.manifest_frames(vdir, manifest)
    if limit is not None:
        paths, labels = paths[:limit], labels[:limit]
    return [sim.to_gray(netpbm.read_ppm(p)) for p in paths], labels


def _stacks_for_video(frames, labels, pp: preprocmod.PreprocConfig):
    # flow at camera resolution; the stack builder rescales the fields
    flows = flowmod.flow_sequence(frames)
    return preprocmod.window_dataset(flows, labels, pp)


def _dataset_index(data_dir: str) -> dict:
    return sim.load_manifest(os.path.join(data_dir, "dataset.json"))


# ---------------------------------------------------------------------------
# gen-data

def cmd_gen_data(args) -> int:
    cfg = cfgmod.load_run_config(args.config, args.seed)
    out = _ensure_out(args.out)
    if args.videos == 8:
        densities = sim.DatasetConfig().snow_densities
    else:
        # spread the canonical density range over the requested count
        lo, hi = 0.008, 0.1
        densities = tuple(float(v) for v in np.geomspace(lo, hi, args.videos))
    ds_cfg = sim.DatasetConfig(n_train=args.frames, n_videos=args.videos,
                               snow_densities=densities)
    index = sim.generate_dataset(out, cfg.world, cfg.camera(), cfg.seed, ds_cfg)
    outputs = [os.path.join(out, "dataset.json")]
    _write_run_log(out, "gen-data", cfg, outputs,
                   {"dataset": {"n_train": args.frames, "n_videos": args.videos,
                                "snow_densities": list(densities)}})
    print(f"seed {cfg.seed}")
    print(f"wrote {args.frames} training frames and "
          f"{len(index['videos'])} test videos to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train-ood

def cmd_train_ood(args) -> int:
    cfg = cfgmod.load_run_config(args.config, args.seed)
    out = _ensure_out(args.out)
    pp = cfg.preproc
    index = _dataset_index(args.data)

    train_frames, train_labels = _load_gray_video(args.data, index["train"])
    train_x, _ = _stacks_for_video(train_frames, train_labels, pp)
    del train_frames
    print(f"training on {train_x.shape[0]} windows of {tuple(train_x.shape[1:])}")

    model, history = vae.train_vae(train_x, cfg.vae)
    qmodel = vae.quantize_vae(model)

    train_scores = vae.ood_scores(qmodel, train_x)
    threshold = vae.calibrate_threshold(train_scores, cfg.quantile)
    threshold_max = vae.calibrate_threshold(train_scores, 1.0)

    agree_n = agree_hits = 0
    preds_q, preds_f, labels_all, per_video = [], [], [], []
    for name in index["videos"]:
        frames, labels = _load_gray_video(args.data, name)
        stacks, win_labels = _stacks_for_video(frames, labels, pp)
        sq = vae.ood_scores(qmodel, stacks)
        sf = vae.ood_scores(model, stacks)
        agree_hits += int(np.sum((sq > threshold) == (sf > threshold)))
        agree_n += len(sq)
        preds_q.append(sq > threshold)
        preds_f.append(sf > threshold)
        labels_all.append(win_labels)
        per_video.append(vae.evaluate_f1(sq > threshold, win_labels).f1)

    pooled = vae.evaluate_f1(np.concatenate(preds_q), np.concatenate(labels_all))
    pooled_float = vae.evaluate_f1(np.concatenate(preds_f), np.concatenate(labels_all))
    agreement = agree_hits / agree_n if agree_n else 1.0

    model_path = os.path.join(out, "ood.oodm")
    qmodel_path = os.path.join(out, "ood-q.oodm")
    extras = {"flows": float(pp.flows), "height": float(pp.size[0]),
              "width": float(pp.size[1]), "threshold_max": threshold_max}
    vae.save_vae(model_path, model, threshold, extras)
    vae.save_quant_vae(qmodel_path, qmodel, threshold, extras)

    metrics = {
        "final_loss": {"total": history[-1][0], "recon": history[-1][1],
                       "kl": history[-1][2]},
        "windows_train": int(train_x.shape[0]),
        "threshold": threshold,
        "threshold_max": threshold_max,
        "quantile": cfg.quantile,
        "f1": pooled.f1,
        "precision": pooled.precision,
        "recall": pooled.recall,
        "f1_float": pooled_float.f1,
        "per_video_f1": per_video,
        "quantized_float_agreement": agreement,
        "preproc": {"size": list(pp.size), "flows": pp.flows, "interp": pp.interp},
    }
    metrics_path = _write_json(os.path.join(out, "ood-metrics.json"), metrics)
    _write_run_log(out, "train-ood", cfg,
                   [model_path, qmodel_path, metrics_path])
    print(f"final loss {history[-1][0]:.6f} threshold {threshold:.6f}")
    print(f"pooled F1 {pooled.f1:.4f} (float {pooled_float.f1:.4f}) "
          f"quantized-vs-float agreement {agreement:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train-detector

def cmd_train_detector(args) -> int:
    cfg = cfgmod.load_run_config(args.config, args.seed)
    out = _ensure_out(args.out)
    det_cfg = cfg.detector
    size = det_cfg.size

    scenes = detect.make_scenes(args.scenes, _derived_seed(cfg.seed, "scenes.train"))
    scenes += detect.make_duck_scenes(args.duck_scenes,
                                      _derived_seed(cfg.seed, "scenes.duck"))
    print(f"training S={size} on {len(scenes)} scenes")
    model, history = detect.train_detector(scenes, det_cfg)
    qmodel = quant.quantize_model(model)

    test = detect.make_scenes(args.test_scenes, _derived_seed(cfg.seed, "scenes.test"))
    cm = detect.evaluate_detector(qmodel, test, det_cfg)
    ducks = detect.make_duck_scenes(60, _derived_seed(cfg.seed, "scenes.duckeval"))
    hits = 0
    for frame, gts in ducks:
        dets = detect.detect(qmodel, frame, det_cfg)
        c, cx, cy, w, h = gts[0]
        gt = detect.Detection(cx, cy, w, h, c, 1.0)
        if any(d.cls_id == c and detect.iou(d, gt) >= 0.5 for d in dets):
            hits += 1

    rows = detect.size_latency_sweep({size: qmodel}, test, reps=100)
    model_path = os.path.join(out, f"detector-{size}.oodm")
    qmodel_path = os.path.join(out, f"detector-q-{size}.oodm")
    detect.save_detector(model_path, model, size)
    detect.save_quant_detector(qmodel_path, qmodel, size)

    metrics = {
        "size": size,
        "final_loss": history[-1],
        "confusion_matrix": cm.tolist(),
        "row_normalized": detect.row_normalize(cm).tolist(),
        "class_recall": {name: detect.class_recall(cm, i)
                         for i, name in enumerate(detect.CLASSES)},
        "single_duck_recall": hits / len(ducks),
        "acet_ms": rows[0]["acet_ms"],
    }
    metrics_path = _write_json(os.path.join(out, f"detector-metrics-{size}.json"),
                               metrics)
    _write_run_log(out, f"train-detector-{size}", cfg,
                   [model_path, qmodel_path, metrics_path])
    print(f"final loss {history[-1]:.4f} ACET {rows[0]['acet_ms']:.2f} ms")
    print(f"duck recall {metrics['class_recall']['duckie']:.3f} "
          f"single-duck {metrics['single_duck_recall']:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# tune-ga

def cmd_tune_ga(args) -> int:
    cfg = cfgmod.load_run_config(args.config, args.seed)
    out = _ensure_out(args.out)
    index = _dataset_index(args.data)

    # flow runs at the camera resolution, so load the frames unscaled
    train_dir = os.path.join(args.data, index["train"])
    manifest = sim.load_manifest(os.path.join(train_dir, "manifest.json"))
    paths, _ = sim.manifest_frames(train_dir, manifest)
    train_gray = [sim.to_gray(netpbm.read_ppm(p))
                  for p in paths[:args.frames_limit]]
    videos = []
    for name in index["videos"]:
        vdir = os.path.join(args.data, name)
        vman = sim.load_manifest(os.path.join(vdir, "manifest.json"))
        vpaths, vlabels = sim.manifest_frames(vdir, vman)
        vpaths, vlabels = vpaths[:args.frames_limit], vlabels[:args.frames_limit]
        videos.append(([sim.to_gray(netpbm.read_ppm(p)) for p in vpaths], vlabels))

    evaluator = ga.FitnessEvaluator(train_gray, videos,
                                    vae_epochs=args.vae_epochs,
                                    beta=cfg.vae.beta, latent=cfg.vae.latent,
                                    quantile=cfg.quantile, seed=cfg.seed,
                                    et_mode=args.et_mode)
    result = ga.run_ga(evaluator, cfg.ga, cfg.seed)

    csv_path = os.path.join(out, "candidates.csv")
    ga.candidates_csv(csv_path, result.evaluations.values())
    best = result.evaluations[result.best]
    best_path = _write_json(os.path.join(out, "ga-best.json"), {
        "size": f"{best.genome.size[0]}x{best.genome.size[1]}",
        "flows": best.genome.flows,
        "interp": best.genome.interp,
        "f1": best.f1,
        "et_mean_ms": best.et_mean_ms,
        "et_var_ms2": best.et_var_ms2,
        "generations": result.generations,
    })
    log_path = os.path.join(out, "ga-log.json")
    ga.write_run_log(log_path, result, cfg.ga)
    _write_run_log(out, "tune-ga", cfg, [csv_path, best_path, log_path],
                   {"frames_limit": args.frames_limit,
                    "vae_epochs": args.vae_epochs, "et_mode": args.et_mode})
    print(f"best {best.genome.size[0]}x{best.genome.size[1]} "
          f"flows={best.genome.flows} {best.genome.interp} F1 {best.f1:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run-demo

def _find_detector(models_dir: str) -> str:
    names = sorted(n for n in os.listdir(models_dir)
                   if n.startswith("detector-q-") and n.endswith(".oodm"))
    if not names:
        names = sorted(n for n in os.listdir(models_dir)
                       if n.startswith("detector-") and n.endswith(".oodm"))
    if not names:
        raise ArgumentError(f"no detector model found in {models_dir}")
    return os.path.join(models_dir, names[0])


def cmd_run_demo(args) -> int:
    cfg = cfgmod.load_run_config(args.config, args.seed)
    out = _ensure_out(args.out)
    pipe_cfg = cfg.pipeline
    if args.clock:
        pipe_cfg = pipeline.PipelineConfig(
            workers=pipe_cfg.workers, fps=pipe_cfg.fps,
            n_frames=pipe_cfg.n_frames, m_consecutive=pipe_cfg.m_consecutive,
            clock=args.clock, seed=pipe_cfg.seed, max_queue=pipe_cfg.max_queue)

    ood_path = os.path.join(args.models, "ood-q.oodm")
    if not os.path.exists(ood_path):
        ood_path = os.path.join(args.models, "ood.oodm")
    ood_model, extras = vae.load_vae(ood_path)
    with open(os.path.join(args.models, "ood-metrics.json"), encoding="utf-8") as f:
        ood_metrics = json.load(f)
    ppd = ood_metrics["preproc"]
    pp = preprocmod.PreprocConfig(size=tuple(ppd["size"]), flows=ppd["flows"],
                                  interp=ppd["interp"])
    threshold = extras.get("threshold_max", extras.get("threshold"))
    if args.threshold is not None:
        threshold = args.threshold
    if threshold is None:
        raise ArgumentError(f"{ood_path} carries no threshold; pass --threshold")

    det_model, det_cfg = detect.load_detector(_find_detector(args.models))

    snow = None
    if args.scenario == "snow":
        stop = cfg.demo.snow_stop
        snow = sim.SnowConfig(density=cfg.demo.snow_density,
                              start=cfg.demo.snow_start,
                              stop=None if stop is None else int(stop))
    camera = cfg.camera()
    driver = pipeline.SimDriver(cfg.world, camera, snow=snow,
                                seed=cfg.seed, fps=pipe_cfg.fps)
    follower = LaneFollower(camera, LaneConfig(lane_half=cfg.world.lane_half))
    et_models = dict(VIRTUAL_ET_MS) if pipe_cfg.clock == "virtual" else None
    tasks = pipeline.make_standard_tasks(follower, ood_model, threshold, pp,
                                         det_model, det_cfg, fps=pipe_cfg.fps,
                                         et_models=et_models)
    traces, summary = pipeline.run_pipeline(driver, tasks, pipe_cfg)

    period_ms = 1000.0 / pipe_cfg.fps
    k = pp.flows
    ood_idx = set(summary.get("ood_frames", []))
    # a window ending at frame i covers frames [i-k, i]; it counts as OOD
    # when any frame in it is, matching the window labeling rule
    first_ood_release = None
    for i in range(k, pipe_cfg.n_frames):
        if any(j in ood_idx for j in range(i - k, i + 1)):
            first_ood_release = i * period_ms
            break
    stop_latency = None
    if summary["stopped"] and first_ood_release is not None:
        stop_latency = summary["stop_time_ms"] - first_ood_release

    suffix = args.scenario
    traces_path = os.path.join(out, f"traces-{suffix}.csv")
    pipeline.write_traces_csv(traces_path, traces)
    outcome = dict(summary)
    outcome["scenario"] = args.scenario
    outcome["threshold"] = float(threshold)
    outcome["first_ood_release_ms"] = first_ood_release
    outcome["stop_latency_ms"] = stop_latency
    outcome["deadline_ms"] = 800.0
    outcome_path = os.path.join(out, f"outcome-{suffix}.json")
    pipeline.write_outcome_json(outcome_path, outcome)

    hist = {"bin_ms": 10.0, "distributions": []}
    for label, task in zip("ABC", pipeline.TASK_NAMES):
        edges, counts = pipeline.response_histogram(traces, task)
        stats = pipeline.response_stats(traces, task)
        hist["distributions"].append({
            "name": label, "task": task,
            "edges_ms": edges.tolist(), "counts": counts.tolist(),
            "mean_ms": stats["mean"], "p95_ms": stats["p95"],
            "max_ms": stats["max"], "misses": stats["misses"],
        })
    hist_path = _write_json(os.path.join(out, f"histograms-{suffix}.json"), hist)

    _write_run_log(out, f"run-demo-{suffix}", cfg,
                   [traces_path, outcome_path, hist_path],
                   {"models_dir": args.models, "clock": pipe_cfg.clock})
    if summary["stopped"]:
        lat = "n/a" if stop_latency is None else f"{stop_latency:.0f} ms"
        print(f"stopped=true at frame {summary['stop_frame']} "
              f"(latency {lat}, off_road={summary['off_road']})")
    else:
        print(f"stopped=false distance {summary['distance_m']:.2f} m "
              f"off_road={summary['off_road']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

def _fmt_matrix(cm, indent="    ") -> str:
    names = list(detect.CLASSES) + ["background"]
    width = max(len(n) for n in names)
    lines = [indent + " " * (width + 2)
             + "  ".join(f"{n:>{width}}" for n in names)]
    for i, row in enumerate(cm):
        cells = "  ".join(f"{int(v):{width}d}" for v in row)
        lines.append(f"{indent}{names[i]:>{width}}  {cells}")
    return "\n".join(lines)


def _report_ood(out_dir: str, lines: list[str]) -> None:
    path = os.path.join(out_dir, "ood-metrics.json")
    if not os.path.exists(path):
        return
    with open(path, encoding="utf-8") as f:
        m = json.load(f)
    pp = m["preproc"]
    lines += ["## Out-of-distribution monitor", ""]
    lines.append(f"- input {pp['size'][0]}x{pp['size'][1]}, "
                 f"{pp['flows']} flows, {pp['interp']}")
    lines.append(f"- pooled F1 {m['f1']:.4f} (precision {m['precision']:.4f}, "
                 f"recall {m['recall']:.4f}); float model F1 {m['f1_float']:.4f}")
    lines.append(f"- quantized-vs-float verdict agreement "
                 f"{m['quantized_float_agreement']:.4f}")
    lines.append(f"- threshold {m['threshold']:.6f} "
                 f"(quantile {m['quantile']}), strict {m['threshold_max']:.6f}")
    lines.append("")


def _report_candidates(out_dir: str, lines: list[str]) -> None:
    path = os.path.join(out_dir, "candidates.csv")
    if not os.path.exists(path):
        return
    with open(path, encoding="utf-8") as f:
        rows = [line.strip().split(",") for line in f if line.strip()]
    header, rows = rows[0], rows[1:]
    rows.sort(key=lambda r: -float(r[3]))
    lines += ["## Preprocessing candidates", "",
              "| Size | Flows | Interp | F1 | ET mean [ms] | ET var [ms^2] |",
              "|------|-------|--------|-----|--------------|---------------|"]
    for r in rows:
        lines.append(f"| {r[0]} | {r[1]} | {r[2]} | {float(r[3]):.4f} "
                     f"| {float(r[4]):.2f} | {float(r[5]):.2f} |")
    lines.append("")


def _report_detectors(out_dir: str, lines: list[str]) -> None:
    paths = sorted(p for p in os.listdir(out_dir)
                   if p.startswith("detector-metrics-") and p.endswith(".json"))
    if not paths:
        return
    lines += ["## Object detector sweep", "",
              "| Size | ACET [ms] | duckie recall | cone | duckiebot |",
              "|------|-----------|---------------|------|-----------|"]
    mats = []
    for p in paths:
        with open(os.path.join(out_dir, p), encoding="utf-8") as f:
            m = json.load(f)
        r = m["class_recall"]
        lines.append(f"| {m['size']} | {m['acet_ms']:.2f} | {r['duckie']:.3f} "
                     f"| {r['cone']:.3f} | {r['duckiebot']:.3f} |")
        mats.append((m["size"], m["confusion_matrix"]))
    lines.append("")
    for size, cm in mats:
        lines.append(f"Confusion matrix at S={size} (rows = ground truth):")
        lines.append("")
        lines.append("```")
        lines.append(_fmt_matrix(cm, indent=""))
        lines.append("```")
        lines.append("")


def _report_demo(out_dir: str, lines: list[str]) -> None:
    found = False
    for scenario in ("clean", "snow"):
        opath = os.path.join(out_dir, f"outcome-{scenario}.json")
        hpath = os.path.join(out_dir, f"histograms-{scenario}.json")
        if not os.path.exists(opath):
            continue
        if not found:
            lines += ["## Closed-loop demo", ""]
            found = True
        with open(opath, encoding="utf-8") as f:
            o = json.load(f)
        state = "stopped" if o["stopped"] else "completed"
        extra = ""
        if o.get("stop_latency_ms") is not None:
            extra = f", stop latency {o['stop_latency_ms']:.0f} ms"
        lines.append(f"- {scenario}: {state}, off_road={o['off_road']}{extra}")
        if os.path.exists(hpath):
            with open(hpath, encoding="utf-8") as f:
                h = json.load(f)
            for d in h["distributions"]:
                lines.append(f"  - ({d['name']}) {d['task']}: "
                             f"mean {d['mean_ms']:.1f} ms, p95 {d['p95_ms']:.1f} ms, "
                             f"max {d['max_ms']:.1f} ms, misses {d['misses']}")
    if found:
        lines.append("")


def cmd_report(args) -> int:
    out = args.out
    if not os.path.isdir(out):
        raise ArgumentError(f"{out} is not a directory")
    lines = ["# Run report", ""]
    _report_ood(out, lines)
    _report_candidates(out, lines)
    _report_detectors(out, lines)
    _report_demo(out, lines)
    if len(lines) <= 2:
        raise ArgumentError(f"no known artifacts in {out}")
    path = os.path.join(out, "report.md")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines))
        f.write("\n")
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodtown",
        description="Synthetic-town driving stack with an optical-flow "
                    "OOD watchdog: data generation, training, tuning, "
                    "closed-loop demos, and reports.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render the training set and test videos")
    _add_common(p)
    p.add_argument("--frames", type=int, default=2048,
                   help="training frames (default 2048)")
    p.add_argument("--videos", type=int, default=8,
                   help="labeled test videos (default 8)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-ood", help="train and quantize the OOD monitor")
    _add_common(p)
    p.add_argument("--data", required=True, help="gen-data output directory")
    p.set_defaults(func=cmd_train_ood)

    p = sub.add_parser("train-detector", help="train and quantize the object detector")
    _add_common(p)
    p.add_argument("--scenes", type=int, default=500,
                   help="mixed training scenes (default 500)")
    p.add_argument("--duck-scenes", type=int, default=150,
                   help="extra single-duck training scenes (default 150)")
    p.add_argument("--test-scenes", type=int, default=150,
                   help="held-out evaluation scenes (default 150)")
    p.set_defaults(func=cmd_train_detector)

    p = sub.add_parser("tune-ga", help="genetic search over preprocessing recipes")
    _add_common(p)
    p.add_argument("--data", required=True, help="gen-data output directory")
    p.add_argument("--frames-limit", type=int, default=384,
                   help="frames used per sequence (default 384)")
    p.add_argument("--vae-epochs", type=int, default=8,
                   help="epochs per candidate (default 8)")
    p.add_argument("--et-mode", choices=("wall", "virtual"), default="virtual",
                   help="execution-time measurement (default virtual, "
                        "deterministic)")
    p.set_defaults(func=cmd_tune_ga)

    p = sub.add_parser("run-demo", help="drive the closed-loop pipeline")
    _add_common(p)
    p.add_argument("--models", required=True,
                   help="directory with trained model files")
    p.add_argument("--scenario", choices=("snow", "clean"), default="snow")
    p.add_argument("--clock", choices=("wall", "virtual"),
                   help="override the configured clock")
    p.add_argument("--threshold", type=float,
                   help="override the stored OOD threshold")
    p.set_defaults(func=cmd_run_demo)

    p = sub.add_parser("report", help="collect artifacts into report.md")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingError as exc:
        epoch = f" (epoch {exc.epoch})" if exc.epoch is not None else ""
        print(f"error: training failed{epoch}: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except PipelineError as exc:
        print(f"error: pipeline failed: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (ConfigError, ArgumentError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OodtownError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc!r}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
