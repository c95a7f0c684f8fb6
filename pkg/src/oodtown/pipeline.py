"""Concurrent task execution against a frame stream, with tracing.

The scheduler is a discrete-event simulation of a small worker pool.
Task functions really run (they produce the commands and verdicts that
drive the world); what the clock charges for each invocation is either
the measured wall time of the call or a deterministic virtual cost.
Frames reach each task through a single-slot latest-value mailbox, so a
slow task always sees the newest frame and older ones are dropped and
counted.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
import math
import time

import numpy as np

from . import detect as detect_mod
from . import flow as flow_mod
from . import preproc, sim, vae
from .errors import ArgumentError, OverloadError, PipelineError
from .rng import sub_rng

TASK_NAMES = ("lane_follow", "object_detect", "ood_detect")

_PRIO_FINISH = 0
_PRIO_FRAME = 1


@dataclasses.dataclass(frozen=True)
class TaskSpec:
    name: str
    trigger: int = 1            # run on every Nth frame
    deadline_ms: float = 800.0

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ArgumentError(f"task name must be one of {TASK_NAMES}, got {self.name!r}")
        if self.trigger < 1:
            raise ArgumentError("trigger must be >= 1")
        if not self.deadline_ms > 0:
            raise ArgumentError("deadline must be positive")


def default_tasks() -> tuple[TaskSpec, ...]:
    return (TaskSpec("lane_follow", 1, 100.0),
            TaskSpec("object_detect", 3, 250.0),
            TaskSpec("ood_detect", 1, 800.0))


@dataclasses.dataclass(frozen=True)
class TraceRecord:
    task: str
    frame_id: int
    release_ms: float
    start_ms: float
    finish_ms: float
    deadline_ms: float

    def __post_init__(self):
        if not self.release_ms <= self.start_ms <= self.finish_ms:
            raise ArgumentError("trace needs release <= start <= finish")

    @property
    def response_ms(self) -> float:
        return self.finish_ms - self.release_ms

    @property
    def missed(self) -> bool:
        return self.response_ms > self.deadline_ms


@dataclasses.dataclass(frozen=True)
class EStopState:
    m: int = 1
    stopped: bool = False
    counter: int = 0
    trigger_frame: int | None = None
    stop_time_ms: float | None = None

    def __post_init__(self):
        if self.m < 1:
            raise ArgumentError("consecutive-positive threshold must be >= 1")


def estop_update(state: EStopState, verdict, frame_id: int | None = None,
                 t_ms: float | None = None) -> EStopState:
    """Latched counter update; verdict is an OodVerdict or a plain bool."""
    if state.stopped:
        return state
    is_ood = bool(verdict.is_ood) if hasattr(verdict, "is_ood") else bool(verdict)
    if not is_ood:
        return dataclasses.replace(state, counter=0)
    counter = state.counter + 1
    if counter >= state.m:
        return dataclasses.replace(state, stopped=True, counter=counter,
                                   trigger_frame=frame_id, stop_time_ms=t_ms)
    return dataclasses.replace(state, counter=counter)


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    workers: int = 4
    fps: float = 15.0
    n_frames: int = 450
    m_consecutive: int = 1
    clock: str = "wall"
    seed: int = 0
    max_queue: int = 10000

    def __post_init__(self):
        if self.workers < 1:
            raise ArgumentError("need at least one worker")
        if self.m_consecutive < 1:
            raise ArgumentError("m_consecutive must be >= 1")
        if self.clock not in ("wall", "virtual"):
            raise ArgumentError(f"clock must be wall or virtual, got {self.clock!r}")
        if not self.fps > 0 or self.n_frames < 1:
            raise ArgumentError("fps must be positive and n_frames >= 1")


@dataclasses.dataclass
class PipelineTask:
    """A task binding: spec + callable fn(frame_id, frame) -> result.

    et_model supplies virtual-clock service times: a constant (ms), a
    callable rng -> ms, or a sequence sampled uniformly. Required when the
    pipeline clock is virtual.
    """
    spec: TaskSpec
    fn: object
    et_model: object | None = None


def _sample_et(model, rng: np.random.Generator) -> float:
    if callable(model):
        ms = float(model(rng))
    elif isinstance(model, (int, float)):
        ms = float(model)
    elif model is not None:
        seq = np.asarray(model, dtype=np.float64)
        if seq.size == 0:
            raise ArgumentError("empty ET sample set")
        ms = float(seq[int(rng.integers(0, seq.size))])
    else:
        raise ArgumentError("virtual clock needs an et_model for every task")
    if not (math.isfinite(ms) and ms >= 0):
        raise ArgumentError(f"ET model produced a bad duration: {ms}")
    return ms


# ---------------------------------------------------------------------------
# the scheduler

class _TaskRuntime:
    __slots__ = ("task", "pending", "running", "drops", "rng")

    def __init__(self, task: PipelineTask, rng: np.random.Generator):
        self.task = task
        self.pending = None         # (frame_id, release_ms, frame)
        self.running = False
        self.drops = 0
        self.rng = rng


def run_pipeline(source, tasks, cfg: PipelineConfig):
    """Drive the task set against a frame source; returns (traces, summary).

    source is either an iterable of frames (open loop) or an object with
    next_frame(cmd) -> frame | None and an info() dict (closed loop, e.g.
    SimDriver); cmd is the latest finished lane command, zeroed once the
    e-stop latches.
    """
    closed_loop = hasattr(source, "next_frame")
    frames_iter = None if closed_loop else iter(source)
    runtimes = [_TaskRuntime(t, sub_rng(cfg.seed, f"pipeline.et.{t.spec.name}"))
                for t in tasks]
    names = [t.spec.name for t in tasks]
    if len(set(names)) != len(names):
        raise ArgumentError("duplicate task names")

    period = 1000.0 / cfg.fps
    heap: list[tuple[float, int, int, object]] = []
    seq = 0

    def push(t, prio, payload):
        nonlocal seq
        heapq.heappush(heap, (t, prio, seq, payload))
        seq += 1

    for i in range(cfg.n_frames):
        push(i * period, _PRIO_FRAME, ("frame", i))

    traces: list[TraceRecord] = []
    estop = EStopState(m=cfg.m_consecutive)
    current_cmd = (0.0, 0.0)
    command_log: list[tuple[float, float, float]] = []
    busy = 0
    done_frames = 0

    def effective_cmd():
        return (0.0, 0.0) if estop.stopped else current_cmd

    def try_start(now: float):
        nonlocal busy
        ready = [rt for rt in runtimes if rt.pending is not None and not rt.running]
        ready.sort(key=lambda rt: (rt.pending[1], names.index(rt.task.spec.name)))
        for rt in ready:
            if busy >= cfg.workers:
                break
            frame_id, release_ms, frame = rt.pending
            rt.pending = None
            rt.running = True
            busy += 1
            try:
                if cfg.clock == "wall":
                    w0 = time.perf_counter()
                    result = rt.task.fn(frame_id, frame)
                    cost = (time.perf_counter() - w0) * 1000.0
                else:
                    result = rt.task.fn(frame_id, frame)
                    cost = _sample_et(rt.task.et_model, rt.rng)
            except Exception as exc:
                raise PipelineError(f"task failed: {exc}", task=rt.task.spec.name) from exc
            push(now + cost, _PRIO_FINISH,
                 ("finish", rt, frame_id, release_ms, now, result))

    while heap:
        now, prio, _, payload = heapq.heappop(heap)
        if payload[0] == "finish":
            _, rt, frame_id, release_ms, start_ms, result = payload
            rt.running = False
            busy -= 1
            traces.append(TraceRecord(rt.task.spec.name, frame_id, release_ms,
                                      start_ms, now, rt.task.spec.deadline_ms))
            if rt.task.spec.name == "ood_detect" and result is not None:
                estop = estop_update(estop, result, frame_id, now)
            elif rt.task.spec.name == "lane_follow" and result is not None:
                v, om = (result.v, result.omega) if hasattr(result, "v") else result
                current_cmd = (float(v), float(om))
            try_start(now)
        else:
            frame_id = payload[1]
            cmd = effective_cmd()
            command_log.append((now, cmd[0], cmd[1]))
            if closed_loop:
                frame = source.next_frame(cmd)
            else:
                frame = next(frames_iter, None)
            if frame is None:
                continue
            done_frames += 1
            for rt in runtimes:
                if frame_id % rt.task.spec.trigger == 0:
                    if rt.pending is not None:
                        rt.drops += 1
                    rt.pending = (frame_id, now, frame)
            try_start(now)

    summary = {
        "frames": done_frames,
        "stopped": estop.stopped,
        "stop_frame": estop.trigger_frame,
        "stop_time_ms": estop.stop_time_ms,
        "drops": {rt.task.spec.name: rt.drops for rt in runtimes},
        "commands": command_log,
    }
    if closed_loop and hasattr(source, "info"):
        summary.update(source.info())
    return traces, summary


# ---------------------------------------------------------------------------
# closed-loop frame source

class SimDriver:
    """Live simulator as a pipeline frame source.

    next_frame(cmd) renders the camera view at the current pose, injects
    snow when configured, then advances the robot by one frame period
    under cmd. Off-road contact and distance traveled accumulate into
    info() for the run outcome.
    """

    def __init__(self, world: sim.WorldConfig, camera, state: sim.RobotState | None = None,
                 snow: sim.SnowConfig | None = None, seed: int = 0, fps: float = 15.0):
        if not fps > 0:
            raise ArgumentError("fps must be positive")
        self.world = world
        self.camera = camera
        if state is None:
            pos, heading = world.track.point_at(0.0)
            off = world.lane_center_offset
            state = sim.RobotState(pos[0] - math.sin(heading) * off,
                                   pos[1] + math.cos(heading) * off,
                                   heading)
        self.state = state
        self.dt = 1.0 / fps
        self.snow_cfg = snow
        self.snow_rng = sub_rng(seed, "driver.snow")
        self.snow_state = None
        if snow is not None and snow.density > 0:
            self.snow_state = sim.SnowState(snow, camera.width, camera.height, self.snow_rng)
        self.frame_idx = 0
        self.distance_m = 0.0
        self.off_road = False
        self.labels: list[bool] = []

    def next_frame(self, cmd) -> np.ndarray:
        frame, _ = sim.render(self.world, self.state, self.camera)
        label = False
        if self.snow_state is not None:
            frame, label = sim.inject_snow(frame, self.snow_cfg, self.snow_state,
                                           self.snow_rng, self.frame_idx)
        self.labels.append(label)
        self.state = sim.step_kinematics(self.state, cmd, self.dt)
        v = cmd.v if hasattr(cmd, "v") else float(cmd[0])
        self.distance_m += abs(v) * self.dt
        lat, _, _ = self.world.track.query(np.array([[self.state.x, self.state.y]]))
        if abs(float(lat[0])) > self.world.lane_half + self.world.white_width / 2:
            self.off_road = True
        self.frame_idx += 1
        return frame

    def info(self) -> dict:
        return {
            "off_road": self.off_road,
            "distance_m": self.distance_m,
            "final_pose": [self.state.x, self.state.y, self.state.theta],
            "ood_frames": [i for i, v in enumerate(self.labels) if v],
        }


def make_standard_tasks(lane_follower, ood_model, ood_threshold: float,
                        pp: preproc.PreprocConfig, det_model, det_cfg,
                        specs=None, fps: float = 15.0, flow_params=None,
                        et_models: dict | None = None) -> list[PipelineTask]:
    """Bind the three demo tasks to their models as pipeline closures.

    The OOD task keeps its own frame window and returns None until it has
    seen enough flow fields for a full stack.
    """
    specs = specs or default_tasks()
    by_name = {s.name: s for s in specs}
    et_models = et_models or {}
    period_s = 1.0 / fps

    lane_spec = by_name["lane_follow"]
    lane_dt = lane_spec.trigger * period_s

    def lane_fn(frame_id, frame):
        return lane_follower.step(frame, lane_dt)

    state = {"prev": None, "flows": []}

    def ood_fn(frame_id, frame):
        # flow at the camera resolution; build_stack rescales the fields
        gray = sim.to_gray(frame)
        if state["prev"] is None:
            state["prev"] = gray
            return None
        state["flows"].append(flow_mod.farneback_flow(state["prev"], gray, flow_params))
        state["prev"] = gray
        if len(state["flows"]) > pp.flows:
            state["flows"].pop(0)
        if len(state["flows"]) < pp.flows:
            return None
        stack = preproc.build_stack(state["flows"], pp)
        return vae.classify(ood_model, stack, ood_threshold)

    def det_fn(frame_id, frame):
        return detect_mod.detect(det_model, frame, det_cfg)

    fns = {"lane_follow": lane_fn, "ood_detect": ood_fn, "object_detect": det_fn}
    return [PipelineTask(by_name[name], fns[name], et_models.get(name))
            for name in ("lane_follow", "object_detect", "ood_detect")
            if name in by_name]


# ---------------------------------------------------------------------------
# queueing-model runs (no task functions, pure ET models)

def virtual_run(tasks, cfg: PipelineConfig):
    """Deterministic discrete-event run of (TaskSpec, et_model) pairs.

    Unlike run_pipeline's latest-value mailboxes, every release is queued
    FIFO, which is the right model for watching backlog grow under
    overload; a queue past cfg.max_queue aborts with OverloadError.
    """
    specs = [t[0] for t in tasks]
    models = [t[1] for t in tasks]
    rngs = [sub_rng(cfg.seed, f"virtual.et.{s.name}.{i}")
            for i, s in enumerate(specs)]
    period = 1000.0 / cfg.fps
    heap: list[tuple[float, int, int, tuple]] = []
    seq = 0

    def push(t, prio, payload):
        nonlocal seq
        heapq.heappush(heap, (t, prio, seq, payload))
        seq += 1

    for i in range(cfg.n_frames):
        push(i * period, _PRIO_FRAME, ("frame", i))

    queues: list[list[tuple[int, float]]] = [[] for _ in specs]
    running = [False] * len(specs)
    busy = 0
    traces: list[TraceRecord] = []

    def try_start(now: float):
        nonlocal busy
        order = sorted(range(len(specs)),
                       key=lambda ti: (queues[ti][0][1] if queues[ti] else math.inf, ti))
        for ti in order:
            if busy >= cfg.workers:
                break
            if running[ti] or not queues[ti]:
                continue
            frame_id, release_ms = queues[ti].pop(0)
            running[ti] = True
            busy += 1
            cost = _sample_et(models[ti], rngs[ti])
            push(now + cost, _PRIO_FINISH, ("finish", ti, frame_id, release_ms, now))

    while heap:
        now, prio, _, payload = heapq.heappop(heap)
        if payload[0] == "finish":
            _, ti, frame_id, release_ms, start_ms = payload
            running[ti] = False
            busy -= 1
            traces.append(TraceRecord(specs[ti].name, frame_id, release_ms,
                                      start_ms, now, specs[ti].deadline_ms))
            try_start(now)
        else:
            frame_id = payload[1]
            for ti, spec in enumerate(specs):
                if frame_id % spec.trigger == 0:
                    queues[ti].append((frame_id, now))
                    if len(queues[ti]) > cfg.max_queue:
                        raise OverloadError(
                            f"task {spec.name} queue exceeded {cfg.max_queue} releases")
            try_start(now)
    return traces


# ---------------------------------------------------------------------------
# statistics and reports

def response_stats(traces, task: str) -> dict:
    """Response-time summary for one task; response = finish - release."""
    rs = np.asarray([t.response_ms for t in traces if t.task == task], dtype=np.float64)
    if rs.size == 0:
        raise ArgumentError(f"no trace records for task {task!r}")
    misses = sum(1 for t in traces if t.task == task and t.missed)
    return {
        "count": int(rs.size),
        "mean": float(rs.mean()),
        "variance": float(rs.var(ddof=1)) if rs.size > 1 else 0.0,
        "max": float(rs.max()),
        "p50": float(np.percentile(rs, 50)),
        "p95": float(np.percentile(rs, 95)),
        "p99": float(np.percentile(rs, 99)),
        "misses": int(misses),
    }


def response_histogram(traces, task: str, bin_ms: float = 10.0):
    """(edges, counts) with fixed-width bins from zero past the max."""
    rs = np.asarray([t.response_ms for t in traces if t.task == task], dtype=np.float64)
    if rs.size == 0:
        raise ArgumentError(f"no trace records for task {task!r}")
    n_bins = max(int(math.ceil((rs.max() + 1e-9) / bin_ms)), 1)
    edges = np.arange(n_bins + 1, dtype=np.float64) * bin_ms
    counts, _ = np.histogram(rs, bins=edges)
    return edges, counts


def write_traces_csv(path: str, traces) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("task,frame_id,release_ms,start_ms,finish_ms,response_ms,deadline_ms,missed\n")
        for t in traces:
            f.write(f"{t.task},{t.frame_id},{t.release_ms:.3f},{t.start_ms:.3f},"
                    f"{t.finish_ms:.3f},{t.response_ms:.3f},{t.deadline_ms:.3f},"
                    f"{int(t.missed)}\n")


def write_outcome_json(path: str, summary: dict) -> None:
    out = dict(summary)
    out["commands"] = [[round(t, 3), v, om] for t, v, om in summary.get("commands", [])]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(out, f, indent=1, sort_keys=True)
        f.write("\n")
