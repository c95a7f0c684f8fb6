"""One JSON document configures every command.

The file holds up to six sections (world, preproc, vae, detector, ga,
pipeline), each mirroring a library config type. Every key is optional;
unknown sections or keys are rejected outright so a typo cannot silently
fall back to a default. The root seed comes from the command line, not
the file, and fans out to named sub-streams inside each module.
"""

from __future__ import annotations

import dataclasses
import json

from . import detect, ga, pipeline, preproc, sim, vae
from .camera import CameraModel
from .errors import ConfigError

SECTIONS = ("world", "preproc", "vae", "detector", "ga", "pipeline")

# camera shared by data generation and the closed-loop demo; the OOD
# threshold is calibrated on frames from this geometry
CAMERA_WIDTH = 320
CAMERA_HEIGHT = 240

# training profile for the OOD command; the KL weight sits well below
# 1.0 because the reconstruction term is a per-element mean and a large
# weight collapses the posterior before the decoder learns anything
VAE_TRAIN_DEFAULTS = {
    "latent": 32,
    "beta": 1e-5,
    "epochs": 30,
    "batch_size": 64,
    "lr": 1e-3,
    "optimizer": "adam",
}

DEFAULT_QUANTILE = 0.99


@dataclasses.dataclass(frozen=True)
class DemoConfig:
    """Scenario knobs for run-demo, carried in the pipeline section."""
    snow_density: float = 0.075
    snow_start: int = 60
    snow_stop: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.snow_density <= 0.2:
            raise ConfigError("snow_density must be in [0, 0.2]")
        if self.snow_start < 0:
            raise ConfigError("snow_start must be >= 0")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration for one command invocation."""
    seed: int
    raw: dict
    world: sim.WorldConfig
    preproc: preproc.PreprocConfig
    vae: vae.VaeConfig
    quantile: float
    detector: detect.DetectorConfig
    ga: ga.GaConfig
    pipeline: pipeline.PipelineConfig
    demo: DemoConfig

    def camera(self) -> CameraModel:
        return CameraModel.sized(CAMERA_WIDTH, CAMERA_HEIGHT)

    def to_log(self) -> dict:
        """Resolved values echoed into run logs, JSON-ready."""
        track = self.world.track
        return {
            "seed": self.seed,
            "config_file": self.raw,
            "world": {
                "track_straight": track.segments[0].length,
                "track_radius": track.segments[1].radius,
                "lane_half": self.world.lane_half,
                "white_width": self.world.white_width,
                "yellow_width": self.world.yellow_width,
                "dash_len": self.world.dash_len,
                "dash_gap": self.world.dash_gap,
            },
            "preproc": {
                "size": list(self.preproc.size),
                "flows": self.preproc.flows,
                "interp": self.preproc.interp,
                "v_max": self.preproc.v_max,
            },
            "vae": {
                "in_dims": list(self.vae.in_dims),
                "latent": self.vae.latent,
                "beta": self.vae.beta,
                "epochs": self.vae.epochs,
                "batch_size": self.vae.batch_size,
                "lr": self.vae.lr,
                "optimizer": self.vae.optimizer,
                "momentum": self.vae.momentum,
                "quantile": self.quantile,
            },
            "detector": {
                "size": self.detector.size,
                "conf_threshold": self.detector.conf_threshold,
                "nms_iou": self.detector.nms_iou,
                "epochs": self.detector.epochs,
                "batch_size": self.detector.batch_size,
                "lr": self.detector.lr,
            },
            "ga": {
                "population": self.ga.population,
                "generations": self.ga.generations,
                "tournament": self.ga.tournament,
                "crossover_rate": self.ga.crossover_rate,
                "mutation_rate": self.ga.mutation_rate,
                "elitism": self.ga.elitism,
            },
            "pipeline": {
                "workers": self.pipeline.workers,
                "fps": self.pipeline.fps,
                "n_frames": self.pipeline.n_frames,
                "m_consecutive": self.pipeline.m_consecutive,
                "clock": self.pipeline.clock,
                "max_queue": self.pipeline.max_queue,
                "snow_density": self.demo.snow_density,
                "snow_start": self.demo.snow_start,
                "snow_stop": self.demo.snow_stop,
            },
        }


def _section(data: dict, name: str) -> dict:
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a JSON object")
    return dict(sec)


def _reject_unknown(sec: dict, allowed, name: str) -> None:
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in section {name!r}; "
            f"allowed: {sorted(allowed)}")


def _dataclass_keys(cls, drop=("seed",)) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)} - set(drop)


def _build_world(sec: dict) -> sim.WorldConfig:
    allowed = ("track_straight", "track_radius", "lane_half",
               "white_width", "yellow_width", "dash_len", "dash_gap")
    _reject_unknown(sec, allowed, "world")
    track = sim.stadium_track(straight=float(sec.pop("track_straight", 3.0)),
                              radius=float(sec.pop("track_radius", 0.8)))
    return sim.WorldConfig(track=track, **sec)


def _build_preproc(sec: dict) -> preproc.PreprocConfig:
    allowed = _dataclass_keys(preproc.PreprocConfig, drop=())
    _reject_unknown(sec, allowed, "preproc")
    if "size" in sec:
        sec["size"] = tuple(int(v) for v in sec["size"])
    return preproc.PreprocConfig(**sec)


def _build_vae(sec: dict, pp: preproc.PreprocConfig,
               seed: int) -> tuple[vae.VaeConfig, float]:
    allowed = _dataclass_keys(vae.VaeConfig, drop=("seed", "in_dims"))
    allowed.add("quantile")
    _reject_unknown(sec, allowed, "vae")
    quantile = float(sec.pop("quantile", DEFAULT_QUANTILE))
    if not 0.0 < quantile <= 1.0:
        raise ConfigError("vae.quantile must be in (0, 1]")
    kwargs = {**VAE_TRAIN_DEFAULTS, **sec}
    cfg = vae.VaeConfig(in_dims=(2 * pp.flows,) + tuple(pp.size),
                        seed=seed, **kwargs)
    return cfg, quantile


def _build_detector(sec: dict, seed: int) -> detect.DetectorConfig:
    allowed = _dataclass_keys(detect.DetectorConfig)
    _reject_unknown(sec, allowed, "detector")
    return detect.DetectorConfig(seed=seed, **sec)


def _build_ga(sec: dict, seed: int) -> ga.GaConfig:
    allowed = _dataclass_keys(ga.GaConfig)
    _reject_unknown(sec, allowed, "ga")
    return ga.GaConfig(seed=seed, **sec)


def _build_pipeline(sec: dict, seed: int) -> tuple[pipeline.PipelineConfig, DemoConfig]:
    demo_keys = ("snow_density", "snow_start", "snow_stop")
    allowed = _dataclass_keys(pipeline.PipelineConfig) | set(demo_keys)
    _reject_unknown(sec, allowed, "pipeline")
    demo = DemoConfig(**{k: sec.pop(k) for k in demo_keys if k in sec})
    return pipeline.PipelineConfig(seed=seed, **sec), demo


def config_from_dict(data: dict, seed: int = 0) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(
            f"unknown section(s) {sorted(unknown)}; allowed: {list(SECTIONS)}")
    try:
        world = _build_world(_section(data, "world"))
        pp = _build_preproc(_section(data, "preproc"))
        vae_cfg, quantile = _build_vae(_section(data, "vae"), pp, seed)
        det_cfg = _build_detector(_section(data, "detector"), seed)
        ga_cfg = _build_ga(_section(data, "ga"), seed)
        pipe_cfg, demo = _build_pipeline(_section(data, "pipeline"), seed)
    except TypeError as exc:
        # dataclass rejected a keyword: surface it as a config problem
        raise ConfigError(str(exc)) from exc
    return RunConfig(seed=int(seed), raw=data, world=world, preproc=pp,
                     vae=vae_cfg, quantile=quantile, detector=det_cfg,
                     ga=ga_cfg, pipeline=pipe_cfg, demo=demo)


def load_run_config(path: str | None = None, seed: int = 0) -> RunConfig:
    """Parse a config file (or use all defaults when path is None)."""
    if path is None:
        return config_from_dict({}, seed)
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data, seed)
