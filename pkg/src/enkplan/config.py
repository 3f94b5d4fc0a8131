"""JSON config parsing shared by the CLI and tests.

Parsers raise ConfigError naming the offending field so the CLI can map
configuration problems to exit code 2 with a useful message.
"""

from __future__ import annotations

import hashlib
import json

from .constraints import BarrierConfig, ConstraintConfig
from .dynamics import BicycleParams
from .enks import SmootherConfig
from .planner import PlannerConfig
from .scenario import ObstacleSpec, ScenarioConfig
from .training import TrainingConfig
from .virtual import NoiseModel


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


def _require(doc, field, kind=None):
    if field not in doc:
        raise ConfigError(field, "missing")
    value = doc[field]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(field, f"expected {kind}, got {type(value).__name__}")
    return value


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "file not found")
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}")


def config_hash(doc) -> str:
    """Stable hash of the semantic content of a config mapping."""
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def parse_training_config(doc: dict) -> TrainingConfig:
    known = {f for f in TrainingConfig.__dataclass_fields__}
    kwargs = {}
    for key, value in doc.items():
        if key in ("hidden_sizes", "validation_rmse_threshold"):
            continue
        if key not in known:
            raise ConfigError(key, "unknown training field")
        if key in ("accel_range", "steer_range", "position_range", "speed_range"):
            value = tuple(value)
        kwargs[key] = value
    try:
        return TrainingConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("training", str(exc))


def parse_planner_config(doc: dict) -> PlannerConfig:
    sm = doc.get("smoother", {})
    smoother = SmootherConfig(
        n_members=int(sm.get("n_members", 200)),
        jitter=float(sm.get("jitter", 1e-8)),
        compute_covariances=bool(sm.get("compute_covariances", False)),
        rng_seed=int(sm.get("rng_seed", 0)))
    weights = _require(doc, "weights", dict)
    noise = NoiseModel.from_weights(
        _require(weights, "control_weight_diag", list),
        _require(weights, "state_weight_diag", list),
        float(_require(doc, "barrier", dict).get("r_eta", 1e-4)))
    bar = doc["barrier"]
    barrier = BarrierConfig(alpha=float(bar.get("alpha", 1.0)),
                            beta=float(bar.get("beta", 5.0)),
                            r_eta=float(bar.get("r_eta", 1e-4)))
    con = _require(doc, "constraints", dict)
    constraints = ConstraintConfig(
        d_min=float(con.get("d_min", 1.0)),
        road_half_width=float(con.get("road_half_width", 3.5)),
        u_min=tuple(con.get("u_min", (-3.0, -0.5))),
        u_max=tuple(con.get("u_max", (3.0, 0.5))),
        vehicle_disc_radius=float(con.get("vehicle_disc_radius", 1.0)),
        discs_per_vehicle=int(con.get("discs_per_vehicle", 2)),
        vehicle_length=float(con.get("vehicle_length", 4.2)))
    try:
        return PlannerConfig(
            horizon=int(_require(doc, "horizon")),
            dt=float(_require(doc, "dt")),
            smoother=smoother, noise=noise, barrier=barrier,
            constraints=constraints)
    except ValueError as exc:
        raise ConfigError("planner", str(exc))


def parse_scenario_config(doc: dict) -> ScenarioConfig:
    road_spec = _require(doc, "road", dict)
    ev = _require(doc, "ev", dict)
    obstacles = [
        ObstacleSpec(start_arclength=float(_require(ob, "start_arclength")),
                     lane_offset=float(ob.get("lane_offset", 0.0)),
                     speed=float(_require(ob, "speed")))
        for ob in doc.get("obstacles", [])
    ]
    bic = doc.get("bicycle", {})
    bicycle = BicycleParams(wheelbase=float(bic.get("wheelbase", 2.5)),
                            speed_floor=float(bic.get("speed_floor", 0.0)),
                            speed_ceiling=float(bic.get("speed_ceiling", 40.0)))
    try:
        return ScenarioConfig(
            road_spec=road_spec,
            ev_start_arclength=float(_require(ev, "start_arclength")),
            ev_lane_offset=float(ev.get("lane_offset", 0.0)),
            ev_speed=float(_require(ev, "speed")),
            obstacles=obstacles,
            target_speed=float(_require(doc, "target_speed")),
            steps=int(_require(doc, "steps")),
            planner=parse_planner_config(_require(doc, "planner", dict)),
            bicycle=bicycle,
            rng_seed=int(doc.get("seed", 0)))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("scenario", str(exc))
