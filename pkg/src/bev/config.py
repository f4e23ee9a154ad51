"""Run configuration: a JSON file of nested sections, validated against known keys.

Resolution order is defaults, then the file (``--config`` or ``$BEV_CONFIG``),
then command-line overrides given as dotted keys (``grid.D=32``).
"""
import copy
import json
import os

from .body_model import DEFAULT_T_ALPHA, make_toy_assets
from .camera import SPACINGS, CameraIntrinsics, VoxelGrid
from .errors import ConfigError
from .losses import AGE_CLASSES, DEFAULT_GAMMA, AgeRanges, LossWeights
from .metrics import EQUAL_DEPTH_THRESHOLD, PCK_FACTOR

CONFIG_ENV = "BEV_CONFIG"

DEFAULTS = {
    "camera": {"width": 512, "height": 512, "fov_deg": 60.0},
    "grid": {"D": 64, "H": 64, "W": 64, "d_min": 0.5, "d_max": 50.0, "spacing": "uniform"},
    "parse": {"threshold": 0.2, "max_people": 64, "sigma": 2.0},
    "losses": {
        "weights": {k: 1.0 for k in LossWeights().as_dict()},
        "focal_a": 2.0,
        "focal_b": 4.0,
        "gamma": DEFAULT_GAMMA,
        "t_alpha": DEFAULT_T_ALPHA,
        "age_ranges": {k: list(getattr(AgeRanges(), k)) for k in AGE_CLASSES},
    },
    "metrics": {"match_threshold_px": None, "eq_depth_threshold": EQUAL_DEPTH_THRESHOLD,
                "pck_factor": PCK_FACTOR, "pcdr_attribution": "split"},
    "assets": {"path": None, "num_vertices": 64, "seed": 0, "num_eval_joints": 24},
    "paths": {"prior": None},
}


def _merge(base, update, where=""):
    for key, val in update.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{path}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key '{path}' must be an object")
            _merge(base[key], val, path + ".")
        else:
            base[key] = val


def _parse_override(item):
    if "=" not in item:
        raise ConfigError(f"override '{item}' must look like section.key=value")
    key, raw = item.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    out = cur = {}
    parts = key.split(".")
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = val
    return out


class RunConfig:
    """Resolved configuration plus constructors for the objects it describes."""

    def __init__(self, data=None):
        self.data = copy.deepcopy(DEFAULTS)
        if data:
            _merge(self.data, data)
        self._check()

    @classmethod
    def load(cls, path=None, overrides=()):
        path = path or os.environ.get(CONFIG_ENV) or None
        data = {}
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    data = json.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
            if not isinstance(data, dict):
                raise ConfigError(f"config file {path} must hold a JSON object")
        cfg = cls(data)
        for item in overrides:
            _merge(cfg.data, _parse_override(item))
        cfg._check()
        return cfg

    def _check(self):
        d = self.data
        try:
            self.camera()
            self.grid()
            self.age_ranges()
            self.weights()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        p = d["parse"]
        if not (0.0 <= p["threshold"] <= 1.0):
            raise ConfigError("parse.threshold must lie in [0, 1]")
        if not (isinstance(p["max_people"], int) and p["max_people"] >= 1):
            raise ConfigError("parse.max_people must be a positive integer")
        if not p["sigma"] > 0:
            raise ConfigError("parse.sigma must be positive")
        lo = d["losses"]
        if not lo["gamma"] > 0:
            raise ConfigError("losses.gamma must be positive")
        if not (0.0 < lo["t_alpha"] <= 1.0):
            raise ConfigError("losses.t_alpha must lie in (0, 1]")
        if lo["focal_a"] < 0 or lo["focal_b"] < 0:
            raise ConfigError("losses.focal_a and losses.focal_b must be non-negative")
        m = d["metrics"]
        if m["match_threshold_px"] is not None and not m["match_threshold_px"] > 0:
            raise ConfigError("metrics.match_threshold_px must be positive or null")
        if not m["eq_depth_threshold"] > 0:
            raise ConfigError("metrics.eq_depth_threshold must be positive")
        if not m["pck_factor"] > 0:
            raise ConfigError("metrics.pck_factor must be positive")
        if m["pcdr_attribution"] not in ("split", "both"):
            raise ConfigError("metrics.pcdr_attribution must be 'split' or 'both'")
        if d["grid"]["spacing"] not in SPACINGS:
            raise ConfigError(f"grid.spacing must be one of {SPACINGS}")
        a = d["assets"]
        if not (isinstance(a["num_vertices"], int) and a["num_vertices"] >= 8):
            raise ConfigError("assets.num_vertices must be an integer >= 8")

    def __getitem__(self, key):
        return self.data[key]

    def camera(self):
        c = self.data["camera"]
        return CameraIntrinsics(int(c["width"]), int(c["height"]), float(c["fov_deg"]))

    def grid(self):
        g = self.data["grid"]
        return VoxelGrid(int(g["D"]), int(g["H"]), int(g["W"]), float(g["d_min"]), float(g["d_max"]),
                         g["spacing"])

    def age_ranges(self):
        return AgeRanges(**{k: tuple(v) for k, v in self.data["losses"]["age_ranges"].items()})

    def weights(self):
        return LossWeights(**{"w_" + k: float(v) for k, v in self.data["losses"]["weights"].items()})

    @property
    def t_alpha(self):
        return float(self.data["losses"]["t_alpha"])

    @property
    def gamma(self):
        return float(self.data["losses"]["gamma"])

    def assets(self):
        a = self.data["assets"]
        if a["path"]:
            from .dataio import load_assets
            return load_assets(a["path"])
        return make_toy_assets(a["num_vertices"], a["seed"], a["num_eval_joints"])

    def prior(self):
        path = self.data["paths"]["prior"]
        if not path:
            return None
        from .dataio import load_prior
        return load_prior(path)

    def to_dict(self):
        return copy.deepcopy(self.data)

    def dumps(self):
        return json.dumps(self.data, sort_keys=True, indent=2)
