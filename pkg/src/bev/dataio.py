"""Persistent formats and weak-annotation utilities.

Annotation and prediction files are JSON Lines: a header object naming the
format and version, then one scene per line. Keys are sorted and separators
fixed, so identical inputs serialise to identical bytes.

The array container is a text manifest followed by a raw payload::

    BEVARRAY 1
    count <n>
    array <name> f8 <d0>x<d1>... <offset> <nbytes>     (shape "-" for scalars)
    meta <key> <json value>
    end
    <little-endian float64 payloads, C order, offsets relative to payload start>
"""
import io
import json
import math
import os
import sys
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .body_model import BodyModelAssets, BodyParams
from .errors import BEVError, ParseError, PriorFileCorrupt, SchemaViolation
from .losses import AGE_CLASSES, DEFAULT_GAMMA, PoseMixturePrior

ANNOTATION_FORMAT = "bev-annotations"
PREDICTION_FORMAT = "bev-predictions"
FORMAT_VERSION = 1
ARRAY_MAGIC = "BEVARRAY"
YOUNG_CLASSES = ("teen", "child", "infant")


@dataclass(eq=False)
class PersonAnnotation:
    keypoints: np.ndarray          # (K, 3): u px, v px, visibility in {0, 1}
    depth_layer: int               # 0 = nearest to the camera
    age_class: str
    gt_depth: Optional[float] = None
    gt_translation: Optional[np.ndarray] = None   # camera-space root (synthetic data)
    gt_params: Optional[BodyParams] = None

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        if self.gt_translation is not None:
            self.gt_translation = np.asarray(self.gt_translation, dtype=np.float64)

    def to_record(self):
        rec = {"keypoints": [[float(u), float(v), int(vis)] for u, v, vis in self.keypoints],
               "depth_layer": int(self.depth_layer), "age_class": self.age_class}
        if self.gt_depth is not None:
            rec["gt_depth"] = float(self.gt_depth)
        if self.gt_translation is not None:
            rec["gt_translation"] = [float(x) for x in self.gt_translation]
        if self.gt_params is not None:
            rec["gt_params"] = self.gt_params.to_dict()
        return rec

    def __eq__(self, other):
        if not isinstance(other, PersonAnnotation):
            return NotImplemented
        return (np.array_equal(self.keypoints, other.keypoints)
                and self.depth_layer == other.depth_layer and self.age_class == other.age_class
                and self.gt_depth == other.gt_depth
                and _opt_array_equal(self.gt_translation, other.gt_translation)
                and self.gt_params == other.gt_params)


@dataclass(eq=True)
class SceneAnnotation:
    image_id: str
    width: int
    height: int
    people: List[PersonAnnotation] = field(default_factory=list)

    def to_record(self):
        return {"image_id": self.image_id, "width": int(self.width), "height": int(self.height),
                "people": [p.to_record() for p in self.people]}


@dataclass(eq=False)
class PersonPrediction:
    translation: np.ndarray        # (x, y, d) metres
    confidence: float = 1.0
    joints: Optional[np.ndarray] = None      # (K, 3) root-relative metres
    keypoints: Optional[np.ndarray] = None   # (K, 2) pixels
    params: Optional[BodyParams] = None

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.joints is not None:
            self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.keypoints is not None:
            self.keypoints = np.asarray(self.keypoints, dtype=np.float64)

    def to_record(self):
        rec = {"translation": [float(x) for x in self.translation], "confidence": float(self.confidence)}
        if self.joints is not None:
            rec["joints"] = self.joints.tolist()
        if self.keypoints is not None:
            rec["keypoints"] = self.keypoints.tolist()
        if self.params is not None:
            rec["params"] = self.params.to_dict()
        return rec

    def __eq__(self, other):
        if not isinstance(other, PersonPrediction):
            return NotImplemented
        return (np.array_equal(self.translation, other.translation)
                and self.confidence == other.confidence
                and _opt_array_equal(self.joints, other.joints)
                and _opt_array_equal(self.keypoints, other.keypoints)
                and self.params == other.params)


@dataclass(eq=True)
class PredictionScene:
    image_id: str
    people: List[PersonPrediction] = field(default_factory=list)

    def to_record(self):
        return {"image_id": self.image_id, "people": [p.to_record() for p in self.people]}


def _opt_array_equal(a, b):
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


# ---------------------------------------------------------------------------
# depth layers, validation, statistics

def derive_depth_layers(depths, gamma=DEFAULT_GAMMA):
    """Greedy depth-layer assignment anchored at each layer's nearest member.

    People are visited nearest first; a person joins the current layer when
    closer than ``gamma`` to that layer's first member, otherwise opens the next.
    Ties in depth keep input order. Output follows input order.
    """
    d = np.asarray(depths, dtype=np.float64)
    if d.size and not np.all(np.isfinite(d) & (d > 0)):
        raise ValueError("depths must be finite and positive")
    order = np.argsort(d, kind="stable")
    layers = np.zeros(d.size, dtype=np.int64)
    layer, anchor = -1, None
    for i in order:
        if anchor is None or not (d[i] - anchor < gamma):
            layer += 1
            anchor = d[i]
        layers[i] = layer
    return layers.tolist()


def _is_int(x):
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def _num(x):
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)


def person_violations(p, where=""):
    out = []
    kp = np.asarray(p.keypoints)
    if kp.ndim != 2 or kp.shape[1] != 3:
        out.append(f"{where}keypoints must be K x 3, got shape {kp.shape}")
    else:
        if not np.all(np.isfinite(kp[:, :2])):
            out.append(f"{where}keypoint coordinates must be finite")
        if not np.all(np.isin(kp[:, 2], (0, 1))):
            out.append(f"{where}keypoint visibility must be 0 or 1")
    if not _is_int(p.depth_layer):
        out.append(f"{where}depth_layer must be an integer")
    elif p.depth_layer < 0:
        out.append(f"{where}depth_layer must be >= 0, got {p.depth_layer}")
    if p.age_class not in AGE_CLASSES:
        out.append(f"{where}age_class {p.age_class!r} not in {list(AGE_CLASSES)}")
    if p.gt_depth is not None and not (_num(p.gt_depth) and math.isfinite(p.gt_depth) and p.gt_depth > 0):
        out.append(f"{where}gt_depth must be a positive finite number")
    if p.gt_translation is not None:
        t = np.asarray(p.gt_translation)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            out.append(f"{where}gt_translation must be 3 finite numbers")
    if p.gt_params is not None and not isinstance(p.gt_params, BodyParams):
        out.append(f"{where}gt_params must be BodyParams")
    return out


def validate(scenes):
    """Every invariant violation in a list of scenes (empty list when clean)."""
    out = []
    for s_idx, s in enumerate(scenes):
        where = f"scene {s_idx} ({s.image_id!r}): "
        if not isinstance(s.image_id, str) or not s.image_id:
            out.append(where + "image_id must be a non-empty string")
        if not (_is_int(s.width) and s.width > 0 and _is_int(s.height) and s.height > 0):
            out.append(where + "image dimensions must be positive integers")
        if not s.people:
            out.append(where + "scene must contain at least one person")
        for p_idx, p in enumerate(s.people):
            out.extend(person_violations(p, f"{where}person {p_idx}: "))
    return out


def stats(scenes):
    """Exact counts per age class and depth layer."""
    ages = Counter()
    layers = Counter()
    n_people = 0
    for s in scenes:
        for p in s.people:
            ages[p.age_class] += 1
            layers[int(p.depth_layer)] += 1
            n_people += 1
    young = sum(ages[k] for k in YOUNG_CLASSES)
    return {
        "scenes": len(scenes),
        "people": n_people,
        "age_classes": {k: ages[k] for k in AGE_CLASSES},
        "young": young,
        "young_fraction": young / n_people if n_people else 0.0,
        "layer_histogram": {str(k): layers[k] for k in sorted(layers)},
    }


# ---------------------------------------------------------------------------
# JSON lines

def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _open_text(path, mode):
    if path in ("-", None):
        return None
    return open(path, mode, encoding="utf-8", newline="\n")


def _write_lines(path, header, records):
    text = "".join(_dumps(r) + "\n" for r in [header] + records)
    fh = _open_text(path, "w")
    if fh is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    with fh:
        fh.write(text)


def _read_lines(path, fmt):
    fh = _open_text(path, "r")
    text = sys.stdin.read() if fh is None else fh.read()
    if fh is not None:
        fh.close()
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON header ({exc.msg})", line=1) from exc
    if not isinstance(header, dict) or header.get("format") != fmt:
        raise ParseError(f"expected header with format {fmt!r}", line=1, field="format")
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported version {header.get('version')!r}", line=1, field="version")
    records = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg} at column {exc.colno})", line=n) from exc
        if not isinstance(rec, dict):
            raise ParseError("scene record must be an object", line=n)
        records.append((n, rec))
    return records


def _require(rec, key, line, kind=None):
    if key not in rec:
        raise ParseError("missing required field", line=line, field=key)
    val = rec[key]
    if kind is not None and not isinstance(val, kind):
        raise ParseError(f"expected {kind.__name__ if isinstance(kind, type) else kind}", line=line, field=key)
    return val


def _array(val, line, fld, shape=None):
    try:
        arr = np.asarray(val, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"expected numeric array ({exc})", line=line, field=fld) from exc
    if shape is not None and (arr.ndim != len(shape) or any(s is not None and a != s for a, s in zip(arr.shape, shape))):
        raise ParseError(f"expected shape {shape}, got {arr.shape}", line=line, field=fld)
    return arr


def _params(val, line, fld):
    try:
        return BodyParams.from_dict(val)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid body parameters ({exc})", line=line, field=fld) from exc


def save_annotations(scenes, path):
    _write_lines(path, {"format": ANNOTATION_FORMAT, "version": FORMAT_VERSION},
                 [s.to_record() for s in scenes])


def load_annotations(path):
    scenes = []
    for line, rec in _read_lines(path, ANNOTATION_FORMAT):
        people = []
        for i, pr in enumerate(_require(rec, "people", line, list)):
            fld = f"people[{i}]"
            if not isinstance(pr, dict):
                raise ParseError("person record must be an object", line=line, field=fld)
            kp = _array(_require(pr, "keypoints", line), line, fld + ".keypoints", (None, 3))
            people.append(PersonAnnotation(
                keypoints=kp,
                depth_layer=_require(pr, "depth_layer", line),
                age_class=_require(pr, "age_class", line),
                gt_depth=pr.get("gt_depth"),
                gt_translation=(_array(pr["gt_translation"], line, fld + ".gt_translation", (3,))
                                if pr.get("gt_translation") is not None else None),
                gt_params=(_params(pr["gt_params"], line, fld + ".gt_params")
                           if pr.get("gt_params") is not None else None)))
        scenes.append(SceneAnnotation(image_id=_require(rec, "image_id", line),
                                      width=_require(rec, "width", line),
                                      height=_require(rec, "height", line), people=people))
    violations = validate(scenes)
    if violations:
        raise SchemaViolation(violations)
    return scenes


def save_predictions(scenes, path):
    _write_lines(path, {"format": PREDICTION_FORMAT, "version": FORMAT_VERSION},
                 [s.to_record() for s in scenes])


def load_predictions(path):
    out = []
    for line, rec in _read_lines(path, PREDICTION_FORMAT):
        people = []
        for i, pr in enumerate(_require(rec, "people", line, list)):
            fld = f"people[{i}]"
            conf = pr.get("confidence", 1.0)
            if not _num(conf):
                raise ParseError("confidence must be a number", line=line, field=fld + ".confidence")
            people.append(PersonPrediction(
                translation=_array(_require(pr, "translation", line), line, fld + ".translation", (3,)),
                confidence=float(conf),
                joints=_array(pr["joints"], line, fld + ".joints", (None, 3)) if "joints" in pr else None,
                keypoints=(_array(pr["keypoints"], line, fld + ".keypoints", (None, 2))
                           if "keypoints" in pr else None),
                params=_params(pr["params"], line, fld + ".params") if "params" in pr else None))
        image_id = _require(rec, "image_id", line)
        if not isinstance(image_id, str):
            raise ParseError("image_id must be a string", line=line, field="image_id")
        out.append(PredictionScene(image_id=image_id, people=people))
    return out


# ---------------------------------------------------------------------------
# array container

def dumps_arrays(arrays, meta=None):
    names = sorted(arrays)
    payloads, entries, offset = [], [], 0
    for name in names:
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"invalid array name {name!r}")
        arr = np.array(arrays[name], dtype="<f8", order="C")
        data = arr.tobytes(order="C")
        shape = "x".join(str(s) for s in arr.shape) if arr.ndim else "-"
        entries.append(f"array {name} f8 {shape} {offset} {len(data)}")
        payloads.append(data)
        offset += len(data)
    lines = [f"{ARRAY_MAGIC} {FORMAT_VERSION}", f"count {len(names)}"] + entries
    for key in sorted(meta or {}):
        if not key or any(c.isspace() for c in key):
            raise ValueError(f"invalid meta key {key!r}")
        lines.append(f"meta {key} {_dumps(meta[key])}")
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(payloads)


def loads_arrays(blob):
    stream = io.BytesIO(blob)

    def next_line(n):
        raw = stream.readline()
        if not raw.endswith(b"\n"):
            raise ParseError("truncated manifest", line=n)
        try:
            return raw[:-1].decode("ascii")
        except UnicodeDecodeError as exc:
            raise ParseError("manifest must be ASCII", line=n) from exc

    head = next_line(1).split()
    if len(head) != 2 or head[0] != ARRAY_MAGIC:
        raise ParseError(f"not an array container (missing {ARRAY_MAGIC} header)", line=1)
    if head[1] != str(FORMAT_VERSION):
        raise ParseError(f"unsupported container version {head[1]}", line=1, field="version")
    count_line = next_line(2).split()
    if len(count_line) != 2 or count_line[0] != "count" or not count_line[1].isdigit():
        raise ParseError("expected 'count <n>'", line=2, field="count")
    entries, meta = [], {}
    n = 2
    while True:
        n += 1
        parts = next_line(n).split(" ", 2)
        if parts[0] == "end":
            break
        if parts[0] == "meta" and len(parts) == 3:
            try:
                meta[parts[1]] = json.loads(parts[2])
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid meta value ({exc.msg})", line=n, field=parts[1]) from exc
            continue
        fields_ = " ".join(parts).split()
        if fields_[0] != "array" or len(fields_) != 6:
            raise ParseError("expected 'array <name> f8 <shape> <offset> <nbytes>'", line=n)
        _, name, dtype, shape, off, nbytes = fields_
        if dtype != "f8":
            raise ParseError(f"unsupported element type {dtype}", line=n, field=name)
        try:
            dims = () if shape == "-" else tuple(int(s) for s in shape.split("x"))
            off, nbytes = int(off), int(nbytes)
        except ValueError as exc:
            raise ParseError(f"bad shape/offset ({exc})", line=n, field=name) from exc
        if int(np.prod(dims, dtype=np.int64)) * 8 != nbytes:
            raise ParseError(f"byte count {nbytes} does not match shape {dims}", line=n, field=name)
        entries.append((name, dims, off, nbytes, n))
    if len(entries) != int(count_line[1]):
        raise ParseError(f"count says {count_line[1]} arrays, manifest lists {len(entries)}", line=2)
    payload = stream.read()
    arrays = {}
    for name, dims, off, nbytes, line in entries:
        if off < 0 or off + nbytes > len(payload):
            raise ParseError("payload truncated", line=line, field=name)
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=off).reshape(dims).copy()
    return arrays, meta


def save_arrays(path, arrays, meta=None):
    blob = dumps_arrays(arrays, meta)
    if path in ("-", None):
        sys.stdout.buffer.write(blob)
        sys.stdout.buffer.flush()
        return
    with open(path, "wb") as fh:
        fh.write(blob)


def load_arrays(path):
    if path in ("-", None):
        return loads_arrays(sys.stdin.buffer.read())
    with open(path, "rb") as fh:
        return loads_arrays(fh.read())


# ---------------------------------------------------------------------------
# assets and priors

_ASSET_FIELDS = ("template_adult", "template_infant", "shape_dirs", "pose_dirs", "skin_weights",
                 "joint_regressor_skel", "joint_regressor_eval", "kinematic_parents")


def assets_to_arrays(assets, prefix=""):
    out = {prefix + k: getattr(assets, k) for k in _ASSET_FIELDS}
    if assets.faces is not None:
        out[prefix + "faces"] = assets.faces
    if assets.infant_assets is not None:
        out.update(assets_to_arrays(assets.infant_assets, prefix + "infant/"))
    return out


def assets_from_arrays(arrays, prefix=""):
    missing = [k for k in _ASSET_FIELDS if prefix + k not in arrays]
    if missing:
        raise ParseError(f"asset container lacks arrays {missing}")
    kw = {k: arrays[prefix + k] for k in _ASSET_FIELDS}
    kw["kinematic_parents"] = np.rint(kw["kinematic_parents"]).astype(np.int64)
    if prefix + "faces" in arrays:
        kw["faces"] = np.rint(arrays[prefix + "faces"]).astype(np.int64)
    if any(k.startswith(prefix + "infant/") for k in arrays):
        kw["infant_assets"] = assets_from_arrays(arrays, prefix + "infant/")
    return BodyModelAssets(**kw)


def save_assets(path, assets):
    save_arrays(path, assets_to_arrays(assets), {"kind": "body-model-assets"})


def load_assets(path):
    arrays, _ = load_arrays(path)
    return assets_from_arrays(arrays)


def save_prior(path, prior):
    save_arrays(path, {"weights": prior.weights, "means": prior.means,
                       "precisions": prior.precisions, "constants": prior.constants},
                {"kind": "pose-mixture-prior"})


def load_prior(path):
    try:
        arrays, _ = load_arrays(path)
    except (ParseError, OSError) as exc:
        raise PriorFileCorrupt(f"cannot read prior file {path}: {exc}") from exc
    missing = [k for k in ("weights", "means", "precisions", "constants") if k not in arrays]
    if missing:
        raise PriorFileCorrupt(f"prior file lacks arrays {missing}")
    return PoseMixturePrior(arrays["weights"], arrays["means"], arrays["precisions"], arrays["constants"])


def write_obj(path, vertices, faces=None):
    """Wavefront OBJ text (1-based face indices)."""
    lines = ["# bev mesh export"]
    lines += [f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in np.asarray(vertices)]
    if faces is not None:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces, dtype=np.int64)]
    text = "\n".join(lines) + "\n"
    if path in ("-", None):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
