"""Learned stroke disturbers: extrinsic, intrinsic, and point noise.

Each disturber is a small MLP conditioned on a stroke's 12 normalized
control coordinates plus a noise level n.  The extrinsic model predicts a
similarity transform about the stroke centroid, the intrinsic model
predicts control-point offsets in the stroke-local frame, and the point
model predicts (mu, sigma) of correlated normal jitter applied along the
polyline normals.  Targets are trained in reference-normalized units so a
single learning rate works across styles; the references ship with the
model.  A distribution-backed fallback covers the no-dataset case.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .bezier import BezierStroke, fit_bezier
from .core import Stroke
from .errors import ConvergenceError, FormatError, ValidationError
from .simfit import MultiLevelRegistration, SimilarityTransform, relative_transform
from .sketch_io import write_text_atomic

KINDS = ("extrinsic", "intrinsic", "point")
STYLES = ("novice", "professional")
OUT_DIMS = {"extrinsic": 4, "intrinsic": 12, "point": 2}
N_INPUTS = 13
HIDDEN = (64, 64)

# Zero-mean stochastic spread added to MLP predictions, as a fraction of
# the reference magnitude per unit noise level.
JITTER_SCALE = 0.5
SMOOTH_SIGMA = 2.0
MIN_PAIRS = 100

# Desk-scale reference magnitudes for models built without data.
# Translation/offset/point values are in stroke-local units.
DEFAULT_REFS = {
    "extrinsic": {"theta": 10.0, "translation": 0.1, "scale_dev": 0.1, "log_scale": 0.1},
    "intrinsic": {"offset": 0.05},
    "point": {"point": 0.02},
}

MODEL_FORMAT_VERSION = 1


def _check_kind(model, kind: str) -> None:
    if model.kind != kind:
        raise ValidationError(f"model kind is {model.kind!r}, expected {kind!r}")


class Mlp:
    """Fully connected tanh network trained with momentum SGD on MSE."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        self.sizes = list(sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes, self.sizes[1:]):
            if rng is None:
                w = np.zeros((fan_out, fan_in))
            else:
                w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_out, fan_in))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    def _forward(self, x: np.ndarray) -> list[np.ndarray]:
        acts = [x]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w.T + b
            acts.append(z if i == len(self.weights) - 1 else np.tanh(z))
        return acts

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self._forward(np.atleast_2d(np.asarray(x, dtype=np.float64)))[-1]

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            return float(np.mean((self.predict(x) - y) ** 2))

    def _gradients(self, x, y):
        acts = self._forward(x)
        delta = 2.0 * (acts[-1] - y) / y.size
        grads_w, grads_b = [], []
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w.append(delta.T @ acts[i])
            grads_b.append(delta.sum(axis=0))
            if i > 0:
                delta = (delta @ self.weights[i]) * (1.0 - acts[i] ** 2)
        return grads_w[::-1], grads_b[::-1]

    def snapshot(self):
        return [w.copy() for w in self.weights], [b.copy() for b in self.biases]

    def restore(self, snap) -> None:
        self.weights = [w.copy() for w in snap[0]]
        self.biases = [b.copy() for b in snap[1]]


@dataclass
class TrainingPair:
    """One stroke's (input curve, target) sample for a disturber kind.

    Targets are physical: extrinsic (theta_deg, tau_x, tau_y, s) with the
    translation about the stroke centroid in canvas px; intrinsic 12
    control offsets in canvas px; point (mu, sigma) in stroke-local units.
    """

    kind: str
    curve: BezierStroke
    target: np.ndarray
    m: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"unknown disturber kind {self.kind!r}")
        self.target = np.asarray(self.target, dtype=np.float64).ravel()
        if self.m < 0:
            raise ValidationError("change magnitude m must be >= 0")


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 0.01
    batch: int = 32
    seed: int = 0
    momentum: float = 0.9


@dataclass
class DisturberModel:
    """MLP disturber with its normalization references and training metadata."""

    kind: str
    style: str
    mlp: Mlp
    refs: dict[str, float]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def zero(cls, kind: str, style: str = "novice") -> "DisturberModel":
        """All-zero network: identity response at every noise level."""
        if kind not in KINDS:
            raise ValidationError(f"unknown disturber kind {kind!r}")
        mlp = Mlp([N_INPUTS, *HIDDEN, OUT_DIMS[kind]])
        return cls(kind, style, mlp, dict(DEFAULT_REFS[kind]), {"trained": False})

    def sample_params(self, features: np.ndarray, n: float, rng: np.random.Generator) -> np.ndarray:
        """Normalized output for one stroke, with n-scaled jitter.

        The point disturber is already stochastic downstream, so only the
        extrinsic/intrinsic kinds receive jitter.
        """
        z = self.predict(features)
        if self.kind != "point":
            z = z + n * JITTER_SCALE * rng.standard_normal(z.shape)
        return z

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64).ravel()
        if features.shape != (N_INPUTS,):
            raise ValidationError(f"expected {N_INPUTS} features, got {features.shape}")
        return self.mlp.predict(features)[0]

    def to_json_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "mode": "mlp",
            "kind": self.kind,
            "style": self.style,
            "sizes": self.mlp.sizes,
            "weights": [w.ravel().tolist() for w in self.mlp.weights],
            "biases": [b.tolist() for b in self.mlp.biases],
            "refs": {k: float(v) for k, v in sorted(self.refs.items())},
            "metadata": self.metadata,
        }


@dataclass
class StatisticalDisturber:
    """Distribution-backed fallback used when no training data exists.

    Normalized outputs are drawn as n * (mu + sigma * g); the scale channel
    is exponentiated downstream, so its draws are log-normal as shipped.
    """

    kind: str
    style: str
    mu: np.ndarray
    sigma: np.ndarray
    refs: dict[str, float]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        d = OUT_DIMS.get(self.kind)
        if d is None:
            raise ValidationError(f"unknown disturber kind {self.kind!r}")
        self.mu = np.asarray(self.mu, dtype=np.float64).ravel()
        self.sigma = np.asarray(self.sigma, dtype=np.float64).ravel()
        if self.mu.shape != (d,) or self.sigma.shape != (d,):
            raise ValidationError(f"{self.kind} parameters must have length {d}")
        if np.any(self.sigma < 0):
            raise ValidationError("sigma parameters must be >= 0")

    @classmethod
    def default(cls, kind: str, style: str = "novice") -> "StatisticalDisturber":
        d = OUT_DIMS[kind]
        return cls(kind, style, np.zeros(d), np.ones(d), dict(DEFAULT_REFS[kind]))

    def sample_params(self, features: np.ndarray, n: float, rng: np.random.Generator) -> np.ndarray:
        return n * (self.mu + self.sigma * rng.standard_normal(self.mu.shape))

    def to_json_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "mode": "statistical",
            "kind": self.kind,
            "style": self.style,
            "params": {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()},
            "refs": {k: float(v) for k, v in sorted(self.refs.items())},
            "metadata": self.metadata,
        }


Disturber = DisturberModel | StatisticalDisturber


def save_disturber(model: Disturber, path: str | Path) -> None:
    write_text_atomic(Path(path), json.dumps(model.to_json_dict(), indent=2, sort_keys=True) + "\n")


def load_disturber(path: str | Path) -> Disturber:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from None
    mode = raw.get("mode")
    try:
        if mode == "mlp":
            mlp = Mlp(raw["sizes"])
            mlp.weights = [
                np.asarray(flat, dtype=np.float64).reshape(w.shape)
                for flat, w in zip(raw["weights"], mlp.weights)
            ]
            mlp.biases = [np.asarray(b, dtype=np.float64) for b in raw["biases"]]
            return DisturberModel(raw["kind"], raw["style"], mlp, dict(raw["refs"]), raw.get("metadata", {}))
        if mode == "statistical":
            return StatisticalDisturber(
                raw["kind"], raw["style"], raw["params"]["mu"], raw["params"]["sigma"],
                dict(raw["refs"]), raw.get("metadata", {}),
            )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed disturber model ({e})") from None
    raise FormatError(f"{path}: unknown model mode {mode!r}")


@dataclass
class DisturberSet:
    """The three models of one style, as loaded from a models directory."""

    style: str
    extrinsic: Disturber
    intrinsic: Disturber
    point: Disturber

    def __post_init__(self) -> None:
        for kind in KINDS:
            model = getattr(self, kind)
            if model.kind != kind:
                raise ValidationError(f"{kind} slot holds a {model.kind!r} model")
            if model.style != self.style:
                raise ValidationError(
                    f"{kind} model trained for style {model.style!r}, expected {self.style!r}"
                )

    @classmethod
    def zero(cls, style: str = "novice") -> "DisturberSet":
        return cls(style, *(DisturberModel.zero(k, style) for k in KINDS))


def model_filename(kind: str, style: str) -> str:
    return f"{kind}_{style}.json"


def save_disturber_set(models: DisturberSet, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind in KINDS:
        p = out_dir / model_filename(kind, models.style)
        save_disturber(getattr(models, kind), p)
        paths.append(p)
    return paths


def load_disturber_set(models_dir: str | Path, style: str) -> DisturberSet:
    models_dir = Path(models_dir)
    loaded = {}
    for kind in KINDS:
        p = models_dir / model_filename(kind, style)
        if not p.exists():
            raise ValidationError(f"missing disturber model file: {p}")
        loaded[kind] = load_disturber(p)
    return DisturberSet(style, loaded["extrinsic"], loaded["intrinsic"], loaded["point"])


# ---------------------------------------------------------------------------
# Training-pair extraction


def _signed_normal_deviations(points: np.ndarray, curve: BezierStroke) -> np.ndarray:
    """Signed distance from each point to the curve along its local normal."""
    from .bezier import evaluate

    dense_u = np.linspace(0.0, 1.0, 512)
    dense = evaluate(curve.control, dense_u)
    tangents = np.gradient(dense, axis=0)
    norms = np.hypot(tangents[:, 0], tangents[:, 1])
    norms[norms == 0] = 1.0
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1) / norms[:, None]
    d2 = (points[:, None, 0] - dense[None, :, 0]) ** 2 + (points[:, None, 1] - dense[None, :, 1]) ** 2
    nearest = d2.argmin(axis=1)
    return np.einsum("ij,ij->i", points - dense[nearest], normals[nearest])


def _extrinsic_target(curve_in: BezierStroke, rel: SimilarityTransform) -> np.ndarray:
    """Re-anchor the relative transform's translation at the stroke centroid."""
    c = np.array(curve_in.frame.centroid)
    tau = rel.apply(c[None, :])[0] - c
    return np.array([rel.theta_deg, tau[0], tau[1], rel.scale])


def build_training_pairs(
    dataset: Sequence[MultiLevelRegistration],
    style: str,
    *,
    stroke_filter: Sequence[Sequence[bool]] | None = None,
) -> dict[str, list[TrainingPair]]:
    """Extract one (extrinsic, intrinsic, point) pair per usable stroke.

    ``stroke_filter`` optionally masks strokes per drawing (e.g. the 50%
    overlap validity rule computed against the tracing, which is not part
    of a MultiLevelRegistration).  Change magnitudes m are normalized by
    the dataset's 90th percentiles in a second pass.
    """
    if style not in STYLES:
        raise ValidationError(f"unknown style {style!r}")
    items = [m for m in dataset if m.original.group == style]
    if not items:
        raise ValidationError(f"dataset holds no drawings of style {style!r}")
    if stroke_filter is not None and len(stroke_filter) != len(items):
        raise ValidationError("stroke_filter must align with the style-filtered dataset")

    pairs: dict[str, list[TrainingPair]] = {k: [] for k in KINDS}
    ext_mags: list[np.ndarray] = []
    for item_idx, item in enumerate(items):
        # stroke_transforms covers every stroke; pairs use content strokes only
        content_idx = [i for i, s in enumerate(item.original.strokes) if s.kind == "content"]
        mask = stroke_filter[item_idx] if stroke_filter is not None else [True] * len(content_idx)
        if len(mask) != len(content_idx):
            raise ValidationError("stroke_filter row does not match content stroke count")
        for k, keep in zip(content_idx, mask):
            if not keep:
                continue
            sk_stroke = item.sketch_level.strokes[k]
            px_stroke = item.pixel_level.strokes[k]
            st_stroke = item.stroke_level.strokes[k]

            curve_sk = fit_bezier(sk_stroke)
            rel = relative_transform(item.sketch_transform, item.stroke_transforms[k])
            target_ext = _extrinsic_target(curve_sk, rel)
            pairs["extrinsic"].append(TrainingPair("extrinsic", curve_sk, target_ext))
            ext_mags.append(
                np.array([
                    abs(rel.theta_deg),
                    float(np.hypot(target_ext[1], target_ext[2])) / curve_sk.frame.scale,
                    abs(rel.scale - 1.0),
                ])
            )

            curve_px = fit_bezier(px_stroke)
            curve_st = fit_bezier(st_stroke)
            offsets = (curve_st.control - curve_px.control).ravel()
            m_int = float(np.mean(np.hypot(*(curve_st.control - curve_px.control).T))) / curve_px.frame.scale
            pairs["intrinsic"].append(TrainingPair("intrinsic", curve_px, offsets, m_int))

            dev = _signed_normal_deviations(sk_stroke.xy, curve_sk) / curve_sk.frame.scale
            target_pt = np.array([float(np.mean(dev)), float(np.std(dev))])
            m_pt = float(np.sqrt(np.mean(dev**2)))
            pairs["point"].append(TrainingPair("point", curve_sk, target_pt, m_pt))

    if ext_mags:
        mags = np.array(ext_mags)
        refs = [_percentile_ref(mags[:, j]) for j in range(3)]
        for pair, mag in zip(pairs["extrinsic"], mags):
            pair.m = float(np.mean(mag / refs))
    return pairs


def _percentile_ref(values: np.ndarray) -> float:
    """90th percentile with fallbacks so normalization never divides by 0."""
    ref = float(np.percentile(values, 90))
    if ref > 0:
        return ref
    peak = float(np.max(values, initial=0.0))
    return peak if peak > 0 else 1.0


# ---------------------------------------------------------------------------
# Training


def _encode_targets(pairs: Sequence[TrainingPair], kind: str) -> tuple[np.ndarray, np.ndarray, dict[str, float]]:
    x = np.array([np.concatenate([p.curve.local_controls(), [p.m]]) for p in pairs])
    targets = np.array([p.target for p in pairs])
    if kind == "extrinsic":
        tau_local = targets[:, 1:3] / np.array([[p.curve.frame.scale] for p in pairs])
        log_s = np.log(targets[:, 3])
        refs = {
            "theta": _percentile_ref(np.abs(targets[:, 0])),
            "translation": _percentile_ref(np.hypot(tau_local[:, 0], tau_local[:, 1])),
            "scale_dev": _percentile_ref(np.abs(targets[:, 3] - 1.0)),
            "log_scale": _percentile_ref(np.abs(log_s)),
        }
        y = np.column_stack([
            targets[:, 0] / refs["theta"],
            tau_local / refs["translation"],
            log_s / refs["log_scale"],
        ])
    elif kind == "intrinsic":
        local = targets / np.array([[p.curve.frame.scale] for p in pairs])
        refs = {"offset": _percentile_ref(np.abs(local).ravel())}
        y = local / refs["offset"]
    else:
        refs = {"point": _percentile_ref(np.abs(targets).ravel())}
        y = targets / refs["point"]
    return x, y, refs


def train_disturber(
    pairs: Sequence[TrainingPair],
    kind: str,
    config: TrainConfig | None = None,
    style: str = "novice",
    hidden: Sequence[int] | None = None,
) -> DisturberModel:
    """Fit one disturber MLP; keeps the best epoch's weights."""
    config = config or TrainConfig()
    if kind not in KINDS:
        raise ValidationError(f"unknown disturber kind {kind!r}")
    if not pairs:
        raise ValidationError("cannot train on an empty pair set")
    if any(p.kind != kind for p in pairs):
        raise ValidationError(f"all pairs must have kind {kind!r}")
    if len(pairs) < MIN_PAIRS:
        warnings.warn(f"only {len(pairs)} {kind} pairs; expect a weak model", stacklevel=2)

    layers = HIDDEN if hidden is None else tuple(int(h) for h in hidden)
    x, y, refs = _encode_targets(pairs, kind)
    rng = np.random.default_rng(config.seed)
    mlp = Mlp([N_INPUTS, *layers, OUT_DIMS[kind]], rng)
    velocity = ([np.zeros_like(w) for w in mlp.weights], [np.zeros_like(b) for b in mlp.biases])

    initial_loss = mlp.loss(x, y)
    best_loss, best_snap, best_epoch = initial_loss, mlp.snapshot(), 0
    n = len(x)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch):
            idx = order[start : start + config.batch]
            gw, gb = mlp._gradients(x[idx], y[idx])
            for i in range(len(mlp.weights)):
                velocity[0][i] = config.momentum * velocity[0][i] - config.lr * gw[i]
                velocity[1][i] = config.momentum * velocity[1][i] - config.lr * gb[i]
                mlp.weights[i] += velocity[0][i]
                mlp.biases[i] += velocity[1][i]
        loss = mlp.loss(x, y)
        if not np.isfinite(loss):
            raise ConvergenceError(f"training diverged at epoch {epoch}")
        if loss < best_loss:
            best_loss, best_snap, best_epoch = loss, mlp.snapshot(), epoch

    mlp.restore(best_snap)
    meta = {
        "trained": True,
        "pairs": len(pairs),
        "hidden": list(layers),
        "epochs": config.epochs,
        "best_epoch": best_epoch,
        "initial_loss": initial_loss,
        "final_loss": best_loss,
        "seed": config.seed,
    }
    return DisturberModel(kind, style, mlp, refs, meta)


# ---------------------------------------------------------------------------
# Disturbing


def _features(curve: BezierStroke, n: float) -> np.ndarray:
    return np.concatenate([curve.local_controls(), [n]])


def _check_noise(n: float, name: str) -> None:
    if not 0.0 <= n <= 1.0:
        raise ValidationError(f"{name} must be in [0, 1], got {n}")


def disturb_extrinsic(
    b: BezierStroke, n1: float, model: Disturber, rng: np.random.Generator
) -> tuple[SimilarityTransform, BezierStroke]:
    """Similarity-transform the whole stroke about its centroid."""
    _check_kind(model, "extrinsic")
    _check_noise(n1, "n1")
    z = model.sample_params(_features(b, n1), n1, rng)
    theta = z[0] * model.refs["theta"]
    tau = z[1:3] * model.refs["translation"] * b.frame.scale
    s = float(np.exp(z[3] * model.refs["log_scale"]))
    c = np.array(b.frame.centroid)
    rot = SimilarityTransform(theta, s, 0.0, 0.0)
    t = c + tau - rot.apply(c[None, :])[0]
    transform = SimilarityTransform(theta, s, t[0], t[1])
    return transform, b.with_control(transform.apply(b.control))


def disturb_intrinsic(
    b: BezierStroke, n2: float, model: Disturber, rng: np.random.Generator
) -> BezierStroke:
    """Shift control points in the stroke-local frame (shape change)."""
    _check_kind(model, "intrinsic")
    _check_noise(n2, "n2")
    z = model.sample_params(_features(b, n2), n2, rng)
    offsets = z.reshape(6, 2) * model.refs["offset"] * b.frame.scale
    return b.with_control(b.control + offsets)


def disturb_points(
    polyline: Stroke,
    model: Disturber,
    rng: np.random.Generator,
    *,
    curve: BezierStroke | None = None,
    n: float = 0.0,
) -> Stroke:
    """Add correlated normal jitter along the polyline's local normals.

    Displacements are drawn per point from the model's N(mu, sigma^2),
    Gaussian-smoothed along the stroke so the result reads as a wobbly
    line rather than shot noise, and pinned to zero at both endpoints.
    """
    _check_kind(model, "point")
    _check_noise(n, "n")
    if curve is None:
        curve = fit_bezier(polyline)
    z = model.sample_params(_features(curve, n), n, rng)
    mu = z[0] * model.refs["point"] * curve.frame.scale
    sigma = abs(z[1]) * model.refs["point"] * curve.frame.scale

    xy = polyline.xy
    d = rng.normal(mu, sigma, size=len(xy))
    d = gaussian_filter1d(d, SMOOTH_SIGMA, mode="nearest")
    d[0] = d[-1] = 0.0
    tangents = np.gradient(xy, axis=0)
    norms = np.hypot(tangents[:, 0], tangents[:, 1])
    norms[norms == 0] = 1.0
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1) / norms[:, None]
    return polyline.with_xy(xy + d[:, None] * normals)
