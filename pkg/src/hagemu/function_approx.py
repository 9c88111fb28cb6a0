"""Tile-coded linear value functions and softmax policies.

A state is featurized as ``num_tilings`` active tiles over its continuous
coordinates (time first, then whatever the scenario exposes).  The security
bit mask selects a disjoint block of tiles, so different compromise levels
never share weights.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class DivergedWeights(FloatingPointError):
    pass


class IncompatibleWeights(ValueError):
    pass


@dataclass(frozen=True)
class TileCoderSpec:
    num_tilings: int = 8
    tiles_per_dim: tuple[int, ...] = (8,)
    state_bounds: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    num_contexts: int = 1
    include_time: bool = True
    hash_size: int | None = None

    def __post_init__(self):
        if self.num_tilings < 1:
            raise ValueError("num_tilings must be positive")
        if len(self.tiles_per_dim) != len(self.state_bounds):
            raise ValueError("tiles_per_dim and state_bounds disagree in length")
        for lo, hi in self.state_bounds:
            if not hi > lo:
                raise ValueError(f"empty bound [{lo}, {hi}]")

    @property
    def dims(self) -> int:
        return len(self.state_bounds)

    @property
    def tiles_per_tiling(self) -> int:
        return int(np.prod([n + 1 for n in self.tiles_per_dim]))

    @property
    def exact_size(self) -> int:
        return self.num_contexts * self.num_tilings * self.tiles_per_tiling

    @property
    def size(self) -> int:
        return self.hash_size if self.hash_size else self.exact_size

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "TileCoderSpec":
        return cls(
            num_tilings=int(doc["num_tilings"]),
            tiles_per_dim=tuple(int(v) for v in doc["tiles_per_dim"]),
            state_bounds=tuple((float(lo), float(hi)) for lo, hi in doc["state_bounds"]),
            num_contexts=int(doc["num_contexts"]),
            include_time=bool(doc["include_time"]),
            hash_size=doc.get("hash_size"),
        )


class TileCoder:
    """Grid tilings with asymmetric offsets (tiling ``i`` shifted by ``i*(2j+1)/n`` tiles in dim ``j``).

    Each tiling has ``tiles_per_dim + 1`` cells per dimension so every shifted
    grid covers the whole box.  Points outside the box are clamped.
    """

    def __init__(self, spec: TileCoderSpec):
        self.spec = spec
        lo = np.array([b[0] for b in spec.state_bounds], dtype=float)
        hi = np.array([b[1] for b in spec.state_bounds], dtype=float)
        self.lo, self.hi = lo, hi
        tiles = np.array(spec.tiles_per_dim, dtype=float)
        self.scale = tiles / (hi - lo)
        n = spec.num_tilings
        odd = 2 * np.arange(spec.dims) + 1
        self.offsets = (np.arange(n)[:, None] * odd[None, :] / n) % 1.0  # (n, D), in tile units
        radix = np.array([t + 1 for t in spec.tiles_per_dim], dtype=np.int64)
        self.strides = np.concatenate([np.cumprod(radix[::-1])[::-1][1:], [1]]).astype(np.int64)
        self.tiling_base = np.arange(n, dtype=np.int64) * spec.tiles_per_tiling
        self.context_stride = n * spec.tiles_per_tiling

    @property
    def size(self) -> int:
        return self.spec.size

    def indices(self, points, contexts=0) -> np.ndarray:
        """Active tile indices, shape ``(B, num_tilings)`` for ``points`` of shape ``(B, D)``."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.shape[1] != self.spec.dims:
            raise ValueError(f"expected {self.spec.dims} coordinates, got {pts.shape[1]}")
        scaled = np.minimum(np.maximum(pts, self.lo), self.hi)
        scaled -= self.lo
        scaled *= self.scale  # (B, D), non-negative so truncation equals floor
        cells = (scaled[:, None, :] + self.offsets[None, :, :]).astype(np.int64)
        flat = cells @ self.strides
        flat += self.tiling_base
        ctx = np.asarray(contexts, dtype=np.int64)
        if ctx.size and (ctx.max() >= self.spec.num_contexts or ctx.min() < 0):
            raise ValueError("context out of range")
        flat += ctx.reshape(-1, 1) * self.context_stride
        if self.spec.hash_size:
            flat = (flat * 2654435761) % self.spec.hash_size
        return flat


class StateFeaturizer:
    """Maps system states (or batches of their coordinates) to tile indices."""

    def __init__(self, coder: TileCoder, scenario, horizon: int):
        self.coder = coder
        self.scenario = scenario
        self.horizon = horizon

    @classmethod
    def build(cls, hag, scenario, horizon: int, num_tilings: int = 8, tiles_per_dim: int = 8,
              time_tiles: int | None = None, phys_tiles: int | None = None,
              hash_size: int | None = None) -> "StateFeaturizer":
        bounds = [(0.0, float(horizon))]
        tiles = [time_tiles or tiles_per_dim]
        for b in scenario.feature_bounds():
            bounds.append(tuple(map(float, b)))
            tiles.append(phys_tiles or tiles_per_dim)
        spec = TileCoderSpec(num_tilings=num_tilings, tiles_per_dim=tuple(tiles),
                             state_bounds=tuple(bounds), num_contexts=2 ** hag.n,
                             include_time=True, hash_size=hash_size)
        return cls(TileCoder(spec), scenario, horizon)

    @property
    def size(self) -> int:
        return self.coder.size

    @property
    def num_tilings(self) -> int:
        return self.coder.spec.num_tilings

    def batch(self, t, masks, physical, outside) -> np.ndarray:
        """Indices for a batch: ``t`` and ``masks`` shape (B,), ``physical`` (B, P), ``outside`` (B,) or scalar."""
        masks = np.asarray(masks, dtype=np.int64).reshape(-1)
        b = masks.shape[0]
        pts = np.empty((b, self.coder.spec.dims))
        pts[:, 0] = t
        if pts.shape[1] > 1:
            self.scenario.fill_features(pts[:, 1:], np.asarray(physical, dtype=float).reshape(b, -1), outside)
        return self.coder.indices(pts, masks)

    def __call__(self, state) -> np.ndarray:
        return self.batch(state.t, [state.mask], [state.physical], state.outside)[0]


def features(featurizer: StateFeaturizer, state) -> np.ndarray:
    return featurizer(state)


# ---------------------------------------------------------------------------
# linear value function
# ---------------------------------------------------------------------------


@dataclass
class ValueWeights:
    theta: np.ndarray

    @classmethod
    def zeros(cls, d: int) -> "ValueWeights":
        return cls(np.zeros(d))

    def check_finite(self):
        if not np.all(np.isfinite(self.theta)):
            raise DivergedWeights("value weights are no longer finite")


def value(weights: ValueWeights, idx) -> np.ndarray | float:
    """Sum of weights at the active tiles; batched over leading axes of ``idx``."""
    idx = np.asarray(idx)
    if idx.size and (idx.max() >= weights.theta.shape[0] or idx.min() < 0):
        raise IndexError("feature index out of range")
    out = weights.theta[idx].sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def value_gradient(weights: ValueWeights, idx) -> np.ndarray:
    """Dense gradient of the linear value: tile counts at the active indices."""
    grad = np.zeros_like(weights.theta)
    np.add.at(grad, np.asarray(idx), 1.0)
    return grad


def _distinct(idx: np.ndarray) -> bool:
    # tilings occupy disjoint index ranges unless hashing folds them together
    return idx.size < 2 or np.unique(idx).size == idx.size


def sgd_step(weights: ValueWeights, idx, error: float, step: float) -> None:
    """``theta += step * error * grad J`` in place, touching only the active tiles."""
    idx = np.asarray(idx)
    if weights.theta.shape[0] > idx.max(initial=-1) and _distinct(idx):
        weights.theta[idx] += step * error
    else:
        np.add.at(weights.theta, idx, step * error)
    if not np.all(np.isfinite(weights.theta[idx])):
        raise DivergedWeights("non-finite value weight after update")


# ---------------------------------------------------------------------------
# softmax policy with per-action preference blocks
# ---------------------------------------------------------------------------


@dataclass
class PreferenceWeights:
    """``psi[a]`` is the weight block for global action index ``a``."""

    psi: np.ndarray

    @classmethod
    def zeros(cls, n_actions: int, d: int) -> "PreferenceWeights":
        return cls(np.zeros((n_actions, d)))


def preferences(prefs: PreferenceWeights, idx, action_ids) -> np.ndarray:
    ids = np.asarray(action_ids, dtype=np.int64)
    return prefs.psi[ids[:, None], np.asarray(idx)[None, :]].sum(axis=1)


def softmax(h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    z = np.exp(h - h.max())
    return z / z.sum()


def softmax_policy(prefs: PreferenceWeights, idx, action_ids) -> np.ndarray:
    """Action probabilities over ``action_ids`` (the available set) at the featurized state."""
    if len(action_ids) == 0:
        raise ValueError("empty action set")
    return softmax(preferences(prefs, idx, action_ids))


@dataclass
class ScoreGradient:
    """Sparse ``grad ln pi``: entry ``coef[k]`` on row ``rows[k]`` at every active column."""

    rows: np.ndarray
    coef: np.ndarray
    cols: np.ndarray

    def to_dense(self, shape) -> np.ndarray:
        g = np.zeros(shape)
        for r, c in zip(self.rows, self.coef):
            np.add.at(g[r], self.cols, c)
        return g


def log_policy_gradient(prefs: PreferenceWeights, idx, action_ids, chosen: int) -> ScoreGradient:
    """Score function of the softmax: ``phi(s, chosen) - sum_b pi(b|s) phi(s, b)``."""
    ids = np.asarray(action_ids, dtype=np.int64)
    hits = np.flatnonzero(ids == chosen)
    if hits.size == 0:
        raise KeyError(f"action {chosen} not in the available set")
    pi = softmax_policy(prefs, idx, ids)
    coef = -pi
    coef[hits[0]] += 1.0
    return ScoreGradient(ids, coef, np.asarray(idx))


def apply_score(prefs: PreferenceWeights, grad: ScoreGradient, scale: float) -> None:
    if _distinct(grad.cols):
        prefs.psi[grad.rows[:, None], grad.cols[None, :]] += scale * grad.coef[:, None]
    else:
        for r, c in zip(grad.rows, grad.coef):
            np.add.at(prefs.psi[r], grad.cols, scale * c)
    if not np.all(np.isfinite(prefs.psi[grad.rows[:, None], grad.cols[None, :]])):
        raise DivergedWeights("non-finite preference weight after update")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

MAGIC = b"HAGEMU-WEIGHTS 1\n"


def save_weights(path, spec: TileCoderSpec, meta: dict, theta: np.ndarray,
                 psi: np.ndarray | None = None) -> None:
    """Header line (JSON) followed by sparse ``.npy`` blocks: nonzero index + value arrays."""
    header = {"tile_coder": spec.to_json(), "meta": meta, "theta_shape": list(theta.shape),
              "psi_shape": None if psi is None else list(psi.shape)}
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for arr in (theta,) if psi is None else (theta, psi):
        flat = arr.ravel()
        nz = np.flatnonzero(flat)
        np.save(buf, nz.astype(np.int64))
        np.save(buf, flat[nz].astype(np.float64))
    Path(path).write_bytes(buf.getvalue())


def load_weights(path) -> tuple[TileCoderSpec, dict, np.ndarray, np.ndarray | None]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise IncompatibleWeights(f"{path} is not a weights file")
    buf = io.BytesIO(raw)
    buf.readline()
    header = json.loads(buf.readline())
    out = []
    for key in ("theta_shape", "psi_shape"):
        shape = header[key]
        if shape is None:
            out.append(None)
            continue
        nz = np.load(buf)
        vals = np.load(buf)
        arr = np.zeros(int(np.prod(shape)))
        arr[nz] = vals
        out.append(arr.reshape(shape))
    return TileCoderSpec.from_json(header["tile_coder"]), header["meta"], out[0], out[1]
