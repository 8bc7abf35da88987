"""Parameter tuples, norms and forward/backward passes for small MLPs.

A network with widths ``h_0, ..., h_L`` (``h_L == 1``) maps ``x`` to
``A_L s(A_{L-1} ... s(A_1 x))`` where ``s`` is applied after every layer
except the last. Weight matrices have shape ``(h_l, h_{l-1})``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ACTIVATIONS = ("identity", "relu")


class ShapeError(ValueError):
    """Raised when inputs or parameters do not conform to an architecture."""


class SpectralNormError(RuntimeError):
    """Power iteration did not converge within its iteration cap."""


@dataclass(frozen=True)
class Architecture:
    widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise ShapeError("need at least one layer (two widths)")
        if any(w < 1 for w in widths):
            raise ShapeError(f"widths must be positive, got {widths}")
        if widths[-1] != 1:
            raise ShapeError(f"output width must be 1, got {widths[-1]}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def h0(self) -> int:
        return self.widths[0]

    @property
    def hbar(self) -> int:
        return max(self.widths[1:])

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [(self.widths[l + 1], self.widths[l]) for l in range(self.depth)]

    @property
    def D(self) -> int:
        return sum(a * b for a, b in self.shapes)

    @property
    def offsets(self) -> list[int]:
        out = [0]
        for a, b in self.shapes:
            out.append(out[-1] + a * b)
        return out

    def split(self, flat: np.ndarray) -> list[np.ndarray]:
        """Split ``(..., D)`` flat arrays into per-layer ``(..., h_l, h_{l-1})`` views."""
        flat = np.asarray(flat)
        if flat.shape[-1] != self.D:
            raise ShapeError(f"expected trailing dimension {self.D}, got {flat.shape[-1]}")
        lead = flat.shape[:-1]
        off = self.offsets
        return [flat[..., off[i]:off[i + 1]].reshape(lead + s) for i, s in enumerate(self.shapes)]

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(tuple(d["widths"]), d.get("activation", "relu"))


@dataclass(frozen=True, eq=False)
class ParamTuple:
    """Immutable tuple of weight matrices ``(A_1, ..., A_L)``."""

    arch: Architecture
    layers: tuple[np.ndarray, ...]

    def __post_init__(self):
        layers = tuple(np.array(a, dtype=float) for a in self.layers)
        if len(layers) != self.arch.depth:
            raise ShapeError(f"expected {self.arch.depth} layers, got {len(layers)}")
        for i, (a, shape) in enumerate(zip(layers, self.arch.shapes)):
            if a.shape != shape:
                raise ShapeError(f"layer {i + 1} has shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"layer {i + 1} contains non-finite entries")
            a.setflags(write=False)
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_flat(cls, arch: Architecture, flat) -> "ParamTuple":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (arch.D,):
            raise ShapeError(f"flat vector must have shape ({arch.D},), got {flat.shape}")
        return cls(arch, tuple(arch.split(flat)))

    @classmethod
    def zeros(cls, arch: Architecture) -> "ParamTuple":
        return cls.from_flat(arch, np.zeros(arch.D))

    @classmethod
    def random(cls, arch: Architecture, rng: np.random.Generator, scale: float = 1.0) -> "ParamTuple":
        return cls.from_flat(arch, scale * rng.standard_normal(arch.D))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.layers])

    def _combine(self, other, op):
        if not isinstance(other, ParamTuple) or other.arch != self.arch:
            return NotImplemented
        return ParamTuple(self.arch, tuple(op(a, b) for a, b in zip(self.layers, other.layers)))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        return ParamTuple(self.arch, tuple(c * a for a in self.layers))

    __rmul__ = __mul__

    def __neg__(self):
        return -1.0 * self

    def __eq__(self, other):
        if not isinstance(other, ParamTuple):
            return NotImplemented
        return self.arch == other.arch and all(np.array_equal(a, b) for a, b in zip(self.layers, other.layers))

    def __hash__(self):
        return hash((self.arch, self.flat().tobytes()))

    def inner(self, other: "ParamTuple") -> float:
        return float(np.dot(self.flat(), other.flat()))

    def to_dict(self) -> dict:
        return {
            "architecture": self.arch.to_dict(),
            "layers": [a.ravel().tolist() for a in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamTuple":
        arch = Architecture.from_dict(d["architecture"])
        layers = [np.asarray(v, dtype=float).reshape(s) for v, s in zip(d["layers"], arch.shapes)]
        return cls(arch, tuple(layers))

    def to_json(self) -> str:
        # json emits repr() floats, which round-trip exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ParamTuple":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ParamSpace:
    """Frobenius ball of radius ``radius`` around the origin."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ParamSpace radius must be positive")

    def contains(self, params: ParamTuple, rtol: float = 1e-12) -> bool:
        return norm_F(params) <= self.radius * (1 + rtol)


# ---------------------------------------------------------------- norms

def norm_F(params: ParamTuple) -> float:
    return float(np.sqrt(sum(np.sum(a * a) for a in params.layers)))


def norm_21(matrix) -> float:
    """Sum of the Euclidean norms of the columns."""
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    return float(np.sum(np.linalg.norm(m, axis=0)))


def norm_L21(params: ParamTuple) -> float:
    return float(sum(norm_21(a) for a in params.layers))


def l21_batch(arch: Architecture, flat: np.ndarray) -> np.ndarray:
    """L21 norms of a stack of flat parameter vectors ``(..., D)``."""
    total = 0.0
    for a in arch.split(flat):
        total = total + np.sqrt(np.sum(a * a, axis=-2)).sum(axis=-1)
    return np.asarray(total)


def norm_spectral(matrix, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on ``A^T A``.

    Starts from the normalized all-ones vector; if that vector lies in the
    null space, falls back to the coordinate axes in order.
    """
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    if not np.any(a):
        return 0.0
    gram = a.T @ a
    n = gram.shape[0]
    starts = [np.ones(n) / math.sqrt(n)] + [np.eye(n)[i] for i in range(n)]
    for v in starts:
        w = gram @ v
        if np.linalg.norm(w) > 0:
            break
    lam = float(v @ w)
    for _ in range(max_iter):
        v = w / np.linalg.norm(w)
        w = gram @ v
        new = float(v @ w)
        if abs(new - lam) <= tol * new:
            return math.sqrt(new)
        lam = new
    raise SpectralNormError(f"power iteration did not reach tol={tol} in {max_iter} iterations")


def project_space(params: ParamTuple, space: ParamSpace) -> ParamTuple:
    nf = norm_F(params)
    if nf <= space.radius:
        return params
    return (space.radius / nf) * params


# ------------------------------------------------------ forward / backward

def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else z


def _act_grad(z, kind):
    # relu subgradient is 1{z >= 0}
    return (z >= 0).astype(float) if kind == "relu" else np.ones_like(z)


def forward(x, params: ParamTuple) -> float:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (params.arch.h0,):
        raise ShapeError(f"input must have length {params.arch.h0}, got {x.shape[0]}")
    h = x
    layers = params.layers
    for a in layers[:-1]:
        h = _act(a @ h, params.arch.activation)
    return float((layers[-1] @ h)[0])


def loss_value(y, f, loss: str = "square", clip: bool = False, scale: float = 1.0):
    if loss != "square":
        raise ValueError(f"unsupported loss {loss!r}")
    v = (np.asarray(y) - np.asarray(f)) ** 2
    if clip:
        v = np.minimum(v, 1.0)
    return scale * v


def loss_dout(y, f, loss: str = "square", clip: bool = False, scale: float = 1.0):
    """Derivative of the loss with respect to the network output."""
    if loss != "square":
        raise ValueError(f"unsupported loss {loss!r}")
    r = np.asarray(f) - np.asarray(y)
    g = 2.0 * r
    if clip:
        g = np.where(r * r > 1.0, 0.0, g)
    return scale * g


def backprop(params: ParamTuple, x, y, loss: str = "square", clip: bool = False,
             scale: float = 1.0) -> ParamTuple:
    """Gradient of ``loss(y, f(x; params))`` with respect to every weight."""
    arch = params.arch
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (arch.h0,):
        raise ShapeError(f"input must have length {arch.h0}, got {x.shape[0]}")
    acts, pres = [x], []
    h = x
    for i, a in enumerate(params.layers):
        z = a @ h
        pres.append(z)
        h = z if i == arch.depth - 1 else _act(z, arch.activation)
        acts.append(h)
    f = float(h[0])
    delta = np.array([float(loss_dout(y, f, loss, clip, scale))])
    grads = [None] * arch.depth
    for i in range(arch.depth - 1, -1, -1):
        grads[i] = np.outer(delta, acts[i])
        if i > 0:
            delta = (params.layers[i].T @ delta) * _act_grad(pres[i - 1], arch.activation)
    return ParamTuple(arch, tuple(grads))


def _check_inputs(arch: Architecture, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, arch.h0)
    if X.shape[1] != arch.h0:
        raise ShapeError(f"inputs must have {arch.h0} columns, got {X.shape[1]}")
    return X


def forward_batch(arch: Architecture, weights: Sequence[np.ndarray], X) -> np.ndarray:
    """Outputs for ``R`` parameter tuples on ``n`` inputs.

    ``weights[l]`` has shape ``(R, h_l, h_{l-1})``; returns ``(R, n)``.
    """
    X = _check_inputs(arch, X)
    h = np.broadcast_to(X, (weights[0].shape[0],) + X.shape)
    for i, a in enumerate(weights):
        z = np.einsum("rij,rnj->rni", a, h)
        h = z if i == arch.depth - 1 else _act(z, arch.activation)
    return h[..., 0]


def value_and_grad_batch(arch: Architecture, weights: Sequence[np.ndarray], X, Y,
                         loss: str = "square", clip: bool = False, scale: float = 1.0):
    """Mean loss ``(R,)`` and mean gradients ``[(R, h_l, h_{l-1})]`` over ``n`` samples."""
    X = _check_inputs(arch, X)
    Y = np.asarray(Y, dtype=float).ravel()
    n = X.shape[0]
    h = np.broadcast_to(X, (weights[0].shape[0],) + X.shape)
    acts, pres = [h], []
    for i, a in enumerate(weights):
        z = np.einsum("rij,rnj->rni", a, h)
        pres.append(z)
        h = z if i == arch.depth - 1 else _act(z, arch.activation)
        acts.append(h)
    f = h[..., 0]
    values = loss_value(Y, f, loss, clip, scale).mean(axis=1)
    delta = loss_dout(Y, f, loss, clip, scale)[..., None]
    grads = [None] * arch.depth
    for i in range(arch.depth - 1, -1, -1):
        grads[i] = np.einsum("rni,rnj->rij", delta, acts[i]) / n
        if i > 0:
            delta = np.einsum("rni,rij->rnj", delta, weights[i]) * _act_grad(pres[i - 1], arch.activation)
    return values, grads


def per_sample_grads(params: ParamTuple, X, Y, loss: str = "square", clip: bool = False,
                     scale: float = 1.0) -> np.ndarray:
    """Per-sample loss gradients as an ``(n, D)`` array of flat vectors."""
    arch = params.arch
    X = _check_inputs(arch, X)
    Y = np.asarray(Y, dtype=float).ravel()
    h = X
    acts, pres = [X], []
    for i, a in enumerate(params.layers):
        z = h @ a.T
        pres.append(z)
        h = z if i == arch.depth - 1 else _act(z, arch.activation)
        acts.append(h)
    delta = loss_dout(Y, h[:, 0], loss, clip, scale)[:, None]
    blocks = [None] * arch.depth
    for i in range(arch.depth - 1, -1, -1):
        blocks[i] = (delta[:, :, None] * acts[i][:, None, :]).reshape(X.shape[0], -1)
        if i > 0:
            delta = (delta @ params.layers[i]) * _act_grad(pres[i - 1], arch.activation)
    return np.concatenate(blocks, axis=1)
