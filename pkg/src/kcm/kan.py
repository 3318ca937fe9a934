"""Spline-edge (KAN) and dense (MLP) networks with analytic gradients.

A KAN layer places a learnable activation on every edge: a silu residual plus
a spline in the layer's shared basis. Nodes only sum incoming edge outputs.
The MLP counterpart (fixed tanh nodes, linear edges) backs capacity-matched
baselines; both expose the same forward/backward/copy interface.
"""

from dataclasses import dataclass

import numpy as np

from .splines import SplineBasis

__all__ = [
    "NumericalError",
    "CapacityMatchError",
    "KanEdge",
    "KanLayer",
    "KanNetwork",
    "MlpNetwork",
    "edge_forward",
    "match_capacity",
    "silu",
]


class NumericalError(RuntimeError):
    """Raised when training or parameters produce non-finite values."""


class CapacityMatchError(RuntimeError):
    """Raised when no MLP architecture lands within the parameter-count band."""


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x):
    """Residual base activation x * sigmoid(x)."""
    x = np.asarray(x, dtype=np.float64)
    return x * _sigmoid(x)


def _silu_grad(x):
    s = _sigmoid(np.asarray(x, dtype=np.float64))
    return s * (1.0 + x * (1.0 - s))


@dataclass
class KanEdge:
    """One edge activation: base_scale * silu(x) + spline_scale * sum_i c_i B_i(x)."""

    coefficients: np.ndarray
    base_scale: float
    spline_scale: float

    def validate(self, basis: SplineBasis):
        if self.coefficients.shape != (basis.size,):
            raise ValueError(
                f"coefficient vector has shape {self.coefficients.shape}, "
                f"expected ({basis.size},)"
            )
        if not (
            np.all(np.isfinite(self.coefficients))
            and np.isfinite(self.base_scale)
            and np.isfinite(self.spline_scale)
        ):
            raise NumericalError("edge parameters must be finite")


def edge_forward(edge: KanEdge, basis: SplineBasis, x: float) -> float:
    """Evaluate one edge activation at a scalar input (clamped into range)."""
    edge.validate(basis)
    xc = float(basis.clamp(np.float64(x)))
    spline = float(edge.coefficients @ basis.evaluate(xc))
    return edge.base_scale * float(silu(xc)) + edge.spline_scale * spline


class KanLayer:
    """An in_dim x out_dim grid of spline edges sharing one basis; nodes sum."""

    def __init__(self, in_dim: int, out_dim: int, basis: SplineBasis, rng=None, coeff_std=0.1):
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"layer dims must be positive, got {in_dim}x{out_dim}")
        if rng is None:
            rng = np.random.default_rng()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.basis = basis
        self.coeff = rng.normal(0.0, coeff_std, size=(in_dim, out_dim, basis.size))
        self.base_scale = np.ones((in_dim, out_dim))
        self.spline_scale = np.ones((in_dim, out_dim))

    def edge(self, i: int, j: int) -> KanEdge:
        """Edge view for input i, output j (coefficient vector is shared, not copied)."""
        return KanEdge(
            coefficients=self.coeff[i, j],
            base_scale=float(self.base_scale[i, j]),
            spline_scale=float(self.spline_scale[i, j]),
        )

    def forward(self, X: np.ndarray) -> np.ndarray:
        out, _ = self._forward(X, need_cache=False)
        return out

    def _forward(self, X, need_cache):
        inside = (X >= self.basis.lo) & (X <= self.basis.hi)
        xc = self.basis.clamp(X)
        B = self.basis.evaluate(xc)  # (n, in, m)
        S = np.einsum("nim,ijm->nij", B, self.coeff)  # per-edge spline sums
        act = silu(xc)
        out = act @ self.base_scale + np.einsum("nij,ij->nj", S, self.spline_scale)
        cache = {"xc": xc, "inside": inside, "B": B, "S": S, "act": act} if need_cache else None
        return out, cache

    def backward(self, cache: dict, upstream: np.ndarray):
        """Gradients for all edge parameters plus the gradient w.r.t. the layer input."""
        B, S, xc = cache["B"], cache["S"], cache["xc"]
        d_coeff = np.einsum("nj,nim->ijm", upstream, B) * self.spline_scale[:, :, None]
        d_base = cache["act"].T @ upstream
        d_spline = np.einsum("nij,nj->ij", S, upstream)
        Bp = self.basis.derivatives(xc)
        P = np.einsum("nim,ijm->nij", Bp, self.coeff)
        dx = _silu_grad(xc) * (upstream @ self.base_scale.T)
        dx += np.einsum("nij,ij,nj->ni", P, self.spline_scale, upstream)
        dx *= cache["inside"]  # clamped inputs receive no gradient
        grads = {"coeff": d_coeff, "base_scale": d_base, "spline_scale": d_spline}
        return grads, dx

    def apply_gradients(self, grads: dict, lr: float):
        self.coeff -= lr * grads["coeff"]
        self.base_scale -= lr * grads["base_scale"]
        self.spline_scale -= lr * grads["spline_scale"]

    def parameter_count(self) -> int:
        return self.in_dim * self.out_dim * (self.basis.size + 2)


class KanNetwork:
    """Stack of KanLayers; consecutive layers must be dimension-compatible."""

    kind = "kan"

    def __init__(self, layers: list):
        if not layers:
            raise ValueError("network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer dims are incompatible: {a.out_dim} feeds {b.in_dim}"
                )
        self.layers = layers

    @classmethod
    def create(cls, dims, *, order=3, num_intervals=5, input_range=(-1.0, 1.0),
               rng=None, coeff_std=0.1):
        """Build a network with the given node counts and one shared basis."""
        if len(dims) < 2:
            raise ValueError("dims must list input and output sizes at least")
        if rng is None:
            rng = np.random.default_rng()
        basis = SplineBasis(order=order, num_intervals=num_intervals,
                            lo=input_range[0], hi=input_range[1])
        layers = [
            KanLayer(d_in, d_out, basis, rng=rng, coeff_std=coeff_std)
            for d_in, d_out in zip(dims, dims[1:])
        ]
        return cls(layers)

    @property
    def dims(self) -> list:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def basis(self) -> SplineBasis:
        return self.layers[0].basis

    def _as_batch(self, x):
        X = np.asarray(x, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ValueError(f"input has shape {np.shape(x)}, expected (*, {self.in_dim})")
        return X, single

    def forward(self, x) -> np.ndarray:
        X, single = self._as_batch(x)
        for layer in self.layers:
            X = layer.forward(X)
        return X[0] if single else X

    def forward_with_cache(self, x):
        X, single = self._as_batch(x)
        caches = []
        for layer in self.layers:
            X, cache = layer._forward(X, need_cache=True)
            caches.append(cache)
        out = X[0] if single else X
        return out, {"layers": caches, "single": single, "n": X.shape[0]}

    def backward(self, cache, upstream) -> list:
        """Per-layer parameter gradients for the cached forward pass."""
        if cache is None:
            raise ValueError("backward requires the cache from forward_with_cache")
        U = np.asarray(upstream, dtype=np.float64)
        if cache["single"]:
            U = U[None, :]
        if U.shape != (cache["n"], self.out_dim):
            raise ValueError(f"upstream gradient has shape {U.shape}, "
                             f"expected ({cache['n']}, {self.out_dim})")
        grads = [None] * len(self.layers)
        for idx in range(len(self.layers) - 1, -1, -1):
            grads[idx], U = self.layers[idx].backward(cache["layers"][idx], U)
        return grads

    def apply_gradients(self, grads, lr):
        for layer, g in zip(self.layers, grads):
            layer.apply_gradients(g, lr)

    def parameter_count(self) -> int:
        return sum(layer.parameter_count() for layer in self.layers)

    def parameters_flat(self) -> np.ndarray:
        parts = []
        for layer in self.layers:
            parts += [layer.coeff.ravel(), layer.base_scale.ravel(), layer.spline_scale.ravel()]
        return np.concatenate(parts)

    def set_parameters_flat(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.parameter_count(),):
            raise ValueError(f"expected {self.parameter_count()} parameters, got {values.shape}")
        pos = 0
        for layer in self.layers:
            for arr in (layer.coeff, layer.base_scale, layer.spline_scale):
                arr[...] = values[pos : pos + arr.size].reshape(arr.shape)
                pos += arr.size

    def copy(self) -> "KanNetwork":
        dup = KanNetwork.create(
            self.dims,
            order=self.basis.order,
            num_intervals=self.basis.num_intervals,
            input_range=(self.basis.lo, self.basis.hi),
            rng=np.random.default_rng(0),
            coeff_std=0.0,
        )
        dup.set_parameters_flat(self.parameters_flat())
        return dup

    def validate_finite(self):
        for idx, layer in enumerate(self.layers):
            for name in ("coeff", "base_scale", "spline_scale"):
                if not np.all(np.isfinite(getattr(layer, name))):
                    raise NumericalError(f"non-finite {name} in layer {idx}")


class MlpNetwork:
    """Dense layers with tanh hidden nodes and a linear output layer."""

    kind = "mlp"

    def __init__(self, weights: list, biases: list):
        if not weights or len(weights) != len(biases):
            raise ValueError("weights and biases must pair up")
        for (w, b) in zip(weights, biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError(f"bias shape {b.shape} does not match weight {w.shape}")
        for w_a, w_b in zip(weights, weights[1:]):
            if w_a.shape[1] != w_b.shape[0]:
                raise ValueError("layer dims are incompatible")
        self.weights = weights
        self.biases = biases

    @classmethod
    def create(cls, dims, rng=None):
        if len(dims) < 2:
            raise ValueError("dims must list input and output sizes at least")
        if rng is None:
            rng = np.random.default_rng()
        weights, biases = [], []
        for d_in, d_out in zip(dims, dims[1:]):
            weights.append(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, d_out)))
            biases.append(np.zeros(d_out))
        return cls(weights, biases)

    @property
    def dims(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def _as_batch(self, x):
        X = np.asarray(x, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ValueError(f"input has shape {np.shape(x)}, expected (*, {self.in_dim})")
        return X, single

    def forward(self, x) -> np.ndarray:
        X, single = self._as_batch(x)
        last = len(self.weights) - 1
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            X = X @ w + b
            if idx != last:
                X = np.tanh(X)
        return X[0] if single else X

    def forward_with_cache(self, x):
        X, single = self._as_batch(x)
        acts = [X]
        last = len(self.weights) - 1
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            X = X @ w + b
            if idx != last:
                X = np.tanh(X)
            acts.append(X)
        out = X[0] if single else X
        return out, {"acts": acts, "single": single, "n": X.shape[0]}

    def backward(self, cache, upstream) -> list:
        if cache is None:
            raise ValueError("backward requires the cache from forward_with_cache")
        U = np.asarray(upstream, dtype=np.float64)
        if cache["single"]:
            U = U[None, :]
        if U.shape != (cache["n"], self.out_dim):
            raise ValueError(f"upstream gradient has shape {U.shape}, "
                             f"expected ({cache['n']}, {self.out_dim})")
        acts = cache["acts"]
        grads = [None] * len(self.weights)
        last = len(self.weights) - 1
        for idx in range(last, -1, -1):
            grads[idx] = {"weight": acts[idx].T @ U, "bias": U.sum(axis=0)}
            if idx > 0:
                U = U @ self.weights[idx].T
                U = U * (1.0 - acts[idx] ** 2)  # tanh'
        return grads

    def apply_gradients(self, grads, lr):
        for w, b, g in zip(self.weights, self.biases, grads):
            w -= lr * g["weight"]
            b -= lr * g["bias"]

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)

    def set_parameters_flat(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.parameter_count(),):
            raise ValueError(f"expected {self.parameter_count()} parameters, got {values.shape}")
        pos = 0
        for w, b in zip(self.weights, self.biases):
            for arr in (w, b):
                arr[...] = values[pos : pos + arr.size].reshape(arr.shape)
                pos += arr.size

    def copy(self) -> "MlpNetwork":
        dup = MlpNetwork.create(self.dims, rng=np.random.default_rng(0))
        dup.set_parameters_flat(self.parameters_flat())
        return dup

    def validate_finite(self):
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericalError(f"non-finite parameters in layer {idx}")


def _mlp_param_count(dims) -> int:
    return sum((d_in + 1) * d_out for d_in, d_out in zip(dims, dims[1:]))


def match_capacity(kan: KanNetwork, *, seed: int = 0, tolerance: float = 0.1) -> MlpNetwork:
    """Build an MLP whose parameter count is within +/-tolerance of the KAN's.

    Keeps the KAN's depth where possible (a single-layer KAN still gets one
    hidden layer, since a lone linear map rarely reaches the band) and searches
    a uniform hidden width.
    """
    target = kan.parameter_count()
    dims = kan.dims
    d_in, d_out = dims[0], dims[-1]
    n_hidden = max(len(dims) - 2, 1)

    candidates = [[d_in, d_out]]
    width = 1
    while True:
        arch = [d_in] + [width] * n_hidden + [d_out]
        candidates.append(arch)
        if _mlp_param_count(arch) > target * (1 + tolerance) or width > target + 2:
            break
        width += 1

    best = min(candidates, key=lambda arch: (abs(_mlp_param_count(arch) - target),
                                             _mlp_param_count(arch)))
    count = _mlp_param_count(best)
    if not (target * (1 - tolerance) <= count <= target * (1 + tolerance)):
        raise CapacityMatchError(
            f"no MLP within {tolerance:.0%} of {target} parameters (closest: {count})"
        )
    return MlpNetwork.create(best, rng=np.random.default_rng(seed))
