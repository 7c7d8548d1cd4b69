"""Feed-forward networks with exact reverse-mode gradients.

An :class:`MlpNet` is a list of dense :class:`Layer` objects acting on row
batches (``x`` has shape ``(n, width_in)``). Gradients returned by
:meth:`MlpNet.backward` are sums over the batch of ``upstream * d out``; callers
fold the ``1/m`` of a minibatch mean into ``upstream``.

Discriminator presets
---------------------
``T1``         x -> sigmoid(U x) -> sigmoid(w . h)
``T2``         x -> relu(U x), rows of U capped at unit l2 norm -> sigmoid head
``T3``         T1 with a hidden bias
``T4``         relu(U x) -> sigmoid(V h) -> sigmoid head
``deep``       sigmoid|ramp(U x + b) -> (L-1) relu layers -> sigmoid head
``practical``  p -> 2p (leaky_relu) -> p//2 (sigmoid) -> 1 (sigmoid), all with bias

Caps (``l1_cap`` per output row, ``l2_cap`` per output row) are only enforced
by :func:`project_constraints`; training itself is unconstrained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .distributions import Rng, sample_sphere
from .scoring import sigmoid

LEAKY_SLOPE = 0.2
XI_WIDTHS = (48, 32, 24, 12, 1)

ACTIVATIONS = ("sigmoid", "relu", "leaky_relu", "ramp", "identity")


class NetError(ValueError):
    pass


class StaleCacheError(NetError):
    pass


def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "leaky_relu":
        return np.maximum(LEAKY_SLOPE * z, z)
    if kind == "ramp":
        return np.clip(z + 0.5, 0.0, 1.0)
    if kind == "identity":
        return z
    raise NetError(f"unknown activation {kind!r}")


def activation_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "relu":
        return (z > 0).astype(float)
    if kind == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if kind == "ramp":
        return ((z > -0.5) & (z < 0.5)).astype(float)
    if kind == "identity":
        return np.ones_like(z)
    raise NetError(f"unknown activation {kind!r}")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: Optional[np.ndarray]
    activation: str
    l1_cap: Optional[float] = None
    l2_cap: Optional[float] = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise NetError(f"unknown activation {self.activation!r}")
        self.weight = np.atleast_2d(np.asarray(self.weight, dtype=float))
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=float).reshape(self.weight.shape[0])

    @property
    def width_in(self) -> int:
        return self.weight.shape[1]

    @property
    def width_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class Cache:
    version: int
    inputs: list  # input to each layer
    pre: list  # pre-activations
    post: list  # activations

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]


@dataclass
class LayerGrad:
    weight: np.ndarray
    bias: Optional[np.ndarray]


class MlpNet:
    def __init__(self, layers: list[Layer]):
        if not layers:
            raise NetError("a network needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].width_in != layers[k - 1].width_out:
                raise NetError(
                    f"layer {k} expects width {layers[k].width_in}, "
                    f"previous layer produces {layers[k - 1].width_out}"
                )
        self.layers = layers
        self.version = 0

    @property
    def width_in(self) -> int:
        return self.layers[0].width_in

    @property
    def width_out(self) -> int:
        return self.layers[-1].width_out

    def touch(self):
        """Mark parameters as changed; invalidates outstanding caches."""
        self.version += 1

    def forward(self, x) -> tuple[np.ndarray, Cache]:
        h = np.asarray(x, dtype=float)
        if h.ndim == 1:
            h = h[None, :]
        cache = Cache(self.version, [], [], [])
        for k, layer in enumerate(self.layers):
            if h.shape[1] != layer.width_in:
                raise NetError(f"layer {k} expects input width {layer.width_in}, got {h.shape[1]}")
            z = h @ layer.weight.T
            if layer.bias is not None:
                z = z + layer.bias
            a = activate(layer.activation, z)
            cache.inputs.append(h)
            cache.pre.append(z)
            cache.post.append(a)
            h = a
        return h, cache

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: Cache, upstream, from_logit: bool = False):
        """Return ``(layer_grads, input_grad)``.

        ``upstream`` is ``dL/d output`` per row, or ``dL/d logit`` of the last
        layer when ``from_logit`` is set.
        """
        if cache.version != self.version:
            raise StaleCacheError("forward cache predates a parameter update")
        g = np.asarray(upstream, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        grads: list[LayerGrad] = [None] * len(self.layers)  # type: ignore[list-item]
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if not (from_logit and k == len(self.layers) - 1):
                g = g * activation_grad(layer.activation, cache.pre[k], cache.post[k])
            gw = g.T @ cache.inputs[k]
            gb = g.sum(axis=0) if layer.bias is not None else None
            grads[k] = LayerGrad(gw, gb)
            g = g @ layer.weight
        return grads, g

    def step(self, grads: list[LayerGrad], lr: float):
        """In-place ``param += lr * grad`` (pass a negative ``lr`` to descend)."""
        for layer, gr in zip(self.layers, grads):
            layer.weight += lr * gr.weight
            if layer.bias is not None:
                layer.bias += lr * gr.bias
        self.touch()

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            if layer.bias is not None:
                out.append(layer.bias)
        return out

    def copy(self) -> "MlpNet":
        return MlpNet.from_dict(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "format": "robscatter.mlp/1",
            "layers": [
                {
                    "width_in": L.width_in,
                    "width_out": L.width_out,
                    "activation": L.activation,
                    "has_bias": L.bias is not None,
                    "l1_cap": L.l1_cap,
                    "l2_cap": L.l2_cap,
                    "weight": L.weight.ravel().tolist(),
                    "bias": None if L.bias is None else L.bias.tolist(),
                }
                for L in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpNet":
        layers = []
        for spec in d["layers"]:
            w = np.array(spec["weight"], dtype=float).reshape(spec["width_out"], spec["width_in"])
            b = None if not spec["has_bias"] else np.array(spec["bias"], dtype=float)
            layers.append(Layer(w, b, spec["activation"], spec.get("l1_cap"), spec.get("l2_cap")))
        return cls(layers)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MlpNet":
        return cls.from_dict(json.loads(text))


# --- presets ----------------------------------------------------------------


@dataclass(frozen=True)
class DiscriminatorPreset:
    kind: str = "practical"
    dim: int = 2
    hidden: int = 0  # 0 -> preset default
    depth: int = 2  # deep class: number of hidden layers L
    bottom: str = "sigmoid"  # deep class: sigmoid | ramp
    kappa: Optional[float] = None  # output l1 cap (theory mode only)
    kappa2: Optional[float] = None  # T4 middle-layer l1 cap
    width_cap: Optional[float] = None  # deep class B

    @classmethod
    def theory(cls, kind: str, dim: int, n: int, eps: float, const: float = 1.0, **kw) -> "DiscriminatorPreset":
        # output-layer l1 cap of order sqrt(p/n) + eps; the constant is a free choice
        kw.setdefault("kappa", const * (np.sqrt(dim / n) + eps))
        return cls(kind, dim, **kw)

    def layer_shapes(self) -> list[tuple[int, int, bool, str, Optional[float], Optional[float]]]:
        p = self.dim
        h = self.hidden or max(2, p)
        k = self.kind.lower()
        if k == "t1":
            return [(p, h, False, "sigmoid", None, None), (h, 1, False, "sigmoid", self.kappa, None)]
        if k == "t2":
            return [(p, h, False, "relu", None, 1.0), (h, 1, False, "sigmoid", self.kappa, None)]
        if k == "t3":
            return [(p, h, True, "sigmoid", None, None), (h, 1, False, "sigmoid", self.kappa, None)]
        if k == "t4":
            if h < 2:
                raise NetError("T4 needs at least two ReLU units")
            return [
                (p, h, False, "relu", None, 1.0),
                (h, h, False, "sigmoid", self.kappa2, None),
                (h, 1, False, "sigmoid", self.kappa, None),
            ]
        if k == "deep":
            if self.bottom not in ("sigmoid", "ramp"):
                raise NetError("deep class bottom must be sigmoid or ramp")
            shapes = [(p, h, True, self.bottom, None, None)]
            for _ in range(self.depth - 1):
                shapes.append((h, h, False, "relu", self.width_cap, None))
            shapes.append((h, 1, False, "sigmoid", self.kappa, None))
            return shapes
        if k == "practical":
            h1, h2 = 2 * p, max(1, p // 2)
            return [
                (p, h1, True, "leaky_relu", None, None),
                (h1, h2, True, "sigmoid", None, None),
                (h2, 1, True, "sigmoid", None, None),
            ]
        raise NetError(f"unknown discriminator preset {self.kind!r}")


def init_net(rng, shapes, sigma1: Optional[float] = None) -> MlpNet:
    """First layer ~ N(0, sigma1^2) (Xavier-uniform if ``sigma1`` is None), later
    layers Xavier-uniform, biases zero."""
    if isinstance(shapes, DiscriminatorPreset):
        shapes = shapes.layer_shapes()
    if sigma1 is not None and not sigma1 > 0:
        raise NetError("sigma1 must be positive")
    rng = rng if isinstance(rng, Rng) else Rng(int(rng))
    layers = []
    for k, (w_in, w_out, has_bias, act, l1, l2) in enumerate(shapes):
        if k == 0 and sigma1 is not None:
            w = sigma1 * rng.normal((w_out, w_in))
        else:
            lim = np.sqrt(6.0 / (w_in + w_out))
            w = rng.gen.uniform(-lim, lim, (w_out, w_in))
        b = np.zeros(w_out) if has_bias else None
        layers.append(Layer(w, b, act, l1, l2))
    return MlpNet(layers)


def make_discriminator(rng, preset: DiscriminatorPreset, sigma1: Optional[float]) -> MlpNet:
    return init_net(rng, preset, sigma1)


def make_xi_net(rng, dim: int) -> MlpNet:
    """The 48-32-24-12-1 radial network; output bias starts at sqrt(dim) ~ E||Z||."""
    w = XI_WIDTHS
    shapes = [(w[k], w[k + 1], True, "leaky_relu", None, None) for k in range(len(w) - 2)]
    shapes.append((w[-2], w[-1], True, "identity", None, None))
    net = init_net(rng, shapes, None)
    net.layers[-1].bias[:] = np.sqrt(dim)
    net.touch()
    return net


# --- constraint projection --------------------------------------------------


def project_l1(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the l1 ball (sort-based soft threshold)."""
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    if radius <= 0:
        return np.zeros_like(v)
    mu = np.sort(a)[::-1]
    cs = np.cumsum(mu)
    k = np.arange(1, len(mu) + 1)
    rho = np.nonzero(mu * k > cs - radius)[0][-1]
    lam = (cs[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - lam, 0.0)


def project_constraints(net: MlpNet) -> MlpNet:
    """Project capped rows in place: l2 rescaling, then l1-ball projection."""
    for layer in net.layers:
        if layer.l2_cap is not None:
            norms = np.linalg.norm(layer.weight, axis=1)
            over = norms > layer.l2_cap
            layer.weight[over] *= (layer.l2_cap / norms[over])[:, None]
        if layer.l1_cap is not None:
            for r in range(layer.width_out):
                layer.weight[r] = project_l1(layer.weight[r], layer.l1_cap)
    net.touch()
    return net


# --- generators -------------------------------------------------------------


@dataclass
class GeneratorCache:
    version: int
    z: Optional[np.ndarray] = None  # G1/G3 base noise
    u: Optional[np.ndarray] = None  # G2/G4 sphere draws
    xi: Optional[np.ndarray] = None
    xi_cache: Optional[Cache] = None


@dataclass
class GeneratorGrad:
    A: np.ndarray
    theta: Optional[np.ndarray] = None
    xi_net: Optional[list] = None


@dataclass
class Generator:
    """G1 ``A Z``, G2 ``xi(z) A U``, G3 ``theta + A Z``, G4 ``theta + xi(z) A U``.

    ``base`` is the law of Z for G1/G3: ``"gaussian"`` or ``"t"`` (with
    ``dof``), both standardized to scatter I.
    """

    kind: str
    A: np.ndarray
    theta: Optional[np.ndarray] = None
    xi_net: Optional[MlpNet] = None
    base: str = "gaussian"
    dof: float = np.inf
    version: int = field(default=0)

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in ("G1", "G2", "G3", "G4"):
            raise NetError(f"unknown generator {self.kind!r}")
        self.A = np.array(self.A, dtype=float)
        p = self.A.shape[0]
        if self.has_location and self.theta is None:
            self.theta = np.zeros(p)
        if self.has_location:
            self.theta = np.array(self.theta, dtype=float)
        if self.radial and self.xi_net is None:
            raise NetError(f"{self.kind} needs a xi network")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def radial(self) -> bool:
        return self.kind in ("G2", "G4")

    @property
    def has_location(self) -> bool:
        return self.kind in ("G3", "G4")

    def touch(self):
        self.version += 1
        if self.xi_net is not None:
            self.xi_net.touch()

    def sample(self, rng, n: int) -> tuple[np.ndarray, GeneratorCache]:
        rng = rng if isinstance(rng, Rng) else Rng(int(rng))
        p = self.dim
        if self.radial:
            u = sample_sphere(rng, self.A.shape[1], n)
            zq = rng.normal((n, self.xi_net.width_in))
            h, xc = self.xi_net.forward(zq)
            xi = np.abs(h[:, 0])
            x = xi[:, None] * (u @ self.A.T)
            cache = GeneratorCache(self.version, u=u, xi=xi, xi_cache=xc)
        else:
            z = rng.normal((n, self.A.shape[1]))
            if self.base == "t" and np.isfinite(self.dof):
                w = rng.chisquare(self.dof, n)
                z = z / np.sqrt(w / self.dof)[:, None]
            elif self.base not in ("gaussian", "t"):
                raise NetError(f"unknown generator base law {self.base!r}")
            x = z @ self.A.T
            cache = GeneratorCache(self.version, z=z)
        if self.has_location:
            x = x + self.theta
        assert x.shape == (n, p)
        return x, cache

    def backward(self, cache: GeneratorCache, gx) -> GeneratorGrad:
        """Chain ``dL/dx`` (per row, already batch-weighted) into parameter gradients."""
        if cache.version != self.version:
            raise StaleCacheError("generator cache predates a parameter update")
        gx = np.asarray(gx, dtype=float)
        theta_g = gx.sum(axis=0) if self.has_location else None
        if self.radial:
            au = cache.u @ self.A.T
            gA = gx.T @ (cache.xi[:, None] * cache.u)
            gxi = np.sum(gx * au, axis=1)
            h = cache.xi_cache.output[:, 0]
            gh = gxi * np.sign(h)
            xi_grads, _ = self.xi_net.backward(cache.xi_cache, gh)
            return GeneratorGrad(gA, theta_g, xi_grads)
        return GeneratorGrad(gx.T @ cache.z, theta_g)

    def step(self, grad: GeneratorGrad, lr: float):
        self.A += lr * grad.A
        if self.has_location:
            self.theta += lr * grad.theta
        if self.radial:
            self.xi_net.step(grad.xi_net, lr)
        self.touch()

    def scatter(self) -> np.ndarray:
        return self.A @ self.A.T

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "A": self.A.tolist(),
            "theta": None if self.theta is None else self.theta.tolist(),
            "xi_net": None if self.xi_net is None else self.xi_net.to_dict(),
            "base": self.base,
            "dof": None if np.isinf(self.dof) else self.dof,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Generator":
        return cls(
            d["kind"],
            np.array(d["A"], dtype=float),
            None if d["theta"] is None else np.array(d["theta"], dtype=float),
            None if d["xi_net"] is None else MlpNet.from_dict(d["xi_net"]),
            d["base"],
            np.inf if d["dof"] is None else d["dof"],
        )


def make_generator(kind: str, A, rng=None, theta=None, base: str = "gaussian", dof: float = np.inf) -> Generator:
    kind = kind.upper()
    A = np.asarray(A, dtype=float)
    xi_net = None
    if kind in ("G2", "G4"):
        xi_net = make_xi_net(rng if rng is not None else Rng(0), A.shape[0])
    return Generator(kind, A, theta, xi_net, base, dof)
