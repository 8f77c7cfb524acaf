"""Small fully connected networks with hand-written reverse-mode gradients.

Topology is fixed to what the lab needs: a leaky-ReLU trunk shared by one or
more affine output heads, where each head may concatenate extra inputs to the
trunk output before its affine layer. Everything is float64 and purely
deterministic; the only randomness is the init Generator.

Parameter order (used by Gradients, Adam and checkpoints): trunk layer 0
weight, trunk layer 0 bias, ..., head 0 weight, head 0 bias, head 1 weight, ...
Weights are (out, in); inputs are row vectors, so affine is x @ w.T + b.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Gradients = list[np.ndarray]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dims: tuple[int, ...]
    hidden_dims: tuple[int, ...] = (64, 64)
    leaky_slope: float = 0.01
    head_extra_input_dims: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.head_extra_input_dims is None:
            object.__setattr__(
                self, "head_extra_input_dims", tuple(0 for _ in self.output_dims)
            )
        if self.input_dim < 1 or any(d < 1 for d in self.hidden_dims):
            raise ValueError("all dims must be >= 1")
        if not self.output_dims or any(d < 1 for d in self.output_dims):
            raise ValueError("need at least one head with output_dim >= 1")
        if len(self.head_extra_input_dims) != len(self.output_dims):
            raise ValueError("one extra-input dim per head required")
        if any(d < 0 for d in self.head_extra_input_dims):
            raise ValueError("head extra-input dims must be >= 0")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must be in (0, 1)")

    @property
    def n_heads(self) -> int:
        return len(self.output_dims)


@dataclass
class Network:
    spec: NetworkSpec
    trunk_w: list[np.ndarray]
    trunk_b: list[np.ndarray]
    head_w: list[np.ndarray]
    head_b: list[np.ndarray]

    def parameters(self) -> list[np.ndarray]:
        """Canonical flat parameter list (views, not copies)."""
        params: list[np.ndarray] = []
        for w, b in zip(self.trunk_w, self.trunk_b):
            params.extend((w, b))
        for w, b in zip(self.head_w, self.head_b):
            params.extend((w, b))
        return params

    def copy(self) -> "Network":
        return Network(
            spec=self.spec,
            trunk_w=[w.copy() for w in self.trunk_w],
            trunk_b=[b.copy() for b in self.trunk_b],
            head_w=[w.copy() for w in self.head_w],
            head_b=[b.copy() for b in self.head_b],
        )


@dataclass
class ForwardCache:
    trunk_input: np.ndarray  # (B, input_dim)
    pre_activations: list[np.ndarray]  # z per trunk layer, (B, hidden)
    activations: list[np.ndarray]  # leaky(z) per trunk layer
    head_inputs: list[np.ndarray]  # (B, trunk_out + extra) per head
    squeeze: bool  # True when the caller passed 1-D vectors


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_network(spec: NetworkSpec, rng: np.random.Generator) -> Network:
    """Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] weights, zero biases."""
    trunk_w, trunk_b = [], []
    fan_in = spec.input_dim
    for h in spec.hidden_dims:
        bound = 1.0 / np.sqrt(fan_in)
        trunk_w.append(rng.uniform(-bound, bound, size=(h, fan_in)))
        trunk_b.append(np.zeros(h))
        fan_in = h
    head_w, head_b = [], []
    for out_dim, extra in zip(spec.output_dims, spec.head_extra_input_dims):
        head_in = fan_in + extra
        bound = 1.0 / np.sqrt(head_in)
        head_w.append(rng.uniform(-bound, bound, size=(out_dim, head_in)))
        head_b.append(np.zeros(out_dim))
    return Network(spec, trunk_w, trunk_b, head_w, head_b)


def init_adam(
    net: Network, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> AdamState:
    params = net.parameters()
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0.0, z, slope * z)


def _leaky_grad(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0.0, 1.0, slope)


def forward(
    net: Network,
    trunk_input: np.ndarray,
    head_extra_inputs: list[np.ndarray | None] | None = None,
) -> tuple[list[np.ndarray], ForwardCache]:
    """Run the trunk and all heads; accepts a vector or a (batch, dim) matrix.

    head_extra_inputs[k] is concatenated to the trunk output before head k's
    affine layer; pass None for heads with zero extra-input dim.
    """
    spec = net.spec
    x = np.asarray(trunk_input, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != spec.input_dim:
        raise ValueError(f"trunk input dim {x.shape[1]} != spec {spec.input_dim}")
    if head_extra_inputs is None:
        head_extra_inputs = [None] * spec.n_heads
    if len(head_extra_inputs) != spec.n_heads:
        raise ValueError("one extra input (or None) per head required")

    pre, act = [], []
    a = x
    for w, b in zip(net.trunk_w, net.trunk_b):
        z = a @ w.T + b
        a = _leaky(z, spec.leaky_slope)
        pre.append(z)
        act.append(a)

    outputs, head_inputs = [], []
    for k, (w, b) in enumerate(zip(net.head_w, net.head_b)):
        extra_dim = spec.head_extra_input_dims[k]
        if extra_dim == 0:
            h_in = a
            if head_extra_inputs[k] is not None and np.asarray(head_extra_inputs[k]).size:
                raise ValueError(f"head {k} takes no extra input")
        else:
            extra = head_extra_inputs[k]
            if extra is None:
                raise ValueError(f"head {k} requires an extra input of dim {extra_dim}")
            extra = np.asarray(extra, dtype=float)
            if extra.ndim == 1:
                extra = extra[None, :]
            if extra.shape != (x.shape[0], extra_dim):
                raise ValueError(
                    f"head {k} extra input shape {extra.shape} != {(x.shape[0], extra_dim)}"
                )
            h_in = np.concatenate([a, extra], axis=1)
        head_inputs.append(h_in)
        out = h_in @ w.T + b
        outputs.append(out[0] if squeeze else out)

    cache = ForwardCache(x, pre, act, head_inputs, squeeze)
    return outputs, cache


def backward(
    net: Network, cache: ForwardCache, head_output_grads: list[np.ndarray | None]
) -> Gradients:
    """Exact parameter gradients for the scalar loss whose per-head output
    gradients are supplied; heads sum through the shared trunk. Pass None to
    skip a head entirely.

    Batched caches accumulate (sum) over the batch dimension.
    """
    spec = net.spec
    if len(head_output_grads) != spec.n_heads:
        raise ValueError("one output grad (or None) per head required")
    batch = cache.trunk_input.shape[0]
    trunk_out_dim = spec.hidden_dims[-1]

    head_w_grads, head_b_grads = [], []
    d_trunk_out = np.zeros((batch, trunk_out_dim))
    for k, (w, h_in) in enumerate(zip(net.head_w, cache.head_inputs)):
        gy = head_output_grads[k]
        if gy is None:
            head_w_grads.append(np.zeros_like(w))
            head_b_grads.append(np.zeros_like(net.head_b[k]))
            continue
        gy = np.asarray(gy, dtype=float)
        if gy.ndim == 1:
            gy = gy[None, :]
        if gy.shape != (batch, spec.output_dims[k]):
            raise ValueError(
                f"head {k} output grad shape {gy.shape} != {(batch, spec.output_dims[k])}"
            )
        head_w_grads.append(gy.T @ h_in)
        head_b_grads.append(gy.sum(axis=0))
        d_trunk_out += gy @ w[:, :trunk_out_dim]

    trunk_w_grads, trunk_b_grads = [], []
    d_a = d_trunk_out
    for layer in range(len(net.trunk_w) - 1, -1, -1):
        d_z = d_a * _leaky_grad(cache.pre_activations[layer], spec.leaky_slope)
        layer_in = cache.trunk_input if layer == 0 else cache.activations[layer - 1]
        trunk_w_grads.append(d_z.T @ layer_in)
        trunk_b_grads.append(d_z.sum(axis=0))
        if layer > 0:
            d_a = d_z @ net.trunk_w[layer]
    trunk_w_grads.reverse()
    trunk_b_grads.reverse()

    grads: Gradients = []
    for gw, gb in zip(trunk_w_grads, trunk_b_grads):
        grads.extend((gw, gb))
    for gw, gb in zip(head_w_grads, head_b_grads):
        grads.extend((gw, gb))
    return grads


def zero_gradients(net: Network) -> Gradients:
    return [np.zeros_like(p) for p in net.parameters()]


def add_gradients(acc: Gradients, extra: Gradients) -> Gradients:
    for a, g in zip(acc, extra):
        a += g
    return acc


def scale_gradients(grads: Gradients, factor: float) -> Gradients:
    for g in grads:
        g *= factor
    return grads


def adam_step(opt: AdamState, net: Network, grads: Gradients) -> tuple[AdamState, Network]:
    """Standard Adam with bias correction; mutates opt and net in place."""
    params = net.parameters()
    if len(grads) != len(params):
        raise ValueError("gradient list does not match parameter list")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; update rejected")
    opt.step_count += 1
    t = opt.step_count
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= opt.lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return opt, net


def grad_check(
    net: Network,
    loss_and_grad,
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    loss_and_grad(net) must deterministically return (loss, Gradients); the
    numeric side only uses its loss value. Each element's error is measured
    against the network's dominant gradient magnitude, so near-zero entries
    (whose central differences are pure cancellation noise) cannot swamp the
    comparison while any error at update-relevant scale still registers.
    """
    _, analytic = loss_and_grad(net)
    scale = max(float(np.max(np.abs(a))) for a in analytic)
    worst = 0.0
    for p_idx, p in enumerate(net.parameters()):
        a = analytic[p_idx]
        flat = p.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            loss_plus, _ = loss_and_grad(net)
            flat[i] = orig - h
            loss_minus, _ = loss_and_grad(net)
            flat[i] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            ana = a.ravel()[i]
            rel = abs(ana - numeric) / max(abs(ana), abs(numeric), scale, 1e-8)
            worst = max(worst, rel)
    return worst


def min_kink_distance(cache: ForwardCache) -> float:
    """Smallest |pre-activation| in the trunk. Finite-difference probes are
    only trustworthy when this comfortably exceeds the probe step."""
    return min(float(np.min(np.abs(z))) for z in cache.pre_activations)


def mutation_control(net: Network, loss_and_grad, h: float = 1e-5) -> float:
    """Relative error after sign-flipping the largest analytic gradient entry.

    A working checker must report a large value here (the flip doubles the
    discrepancy); this guards against a checker that silently passes
    everything.
    """
    _, analytic = loss_and_grad(net)
    p_idx = max(range(len(analytic)), key=lambda j: float(np.max(np.abs(analytic[j]))))
    flat_idx = int(np.argmax(np.abs(analytic[p_idx])))
    p = net.parameters()[p_idx].ravel()
    orig = p[flat_idx]
    p[flat_idx] = orig + h
    loss_plus, _ = loss_and_grad(net)
    p[flat_idx] = orig - h
    loss_minus, _ = loss_and_grad(net)
    p[flat_idx] = orig
    numeric = (loss_plus - loss_minus) / (2.0 * h)
    mutated = -analytic[p_idx].ravel()[flat_idx]
    return abs(mutated - numeric) / max(abs(mutated), abs(numeric), 1e-8)


def gradient_suite(
    n_networks: int = 100, seed: int = 0, h: float = 1e-5
) -> tuple[float, float]:
    """Audit backward() on random small networks, alternating one- and
    two-headed shapes. Inputs are rejection-sampled so every trunk
    pre-activation sits away from the leaky-ReLU kink.

    Returns (max relative error across the suite, relative error of the
    sign-flip mutant from the first network — expected to be large).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    mutant = 0.0
    for i in range(n_networks):
        two_headed = i % 2 == 1
        input_dim = int(rng.integers(2, 7))
        hidden = (int(rng.integers(3, 11)), int(rng.integers(3, 11)))
        if two_headed:
            spec = NetworkSpec(
                input_dim,
                (int(rng.integers(1, 6)), int(rng.integers(1, 6))),
                hidden,
                head_extra_input_dims=(0, int(rng.integers(1, 7))),
            )
        else:
            spec = NetworkSpec(input_dim, (int(rng.integers(1, 6)),), hidden)
        net = init_network(spec, rng)
        batch = int(rng.integers(1, 4))
        x = extras = None
        for _ in range(200):
            x = rng.standard_normal((batch, input_dim))
            extras = None
            if two_headed:
                extras = [None, rng.standard_normal((batch, spec.head_extra_input_dims[1]))]
            _, cache = forward(net, x, extras)
            if min_kink_distance(cache) > 1e-3:
                break
        targets = [rng.standard_normal((batch, d)) for d in spec.output_dims]
        closure = squared_error_loss_closure(x, targets, extras)
        worst = max(worst, grad_check(net, closure, h))
        if i == 0:
            mutant = mutation_control(net, closure, h)
    return worst, mutant


def squared_error_loss_closure(
    trunk_input: np.ndarray,
    targets: list[np.ndarray],
    head_extra_inputs: list[np.ndarray | None] | None = None,
):
    """(loss, grads) closure for sum over heads of ||output - target||^2."""

    def loss_and_grad(net: Network):
        outputs, cache = forward(net, trunk_input, head_extra_inputs)
        loss = 0.0
        out_grads = []
        for out, target in zip(outputs, targets):
            diff = out - target
            loss += float(np.sum(diff * diff))
            out_grads.append(2.0 * diff)
        return loss, backward(net, cache, out_grads)

    return loss_and_grad


def network_to_arrays(net: Network, prefix: str = "") -> dict[str, np.ndarray]:
    """Flatten a network into named arrays for checkpointing."""
    spec = net.spec
    d = {
        f"{prefix}input_dim": np.array(spec.input_dim),
        f"{prefix}output_dims": np.array(spec.output_dims),
        f"{prefix}hidden_dims": np.array(spec.hidden_dims),
        f"{prefix}leaky_slope": np.array(spec.leaky_slope),
        f"{prefix}head_extra_input_dims": np.array(spec.head_extra_input_dims),
    }
    for i, (w, b) in enumerate(zip(net.trunk_w, net.trunk_b)):
        d[f"{prefix}trunk_w{i}"] = w
        d[f"{prefix}trunk_b{i}"] = b
    for i, (w, b) in enumerate(zip(net.head_w, net.head_b)):
        d[f"{prefix}head_w{i}"] = w
        d[f"{prefix}head_b{i}"] = b
    return d


def network_from_arrays(arrays: dict[str, np.ndarray], prefix: str = "") -> Network:
    spec = NetworkSpec(
        input_dim=int(arrays[f"{prefix}input_dim"]),
        output_dims=tuple(int(v) for v in arrays[f"{prefix}output_dims"]),
        hidden_dims=tuple(int(v) for v in arrays[f"{prefix}hidden_dims"]),
        leaky_slope=float(arrays[f"{prefix}leaky_slope"]),
        head_extra_input_dims=tuple(
            int(v) for v in arrays[f"{prefix}head_extra_input_dims"]
        ),
    )
    trunk_w = [
        np.array(arrays[f"{prefix}trunk_w{i}"]) for i in range(len(spec.hidden_dims))
    ]
    trunk_b = [
        np.array(arrays[f"{prefix}trunk_b{i}"]) for i in range(len(spec.hidden_dims))
    ]
    head_w = [np.array(arrays[f"{prefix}head_w{i}"]) for i in range(spec.n_heads)]
    head_b = [np.array(arrays[f"{prefix}head_b{i}"]) for i in range(spec.n_heads)]
    return Network(spec, trunk_w, trunk_b, head_w, head_b)


def save_network(path, net: Network) -> None:
    """Binary checkpoint (npz) with a version header; round-trip is bit-exact."""
    np.savez(path, format_version=np.array(CHECKPOINT_VERSION), **network_to_arrays(net))


def load_network(path) -> Network:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        return network_from_arrays({k: data[k] for k in data.files})
