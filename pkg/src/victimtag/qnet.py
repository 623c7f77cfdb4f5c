"""Factorized Q-network in plain numpy.

A shared ReLU trunk feeds one linear head per agent; the joint value is the
sum of the heads' chosen entries. Gradients are written out by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    n_agents: int
    n_actions: int
    hidden: tuple[int, ...] = (128, 64)

    @property
    def trunk_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden]


def init_params(spec: NetSpec, rng: np.random.Generator, dtype=np.float64) -> Params:
    """He-normal weights, zero biases."""
    params: Params = {}
    dims = spec.trunk_dims
    for li, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"W{li}"] = (rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        params[f"b{li}"] = np.zeros(fan_out, dtype)
    last = dims[-1]
    params["Wh"] = (rng.standard_normal((spec.n_agents, last, spec.n_actions)) * np.sqrt(2.0 / last)).astype(dtype)
    params["bh"] = np.zeros((spec.n_agents, spec.n_actions), dtype)
    return params


def n_trunk_layers(params: Params) -> int:
    return sum(1 for k in params if k.startswith("W") and k != "Wh")


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


def forward(params: Params, states: np.ndarray, return_cache: bool = False):
    """Q values with shape (batch, n_agents, n_actions); a 1-D state gives (n_agents, n_actions)."""
    x = np.asarray(states, dtype=params["Wh"].dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params["W0"].shape[0]:
        raise ValueError(f"state dimension {x.shape[1]} does not match network input {params['W0'].shape[0]}")
    acts = [x]
    h = x
    for li in range(n_trunk_layers(params)):
        h = np.maximum(h @ params[f"W{li}"] + params[f"b{li}"], 0.0)
        acts.append(h)
    q = np.einsum("bh,nha->bna", h, params["Wh"]) + params["bh"]
    if single:
        q = q[0]
    return (q, acts) if return_cache else q


def backward(params: Params, acts: list[np.ndarray], dq: np.ndarray) -> Params:
    """Gradients of a scalar loss given dL/dQ with shape (batch, n_agents, n_actions)."""
    grads: Params = {}
    h = acts[-1]
    grads["Wh"] = np.einsum("bh,bna->nha", h, dq)
    grads["bh"] = dq.sum(axis=0)
    dh = np.einsum("bna,nha->bh", dq, params["Wh"])
    for li in reversed(range(n_trunk_layers(params))):
        out = acts[li + 1]
        dz = dh * (out > 0)
        grads[f"W{li}"] = acts[li].T @ dz
        grads[f"b{li}"] = dz.sum(axis=0)
        if li:
            dh = dz @ params[f"W{li}"].T
    return grads


def q_joint(q: np.ndarray, actions: Sequence[int]) -> float:
    """Sum of each agent's Q entry for its action; q has shape (n_agents, n_actions)."""
    q = np.asarray(q)
    return float(q[np.arange(len(q)), np.asarray(actions)].sum())


def masked(q: np.ndarray, masks: np.ndarray) -> np.ndarray:
    return np.where(masks, q, -np.inf)


def greedy_joint(q: np.ndarray, masks: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-agent masked argmax; under additive factorization this is the joint maximum."""
    masks = np.asarray(masks, bool)
    if not masks.any(axis=-1).all():
        raise ValueError("every agent needs at least one legal action")
    qm = masked(np.asarray(q), masks)
    a = qm.argmax(axis=-1)
    return a, float(qm.max(axis=-1).sum())


@dataclass
class Batch:
    states: np.ndarray  # (B, D)
    actions: np.ndarray  # (B, n)
    rewards: np.ndarray  # (B,)
    next_states: np.ndarray  # (B, D)
    next_masks: np.ndarray  # (B, n, A)
    terminal: np.ndarray  # (B,) bool


def td_targets(batch: Batch, target: Params, gamma: float) -> np.ndarray:
    q_next = forward(target, batch.next_states)
    best = masked(q_next, batch.next_masks).max(axis=-1).sum(axis=-1)
    return batch.rewards + gamma * np.where(batch.terminal, 0.0, best)


def td_loss(batch: Batch, params: Params, target: Params, gamma: float) -> tuple[float, Params]:
    """Mean squared TD error of the summed Q against bootstrapped targets, with gradients."""
    y = td_targets(batch, target, gamma)
    q, acts = forward(params, batch.states, return_cache=True)
    bsz, n = batch.actions.shape
    rows = np.arange(bsz)[:, None]
    agents = np.arange(n)[None, :]
    q_sa = q[rows, agents, batch.actions].sum(axis=1)
    err = q_sa - y
    loss = float(np.mean(err ** 2))
    dq = np.zeros_like(q)
    dq[rows, agents, batch.actions] = (2.0 / bsz) * err[:, None]
    return loss, backward(params, acts, dq)


def global_norm(grads: Params) -> float:
    return float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))


def clip_gradients(grads: Params, max_norm: float = 1.0) -> Params:
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise FloatingPointError("non-finite gradient")
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    def step(self, params: Params, grads: Params) -> Params:
        """In-place bias-corrected update; returns params for chaining."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def adam_step(params: Params, grads: Params, opt: Adam) -> Params:
    return opt.step(params, grads)


def numerical_gradient(params: Params, loss_fn: Callable[[Params], float], h: float = 1e-5) -> Params:
    """Central differences of ``loss_fn`` with respect to every parameter entry."""
    out: Params = {}
    for k, p in params.items():
        g = np.zeros_like(p, dtype=np.float64)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = loss_fn(params)
            p[idx] = orig - h
            down = loss_fn(params)
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out[k] = g
    return out


def gradient_check(
    params: Params,
    loss_fn: Callable[[Params], float],
    grads: Params,
    h: float = 1e-5,
    abs_floor: float = 1e-8,
    per: str = "element",
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``per="element"`` compares entries one by one; entries where both values are
    below ``abs_floor`` count as agreeing. ``per="tensor"`` compares each
    parameter tensor as a whole, ``|a - n| / max(|a|, |n|)`` in the L2 norm, which
    is insensitive to finite-difference roundoff on near-zero entries.
    """
    if per not in ("element", "tensor"):
        raise ValueError("per must be 'element' or 'tensor'")
    num = numerical_gradient(params, loss_fn, h)
    worst = 0.0
    for k, n in num.items():
        a = np.asarray(grads[k], np.float64)
        if per == "tensor":
            scale = max(np.linalg.norm(a), np.linalg.norm(n))
            if scale >= abs_floor:
                worst = max(worst, float(np.linalg.norm(a - n) / scale))
            continue
        scale = np.maximum(np.abs(a), np.abs(n))
        live = scale >= abs_floor
        if live.any():
            worst = max(worst, float((np.abs(a - n)[live] / scale[live]).max()))
    return worst


def reference_forward(params: Params, state: Sequence[float]) -> list[list[float]]:
    """Loop-based evaluator used to cross-check :func:`forward`."""
    h = [float(v) for v in state]
    for li in range(n_trunk_layers(params)):
        W, b = params[f"W{li}"], params[f"b{li}"]
        h = [max(0.0, sum(h[r] * float(W[r, c]) for r in range(len(h))) + float(b[c])) for c in range(W.shape[1])]
    Wh, bh = params["Wh"], params["bh"]
    return [
        [sum(h[r] * float(Wh[i, r, a]) for r in range(len(h))) + float(bh[i, a]) for a in range(Wh.shape[2])]
        for i in range(Wh.shape[0])
    ]


def params_equal(a: Params, b: Params) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def param_count(params: Params) -> int:
    return int(sum(v.size for v in params.values()))


def spec_of(params: Params) -> NetSpec:
    layers = n_trunk_layers(params)
    hidden = tuple(params[f"W{li}"].shape[1] for li in range(layers))
    n, _, a = params["Wh"].shape
    return NetSpec(params["W0"].shape[0], n, a, hidden)


def as_dtype(params: Params, dtype) -> Params:
    return {k: v.astype(dtype) for k, v in params.items()}
