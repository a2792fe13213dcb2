"""Recurrent layers, the optimizer, and numeric utilities.

The GRU here follows the single-bias convention so a cell with input size
i and hidden size h has exactly 3*(i*h + h*h + h) parameters:

    z  = sigmoid(x Wz + bz + h Uz)
    r  = sigmoid(x Wr + br + h Ur)
    n  = tanh(   x Wn + bn + r * (h Un))
    h' = z * h + (1 - z) * n

With all-zero weights and a zero state the new state is zero. Step
functions run on Tensors (training, taped) or ndarrays (inference)
through the dispatching ops in autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, backward, matmul, mul, narrow, sigmoid, tanh

INIT_RANGE = 0.08


def init_uniform(rng: np.random.RandomState, shape, dtype) -> np.ndarray:
    return rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape).astype(dtype)


class GruCell:
    def __init__(self, name: str, input_dim: int, hidden_dim: int,
                 rng: np.random.RandomState, dtype=np.float32):
        self.name = name
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w = Tensor(init_uniform(rng, (input_dim, 3 * hidden_dim), dtype))
        self.u = Tensor(init_uniform(rng, (hidden_dim, 3 * hidden_dim), dtype))
        self.b = Tensor(init_uniform(rng, (3 * hidden_dim,), dtype))

    def named_params(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.name}.w", self.w), (f"{self.name}.u", self.u),
                (f"{self.name}.b", self.b)]

    def param_count(self) -> int:
        return 3 * (self.input_dim * self.hidden_dim
                    + self.hidden_dim * self.hidden_dim + self.hidden_dim)

    def step(self, x, h, *, raw: bool = False):
        """One update. Pass raw=True with ndarray x/h for tape-free math."""
        w, u, b = self.w, self.u, self.b
        if raw:
            w, u, b = self.w.data, self.u.data, self.b.data
        hd = self.hidden_dim
        gx = matmul(x, w) + b
        gh = matmul(h, u)
        z = sigmoid(narrow(gx, -1, 0, hd) + narrow(gh, -1, 0, hd))
        r = sigmoid(narrow(gx, -1, hd, hd) + narrow(gh, -1, hd, hd))
        n = tanh(narrow(gx, -1, 2 * hd, hd)
                 + mul(r, narrow(gh, -1, 2 * hd, hd)))
        return z * h + (1.0 - z) * n


class StackedGru:
    """Layered GRU; layer k feeds layer k+1, the top state is the output."""

    def __init__(self, name: str, input_dim: int, hidden_dim: int,
                 num_layers: int, rng: np.random.RandomState, dtype=np.float32):
        if num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        self.hidden_dim = hidden_dim
        self.cells = []
        for k in range(num_layers):
            in_dim = input_dim if k == 0 else hidden_dim
            self.cells.append(GruCell(f"{name}.l{k}", in_dim, hidden_dim,
                                      rng, dtype))

    @property
    def num_layers(self) -> int:
        return len(self.cells)

    def zero_state(self, batch: int, dtype) -> list[np.ndarray]:
        return [np.zeros((batch, self.hidden_dim), dtype=dtype)
                for _ in self.cells]

    def step(self, x, states: list, *, raw: bool = False) -> list:
        new_states = []
        inp = x
        for cell, h in zip(self.cells, states):
            h_new = cell.step(inp, h, raw=raw)
            new_states.append(h_new)
            inp = h_new
        return new_states

    def run_sequence_np(self, X: np.ndarray, reverse: bool = False) -> np.ndarray:
        """Tape-free pass over a (T, input_dim) sequence from a zero state.

        The input-side products for all positions are batched into one
        matmul per layer; the math per step is identical to step().
        Returns the top layer's state at every position, index-aligned
        with X regardless of direction.
        """
        steps = X.shape[0]
        seq = X
        for cell in self.cells:
            hd = cell.hidden_dim
            gx = seq @ cell.w.data + cell.b.data  # (T, 3h)
            u = cell.u.data
            h = np.zeros(hd, dtype=X.dtype)
            out = np.empty((steps, hd), dtype=X.dtype)
            order = range(steps - 1, -1, -1) if reverse else range(steps)
            for t in order:
                gh = h @ u
                with np.errstate(over="ignore"):
                    z = 1.0 / (1.0 + np.exp(-(gx[t, :hd] + gh[:hd])))
                    r = 1.0 / (1.0 + np.exp(-(gx[t, hd:2 * hd] + gh[hd:2 * hd])))
                n = np.tanh(gx[t, 2 * hd:] + r * gh[2 * hd:])
                h = z * h + (1.0 - z) * n
                out[t] = h
            seq = out
        return seq

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = []
        for cell in self.cells:
            out.extend(cell.named_params())
        return out

    def param_count(self) -> int:
        return sum(c.param_count() for c in self.cells)


class Linear:
    def __init__(self, name: str, input_dim: int, output_dim: int,
                 rng: np.random.RandomState, dtype=np.float32):
        self.name = name
        self.w = Tensor(init_uniform(rng, (input_dim, output_dim), dtype))
        self.b = Tensor(init_uniform(rng, (output_dim,), dtype))

    def __call__(self, x, *, raw: bool = False):
        if raw:
            return matmul(x, self.w.data) + self.b.data
        return matmul(x, self.w) + self.b

    def named_params(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]

    def param_count(self) -> int:
        return self.w.data.size + self.b.data.size


def global_grad_norm(params: list[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            g = p.grad.astype(np.float64, copy=False)
            total += float((g * g).sum())
    return float(np.sqrt(total))


def clip_global_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most max_norm."""
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, clip_norm: float = 5.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        """Apply one update from the accumulated grads; returns the
        pre-clip global gradient norm."""
        norm = clip_global_norm(self.params, self.clip_norm)
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / b1c
            vhat = v / b2c
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(
                p.data.dtype, copy=False)
        return norm


def grad_check(loss_fn, named_params: list[tuple[str, Tensor]],
               eps: float = 1e-4, max_params: int = 10_000) -> float:
    """Compare tape gradients to central finite differences.

    loss_fn rebuilds the loss from the current parameter values; it must
    be deterministic. Every component of every listed tensor is perturbed,
    so the listed fragment is capped at max_params (sweep a large model
    one sub-network at a time). Returns the max relative error
    |ad - fd| / max(|ad|, |fd|, 1e-8).
    """
    total = sum(p.data.size for _, p in named_params)
    if total > max_params:
        raise ValueError(
            f"fragment has {total} params; sweep is capped at {max_params}")
    for _, p in named_params:
        p.grad = None
    loss = loss_fn()
    if not np.isfinite(float(loss.data)):
        raise ValueError("non-finite loss")
    backward(loss)
    analytic = {}
    for name, p in named_params:
        analytic[name] = (np.zeros_like(p.data) if p.grad is None
                          else p.grad.copy())
    worst = 0.0
    for name, p in named_params:
        flat = p.data.reshape(-1)
        ad = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            rel = abs(ad[i] - fd) / max(abs(ad[i]), abs(fd), 1e-8)
            worst = max(worst, rel)
    return worst


@dataclass(frozen=True, slots=True)
class QuantTensor:
    """Per-tensor symmetric int8 quantization: value ~= q * scale."""

    q: np.ndarray
    scale: float


def quantize(arr: np.ndarray) -> QuantTensor:
    peak = float(np.abs(arr).max()) if arr.size else 0.0
    scale = peak / 127.0 if peak > 0 else 1.0
    q = np.clip(np.round(arr / scale), -127, 127).astype(np.int8)
    return QuantTensor(q, scale)


def dequantize(qt: QuantTensor, dtype=np.float32) -> np.ndarray:
    dt = np.dtype(dtype)
    return (qt.q.astype(dt) * dt.type(qt.scale)).astype(dt, copy=False)
