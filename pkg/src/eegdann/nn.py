"""Layers shared by the teacher, the student and the adaptation heads."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import ShapeError, Tensor


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Minimal container: parameters are ``Tensor`` attributes with ``requires_grad``.

    Child modules may be plain attributes or lists of modules. Names of
    non-trainable arrays that belong in checkpoints (running statistics) go in
    ``_buffers``.
    """

    _buffers: tuple = ()

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    yield f"{name}.{i}", child

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch; missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {state[name].shape} vs parameter {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        for name, b in buffers.items():
            b[...] = state[name]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def param_count(module: Optional[Module]) -> int:
    if module is None:
        return 0
    return int(sum(p.size for p in module.parameters()))


def param_breakdown(module: Module) -> dict[str, int]:
    """Scalar parameter count per direct child (plus ``"<self>"`` for own tensors)."""
    out: dict[str, int] = {}
    own = sum(v.size for v in vars(module).values() if isinstance(v, Tensor) and v.requires_grad)
    if own:
        out["<self>"] = int(own)
    for name, value in vars(module).items():
        if isinstance(value, Module):
            out[name] = param_count(value)
        elif isinstance(value, list) and value and isinstance(value[0], Module):
            out[name] = sum(param_count(m) for m in value)
    return out


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = parameter(xavier_uniform(rng, in_dim, out_dim))
        self.bias = parameter(np.zeros(out_dim)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class BatchNorm1d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, dim: int, momentum: float = T.BN_MOMENTUM, eps: float = T.NORM_EPS):
        super().__init__()
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise ValueError(f"model dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.last_attention: Optional[np.ndarray] = None

    def forward(self, x: Tensor) -> Tensor:
        *lead, s, d = x.shape
        n = int(np.prod(lead)) if lead else 1
        h, dh = self.heads, d // self.heads
        qkv = self.qkv(x).reshape(n, s, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = T.softmax((q @ T.swap_last(k)) * (1.0 / np.sqrt(dh)), axis=-1)
        self.last_attention = attn.data
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(tuple(lead) + (s, d))
        return self.proj(out)


class TransformerBlock(Module):
    """Pre-norm encoder block: ``z + MSA(LN(z))`` then ``z + MLP(LN(z))``."""

    def __init__(self, dim: int, heads: int, mlp_dim: int, rng: np.random.Generator,
                 dropout: float = 0.0):
        super().__init__()
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_dim, rng)
        self.fc2 = Linear(mlp_dim, dim, rng)
        self.dropout = dropout
        self._rng = rng

    def forward(self, x: Tensor) -> Tensor:
        z = x + T.dropout(self.attn(self.ln1(x)), self.dropout, self._rng, self.training)
        hidden = T.gelu(self.fc1(self.ln2(z)))
        return z + T.dropout(self.fc2(hidden), self.dropout, self._rng, self.training)


class LSTMCell(Module):
    """Gate order (input, forget, cell, output); forget bias starts at 1."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.hidden = hidden
        self.w_ih = parameter(xavier_uniform(rng, in_dim, 4 * hidden))
        self.w_hh = parameter(xavier_uniform(rng, hidden, 4 * hidden))
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        self.bias = parameter(bias)

    def forward(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        H = self.hidden
        gates = x @ self.w_ih + h @ self.w_hh + self.bias
        i = T.sigmoid(gates[..., :H])
        f = T.sigmoid(gates[..., H:2 * H])
        g = T.tanh(gates[..., 2 * H:3 * H])
        o = T.sigmoid(gates[..., 3 * H:])
        c = f * c + i * g
        return o * T.tanh(c), c


def run_lstm(cell: LSTMCell, steps: list[Tensor]) -> Tensor:
    lead = steps[0].shape[:-1]
    h = Tensor(np.zeros(lead + (cell.hidden,)))
    c = Tensor(np.zeros(lead + (cell.hidden,)))
    for x in steps:
        h, c = cell(x, h, c)
    return h


class BiLSTM(Module):
    """Summarizes a ``(..., S, I)`` sequence as ``[h_forward_final, h_backward_final]``."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.hidden = hidden
        self.fwd = LSTMCell(in_dim, hidden, rng)
        self.bwd = LSTMCell(in_dim, hidden, rng)

    def forward(self, seq: Tensor) -> Tensor:
        if seq.ndim < 2 or seq.shape[-2] < 1:
            raise ValueError(f"BiLSTM needs a non-empty (..., S, I) sequence, got shape {seq.shape}")
        steps = [seq[..., t, :] for t in range(seq.shape[-2])]
        return T.concat([run_lstm(self.fwd, steps), run_lstm(self.bwd, steps[::-1])], axis=-1)
