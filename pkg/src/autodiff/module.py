"""
Parameters, modules and the neural building blocks used by the policy.
"""
import numpy as np

from src.autodiff.tensor import Tensor, einsum, matmul, sigmoid, softmax, sqrt, tanh
from src.errors import ConfigurationError, ShapeError

FORGET_GATE_BIAS = 1.0


class Parameter(Tensor):
    """Trainable leaf tensor with a model-unique dotted name."""

    def __init__(self, name: str, value):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Registry of named parameters and child modules, in registration order."""

    def __init__(self):
        self._parameters: dict[str, Parameter] = {}
        self._modules: dict[str, "Module"] = {}

    def add_parameter(self, name: str, value) -> Parameter:
        if name in self._parameters or name in self._modules:
            raise ConfigurationError(f"duplicate member name {name!r}")
        param = Parameter(name, value)
        self._parameters[name] = param
        return param

    def add_module(self, name: str, module: "Module") -> "Module":
        if name in self._parameters or name in self._modules:
            raise ConfigurationError(f"duplicate member name {name!r}")
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        named = []
        for name, param in self._parameters.items():
            full = f"{prefix}{name}"
            param.name = full
            named.append((full, param))
        for name, module in self._modules.items():
            named.extend(module.named_parameters(prefix=f"{prefix}{name}."))
        return named

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        named = dict(self.named_parameters())
        missing = set(named) - set(state)
        unexpected = set(state) - set(named)
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, param in named.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ShapeError(f"{name}: expected shape {param.shape}, got {value.shape}")
            param.data = value.copy()


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.weight = self.add_parameter("weight", uniform_init(rng, (n_in, n_out), n_in))
        self.bias = self.add_parameter("bias", np.zeros(n_out))

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gain = self.add_parameter("gain", np.ones(dim))
        self.shift = self.add_parameter("shift", np.zeros(dim))

    def __call__(self, x):
        return layer_norm(x, self.gain, self.shift, self.eps)


class MultiHeadSelfAttention(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if heads < 1 or d_model % heads != 0:
            raise ConfigurationError(f"d_model={d_model} is not divisible by heads={heads}")
        self.heads = heads
        self.query = self.add_module("query", Linear(d_model, d_model, rng))
        self.key = self.add_module("key", Linear(d_model, d_model, rng))
        self.value = self.add_module("value", Linear(d_model, d_model, rng))
        self.output = self.add_module("output", Linear(d_model, d_model, rng))

    def __call__(self, tokens, residual=None):
        return multi_head_self_attention(tokens, self, self.heads, residual=residual)


class LSTMCell(Module):
    """Gate layout along the last axis: input, forget, cell candidate, output."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        super().__init__()
        self.n_hidden = n_hidden
        self.input_weight = self.add_parameter("input_weight", uniform_init(rng, (n_in, 4 * n_hidden), n_in))
        self.hidden_weight = self.add_parameter(
            "hidden_weight", uniform_init(rng, (n_hidden, 4 * n_hidden), n_hidden)
        )
        bias = np.zeros(4 * n_hidden)
        bias[n_hidden:2 * n_hidden] = FORGET_GATE_BIAS
        self.bias = self.add_parameter("bias", bias)

    def __call__(self, z, h_prev, c_prev):
        return lstm_cell(z, h_prev, c_prev, self)


class MLP(Module):
    """tanh hidden layers followed by a linear output layer."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, depth: int, rng: np.random.Generator):
        super().__init__()
        self.layers = []
        width = n_in
        for k in range(depth):
            self.layers.append(self.add_module(f"hidden{k}", Linear(width, n_hidden, rng)))
            width = n_hidden
        self.head = self.add_module("out", Linear(width, n_out, rng))

    def __call__(self, x):
        for layer in self.layers:
            x = tanh(layer(x))
        return self.head(x)


def linear(x, weight: Tensor, bias: Tensor) -> Tensor:
    """xW + b over the last axis of x."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    if x.ndim == 1:
        return (matmul(x.reshape(1, -1), weight) + bias).reshape(weight.shape[1])
    return matmul(x, weight) + bias


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    centered = x - x.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / sqrt(variance + eps) * gain + shift


def multi_head_self_attention(tokens: Tensor, params, heads: int, residual=None) -> Tensor:
    """Scaled dot-product self-attention over axis 1 of (batch, tokens, d_model).

    The output projection is added to `residual` (the input tokens by default).
    """
    if tokens.ndim != 3:
        raise ShapeError(f"attention expects (batch, tokens, d_model), got {tokens.shape}")
    b, n_tokens, d_model = tokens.shape
    if heads < 1 or d_model % heads != 0:
        raise ConfigurationError(f"d_model={d_model} is not divisible by heads={heads}")
    d_head = d_model // heads
    q = params.query(tokens).reshape(b, n_tokens, heads, d_head)
    k = params.key(tokens).reshape(b, n_tokens, heads, d_head)
    v = params.value(tokens).reshape(b, n_tokens, heads, d_head)
    scores = einsum("blhd,bmhd->bhlm", q, k) * (1.0 / np.sqrt(d_head))
    weights = softmax(scores, axis=-1)
    mixed = einsum("bhlm,bmhd->blhd", weights, v).reshape(b, n_tokens, d_model)
    return params.output(mixed) + (tokens if residual is None else residual)


def lstm_cell(z: Tensor, h_prev: Tensor, c_prev: Tensor, params) -> tuple[Tensor, Tensor]:
    n = params.n_hidden
    batch_ok = z.ndim == 2 and h_prev.ndim == 2 and z.shape[0] == h_prev.shape[0]
    if not batch_ok or h_prev.shape[-1] != n or c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm_cell: z {z.shape}, h {h_prev.shape}, c {c_prev.shape}, hidden {n}")
    gates = linear(z, params.input_weight, params.bias) + matmul(h_prev, params.hidden_weight)
    i = sigmoid(gates[:, 0:n])
    f = sigmoid(gates[:, n:2 * n])
    g = tanh(gates[:, 2 * n:3 * n])
    o = sigmoid(gates[:, 3 * n:4 * n])
    c = f * c_prev + i * g
    h = o * tanh(c)
    return h, c


def attention_pool(tokens: Tensor, query: Tensor) -> Tensor:
    """Softmax-weighted sum of tokens against one learned query, (b, L, d) -> (b, d)."""
    d = tokens.shape[-1]
    scores = einsum("bld,d->bl", tokens, query) * (1.0 / np.sqrt(d))
    weights = softmax(scores, axis=-1)
    return einsum("bl,bld->bd", weights, tokens)
