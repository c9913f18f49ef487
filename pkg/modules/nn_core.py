"""
神经网络核心模块
基于 numpy 的反向自动微分：张量运算、层定义、Gumbel softmax、损失函数、优化器与梯度校验
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .errors import ContractViolationError, NonFiniteError

logger = logging.getLogger(__name__)

MODES = ('train', 'eval', 'check')


# ========== 张量 ==========

class Tensor:
    """带计算图的稠密张量"""

    def __init__(self, data, requires_grad: bool = False, op: str = 'leaf'):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> 'Tensor':
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> 'Tensor':
        return Tensor(self.data.copy())

    def _accumulate(self, grad: np.ndarray):
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.data.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + grad

    def backward(self, grad: Optional[np.ndarray] = None):
        """从当前节点反向传播（默认当前节点为标量）"""
        if grad is None:
            if self.data.size != 1:
                raise ContractViolationError(f"非标量张量需要显式提供梯度: {self.shape}")
            grad = np.ones_like(self.data)

        # 迭代式拓扑排序
        order, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # 运算符
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    grad = np.asarray(grad, dtype=np.float64)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"运算 {op} 产生非有限值", diagnostic=f"shape={np.shape(data)}")
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), op=op)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ========== 基础运算 ==========

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)
    return _make(a.data + b.data, (a, b), backward, 'add')


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(g)
        b._accumulate(-g)
    return _make(a.data - b.data, (a, b), backward, 'sub')


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)
    return _make(a.data * b.data, (a, b), backward, 'mul')


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(g / b.data)
        b._accumulate(-g * a.data / (b.data ** 2))
    return _make(a.data / b.data, (a, b), backward, 'div')


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise ContractViolationError(f"矩阵乘法形状不匹配: {a.shape} @ {b.shape}")

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)
    return _make(a.data @ b.data, (a, b), backward, 'matmul')


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g.T)
    return _make(a.data.T, (a,), backward, 'transpose')


def sum_(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape))
    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, 'sum')


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / max(count, 1))


def power(a: Tensor, exponent: float) -> Tensor:
    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1))
    return _make(a.data ** exponent, (a,), backward, 'pow')


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / out_data)
    return _make(out_data, (a,), backward, 'sqrt')


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(np.float64)

    def backward(g):
        a._accumulate(g * mask)
    return _make(a.data * mask, (a,), backward, 'relu')


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = np.where(a.data > 0, 1.0, slope)

    def backward(g):
        a._accumulate(g * mask)
    return _make(a.data * mask, (a,), backward, 'leaky_relu')


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out_data ** 2))
    return _make(out_data, (a,), backward, 'tanh')


def sigmoid(a: Tensor) -> Tensor:
    out_data = expit(a.data)

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))
    return _make(out_data, (a,), backward, 'sigmoid')


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            t._accumulate(np.take(g, np.arange(lo, hi), axis=axis))
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, 'concat')


def columns(a: Tensor, start: int, end: int) -> Tensor:
    """取列切片 a[:, start:end]"""
    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:end] = g
        a._accumulate(full)
    return _make(a.data[:, start:end], (a,), backward, 'columns')


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._accumulate(full)
    return _make(a.data[index], (a,), backward, 'take_rows')


# ========== 损失函数 ==========

def log_softmax(logits: Tensor) -> Tensor:
    out_data = logits.data - logsumexp(logits.data, axis=1, keepdims=True)

    def backward(g):
        probs = np.exp(out_data)
        logits._accumulate(g - probs * g.sum(axis=1, keepdims=True))
    return _make(out_data, (logits,), backward, 'log_softmax')


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """
    多分类交叉熵（行平均）

    Args:
        logits: rows × K 的未归一化得分
        target: 目标类别下标，或 rows × K 的 one-hot 矩阵
    """
    target = np.asarray(target)
    if target.ndim == 2:
        target = target.argmax(axis=1)
    onehot = np.zeros_like(logits.data)
    onehot[np.arange(onehot.shape[0]), target.astype(np.int64)] = 1.0
    picked = sum_(mul(log_softmax(logits), onehot), axis=1)
    return mul(mean(picked), -1.0)


def bce_with_logits(logits: Tensor, y: np.ndarray, reduction: str = 'mean') -> Tensor:
    """二分类交叉熵；reduction='none' 时返回逐行损失"""
    z = logits.data.reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    per_row = np.logaddexp(0.0, z) - y * z
    shape = logits.data.shape

    if reduction == 'none':
        def backward(g):
            logits._accumulate((g.reshape(-1) * (expit(z) - y)).reshape(shape))
        return _make(per_row, (logits,), backward, 'bce')

    n = max(z.shape[0], 1)

    def backward(g):
        logits._accumulate((float(g) * (expit(z) - y) / n).reshape(shape))
    return _make(np.array(per_row.mean() if z.shape[0] else 0.0), (logits,), backward, 'bce')


# ========== Gumbel softmax ==========

def sample_gumbel(shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def gumbel_softmax(logits: Tensor, temperature: float, rng: Optional[np.random.Generator] = None,
                   hard: bool = True, noise: Optional[np.ndarray] = None) -> Tensor:
    """
    Gumbel softmax（直通估计）

    前向输出硬 one-hot 样本，反向使用软样本的梯度。

    Args:
        logits: rows × K 得分
        temperature: 温度 τ > 0
        rng: 随机数发生器
        hard: False 时前向直接输出软样本
        noise: 固定的 Gumbel 噪声（梯度校验用）

    Returns:
        Tensor: 与 logits 同形状
    """
    if temperature <= 0:
        raise ContractViolationError(f"温度必须为正: {temperature}")
    if noise is None:
        noise = sample_gumbel(logits.data.shape, rng if rng is not None else np.random.default_rng())
    soft = softmax((logits.data + noise) / temperature, axis=1)
    if hard:
        out_data = np.zeros_like(soft)
        out_data[np.arange(soft.shape[0]), soft.argmax(axis=1)] = 1.0
    else:
        out_data = soft

    def backward(g):
        inner = (g * soft).sum(axis=1, keepdims=True)
        logits._accumulate(soft * (g - inner) / temperature)
    return _make(out_data, (logits,), backward, 'gumbel')


# ========== 层 ==========

@dataclass
class ForwardContext:
    """一次前向计算的模式与随机数，以及层写出的附加输出"""

    mode: str = 'train'
    rng: Optional[np.random.Generator] = None
    extras: Dict[str, Tensor] = field(default_factory=dict)
    tape: Optional[List] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractViolationError(f"未知的前向模式: {self.mode}")
        if self.rng is None:
            self.rng = np.random.default_rng(0)


class Layer:
    def __init__(self):
        self.params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, np.ndarray] = {}

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        raise NotImplementedError

    def vjp(self, delta: Tensor, cache) -> Tensor:
        raise ContractViolationError(f"{type(self).__name__} 不支持输入梯度图")

    def _record(self, ctx: ForwardContext, cache):
        if ctx.tape is not None:
            ctx.tape.append((self, cache))


class Linear(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, init: str = 'uniform'):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        if init == 'identity':
            weight = np.eye(in_dim, out_dim)
            bias = np.zeros(out_dim)
        elif init == 'zeros':
            weight = np.zeros((in_dim, out_dim))
            bias = np.zeros(out_dim)
        else:
            bound = 1.0 / np.sqrt(max(in_dim, 1))
            weight = rng.uniform(-bound, bound, size=(in_dim, out_dim))
            bias = rng.uniform(-bound, bound, size=out_dim)
        self.params = {'weight': Tensor(weight, requires_grad=True),
                       'bias': Tensor(bias, requires_grad=True)}

    def forward(self, x, ctx):
        if x.shape[1] != self.in_dim:
            raise ContractViolationError(f"Linear 输入维度应为 {self.in_dim}，实际 {x.shape[1]}")
        self._record(ctx, None)
        return matmul(x, self.params['weight']) + self.params['bias']

    def vjp(self, delta, cache):
        return matmul(delta, transpose(self.params['weight']))


class BatchNorm1d(Layer):
    """批归一化；eval 模式使用滑动统计量，check 模式使用批统计量但不更新"""

    def __init__(self, dim: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.dim, self.momentum, self.eps = dim, momentum, eps
        self.params = {'gamma': Tensor(np.ones(dim), requires_grad=True),
                       'beta': Tensor(np.zeros(dim), requires_grad=True)}
        self.buffers = {'running_mean': np.zeros(dim), 'running_var': np.ones(dim)}

    def forward(self, x, ctx):
        if ctx.mode == 'eval':
            normed = (x - self.buffers['running_mean']) / np.sqrt(self.buffers['running_var'] + self.eps)
        else:
            mu = mean(x, axis=0, keepdims=True)
            centered = x - mu
            var = mean(centered * centered, axis=0, keepdims=True)
            normed = centered / sqrt(var + self.eps)
            if ctx.mode == 'train':
                n = x.shape[0]
                unbiased = var.data.reshape(-1) * n / max(n - 1, 1)
                self.buffers['running_mean'] = (self.momentum * self.buffers['running_mean']
                                                + (1 - self.momentum) * mu.data.reshape(-1))
                self.buffers['running_var'] = (self.momentum * self.buffers['running_var']
                                               + (1 - self.momentum) * unbiased)
        return normed * self.params['gamma'] + self.params['beta']


class ReLU(Layer):
    def forward(self, x, ctx):
        self._record(ctx, (x.data > 0).astype(np.float64))
        return relu(x)

    def vjp(self, delta, cache):
        return delta * cache


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x, ctx):
        self._record(ctx, np.where(x.data > 0, 1.0, self.slope))
        return leaky_relu(x, self.slope)

    def vjp(self, delta, cache):
        return delta * cache


class Dropout(Layer):
    def __init__(self, rate: float = 0.5):
        super().__init__()
        self.rate = rate

    def forward(self, x, ctx):
        if ctx.mode != 'train' or self.rate == 0:
            self._record(ctx, 1.0)
            return x
        mask = (ctx.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._record(ctx, mask)
        return x * mask

    def vjp(self, delta, cache):
        return delta * cache


class Tanh(Layer):
    def forward(self, x, ctx):
        return tanh(x)


class Gumbel(Layer):
    """整段输入作为一个类别分布；eval 模式输出 logits 的 argmax，check 模式输出固定噪声的软样本"""

    def __init__(self, temperature: float = 0.2, sample_in_eval: bool = False):
        super().__init__()
        self.temperature = temperature
        self.sample_in_eval = sample_in_eval

    def forward(self, x, ctx):
        if ctx.mode == 'eval' and not self.sample_in_eval:
            return gumbel_softmax(x, self.temperature, noise=np.zeros(x.shape))
        noise = sample_gumbel(x.shape, ctx.rng)
        return gumbel_softmax(x, self.temperature, noise=noise, hard=ctx.mode != 'check')


class ConcatSkip(Layer):
    """out = inner(x) ⊕ x"""

    def __init__(self, layers: List[Layer]):
        super().__init__()
        self.layers = layers

    def forward(self, x, ctx):
        h = x
        for layer in self.layers:
            h = layer.forward(h, ctx)
        return concat([h, x], axis=1)


class SliceHeads(Layer):
    """
    按片段输出：每个片段取输入中对应的列，经 Linear 后接 tanh（数值）或 gumbel（one-hot）

    各 one-hot 片段的 logits 以片段名写入 ctx.extras
    """

    def __init__(self, spans: List[Tuple[str, str, int, int]], rng: np.random.Generator,
                 temperature: float = 0.2, sample_in_eval: bool = False):
        super().__init__()
        self.spans = [tuple(s) for s in spans]
        self.heads: List[Tuple[Linear, Layer]] = []
        for name, kind, start, end in self.spans:
            width = end - start
            linear = Linear(width, width, rng)
            act = Tanh() if kind == 'value' else Gumbel(temperature, sample_in_eval)
            self.heads.append((linear, act))
            for key, p in linear.params.items():
                self.params[f"{name}.{kind}.{key}"] = p

    def forward(self, x, ctx):
        outs = []
        for (name, kind, start, end), (linear, act) in zip(self.spans, self.heads):
            logits = linear.forward(columns(x, start, end), ctx)
            if kind != 'value':
                ctx.extras[f"{kind}:{name}"] = logits
            outs.append(act.forward(logits, ctx))
        return concat(outs, axis=1)


# ========== 网络描述 ==========

@dataclass
class LayerSpec:
    """层描述：kind ∈ linear/batchnorm1d/relu/leakyrelu/dropout/tanh/gumbel/concat_skip/slice_heads"""

    kind: str
    args: Dict = field(default_factory=dict)
    layers: List['LayerSpec'] = field(default_factory=list)


@dataclass
class NetSpec:
    input_dim: int
    layers: List[LayerSpec]


def _build_layer(spec: LayerSpec, dim: int, rng: np.random.Generator) -> Tuple[Layer, int]:
    kind = spec.kind
    if kind == 'linear':
        out_dim = int(spec.args['out_dim'])
        return Linear(dim, out_dim, rng, init=spec.args.get('init', 'uniform')), out_dim
    if kind == 'batchnorm1d':
        return BatchNorm1d(dim, spec.args.get('momentum', 0.9), spec.args.get('eps', 1e-5)), dim
    if kind == 'relu':
        return ReLU(), dim
    if kind == 'leakyrelu':
        return LeakyReLU(spec.args.get('slope', 0.2)), dim
    if kind == 'dropout':
        return Dropout(spec.args.get('rate', 0.5)), dim
    if kind == 'tanh':
        return Tanh(), dim
    if kind == 'gumbel':
        return Gumbel(spec.args.get('temperature', 0.2), spec.args.get('sample_in_eval', False)), dim
    if kind == 'concat_skip':
        inner, inner_dim = [], dim
        for sub in spec.layers:
            layer, inner_dim = _build_layer(sub, inner_dim, rng)
            inner.append(layer)
        return ConcatSkip(inner), inner_dim + dim
    if kind == 'slice_heads':
        spans = spec.args['spans']
        if spans and max(s[3] for s in spans) > dim:
            raise ContractViolationError(f"输出片段超出输入维度 {dim}")
        return SliceHeads(spans, rng, spec.args.get('temperature', 0.2),
                          spec.args.get('sample_in_eval', False)), sum(s[3] - s[2] for s in spans)
    raise ContractViolationError(f"未知的层类型: {kind}")


def _collect(layer: Layer, prefix: str, params: Dict[str, Tensor], buffers: Dict[str, Layer]):
    for key, p in layer.params.items():
        name = f"{prefix}.{key}"
        if name in params or any(p is q for q in params.values()):
            raise ContractViolationError(f"参数重复注册: {name}")
        params[name] = p
    if layer.buffers:
        buffers[prefix] = layer
    if isinstance(layer, ConcatSkip):
        for k, sub in enumerate(layer.layers):
            _collect(sub, f"{prefix}.{k}", params, buffers)


class Network:
    """按 NetSpec 构建的前馈网络"""

    def __init__(self, spec: NetSpec, seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.layers: List[Layer] = []
        dim = spec.input_dim
        for layer_spec in spec.layers:
            layer, dim = _build_layer(layer_spec, dim, rng)
            self.layers.append(layer)
        self.output_dim = dim

        self._params: Dict[str, Tensor] = {}
        self._buffer_layers: Dict[str, Layer] = {}
        for k, layer in enumerate(self.layers):
            _collect(layer, f"{k}.{self.spec.layers[k].kind}", self._params, self._buffer_layers)

    def parameters(self) -> Dict[str, Tensor]:
        return self._params

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def forward(self, x, mode: str = 'train', rng: Optional[np.random.Generator] = None,
                ctx: Optional[ForwardContext] = None) -> Tensor:
        ctx = ctx or ForwardContext(mode=mode, rng=rng)
        x = as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ContractViolationError(f"网络输入应为 n × {self.spec.input_dim}，实际 {x.shape}")
        h = x
        for layer in self.layers:
            h = layer.forward(h, ctx)
        return h

    __call__ = forward

    def input_gradient(self, x: np.ndarray, mode: str = 'train',
                       rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
        """
        输出对输入的梯度，表示为关于参数可微的计算图（仅支持分段线性网络）

        Returns:
            (output, grad): 前向输出与 n × input_dim 的输入梯度
        """
        unsupported = [type(l).__name__ for l in self.layers
                       if not isinstance(l, (Linear, ReLU, LeakyReLU, Dropout))]
        if unsupported:
            raise ContractViolationError(f"输入梯度图不支持的层: {', '.join(unsupported)}")
        ctx = ForwardContext(mode=mode, rng=rng, tape=[])
        out = self.forward(Tensor(x), ctx=ctx)
        delta = Tensor(np.ones(out.shape))
        for layer, cache in reversed(ctx.tape):
            delta = layer.vjp(delta, cache)
        return out, delta

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {f"param:{k}": p.data.copy() for k, p in self._params.items()}
        for prefix, layer in self._buffer_layers.items():
            for key, buf in layer.buffers.items():
                state[f"buffer:{prefix}.{key}"] = np.asarray(buf).copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        for k, p in self._params.items():
            value = np.asarray(state[f"param:{k}"], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ContractViolationError(f"参数 {k} 形状不匹配: {value.shape} vs {p.data.shape}")
            p.data = value.copy()
        for prefix, layer in self._buffer_layers.items():
            for key in layer.buffers:
                layer.buffers[key] = np.asarray(state[f"buffer:{prefix}.{key}"], dtype=np.float64).copy()
        return self


def forward(net: Network, x, mode: str = 'train', rng: Optional[np.random.Generator] = None) -> Tensor:
    return net.forward(x, mode=mode, rng=rng)


# ========== 优化器 ==========

@dataclass
class OptimState:
    """优化器状态：adam(lr, weight_decay, betas) 或 sgd(lr, weight_decay, halving_period)"""

    kind: str
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    halving_period: int = 0
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        if self.kind == 'sgd' and self.halving_period > 0:
            return self.lr * 0.5 ** (self.step // self.halving_period)
        return self.lr


def make_adam(lr: float = 2e-4, weight_decay: float = 0.0, betas: Tuple[float, float] = (0.5, 0.9)) -> OptimState:
    return OptimState(kind='adam', lr=lr, weight_decay=weight_decay, beta1=betas[0], beta2=betas[1])


def make_sgd(lr: float = 0.1, weight_decay: float = 0.0, halving_period: int = 0) -> OptimState:
    return OptimState(kind='sgd', lr=lr, weight_decay=weight_decay, halving_period=halving_period)


def _grads_of(params: Dict[str, Tensor], grads: Optional[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    if grads is not None:
        return grads
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def adam_step(params: Dict[str, Tensor], grads: Optional[Dict[str, np.ndarray]], state: OptimState):
    """Adam 更新（权重衰减作为 L2 梯度项）"""
    grads = _grads_of(params, grads)
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name] + state.weight_decay * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if state.m[name].shape != p.data.shape:
            raise ContractViolationError(f"优化器状态与参数 {name} 形状不一致")
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1 ** t)
        v_hat = state.v[name] / (1 - state.beta2 ** t)
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def sgd_step(params: Dict[str, Tensor], grads: Optional[Dict[str, np.ndarray]], state: OptimState):
    """SGD 更新，每 halving_period 步学习率减半"""
    grads = _grads_of(params, grads)
    lr = state.current_lr()
    for name, p in params.items():
        p.data = p.data - lr * (grads[name] + state.weight_decay * p.data)
    state.step += 1


def optimizer_step(params: Dict[str, Tensor], state: OptimState):
    if state.kind == 'adam':
        adam_step(params, None, state)
    elif state.kind == 'sgd':
        sgd_step(params, None, state)
    else:
        raise ContractViolationError(f"未知的优化器: {state.kind}")


# ========== 梯度校验 ==========

def grad_check(net: Network, loss_fn: Callable[[Tensor, Dict[str, Tensor]], Tensor], x: np.ndarray,
               epsilon: float = 1e-5, samples_per_param: int = 8, seed: int = 0) -> float:
    """
    用中心差分校验反向传播梯度

    在 check 模式下运行（dropout 关闭，batchnorm 使用批统计量且不更新，gumbel 使用固定噪声的软样本）。

    Args:
        net: 网络
        loss_fn: (输出, 附加输出) → 标量损失
        x: 输入
        epsilon: 差分步长
        samples_per_param: 每个参数张量随机抽查的元素数
        seed: 固定噪声与抽样的种子

    Returns:
        float: 最大相对误差 |a − n| / max(|a| + |n|, 1e-3)
    """
    def evaluate() -> Tensor:
        ctx = ForwardContext(mode='check', rng=np.random.default_rng(seed))
        out = net.forward(Tensor(x), ctx=ctx)
        return loss_fn(out, ctx.extras)

    net.zero_grad()
    loss = evaluate()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in net.parameters().items()}

    picker = np.random.default_rng(seed + 1)
    worst = 0.0
    for name, p in net.parameters().items():
        count = min(samples_per_param, p.data.size)
        for flat_idx in picker.choice(p.data.size, size=count, replace=False):
            idx = np.unravel_index(flat_idx, p.data.shape)
            original = p.data[idx]
            p.data[idx] = original + epsilon
            plus = evaluate().item()
            p.data[idx] = original - epsilon
            minus = evaluate().item()
            p.data[idx] = original
            numeric = (plus - minus) / (2 * epsilon)
            a = analytic[name][idx]
            rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-3)
            worst = max(worst, rel)
    net.zero_grad()
    logger.debug(f"梯度校验最大相对误差: {worst:.3e}")
    return worst
