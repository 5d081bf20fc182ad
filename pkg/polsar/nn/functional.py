"""
Differentiable ops.

Layouts are channel-last: images are (B, H, W, C), token sequences are
(B, T, d). Reductions inside softmax, layer norm and batch norm
accumulate in float64 and cast back to the input dtype.
"""

import numpy as np

from .tensor import Function, Tensor, as_tensor, unbroadcast

PROBABILITY_FLOOR = 1e-12


def _pair(a, b):
    """Convert a non-tensor operand to a tensor of the other operand's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


# ============================================================================
# Elementwise arithmetic
# ============================================================================

class Add(Function):
    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        grad_a = grad / self.b
        grad_b = -grad * self.a / (self.b * self.b)
        return unbroadcast(grad_a, self.a.shape), unbroadcast(grad_b, self.b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class Clamp(Function):
    def forward(self, a, low=None, high=None):
        self.mask = np.ones(a.shape, dtype=bool)
        if low is not None:
            self.mask &= a >= low
        if high is not None:
            self.mask &= a <= high
        return np.clip(a, low, high)

    def backward(self, grad):
        return (grad * self.mask,)


def add(a, b):
    return Add.apply(*_pair(a, b))


def sub(a, b):
    return Sub.apply(*_pair(a, b))


def mul(a, b):
    return Mul.apply(*_pair(a, b))


def div(a, b):
    return Div.apply(*_pair(a, b))


def neg(a):
    return Neg.apply(a)


def exp(a):
    return Exp.apply(a)


def log(a):
    return Log.apply(a)


def clamp(a, low=None, high=None):
    return Clamp.apply(a, low=low, high=high)


# ============================================================================
# Shape and reduction
# ============================================================================

class MatMul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return unbroadcast(grad_a, self.a.shape), unbroadcast(grad_b, self.b.shape)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape = a.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            axes = (self.axis,) if np.isscalar(self.axis) else self.axis
            axes = tuple(axis % len(self.shape) for axis in axes)
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape=None):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        self.axes = axes
        return np.transpose(a, axes)

    def backward(self, grad):
        if self.axes is None:
            return (np.transpose(grad),)
        return (np.transpose(grad, np.argsort(self.axes)),)


class GetItem(Function):
    def forward(self, a, index=None):
        self.shape = a.shape
        self.dtype = a.dtype
        self.index = index
        return np.array(a[index])

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=self.dtype)
        np.add.at(full, self.index, grad)
        return (full,)


class BroadcastTo(Function):
    def forward(self, a, shape=None):
        self.shape = a.shape
        return np.broadcast_to(a, shape).copy()

    def backward(self, grad):
        return (unbroadcast(grad, self.shape),)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.sizes = [array.shape[axis] for array in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        boundaries = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, boundaries, axis=self.axis))


def matmul(a, b):
    return MatMul.apply(*_pair(a, b))


def sum(a, axis=None, keepdims=False):
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes=None):
    return Transpose.apply(a, axes=None if axes is None else tuple(axes))


def getitem(a, index):
    return GetItem.apply(a, index=index)


def broadcast_to(a, shape):
    return BroadcastTo.apply(a, shape=tuple(shape))


def concat(tensors, axis=0):
    return Concat.apply(*tensors, axis=axis)


# ============================================================================
# Activations
# ============================================================================

class ReLU(Function):
    def forward(self, a):
        self.mask = a > 0
        return a * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


_GELU_C = np.sqrt(2.0 / np.pi)


class GELU(Function):
    """Tanh approximation of the Gaussian error linear unit."""

    def forward(self, a):
        self.a = a
        self.t = np.tanh(_GELU_C * (a + 0.044715 * a ** 3))
        return 0.5 * a * (1.0 + self.t)

    def backward(self, grad):
        a, t = self.a, self.t
        derivative = 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        return (grad * derivative,)


class Softmax(Function):
    def forward(self, a, axis=-1):
        self.axis = axis
        shifted = a.astype(np.float64) - a.max(axis=axis, keepdims=True)
        exps = np.exp(shifted)
        self.out = exps / exps.sum(axis=axis, keepdims=True)
        return self.out.astype(a.dtype)

    def backward(self, grad):
        grad64 = grad.astype(np.float64)
        inner = (grad64 * self.out).sum(axis=self.axis, keepdims=True)
        return ((self.out * (grad64 - inner)).astype(grad.dtype),)


def relu(a):
    return ReLU.apply(a)


def gelu(a):
    return GELU.apply(a)


def softmax(a, axis=-1):
    return Softmax.apply(a, axis=axis)


def softmax_array(logits, axis=-1):
    """Plain-numpy softmax with the same float64 accumulation."""
    logits = np.asarray(logits)
    shifted = logits.astype(np.float64) - logits.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=axis, keepdims=True)


# ============================================================================
# Normalization
# ============================================================================

class LayerNorm(Function):
    def forward(self, x, gamma, beta, eps=1e-5):
        x64 = x.astype(np.float64)
        mean = x64.mean(axis=-1, keepdims=True)
        var = x64.var(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x64 - mean) * self.inv_std
        self.gamma = gamma
        self.shapes = gamma.shape, beta.shape
        return (self.xhat * gamma + beta).astype(x.dtype)

    def backward(self, grad):
        grad64 = grad.astype(np.float64)
        width = self.xhat.shape[-1]
        dxhat = grad64 * self.gamma
        dx = self.inv_std / width * (
            width * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - self.xhat * (dxhat * self.xhat).sum(axis=-1, keepdims=True)
        )
        dgamma = unbroadcast(grad64 * self.xhat, self.shapes[0])
        dbeta = unbroadcast(grad64, self.shapes[1])
        dtype = grad.dtype
        return dx.astype(dtype), dgamma.astype(dtype), dbeta.astype(dtype)


class BatchNorm(Function):
    """
    Batch normalization over every axis but the last.

    In training mode the batch statistics normalize the input and, when
    ``running_mean``/``running_var`` are given, are folded into them in
    place with ``momentum``. In eval mode the running statistics are used.
    """

    def forward(self, x, gamma, beta, running_mean=None, running_var=None,
                training=True, momentum=0.1, eps=1e-5):
        axes = tuple(range(x.ndim - 1))
        x64 = x.astype(np.float64)
        self.training = training
        if training:
            mean = x64.mean(axis=axes)
            var = x64.var(axis=axes)
            count = x64.size // x64.shape[-1]
            if running_mean is not None:
                unbiased = var * count / max(count - 1, 1)
                running_mean *= 1.0 - momentum
                running_mean += momentum * mean
                running_var *= 1.0 - momentum
                running_var += momentum * unbiased
        else:
            mean = running_mean.astype(np.float64)
            var = running_var.astype(np.float64)
        self.axes = axes
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x64 - mean) * self.inv_std
        self.gamma = gamma.astype(np.float64)
        return (self.xhat * self.gamma + beta).astype(x.dtype)

    def backward(self, grad):
        grad64 = grad.astype(np.float64)
        dxhat = grad64 * self.gamma
        if self.training:
            count = grad64.size // grad64.shape[-1]
            dx = self.inv_std / count * (
                count * dxhat
                - dxhat.sum(axis=self.axes)
                - self.xhat * (dxhat * self.xhat).sum(axis=self.axes)
            )
        else:
            dx = dxhat * self.inv_std
        dgamma = (grad64 * self.xhat).sum(axis=self.axes)
        dbeta = grad64.sum(axis=self.axes)
        dtype = grad.dtype
        return dx.astype(dtype), dgamma.astype(dtype), dbeta.astype(dtype)


def layer_norm(x, gamma, beta, eps=1e-5):
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def batch_norm(x, gamma, beta, running_mean=None, running_var=None, training=True,
               momentum=0.1, eps=1e-5):
    return BatchNorm.apply(
        x, gamma, beta,
        running_mean=running_mean, running_var=running_var,
        training=training, momentum=momentum, eps=eps,
    )


# ============================================================================
# Convolution
# ============================================================================

class Conv2d(Function):
    """
    Stride-1 'same' convolution of a (B, H, W, Cin) input with a
    (k, k, Cin, Cout) kernel and a (Cout,) bias, k odd.
    """

    def forward(self, x, weight, bias):
        batch, height, width, channels = x.shape
        size = weight.shape[0]
        pad = size // 2
        padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        columns = np.empty((batch, height, width, size, size, channels), dtype=x.dtype)
        for di in range(size):
            for dj in range(size):
                columns[:, :, :, di, dj, :] = padded[:, di:di + height, dj:dj + width, :]
        self.columns = columns.reshape(batch * height * width, size * size * channels)
        self.weight = weight
        self.input_shape = x.shape
        out = self.columns @ weight.reshape(-1, weight.shape[-1]) + bias
        return out.reshape(batch, height, width, weight.shape[-1])

    def backward(self, grad):
        batch, height, width, channels = self.input_shape
        size = self.weight.shape[0]
        pad = size // 2
        flat = grad.reshape(-1, grad.shape[-1])
        grad_weight = (self.columns.T @ flat).reshape(self.weight.shape)
        grad_bias = flat.sum(axis=0)
        grad_columns = (flat @ self.weight.reshape(-1, self.weight.shape[-1]).T).reshape(
            batch, height, width, size, size, channels
        )
        grad_padded = np.zeros((batch, height + 2 * pad, width + 2 * pad, channels), dtype=grad.dtype)
        for di in range(size):
            for dj in range(size):
                grad_padded[:, di:di + height, dj:dj + width, :] += grad_columns[:, :, :, di, dj, :]
        return grad_padded[:, pad:pad + height, pad:pad + width, :], grad_weight, grad_bias


def conv2d(x, weight, bias):
    return Conv2d.apply(x, weight, bias)


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ============================================================================
# Losses on probability vectors
# ============================================================================

def one_hot(labels, num_classes, dtype=np.float64):
    labels = np.asarray(labels, dtype=np.int64)
    encoded = np.zeros(labels.shape + (num_classes,), dtype=dtype)
    np.put_along_axis(encoded, labels[..., np.newaxis], 1.0, axis=-1)
    return encoded


def cross_entropy(probabilities, targets):
    """
    Hard-label loss ``-(1/M) sum_i y(i) ln out(i)``, averaged over the batch.

    Args:
        probabilities: Tensor (..., M) of softmax outputs
        targets: One-hot array (..., M)

    Returns:
        Scalar Tensor
    """
    probabilities = as_tensor(probabilities)
    num_classes = probabilities.shape[-1]
    targets = np.asarray(targets, dtype=probabilities.dtype)
    logs = log(clamp(probabilities, PROBABILITY_FLOOR, 1.0))
    per_sample = mul(sum(mul(logs, targets), axis=-1), -1.0 / num_classes)
    return mean(per_sample)


def kl_divergence(teacher, probabilities):
    """
    ``sum_i t(i) ln(t(i) / s(i))`` with ``0 ln 0 = 0``, averaged over the batch.

    Args:
        teacher: Array (..., M) of teacher probabilities (constant)
        probabilities: Tensor (..., M) of student probabilities

    Returns:
        Scalar Tensor
    """
    probabilities = as_tensor(probabilities)
    teacher = np.asarray(teacher, dtype=probabilities.dtype)
    clamped_teacher = np.clip(teacher, PROBABILITY_FLOOR, 1.0)
    entropy_term = np.where(teacher > 0, teacher * np.log(clamped_teacher), 0.0).sum(axis=-1)
    logs = log(clamp(probabilities, PROBABILITY_FLOOR, 1.0))
    cross_term = sum(mul(logs, teacher), axis=-1)
    per_sample = sub(Tensor(entropy_term.astype(probabilities.dtype)), cross_term)
    return mean(per_sample)
