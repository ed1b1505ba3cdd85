"""Built-in architectures and the inline layer-list mini-language.

Layer tokens: ``dense IN OUT``, ``conv3x3 IN OUT``, ``maxpool2x2``,
``relu``, ``tanh``, ``flatten``.

The convolutional tables pin every width including the flattened head, so
their expected input resolutions are part of the architecture: with two
2x2 poolings, a 128*4*4 head means a 16x16 input (conv_cifar) and a
16*20*20 head means an 80x80 input (conv_stl). Feed larger images through
``data.resize_dataset`` first; shape validation at build time will refuse
anything inconsistent.
"""

from __future__ import annotations

from .net import Conv3x3, Dense, Flatten, MaxPool2x2, Network, ReLU, TanH, DEFAULT_DTYPE

_MLP2 = [
    "flatten",
    "dense 784 784",
    "relu",
    "dense 784 10",
]

_MLP3 = [
    "flatten",
    "dense 784 784",
    "relu",
    "dense 784 784",
    "relu",
    "dense 784 10",
]

_CONV_CIFAR = [
    "conv3x3 3 64",
    "relu",
    "conv3x3 64 64",
    "relu",
    "maxpool2x2",
    "conv3x3 64 128",
    "relu",
    "conv3x3 128 128",
    "relu",
    "conv3x3 128 128",
    "relu",
    "maxpool2x2",
    "flatten",
    "dense 2048 2048",
    "relu",
    "dense 2048 2048",
    "relu",
    "dense 2048 10",
]

_CONV_STL = [
    "conv3x3 3 8",
    "relu",
    "conv3x3 8 8",
    "relu",
    "maxpool2x2",
    "conv3x3 8 16",
    "relu",
    "conv3x3 16 16",
    "relu",
    "conv3x3 16 16",
    "relu",
    "maxpool2x2",
    "flatten",
    "dense 6400 6400",
    "relu",
    "dense 6400 6400",
    "relu",
    "dense 6400 10",
]

ARCHITECTURES = {
    "mlp2": ((1, 28, 28), _MLP2),
    "mlp3": ((1, 28, 28), _MLP3),
    "conv_cifar": ((3, 16, 16), _CONV_CIFAR),
    "conv_stl": ((3, 80, 80), _CONV_STL),
}


def parse_layer_token(token):
    parts = str(token).split()
    if not parts:
        raise ValueError("empty layer token")
    kind, args = parts[0], parts[1:]
    if kind == "dense":
        if len(args) != 2:
            raise ValueError(f"dense token needs 'dense IN OUT', got {token!r}")
        return Dense(int(args[0]), int(args[1]))
    if kind == "conv3x3":
        if len(args) != 2:
            raise ValueError(f"conv3x3 token needs 'conv3x3 IN OUT', got {token!r}")
        return Conv3x3(int(args[0]), int(args[1]))
    if args:
        raise ValueError(f"layer kind {kind!r} takes no arguments, got {token!r}")
    simple = {"maxpool2x2": MaxPool2x2, "relu": ReLU, "tanh": TanH, "flatten": Flatten}
    if kind not in simple:
        raise ValueError(f"unknown layer kind {kind!r}")
    return simple[kind]()


def build_model(model, input_shape=None, dtype=DEFAULT_DTYPE) -> Network:
    """Instantiate an architecture id or an inline token list."""
    if isinstance(model, str):
        if model not in ARCHITECTURES:
            raise ValueError(f"unknown architecture id {model!r} (have {sorted(ARCHITECTURES)})")
        default_shape, tokens = ARCHITECTURES[model]
        shape = input_shape or default_shape
    else:
        if input_shape is None:
            raise ValueError("inline layer lists require an explicit input_shape")
        tokens, shape = model, input_shape
    layers = [parse_layer_token(t) for t in tokens]
    return Network(layers, input_shape=shape, dtype=dtype)
