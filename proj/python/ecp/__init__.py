"""Easy convolution with random pooling on MNIST."""

from ._ecp import (
    Network,
    avg_pool,
    bench_pure_conv,
    build_network,
    conv2d,
    count_conv_macs,
    easy_conv,
    easy_conv_padded,
    evaluate,
    gradcheck,
    load_checkpoint,
    load_mnist_test,
    load_mnist_train,
    max_pool,
    random_pool,
    relu,
    softmax_cross_entropy,
    train,
)

__all__ = [
    "Network",
    "avg_pool",
    "bench_pure_conv",
    "build_network",
    "conv2d",
    "count_conv_macs",
    "easy_conv",
    "easy_conv_padded",
    "evaluate",
    "gradcheck",
    "load_checkpoint",
    "load_mnist_test",
    "load_mnist_train",
    "max_pool",
    "random_pool",
    "relu",
    "softmax_cross_entropy",
    "train",
]
