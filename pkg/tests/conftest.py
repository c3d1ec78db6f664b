import dataclasses

import numpy as np
import pytest

from splitforge import arch as A

# Per-block accuracy (%) of a 5-block net at split factors 1/2/4/6/8,
# used to drive the search without training anything.
BLOCK_ACCURACY_TABLE = {
    1: {1: 93.57, 2: 93.64, 4: 93.55, 6: 93.41, 8: 93.46},
    2: {1: 93.46, 2: 93.36, 4: 93.38, 6: 93.03, 8: 93.03},
    3: {1: 93.38, 2: 93.06, 4: 92.78, 6: 92.95, 8: 92.75},
    4: {1: 93.06, 2: 93.21, 4: 92.89, 6: 92.71, 8: 92.34},
    5: {1: 93.21, 2: 93.16, 4: 93.20, 6: 93.45, 8: 93.14},
}


def make_chain_arch(widths, in_channels=3, size=32, classes=10, name="chain"):
    """One conv/relu block per width, each pool-terminated."""
    arch = A.conv_chain(*widths, in_channels=in_channels, size=size,
                        classes=classes)
    return dataclasses.replace(arch, name=name)


def make_allkinds_arch():
    """Exercises every op kind: biased conv, grouped conv, max/avg pool,
    slice, concat, strided 1x1 projection, residual add, fusion conv,
    two dense layers."""
    return A.Architecture(
        name="allkinds", input_shape=(4, 8, 8),
        blocks=(
            A.Block(layers=(
                A.Layer("c0", A.Conv(8, bias=True), (A.INPUT_REF,)),
                A.Layer("r0", A.Relu(), ("c0",)),
                A.Layer("g0", A.Conv(8, groups=2), ("r0",)),
                A.Layer("s1", A.ChannelSlice(0, 4), ("g0",)),
                A.Layer("s2", A.ChannelSlice(4, 4), ("g0",)),
                A.Layer("p1", A.PoolLayer(A.PoolSpec("max", (2, 2), (2, 2))), ("s1",)),
                A.Layer("p2", A.PoolLayer(A.PoolSpec("avg", (2, 2), (2, 2))), ("s2",)),
                A.Layer("cat", A.Concat(), ("p1", "p2")),
                A.Layer("sc", A.Conv(8, kernel=(1, 1), padding=(0, 0),
                                     stride=(2, 2)), ("r0",)),
                A.Layer("add", A.ResidualAdd(), ("cat", "sc")),
                A.Layer("fz", A.Conv(8, kernel=(1, 1), padding=(0, 0),
                                     fusion=True), ("add",)),
            ), pool=A.PoolSpec()),
        ),
        classifier=A.ClassifierSpec(features=(6, 3)),
    )


@pytest.fixture
def ladder48():
    """Five blocks of width 48 — divisible by every ladder factor 2/4/6/8."""
    return make_chain_arch([48] * 5, name="lad48")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))
