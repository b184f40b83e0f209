import zlib

import numpy as np
import pytest

from privkit import (
    BackendRegistry,
    IdentityEmbedding,
    ImageRecord,
    LinearGenerator,
    MeanSquaredDistance,
    RandomProjectionEmbedding,
    Role,
    SumSquaredDistance,
)

TOY_SHAPE = (4, 4, 3)


@pytest.fixture
def toy_shape():
    return TOY_SHAPE


@pytest.fixture
def registry():
    reg = BackendRegistry()
    reg.register(RandomProjectionEmbedding(name="proj", image_shape=TOY_SHAPE,
                                           dim=8, seed=11))
    reg.register(IdentityEmbedding(TOY_SHAPE, name="ident"))
    reg.register(LinearGenerator.identity(TOY_SHAPE, name="gen"))
    reg.register(MeanSquaredDistance(name="mse"))
    reg.register(SumSquaredDistance(name="sq"))
    return reg


def make_image(image_id, identity, pixels=None, shape=TOY_SHAPE, seed=None,
               role=Role.ORIGINAL):
    if pixels is None:
        entropy = seed if seed is not None else zlib.crc32(image_id.encode())
        pixels = np.random.default_rng(entropy).uniform(size=shape)
    return ImageRecord(id=image_id, identity=identity, pixels=pixels, role=role)


@pytest.fixture
def image_factory():
    return make_image
