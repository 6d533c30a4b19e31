"""Layer tables for the classifier backbones and the recommender networks."""

# ("conv", channels) is a 3x3 same-padded convolution followed by the activation,
# ("pool", k) a k x k max pool, ("avgpool", k) a k x k average pool and
# ("fc", units) a dense layer followed by the activation. The known and unknown
# output heads are appended by the builder.
BACKBONE_LAYOUTS = {
    "plain": {
        "shapes": [(28, 28, 1)],
        "activation": "relu",
        "layers": [("conv", 32), ("pool", 2), ("conv", 64), ("pool", 2), ("fc", 256)],
    },
    "vgg-small": {
        "shapes": [(32, 32, 3)],
        "activation": "relu",
        "layers": [
            ("conv", 64), ("pool", 2),
            ("conv", 128), ("pool", 2),
            ("conv", 128), ("pool", 2),
            ("conv", 256), ("pool", 2),
            ("fc", 256),
        ],
    },
    # small enough for finite-difference gradient checks
    "tiny": {
        "shapes": [(28, 28, 1), (32, 32, 3)],
        "activation": "tanh",
        "layers": [("avgpool", 4), ("fc", 8)],
    },
}

# Channel counts are multiples of the generator_channels and
# discriminator_channels config knobs (128 and 64 reproduce the published table).
RECOMMENDER_LAYOUTS = {
    (28, 28, 1): {
        "generator": {"seed_size": 7, "seed_mult": 1, "up_mults": [1, 1], "out_kernel": 7},
        "discriminator": {"conv_mults": [1, 1]},
    },
    (32, 32, 3): {
        "generator": {"seed_size": 4, "seed_mult": 2, "up_mults": [1, 1, 1], "out_kernel": 3},
        "discriminator": {"conv_mults": [1, 2, 2, 4]},
    },
}

LEAKY_SLOPE = 0.2


def get_backbone_layout(name):
    """Get a backbone layout by name, or None if unknown"""
    return BACKBONE_LAYOUTS.get(name)


def get_recommender_layout(shape):
    """Get the generator/discriminator layout for an image shape, or None"""
    return RECOMMENDER_LAYOUTS.get(tuple(shape))
