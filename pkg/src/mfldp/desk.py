"""Small fixed instance used by tests, scripts and the default config.

Two input dimensions, four data atoms with |(1, z)| <= 2 and |y| <= 2, eight
initial weight atoms and a tanh activation.
"""

from __future__ import annotations

import numpy as np

from .model import Activation, DataAtomSet, InitialWeightAtomSet

DESK_Z = np.array([[0.8, 0.5], [-0.6, 0.9], [0.3, -1.0], [-1.1, -0.4]])
DESK_Y = np.array([0.8, -0.5, 0.3, -0.9])
DESK_PI = np.array([0.3, 0.2, 0.25, 0.25])

DESK_NU_ATOMS = np.array([
    [0.5, 0.4, -0.3],
    [-0.4, 0.7, 0.2],
    [0.9, -0.5, 0.6],
    [-0.8, -0.2, -0.7],
    [0.2, 1.0, 0.1],
    [-0.3, -0.9, 0.4],
    [0.7, 0.1, -0.8],
    [-0.6, 0.3, 0.9],
])
DESK_NU_PROBS = np.full(8, 1.0 / 8)


def desk_data() -> DataAtomSet:
    return DataAtomSet(DESK_Z, DESK_Y, DESK_PI)


def desk_nu() -> InitialWeightAtomSet:
    return InitialWeightAtomSet(DESK_NU_ATOMS, DESK_NU_PROBS)


def desk_activation() -> Activation:
    return Activation.named("tanh")


def desk() -> tuple[DataAtomSet, InitialWeightAtomSet, Activation]:
    return desk_data(), desk_nu(), desk_activation()
