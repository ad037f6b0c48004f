from .autograd import Node, backward, constant, parameter
from .optim import AdamState, adam_step
from .physics import FUEL_UNIT_JOULES, PhysicsConstants, PowerTerms, decode

__all__ = [
    "Node",
    "backward",
    "constant",
    "parameter",
    "AdamState",
    "adam_step",
    "FUEL_UNIT_JOULES",
    "PhysicsConstants",
    "PowerTerms",
    "decode",
]
