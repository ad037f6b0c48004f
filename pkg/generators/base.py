from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np
from faker import Faker


class BaseGenerator(ABC):
    """Seeded Faker instance plus a numpy generator; equal seeds give equal output."""

    def __init__(self, seed: int | None = 42):
        self.seed = seed
        self.fake = Faker()
        if seed is not None:
            self.fake.seed_instance(seed)
        self.rng = np.random.default_rng(seed)

    @abstractmethod
    def generate_one(self):
        pass

    def generate_batch(self, count: int) -> list:
        return [self.generate_one() for _ in range(count)]

    @abstractmethod
    def save(self, records, path: Path):
        pass
