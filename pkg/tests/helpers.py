"""Instance builders shared by several test modules."""

from typing import Tuple

import numpy as np

from spherical_ot.sphere import DiscreteMeasure, random_points


def random_instance(rng: np.random.Generator, n: int, m: int, dim: int = 2,
                    uniform: bool = True) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    """Random source/target measures; non-uniform weights come from a Dirichlet draw."""
    X = random_points(n, dim, rng)
    Y = random_points(m, dim, rng)
    if uniform:
        return DiscreteMeasure.uniform(X), DiscreteMeasure.uniform(Y)
    a = rng.dirichlet(np.ones(n))
    b = rng.dirichlet(np.ones(m))
    return DiscreteMeasure(X, a / a.sum()), DiscreteMeasure(Y, b / b.sum())
