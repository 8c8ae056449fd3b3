import numpy as np
import pytest
import torch

from converse_mcts.catalog import SyntheticSpec, generate_synthetic, loads_catalog

torch.set_num_threads(1)


# A hand-written toy catalog: 2 users, 6 items, 2 types x 3 values.
# Type 0 is single-valued per item (price-range style); type 1 is multi-valued.
TOY = """\
#types
0\tprice
1\tcuisine
#values
0\t0\tlow
1\t0\tmedium
2\t0\thigh
3\t1\tthai
4\t1\tsushi
5\t1\tpizza
#items
0\t0,3
1\t0,3,4
2\t1,4
3\t1,5
4\t2,5
5\t0,3,5
#interactions
0\t0,1,5
1\t2,3
"""


@pytest.fixture(scope="session")
def toy_catalog():
    return loads_catalog(TOY)


@pytest.fixture(scope="session")
def small_catalog():
    return generate_synthetic(
        SyntheticSpec(
            n_users=6, n_items=24, n_types=4, n_values_per_type=3,
            values_per_item=4, interactions_per_user=6, seed=5,
        )
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
