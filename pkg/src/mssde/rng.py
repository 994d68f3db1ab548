"""Counter-based random streams keyed by (seed, stream id).

Every batch of paths owns Philox streams derived only from the global seed
and integer stream coordinates, so results never depend on worker count or
scheduling order.
"""

import numpy as np

# stream purposes
CHAIN = 0
BROWNIAN = 1
TILDE = 2
AVERAGED = 3
LIMIT = 4


def stream(seed, *ids):
    key = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(key=key.generate_state(2, np.uint64)))
