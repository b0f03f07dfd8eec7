"""Named, independently seeded random streams."""

import numpy as np

STREAMS = ("init", "env", "act", "learn", "buffer", "diag", "eval")


class Streams:
    """One PCG64 generator per purpose, all spawned from a single seed."""

    def __init__(self, seed, names=STREAMS):
        children = np.random.SeedSequence(seed).spawn(len(names))
        self._gens = {n: np.random.Generator(np.random.PCG64(c)) for n, c in zip(names, children)}

    def __getitem__(self, name):
        return self._gens[name]

    def state(self):
        return {n: g.bit_generator.state for n, g in self._gens.items()}

    def set_state(self, state):
        for n, s in state.items():
            self._gens[n].bit_generator.state = s
