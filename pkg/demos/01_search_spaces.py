"""
Search spaces and the NAS cell
==============================

A search space is a list of categorical cardinalities plus an optional
validity predicate. This script builds a toy space, then the 26-dimensional
cell space (5 operation slots, 21 adjacency bits) and measures how much of
it is valid.
"""
# %%
import numpy as np

from remaade.numerics import seeded_rng
from remaade.space import NAS_EDGES, build_space, enumerate_strings, nas101_cell_space

toy = build_space([2, 3, 2])
print("toy space:", toy.dims, "families:", toy.family_names, "size:", toy.size)
print("first strings:", list(enumerate_strings(toy))[:4])

# %%
# The cell space. Each edge bit switches on one arc of the upper-triangular
# adjacency matrix; a cell is valid with at most 9 arcs and a path from the
# input node (0) to the output node (6).
cell = nas101_cell_space()
print("cell space:", cell.n, "hyperparameters,", f"{cell.size:,} raw strings")

chain = [0] * 5 + [int(e in {(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)}) for e in NAS_EDGES]
print("straight chain valid?", cell.is_valid(chain))
print("empty graph valid?", cell.is_valid([0] * 26))

# %%
# Rough valid fraction under uniform sampling.
rng = seeded_rng(0)
draws = [tuple(rng.integer(d) for d in cell.dims) for _ in range(5000)]
print("valid fraction (5000 uniform draws):", np.mean([cell.is_valid(s) for s in draws]))
