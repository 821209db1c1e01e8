"""
Cutting a scanned form into characters
======================================

Collection forms hold one character per cell on a fixed 10 x 6 grid. Cell
edges are placed with integer division so the cells tile the page exactly,
even when the page size is not a multiple of the grid.
"""

import numpy as np

from bornovit.data import crop_page_grid

page = np.random.default_rng(0).integers(0, 256, size=(1003, 601), dtype=np.uint8)
cells = crop_page_grid(page, rows=10, cols=6)
print(len(cells), "cells")
print("first cell", cells[0].shape, "last cell", cells[-1].shape)

rows = [np.concatenate(cells[r * 6:(r + 1) * 6], axis=1) for r in range(10)]
print("reassembles to the page:", bool(np.array_equal(np.concatenate(rows), page)))
