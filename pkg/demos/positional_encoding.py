"""
Random-chunk positional encoding
================================

During training the network sees a random contiguous slice of a long
sinusoidal table; at inference it sees the first rows.  Every inference slice
is therefore a prefix of every longer one, and every row an inference run can
use was also seen in training.
"""

import numpy as np

from crossnet import model

pe = model.PEMatrix(t_max=200, dim=64)
rng = np.random.default_rng(0)

short = model.rcpe_select(pe, 20, "eval").data
long = model.rcpe_select(pe, 150, "eval").data
print("eval slices nest:", np.array_equal(short, long[:20]))

starts = [model.rcpe_offset(50, pe.t_max, "train", rng) for _ in range(2000)]
print(f"training offsets cover {min(starts)}..{max(starts)} of 0..{pe.t_max - 50}")

# neighbouring rows stay close whatever the offset, which is what the blocks can rely on
rows = pe.table
d1 = np.linalg.norm(rows[1:] - rows[:-1], axis=1)
print(f"distance between consecutive rows: {d1.min():.4f} .. {d1.max():.4f}")
