"""cliprank: self-supervised video representation learning by future-clip ranking.

A context encoder summarizes a dense clip into a spatial feature grid; a
target encoder embeds sparsely sampled future frames into grids of the same
shape.  Training ranks the future frames by per-cell cosine similarity to the
context, pushes their scores above frames from other videos, and adds a
rotation-prediction auxiliary.  Everything runs on a synthetic moving-sprite
corpus at desk scale: numpy forward/backward, single process, minutes on a
CPU.

Submodules are imported explicitly (``from cliprank import autodiff``); this
package root stays import-light so the CLI can configure thread counts before
numpy loads.
"""

__version__ = "0.1.0"
