"""boxsplit: hierarchical box abstractions of 3D shapes.

Builds binary merge trees over oriented boxes, learns the reverse (iterative
splitting) with a pivot classifier plus a conditional child-boxes diffusion
model, ships two baselines (token prediction, unconditional diffusion with
inpainting), a point-cloud metric suite, and an interactive editing server.
"""

from boxsplit.geometry import Box, unit_cube

__all__ = ["Box", "unit_cube"]
__version__ = "0.1.0"
