"""Phase-field mean curvature flow with small trained convolution/reaction networks."""
from .grid import Grid
from .phasefield import Profile
from .network import DRNet1, DRNet2, FormatError

__all__ = ["Grid", "Profile", "DRNet1", "DRNet2", "FormatError"]
__version__ = "0.1.0"
