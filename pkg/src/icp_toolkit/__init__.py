"""icp-toolkit - rigid registration with iterative closest point, a grid Bayes filter and a 2D SLAM harness."""

from .core.geometry import PointCloud, RigidTransform
from .core.icp import IcpConfig, IcpResult, Termination, run_icp
from .config.settings import settings

__version__ = "0.1.0"
__all__ = ["PointCloud", "RigidTransform", "IcpConfig", "IcpResult", "Termination", "run_icp", "settings"]
