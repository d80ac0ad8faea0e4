"""RW-Resnet: raw-waveform speech anti-spoofing with a numpy-only training stack."""
from .backbone import BackboneConfig
from .frontend import FrontendConfig
from .model import RWResNet

__version__ = "0.1.0"

__all__ = ["BackboneConfig", "FrontendConfig", "RWResNet", "__version__"]
