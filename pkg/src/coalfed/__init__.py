"""Coalition federated-learning simulator.

Subpackages cover the analytic sharing-benefit bounds, QoI/VoI scoring,
the policy grammar and generator, deterministic trainable models, the
data curator, model-fusion algorithms (naive, synchronized, round-robin,
region ensemble), the fusion-session protocol, and synthetic scenario
generators.  The training inner loop runs on a compiled kernel when the
extension was built (see coalfed.kernels.BACKEND).
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
