"""Kernel registry: resolves the names used in experiment configs."""

from .base import CostKernel
from .errors import ConfigError
from .log_kernel import LogKernel
from .power_kernel import PowerKernel


def kernel_from_name(name: str) -> CostKernel:
    """Build a kernel from ``"log"`` or ``"power:q"``."""
    label = name.strip().lower()
    if label == "log":
        return LogKernel()
    if label.startswith("power:"):
        try:
            q = float(label.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError("Power kernel exponent is not a number", kernel=name) from exc
        return PowerKernel(q)
    raise ConfigError("Unknown kernel", kernel=name)
