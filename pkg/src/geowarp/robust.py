"""M-estimators: cost ``rho``, influence ``psi = rho'`` and IRLS weight
``psi(x) / x``, all elementwise over arrays."""

from dataclasses import dataclass

import numpy as np

from .grids import check_same_shape, check_scalar_grid, reduce_sum

KINDS = ("l2", "huber", "cauchy", "geman_mcclure", "tukey")

DEFAULT_SCALES = {"huber": 1.345, "cauchy": 2.385, "tukey": 4.685}

_ALIASES = {
    "l2": "l2",
    "huber": "huber",
    "cauchy": "cauchy",
    "geman_mcclure": "geman_mcclure",
    "geman-mcclure": "geman_mcclure",
    "gemanmcclure": "geman_mcclure",
    "gm": "geman_mcclure",
    "tukey": "tukey",
}


@dataclass(frozen=True)
class RobustLoss:
    """A loss kind plus its scale (``eps`` for Huber, ``c`` for Cauchy and
    Tukey; ignored by L2 and Geman-McClure)."""

    kind: str = "l2"
    scale: float = None

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).lower())
        if kind is None:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if self.scale is None:
            object.__setattr__(self, "scale", DEFAULT_SCALES.get(kind, 1.0))
        if not self.scale > 0:
            raise ValueError(f"loss scale must be > 0, got {self.scale}")

    def rho(self, x):
        return rho(self, x)

    def psi(self, x):
        return psi(self, x)

    def weight(self, x):
        return weight(self, x)


def rho(loss, x):
    x = np.asarray(x, dtype=np.float64)
    x2 = x * x
    k, c = loss.kind, loss.scale
    if k == "l2":
        out = 0.5 * x2
    elif k == "huber":
        ax = np.abs(x)
        out = np.where(ax <= c, 0.5 * x2, c * (ax - 0.5 * c))
    elif k == "cauchy":
        out = 0.5 * c * c * np.log1p(x2 / (c * c))
    elif k == "geman_mcclure":
        out = 0.5 * x2 / (1.0 + x2)
    else:
        inside = np.abs(x) <= c
        u = 1.0 - x2 / (c * c)
        # c^2/6 (1 - u^3) factored so small x does not cancel
        out = np.where(inside, np.minimum(x2 / 6.0 * (1.0 + u + u * u), c * c / 6.0), c * c / 6.0)
    return out if out.ndim else float(out)


def psi(loss, x):
    x = np.asarray(x, dtype=np.float64)
    return _scalar(x * weight(loss, x))


def weight(loss, x):
    """``psi(x) / x`` with its limit 1 at ``x = 0``."""
    x = np.asarray(x, dtype=np.float64)
    x2 = x * x
    k, c = loss.kind, loss.scale
    if k == "l2":
        out = np.ones_like(x)
    elif k == "huber":
        ax = np.abs(x)
        out = np.where(ax <= c, 1.0, c / np.where(ax <= c, 1.0, ax))
    elif k == "cauchy":
        out = 1.0 / (1.0 + x2 / (c * c))
    elif k == "geman_mcclure":
        out = 1.0 / (1.0 + x2) ** 2
    else:
        u = 1.0 - x2 / (c * c)
        out = np.where(np.abs(x) <= c, u * u, 0.0)
    return _scalar(out)


def _scalar(a):
    return a if a.ndim else float(a)


def apply_rho_grid(loss, residuals, mask):
    """Masked robust cost ``sum mask * rho(r)`` and its gradient
    ``mask * psi(r)``."""
    r = check_scalar_grid(residuals, "residuals")
    m = check_scalar_grid(mask, "mask")
    check_same_shape(r, m, ("residuals", "mask"))
    cost = reduce_sum(m * rho(loss, r))
    return cost, m * psi(loss, r)
