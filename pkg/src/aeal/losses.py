"""Loss families m(y, nu) with analytic derivatives in the linear predictor.

Gaussian, logistic and Poisson negative log-likelihoods (additive constants
in y dropped throughout, so reported loss values match references only up to
that convention; differences of losses are unaffected; the dispersion
parameter is treated as known and fixed at one), plus the smooth robust
log-cosh loss. All derivatives are with respect to nu.
"""

import numpy as np

from .errors import NotAGlm, UnsupportedResponse

GAUSSIAN = "gaussian"
LOGISTIC = "logistic"
POISSON = "poisson"
LOGCOSH = "logcosh"

_GLM_KINDS = (GAUSSIAN, LOGISTIC, POISSON)


def _softplus(v):
    # log(1 + e^v), stable for large |v|
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


def _sigmoid(v):
    out = np.empty_like(v, dtype=float)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


class LossFamily:
    """A loss m(y, nu), its first two nu-derivatives, and the GLM mean map.

    Instances are immutable and stateless; every method is vectorized over
    numpy arrays and safe to share across threads.
    """

    def __init__(self, kind, alpha=0.3):
        if kind not in (_GLM_KINDS + (LOGCOSH,)):
            raise ValueError(f"unknown loss family {kind!r}")
        if kind == LOGCOSH and alpha <= 0:
            raise ValueError("logcosh sharpness must be positive")
        self.kind = kind
        self.alpha = float(alpha)

    def __repr__(self):
        if self.kind == LOGCOSH:
            return f"LossFamily({self.kind!r}, alpha={self.alpha})"
        return f"LossFamily({self.kind!r})"

    def __eq__(self, other):
        return (isinstance(other, LossFamily)
                and self.kind == other.kind and self.alpha == other.alpha)

    @property
    def is_glm(self):
        return self.kind in _GLM_KINDS

    @property
    def name(self):
        """Config-string form, parseable by parse_family."""
        if self.kind == LOGCOSH:
            return f"logcosh:{self.alpha:g}"
        return self.kind

    def validate_response(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == LOGISTIC:
            if not np.all((y == 0.0) | (y == 1.0)):
                raise UnsupportedResponse("logistic responses must be 0/1")
        elif self.kind == POISSON:
            if not np.all((y >= 0.0) & (y == np.floor(y))):
                raise UnsupportedResponse("poisson responses must be nonnegative integers")
        return y

    def value(self, y, nu):
        y = np.asarray(y, dtype=float)
        nu = np.asarray(nu, dtype=float)
        if self.kind == GAUSSIAN:
            return 0.5 * (y - nu) ** 2
        if self.kind == LOGISTIC:
            return _softplus(nu) - y * nu
        if self.kind == POISSON:
            return np.exp(nu) - y * nu
        z = self.alpha * (y - nu)
        # log cosh(z) = |z| + log1p(e^{-2|z|}) - log 2
        return (np.abs(z) + np.log1p(np.exp(-2.0 * np.abs(z))) - np.log(2.0)) / self.alpha

    def grad(self, y, nu):
        y = np.asarray(y, dtype=float)
        nu = np.asarray(nu, dtype=float)
        if self.kind == GAUSSIAN:
            return nu - y
        if self.kind == LOGISTIC:
            return _sigmoid(nu) - y
        if self.kind == POISSON:
            return np.exp(nu) - y
        return np.tanh(self.alpha * (nu - y))

    def hess(self, y, nu):
        y = np.asarray(y, dtype=float)
        nu = np.asarray(nu, dtype=float)
        if self.kind == GAUSSIAN:
            return np.ones_like(nu)
        if self.kind == LOGISTIC:
            s = _sigmoid(nu)
            return s * (1.0 - s)
        if self.kind == POISSON:
            return np.exp(nu)
        t = np.tanh(self.alpha * (nu - y))
        return self.alpha * (1.0 - t * t)

    def inverse_link(self, nu):
        """Map the linear predictor to the mean scale (GLM kinds only)."""
        if not self.is_glm:
            raise NotAGlm("log-cosh has no canonical mean map; predict on the nu scale")
        nu = np.asarray(nu, dtype=float)
        if self.kind == GAUSSIAN:
            return nu
        if self.kind == LOGISTIC:
            return _sigmoid(nu)
        return np.exp(nu)


def parse_family(name):
    """Build a LossFamily from its config string: gaussian|logistic|poisson|logcosh:<alpha>."""
    name = name.strip().lower()
    if name.startswith("logcosh"):
        if ":" in name:
            _, alpha = name.split(":", 1)
            return LossFamily(LOGCOSH, alpha=float(alpha))
        return LossFamily(LOGCOSH)
    return LossFamily(name)
