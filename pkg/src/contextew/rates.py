"""Adaptive learning rates and the Freedman-type confidence values behind them.

All logarithms are natural.  Each schedule at round t uses the statistic
accumulated through round t-1, so eta is non-increasing along any run.
"""
import math
from dataclasses import dataclass, field


class RateError(RuntimeError):
    pass


def default_gamma(dims):
    """Truncation level gamma = 4 ln(10 d K T)."""
    return 4.0 * math.log(10.0 * dims.d * dims.K * dims.T)


def g_term(V, T, variant="main"):
    """G = 8 sqrt(V ln(2T^2) + 144 ln^2 T) + 176 ln T.

    ``variant="appendix"`` uses 8 sqrt(2 V ln T + 144 ln^2 T) + 176 ln T.
    """
    lnT = math.log(T)
    if variant == "main":
        inner = V * math.log(2.0 * T * T) + 144.0 * lnT ** 2
    elif variant == "appendix":
        inner = 2.0 * V * lnT + 144.0 * lnT ** 2
    else:
        raise ValueError(f"unknown G variant {variant!r}")
    return 8.0 * math.sqrt(inner) + 176.0 * lnT


def h_term(L, T):
    """H = 8 sqrt(2 L ln T + 40 ln^2 T) + 72 ln T."""
    lnT = math.log(T)
    return 8.0 * math.sqrt(2.0 * L * lnT + 40.0 * lnT ** 2) + 72.0 * lnT


def second_order_eta(V_hat_prev, dims, gamma, variant="main"):
    if V_hat_prev < 0:
        raise RateError("V-hat must be non-negative")
    G = g_term(V_hat_prev, dims.T, variant)
    return (100.0 * dims.d * dims.K * gamma ** 2 + dims.d * (V_hat_prev + 1.0 + G)) ** -0.5


def first_order_eta(L_hat_prev, dims, gamma):
    if L_hat_prev < 0:
        raise RateError("negative cumulative loss in first-order mode (losses must be non-negative)")
    H = h_term(L_hat_prev, dims.T)
    return (100.0 * dims.d * gamma ** 2 + dims.d * dims.K * (L_hat_prev + 1.0 + H)) ** -0.5


def resampling_eta(L_hat_prev, dims, variant="main"):
    if L_hat_prev < 0:
        raise RateError("negative cumulative loss in the resampling schedule")
    G = g_term(L_hat_prev, dims.T, variant)
    return 0.1 * (2.0 * dims.d * dims.K * (L_hat_prev + 1.0 + G)) ** -0.5


def resampling_variance_term(eta, dims, params):
    """eta^2 d sigma^2 (4/lambda^2) ln^2(1/(eps lambda)); the schedule needs <= 1/100."""
    lam, eps = params.lambda_t, params.epsilon
    return eta ** 2 * dims.d * dims.sigma ** 2 * 4.0 / lam ** 2 * math.log(1.0 / (eps * lam)) ** 2


def freedman_bound(hat_sum, ln_inv_delta, kind):
    """Upper confidence value from the empirical sum.

    variance: V + 8 sqrt(V l + 72 l^2) + 88 l
    loss:     L + 8 sqrt(L l + 20 l^2) + 36 l
    with l = ln_inv_delta.
    """
    if hat_sum < 0 or not ln_inv_delta > 0:
        raise ValueError("need hat_sum >= 0 and ln_inv_delta > 0")
    l = ln_inv_delta
    if kind == "variance":
        return hat_sum + 8.0 * math.sqrt(hat_sum * l + 72.0 * l * l) + 88.0 * l
    if kind == "loss":
        return hat_sum + 8.0 * math.sqrt(hat_sum * l + 20.0 * l * l) + 36.0 * l
    raise ValueError(f"unknown bound kind {kind!r}")


@dataclass
class RateState:
    gamma: float
    V_hat: float = 0.0
    L_hat: float = 0.0
    eta_history: list = field(default_factory=list)

    def push_eta(self, eta):
        """Record eta_t; a schedule that increases is a hard error."""
        if not (eta > 0 and math.isfinite(eta)):
            raise RateError(f"invalid learning rate {eta}")
        if self.eta_history and eta > self.eta_history[-1]:
            raise RateError(f"learning rate increased: {self.eta_history[-1]} -> {eta}")
        self.eta_history.append(eta)
        return eta

    def update(self, loss, centre=0.0):
        """Add the round's loss; ``centre`` is <x_t, m_{t, A_t}>."""
        self.V_hat += (loss - centre) ** 2
        self.L_hat += loss
