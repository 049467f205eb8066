"""Problem dimensions, environments, losses, comparator and regret accounting."""
from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemDims:
    d: int
    K: int
    T: int
    sigma: float = 1.0
    R: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.K < 2 or self.T < 1:
            raise ConfigError(f"need d >= 1, K >= 2, T >= 1 (got d={self.d}, K={self.K}, T={self.T})")
        if not (self.sigma > 0 and self.R > 0):
            raise ConfigError("sigma and R must be positive")
        if self.sigma * self.R > 1.0 + NORM_TOL:
            raise ConfigError(f"sigma*R = {self.sigma * self.R} exceeds 1; losses could leave [-1, 1]")


def check_context(x, dims):
    x = np.asarray(x, dtype=float)
    if x.shape != (dims.d,):
        raise ConfigError(f"context must have shape ({dims.d},)")
    if np.linalg.norm(x) > dims.sigma * (1 + NORM_TOL) + NORM_TOL:
        raise ConfigError(f"context norm {np.linalg.norm(x)} exceeds sigma = {dims.sigma}")
    return x


def check_theta(theta, dims):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (dims.K, dims.d):
        raise ConfigError(f"theta must have shape ({dims.K}, {dims.d})")
    norms = np.linalg.norm(theta, axis=1)
    if np.any(norms > dims.R * (1 + NORM_TOL) + NORM_TOL):
        raise ConfigError(f"theta row norm {norms.max()} exceeds R = {dims.R}")
    return theta


def check_simplex(q, floor=0.0, tol=1e-12):
    q = np.asarray(q, dtype=float)
    if np.any(q < floor - tol) or abs(q.sum() - 1.0) > tol * max(1, q.size):
        raise ConfigError("not a point of the (clipped) simplex")
    return q


# ---------------------------------------------------------------- contexts

@dataclass(frozen=True, eq=False)
class TruncatedGaussian:
    """N(mean, cov) conditioned on the ball of radius ``radius``."""
    mean: np.ndarray
    cov: np.ndarray
    radius: float
    kind: str = field(default="truncated-gaussian", init=False)

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))
        object.__setattr__(self, "_chol", np.linalg.cholesky(self.cov))

    @property
    def d(self):
        return self.mean.size

    def sample(self, n, rng):
        out = np.empty((n, self.d))
        filled = 0
        batch = max(16, int(1.3 * n))
        tries = 0
        while filled < n:
            z = rng.standard_normal((batch, self.d)) @ self._chol.T + self.mean
            z = z[np.einsum("ij,ij->i", z, z) <= self.radius ** 2]
            take = min(n - filled, z.shape[0])
            out[filled:filled + take] = z[:take]
            filled += take
            tries += 1
            if tries > 1000:
                raise ConfigError("truncated Gaussian acceptance rate is too low")
        return out


@dataclass(frozen=True, eq=False)
class UniformBall:
    d: int
    radius: float
    kind: str = field(default="uniform-ball", init=False)

    def sample(self, n, rng):
        g = rng.standard_normal((n, self.d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = self.radius * rng.random(n) ** (1.0 / self.d)
        return g * r[:, None]


@dataclass(frozen=True, eq=False)
class UniformBox:
    lo: np.ndarray
    hi: np.ndarray
    kind: str = field(default="uniform-box", init=False)

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.hi < self.lo):
            raise ConfigError("box needs lo <= hi of equal shapes")

    @property
    def d(self):
        return self.lo.size

    @property
    def max_norm(self):
        return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))

    def sample(self, n, rng):
        return self.lo + (self.hi - self.lo) * rng.random((n, self.d))


# ---------------------------------------------------------------- adversaries

@dataclass(frozen=True, eq=False)
class FixedTheta:
    theta: np.ndarray
    kind: str = field(default="fixed-theta", init=False)

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))

    def emit(self, t, actions):
        return self.theta


@dataclass(frozen=True, eq=False)
class DriftingTheta:
    """Base parameters rotated by ``rate * (t - 1)`` radians in the first
    coordinate plane; norms are preserved."""
    theta: np.ndarray
    rate: float
    kind: str = field(default="drifting-theta", init=False)

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if self.theta.shape[1] < 2:
            raise ConfigError("drifting adversary needs d >= 2")

    def emit(self, t, actions):
        ang = self.rate * (t - 1)
        c, s = np.cos(ang), np.sin(ang)
        out = self.theta.copy()
        out[:, 0] = c * self.theta[:, 0] - s * self.theta[:, 1]
        out[:, 1] = s * self.theta[:, 0] + c * self.theta[:, 1]
        return out


@dataclass(frozen=True, eq=False)
class HistoryAdaptive:
    """Punishes an arm chosen from the action history.

    rule ``most-played``: the empirically most played arm so far (lowest
    index on ties); rule ``last-played``: the arm played in the previous
    round.  The punished arm's parameter becomes ``magnitude * direction``;
    other arms keep their base parameters.
    """
    theta: np.ndarray
    rule: str = "most-played"
    magnitude: float = 1.0
    direction: np.ndarray = None
    kind: str = field(default="history-adaptive", init=False)

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if self.rule not in ("most-played", "last-played"):
            raise ConfigError(f"unknown adaptive rule {self.rule!r}")
        u = np.zeros(self.theta.shape[1]) if self.direction is None else np.asarray(self.direction, float)
        if self.direction is None:
            u[0] = 1.0
        object.__setattr__(self, "direction", u / np.linalg.norm(u))

    def emit(self, t, actions):
        out = self.theta.copy()
        if len(actions) == 0:
            return out
        if self.rule == "most-played":
            arm = int(np.argmax(np.bincount(actions, minlength=out.shape[0])))
        else:
            arm = int(actions[-1])
        out[arm] = self.magnitude * self.direction
        return out


# ---------------------------------------------------------------- environment

_CHECK_SAMPLES = 100_000
_CHECK_SEED = 20240601


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    contexts: object
    adversary: object
    dims: ProblemDims
    nonnegative: bool = False
    name: str = ""

    def __post_init__(self):
        if self.contexts.d != self.dims.d:
            raise ConfigError("context dimension does not match dims.d")
        base = getattr(self.adversary, "theta", None)
        if base is not None:
            check_theta(base, self.dims)
        if isinstance(self.contexts, UniformBox) and self.contexts.max_norm > self.dims.sigma * (1 + NORM_TOL):
            raise ConfigError("box corners exceed the context norm bound sigma")
        if isinstance(self.contexts, (UniformBall, TruncatedGaussian)):
            if self.contexts.radius > self.dims.sigma * (1 + NORM_TOL):
                raise ConfigError("context radius exceeds sigma")
        if self.nonnegative:
            if not (isinstance(self.contexts, UniformBox) and np.all(self.contexts.lo >= 0)):
                raise ConfigError("nonnegative environments need box contexts in the nonnegative orthant")
            if base is not None and np.any(base < 0):
                raise ConfigError("nonnegative environments need nonnegative parameters")
        rng = np.random.default_rng(_CHECK_SEED)
        X = self.contexts.sample(_CHECK_SAMPLES, rng)
        lam = float(np.linalg.eigvalsh(X.T @ X / X.shape[0])[0])
        if not lam > 0:
            raise ConfigError("context second-moment matrix is singular")
        object.__setattr__(self, "lambda_min_estimate", lam)

    def theta(self, t, actions):
        """Adversary emission for round t given past actions (before X_t is drawn)."""
        th = check_theta(self.adversary.emit(t, np.asarray(actions, dtype=int)), self.dims)
        if self.nonnegative and np.any(th < 0):
            raise ConfigError("negative parameter emitted in a nonnegative environment")
        return th

    def draw_contexts(self, n, rng):
        X = self.contexts.sample(n, rng)
        if np.any(np.einsum("ij,ij->i", X, X) > (self.dims.sigma * (1 + NORM_TOL)) ** 2):
            raise ConfigError("drawn context exceeds sigma")
        return X

    def draw_context(self, rng):
        return self.draw_contexts(1, rng)[0]


# ---------------------------------------------------------------- losses and regret

def evaluate_loss(x, theta, a):
    theta = np.asarray(theta, dtype=float)
    if not 0 <= a < theta.shape[0]:
        raise IndexError(f"arm {a} out of range")
    return float(np.dot(x, theta[a]))


def comparator_policy(theta_sum, x):
    """argmin_a <x, theta_sum_a>, lowest index on ties."""
    return int(np.argmin(np.asarray(theta_sum, dtype=float) @ np.asarray(x, dtype=float)))


def comparator_losses(contexts, thetas):
    """Per-round loss of the best fixed linear classifier in hindsight."""
    contexts = np.asarray(contexts, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    theta_sum = thetas.sum(axis=0)
    arms = np.argmin(contexts @ theta_sum.T, axis=1)
    return np.einsum("td,td->t", contexts, thetas[np.arange(len(arms)), arms])


COLUMNS = ("t", "action", "loss", "comparator_loss", "cum_loss", "cum_regret", "eta",
           "rejections", "flag_forced_accept", "flag_mgr_capped")


class RegretTrace:
    """Per-round record of one run, owned by that run."""

    def __init__(self, T):
        self.T = T
        self.actions, self.losses, self.etas = [], [], []
        self.rejections, self.forced, self.mgr_capped = [], [], []
        self.contexts, self.thetas, self.diagnostics = [], [], []
        self.comparator = None

    def __len__(self):
        return len(self.actions)

    def record(self, x, theta, action, loss, eta, rejections=0, forced=False,
               mgr_capped=False, diagnostics=None):
        self.contexts.append(np.asarray(x, dtype=float))
        self.thetas.append(np.asarray(theta, dtype=float))
        self.actions.append(int(action))
        self.losses.append(float(loss))
        self.etas.append(float(eta))
        self.rejections.append(int(rejections))
        self.forced.append(bool(forced))
        self.mgr_capped.append(bool(mgr_capped))
        self.diagnostics.append(dict(diagnostics or {}))

    @property
    def complete(self):
        return len(self) == self.T

    def finalize(self):
        """Compute comparator losses once the whole parameter history is known."""
        if not self.complete:
            raise ConfigError(f"trace incomplete: {len(self)} of {self.T} rounds")
        self.comparator = comparator_losses(np.array(self.contexts), np.array(self.thetas))
        return self

    @property
    def cum_loss(self):
        return np.cumsum(self.losses)

    @property
    def cum_regret(self):
        if self.comparator is None:
            self.finalize()
        return np.cumsum(np.asarray(self.losses) - self.comparator)

    def diagnostic(self, key, default=np.nan):
        return np.array([d.get(key, default) for d in self.diagnostics], dtype=float)

    def rows(self):
        cl, cr = self.cum_loss, self.cum_regret
        for t in range(len(self)):
            yield (t + 1, self.actions[t], self.losses[t], float(self.comparator[t]),
                   float(cl[t]), float(cr[t]), self.etas[t], self.rejections[t],
                   int(self.forced[t]), int(self.mgr_capped[t]))


def empirical_regret(trace, env=None, theta_history=None):
    """Realized regret sum_t [loss_t - loss_t(pi*(X_t))] of a completed trace."""
    if not trace.complete:
        raise ConfigError("incomplete trace")
    thetas = np.asarray(trace.thetas if theta_history is None else theta_history, dtype=float)
    comp = comparator_losses(np.array(trace.contexts), thetas)
    return float(np.sum(trace.losses) - np.sum(comp))
