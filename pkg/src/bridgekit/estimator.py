"""scikit-learn style wrapper around training and sampling."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .net import Architecture, RegressorParams
from .bridge import ObjectiveKind
from .problems import ArraySource, PairSource
from .sampler import SamplerConfig, sample
from .schedule import DEFAULT_BETA0, DEFAULT_BETA_HALF
from .train import TrainConfig, train


class BridgeMatcher(BaseEstimator):
    """Learn a stochastic map from degraded endpoints ``Y1`` to clean endpoints ``X0``.

    Parameters
    ----------
    objective : str
        Regression target: ``endpoint``, ``bridge-length``, ``posterior-length``
        or ``endpoint-with-score``.
    schedule : str
        Bridge schedule kind, ``sb-quadratic-flip`` or ``sb-constant``.
    beta0, beta_half : float
        Noise levels at the endpoints and at ``t = 1/2``.
    hidden, depth : int
        Regressor width and number of residual blocks.
    steps, batch_size, learning_rate : training budget.
    method : str
        Sampler used by :meth:`predict`.
    n_steps : int, optional
        Sampler steps; the sampler default when ``None``.
    paired : bool
        Whether rows of ``X`` and ``Y`` passed to :meth:`fit` are coupled.
    random_state : int
        Seed for initialisation, training batches and sampling.

    Attributes
    ----------
    params_ : RegressorParams
    losses_ : list of float
    n_features_in_ : int
    """

    def __init__(self, objective="endpoint", schedule="sb-quadratic-flip", beta0=DEFAULT_BETA0,
                 beta_half=DEFAULT_BETA_HALF, hidden=128, depth=4, steps=2000, batch_size=128,
                 learning_rate=1e-3, mode="sde", method="euler-sde", n_steps=None, paired=True,
                 random_state=0):
        self.objective = objective
        self.schedule = schedule
        self.beta0 = beta0
        self.beta_half = beta_half
        self.hidden = hidden
        self.depth = depth
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.mode = mode
        self.method = method
        self.n_steps = n_steps
        self.paired = paired
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(objective=self.objective, steps=self.steps, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=self.random_state, mode=self.mode,
                           schedule={"kind": self.schedule, "beta0": self.beta0, "beta_half": self.beta_half})

    def fit(self, X, Y, condition=None):
        """Fit on clean samples ``X`` and degraded samples ``Y`` (rows paired if ``paired``)."""
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64)
        if condition is not None:
            condition = check_array(condition, dtype=np.float64)
        return self.fit_source(ArraySource(X, Y, condition, paired=self.paired))

    def fit_source(self, source: PairSource):
        """Fit from any pair source with ``sample(n, rng) -> (x0, y1, c)``."""
        cfg = self._train_config()
        kind = ObjectiveKind.parse(self.objective)
        arch = Architecture(state_dim=source.state_dim, out_dim=kind.output_width(source.state_dim),
                            cond_dim=getattr(source, "cond_dim", 0), hidden=self.hidden, depth=self.depth)
        rng = np.random.default_rng(self.random_state)
        params = RegressorParams.initialize(arch, rng)
        result = train(cfg, source, params, rng=rng)
        self.params_ = result.params
        self.losses_ = result.losses
        self.n_features_in_ = source.state_dim
        return self

    def predict(self, Y, condition=None, return_trajectory=False):
        """Generate one clean sample per row of ``Y``."""
        check_is_fitted(self, "params_")
        Y = check_array(Y, dtype=np.float64)
        if Y.shape[1] != self.n_features_in_:
            raise ValueError(f"Y has {Y.shape[1]} features, expected {self.n_features_in_}")
        if condition is not None:
            condition = check_array(condition, dtype=np.float64)
        cfg = SamplerConfig(method=self.method, n_steps=self.n_steps, seed=self.random_state,
                            objective=self.objective, record_trajectory=return_trajectory)
        x0, traj = sample(cfg, self.params_, self._train_config().noise_schedule, Y, condition)
        return (x0, traj) if return_trajectory else x0

    def transform(self, Y, condition=None):
        return self.predict(Y, condition)
