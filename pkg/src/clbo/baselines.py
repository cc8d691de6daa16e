"""Comparison optimizers built on the same GP and acquisition stack.

* EGO: the classic sequential loop, one EI-maximizing query per cycle.
* Constant liar: batches assembled by re-maximizing EI against a model
  that pretends pending queries already returned the incumbent value.
* Pseudo-EI batch: batches assembled by damping EI around the points
  already picked this cycle.
* MSBO: the co-learning loop with the agreement constraint removed; every
  subset gets an independently fitted single-output GP.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from .acquisition import (
    AcquisitionConfig,
    expected_improvement,
    influence_function,
    maximize_acquisition,
    z_regime,
)
from .engine import (
    MAX_EVAL_RETRIES,
    CoLearningBO,
    EngineState,
    IterationRecord,
    ModelBundle,
    OptimizationResult,
    QueryRecord,
)
from .exceptions import EvaluationFailure
from .gp import SingleOutputGP
from .preprocessing import BoxTransform, latin_hypercube


class _SingleSurrogateLoop(BaseEstimator):
    """Shared loop of the single-GP optimizers; subclasses pick the batch."""

    def __init__(
        self,
        batch_size=1,
        n_init=None,
        n_budget=None,
        t_max=None,
        n_restarts=10,
        max_opt_iter=100,
        warm_start=True,
        acq_starts=None,
        acq_refine_top=5,
        acq_maxiter=None,
        fixed_noise=None,
        random_state=None,
    ):
        self.batch_size = batch_size
        self.n_init = n_init
        self.n_budget = n_budget
        self.t_max = t_max
        self.n_restarts = n_restarts
        self.max_opt_iter = max_opt_iter
        self.warm_start = warm_start
        self.acq_starts = acq_starts
        self.acq_refine_top = acq_refine_top
        self.acq_maxiter = acq_maxiter
        self.fixed_noise = fixed_noise
        self.random_state = random_state

    def minimize(self, problem, observer=None):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        rng = np.random.default_rng(self.random_state)
        box = BoxTransform(problem.bounds).fit()
        d = problem.dim

        n_init = self.n_init if self.n_init is not None else 6 * d
        n_budget = self.n_budget if self.n_budget is not None else 30 * d
        if n_init < d + 1:
            raise ValueError("n_init must be at least dimension + 1")
        t_max = self.t_max
        if t_max is None:
            t_max = max(0, math.ceil(2 * (n_budget - n_init) / self.batch_size))

        state = EngineState(X=np.empty((0, d)), y=np.empty(0))
        init_queries = []
        for u in latin_hypercube(n_init, d, rng):
            x, y_val, substituted = self._evaluate_point(problem, box, u, rng, state)
            state.absorb(x, y_val)
            init_queries.append(
                QueryRecord(x=x, provenance="init", y=y_val, substituted=substituted)
            )
        state.history.append(
            IterationRecord(0, init_queries, state.f_min, state.n_total)
        )

        warm = None
        while state.n_total < n_budget and state.t_total < t_max:
            if warm is None or not self.warm_start:
                starts, restarts = None, self.n_restarts
            else:
                starts, restarts = [warm], max(3, math.ceil(self.n_restarts / 3))
            model = SingleOutputGP(
                n_restarts=restarts,
                max_opt_iter=self.max_opt_iter,
                fixed_noise=self.fixed_noise,
                initial_params=starts,
                random_state=int(rng.integers(2**31)),
            ).fit(state.X, state.y)
            warm = model.params_
            planned = self._select_batch(model, state, rng, d)
            queries = []
            for x, pei_invoked in planned:
                z, regime = self._z_diag(model, x, state.f_min)
                x_eval, y_val, substituted = self._evaluate_point(
                    problem, box, x, rng, state
                )
                queries.append(
                    QueryRecord(
                        x=x_eval,
                        provenance="sogp",
                        y=y_val,
                        z=z,
                        regime=regime,
                        pei_invoked=pei_invoked,
                        substituted=substituted,
                    )
                )
                state.absorb(x_eval, y_val)
            state.t_total += 1
            record = IterationRecord(
                state.t_total, queries, state.f_min, state.n_total
            )
            if observer is not None:
                record.diagnostics = observer(state, ModelBundle(model, []))
            state.history.append(record)

        calls = np.array(
            [q.y for record in state.history for q in record.queries], dtype=float
        )
        return OptimizationResult(
            problem_name=problem.name,
            best_x=box.inverse_transform(state.x_min),
            best_f=state.f_min,
            n_evaluations=state.n_total,
            n_iterations=state.t_total,
            n_failures=state.n_failures,
            history=state.history,
            f_min_by_call=np.minimum.accumulate(calls),
        )

    def _evaluate_point(self, problem, box, u, rng, state):
        substituted = False
        for _ in range(MAX_EVAL_RETRIES):
            try:
                return np.asarray(u, dtype=float), float(
                    problem.evaluate(box.inverse_transform(u))
                ), substituted
            except EvaluationFailure:
                state.n_failures += 1
                substituted = True
                u = rng.uniform(0.0, 1.0, size=problem.dim)
        raise RuntimeError(
            f"objective failed {MAX_EVAL_RETRIES} times in a row on {problem.name}"
        )

    def _z_diag(self, model, x, f_min):
        mean, var = model.predict(x[None, :], return_var=True)
        if var[0] <= 0:
            return math.nan, ""
        z = float((f_min - mean[0]) / math.sqrt(var[0]))
        return z, z_regime(z)

    def _acq_config(self):
        return AcquisitionConfig(
            n_starts=self.acq_starts,
            refine_top=self.acq_refine_top,
            refine_maxiter=self.acq_maxiter,
        )

    def _max_ei(self, model, state, rng, d, extra_factor=None):
        def evaluator(P):
            mean, var = model.predict(P, return_var=True)
            ei = expected_improvement(mean, var, state.f_min)
            return ei if extra_factor is None else ei * extra_factor(P)

        x, _ = maximize_acquisition(
            evaluator,
            d,
            rng,
            config=self._acq_config(),
            extra_starts=[state.x_min] if state.x_min is not None else None,
        )
        return x

    def _select_batch(self, model, state, rng, d):
        raise NotImplementedError


class EGO(_SingleSurrogateLoop):
    """Sequential EI-driven optimization with a full-data GP."""

    def __init__(
        self,
        n_init=None,
        n_budget=None,
        t_max=None,
        n_restarts=10,
        max_opt_iter=100,
        warm_start=True,
        acq_starts=None,
        acq_refine_top=5,
        acq_maxiter=None,
        fixed_noise=None,
        random_state=None,
    ):
        super().__init__(
            batch_size=1,
            n_init=n_init,
            n_budget=n_budget,
            t_max=t_max,
            n_restarts=n_restarts,
            max_opt_iter=max_opt_iter,
            warm_start=warm_start,
            acq_starts=acq_starts,
            acq_refine_top=acq_refine_top,
            acq_maxiter=acq_maxiter,
            fixed_noise=fixed_noise,
            random_state=random_state,
        )

    def _select_batch(self, model, state, rng, d):
        return [(self._max_ei(model, state, rng, d), False)]


class ConstantLiarBO(_SingleSurrogateLoop):
    """Batch selection by repeatedly lying that pending queries scored
    the incumbent value (the CL-min variant)."""

    def _select_batch(self, model, state, rng, d):
        planned = []
        liar = model
        for _ in range(self.batch_size):
            x = self._max_ei(liar, state, rng, d)
            planned.append((x, False))
            liar = liar.conditioned_on(x[None, :], [state.f_min])
        return planned


class PEIBatchBO(_SingleSurrogateLoop):
    """Batch selection by damping EI around the points already picked."""

    def _select_batch(self, model, state, rng, d):
        planned = []
        anchors = []

        def damping(P):
            out = np.ones(P.shape[0])
            for a in anchors:
                out *= influence_function(P, a, model.lengthscales_)
            return out

        for k in range(self.batch_size):
            x = self._max_ei(
                model, state, rng, d, extra_factor=damping if anchors else None
            )
            planned.append((x, k > 0))
            anchors.append(x)
        return planned


class MSBO(CoLearningBO):
    """The co-learning loop without the agreement constraint.

    Subset surrogates are independently fitted single-output GPs (own
    lengthscales each); everything else matches :class:`CoLearningBO`.
    """

    def __init__(
        self,
        n_subsets=2,
        use_sogp=True,
        n_init=None,
        n_budget=None,
        t_max=None,
        epsilon=1e-3,
        retain_own_query=True,
        n_restarts=10,
        max_opt_iter=100,
        warm_start=True,
        acq_starts=None,
        acq_refine_top=5,
        acq_maxiter=None,
        fixed_noise=None,
        model_builder=None,
        random_state=None,
    ):
        super().__init__(
            n_subsets=n_subsets,
            use_sogp=use_sogp,
            coupled_subsets=False,
            n_init=n_init,
            n_budget=n_budget,
            t_max=t_max,
            epsilon=epsilon,
            retain_own_query=retain_own_query,
            n_restarts=n_restarts,
            max_opt_iter=max_opt_iter,
            warm_start=warm_start,
            acq_starts=acq_starts,
            acq_refine_top=acq_refine_top,
            acq_maxiter=acq_maxiter,
            fixed_noise=fixed_noise,
            model_builder=model_builder,
            random_state=random_state,
        )
