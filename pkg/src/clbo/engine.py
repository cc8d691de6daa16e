"""The co-learning optimization loop.

Per cycle: refit the surrogates (a coregionalized GP over the bootstrap
subsets plus, optionally, a full-data single-output GP), pick one
EI-maximizing query per surrogate output with a minimum-distance remedy,
evaluate the batch, then exchange the new samples between the training
sets so that incumbent improvements propagate across models while the
subsets stay diverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .acquisition import (
    AcquisitionConfig,
    expected_improvement,
    influence_function,
    maximize_acquisition,
    z_regime,
)
from .exceptions import EvaluationFailure
from .gp import SingleOutputGP
from .mogp import CoregionalizedGP, bootstrap_subsets
from .preprocessing import BoxTransform, latin_hypercube

#: how many substitute draws to attempt when evaluations keep failing
MAX_EVAL_RETRIES = 100


@dataclass
class QueryRecord:
    """One evaluated point inside an optimization cycle."""

    x: np.ndarray  # normalized coordinates
    provenance: str  # "init", "sogp" or "mfgp<i>"
    y: float
    z: float = math.nan
    regime: str = ""
    pei_invoked: bool = False
    substituted: bool = False  # random restart replaced a failed evaluation


@dataclass
class IterationRecord:
    """What happened in one optimization cycle."""

    iteration: int
    queries: list
    f_min: float
    n_total: int
    diagnostics: dict | None = None


@dataclass
class EngineState:
    """Mutable optimizer state: master data, subsets, incumbent, counters."""

    X: np.ndarray  # master inputs, normalized (n, d)
    y: np.ndarray  # raw objective values (n,)
    subsets: object = None
    f_min: float = math.inf
    x_min: np.ndarray | None = None
    n_total: int = 0
    t_total: int = 0
    n_failures: int = 0
    history: list = field(default_factory=list)

    def absorb(self, x, y_val):
        self.X = np.vstack([self.X, x])
        self.y = np.append(self.y, y_val)
        self.n_total += 1
        if y_val < self.f_min:
            self.f_min = float(y_val)
            self.x_min = np.asarray(x, dtype=float).copy()


@dataclass
class ModelBundle:
    """The fitted surrogates of one cycle.

    ``subset_views`` expose one ``predict``/``lengthscales_`` facade per
    output, regardless of whether the outputs are coupled.
    """

    sogp: object | None
    subset_views: list
    mogp: object | None = None


@dataclass
class OptimizationResult:
    """Outcome of one optimization run."""

    problem_name: str
    best_x: np.ndarray  # raw coordinates
    best_f: float
    n_evaluations: int
    n_iterations: int
    n_failures: int
    history: list
    f_min_by_call: np.ndarray  # incumbent after each objective evaluation

    def regret_by_call(self, known_optimum):
        return self.f_min_by_call - known_optimum


class CoLearningBO(BaseEstimator):
    """Batched Bayesian optimizer driven by cooperating GP surrogates.

    Parameters
    ----------
    n_subsets : int
        Number of bootstrap subsets (one surrogate output each).
    use_sogp : bool
        Also train a full-data single-output GP and query it each cycle.
    coupled_subsets : bool
        Couple the subset surrogates through the shared-lengthscale
        multi-output GP. With False each subset gets an independently
        fitted single-output GP (the diversity-only ablation).
    n_init, n_budget : int, optional
        Initial design size and total evaluation budget; default to six
        and thirty times the problem dimension.
    t_max : int, optional
        Iteration cap; defaults to twice the cycles the budget implies.
        Guards against stalls once the distance threshold keeps rejecting
        near-duplicate queries.
    epsilon : float
        Minimum allowed distance (normalized coordinates) between a new
        query and all known points before the pseudo-EI remedy kicks in.
    retain_own_query : bool
        Whether each subset keeps the point its own output queried. Without
        it, subsets only grow on incumbent improvements.
    n_restarts, max_opt_iter : int
        Multi-start budget of the hyperparameter searches.
    warm_start : bool
        Seed each refit with the previous cycle's hyperparameters and trim
        the remaining restarts, which roughly halves refit cost.
    acq_starts, acq_refine_top, acq_maxiter :
        Multi-start budget of the acquisition maximizer.
    fixed_noise : float, optional
        Pin surrogate noise variances instead of learning them.
    model_builder : callable, optional
        ``(state, rng) -> ModelBundle`` override, used to stub the
        surrogate layer in tests.
    random_state : int or None
        Seed; identical seeds give bit-identical runs.
    """

    def __init__(
        self,
        n_subsets=2,
        use_sogp=True,
        coupled_subsets=True,
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
        self.n_subsets = n_subsets
        self.use_sogp = use_sogp
        self.coupled_subsets = coupled_subsets
        self.n_init = n_init
        self.n_budget = n_budget
        self.t_max = t_max
        self.epsilon = epsilon
        self.retain_own_query = retain_own_query
        self.n_restarts = n_restarts
        self.max_opt_iter = max_opt_iter
        self.warm_start = warm_start
        self.acq_starts = acq_starts
        self.acq_refine_top = acq_refine_top
        self.acq_maxiter = acq_maxiter
        self.fixed_noise = fixed_noise
        self.model_builder = model_builder
        self.random_state = random_state

    # ------------------------------------------------------------------
    # public API
    # ------------------------------------------------------------------

    @property
    def batch_size(self):
        return self.n_subsets + (1 if self.use_sogp else 0)

    def minimize(self, problem, observer=None):
        """Run the full optimization loop on ``problem``.

        ``observer``, when given, is called as ``observer(state, models)``
        after each cycle's exchange; whatever dict it returns is attached
        to that cycle's record.
        """
        if self.n_subsets < 1:
            raise ValueError("n_subsets must be at least 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
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

        state = self._initialize(problem, box, n_init, rng)
        warm = {}

        while state.n_total < n_budget and state.t_total < t_max:
            models = self._build_models(state, rng, warm)
            planned = self._search_batch(state, models, rng)
            queries = self._evaluate_batch(problem, box, planned, rng, state)
            self._exchange(state, queries, rng)
            state.t_total += 1
            record = IterationRecord(
                iteration=state.t_total,
                queries=queries,
                f_min=state.f_min,
                n_total=state.n_total,
            )
            if observer is not None:
                record.diagnostics = observer(state, models)
            state.history.append(record)

        return self._result(problem, box, state)

    # ------------------------------------------------------------------
    # loop pieces
    # ------------------------------------------------------------------

    def _initialize(self, problem, box, n_init, rng):
        design = latin_hypercube(n_init, problem.dim, rng)
        state = EngineState(X=np.empty((0, problem.dim)), y=np.empty(0))
        queries = []
        for u in design:
            x, y_val, substituted = self._evaluate_point(problem, box, u, rng, state)
            state.absorb(x, y_val)
            queries.append(
                QueryRecord(x=x, provenance="init", y=y_val, substituted=substituted)
            )
        state.subsets = bootstrap_subsets(state.X, state.y, self.n_subsets, rng)
        state.history.append(
            IterationRecord(
                iteration=0, queries=queries, f_min=state.f_min, n_total=state.n_total
            )
        )
        return state

    def _evaluate_point(self, problem, box, u, rng, state):
        """Evaluate one normalized point, substituting random draws on failure."""
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

    def _fit_budget(self, previous):
        """(explicit starts, restart count) given last cycle's parameters."""
        if previous is None or not self.warm_start:
            return None, self.n_restarts
        return [previous], max(3, math.ceil(self.n_restarts / 3))

    def _build_models(self, state, rng, warm=None):
        warm = {} if warm is None else warm
        if self.model_builder is not None:
            return self.model_builder(state, rng)
        # child seeds are drawn in a fixed order to keep runs reproducible
        sogp = None
        if self.use_sogp:
            starts, restarts = self._fit_budget(warm.get("sogp"))
            sogp = SingleOutputGP(
                n_restarts=restarts,
                max_opt_iter=self.max_opt_iter,
                fixed_noise=self.fixed_noise,
                initial_params=starts,
                random_state=int(rng.integers(2**31)),
            ).fit(state.X, state.y)
            warm["sogp"] = sogp.params_
        if self.coupled_subsets:
            starts, restarts = self._fit_budget(warm.get("mogp"))
            mogp = CoregionalizedGP(
                n_restarts=restarts,
                max_opt_iter=self.max_opt_iter,
                fixed_noise=self.fixed_noise,
                initial_params=starts,
                random_state=int(rng.integers(2**31)),
            ).fit(state.subsets)
            warm["mogp"] = mogp.params_
            views = [mogp.output_view(j) for j in range(self.n_subsets)]
            return ModelBundle(sogp=sogp, subset_views=views, mogp=mogp)
        views = []
        subset_warm = warm.setdefault("subset_gps", [None] * self.n_subsets)
        for i, (X_i, y_i) in enumerate(zip(state.subsets.X_list, state.subsets.y_list)):
            starts, restarts = self._fit_budget(subset_warm[i])
            view = SingleOutputGP(
                n_restarts=restarts,
                max_opt_iter=self.max_opt_iter,
                fixed_noise=self.fixed_noise,
                initial_params=starts,
                random_state=int(rng.integers(2**31)),
            ).fit(X_i, y_i)
            subset_warm[i] = view.params_
            views.append(view)
        return ModelBundle(sogp=sogp, subset_views=views)

    def _acq_config(self):
        return AcquisitionConfig(
            n_starts=self.acq_starts,
            refine_top=self.acq_refine_top,
            refine_maxiter=self.acq_maxiter,
        )

    def _max_ei(self, model, state, rng, d):
        def evaluator(P):
            mean, var = model.predict(P, return_var=True)
            return expected_improvement(mean, var, state.f_min)

        x, _ = maximize_acquisition(
            evaluator,
            d,
            rng,
            config=self._acq_config(),
            extra_starts=[state.x_min] if state.x_min is not None else None,
        )
        return x

    def _max_pei(self, model, state, rng, d, anchor):
        ls = model.lengthscales_

        def evaluator(P):
            mean, var = model.predict(P, return_var=True)
            ei = expected_improvement(mean, var, state.f_min)
            return ei * influence_function(P, anchor, ls)

        x, _ = maximize_acquisition(
            evaluator,
            d,
            rng,
            config=self._acq_config(),
            extra_starts=[state.x_min] if state.x_min is not None else None,
        )
        return x

    def _search_batch(self, state, models, rng):
        """One EI query per surrogate output, with the distance remedy.

        Subset-surrogate candidates that land within ``epsilon`` of the
        master set or of earlier picks get replaced by the pseudo-EI
        maximizer anchored at the rejected candidate; a replacement that is
        still too close is accepted as is.
        """
        d = state.X.shape[1]
        planned = []  # (x, provenance, z, regime, pei_invoked)
        taken = [state.X]

        def min_distance(x):
            all_pts = np.vstack(taken)
            return float(np.min(np.linalg.norm(all_pts - x, axis=1)))

        if models.sogp is not None:
            x = self._max_ei(models.sogp, state, rng, d)
            z, regime = self._z_diag(models.sogp, x, state.f_min)
            planned.append((x, "sogp", z, regime, False))
            taken.append(x[None, :])

        for i, view in enumerate(models.subset_views):
            x = self._max_ei(view, state, rng, d)
            pei_invoked = False
            if min_distance(x) < self.epsilon:
                x = self._max_pei(view, state, rng, d, anchor=x)
                pei_invoked = True
            z, regime = self._z_diag(view, x, state.f_min)
            planned.append((x, f"mfgp{i}", z, regime, pei_invoked))
            taken.append(x[None, :])
        return planned

    def _z_diag(self, model, x, f_min):
        mean, var = model.predict(x[None, :], return_var=True)
        if var[0] <= 0:
            return math.nan, ""
        z = float((f_min - mean[0]) / math.sqrt(var[0]))
        return z, z_regime(z)

    def _evaluate_batch(self, problem, box, planned, rng, state):
        queries = []
        for x, tag, z, regime, pei_invoked in planned:
            x_eval, y_val, substituted = self._evaluate_point(
                problem, box, x, rng, state
            )
            queries.append(
                QueryRecord(
                    x=x_eval,
                    provenance=tag,
                    y=y_val,
                    z=z,
                    regime=regime,
                    pei_invoked=pei_invoked,
                    substituted=substituted,
                )
            )
        return queries

    def _exchange(self, state, queries, rng):
        """Fold a batch into the master set and the subsets.

        The master set absorbs everything. If the batch improved the
        incumbent: an improvement found by the full-data surrogate joins
        every subset, while an improvement found by subset output ``nbest``
        joins every other subset and the full-data query moves to one
        random subset. Without an improvement the full-data query still
        moves to one random subset. Each output's own query joins its own
        subset when ``retain_own_query`` is on.
        """
        old_f_min = state.f_min
        for q in queries:
            state.absorb(q.x, q.y)

        sogp_query = next((q for q in queries if q.provenance == "sogp"), None)
        subset_queries = [q for q in queries if q.provenance.startswith("mfgp")]

        if self.retain_own_query:
            for q in subset_queries:
                state.subsets.add(int(q.provenance[4:]), q.x, q.y)

        best = min(queries, key=lambda q: q.y)
        improved = best.y < old_f_min

        if improved and best.provenance == "sogp":
            for i in range(self.n_subsets):
                state.subsets.add(i, best.x, best.y)
        elif improved:
            nbest = min(subset_queries, key=lambda q: q.y)
            nbest_idx = int(nbest.provenance[4:])
            for i in range(self.n_subsets):
                if i != nbest_idx:
                    state.subsets.add(i, nbest.x, nbest.y)
            if sogp_query is not None:
                j = int(rng.integers(self.n_subsets))
                state.subsets.add(j, sogp_query.x, sogp_query.y)
        else:
            if sogp_query is not None:
                j = int(rng.integers(self.n_subsets))
                state.subsets.add(j, sogp_query.x, sogp_query.y)

    def _result(self, problem, box, state):
        calls = np.array(
            [q.y for record in state.history for q in record.queries], dtype=float
        )
        f_min_by_call = np.minimum.accumulate(calls)
        return OptimizationResult(
            problem_name=problem.name,
            best_x=box.inverse_transform(state.x_min),
            best_f=state.f_min,
            n_evaluations=state.n_total,
            n_iterations=state.t_total,
            n_failures=state.n_failures,
            history=state.history,
            f_min_by_call=f_min_by_call,
        )
