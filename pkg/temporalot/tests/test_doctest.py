import doctest
from unittest import TestCase

import numpy as np

from temporalot import bucket, core, evaluation, losses, oracle, similarity, sinkhorn, tempalign, util


def diagonal_mass(plan):
    """
    >>> from temporalot.sinkhorn import sinkhorn_plan, SolverConfig
    >>> plan, _ = sinkhorn_plan(np.eye(3), None, SolverConfig(epsilon=0.01, max_iters=200))
    >>> round(diagonal_mass(plan), 6)
    1.0
    """
    return float(np.trace(plan.values))


class TestDoctests(TestCase):
    def _run(self, module):
        result = doctest.testmod(module, optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE)
        assert result.failed == 0
        return result

    def test_core(self):
        assert self._run(core).attempted > 0

    def test_similarity(self):
        assert self._run(similarity).attempted > 0

    def test_sinkhorn(self):
        assert self._run(sinkhorn).attempted > 0

    def test_bucket(self):
        assert self._run(bucket).attempted > 0

    def test_losses(self):
        assert self._run(losses).attempted > 0

    def test_tempalign(self):
        assert self._run(tempalign).attempted > 0

    def test_evaluation(self):
        assert self._run(evaluation).attempted > 0

    def test_oracle(self):
        assert self._run(oracle).attempted > 0

    def test_util(self):
        assert self._run(util).attempted > 0

    def test_this_module(self):
        import sys
        self._run(sys.modules[__name__])
