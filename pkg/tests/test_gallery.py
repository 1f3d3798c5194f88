import json

import numpy as np
import pytest

from cpdilate.errors import ParameterOutOfRange
from cpdilate.gallery import BHAT_THRESHOLD, EXAMPLES, bhat, bhat_kraus, parrot, unitalized_pair_not_strong


@pytest.mark.parametrize("name", sorted(EXAMPLES))
def test_example_passes(name):
    rep = EXAMPLES[name]()
    failed = [c.id for c in rep.claims if not c.passed]
    assert rep.passed, failed
    assert rep.claims


@pytest.mark.parametrize("name", sorted(EXAMPLES))
def test_report_is_json(name):
    d = EXAMPLES[name]().to_dict()
    assert set(d) == {"example", "header", "claims", "verdict", "pass"}
    for c in d["claims"]:
        assert set(c) == {"id", "expected", "computed", "residual", "pass"}
    assert json.loads(json.dumps(d)) == d


def test_bhat_parameter_range():
    with pytest.raises(ParameterOutOfRange):
        bhat(BHAT_THRESHOLD - 0.01)
    with pytest.raises(ParameterOutOfRange):
        bhat(float("nan"))
    assert bhat(BHAT_THRESHOLD).passed
    assert bhat(20.0).passed


def test_bhat_kraus_sum_norm_oracle():
    # the largest eigenvalue of sum c_i^* c_i is the norm of T(1)
    for c in (BHAT_THRESHOLD, 6.0, 11.0):
        s = sum(k.conj().T @ k for k in bhat_kraus(c))
        assert abs(np.linalg.eigvalsh(s).max() - (5 + np.sqrt(13)) / (2 * c)) <= 1e-12


@pytest.mark.parametrize("b", [0.0, 1.0, -0.2, 1.5])
def test_unitalized_pair_parameter_range(b):
    with pytest.raises(ParameterOutOfRange):
        unitalized_pair_not_strong(b)


def test_unitalized_pair_other_parameters():
    for b in (0.1, 0.9):
        assert unitalized_pair_not_strong(b).passed


def test_parrot_commuting_variant_is_inconclusive():
    rep = parrot(trials=20, commuting=True)
    assert rep.passed and rep.verdict == "inconclusive"
    assert rep.claim("commutator_norm").computed == 0.0


def test_parrot_seeds():
    for seed in range(3):
        rep = parrot(trials=50, seed=seed)
        assert rep.passed and rep.claim("forced_relation_margin").computed > 0
