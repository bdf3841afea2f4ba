import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opinionnet import _fallback
from opinionnet.randomness import RandomStream, stream_base, InvalidParameterError
from opinionnet.signals import (ConfigError, MediaLaw, Predicate, SignalModel, VertexAttributes,
                                build_law_table, external_signal, parse_media_law)

LAWS = [MediaLaw.uniform(-1, 1), MediaLaw.uniform(-0.03, 0.03), MediaLaw.twopoint([-1, 1], [0.5, 0.5]),
        MediaLaw.betashift(1, 8), MediaLaw.betashift(8, 1), MediaLaw.betashift(0.5, 0.7),
        MediaLaw.const(0.2), MediaLaw.copyq()]


def test_parse_roundtrip():
    for text in ["uniform(-1,1)", "twopoint(-1:0.25,1:0.75)", "betashift(8,1)", "const(1)", "copyq"]:
        law = parse_media_law(text)
        assert parse_media_law(law.describe()) == law
    for bad in ["uniform(-2,1)", "gauss(0,1)", "twopoint(-1:0.5,1:0.6)", "const(3)"]:
        with pytest.raises(ConfigError):
            parse_media_law(bad)


def test_predicates_first_match_wins():
    model = SignalModel.from_mapping(MediaLaw.const(0), [("s=1", "const(1)"), ("q>0", "betashift(8,1)"),
                                                         ("q<=0", "betashift(1,8)")])
    assert model.resolve(VertexAttributes(1.0, 1, 0)) == MediaLaw.const(1)
    assert model.resolve(VertexAttributes(0.5, 0, 0)) == MediaLaw.betashift(8, 1)
    assert model.resolve(VertexAttributes(0.0, 0, 0)) == MediaLaw.betashift(1, 8)
    q = np.array([1.0, 0.5, 0.0, -1.0])
    s = np.array([1, 0, 0, 0])
    assert model.resolve_index_array(q, s, np.zeros(4)).tolist() == [0, 1, 2, 2]
    assert Predicate.parse("tag = 3").op == "=="
    with pytest.raises(ConfigError):
        Predicate.parse("x>1")


def test_vertex_attribute_validation():
    with pytest.raises(InvalidParameterError):
        VertexAttributes(1.5, 0, 0)
    with pytest.raises(InvalidParameterError):
        VertexAttributes(0.0, 2, 0)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.describe())
def test_scalar_and_vector_samplers_agree(law):
    table = build_law_table([law])
    bases = np.arange(1, 400, dtype=np.uint64) * np.uint64(7919)
    vec = _fallback.sample_laws(table, np.zeros(bases.size, np.int32), bases, 0.3)
    ref = [law.sample(RandomStream(int(b)), 0.3) for b in bases]
    assert np.array_equal(vec, ref)


@pytest.mark.parametrize("law", LAWS[:-1], ids=lambda l: l.describe())
def test_law_moments_against_samples(law):
    table = build_law_table([law])
    n = 100_000
    z = _fallback.sample_laws(table, np.zeros(n, np.int32), np.arange(n, dtype=np.uint64) * np.uint64(31) + np.uint64(5), 0.0)
    assert z.min() >= -1 and z.max() <= 1
    sd = np.sqrt(law.variance())
    assert abs(z.mean() - law.mean()) <= 5 * sd / np.sqrt(n) + 1e-15
    assert abs(z.var() - law.variance()) <= 0.03 * law.variance() + 1e-15


@given(st.floats(-1, 1), st.floats(0, 0.99), st.floats(0.01, 1), st.integers(0, 2**32))
@settings(max_examples=200, deadline=None)
def test_external_signal_bound(q, c, dfrac, seed):
    d = (1 - c) * dfrac
    if d <= 0:
        return
    for ws in (0.0, c):
        for law in LAWS:
            model = SignalModel(law)
            w = external_signal(model, VertexAttributes(q, 0, 0), ws, RandomStream(seed), c, d)
            assert abs(w) <= d + c - ws + 1e-12
