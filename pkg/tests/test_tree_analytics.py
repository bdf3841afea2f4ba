import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opinionnet import graph as gr
from opinionnet import tree_analytics as ta
from opinionnet.randomness import InvalidParameterError
from opinionnet.signals import MediaLaw, SignalModel, VertexAttributes

from oracles import enumerate_trees, finite_horizon_bruteforce

PM1 = MediaLaw.twopoint([-1, 1], [0.5, 0.5])
U11 = MediaLaw.uniform(-1, 1)


def fixed2_spec(c=0.5):
    return gr.GWTreeSpec(gr.OffspringLaw.fixed(2), gr.MarkLaw.simple(MediaLaw.const(0.0)), c)


def test_coefficients():
    for s in range(12):
        for l in range(s + 1):
            assert ta.coefficient_a(l, s, 0.5, 0.3) == pytest.approx(math.comb(s, l) * 0.2 ** (s - l), rel=1e-14)
    mp.mp.dps = 30
    ref = mp.binomial(200, 80) * mp.mpf("0.2") ** 120
    assert ta.coefficient_a(80, 200, 0.5, 0.3) == pytest.approx(float(ref), rel=1e-11)
    assert ta.coefficient_a(3, 5, 0.5, 0.5) == 0.0 and ta.coefficient_a(5, 5, 0.5, 0.5) == 1.0
    with pytest.raises(InvalidParameterError):
        ta.coefficient_a(3, 2, 0.5, 0.3)


def test_moment_inputs_example():
    inp = ta.moment_inputs(fixed2_spec(), SignalModel(U11), 0.5)
    d = 0.5
    assert inp.mean_W1 == 0 and inp.var_Y1 == 0 and inp.cov_SC_Y1 == 0
    assert inp.var_W1 == pytest.approx(d * d / 3, abs=1e-15)
    assert inp.mean_V1 == pytest.approx(d * d / 3, abs=1e-15)
    assert inp.rho2 == 0.125 and inp.rho1 == 0.5


def test_no_memory_example():
    inp = ta.moment_inputs(fixed2_spec(), SignalModel(U11), 0.5)
    r = ta.mean_var_no_memory(inp)
    assert r.var_root == pytest.approx(0.25 / 3 + 0.125 * 0.25 / (0.875 * 3), abs=1e-15)
    assert r.var_root == pytest.approx(0.0952380952380952, abs=1e-15)
    with pytest.raises(ta.DomainError):
        ta.mean_var_no_memory(ta.moment_inputs(fixed2_spec(), SignalModel(U11), 0.3))
    leafy = gr.GWTreeSpec(gr.OffspringLaw.explicit([0.1, 0.9]), gr.MarkLaw.simple(PM1), 0.5)
    with pytest.raises(ta.DomainError):
        ta.mean_var_no_memory(ta.moment_inputs(leafy, SignalModel(U11), 0.5))


@pytest.mark.parametrize("shift", [0, 1, 2])
@pytest.mark.parametrize("c,d,rho2", [(0.5, 0.25, 0.125), (0.6, 0.05, 0.3), (0.3, 0.2, 0.0), (0.45, 0.55, 0.2)])
def test_g_sum_against_mpmath(c, d, rho2, shift):
    mp.mp.dps = 40
    b = mp.mpf(ta.memory_coefficient(c, d))

    def g(l):
        # sum_m C(l+m, m)^2 x^m = 2F1(l+1, l+1; 1; x)
        return mp.hyp2f1(l + 1, l + 1, 1, b * b)
    ref = mp.nsum(lambda t: mp.mpf(rho2) ** t * g(int(t) + shift), [0, mp.inf])
    assert abs(ta.shifted_g_sum(rho2, c, d, shift) - float(ref)) <= 1e-12
    # p_T in (0, 1): g(l) (c+d)^(2(l+1)) is a probability-like weight
    assert 0 < float(g(3) * (1 - b) ** 8) <= 1


def exposure_case():
    marks = gr.MarkLaw((gr.MarkComponent(0.4, MediaLaw.const(-1.0)), gr.MarkComponent(0.6, MediaLaw.const(1.0))))
    root_marks = gr.MarkLaw((gr.MarkComponent(0.7, MediaLaw.const(-1.0)), gr.MarkComponent(0.3, MediaLaw.const(1.0))))
    model = SignalModel.from_mapping(MediaLaw.uniform(-1, 0.5), [("q>0", "twopoint(0:0.3,1:0.7)")])
    spec = gr.GWTreeSpec(gr.OffspringLaw.explicit([0.25, 0.35, 0.4]), marks, 0.45,
                         root_offspring=gr.OffspringLaw.explicit([0.1, 0.5, 0.4]), root_mark_law=root_marks)

    def law_of_q(q):
        law = model.resolve(VertexAttributes(q, 0, 0))
        return law.mean(q), law.variance(q)
    return spec, model, law_of_q


@pytest.mark.parametrize("k", [0, 1, 2])
def test_finite_horizon_against_enumeration(k):
    spec, model, law_of_q = exposure_case()
    d = 0.3
    inp = ta.moment_inputs(spec, model, d)
    # root law differs from the node law
    trees = enumerate_trees({-1.0: 0.4, 1.0: 0.6}, [0.25, 0.35, 0.4], k,
                            root_q_probs={-1.0: 0.7, 1.0: 0.3}, root_off_pmf=[0.1, 0.5, 0.4])
    mean, var = finite_horizon_bruteforce(trees, spec.c, d, law_of_q, k + 1)
    mr, vr, mn, vn = ta.finite_horizon_moments(inp, k)
    assert mr == pytest.approx(mean, abs=1e-13)
    assert vr == pytest.approx(var, abs=1e-13)
    node_trees = enumerate_trees({-1.0: 0.4, 1.0: 0.6}, [0.25, 0.35, 0.4], k)
    mean_n, var_n = finite_horizon_bruteforce(node_trees, spec.c, d, law_of_q, k + 1)
    assert mn == pytest.approx(mean_n, abs=1e-13)
    assert vn == pytest.approx(var_n, abs=1e-13)


def test_finite_horizon_k0_is_signal_law():
    spec, model, _ = exposure_case()
    inp = ta.moment_inputs(spec, model, 0.3)
    mr, vr, mn, vn = ta.finite_horizon_moments(inp, 0)
    assert (mr, vr) == (inp.mean_W_root, inp.var_W_root)
    assert (mn, vn) == (inp.mean_W1, inp.var_W1)
    with pytest.raises(InvalidParameterError):
        ta.finite_horizon_moments(inp, -1)


def test_finite_horizon_zero_zero_example():
    # c+d = 1 and identical laws: the mean after k+1 steps is mu (1 - c^(k+1))
    spec = gr.GWTreeSpec(gr.OffspringLaw.fixed(2), gr.MarkLaw.simple(MediaLaw.const(0.0)), 0.5)
    inp = ta.moment_inputs(spec, SignalModel(MediaLaw.const(0.6)), 0.5)
    mu = 0.6
    for k in range(6):
        assert ta.finite_horizon_moments(inp, k)[0] == pytest.approx(mu * (1 - 0.5 ** (k + 1)), abs=1e-15)


@pytest.mark.parametrize("c,d", [(0.45, 0.3), (0.5, 0.5), (0.2, 0.1)])
def test_general_is_limit_of_finite_horizon(c, d):
    spec, model, _ = exposure_case()
    spec = gr.GWTreeSpec(spec.offspring, spec.mark_law, c, spec.root_offspring, spec.root_mark_law)
    inp = ta.moment_inputs(spec, model, d)
    k = int(np.ceil(np.log(1e-14) / np.log(1 - d))) + 10
    mr, vr, mn, vn = ta.finite_horizon_moments(inp, k)
    gen = ta.mean_var_general(inp)
    assert gen.mean_root == pytest.approx(mr, abs=1e-10)
    assert gen.var_root == pytest.approx(vr, abs=1e-10)
    assert gen.mean_node == pytest.approx(mn, abs=1e-10)
    assert gen.var_node == pytest.approx(vn, abs=1e-10)


def random_inputs(rng, c_plus_d=None, positive=True):
    c = rng.uniform(0.05, 0.9)
    d = 1.0 - c if c_plus_d == 1.0 else rng.uniform(0.02, 1 - c - 0.01)
    n0 = int(rng.integers(1, 6))
    qlaw = [PM1, U11, MediaLaw.betashift(2, 5)][int(rng.integers(3))]
    media = [MediaLaw.uniform(-1, 1), MediaLaw.betashift(*rng.uniform(0.5, 8, 2)),
             MediaLaw.twopoint([-1, 1], [0.3, 0.7])]
    rules = [("q>0", media[int(rng.integers(3))])] if qlaw.kind != "betashift" else []
    model = SignalModel.from_mapping(media[int(rng.integers(3))], rules)
    off = gr.OffspringLaw.fixed(n0) if positive else gr.OffspringLaw.explicit([0.2, 0.3, 0.5])
    spec = gr.GWTreeSpec(off, gr.MarkLaw.simple(qlaw), c, root_offspring=gr.OffspringLaw.fixed(n0 + 1))
    return spec, model, d


def test_general_reduces_to_no_memory():
    rng = np.random.default_rng(12)
    for _ in range(50):
        spec, model, d = random_inputs(rng, 1.0)
        inp = ta.moment_inputs(spec, model, d)
        a, b = ta.mean_var_general(inp), ta.mean_var_no_memory(inp)
        for f in ("mean_root", "var_root", "mean_node", "var_node"):
            assert getattr(a, f) == pytest.approx(getattr(b, f), abs=1e-10)


def test_memory_comparison_consistency():
    rng = np.random.default_rng(3)
    for _ in range(30):
        spec, model, d = random_inputs(rng)
        inp = ta.moment_inputs(spec, model, d)
        mc = ta.memory_comparison(inp)
        assert mc.inequality_holds
        assert mc.var_memory == pytest.approx(ta.mean_var_general(inp).var_root, rel=1e-10)
        assert mc.var_no_memory == pytest.approx(ta.mean_var_no_memory(ta.rescaled_no_memory(inp)).var_root,
                                                 rel=1e-10)


def test_divergent_and_domain_errors():
    inp = ta.MomentInputs.from_signal_stats(0.5, 0.1, 0.4, 0.4, 0, 0.1, 0.1, 0, 0.1, 0.1)
    with pytest.raises(ta.DivergentVarianceError):
        ta.mean_var_general(inp)
    with pytest.raises(ta.DomainError):
        ta.memory_comparison(ta.moment_inputs(fixed2_spec(), SignalModel(U11), 0.5))
    with pytest.raises(InvalidParameterError):
        ta.MomentInputs.from_signal_stats(0.5, 0.3, 0.6, 0.1, 0, 0.1, 0.1, 0, 0.1, 0.1)


def test_analytic_and_monte_carlo_inputs_agree():
    marks = gr.MarkLaw((gr.MarkComponent(0.7, U11), gr.MarkComponent(0.3, MediaLaw.const(1.0), 1, 0,
                                                                     gr.OffspringLaw.fixed(0))))
    model = SignalModel.from_mapping(MediaLaw.copyq(), [("s=1", "const(1)"), ("q>0.3", "betashift(8,1)")])
    spec = gr.GWTreeSpec(gr.OffspringLaw.explicit([0.2, 0.3, 0.5]), marks, 0.4)
    a = ta.moment_inputs(spec, model, 0.35)
    m = ta.moment_inputs(spec, model, 0.35, mode="monte-carlo", n=200_000, master=5)
    for key, se in (("rho1", "rho11"), ("rho2", "rho21"), ("mean_W1", "mean_W1"), ("mean_V1", "mean_V1"),
                    ("var_Y1", "var_Y1"), ("var_SC", "var_SC1"), ("mean_W_root", "mean_W_root")):
        assert abs(getattr(a, key) - getattr(m, key)) <= 5 * m.stderr[se] + 1e-12, key
    with pytest.raises(ta.UnsupportedSpecError):
        bs = gr.GWTreeSpec(gr.OffspringLaw.fixed(1), gr.MarkLaw.simple(MediaLaw.betashift(2, 2)), 0.4)
        ta.moment_inputs(bs, model, 0.35)


def test_truncated_series_variance_deficit():
    spec = fixed2_spec()
    model = SignalModel(U11)
    inp = ta.moment_inputs(spec, model, 0.5)
    var = ta.mean_var_general(inp).var_root
    for L in (0, 1):
        xs = ta.series_samples(spec, model, 0.5, 30, 77, 40_000, max_depth=L, inputs=inp)
        target = var - ta.variance_deficit(inp, L)
        se = np.std((xs - xs.mean()) ** 2) / np.sqrt(xs.size)
        assert abs(xs.var() - target) <= 4 * se
        assert abs(xs.mean()) <= 4 * xs.std() / np.sqrt(xs.size)
    assert ta.variance_deficit(inp, 0) > ta.variance_deficit(inp, 3) > 0
    assert ta.choose_max_depth(inp, 1e-8) == min(L for L in range(50) if ta.variance_deficit(inp, L) <= 1e-8)


def test_series_budget():
    spec = fixed2_spec()
    with pytest.raises(gr.BudgetExceededError):
        ta.series_samples(spec, SignalModel(U11), 0.5, 40, 1, 10)


def test_series_partial_sums_match_dynamics():
    spec, model, _ = exposure_case()
    tr = ta.tree_root_trajectories(spec, model, 0.3, 9, 4, 40)
    ps = ta.series_partial_sums(spec, model, 0.3, 9, 4, 40)
    assert np.max(np.abs(tr - ps)) <= 1e-12


@given(st.floats(0.01, 0.95), st.floats(0.05, 1.0), st.floats(0.0, 1.0))
@settings(max_examples=60, deadline=None)
def test_general_variance_positive_and_monotone_in_rho2(c, dfrac, r):
    d = max((1 - c) * dfrac, 0.01)
    if c + d > 1:
        return
    rho2 = r * c * c
    a = ta.MomentInputs.from_signal_stats(c, d, rho2, rho2, 0.1, 0.2, 0.3, 0.0, 0.2, 0.3)
    b = ta.MomentInputs.from_signal_stats(c, d, rho2 * 0.5, rho2, 0.1, 0.2, 0.3, 0.0, 0.2, 0.3)
    va, vb = ta.mean_var_general(a).var_root, ta.mean_var_general(b).var_root
    assert va > 0 and vb > 0 and vb <= va * (1 + 1e-12)
