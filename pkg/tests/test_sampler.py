import io
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dyted import autodiff as ad
from dyted.sampler import (SamplerParams, TruncGeom, clip_masks, enumerate_pair_distribution, gumbel_max_lengths,
                           gumbel_softmax, length_log_probs, overlap_probability, psi, sample_clip_pair,
                           sample_hard_lengths, suffix_mask, trunc_geom_mean, trunc_geom_pmf, verify_proposition,
                           write_verify_csv)


def _pmf_oracle(p, L):
    # unnormalized geometric weights, normalized by the truncation mass
    w = [p * (1 - p) ** (m - 1) for m in range(1, L + 1)]
    phi = 1 - (1 - p) ** L
    return [x / phi for x in w]


def _pair_oracle(p, L):
    f = _pmf_oracle(p, L)
    over = sum(f[a - 1] * f[b - 1] for a, b in itertools.product(range(1, L + 1), repeat=2) if a + b >= L + 1)
    return over, 1 - over


def test_pmf_examples():
    np.testing.assert_allclose(trunc_geom_pmf(0.3, 1), [1.0])
    np.testing.assert_allclose(trunc_geom_pmf(0.5, 2), [2 / 3, 1 / 3], rtol=1e-12)
    np.testing.assert_allclose(trunc_geom_pmf(0.4, 3), [0.5102, 0.3061, 0.1837], atol=5e-5)


def test_mean_examples():
    assert trunc_geom_mean(0.7, 1) == pytest.approx(1.0, abs=1e-12)
    assert trunc_geom_mean(0.5, 2) == pytest.approx(4 / 3, abs=1e-12)
    assert trunc_geom_mean(0.4, 3) == pytest.approx(1.6735, abs=5e-5)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.3])
def test_pmf_domain_errors(p):
    with pytest.raises(ValueError):
        trunc_geom_pmf(p, 3)
    with pytest.raises(ValueError):
        TruncGeom(p, 3)


ps = st.floats(0.01, 0.99)
Ls = st.integers(1, 30)


@given(ps, Ls)
def test_pmf_normalized_and_matches_oracle(p, L):
    f = trunc_geom_pmf(p, L)
    assert abs(f.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(f, _pmf_oracle(p, L), rtol=1e-10)


@given(ps, Ls)
def test_mean_closed_form_matches_summation(p, L):
    direct = sum(m * w for m, w in enumerate(_pmf_oracle(p, L), start=1))
    assert abs(trunc_geom_mean(p, L) - direct) <= 1e-10
    assert TruncGeom(p, L).mean() == trunc_geom_mean(p, L)


def test_psi_examples():
    assert psi(1.0, 2) == pytest.approx(0.5)
    assert psi(0.5, 3) == pytest.approx(0.7)
    for L in range(1, 30):
        assert psi(1.0, L) == pytest.approx(2 / (L + 2), abs=1e-15)
    for bad in (0.0, 1.2, -0.5):
        with pytest.raises(ValueError):
            psi(bad, 3)


@given(st.floats(0.01, 1.0), st.integers(1, 40))
def test_psi_monotone_and_bounded(alpha, L):
    assert psi(alpha, L + 1) <= psi(alpha, L)
    assert psi(alpha, L) >= 2 / (L + 2) - 1e-15


@given(st.floats(0.05, 1.0), st.integers(1, 40))
def test_expected_length_non_decreasing_in_range(alpha, L):
    lo = trunc_geom_mean(psi(alpha, L), L) if psi(alpha, L) < 1 else 1.0
    hi = trunc_geom_mean(psi(alpha, L + 1), L + 1)
    assert hi >= lo - 1e-12


def test_hard_limit_masks():
    logp = ad.constant(np.log(np.array([1e-30, 1.0, 1e-30, 1e-30])))
    zero = np.zeros(4)
    m1, m2, h1, h2 = clip_masks(logp, zero, zero, tau_g=1e-3)
    np.testing.assert_allclose(m1.data, [1, 1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(m2.data, [0, 0, 1, 1], atol=1e-12)
    assert h1 == h2 == 2


def test_suffix_mask_of_one_hot():
    for m in range(1, 6):
        k = np.eye(5)[m - 1]
        np.testing.assert_array_equal(suffix_mask(ad.constant(k)).data, (np.arange(5) < m).astype(float))


@given(st.integers(1, 12), st.integers(0, 10 ** 6))
def test_clip_pair_invariants(T, seed):
    pair = sample_clip_pair(T, SamplerParams.from_alpha(0.5), seed)
    assert pair.t_j == pair.t_i + pair.L - 1
    assert 0 <= pair.t_i and pair.t_j < T
    for mask in (pair.mask1, pair.mask2):
        assert mask.shape == (pair.L,)
        assert np.all(mask.data >= -1e-12) and np.all(mask.data <= 1 + 1e-12)
    assert np.all(np.diff(pair.mask1.data) <= 1e-12)
    assert np.all(np.diff(pair.mask2.data) >= -1e-12)
    assert 1 <= pair.m1_hard <= pair.L and 1 <= pair.m2_hard <= pair.L
    # the first (last) snapshot always carries full weight: lengths start at 1
    assert pair.mask1.data[0] == pytest.approx(1.0) and pair.mask2.data[-1] == pytest.approx(1.0)
    assert 1 - 1e-9 <= pair.m1_soft <= pair.L + 1e-9


def test_clip_range_covers_every_start():
    params = SamplerParams.from_alpha(0.5)
    rng = np.random.default_rng(0)
    starts = {sample_clip_pair(6, params, rng, L=3).t_i for _ in range(300)}
    assert starts == {0, 1, 2, 3}
    assert {sample_clip_pair(6, params, rng, L=6).t_i for _ in range(20)} == {0}
    lengths = {sample_clip_pair(5, params, rng).L for _ in range(300)}
    assert lengths == {1, 2, 3, 4, 5}


def test_clip_pair_errors():
    with pytest.raises(ValueError):
        sample_clip_pair(0, SamplerParams.from_alpha(0.5))
    with pytest.raises(ValueError):
        sample_clip_pair(4, SamplerParams.from_alpha(0.5), L=5)
    with pytest.raises(ValueError):
        SamplerParams.from_alpha(1.0)
    with pytest.raises(ValueError):
        gumbel_softmax(ad.constant(np.zeros(3)), np.zeros(3), 0.0)


def test_clip_pair_deterministic_given_seed():
    params = SamplerParams.from_alpha(0.3)
    a, b = sample_clip_pair(10, params, 42), sample_clip_pair(10, params, 42)
    assert (a.t_i, a.L, a.m1_hard, a.m2_hard) == (b.t_i, b.L, b.m1_hard, b.m2_hard)
    np.testing.assert_array_equal(a.mask1.data, b.mask1.data)


@pytest.mark.parametrize("alpha,L", [(0.5, 6), (1.0, 10)])
def test_hard_length_monte_carlo_mean(alpha, L):
    params = SamplerParams.from_alpha(min(alpha, 1 - 1e-12))
    rng = np.random.default_rng(1)
    draws = [sample_clip_pair(L, params, rng, L=L).m1_hard for _ in range(4000)]
    expect = trunc_geom_mean(psi(params.alpha, L), L)
    se = np.std(draws) / np.sqrt(len(draws))
    assert abs(np.mean(draws) - expect) < 4 * se


def test_batched_hard_lengths_match_clip_pairs():
    params = SamplerParams.from_alpha(0.7)
    rng = np.random.default_rng(8)
    pairs = [sample_clip_pair(6, params, rng, L=6) for _ in range(50)]
    # the same Gumbel noise gives the same lengths through either path
    logp = length_log_probs(params.alpha_raw, 6).data
    for pair in pairs:
        assert tuple(gumbel_max_lengths(logp, pair.gumbel)) == (pair.m1_hard, pair.m2_hard)
    draws = sample_hard_lengths(params, 6, 20_000, rng=1)
    assert set(np.unique(draws)) <= set(range(1, 7))
    se = draws.std() / np.sqrt(draws.size)
    assert abs(draws.mean() - trunc_geom_mean(psi(params.alpha, 6), 6)) < 4 * se


def test_uniform_lengths_cut_alpha_path():
    params = SamplerParams.from_alpha(0.5)
    pair = sample_clip_pair(6, params, 3, L=6, uniform_lengths=True)
    assert params.alpha_raw not in ad.backward(ad.sum(pair.mask1))


def test_length_log_probs_match_pmf():
    params = SamplerParams.from_alpha(0.4)
    for L in (1, 2, 5, 9):
        lp = length_log_probs(params.alpha_raw, L).data
        np.testing.assert_allclose(np.exp(lp), trunc_geom_pmf(psi(params.alpha, L), L), rtol=1e-12)


@pytest.mark.parametrize("tau_g", [0.01, 0.5])
def test_mask_gradient_reaches_alpha(tau_g):
    params = SamplerParams.from_alpha(0.6, tau_g)
    pair = sample_clip_pair(7, params, 11, L=7)

    def mean_weight(a):
        return ad.mean(pair.with_alpha(a, tau_g).mask1)

    assert ad.grad_check(mean_weight, params.alpha_raw.data) < 1e-4
    g = ad.backward(mean_weight(params.alpha_raw))[params.alpha_raw]
    assert np.all(g != 0)


def test_with_alpha_reproduces_masks():
    params = SamplerParams.from_alpha(0.6)
    pair = sample_clip_pair(8, params, 5)
    again = pair.with_alpha(params.alpha_raw, params.tau_g)
    np.testing.assert_array_equal(pair.mask1.data, again.mask1.data)
    np.testing.assert_array_equal(pair.mask2.data, again.mask2.data)


# ---------------------------------------------------------------------------
# overlap statistics
# ---------------------------------------------------------------------------

def test_overlap_example():
    dist = enumerate_pair_distribution(0.4, 3)
    assert dist.p_overlap == pytest.approx(0.4273, abs=5e-5)
    assert overlap_probability(0.4, 3)[0] == pytest.approx(0.4273, abs=5e-5)
    assert dist.joint.shape == (3, 3)
    assert dist.joint.sum() == pytest.approx(1.0, abs=1e-12)


def test_single_snapshot_always_overlaps():
    # m1 = m2 = 1 satisfies m1 + m2 >= L + 1 when L = 1
    assert enumerate_pair_distribution(0.3, 1).p_overlap == pytest.approx(1.0)
    assert overlap_probability(0.3, 1)[0] == pytest.approx(1.0)


@pytest.mark.parametrize("L", [2, 5, 12])
def test_overlap_vanishes_as_p_to_one(L):
    assert enumerate_pair_distribution(1 - 1e-9, L).p_overlap < 1e-6


@given(ps, st.integers(1, 30))
def test_closed_form_matches_enumeration(p, L):
    dist = enumerate_pair_distribution(p, L)
    x1, x0 = overlap_probability(p, L)
    assert abs(dist.p_overlap - x1) <= 1e-10
    assert abs(dist.p_disjoint - x0) <= 1e-10
    o1, o0 = _pair_oracle(p, L)
    assert abs(dist.p_overlap - o1) <= 1e-10 and abs(dist.p_disjoint - o0) <= 1e-10


def test_verify_proposition_grid_passes():
    rows = verify_proposition([0.25, 0.5, 0.75, 1.0], range(3, 21))
    assert len(rows) == 4 * 18
    assert all(r["pass"] for r in rows)
    assert all(r["ratio1"] <= 1 and r["ratio2_min"] >= 1 - 1e-12 and r["ratio3_max"] <= 1 + 1e-12 for r in rows)


def test_verify_proposition_boundary_alpha_one():
    rows = verify_proposition([1.0], range(3, 31))
    assert all(r["pass"] for r in rows)


def test_verify_proposition_rejects_short_range():
    with pytest.raises(ValueError):
        verify_proposition([0.5], [2, 3])


def test_verify_csv_columns():
    buf = io.StringIO()
    write_verify_csv(verify_proposition([0.5], [3, 4]), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "alpha,L,ratio1,ratio2_min,ratio3_max,pass"
    assert len(lines) == 3 and lines[1].endswith(",true")
