"""Streaming moment accumulation and the pairwise distance estimator."""
import numpy as np
import pytest

from gridtopo import (
    ConditioningError,
    FormatError,
    InjectionSpec,
    MomentAccumulator,
    MomentSet,
    accumulate,
    analytic_moments,
    conditioning_check,
    default_conditioning_threshold,
    estimate_distances,
    estimate_h_pair,
    h_inverse_entry,
    load_moments,
    merge,
    node_determinants,
    random_radial_grid,
    save_moments,
    simulate,
    true_distance,
    ValidationError,
)


def _random_measurements(seed: int, T: int = 300):
    g = random_radial_grid(10, seed=seed)
    return simulate(g, InjectionSpec(), T=T, seed=seed + 1)


def test_accumulator_matches_direct_means():
    ms = _random_measurements(0)
    m = accumulate(ms)
    assert m.count == ms.T
    np.testing.assert_allclose(m.vp, ms.v.T @ ms.p / ms.T, atol=1e-12)
    np.testing.assert_allclose(m.vq, ms.v.T @ ms.q / ms.T, atol=1e-12)
    np.testing.assert_allclose(m.pp, np.mean(ms.p * ms.p, axis=0), atol=1e-12)
    np.testing.assert_allclose(m.qq, np.mean(ms.q * ms.q, axis=0), atol=1e-12)
    np.testing.assert_allclose(m.pq, np.mean(ms.p * ms.q, axis=0), atol=1e-12)


def test_accumulator_chunking_is_invisible():
    ms = _random_measurements(1)
    np.testing.assert_allclose(accumulate(ms, chunk=7).vp, accumulate(ms).vp, atol=1e-12)


def test_streaming_updates_match_batch():
    ms = _random_measurements(2)
    acc = MomentAccumulator(ms.nodes)
    for t in range(ms.T):
        acc.update(ms.v[t : t + 1], ms.p[t : t + 1], ms.q[t : t + 1])
    np.testing.assert_allclose(acc.result().vp, accumulate(ms).vp, atol=1e-10)
    assert acc.result().count == ms.T


def test_merge_equals_single_pass():
    ms = _random_measurements(3)
    cut = 110
    a1 = MomentAccumulator(ms.nodes)
    a1.update(ms.v[:cut], ms.p[:cut], ms.q[:cut])
    a2 = MomentAccumulator(ms.nodes)
    a2.update(ms.v[cut:], ms.p[cut:], ms.q[cut:])
    merged = merge(a1.result(), a2.result())
    full = accumulate(ms)
    assert merged.count == full.count
    np.testing.assert_allclose(merged.vp, full.vp, atol=1e-10)
    np.testing.assert_allclose(merged.pp, full.pp, atol=1e-10)


def test_merge_rejects_mismatched_inputs(star_grid):
    m1 = MomentSet.empty(("a", "b"))
    m2 = MomentSet.empty(("a", "c"))
    with pytest.raises(ValidationError):
        merge(m1, m2)
    with pytest.raises(ValidationError):
        merge(MomentSet.empty(("a",)), analytic_moments(star_grid))


def test_estimate_h_pair_recovers_inverse_laplacian(star_grid):
    m = analytic_moments(star_grid, InjectionSpec(sigma_pp=2.0, sigma_qq=0.5, sigma_pq=0.3))
    for a in ("a", "b", "c"):
        for b in ("a", "b", "c"):
            hr, hx = estimate_h_pair(m, a, b)
            assert hr == pytest.approx(h_inverse_entry(star_grid, a, b, "r"), abs=1e-12)
            assert hx == pytest.approx(h_inverse_entry(star_grid, a, b, "x"), abs=1e-12)


def test_estimate_distances_exact_on_analytic_moments(cherry_grid):
    m = analytic_moments(cherry_grid, InjectionSpec())
    d = estimate_distances(m)
    assert d.nodes == cherry_grid.observed_nodes
    for mode in ("r", "x"):
        mat = d.mode(mode)
        assert np.allclose(mat, mat.T)
        assert np.all(np.diagonal(mat) == 0.0)
        for i, u in enumerate(d.nodes):
            for j, v in enumerate(d.nodes):
                if i < j:
                    assert mat[i, j] == pytest.approx(
                        true_distance(cherry_grid, u, v, mode), abs=1e-12
                    )


def test_estimate_distances_random_grids_match_truth():
    rng = np.random.default_rng(14)
    for _ in range(8):
        g = random_radial_grid(int(rng.integers(6, 25)), seed=int(rng.integers(1 << 31)))
        d = estimate_distances(analytic_moments(g))
        for mode in ("r", "x"):
            mat = d.mode(mode)
            for i, u in enumerate(d.nodes):
                for j, v in enumerate(d.nodes):
                    if i < j:
                        assert mat[i, j] == pytest.approx(
                            true_distance(g, u, v, mode), abs=1e-9
                        )


def test_estimate_distances_node_subset(star_grid):
    m = analytic_moments(star_grid)
    d = estimate_distances(m, nodes=("a", "c"))
    assert d.nodes == ("a", "c")
    assert d.value("a", "c") == pytest.approx(4.0)


def test_conditioning_guard_trips_on_near_singular_injections(star_grid):
    # sigma_pp * sigma_qq - sigma_pq^2 ~ 0 makes node b's 2x2 solve singular.
    spec = InjectionSpec(per_node={"b": (1.0, 1.0, 1.0 - 1e-13)})
    m = analytic_moments(star_grid, spec)
    dets = node_determinants(m)
    assert abs(dets[m.index("b")]) < default_conditioning_threshold(m)
    assert conditioning_check(m) == {"a": True, "b": False, "c": True}
    with pytest.raises(ConditioningError) as err:
        estimate_distances(m)
    assert err.value.nodes == ("b",)
    with pytest.raises(ConditioningError):
        estimate_h_pair(m, "a", "b")
    hr, _hx = estimate_h_pair(m, "b", "a")  # healthy column still solvable
    assert hr == pytest.approx(h_inverse_entry(star_grid, "a", "b"), abs=1e-9)


def test_conditioning_check_passes_healthy_moments(star_grid):
    m = analytic_moments(star_grid)
    assert all(conditioning_check(m).values())
    np.testing.assert_allclose(node_determinants(m), 1.0)


def test_moments_json_round_trip(tmp_path, cherry_grid):
    m = accumulate(simulate(cherry_grid, InjectionSpec(), T=50, seed=8))
    path = tmp_path / "moments.json"
    save_moments(m, path)
    back = load_moments(path)
    assert back.nodes == m.nodes
    assert back.count == m.count
    np.testing.assert_allclose(back.vp, m.vp, atol=0)
    np.testing.assert_allclose(back.pq, m.pq, atol=0)


def test_moments_file_errors(tmp_path):
    with pytest.raises(FormatError):
        load_moments(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text('{"nodes": ["a"]}')
    with pytest.raises(FormatError):
        load_moments(bad)
