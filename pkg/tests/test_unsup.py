import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from detecta.unsup import (
    DegenerateData,
    DetectorParams,
    Ensemble,
    IsolationForest,
    LocalOutlierFactor,
    MinCovDet,
    PCADetector,
    expected_path_length,
    fit_ensemble,
)

# ---------------------------------------------------------------- iforest --


def harmonic_oracle(n):
    # independent route: exact rational harmonic number
    return float(sum(Fraction(1, i) for i in range(1, n + 1)))


def test_expected_path_length_against_harmonic_oracle():
    assert expected_path_length(2) == pytest.approx(1.0, abs=1e-12)
    for n in (3, 16, 100, 256, 777):
        want = 2.0 * harmonic_oracle(n - 1) - 2.0 * (n - 1) / n
        assert expected_path_length(n) == pytest.approx(want, abs=1e-9)
    assert expected_path_length(256) == pytest.approx(10.24, abs=0.01)
    assert expected_path_length(1) == 0.0


def test_iforest_scores_bounded_and_outlier_ranks_first():
    rng = np.random.default_rng(42)
    X = rng.normal(size=(400, 4))
    X = np.vstack([X, [[25.0, 25.0, 25.0, 25.0]]])
    model = IsolationForest(seed=7).fit(X)
    scores = model.score(X)
    assert np.all(scores > 0) and np.all(scores < 1)
    assert scores[-1] > scores[:-1].max()


def test_iforest_monotone_in_path_length():
    rng = np.random.default_rng(0)
    model = IsolationForest(seed=3).fit(rng.normal(size=(300, 3)))
    pts = rng.normal(size=(50, 3)) * 3
    scores = model.score(pts)
    paths = -np.log2(scores) * model._c_norm
    order = np.argsort(paths)
    assert np.all(np.diff(scores[order]) <= 1e-12)  # deeper => lower score


def test_iforest_degenerate_data():
    with pytest.raises(DegenerateData):
        IsolationForest().fit(np.ones((300, 3)))


def test_iforest_deterministic_and_serializable():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(300, 3))
    a = IsolationForest(seed=9).fit(X)
    b = IsolationForest(seed=9).fit(X)
    assert a.to_json() == b.to_json()
    c = IsolationForest.from_json(a.to_json())
    q = rng.normal(size=(20, 3))
    assert np.allclose(a.score(q), c.score(q), atol=0)


# -------------------------------------------------------------------- lof --


def lof_oracle(train, queries, k, include_self=False):
    """Straight-from-the-definitions LOF in pure loops (O(n^2))."""
    train = [list(map(float, r)) for r in train]
    n = len(train)

    def dist(a, b):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))

    def kdist_and_neighbors(p, exclude_idx):
        ds = sorted(
            (dist(p, q), j) for j, q in enumerate(train) if j != exclude_idx
        )
        kd = ds[k - 1][0]
        return kd, [j for d, j in ds if d <= kd]

    kd_train, nb_train = [], []
    for i in range(n):
        kd, nb = kdist_and_neighbors(train[i], i)
        kd_train.append(kd)
        nb_train.append(nb)

    def lrd_of(p, nb, kd_list):
        reach = [max(kd_list[j], dist(p, train[j])) for j in nb]
        m = sum(reach) / len(reach)
        return math.inf if m == 0 else 1.0 / m

    lrd_train = [lrd_of(train[i], nb_train[i], kd_train) for i in range(n)]

    def lof_of(p, exclude_idx):
        kd, nb = kdist_and_neighbors(p, exclude_idx)
        lrd_x = lrd_of(p, nb, kd_train)
        if math.isinf(lrd_x):
            return 1.0 if any(math.isinf(lrd_train[j]) for j in nb) else 0.0
        return sum(lrd_train[j] for j in nb) / len(nb) / lrd_x

    if include_self:
        return [lof_of(train[i], i) for i in range(n)]
    return [lof_of(list(map(float, q)), -1) for q in queries]


def test_lof_matches_bruteforce_oracle_n200():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(200, 3))
    model = LocalOutlierFactor(k=20).fit(X)
    want_train = lof_oracle(X, None, 20, include_self=True)
    assert np.allclose(model.training_scores, want_train, atol=1e-9)
    Q = rng.normal(size=(25, 3)) * 2
    want_q = lof_oracle(X, Q, 20)
    assert np.allclose(model.score(Q), want_q, atol=1e-9)


def test_lof_interior_grid_point_near_one():
    g = np.array([[i, j] for i in range(12) for j in range(12)], dtype=float)
    model = LocalOutlierFactor(k=8).fit(g)
    inner = model.score(np.array([[5.5, 5.5]]))
    assert 0.9 <= inner[0] <= 1.1


def test_lof_isolated_point_scores_high():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(150, 2))
    model = LocalOutlierFactor(k=20).fit(X)
    assert model.score(np.array([[40.0, -35.0]]))[0] > 2.0


def test_lof_duplicate_cluster_convention():
    X = np.vstack([np.zeros((30, 2)), np.random.default_rng(1).normal(5, 1, (30, 2))])
    model = LocalOutlierFactor(k=5).fit(X)
    assert model.score(np.zeros((1, 2)))[0] == pytest.approx(1.0)


def test_lof_needs_more_than_k_points():
    with pytest.raises(ValueError):
        LocalOutlierFactor(k=20).fit(np.zeros((10, 2)))


# -------------------------------------------------------------------- pca --


def eig_oracle_power_iteration(cov, m_iter=500_000, tol=1e-12):
    """Largest-to-smallest eigenvalues by power iteration + deflation."""
    A = cov.copy()
    out = []
    rng = np.random.default_rng(99)
    for _ in range(len(cov)):
        v = rng.normal(size=len(cov))
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(m_iter):
            w = A @ v
            nw = np.linalg.norm(w)
            if nw == 0:
                lam = 0.0
                break
            w /= nw
            new_lam = float(w @ A @ w)
            if abs(new_lam - lam) < tol:
                lam = new_lam
                v = w
                break
            lam = new_lam
            v = w
        out.append(lam)
        A = A - lam * np.outer(v, v)
    return sorted(out, reverse=True)


def char_poly_coeffs(A):
    """Faddeev-LeVerrier: coefficients of det(lambda I - A)."""
    n = len(A)
    coeffs = [1.0]
    M = np.zeros_like(A)
    for k in range(1, n + 1):
        M = A @ M + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(A @ M) / k)
    return coeffs


def test_pca_eigenvalues_match_independent_oracles():
    rng = np.random.default_rng(21)
    X = rng.normal(size=(400, 5)) @ np.diag([5.0, 3.0, 1.5, 0.7, 0.2])
    model = PCADetector(variance_kept=0.95).fit(X)
    cov = np.cov(X - X.mean(axis=0), rowvar=False)
    want_power = eig_oracle_power_iteration(cov)
    assert np.allclose(model.eigenvalues, want_power, atol=1e-8)
    roots = sorted(np.roots(char_poly_coeffs(cov)).real, reverse=True)
    assert np.allclose(model.eigenvalues, roots, atol=1e-8)


def test_pca_full_variance_reconstructs_training():
    rng = np.random.default_rng(22)
    X = rng.normal(size=(200, 4))
    model = PCADetector(variance_kept=1.0).fit(X)
    assert np.all(model.score(X) < 1e-10)


def test_pca_line_geometry():
    t = np.linspace(-5, 5, 100)
    X = np.column_stack([t, 2 * t])  # data on a line
    model = PCADetector(variance_kept=0.9).fit(X)
    assert model.n_components == 1
    d = 0.7
    direction = np.array([-2.0, 1.0]) / math.sqrt(5)  # unit normal to the line
    q = np.array([1.0, 2.0]) + d * direction
    assert model.score(q[None, :])[0] == pytest.approx(d * d, abs=1e-10)


def test_pca_degenerate():
    with pytest.raises(DegenerateData):
        PCADetector().fit(np.ones((50, 3)) * 4.2)


# -------------------------------------------------------------------- mcd --


def test_mcd_h_equals_n_matches_sample_covariance():
    rng = np.random.default_rng(31)
    X = rng.normal(size=(60, 3))
    model = MinCovDet(h=60, n_starts=5, seed=1).fit(X)
    assert np.allclose(model.raw_cov, np.cov(X, rowvar=False), atol=1e-12)
    assert np.allclose(model.mean, X.mean(axis=0), atol=1e-12)


def test_mcd_matches_exhaustive_subset_oracle():
    rng = np.random.default_rng(32)
    X = np.vstack([rng.normal(size=(9, 2)), rng.normal(8.0, 0.5, size=(3, 2))])
    n, p = X.shape
    h = (n + p + 1) // 2
    best = math.inf
    for subset in itertools.combinations(range(n), h):
        det = np.linalg.det(np.cov(X[list(subset)], rowvar=False))
        best = min(best, det)
    model = MinCovDet(n_starts=500, seed=3).fit(X)
    got = math.exp(model.best_logdet)
    assert got == pytest.approx(best, abs=1e-9)


def test_mcd_resists_shifted_contamination():
    rng = np.random.default_rng(33)
    clean = rng.normal(size=(1600, 3))
    shifted = rng.normal(6.0, 0.3, size=(400, 3))  # 20 % contamination
    X = np.vstack([clean, shifted])
    model = MinCovDet(n_starts=120, seed=5).fit(X)
    assert np.all(np.abs(model.mean - clean.mean(axis=0)) < 0.1)
    assert np.all(np.abs(X.mean(axis=0) - clean.mean(axis=0)) > 0.5)
    assert not (model.support >= len(clean)).any()  # support is all-clean


def test_mcd_scores_consistent_for_gaussian():
    rng = np.random.default_rng(34)
    X = rng.normal(size=(2000, 2))
    model = MinCovDet(n_starts=60, seed=7).fit(X)
    d2 = model.score(X)
    # after the consistency factor, median(d^2) should be near chi2 median
    from scipy.stats import chi2

    assert np.median(d2) == pytest.approx(chi2.ppf(0.5, 2), rel=0.1)


def test_mcd_requires_enough_rows():
    with pytest.raises(ValueError):
        MinCovDet().fit(np.zeros((5, 3)))


# --------------------------------------------------------------- ensemble --


def small_params(**kw):
    defaults = dict(n_trees=25, subsample=64, lof_k=10, mcd_n_starts=40, seed=0)
    defaults.update(kw)
    return DetectorParams(**defaults)


def test_ensemble_verdict_fields_and_quiet_sample():
    rng = np.random.default_rng(41)
    X = rng.normal(size=(400, 3))
    ens = fit_ensemble(X, small_params())
    v = ens.judge(np.zeros(3), ts=123)
    assert v.ts == 123
    assert set(v.scores) == {"iforest", "lof", "pca", "mcd"}
    assert v.votes == sum(v.flags.values())
    assert v.certainty == v.votes / 4.0
    assert not v.anomalous  # the exact center of the cloud is quiet


def test_ensemble_two_votes_is_anomalous_and_certainty_half():
    rng = np.random.default_rng(42)
    X = rng.normal(size=(300, 3))
    ens = fit_ensemble(X, small_params(vote_threshold=2))
    v = ens.judge(np.zeros(3))
    ens.thresholds = dict(ens.thresholds)
    ens.thresholds["iforest"] = v.scores["iforest"] - 1e-9
    ens.thresholds["pca"] = v.scores["pca"] - 1e-12
    ens.thresholds["lof"] = v.scores["lof"] + 1.0
    ens.thresholds["mcd"] = v.scores["mcd"] + 1.0
    forced = ens.judge(np.zeros(3))
    assert forced.votes == 2 and forced.anomalous and forced.certainty == 0.5


def test_ensemble_training_flag_rate_matches_contamination():
    rng = np.random.default_rng(43)
    n = 1000
    X = rng.normal(size=(n, 4))
    c = 0.02
    # spec-default tree count: enough resolution that scores rarely tie
    ens = fit_ensemble(X, DetectorParams(contamination=c, mcd_n_starts=40, lof_k=10))
    for name in ("iforest", "lof", "pca", "mcd"):
        rate = ens.training_flag_rate[name]
        assert c - 1.0 / n <= rate <= c + 1.0 / n, (name, rate)


def test_ensemble_heldout_false_flag_rate_within_band():
    rng = np.random.default_rng(44)
    train = rng.normal(size=(2000, 3))
    held = rng.normal(size=(10_000, 3))
    c = 0.02
    ens = fit_ensemble(train, small_params(contamination=c, lof_k=20))
    scores = ens.score_all(held)
    for name, s in scores.items():
        rate = float(np.mean(s > ens.thresholds[name]))
        assert c / 2 <= rate <= 2 * c, (name, rate)


def test_ensemble_outlier_gets_full_votes():
    rng = np.random.default_rng(45)
    X = rng.normal(size=(500, 3))
    ens = fit_ensemble(X, small_params())
    v = ens.judge(np.array([30.0, -30.0, 30.0]))
    assert v.votes == 4 and v.certainty == 1.0 and v.anomalous


def test_ensemble_deterministic_and_round_trips(tmp_path):
    rng = np.random.default_rng(46)
    X = rng.normal(size=(300, 3))
    a = fit_ensemble(X, small_params(seed=5))
    b = fit_ensemble(X, small_params(seed=5))
    q = rng.normal(size=(50, 3))
    va = [v.to_json() for v in a.judge_all(q, list(range(50)))]
    vb = [v.to_json() for v in b.judge_all(q, list(range(50)))]
    assert va == vb
    a.save(tmp_path / "ens.json")
    c = Ensemble.load(tmp_path / "ens.json")
    vc = [v.to_json() for v in c.judge_all(q, list(range(50)))]
    assert va == vc
