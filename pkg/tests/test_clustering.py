import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from jcas_channel.clustering import (
    ClusteringConfig,
    JointMpcSet,
    McdParams,
    Partition,
    UndefinedIndexError,
    best_of_restarts,
    calinski_harabasz,
    classify_clusters,
    combined_indicator,
    compute_gamma,
    davies_bouldin,
    denoise,
    kpowermeans,
    mcd,
    merge_links,
    run_kpm_jca,
    run_kpm_jca_snapshots,
    select_k,
)
from jcas_channel.core import ClusterKind, LinkChannel, LinkTag, Mpc, ParameterError
from jcas_channel.sim import label_accuracy, planted_channel

from oracles import cluster_cost, exhaustive_optimum, mcd_direct


def comm(aod, delay, power):
    return LinkChannel("comm", aod, delay, np.sqrt(np.asarray(power, float)))


def sens(aod, delay, power):
    return LinkChannel("sensing", aod, delay, np.sqrt(np.asarray(power, float)))


def joint_from(aod, delay, power, n_comm=0):
    aod, delay, power = (np.asarray(x, float) for x in (aod, delay, power))
    s = slice(0, len(aod) - n_comm)
    c = slice(len(aod) - n_comm, len(aod))
    return merge_links(comm(aod[c], delay[c], power[c]), sens(aod[s], delay[s], power[s]), 1.0)


instances = st.integers(2, 8).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0, 359.9), min_size=n, max_size=n),
        st.lists(st.floats(0, 100), min_size=n, max_size=n),
        st.lists(st.floats(0.1, 10), min_size=n, max_size=n),
    )
)


# -- preprocessing -------------------------------------------------------


def test_denoise_threshold_is_inclusive_and_per_link():
    db = lambda x: 10 ** (x / 10)
    mpcs = [
        Mpc("comm", 0.0, 1.0, 1.0),
        Mpc("comm", 0.0, 2.0, math.sqrt(db(-31))),
        Mpc("comm", 0.0, 3.0, math.sqrt(db(-30))),
        Mpc("sensing", 0.0, 1.0, math.sqrt(db(-40)), rcs=1.0),
    ]
    kept = denoise(mpcs, 30.0)
    assert [m.delay_ns for m in kept] == [1.0, 3.0, 1.0]  # lone sensing MPC is its link's peak
    equal = comm([0.0, 1.0, 2.0], [1.0, 2.0, 3.0], [2.0, 2.0, 2.0])
    assert len(denoise(equal, 30.0)) == 3
    assert denoise([], 30.0) == []
    with pytest.raises(ParameterError):
        denoise(equal, 0.0)


def test_compute_gamma_policies():
    s = sens([0.0, 1.0], [1.0, 1.0], [1.0, 1.0])
    c = comm([0.0, 1.0, 2.0, 3.0], [1.0] * 4, [1.0] * 4)
    assert compute_gamma(c, s, "equal_total") == pytest.approx(0.5)
    assert compute_gamma(c, s, "equal_mean") == pytest.approx(1.0)
    same = comm([0.0], [1.0], [3.0])
    assert compute_gamma(same, sens([0.0], [1.0], [3.0])) == 1.0
    assert compute_gamma(c, s, 2.0) == 2.0
    with pytest.raises(ZeroDivisionError):
        compute_gamma(comm([0.0], [1.0], [0.0]), s)
    with pytest.raises(ParameterError):
        compute_gamma([], s)
    with pytest.raises(ParameterError):
        compute_gamma(c, s, -1.0)


def test_merge_links():
    c = comm(np.zeros(5), np.arange(5.0), np.full(5, 0.1))
    s = sens(np.zeros(7), np.arange(7.0), np.full(7, 0.2))
    j1 = merge_links(c, s, 1.0)
    assert len(j1) == 12
    np.testing.assert_array_equal(j1.power, j1.raw_power)
    j = merge_links(c, s, 0.5)
    assert j.power[j.is_comm] == pytest.approx([0.05] * 5)
    assert j.raw_power[j.is_comm] == pytest.approx([0.1] * 5)
    assert j.power[~j.is_comm] == pytest.approx([0.2] * 7)
    assert j.links.count(LinkTag.COMMUNICATION) == 5
    with pytest.raises(ParameterError):
        merge_links(c, s, 0.0)


# -- distance ------------------------------------------------------------


def test_mcd_examples():
    p = McdParams(8.0, 3.0, 10.0)
    assert mcd((12.0, 5.0), (12.0, 5.0), p) == 0.0
    assert mcd((0.0, 5.0), (180.0, 5.0), p) == pytest.approx(1.0)
    assert mcd((30.0, 2.0), (30.0, 7.0), p) == pytest.approx(8.0 * 5.0 / 10.0 * 3.0 / 10.0)
    flat = McdParams.from_delays([4.0, 4.0, 4.0])
    assert flat.delay_scale == 0.0
    assert mcd((0.0, 4.0), (90.0, 4.0), flat) == pytest.approx(math.sqrt(2) / 2)
    with pytest.raises(ParameterError):
        McdParams(0.0)


@given(st.floats(0, 360), st.floats(0, 100), st.floats(0, 360), st.floats(0, 100))
def test_mcd_symmetric_nonnegative_and_matches_definition(t1, d1, t2, d2):
    p = McdParams(8.0, 12.0, 100.0)
    a, b = Mpc("comm", t1, d1, 1.0), Mpc("comm", t2, d2, 1.0)
    assert mcd(a, b, p) == pytest.approx(mcd(b, a, p), abs=1e-12)
    assert mcd(a, b, p) >= 0.0
    assert mcd(a, a, p) == 0.0
    assert mcd(a, b, p) == pytest.approx(mcd_direct(t1, d1, t2, d2, 8.0, 12.0, 100.0), abs=1e-9)


# -- KPowerMeans ---------------------------------------------------------


def test_closed_form_centroid_minimizes_cluster_cost():
    rng = np.random.default_rng(3)
    for _ in range(5):
        theta = rng.uniform(0, 120, 6)
        tau = rng.uniform(0, 50, 6)
        w = rng.uniform(0.1, 2, 6)
        std, ptp = float(np.std(tau)), float(np.ptp(tau))

        def f(x):
            return sum(wi * mcd_direct(t, d, x[0], x[1], 8.0, std, ptp) ** 2 for t, d, wi in zip(theta, tau, w))

        numeric = min(
            minimize(f, [t0, 25.0], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14}).fun
            for t0 in (0.0, 60.0, 120.0, 240.0)
        )
        assert cluster_cost(theta, tau, w, 8.0, std, ptp) <= numeric + 1e-9


def test_k_equals_n_and_k_one():
    theta = np.array([10.0, 80.0, 200.0, 300.0])
    tau = np.array([1.0, 5.0, 9.0, 20.0])
    w = np.array([1.0, 2.0, 3.0, 4.0])
    joint = joint_from(theta, tau, w)
    params = McdParams.from_joint(joint)
    p = kpowermeans(joint, 4, params)
    assert sorted(p.assignment.tolist()) == [0, 1, 2, 3]
    assert p.cost == pytest.approx(0.0, abs=1e-12)
    one = kpowermeans(joint, 1, params)
    z = np.sum(w * np.exp(1j * np.deg2rad(theta)))
    assert one.centroids[0, 0] == pytest.approx(np.rad2deg(np.angle(z)) % 360.0)
    assert one.centroids[0, 1] == pytest.approx(np.dot(w, tau) / w.sum())
    with pytest.raises(ParameterError):
        kpowermeans(joint, 5, params)
    with pytest.raises(ParameterError):
        kpowermeans(joint, 0, params)


def test_two_far_blobs_split_perfectly():
    rng = np.random.default_rng(0)
    theta = np.r_[rng.normal(10, 2, 10), rng.normal(190, 2, 10)] % 360
    tau = np.r_[rng.normal(5, 0.5, 10), rng.normal(105, 0.5, 10)]
    joint = joint_from(theta, tau, np.ones(20))
    params = McdParams.from_joint(joint)
    p = best_of_restarts(joint, 2, params)
    truth = np.r_[np.zeros(10), np.ones(10)]
    assert label_accuracy(p.assignment, truth) == 1.0
    assert p.cost == pytest.approx(exhaustive_like_two_blob_cost(theta, tau, params))


def exhaustive_like_two_blob_cost(theta, tau, params):
    w = np.ones(10)
    std, ptp = params.delay_std_ns, params.delay_range_ns
    return cluster_cost(theta[:10], tau[:10], w, 8.0, std, ptp) + cluster_cost(theta[10:], tau[10:], w, 8.0, std, ptp)


@settings(max_examples=40, deadline=None)
@given(instances, st.integers(1, 4), st.integers(0, 2**16))
def test_kpowermeans_cover_and_monotone_cost(inst, k, seed):
    theta, tau, w = (np.array(x) for x in inst)
    k = min(k, len(theta))
    joint = joint_from(theta, tau, w, n_comm=len(theta) // 2)
    params = McdParams.from_joint(joint)
    p = kpowermeans(joint, k, params, rng=np.random.default_rng(seed))
    assert p.assignment.shape == (len(theta),)
    assert set(p.assignment.tolist()) == set(range(k))  # every cluster non-empty
    assert p.cost >= 0.0
    hist = np.array(p.cost_history)
    assert np.all(np.diff(hist) <= 1e-12 * max(1.0, hist[0]))


@settings(max_examples=15, deadline=None)
@given(instances, st.integers(2, 3))
def test_best_of_restarts_matches_exhaustive_optimum(inst, k):
    theta, tau, w = (np.array(x) for x in inst)
    if len(theta) < k:
        return
    joint = joint_from(theta, tau, w)
    params = McdParams.from_joint(joint)
    got = best_of_restarts(joint, k, params, restarts=10).cost
    assert got == pytest.approx(exhaustive_optimum(theta, tau, w, k, 8.0), abs=1e-9)


# -- validity indices ----------------------------------------------------


def _partition(labels, joint, params):
    labels = np.asarray(labels)
    k = labels.max() + 1
    return Partition(k, labels, np.zeros((k, 2)), 0.0)


def test_indices_prefer_tight_far_clusters():
    tight = joint_from([0, 2, 4, 180, 182, 184], [0, 0, 0, 0, 0, 0], np.ones(6))
    loose = joint_from([0, 40, 80, 60, 100, 140], [0, 0, 0, 0, 0, 0], np.ones(6))
    labels = [0, 0, 0, 1, 1, 1]
    pt = McdParams.from_joint(tight)
    pl = McdParams.from_joint(loose)
    assert davies_bouldin(_partition(labels, tight, pt), tight, pt) < davies_bouldin(
        _partition(labels, loose, pl), loose, pl
    )
    assert calinski_harabasz(_partition(labels, tight, pt), tight, pt) > calinski_harabasz(
        _partition(labels, loose, pl), loose, pl
    )


def test_db_hand_value_for_symmetric_pairs():
    # pairs at 0 +- a and 180 +- a with equal delays; centroids at 0 and 180
    a = 20.0
    joint = joint_from([-a, a, 180 - a, 180 + a], [0, 0, 0, 0], np.ones(4))
    params = McdParams.from_joint(joint)
    scatter = 0.5 * math.dist((math.cos(math.radians(a)), math.sin(math.radians(a))), (1.0, 0.0))
    sep = 1.0
    p = _partition([0, 0, 1, 1], joint, params)
    assert davies_bouldin(p, joint, params) == pytest.approx(2 * scatter / sep, rel=1e-12)


def test_indices_on_duplicated_points():
    rng = np.random.default_rng(7)
    theta = np.r_[rng.normal(30, 5, 5), rng.normal(150, 5, 5), rng.normal(270, 5, 5)] % 360
    tau = rng.uniform(0, 30, 15)
    w = rng.uniform(0.5, 2, 15)
    labels = np.repeat([0, 1, 2], 5)
    j1 = joint_from(theta, tau, w)
    j2 = joint_from(np.r_[theta, theta], np.r_[tau, tau], np.r_[w, w])
    p1 = McdParams.from_joint(j1)
    p2 = McdParams.from_joint(j2)
    assert p2.delay_scale == pytest.approx(p1.delay_scale)
    db1 = davies_bouldin(_partition(labels, j1, p1), j1, p1)
    db2 = davies_bouldin(_partition(np.r_[labels, labels], j2, p2), j2, p2)
    assert db2 == pytest.approx(db1, abs=1e-9)
    ch1 = calinski_harabasz(_partition(labels, j1, p1), j1, p1)
    ch2 = calinski_harabasz(_partition(np.r_[labels, labels], j2, p2), j2, p2)
    n, k = 15, 3
    assert ch2 == pytest.approx(ch1 * (2 * n - k) / (n - k), rel=1e-9)


def test_indices_need_two_clusters():
    joint = joint_from([0, 1], [0, 1], [1, 1])
    params = McdParams.from_joint(joint)
    p = _partition([0, 0], joint, params)
    with pytest.raises(UndefinedIndexError):
        davies_bouldin(p, joint, params)
    with pytest.raises(UndefinedIndexError):
        calinski_harabasz(p, joint, params)


# -- selection -----------------------------------------------------------


def test_select_k_examples():
    scores = [(2, 0.9, 100.0), (3, 0.5, 300.0), (4, 0.7, 200.0)]
    assert select_k(scores) == 3
    assert combined_indicator(scores)[1] == 1.0
    quoted = [(2, 0.80, 2740.0), (11, 0.6876, 2600.0), (15, 0.7042, 2735.0)]
    c15 = combined_indicator(quoted)[2]
    assert c15 == pytest.approx(0.5 * (0.6876 / 0.7042 + 2735 / 2740), abs=1e-12)
    assert c15 == pytest.approx(0.9873, abs=1e-4)
    tie = [(5, 1.0, 10.0), (3, 2.0, 20.0)]
    assert combined_indicator(tie)[0] == combined_indicator(tie)[1]
    assert select_k(tie) == 3


@given(
    st.lists(st.tuples(st.floats(0.1, 10), st.floats(0.1, 1e4)), min_size=1, max_size=10),
    st.floats(0.01, 100),
    st.floats(0.01, 100),
)
def test_select_k_scale_invariant(vals, a, b):
    scores = [(k + 2, db, ch) for k, (db, ch) in enumerate(vals)]
    scaled = [(k, db * a, ch * b) for k, db, ch in scores]
    base = combined_indicator(scores)
    assert all(0.0 < v <= 1.0 + 1e-12 for v in base)
    np.testing.assert_allclose(combined_indicator(scaled), base, rtol=1e-9)
    assert select_k(scaled) == select_k(scores) or np.isclose(
        max(base), base[[k for k, _, _ in scores].index(select_k(scaled))], rtol=1e-9
    )


# -- pipeline ------------------------------------------------------------


def test_run_kpm_jca_k_range_and_determinism():
    c, s = planted_channel(np.random.default_rng(1), mpcs_per_link=6)
    cfg = ClusteringConfig(restarts=2)
    res = run_kpm_jca(c, s, (2, 20), cfg)
    assert [sc.k for sc in res.scores] == list(range(2, 21))
    assert len(res.partitions) == 19
    again = run_kpm_jca(c, s, (2, 20), cfg)
    assert again.k_star == res.k_star
    assert again.partition.assignment.tobytes() == res.partition.assignment.tobytes()
    with pytest.raises(ParameterError):
        run_kpm_jca(c, s, (1, 5), cfg)
    with pytest.raises(ParameterError):
        run_kpm_jca(c, s, (2, 10**6), cfg)
    with pytest.raises(ParameterError):
        run_kpm_jca(c, LinkChannel.empty(LinkTag.SENSING), (2, 5), cfg)
    single = run_kpm_jca(c, LinkChannel.empty(LinkTag.SENSING), (2, 4), ClusteringConfig(allow_single_link=True))
    assert single.joint.gamma == 1.0


def test_planted_recovery_small():
    c, s = planted_channel(np.random.default_rng(4))
    res = run_kpm_jca(c, s, (2, 10), ClusteringConfig(seed=4))
    assert res.k_star == 5
    assert label_accuracy(res.partition.assignment, res.joint.truth_labels) >= 0.95
    cls = classify_clusters(res.partition, res.joint)
    assert cls.counts() == {"total": 5, "sensing": 4, "comm": 4, "shared": 3}


def test_snapshot_averaging():
    snaps = [planted_channel(np.random.default_rng(s), mpcs_per_link=8) for s in range(3)]
    cfg = ClusteringConfig(restarts=3)
    k_star, scores, results = run_kpm_jca_snapshots(snaps, (2, 8), cfg)
    assert len(results) == 3 and all(r.k_star == k_star for r in results)
    for sc in scores:
        assert sc.db == pytest.approx(np.mean([r.partitions[sc.k].db for r in results]))
        assert sc.ch == pytest.approx(np.mean([r.partitions[sc.k].ch for r in results]))
    assert k_star == select_k([(sc.k, sc.db, sc.ch) for sc in scores])


# -- classification ------------------------------------------------------


def test_classify_kinds_and_min_count():
    c = comm([10.0, 11.0, 200.0], [5.0, 5.5, 40.0], [1.0, 1.0, 0.01])
    s = sens([10.5, 9.5, 200.5, 201.0, 300.0], [5.2, 5.1, 40.0, 41.0, 60.0], [1.0, 1.0, 1.0, 1.0, 1.0])
    joint = merge_links(c, s, 1.0)
    # sensing order first: s0 s1 s2 s3 s4 | c0 c1 c2
    labels = np.array([0, 0, 1, 1, 2, 0, 0, 1])
    p = Partition(3, labels, np.zeros((3, 2)), 0.0)
    cls = classify_clusters(p, joint)
    assert cls.kinds == [ClusterKind.SHARED, ClusterKind.SHARED, ClusterKind.SENSING_ONLY]
    strict = classify_clusters(p, joint, min_count=2)
    assert strict.kinds == [ClusterKind.SHARED, ClusterKind.SENSING_ONLY, ClusterKind.SENSING_ONLY]
    assert strict.counts() == {"total": 3, "sensing": 3, "comm": 1, "shared": 1}
    assert cls.sd_sensing == pytest.approx(4.0 / 5.0)
    assert cls.sd_comm == pytest.approx(1.0)
    only_sensing = Partition(3, np.array([0, 0, 1, 1, 2, 2, 2, 2]), np.zeros((3, 2)), 0.0)
    assert classify_clusters(only_sensing, joint).kinds[:2] == [ClusterKind.SENSING_ONLY] * 2


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100))
def test_classification_sd_ignores_gamma(gamma):
    c, s = planted_channel(np.random.default_rng(2), mpcs_per_link=5)
    j1, j2 = merge_links(c, s, 1.0), merge_links(c, s, gamma)
    labels = np.concatenate([s.cluster_id, c.cluster_id])
    p = Partition(5, labels, np.zeros((5, 2)), 0.0)
    a, b = classify_clusters(p, j1), classify_clusters(p, j2)
    assert (a.sd_comm, a.sd_sensing) == (b.sd_comm, b.sd_sensing)
