import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jcas_channel.core import (
    ChannelPair,
    ClusterKind,
    EmptyChannelError,
    LinkChannel,
    LinkTag,
    Mpc,
    ParameterError,
    ScenarioConfig,
    UndefinedSDError,
)
from jcas_channel.model import (
    aod_from_vector,
    aod_unit_vector,
    bistatic_delay,
    derive_shared_comm_subclusters,
    generate_channel_pair,
    generate_nonshared_comm_clusters,
    generate_sensing_clusters,
    generation_tables,
    localize_scatterers,
    padp_from_mpcs,
    sharing_degree,
    sharing_degree_from_amplitudes,
    synthesize_channel_pair,
)
from jcas_channel.stats import rms_angle_spread, rms_delay_spread


def _arrays(lc: LinkChannel):
    return [lc.aod_deg, lc.delay_ns, lc.amplitude, lc.rcs, lc.cluster_id, lc.kind]


def test_generation_is_bit_identical_for_equal_seeds(small_cfg):
    a = generate_channel_pair(small_cfg)
    b = generate_channel_pair(small_cfg)
    for x, y in zip(_arrays(a.comm) + _arrays(a.sensing), _arrays(b.comm) + _arrays(b.sensing)):
        if x is None:
            assert y is None
        else:
            assert x.tobytes() == y.tobytes()
    c = generate_channel_pair(small_cfg, seed=small_cfg.seed + 1)
    assert c.sensing.delay_ns.tobytes() != a.sensing.delay_ns.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5), st.integers(0, 4), st.integers(0, 5), st.integers(0, 2**32))
def test_counts_normalization_and_shared_aods(n0, n1, n2, seed):
    if n0 + n2 == 0:
        return
    cfg = ScenarioConfig(n0=n0, n1=n1, n2=n2)
    pair = generate_channel_pair(cfg, seed)
    assert pair.counts == (n0, n1, n2)
    assert pair.n_c == n0 + n1 and pair.n_s == n0 + n2 and pair.n == n0 + n1 + n2
    assert pair.sensing.power().sum() == pytest.approx(1.0, abs=1e-9)
    if n0 + n1:
        assert pair.comm.power().sum() == pytest.approx(1.0, abs=1e-9)
    sens = {c.cluster_id: c for c in pair.clusters if c.link is LinkTag.SENSING}
    shared_comm = [c for c in pair.clusters if c.link is LinkTag.COMMUNICATION and c.kind is ClusterKind.SHARED]
    assert len(shared_comm) == n0
    for c in shared_comm:
        assert c.centroid_aod_deg == sens[c.cluster_id].centroid_aod_deg
        assert sens[c.cluster_id].kind is ClusterKind.SHARED
    assert np.all(pair.sensing.rcs > 0)
    assert pair.comm.rcs is None


def test_count_identities_example():
    pair = generate_channel_pair(ScenarioConfig(n0=8, n1=2, n2=5), 3)
    assert (pair.n_c, pair.n_s, pair.n) == (10, 13, 15)


def test_sensing_generation_edge_cases(rng):
    with pytest.raises(EmptyChannelError):
        generate_sensing_clusters(ScenarioConfig(n0=0, n1=1, n2=0), rng)
    one = generate_sensing_clusters(ScenarioConfig(n0=1, n1=0, n2=0), rng)
    t = generation_tables(one)
    assert rms_delay_spread(t.centroid_delay_ns, t.power)[1] == 0.0
    assert rms_angle_spread(t.centroid_aod_deg, t.power) == 0.0


def test_intra_cluster_structure_hits_drawn_spreads(rng):
    cfg = ScenarioConfig(n0=0, n1=0, n2=6)
    for c in generate_sensing_clusters(cfg, rng):
        assert c.n_paths >= 1
        p = np.abs(c.effective_amplitude()) ** 2
        assert rms_delay_spread(c.delay_ns, p)[1] == pytest.approx(c.intra_ds_ns, rel=1e-9, abs=1e-12)
        assert rms_angle_spread(c.aod_deg, p) == pytest.approx(c.intra_as_deg, rel=1e-6, abs=1e-9)
    assert min(c.delay_ns.min() for c in generate_sensing_clusters(cfg, rng)) == pytest.approx(cfg.min_delay_ns)


def test_shared_subcluster_selection(rng):
    cfg = ScenarioConfig(n0=4, n1=0, n2=2)
    sens = generate_sensing_clusters(cfg, rng)
    assert derive_shared_comm_subclusters(sens, 0, cfg, rng) == []
    full = derive_shared_comm_subclusters(sens, len(sens), cfg, rng)
    assert sorted(c.cluster_id for c in full) == list(range(len(sens)))
    for c in full:
        assert c.centroid_aod_deg == sens[c.cluster_id].centroid_aod_deg
        assert c.rcs is None
    with pytest.raises(ParameterError):
        derive_shared_comm_subclusters(sens, len(sens) + 1, cfg, rng)


def test_nonshared_comm_clusters(rng):
    cfg = ScenarioConfig(n0=0, n1=3, n2=1)
    assert generate_nonshared_comm_clusters(cfg, 0, rng) == []
    out = generate_nonshared_comm_clusters(cfg, 3, rng, id_offset=1)
    assert [c.cluster_id for c in out] == [1, 2, 3]
    assert all(c.kind is ClusterKind.COMM_ONLY and c.rcs is None for c in out)


def test_shared_only_pair_comm_ids_subset_of_sensing():
    pair = generate_channel_pair(ScenarioConfig(n0=5, n1=0, n2=0), 9)
    assert set(pair.comm.cluster_id) <= set(pair.sensing.cluster_id)
    assert set(pair.sensing.kind) == {"shared"}


def test_synthesize_rejects_empty():
    with pytest.raises(EmptyChannelError):
        synthesize_channel_pair([], [], [])


def test_same_seed_pairs_sensing_across_n0():
    a = generate_channel_pair(ScenarioConfig(n0=2, n1=0, n2=8), 4)
    b = generate_channel_pair(ScenarioConfig(n0=6, n1=0, n2=4), 4)
    assert a.sensing.delay_ns.tobytes() == b.sensing.delay_ns.tobytes()


def test_geometric_shared_delays():
    cfg = ScenarioConfig(n0=3, n1=0, n2=0, shared_delay_mode="geometric", rx_position=(4.0, 3.0))
    pair = generate_channel_pair(cfg, 2)
    sens = {c.cluster_id: c for c in pair.clusters if c.link is LinkTag.SENSING}
    for c in pair.clusters:
        if c.link is LinkTag.COMMUNICATION:
            t = sens[c.cluster_id]
            point = localize_scatterers([Mpc("sensing", t.centroid_aod_deg, t.centroid_delay_ns, 1.0)])[0]
            expected = bistatic_delay(point, cfg.tx_position, cfg.rx_position, cfg.wave_speed_m_per_ns)
            assert c.centroid_delay_ns >= expected - 1e-9


def test_los_cluster_carries_requested_power_fraction():
    cfg = ScenarioConfig(n0=3, n1=1, n2=1, los=True, los_power_fraction=0.4)
    pair = generate_channel_pair(cfg, 5)
    assert pair.counts == (3, 2, 1)
    los = [c for c in pair.clusters if c.link is LinkTag.COMMUNICATION and c.n_paths == 1
           and c.centroid_aod_deg == cfg.reference_aod_deg]
    assert len(los) == 1
    assert los[0].power == pytest.approx(0.4, rel=1e-9)


# -- PADP ----------------------------------------------------------------


def test_padp_examples():
    one = padp_from_mpcs([Mpc("comm", 12.0, 3.5, 1.0)])
    assert one.total_power == 1.0 and np.count_nonzero(one.power) == 1
    two = padp_from_mpcs([Mpc("comm", 12.0, 3.2, math.sqrt(0.3)), Mpc("comm", 13.0, 3.7, math.sqrt(0.7))])
    assert two.power.max() == pytest.approx(1.0)
    assert np.diff(two.angle_grid_deg)[0] == 5.0 and np.diff(two.delay_grid_ns)[0] == 1.0
    empty = padp_from_mpcs([])
    assert empty.power.size == 0 and empty.total_power == 0.0
    with pytest.raises(ValueError):
        padp_from_mpcs([], angle_bin_deg=0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_padp_conserves_power(seed):
    pair = generate_channel_pair(ScenarioConfig(n0=2, n1=1, n2=1), seed)
    for lc in (pair.comm, pair.sensing):
        assert padp_from_mpcs(lc).total_power == pytest.approx(lc.power().sum(), rel=1e-9)


# -- sharing degree ------------------------------------------------------


def _pair_from(amps, kinds, rcs=None):
    n = len(amps)
    sens = LinkChannel("sensing", np.zeros(n), np.ones(n), amps, rcs=rcs, kind=kinds)
    comm = LinkChannel.empty(LinkTag.COMMUNICATION)
    return ChannelPair(comm, sens, (0, 0, 0))


def test_sharing_degree_anchors():
    assert sharing_degree(_pair_from([1.0, 2.0], ["shared", "shared"])) == 1.0
    assert sharing_degree(_pair_from([1.0, 2.0], ["sensing_only"] * 2)) == 0.0
    amps = [math.sqrt(0.65), math.sqrt(0.35)]
    assert sharing_degree(_pair_from(amps, ["shared", "sensing_only"])) == pytest.approx(0.65, abs=1e-15)


def test_coherent_sharing_degree_example():
    sd = sharing_degree(_pair_from([1.0, -1.0, 1.0], ["shared", "shared", "sensing_only"]), mode="coherent")
    assert sd == 0.0


def test_sharing_degree_uses_rcs_and_explicit_labels():
    pair = _pair_from([1.0, 1.0], ["shared", "sensing_only"], rcs=[2.0, 1.0])
    assert sharing_degree(pair) == pytest.approx(0.8)
    assert sharing_degree(pair, labels=[False, True]) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        sharing_degree(pair, labels=[True])


def test_sharing_degree_zero_power():
    with pytest.raises(UndefinedSDError):
        sharing_degree_from_amplitudes(np.zeros(2), np.array([True, False]))
    with pytest.raises(UndefinedSDError):
        sharing_degree_from_amplitudes(np.array([1.0, -1.0]), np.array([True, False]), "coherent")


@given(
    st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False), min_size=1, max_size=15),
    st.data(),
)
def test_incoherent_sd_properties(amps, data):
    a = np.array(amps)
    if np.sum(np.abs(a) ** 2) < 1e-12:
        return
    mask = np.array(data.draw(st.lists(st.booleans(), min_size=a.size, max_size=a.size)))
    sd = sharing_degree_from_amplitudes(a, mask)
    assert 0.0 <= sd <= 1.0 + 1e-12
    scale = data.draw(st.floats(0.01, 100))
    assert sharing_degree_from_amplitudes(a * scale, mask) == pytest.approx(sd, rel=1e-9, abs=1e-12)
    if (~mask).any():
        flip = mask.copy()
        flip[np.flatnonzero(~mask)[0]] = True
        assert sharing_degree_from_amplitudes(a, flip) >= sd - 1e-12
    assert sharing_degree_from_amplitudes(a, mask, "coherent") >= 0.0


# -- geometry ------------------------------------------------------------


def test_localization_examples():
    far = localize_scatterers([Mpc("sensing", 0.0, 1022.0, 1.0)])[0]
    assert np.linalg.norm(far) == pytest.approx(153.3)
    near = localize_scatterers([Mpc("sensing", 77.0, 0.0, 1.0)], tx_position=(2.0, -1.0))[0]
    np.testing.assert_allclose(near, [2.0, -1.0])
    south = localize_scatterers([Mpc("sensing", 0.0, 20.0, 1.0)])[0]
    np.testing.assert_allclose(south, [0.0, -3.0], atol=1e-12)


@given(st.floats(-200, 200), st.floats(-200, 200))
def test_localization_round_trip(x, y):
    tx = np.array([1.5, -2.0])
    p = np.array([x, y])
    if np.linalg.norm(p - tx) < 1e-3:
        return
    delay = 2.0 * np.linalg.norm(p - tx) / 0.3
    aod = aod_from_vector(p - tx)
    got = localize_scatterers([Mpc("sensing", aod, delay, 1.0)], tx_position=tx)[0]
    np.testing.assert_allclose(got, p, atol=1e-9)


def test_unit_vector_convention():
    np.testing.assert_allclose(aod_unit_vector(90.0), [-1.0, 0.0], atol=1e-12)
    assert aod_from_vector(aod_unit_vector(123.0)) == pytest.approx(123.0)
    assert bistatic_delay((3.0, 4.0), (0.0, 0.0), (0.0, 0.0), 0.3) == pytest.approx(10.0 / 0.3)
