import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from risbc.scenario import (
    Geometry,
    PlacementError,
    PlacementSpec,
    SystemConfig,
    apply_blockage,
    apply_csi_error,
    build_geometry,
    los_matrix,
    make_rng,
    path_gain_ris,
    path_loss_direct,
    path_loss_ris,
    sample_channels,
)


def pinned(users, **kw):
    return PlacementSpec.single_ris(users=tuple(tuple(u) for u in users), **kw)


def geometry_for(users, config=None, **kw):
    users = [tuple(u) for u in users]
    config = config or SystemConfig(k=len(users))
    return build_geometry(config, pinned(users, **kw))


class TestGeometry:
    def test_bs_ris_distance(self):
        geo = geometry_for([(300, 30, 2)])
        assert geo.d_t_ris[0] == pytest.approx(math.sqrt(1325), rel=1e-14)
        assert geo.d_t_ris[0] == pytest.approx(36.40055, abs=1e-5)

    def test_bs_user_distance(self):
        geo = geometry_for([(300, 30, 2)])
        assert geo.d_t_user[0] == pytest.approx(math.sqrt(90164), rel=1e-14)
        assert geo.d_t_user[0] == pytest.approx(300.2732, abs=1e-4)

    def test_cosines(self):
        geo = geometry_for([(300, 30, 2)])
        assert geo.cos_t[0] == pytest.approx(20 / math.sqrt(1325))
        assert geo.cos_r[0, 0] == pytest.approx(30 / geo.d_ris_user[0, 0])

    def test_user_at_ris_foot_grazes(self):
        geo = geometry_for([(30, 1e-9, 2)])
        assert 0 <= geo.cos_r[0, 0] < 1e-9

    def test_degenerate_placement_rejected(self):
        with pytest.raises(PlacementError):
            geometry_for([(0, 20, 10)])

    def test_wrong_ris_count_rejected(self):
        with pytest.raises(PlacementError):
            build_geometry(SystemConfig(k=1, n_s=2), pinned([(300, 30, 2)]))

    def test_distances_match_euclidean_norm(self):
        rng = make_rng(11)
        cfg = SystemConfig(k=6)
        geo = build_geometry(cfg, PlacementSpec.single_ris(), rng)
        for k, u in enumerate(geo.users):
            assert geo.d_t_user[k] == pytest.approx(math.dist(u, geo.bs), rel=1e-12)
            assert geo.d_ris_user[0, k] == pytest.approx(math.dist(u, geo.ris[0]), rel=1e-12)
        assert geo.d_t_ris[0] == pytest.approx(math.dist(geo.ris[0], geo.bs), rel=1e-12)

    def test_sampled_users_on_grid(self):
        rng = make_rng(3)
        geo = build_geometry(SystemConfig(k=50), PlacementSpec.single_ris(), rng)
        x, y, z = geo.users.T
        assert np.all((x >= 200) & (x <= 500)) and np.allclose(x % 2, 0)
        assert np.all((y >= 1) & (y <= 70)) and np.allclose(y, np.round(y))
        assert np.all((z >= 1.5) & (z <= 2.0 + 1e-12))
        assert np.allclose(z * 100, np.round(z * 100))

    def test_multi_ris_layout(self):
        spec = PlacementSpec.multi_ris(40.0)
        assert spec.ris == ((40, 0, 5), (260, 0, 5), (40, 60, 5), (260, 60, 5))
        geo = build_geometry(SystemConfig(k=6, n_s=4), spec, make_rng(0))
        # every RIS faces the BS and all users
        assert np.all(geo.cos_t > 0) and np.all(geo.cos_r > 0)
        assert np.all((geo.users[:, 0] >= 275) & (geo.users[:, 0] <= 325))
        assert np.all((geo.users[:, 1] >= 5) & (geo.users[:, 1] <= 55))


class TestPathLoss:
    def test_direct_reference_value(self):
        geo = Geometry(bs=np.zeros(3), ris=np.array([[1.0, -1.0, 0.0]]),
                       ris_normal=np.ones(1), users=np.array([[300.0, 0.0, 0.0]]))
        beta = path_loss_direct(geo, 0, SystemConfig(k=1))
        assert beta == pytest.approx((4 * math.pi / 0.15) ** 2 * 300 ** 3, rel=1e-13)
        assert beta == pytest.approx(1.8944e11, rel=1e-3)

    def test_direct_normalization_point(self):
        lam = 0.15
        geo = Geometry(bs=np.zeros(3), ris=np.array([[1.0, -1.0, 0.0]]), ris_normal=np.ones(1),
                       users=np.array([[lam / (4 * math.pi), 0.0, 0.0]]))
        assert path_loss_direct(geo, 0, SystemConfig(k=1, alpha_dir=2)) == pytest.approx(1.0)

    def test_direct_power_law(self):
        near = geometry_for([(150, 20, 10)])
        far = geometry_for([(300, 20, 10)])
        cfg = SystemConfig(k=1)
        assert path_loss_direct(far, 0, cfg) / path_loss_direct(near, 0, cfg) == pytest.approx(8.0)

    def test_ris_gain_matches_hand_formula(self):
        geo = geometry_for([(300, 30, 2)])
        cfg = SystemConfig(k=1)
        d1, d2 = math.sqrt(1325), math.dist((300, 30, 2), (30, 0, 5))
        ct, cr = 20 / d1, 30 / d2
        expected = 2 * 2 * 0.15 ** 4 * ct * cr / (256 * math.pi ** 2 * d1 ** 2 * d2 ** 2)
        assert path_gain_ris(geo, 0, 0, cfg) == pytest.approx(expected, rel=1e-13)
        assert path_loss_ris(geo, 0, 0, cfg) == pytest.approx(1 / expected, rel=1e-13)

    def test_ris_gain_halving_distances(self):
        # same angles, both hops halved
        far = Geometry(bs=np.array([0.0, 40.0, 0.0]), ris=np.zeros((1, 3)), ris_normal=np.ones(1),
                       users=np.array([[0.0, 80.0, 0.0]]))
        near = Geometry(bs=np.array([0.0, 20.0, 0.0]), ris=np.zeros((1, 3)), ris_normal=np.ones(1),
                        users=np.array([[0.0, 40.0, 0.0]]))
        cfg = SystemConfig(k=1)
        assert path_gain_ris(near, 0, 0, cfg) / path_gain_ris(far, 0, 0, cfg) == pytest.approx(16.0)

    def test_grazing_gives_infinite_loss(self):
        geo = Geometry(bs=np.array([0.0, 20.0, 10.0]), ris=np.array([[30.0, 0.0, 5.0]]),
                       ris_normal=np.ones(1), users=np.array([[300.0, 0.0, 2.0]]))
        cfg = SystemConfig(k=1)
        assert path_gain_ris(geo, 0, 0, cfg) == 0.0
        assert path_loss_ris(geo, 0, 0, cfg) == np.inf

    def test_illuminated_from_behind(self):
        geo = Geometry(bs=np.array([0.0, 20.0, 10.0]), ris=np.array([[30.0, 0.0, 5.0]]),
                       ris_normal=np.ones(1), users=np.array([[300.0, -5.0, 2.0]]))
        with pytest.raises(PlacementError):
            path_gain_ris(geo, 0, 0, SystemConfig(k=1))

    @settings(max_examples=60, deadline=None)
    @given(x=st.floats(50, 500), y=st.floats(1, 70), grow=st.floats(1.01, 3.0))
    def test_losses_grow_with_distance(self, x, y, grow):
        cfg = SystemConfig(k=1)
        base = Geometry(bs=np.array([0.0, 20.0, 10.0]), ris=np.array([[30.0, 0.0, 5.0]]),
                        ris_normal=np.ones(1), users=np.array([[x, y, 2.0]]))
        # push the user away from the RIS along the same direction
        ris = base.ris[0]
        far_user = ris + grow * (base.users[0] - ris)
        far = Geometry(bs=base.bs, ris=base.ris, ris_normal=base.ris_normal, users=far_user[None])
        assert path_loss_ris(far, 0, 0, cfg) > path_loss_ris(base, 0, 0, cfg)
        bs_far = Geometry(bs=base.bs, ris=base.ris, ris_normal=base.ris_normal,
                          users=(base.bs + grow * (base.users[0] - base.bs))[None])
        assert path_loss_direct(bs_far, 0, cfg) > path_loss_direct(base, 0, cfg)


def small_config(**kw):
    base = dict(n_t=4, n_r=2, k=3, n_ris=16)
    base.update(kw)
    return SystemConfig(**base)


def draw(cfg, seed, index=0, placement=None):
    rng = make_rng(seed, index)
    geo = build_geometry(cfg, placement or PlacementSpec.single_ris(), rng)
    return geo, sample_channels(cfg, geo, rng, seed=seed)


class TestChannels:
    def test_shapes(self):
        cfg = small_config(n_s=2, n_k=(1, 2, 3))
        placement = PlacementSpec.multi_ris(40.0, active=(1, 2))
        _, ch = draw(cfg, 0, placement=placement)
        assert ch.U.shape == (32, 4)
        for n, d, g in zip((1, 2, 3), ch.D, ch.G):
            assert d.shape == (n, 4)
            assert g.shape == (n, 32)
        assert np.all(np.isfinite(ch.U))

    def test_deterministic(self):
        cfg = small_config()
        _, a = draw(cfg, 5, 7)
        _, b = draw(cfg, 5, 7)
        _, c = draw(cfg, 5, 8)
        for x, y in zip(a.D + a.G + [a.U], b.D + b.G + [b.U]):
            assert np.array_equal(x, y)
        assert not np.array_equal(a.U, c.U)

    def test_infinite_rician_factor_is_los(self):
        cfg = small_config(k=1, rician_factor=np.inf)
        users = ((300.0, 30.0, 2.0),)
        _, a = draw(cfg, 1, placement=pinned(users))
        _, b = draw(cfg, 2, placement=pinned(users))
        assert np.array_equal(a.U, b.U)
        geo = geometry_for(users, cfg)
        from risbc.scenario import _ula_offsets, _ura_offsets
        los = los_matrix(geo.bs, _ula_offsets(4, cfg.s_t), geo.ris[0], _ura_offsets(16, cfg.s_ris),
                         cfg.wavelength)
        assert np.array_equal(a.U, los)
        assert np.allclose(np.abs(a.U), 1.0)

    def test_rayleigh_second_moment(self):
        cfg = SystemConfig(n_t=4, n_r=2, k=1, n_ris=1, rician_factor=0.0)
        users = ((300.0, 30.0, 2.0),)
        geo = geometry_for(users, cfg)
        target = 1.0 / (path_loss_direct(geo, 0, cfg) * cfg.noise)
        rng = make_rng(21)
        vals = []
        for _ in range(1250):  # 1250 draws x 8 entries = 10^4 samples
            ch = sample_channels(cfg, geo, rng)
            vals.append(np.abs(ch.D[0]).ravel() ** 2 / target)
        vals = np.concatenate(vals)
        # |CN(0,1)|^2 is Exp(1): mean 1, std 1
        assert abs(vals.mean() - 1.0) <= 3 / np.sqrt(vals.size)

    def test_with_links(self):
        _, ch = draw(small_config(), 0)
        direct = ch.with_links(ris=False)
        assert all(not np.any(g) for g in direct.G)
        ris_only = ch.with_links(direct=False)
        assert all(not np.any(d) for d in ris_only.D)
        assert np.array_equal(ris_only.G[0], ch.G[0])


class TestImpairments:
    def test_zero_csi_error_is_bitwise_identity(self):
        _, ch = draw(small_config(), 0)
        est = apply_csi_error(ch, 0.0, make_rng(1))
        for x, y in zip(est.D + est.G + [est.U], ch.D + ch.G + [ch.U]):
            assert np.array_equal(x, y)

    def test_csi_error_variance(self):
        _, ch = draw(SystemConfig(n_t=8, n_r=2, k=2, n_ris=900), 0)
        est = apply_csi_error(ch, 0.9, make_rng(2))
        err = np.concatenate([
            (est.u - ch.u).ravel(),
            *[(a - b).ravel() for a, b in zip(est.g_fading, ch.g_fading)],
        ])
        assert err.size >= 10_000
        # |CN(0, s2)|^2 is exponential with mean and std s2
        assert abs(np.mean(np.abs(err) ** 2) - 0.9) <= 3 * 0.9 / np.sqrt(err.size)
        assert est.true is ch
        assert np.array_equal(est.d_scale, ch.d_scale)

    def test_csi_estimate_never_beats_true_optimum(self):
        from risbc.mac_covariance import dual_decomposition
        from risbc.model import composite_channel, mac_objective
        cfg = small_config()
        for seed in range(5):
            _, ch = draw(cfg, seed)
            est = apply_csi_error(ch, 0.5, make_rng(seed, 99))
            theta = np.exp(1j * make_rng(seed, 98).uniform(0, 2 * np.pi, ch.n_elements))
            H_true = composite_channel(ch, theta)
            S_est, _ = dual_decomposition(composite_channel(est, theta), cfg.power)
            S_true, _ = dual_decomposition(H_true, cfg.power)
            assert mac_objective(H_true, S_est) <= mac_objective(H_true, S_true) + 1e-6

    def test_blockage_extremes(self):
        _, ch = draw(small_config(), 0)
        same = apply_blockage(ch, 1.0, make_rng(1))
        assert not same.blocked.any()
        for a, b in zip(same.D, ch.D):
            assert np.array_equal(a, b)
        gone = apply_blockage(ch, 0.0, make_rng(1))
        assert gone.blocked.all()
        assert all(not np.any(d) for d in gone.D)
        assert np.array_equal(gone.G[0], ch.G[0])

    def test_blockage_fraction(self):
        _, ch = draw(small_config(k=2), 0)
        rng = make_rng(4)
        kept = np.array([~apply_blockage(ch, 0.5, rng).blocked for _ in range(5000)]).ravel()
        assert kept.size == 10_000
        assert abs(kept.mean() - 0.5) <= 3 * 0.5 / np.sqrt(kept.size)

    def test_blockage_and_csi_commute_in_distribution(self):
        cfg = SystemConfig(n_t=2, n_r=1, k=2, n_ris=4, rician_factor=0.0)
        geo = geometry_for([(300, 30, 2), (250, 10, 2)], cfg)
        rng = make_rng(8)
        a, b = [], []
        for _ in range(2000):
            ch = sample_channels(cfg, geo, rng)
            x = apply_csi_error(apply_blockage(ch, 0.5, rng), 0.3, rng)
            ch = sample_channels(cfg, geo, rng)
            y = apply_blockage(apply_csi_error(ch, 0.3, rng), 0.5, rng)
            a.append([np.sum(np.abs(d) ** 2) for d in x.D])
            b.append([np.sum(np.abs(d) ** 2) for d in y.D])
        a, b = np.array(a), np.array(b)
        se = np.sqrt(a.var(axis=0) / len(a) + b.var(axis=0) / len(b))
        assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 3 * se)
