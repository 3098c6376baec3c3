import numpy as np
import pytest

from adsim.simworld import (
    CREATIVE_BASE,
    CreativePolicy,
    WorldConfig,
    ad_creative_quality,
    creative_index,
    creative_uid,
    ecpm,
    generate_log,
    generate_log_columns,
    generate_world,
    load_world,
    save_world,
    true_ctr,
)


def tiny_config(**overrides):
    base = dict(num_users=60, num_ads=12, slots=1, retrieval_size=12,
                behavior_len=5, seed=0)
    base.update(overrides)
    return WorldConfig(**base)


# ---------------------------------------------------------------------------
# Config validation and world construction
# ---------------------------------------------------------------------------

def test_config_validation_errors():
    with pytest.raises(ValueError):
        generate_world(tiny_config(num_users=0))
    with pytest.raises(ValueError):
        generate_world(tiny_config(creatives_min=0))
    with pytest.raises(ValueError):
        generate_world(tiny_config(creatives_min=5, creatives_max=3))
    with pytest.raises(ValueError):
        generate_world(tiny_config(slots=3))  # needs L << M
    with pytest.raises(ValueError):
        generate_world(tiny_config(retrieval_size=13))
    with pytest.raises(ValueError):
        generate_world(tiny_config(forced_ad_ctrs=((0.2, 2),)))
    with pytest.raises(ValueError):
        generate_world(tiny_config(
            forced_ad_ctrs=tuple((1.5, 2) for _ in range(12))))


def test_world_is_deterministic_in_seed():
    a = generate_world(tiny_config(seed=7))
    b = generate_world(tiny_config(seed=7))
    c = generate_world(tiny_config(seed=8))
    assert np.array_equal(a.user_latent, b.user_latent)
    assert np.array_equal(a.ctr_tensor(), b.ctr_tensor(), equal_nan=True)
    assert np.array_equal(a.behavior, b.behavior)
    assert not np.array_equal(a.user_latent, c.user_latent)


def test_ctr_tensor_shape_and_nan_padding():
    world = generate_world(tiny_config())
    tensor = world.ctr_tensor()
    assert tensor.shape == (world.num_users, world.num_ads, world.max_n)
    slot = np.arange(world.max_n)[None, :]
    valid = slot < world.n_creatives[:, None]
    assert np.isnan(tensor[:, ~valid]).all()
    vals = tensor[:, valid]
    assert ((vals > 0) & (vals < 1)).all()
    # cache returns the same array
    assert world.ctr_tensor() is tensor


def test_creative_uid_round_trip_and_true_ctr():
    world = generate_world(tiny_config())
    ad = 3
    uid = creative_uid(ad, 1)
    assert uid == ad * CREATIVE_BASE + 1
    assert creative_index(uid) == 1
    assert uid in world.candidates(ad)
    assert true_ctr(world, 0, ad, uid) == world.ctr_tensor()[0, ad, 1]
    with pytest.raises(ValueError):
        true_ctr(world, 0, ad, creative_uid(ad, 19))


def test_forced_ad_ctrs_override_latents():
    cfg = WorldConfig(num_users=30, num_ads=2, slots=1, retrieval_size=2,
                      forced_ad_ctrs=((0.2, 2), (0.3, 3)), seed=1)
    world = generate_world(cfg)
    tensor = world.ctr_tensor()
    assert np.allclose(tensor[:, 0, :2], 0.2)
    assert np.allclose(tensor[:, 1, :3], 0.3)
    assert np.isnan(tensor[:, 0, 2]).all()


def test_effect_heterogeneity_scales_by_bundle_size():
    cfg = tiny_config(creatives_min=2, creatives_max=8,
                      effect_heterogeneity="by_count", seed=3)
    world = generate_world(cfg)
    spread = np.nanstd(world.creative_effect, axis=1)
    n = world.n_creatives
    big, small = spread[n == n.max()].mean(), spread[n == n.min()].mean()
    assert big > small


def test_behavior_contains_valid_ad_ids():
    world = generate_world(tiny_config(seed=4))
    hist = world.behavior
    assert hist.shape == (world.num_users, 5)
    assert ((hist == -1) | ((hist >= 0) & (hist < world.num_ads))).all()
    # padding sits on the left, history on the right
    for row in hist:
        real = row != -1
        if real.any():
            assert real[np.argmax(real):].all()


def test_ecpm():
    assert ecpm(0.02, 0.5) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        ecpm(1.5, 0.5)
    with pytest.raises(ValueError):
        ecpm(0.5, -1.0)


# ---------------------------------------------------------------------------
# Creative policies and log generation
# ---------------------------------------------------------------------------

def test_log_is_deterministic_and_well_formed():
    world = generate_world(tiny_config(seed=5))
    policy = CreativePolicy(tag="uniform-random")
    a = generate_log_columns(world, policy, 1000, seed=11)
    b = generate_log_columns(world, policy, 1000, seed=11)
    c = generate_log_columns(world, policy, 1000, seed=12)
    assert np.array_equal(a.shown_creative_id, b.shown_creative_id)
    assert np.array_equal(a.click, b.click)
    assert not np.array_equal(a.click, c.click)
    for rec in generate_log(world, policy, 50, seed=11):
        rec.validate()
    assert np.array_equal(a.cpc_bid, world.ad_cpc[a.ad_id])


def test_log_ctr_converges_to_true_mean():
    # law of large numbers: the empirical CTR of a big uniform log approaches
    # the average true CTR over all (user, ad, creative) triples
    world = generate_world(tiny_config(num_users=200, seed=6))
    tensor = world.ctr_tensor()
    weights = np.arange(world.max_n)[None, :] < world.n_creatives[:, None]
    expected = tensor[:, weights].mean()
    small = generate_log_columns(world, CreativePolicy(), 10_000, seed=13)
    big = generate_log_columns(world, CreativePolicy(), 1_000_000, seed=13)
    err_small = abs(small.click.mean() - expected)
    err_big = abs(big.click.mean() - expected)
    assert err_big < err_small
    assert err_big < 5e-4


def test_balanced_ad_sampling():
    world = generate_world(tiny_config(seed=7))
    log = generate_log_columns(world, CreativePolicy(), 1200, seed=14,
                               ad_sampling="balanced")
    counts = np.bincount(log.ad_id, minlength=world.num_ads)
    assert (counts == 100).all()
    with pytest.raises(ValueError):
        generate_log_columns(world, CreativePolicy(), 100, seed=1,
                             ad_sampling="weird")


def test_round_robin_policy_cycles_creatives():
    world = generate_world(tiny_config(seed=8))
    log = generate_log_columns(world, CreativePolicy(tag="round-robin"),
                               2400, seed=15, ad_sampling="balanced")
    for a in range(world.num_ads):
        shown = log.shown_creative_id[log.ad_id == a] - a * CREATIVE_BASE
        counts = np.bincount(shown, minlength=int(world.n_creatives[a]))
        # each creative within an ad is shown an equal number of times
        # (per-ad impressions are a multiple of every bundle size here)
        assert counts.max() - counts.min() <= 1


def test_oracle_policy_maximizes_log_ctr():
    world = generate_world(tiny_config(num_users=200, seed=9))
    rand = generate_log_columns(world, CreativePolicy(), 200_000, seed=16)
    orac = generate_log_columns(world, CreativePolicy(tag="oracle"), 200_000, seed=16)
    assert orac.click.mean() > rand.click.mean()
    # oracle picks the per-(user, ad) argmax creative
    tensor = world.ctr_tensor()
    rows = tensor[orac.user_id[:100], orac.ad_id[:100]]
    best = np.nanargmax(np.where(np.isnan(rows), -np.inf, rows), axis=1)
    assert np.array_equal(orac.shown_creative_id[:100] % CREATIVE_BASE, best)


def test_noisy_oracle_quality_interpolates():
    world = generate_world(tiny_config(num_users=200, seed=10))
    exact = ad_creative_quality(world, 0.0, seed=1)
    tensor = world.ctr_tensor()
    assert np.array_equal(np.nanargmax(np.where(np.isnan(tensor.mean(axis=0)),
                                                -np.inf, tensor.mean(axis=0)), axis=1),
                          exact.argmax(axis=1))
    # pure noise at tau = inf, deterministic per seed
    noise1 = ad_creative_quality(world, float("inf"), seed=2)
    noise2 = ad_creative_quality(world, float("inf"), seed=2)
    assert np.array_equal(noise1, noise2)
    assert not np.array_equal(exact.argmax(axis=1), noise1.argmax(axis=1))
    # invalid creative slots are ranked out
    valid = np.arange(world.max_n)[None, :] < world.n_creatives[:, None]
    assert (exact[~valid] == -np.inf).all()


def test_biased_policy_mixes_exploit_and_explore():
    world = generate_world(tiny_config(num_users=200, seed=11))
    chosen = ad_creative_quality(world, 0.0, seed=21).argmax(axis=1)
    log = generate_log_columns(
        world, CreativePolicy(tag="biased", tau=0.0, seed=21, epsilon=0.5),
        50_000, seed=17)
    idx = log.shown_creative_id % CREATIVE_BASE
    exploit_rate = (idx == chosen[log.ad_id]).mean()
    # exploit picks the quality argmax; exploration adds ~epsilon/n extra mass
    assert 0.5 < exploit_rate < 0.9
    with pytest.raises(ValueError):
        generate_log_columns(world, CreativePolicy(tag="biased", epsilon=1.5),
                             100, seed=1)


def test_model_policy_follows_table():
    world = generate_world(tiny_config(seed=12))
    table = np.where(np.isnan(world.ctr_tensor()), np.nan, 0.0)
    # make creative index 1 the winner everywhere it exists
    table[:, :, 1][~np.isnan(table[:, :, 1])] = 1.0
    log = generate_log_columns(world, CreativePolicy(tag="model", table=table),
                               1000, seed=18)
    assert (log.shown_creative_id % CREATIVE_BASE == 1).all()
    with pytest.raises(ValueError):
        generate_log_columns(world, CreativePolicy(tag="model"), 10, seed=1)
    with pytest.raises(ValueError):
        generate_log_columns(world, CreativePolicy(tag="martian"), 10, seed=1)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def test_save_load_world_round_trip(tmp_path):
    world = generate_world(tiny_config(seed=13))
    path = tmp_path / "world.npz"
    save_world(world, path)
    back = load_world(path)
    assert back.config == world.config
    assert np.array_equal(back.user_latent, world.user_latent)
    assert np.array_equal(back.behavior, world.behavior)
    assert np.array_equal(back.ctr_tensor(), world.ctr_tensor(), equal_nan=True)
    # a forced-CTR world round-trips its override too
    forced = generate_world(WorldConfig(
        num_users=10, num_ads=2, slots=1, retrieval_size=2,
        forced_ad_ctrs=((0.2, 2), (0.3, 3)), seed=2))
    save_world(forced, path)
    back = load_world(path)
    assert np.array_equal(back.ctr_tensor(), forced.ctr_tensor(), equal_nan=True)


def test_loaded_world_generates_identical_logs(tmp_path):
    world = generate_world(tiny_config(seed=14))
    path = tmp_path / "world.npz"
    save_world(world, path)
    back = load_world(path)
    log_a = generate_log_columns(world, CreativePolicy(), 500, seed=3)
    log_b = generate_log_columns(back, CreativePolicy(), 500, seed=3)
    assert np.array_equal(log_a.shown_creative_id, log_b.shown_creative_id)
    assert np.array_equal(log_a.click, log_b.click)
