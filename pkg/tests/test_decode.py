"""Message recovery and symbol demapping given estimated path triples."""

from types import SimpleNamespace

import numpy as np
import pytest

from isac.decode import (DecodeResult, build_dictionary, demap_ask,
                         recover_messages, symbols_and_ser)
from isac.model import (ASK_LEVELS, SceneConfig, make_codebook, make_scene,
                        synthesize_measurements)


def noiseless_scene(seed=31):
    config = SceneConfig(P=3, Q=3, N_r=2, R=2, k=(2, 2), s=(2, 2),
                         snr_db=None, seed=seed)
    scene = make_scene(config, targets_per_user=1)
    meas = synthesize_measurements(scene, config)
    return config, scene, meas


def test_dictionary_shape_and_blocks():
    config, scene, _ = noiseless_scene()
    zetas = [[p.zeta for p in u.paths] for u in scene.users]
    books = [u.codebook for u in scene.users]
    A = build_dictionary(zetas, books, config.dims)
    assert A.shape == (config.L, 8)              # 2 users x 2 paths x k=2
    from isac.atoms import steering_vector
    a = steering_vector(zetas[0][0], config.dims)
    assert np.allclose(A[:, :2], a[:, None] * books[0].matrix)


def test_dictionary_rejects_underdetermined_and_empty():
    config, scene, _ = noiseless_scene()
    books = [u.codebook for u in scene.users]
    too_many = [[(0.1 * j, 0.0, 0.0) for j in range(5)] for _ in range(2)]
    with pytest.raises(ValueError):
        build_dictionary(too_many, books, config.dims)   # 20 cols > L = 18
    with pytest.raises(ValueError):
        build_dictionary([[], []], books, config.dims)


def test_exact_decode_from_true_triples():
    config, scene, meas = noiseless_scene()
    zetas = [[p.zeta for p in u.paths] for u in scene.users]
    books = [u.codebook for u in scene.users]
    A = build_dictionary(zetas, books, config.dims)
    result = recover_messages(A, meas.y, [(2, 2), (2, 2)])
    assert result.diagnostics["no_energy"] == []
    assert result.diagnostics["residual"] <= 1e-8
    for i, user in enumerate(scene.users):
        assert np.linalg.norm(result.messages[i]) == pytest.approx(1.0)
        assert np.allclose(result.messages[i], user.message, atol=1e-8)
        true_gains = np.array([p.gain for p in user.paths])
        assert np.allclose(result.gains[i], true_gains, atol=1e-8)

    scored = symbols_and_ser(result, scene)
    assert scored.ser_per_user == [0.0, 0.0]
    assert scored.ser_aggregate == 0.0
    for i, user in enumerate(scene.users):
        assert np.array_equal(scored.symbols[i], user.symbols)


def test_recover_structure_mismatch():
    config, scene, meas = noiseless_scene()
    zetas = [[p.zeta for p in u.paths] for u in scene.users]
    books = [u.codebook for u in scene.users]
    A = build_dictionary(zetas, books, config.dims)
    with pytest.raises(ValueError):
        recover_messages(A, meas.y, [(2, 2), (1, 2)])


def test_no_energy_user_scores_ser_one():
    """A user contributing no dictionary columns decodes as all-wrong."""
    config, scene, meas = noiseless_scene()
    zetas = [[p.zeta for p in scene.users[0].paths], []]
    books = [u.codebook for u in scene.users]
    A = build_dictionary(zetas, books, config.dims)
    result = recover_messages(A, meas.y, [(2, 2), (0, 2)])
    assert result.diagnostics["no_energy"] == [1]
    assert np.all(result.messages[1] == 0.0)
    scored = symbols_and_ser(result, scene)
    assert scored.symbols[1] is None
    assert scored.ser_per_user[1] == 1.0


def ambiguous(sym):
    """Equal-magnitude vectors (any m * signs) collide with their other
    alphabet multiples after normalization; no demapper can tell them
    apart because the transmitted unit vectors are identical."""
    mags = np.abs(ASK_LEVELS[sym])
    return bool(np.all(mags == mags[0]))


def test_demap_roundtrip_small_k():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 20:
        sym = rng.integers(0, 8, size=3)
        if ambiguous(sym):
            continue
        v = ASK_LEVELS[sym].astype(float)
        assert np.array_equal(demap_ask(v / np.linalg.norm(v)), sym)
        checked += 1


def test_demap_mirror_symmetry():
    """Negating the message maps each symbol to its alphabet mirror."""
    sym = np.array([0, 3, 7, 5])
    v = ASK_LEVELS[sym].astype(float)
    f = v / np.linalg.norm(v)
    assert np.array_equal(demap_ask(-f), 7 - sym)


def test_demap_roundtrip_large_k():
    """k > 5 takes the iterative path instead of the exhaustive search."""
    rng = np.random.default_rng(8)
    checked = 0
    while checked < 10:
        sym = rng.integers(0, 8, size=7)
        if ambiguous(sym):
            continue
        v = ASK_LEVELS[sym].astype(float)
        assert np.array_equal(demap_ask(v / np.linalg.norm(v)), sym)
        checked += 1


def test_aggregate_ser_weights_by_message_length():
    """Per-user SERs (0, 0.5) with k = (2, 4) aggregate to 1/3."""
    good = ASK_LEVELS[np.array([1, 2])].astype(float)
    half = ASK_LEVELS[np.array([0, 0, 4, 6])].astype(float)
    result = DecodeResult(
        messages=[good / np.linalg.norm(good), half / np.linalg.norm(half)],
        gains=[np.ones(1), np.ones(1)],
        structure=[(1, 2), (1, 4)])
    scene = SimpleNamespace(users=[
        SimpleNamespace(symbols=np.array([1, 2])),
        SimpleNamespace(symbols=np.array([0, 0, 5, 3])),
    ])
    scored = symbols_and_ser(result, scene)
    assert scored.ser_per_user == [0.0, 0.5]
    assert scored.ser_aggregate == pytest.approx(1.0 / 3.0)


def test_symbols_and_ser_validation():
    result = DecodeResult(messages=[np.ones(2) / np.sqrt(2)],
                          gains=[np.ones(1)], structure=[(1, 2)])
    scene = SimpleNamespace(users=[SimpleNamespace(symbols=None)])
    with pytest.raises(ValueError):
        symbols_and_ser(result, scene)
    with pytest.raises(ValueError):
        symbols_and_ser(result, scene, constellation="unit-norm-gaussian")
