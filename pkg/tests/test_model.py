import hashlib
import json
import struct

import numpy as np
import pytest

from conftest import random_assignment, random_observations
from omic.bases import CommunityAssignment, build_bomic, build_bomicplus, build_explicit, build_omicplus
from omic.data import gen_synthetic
from omic.model import FORMAT_VERSION, FittedModel, ModelFormatError, component_labels, load, save
from omic.prox import assemble, decompose
from omic.scalable import AlsOptions, fit_scalable
from omic.solver import fit


def _random_model(rng, m=14, n=11):
    users, items = random_assignment(rng, m), random_assignment(rng, n)
    fam = build_bomicplus(users, items)
    cores = decompose(rng.standard_normal((m, n)), fam)
    lam = {key: float(rng.uniform(0, 1)) for key in fam.keys()}
    return FittedModel(fam, cores, lam, {"seed": 1, "iterations": 3})


def test_zero_model():
    fam = build_bomic(4, 3)
    model = FittedModel(fam, {})
    assert np.all(model.predict(np.arange(4), np.zeros(4, dtype=int)) == 0)
    assert all(v == 0 for v in model.component_norms().values())
    assert all(v == 0 for v in model.explain_entry(1, 2).values())


def test_constant_model():
    m, n, c = 5, 6, 3.5
    fam = build_bomic(m, n)
    model = FittedModel(fam, {(1, 1): np.array([[c * np.sqrt(m * n)]])})
    np.testing.assert_allclose(model.to_dense(), c)
    parts = model.explain_entry(2, 3)
    assert parts[(1, 1)] == pytest.approx(c)
    assert sum(abs(v) for k, v in parts.items() if k != (1, 1)) == 0
    bc, u, b = model.extract_biases()
    assert bc == pytest.approx(c)
    np.testing.assert_allclose(u, 0, atol=1e-12)
    np.testing.assert_allclose(b, 0, atol=1e-12)


def test_predict_matches_dense(rng):
    model = _random_model(rng)
    dense = assemble(model.family, model.components)
    rows, cols = rng.integers(0, 14, 100), rng.integers(0, 11, 100)
    np.testing.assert_allclose(model.predict(rows, cols), dense[rows, cols], atol=1e-10)
    np.testing.assert_allclose(model.to_dense(), dense, atol=1e-10)


def test_explain_sums_to_predict(rng):
    model = _random_model(rng)
    for _ in range(50):
        i, j = int(rng.integers(14)), int(rng.integers(11))
        parts = model.explain_entry(i, j)
        assert sum(parts.values()) == pytest.approx(float(model.predict(i, j)), abs=1e-10)


def test_decompose_recovers_components(rng):
    model = _random_model(rng)
    cores = decompose(model.to_dense(), model.family)
    for key, core in model.components.items():
        np.testing.assert_allclose(cores[key], core, atol=1e-8)


def test_component_norms(rng):
    model = _random_model(rng)
    norms = model.component_norms()
    for key, core in model.components.items():
        part = assemble(model.family, {key: core})
        assert norms[key] == pytest.approx(np.linalg.norm(part))
    single = FittedModel(model.family, {(3, 3): model.components[(3, 3)]})
    nz = [k for k, v in single.component_norms().items() if v > 0]
    assert nz == [(3, 3)]


def test_bias_blocks_dominate_on_pure_bias_data():
    inst = gen_synthetic(1.0, gamma=1, p_obs=0.3, seed=0)
    fam = build_bomic(*inst.shape)
    lam = {(1, 1): 0.0, (1, 2): 0.05, (2, 1): 0.05, (2, 2): 1.0}
    comps, _ = fit(inst.observations, fam, lam)
    norms = FittedModel(fam, comps, lam).component_norms()
    assert min(norms[(1, 2)], norms[(2, 1)]) >= 5 * norms[(2, 2)]


def test_extract_biases_roundtrip(rng):
    m, n = 8, 6
    u = rng.standard_normal(m)
    u -= u.mean()
    b = rng.standard_normal(n)
    b -= b.mean()
    R = 2.0 + u[:, None] + b[None, :]
    for fam in (build_bomic(m, n), build_bomicplus(random_assignment(rng, m), random_assignment(rng, n))):
        c, uh, bh = FittedModel(fam, decompose(R, fam)).extract_biases()
        assert c == pytest.approx(2.0)
        np.testing.assert_allclose(uh, u, atol=1e-10)
        np.testing.assert_allclose(bh, b, atol=1e-10)
        assert abs(uh.sum()) <= 1e-8 and abs(bh.sum()) <= 1e-8
    with pytest.raises(ValueError):
        comm = CommunityAssignment.single(m)
        FittedModel(build_omicplus(comm, CommunityAssignment.single(n)), {}).extract_biases()


def test_shape_validation(rng):
    fam = build_bomic(4, 3)
    with pytest.raises(ValueError):
        FittedModel(fam, {(2, 2): np.zeros((2, 2))})
    with pytest.raises(ValueError):
        FittedModel(fam, {(3, 1): np.zeros((1, 1))})
    model = FittedModel(fam, {})
    with pytest.raises(IndexError):
        model.predict(np.array([4]), np.array([0]))


def test_labels():
    assert component_labels(build_bomic(3, 3))[(2, 1)] == "user_bias"
    fam = build_explicit([np.eye(2)], [np.eye(2)])
    assert component_labels(fam)[(1, 1)] == "M(1, 1)"


def test_save_load_bit_exact(rng, tmp_path):
    model = _random_model(rng)
    path = tmp_path / "m.omic"
    save(model, path)
    again = load(path)
    rows, cols = np.divmod(np.arange(14 * 11), 11)
    np.testing.assert_array_equal(model.predict(rows, cols), again.predict(rows, cols))
    assert again.lambdas == model.lambdas
    assert again.meta == model.meta
    assert again.family.user_communities.digest() == model.family.user_communities.digest()


@pytest.mark.filterwarnings("ignore::omic.scalable.RankWarning")
def test_save_load_factor_model(rng, tmp_path):
    fam = build_bomic(20, 15)
    obs = random_observations(rng, rng.standard_normal((20, 15)), 0.5)
    lam = {(1, 1): 0.0, (1, 2): 0.5, (2, 1): 0.5, (2, 2): 1.0}
    comps, _ = fit_scalable(obs, fam, lam, AlsOptions(max_rank=4))
    model = FittedModel(fam, comps, lam)
    save(model, tmp_path / "f.omic")
    again = load(tmp_path / "f.omic")
    np.testing.assert_array_equal(model.to_dense(), again.to_dense())


def test_save_load_explicit_family(rng, tmp_path):
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    fam = build_explicit([Q[:, :2], Q[:, 2:]], [np.eye(3)])
    model = FittedModel(fam, decompose(rng.standard_normal((5, 3)), fam))
    save(model, tmp_path / "e.omic")
    np.testing.assert_array_equal(load(tmp_path / "e.omic").to_dense(), model.to_dense())


def test_truncated_and_corrupt_files(rng, tmp_path):
    model = _random_model(rng)
    path = tmp_path / "m.omic"
    save(model, path)
    blob = path.read_bytes()
    for cut in (10, len(blob) // 2, len(blob) - 1):
        (tmp_path / "t.omic").write_bytes(blob[:cut])
        with pytest.raises(ModelFormatError):
            load(tmp_path / "t.omic")
    flipped = bytearray(blob)
    flipped[-40] ^= 0xFF
    (tmp_path / "c.omic").write_bytes(bytes(flipped))
    with pytest.raises(ModelFormatError):
        load(tmp_path / "c.omic")


def test_version_mismatch(rng, tmp_path):
    model = _random_model(rng)
    path = tmp_path / "m.omic"
    save(model, path)
    blob = path.read_bytes()[:-32]
    hlen = struct.unpack("<Q", blob[8:16])[0]
    header = json.loads(blob[16 : 16 + hlen])
    assert header["version"] == FORMAT_VERSION
    header["version"] = "omic-model/99"
    head = json.dumps(header).encode()
    body = blob[:8] + struct.pack("<Q", len(head)) + head + blob[16 + hlen :]
    path.write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(ModelFormatError, match="incompatible"):
        load(path)
