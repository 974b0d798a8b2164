import numpy as np
import pytest

from latentcf import autodiff as ad
from latentcf import cf_latent as cl
from latentcf.dataset import check_encoded, select_test_instances
from latentcf.gradcheck import check_function


@pytest.fixture(scope="module")
def pool(tiny_models):
    clf, test = tiny_models["clf"], tiny_models["test"]
    sel = select_test_instances(clf.predict(test.X), 12, 0)
    return test.X[sel.indices], [int(i) for i in sel.indices]


def test_hinge_values():
    np.testing.assert_array_equal(cl.hinge_yloss(np.array([-1.0, 0.0, 0.5, 1.0, 3.0])).values,
                                  [2.0, 1.0, 0.5, 0.0, 0.0])


def test_config_validation():
    with pytest.raises(ValueError):
        cl.CFConfig(latent_norm="l1")
    with pytest.raises(ValueError):
        cl.CFConfig(gradient_tau=0)
    with pytest.raises(ValueError):
        cl.CFConfig(lambda_input=-1)
    with pytest.raises(ValueError):
        cl.CFConfig(max_steps=0)
    with pytest.raises(ValueError):
        cl.CFConfig(hinge_input="margin")


def test_step_noise_depends_only_on_instance():
    a = cl.step_noise((3, 2), 0, [5, 9], 4)
    b = cl.step_noise((3, 2), 0, [9], 4)
    np.testing.assert_array_equal(a[0][1], b[0][0])
    np.testing.assert_array_equal(a[1][1], b[1][0])
    c = cl.step_noise((3, 2), 0, [9], 5)
    assert not np.array_equal(b[0], c[0])


def test_cf_loss_parts_by_hand(tiny_models, pool):
    vae, clf = tiny_models["vae"], tiny_models["clf"]
    X0, ids = pool
    z0 = vae.encode_mean(X0[:3])
    z = z0 + 0.1
    noise = cl.step_noise(vae.cat_sizes, 0, ids[:3], 0)
    cfg = cl.CFConfig(lambda_input=0.7, lambda_latent=0.3)
    total, parts, rec, logit = cl.cf_loss(z, z0, X0[:3], vae, clf, cfg, noise)
    x = rec.x.values
    lg = clf.predict_logit(x)
    hinge = np.maximum(0, 1 - lg)
    l1 = np.abs(x - X0[:3]).sum(axis=1)
    l2 = np.linalg.norm(z - z0, axis=1)
    np.testing.assert_allclose(parts["total"], hinge + 0.7 * l1 + 0.3 * l2, rtol=1e-12)
    assert total.item() == pytest.approx(parts["total"].sum())


def test_hinge_on_probability(tiny_models, pool):
    vae, clf = tiny_models["vae"], tiny_models["clf"]
    X0, ids = pool
    z0 = vae.encode_mean(X0[:3])
    noise = cl.step_noise(vae.cat_sizes, 0, ids[:3], 0)
    cfg = cl.CFConfig(lambda_input=0.0, lambda_latent=0.0, hinge_input="probability")
    _, parts, rec, _ = cl.cf_loss(z0, z0, X0[:3], vae, clf, cfg, noise)
    p = 1.0 / (1.0 + np.exp(-clf.predict_logit(rec.x.values)))
    np.testing.assert_allclose(parts["validity"], 1.0 - p, rtol=1e-12)


def test_decoder_to_hinge_pipeline_gradient(tiny_models, pool):
    """z -> decoder -> detokenize (soft) -> classifier -> hinge."""
    vae, clf = tiny_models["vae"], tiny_models["clf"]
    X0, ids = pool
    z = vae.encode_mean(X0[:2]) + 0.05
    noise = cl.step_noise(vae.cat_sizes, 0, ids[:2], 0)
    from latentcf.tokenizer import GumbelConfig

    def f(t):
        rec = vae.decode(t, noise=noise, gumbel=GumbelConfig(hard_forward=False))
        return cl.hinge_yloss(clf.logit(rec.x)) + ad.l2_norm(t - z + 0.3, axis=-1)

    assert check_function(f, z)[0] <= 1e-4


def test_results_valid_and_constrained(tiny_models, pool):
    vae, clf, schema = tiny_models["vae"], tiny_models["clf"], tiny_models["schema"]
    X0, ids = pool
    res = cl.batch_generate(X0, vae, clf, cl.CFConfig(max_steps=300), ids)
    assert [r.instance_id for r in res] == ids
    for r in res:
        assert check_encoded(r.x_cf, schema) == []
        assert r.valid == bool(clf.predict(r.x_cf[None])[0] == 1)
        assert set(r.losses) == {"validity", "input_proximity", "latent_proximity", "total"}
        if r.steps < 300:
            assert r.valid and r.summary["converged"]
    assert any(r.valid for r in res)


def test_batch_order_and_composition_invariance(tiny_models, pool):
    vae, clf = tiny_models["vae"], tiny_models["clf"]
    X0, ids = pool
    cfg = cl.CFConfig(max_steps=150)
    full = cl.batch_generate(X0, vae, clf, cfg, ids)
    perm = np.random.default_rng(0).permutation(len(ids))
    shuffled = cl.batch_generate(X0[perm], vae, clf, cfg, [ids[i] for i in perm])
    by_id = {r.instance_id: r for r in shuffled}
    single = cl.generate_batch(X0[3:4], vae, clf, cfg, ids[3:4])[0]
    for r in full:
        o = by_id[r.instance_id]
        assert np.array_equal(r.x_cf, o.x_cf) and r.steps == o.steps and r.losses == o.losses
    assert np.array_equal(single.x_cf, full[3].x_cf) and single.losses == full[3].losses


def test_grid_cell_equals_single_run(tiny_models, pool):
    vae, clf = tiny_models["vae"], tiny_models["clf"]
    X0, ids = pool
    cfg = cl.CFConfig(max_steps=100)
    grid = cl.generate_grid(X0[:4], vae, clf, cfg, [(0.0, 0.0), (1.0, 1.0)], ids[:4])
    ref = cl.batch_generate(X0[:4], vae, clf, cfg, ids[:4])
    alt = cl.batch_generate(X0[:4], vae, clf, cl.CFConfig(max_steps=100, lambda_input=0, lambda_latent=0), ids[:4])
    for a, b in zip(grid[(1.0, 1.0)], ref):
        assert np.array_equal(a.x_cf, b.x_cf) and a.losses == b.losses
    for a, b in zip(grid[(0.0, 0.0)], alt):
        assert np.array_equal(a.x_cf, b.x_cf) and a.losses == b.losses


def test_already_target_and_empty(tiny_models):
    vae, clf, test = tiny_models["vae"], tiny_models["clf"], tiny_models["test"]
    pos = test.X[clf.predict(test.X) == 1][:2]
    with pytest.raises(cl.AlreadyTargetClass):
        cl.generate_cf(pos[0], vae, clf, cl.CFConfig(max_steps=5))
    res = cl.batch_generate(pos, vae, clf, cl.CFConfig(max_steps=5))
    assert all(r.error == "already target class" and not r.valid for r in res)
    assert cl.batch_generate(np.zeros((0, vae.width)), vae, clf, cl.CFConfig()) == []


def test_deterministic_rerun(tiny_models, pool):
    vae, clf = tiny_models["vae"], tiny_models["clf"]
    X0, ids = pool
    a = cl.batch_generate(X0[:5], vae, clf, cl.CFConfig(max_steps=80, seed=3), ids[:5])
    b = cl.batch_generate(X0[:5], vae, clf, cl.CFConfig(max_steps=80, seed=3), ids[:5])
    assert all(np.array_equal(x.x_cf, y.x_cf) and x.losses == y.losses for x, y in zip(a, b))


def test_squared_latent_norm_option(tiny_models, pool):
    vae, clf = tiny_models["vae"], tiny_models["clf"]
    X0, ids = pool
    z0 = vae.encode_mean(X0[:2])
    z = z0 + 0.2
    noise = cl.step_noise(vae.cat_sizes, 0, ids[:2], 0)
    _, parts, _, _ = cl.cf_loss(z, z0, X0[:2], vae, clf, cl.CFConfig(latent_norm="squared_l2"), noise)
    np.testing.assert_allclose(parts["latent_proximity"], ((z - z0) ** 2).sum(axis=1))
