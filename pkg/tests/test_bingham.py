"""Bingham density, moments, sampling, and the two lookup tables."""

import numpy as np
import pytest
import scipy.integrate

from fanfilter import bingham as bg, quat, tensor as tn
from fanfilter.errors import ContractError, DomainError, FormatError

EX = np.array([1.0, 0.0, 0.0])
EY = np.array([0.0, 1.0, 0.0])
EZ = np.array([0.0, 0.0, 1.0])


def _sphere_grid(n_theta=200, n_phi=400):
    """Product quadrature nodes and weights over the unit sphere."""
    t, wt = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    wphi = 2.0 * np.pi / n_phi
    ct = t[:, None]
    st = np.sqrt(1.0 - ct ** 2)
    x = st * np.cos(phi)[None, :]
    y = st * np.sin(phi)[None, :]
    z = np.broadcast_to(ct, x.shape)
    pts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    w = np.broadcast_to(wt[:, None] * wphi, x.shape).reshape(-1)
    return pts, w


def test_norm_const_uniform():
    assert bg.norm_const(0.0, 0.0) == pytest.approx(4.0 * np.pi, abs=1e-6)


def test_norm_const_watson_oracle():
    val, _ = scipy.integrate.quad(lambda t: np.exp(1.0 * t * t), -1.0, 1.0)
    assert bg.norm_const(1.0, 0.0) == pytest.approx(2.0 * np.pi * val,
                                                    rel=1e-8)


def test_norm_const_monotone():
    assert bg.norm_const(5.0, 0.0) < bg.norm_const(6.0, 0.0)
    assert bg.norm_const(5.0, 1.0) < bg.norm_const(5.0, 2.0)


def test_norm_const_domain():
    with pytest.raises(DomainError):
        bg.norm_const(3.0, 4.0)
    with pytest.raises(DomainError):
        bg.norm_const(-1.0, 0.0)


@pytest.mark.parametrize("kappa,beta", [(10.0, 0.0), (30.0, 10.0),
                                        (80.0, 40.0)])
def test_pdf_integrates_to_one(kappa, beta):
    c = bg.BinghamCompartment(1.0, quat.IDENTITY, kappa, beta)
    pts, w = _sphere_grid()
    vals = np.array([bg.bingham_pdf(p / np.linalg.norm(p), c) for p in pts])
    assert float(vals @ w) == pytest.approx(1.0, abs=1e-5)


def test_pdf_extrema():
    c = bg.BinghamCompartment(1.0, quat.IDENTITY, 20.0, 5.0)
    n = bg.norm_const(20.0, 5.0)
    assert bg.bingham_pdf(EZ, c) == pytest.approx(np.exp(20.0) / n, rel=1e-9)
    assert bg.bingham_pdf(EX, c) == pytest.approx(1.0 / n, rel=1e-9)
    # antipodal symmetry
    v = np.array([0.3, -0.5, 0.8])
    v /= np.linalg.norm(v)
    assert bg.bingham_pdf(v, c) == pytest.approx(bg.bingham_pdf(-v, c),
                                                 rel=1e-12)


def test_moment6_uniform_closed_form():
    T = bg.moment6_canonical(0.0, 0.0)

    def idx(a, b, c):
        return int(np.where((tn.EXPONENTS == [a, b, c]).all(axis=1))[0][0])

    for e in ((6, 0, 0), (0, 6, 0), (0, 0, 6)):
        assert T[idx(*e)] == pytest.approx(1.0 / 7, abs=1e-10)
    assert T[idx(2, 0, 4)] == pytest.approx(1.0 / 35, abs=1e-10)
    # odd-exponent moments vanish
    odd = np.any(tn.EXPONENTS % 2, axis=1)
    assert np.max(np.abs(T[odd])) < 1e-12


def test_moment6_concentration_limit():
    T = bg.moment6_canonical(89.0, 0.0)
    assert tn.eval_poly(tn.rank1(1.0, EZ) * 0 + T, EZ) > 0.9


def test_moment6_trace_normalization():
    # contracting the moment tensor with (x^2+y^2+z^2)^3 must give 1;
    # equivalently the mean of eval over a uniform quadrature equals the
    # mean of 1 under the density
    T = bg.moment6_canonical(25.0, 7.0)
    pts, w = _sphere_grid(60, 120)
    vals = tn.eval_many(T, pts)
    # eval integrates f-weighted monomials; uniform average of T(u) over
    # the sphere equals E_f[uniform average of <u, x>^6] = 1/7
    assert float(vals @ w) / (4 * np.pi) == pytest.approx(1.0 / 7, abs=1e-6)


def test_moment6_matches_bruteforce_quadrature():
    kappa, beta = 30.0, 10.0
    T = bg.moment6_canonical(kappa, beta)
    pts, w = _sphere_grid()
    expo = np.exp(kappa * pts[:, 2] ** 2 + beta * pts[:, 1] ** 2)
    N = float(expo @ w)
    mono = tn.monomials(pts)
    brute = (w * expo) @ mono / N
    np.testing.assert_allclose(T, brute, atol=1e-10)


def test_conv_response_node_exact(conv_lut):
    # kappa = 10.1 is an exact node of the 0.5-step session grid
    c = bg.BinghamCompartment(1.0, quat.IDENTITY, 10.1, 0.0)
    got = bg.conv_response(c, conv_lut)
    node = bg.moment6_canonical(10.1, 0.0)
    np.testing.assert_allclose(got, node, atol=1e-9)


def test_conv_response_rotation(conv_lut):
    q = quat.quat_from_frame(EX, EY)
    rot = bg.conv_response(bg.BinghamCompartment(1.0, q, 10.0, 0.0),
                           conv_lut)
    canon = bg.conv_response(
        bg.BinghamCompartment(1.0, quat.IDENTITY, 10.0, 0.0), conv_lut)
    assert tn.eval_poly(rot, EX) == pytest.approx(tn.eval_poly(canon, EZ),
                                                  abs=1e-9)


def test_conv_response_midpoint_accuracy():
    lut = bg.build_conv_lut(kappa_start=10.0, kappa_end=10.5,
                            kappa_step=0.1, beta_step=0.1)
    c = bg.BinghamCompartment(1.0, quat.IDENTITY, 10.05, 0.05)
    got = bg.conv_response(c, lut)
    direct = bg.moment6_canonical(10.05, 0.05)
    assert tn.apolar_norm(got - direct) < 1e-3


def test_conv_response_watson_symmetry(conv_lut):
    c = bg.BinghamCompartment(1.0, quat.IDENTITY, 30.0, 0.0)
    T = bg.conv_response(c, conv_lut)
    ang = 0.7
    a = np.array([np.sin(ang), 0.0, np.cos(ang)])
    b = np.array([0.0, np.sin(ang), np.cos(ang)])
    assert tn.eval_poly(T, a) == pytest.approx(tn.eval_poly(T, b), abs=1e-9)


def test_conv_response_many_matches_scalar(conv_lut, rng):
    n = 7
    alphas = rng.uniform(0.2, 1.0, n)
    kappas = rng.uniform(5.0, 60.0, n)
    betas = rng.uniform(0.0, 1.0, n) * (kappas - 2.0)
    qs = rng.standard_normal((n, 4))
    qs /= np.linalg.norm(qs, axis=1, keepdims=True)
    batch = bg.conv_response_many(alphas, qs, kappas, betas, conv_lut)
    for i in range(n):
        c = bg.BinghamCompartment(alphas[i], qs[i], kappas[i], betas[i])
        np.testing.assert_allclose(batch[i], bg.conv_response(c, conv_lut),
                                   atol=1e-10)


def test_low_rank_convergence_in_kappa(conv_lut):
    ref = tn.rank1(1.0, EZ)
    dists = []
    for kappa in range(10, 90, 10):
        c = bg.BinghamCompartment(1.0, quat.IDENTITY, float(kappa), 0.0)
        dists.append(tn.apolar_norm(bg.conv_response(c, conv_lut) - ref))
    assert all(a > b for a, b in zip(dists, dists[1:]))


def test_grid_shape():
    lut = bg.build_conv_lut(kappa_start=2.1, kappa_end=3.0, kappa_step=0.1,
                            beta_step=0.1)
    # kappa = 2.1 admits beta in {0, 0.1}: 2 nodes
    assert lut.counts[0] == 2
    ks, bs = lut.node_params()
    assert ks[0] == pytest.approx(2.1)
    expect = sum(int(np.floor((2.1 + 0.1 * i - 2.0) / 0.1 + 1e-9)) + 1
                 for i in range(10))
    assert len(ks) == expect


def test_production_grid_endpoints():
    count = int(round((bg.KAPPA_MAX - bg.KAPPA_MIN) / bg.GRID_STEP)) + 1
    kappas = np.round(bg.KAPPA_MIN + bg.GRID_STEP * np.arange(count), 10)
    assert kappas[0] == pytest.approx(2.1)
    assert kappas[-1] == pytest.approx(89.0)


def test_lut_interpolation_range(conv_lut):
    from fanfilter.errors import LutRangeError
    with pytest.raises(LutRangeError):
        conv_lut.interpolate(120.0, 0.0)
    val, clamped = conv_lut.interpolate(2.0, 0.0)   # below start, < 1 step
    assert clamped


def test_lut_round_trip(tmp_path, conv_lut, init_lut):
    for lut, cls in ((conv_lut, bg.ConvLut), (init_lut, bg.InitLut)):
        path = tmp_path / "table.blut"
        lut.save(path)
        back = cls.load(path)
        np.testing.assert_array_equal(back.payload, lut.payload)
        assert back.kappa_step == lut.kappa_step
        # identical bytes on re-save
        path2 = tmp_path / "table2.blut"
        back.save(path2)
        assert path.read_bytes() == path2.read_bytes()


def test_lut_version_refusal(tmp_path, init_lut):
    path = tmp_path / "t.blut"
    init_lut.save(path)
    raw = bytearray(path.read_bytes())
    raw[6] = 99   # version field
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        bg.InitLut.load(path)
    with pytest.raises(FormatError):
        bg.InitLut.load(__file__)   # bad magic


def test_init_lut_properties(init_lut):
    lam = init_lut.payload
    assert np.all(lam[:, 0] >= lam[:, 1] - 1e-12)
    assert np.all(lam[:, 1] >= 0)
    ks, bs = init_lut.node_params()
    iso = bs == 0
    # beta = 0: eigenvalues equal within 2%
    rel = np.abs(lam[iso, 0] - lam[iso, 1]) / lam[iso, 0]
    assert np.max(rel) < 0.02
    # lam1 strictly increasing in kappa along beta = 0
    order = np.argsort(ks[iso])
    l1 = lam[iso][order, 0]
    assert np.all(np.diff(l1) > 0)


def test_init_lut_beta_monotone(init_lut):
    ks, bs = init_lut.node_params()
    col = ks == 40.0
    order = np.argsort(bs[col])
    lam2 = init_lut.payload[col][order, 1]
    assert np.all(np.diff(lam2) < 0)


def test_init_from_eigs_node_round_trip(init_lut):
    val, _ = init_lut.interpolate(30.0, 10.0)
    est = bg.init_from_eigs(val[0], val[1], init_lut)
    assert est.kappa == pytest.approx(30.0, abs=0.05)
    assert est.beta == pytest.approx(10.0, abs=0.05)


def test_init_from_eigs_equal_eigs(init_lut):
    val, _ = init_lut.interpolate(25.0, 0.0)
    lam = 0.5 * (val[0] + val[1])
    est = bg.init_from_eigs(lam, lam, init_lut)
    assert est.beta <= init_lut.beta_step


def test_init_from_eigs_contract(init_lut):
    with pytest.raises(ContractError):
        bg.init_from_eigs(1.0, 2.0, init_lut)


def test_acg_envelope_solves_bound_equation():
    for kappa, beta in ((2.1, 0.0), (30.0, 10.0), (89.0, 87.0)):
        lam, omega, b = bg._acg_envelope(kappa, beta)
        assert np.sum(1.0 / (b + 2.0 * lam)) == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(omega, 1.0 + 2.0 * lam / b)


def test_sampler_sign_convention(rng):
    c = bg.BinghamCompartment(1.0, quat.IDENTITY, 10.0, 3.0)
    ref = np.array([0.1, -0.2, -0.97])
    ref /= np.linalg.norm(ref)
    for _ in range(200):
        x = bg.sample_bingham(c, ref, rng)
        assert np.dot(x, ref) >= 0
        assert np.linalg.norm(x) == pytest.approx(1.0, abs=1e-12)


def test_sampler_concentration(rng):
    c = bg.BinghamCompartment(1.0, quat.IDENTITY, 89.0, 0.0)
    devs = []
    for _ in range(2000):
        x = bg.sample_bingham(c, EZ, rng)
        devs.append(np.degrees(np.arccos(min(1.0, abs(x[2])))))
    assert np.mean(devs) < 10.0


def test_sampler_anisotropy(rng):
    c = bg.BinghamCompartment(1.0, quat.IDENTITY, 30.0, 25.0)
    xs = np.array([bg.sample_bingham(c, EZ, rng) for _ in range(4000)])
    var2 = np.var(xs @ EY)
    var3 = np.var(xs @ EX)
    assert var2 > 2.0 * var3


@pytest.mark.parametrize("kappa,beta", [(10.0, 0.0), (30.0, 10.0),
                                        (80.0, 40.0)])
def test_sampler_ks_against_quadrature(kappa, beta, rng):
    """Empirical CDF of <x, mu1>^2 vs quadrature CDF, sup distance."""
    c = bg.BinghamCompartment(1.0, quat.IDENTITY, kappa, beta)
    n = 20000
    t2 = np.sort([bg.sample_bingham(c, EZ, rng)[2] ** 2 for _ in range(n)])

    # density of t = <x, e_z> after integrating out the azimuth
    ts = np.linspace(0.0, 1.0, 4001)
    dens = np.zeros_like(ts)
    phi = 2.0 * np.pi * (np.arange(512) + 0.5) / 512
    for i, t in enumerate(ts):
        s2 = 1.0 - t * t
        dens[i] = np.mean(np.exp(kappa * t * t
                                 + beta * s2 * np.sin(phi) ** 2))
    cdf = np.cumsum(dens)
    cdf /= cdf[-1]
    emp = (np.arange(1, n + 1)) / n
    quad_at_samples = np.interp(np.abs(np.sqrt(t2)), ts, cdf)
    sup = np.max(np.abs(emp - quad_at_samples))
    assert sup < 0.015
