"""Stability operator: assembly, spectrum, kernel detection, projections.

Frozen closed forms (round S^n, radial sector):
    lambda_l = (n-1)(n - l(l+n-1)),  zonal fields sin((l+1)r)/sin r.
For n = 3: 6, 0, -10, -24, -42 with kernel field cos r.
"""

import numpy as np
import pytest

from curvflow import ConfigError, DomainError
from curvflow import energy as en
from curvflow import geometry as geo
from curvflow import spectral as sp

TARGETS_N3 = np.array([6.0, 0.0, -10.0, -24.0, -42.0])


def round_decomp(N, n=3, f_spec="one", potential="curvature"):
    grid = geo.make_grid(n, N)
    m = geo.sample_metric(grid, "round", f_spec=f_spec)
    return m, sp.eigendecompose(sp.assemble(m, potential=potential))


def nearest(ev, t):
    return ev[np.argmin(np.abs(ev - t))]


def test_round_spectrum_matches_closed_form():
    errs = {}
    for N in (128, 256):
        m, dec = round_decomp(N)
        errs[N] = np.array(
            [abs(nearest(dec.eigenvalues, t) - t) for t in TARGETS_N3]
        )
        # error constants grow with the mode number; convergence order is
        # checked by the doubling ratio below
        caps = (2.0 + 30.0 * np.arange(5.0) ** 2) * m.grid.spacing**2
        assert np.all(errs[N] < caps)
    for l in range(5):
        # second-order convergence; modes already at roundoff pass outright
        if errs[128][l] < 1e-10 and errs[256][l] < 1e-10:
            continue
        assert errs[128][l] / errs[256][l] < 4.5


def test_round_spectrum_higher_dimensions():
    for n in (4, 5):
        m, dec = round_decomp(192, n=n)
        for l in range(4):
            t = (n - 1) * (n - l * (l + n - 1))
            assert abs(nearest(dec.eigenvalues, t) - t) < 0.1


def test_kernel_recovery_round_s3():
    for N in (128, 256):
        m, dec = round_decomp(N)
        h = m.grid.spacing
        lam = nearest(dec.eigenvalues, 0.0)
        assert abs(lam) < 50 * h * h
        assert sp.kernel_dimension(dec) == 1
        k = dec.kernel_indices[0]
        phi = dec.fields[:, k]
        cosr = np.cos(m.grid.nodes)
        phi = phi * geo.l2_norm(m, m.field(cosr))
        if phi[0] < 0:
            phi = -phi
        assert np.max(np.abs(phi - cosr)) < 10 * h * h


def test_zonal_eigenfields_are_exact_here():
    # the geometric-mean flux makes sin((l+1)r)/sin r exact discrete
    # eigenvectors on the round 3-sphere; freeze that property
    m, dec = round_decomp(128)
    r = m.grid.nodes
    for l, t in ((1, 0.0), (2, -10.0)):
        i = int(np.argmin(np.abs(dec.eigenvalues - t)))
        z = np.sin((l + 1) * r) / np.sin(r)
        z = z / geo.l2_norm(m, m.field(z))
        p = dec.fields[:, i]
        if float(np.sum(p * z * m.cell_volumes)) < 0:
            p = -p
        assert np.max(np.abs(p - z)) < 1e-10


def test_kernel_tol_edge_cases():
    m, dec = round_decomp(128)
    assert sp.kernel_dimension(
        sp.eigendecompose(sp.assemble(m), kernel_tol=0.0)
    ) == 0
    shifted = sp.assemble(m, potential=geo.scalar_curvature(m).values + 1.0)
    assert sp.kernel_dimension(sp.eigendecompose(shifted)) == 0


def test_apply_constant_exact():
    for n in (3, 4, 5):
        grid = geo.make_grid(n, 64)
        m = geo.sample_metric(grid, "round")
        op = sp.assemble(m)
        out = op.apply(m.field(np.full(grid.n_cells, 2.0)))
        assert np.max(np.abs(out.values - 2.0 * n * (n - 1))) < 1e-11


def test_apply_kernel_field_residual():
    grid = geo.make_grid(3, 128)
    m = geo.sample_metric(grid, "round")
    op = sp.assemble(m)
    out = op.apply(m.field(np.cos(grid.nodes)))
    assert np.max(np.abs(out.values)) < 5 * grid.spacing**2


def test_operator_symmetric_under_weighted_ip():
    grid = geo.make_grid(3, 96)
    m = geo.sample_metric(grid, "eps:0.2")
    op = sp.assemble(m)
    rng = np.random.default_rng(2)
    u = m.field(rng.normal(size=96))
    v = m.field(rng.normal(size=96))
    lhs = geo.inner(m, op.apply(u), v)
    rhs = geo.inner(m, u, op.apply(v))
    scale = geo.l2_norm(m, u) * geo.l2_norm(m, v)
    assert abs(lhs - rhs) < 1e-10 * max(1.0, scale)


def test_eigenfields_orthonormal_under_weighted_ip():
    m, dec = round_decomp(96)
    G = dec.fields.T @ (dec.fields * m.cell_volumes[:, None])
    assert np.max(np.abs(G - np.eye(96))) < 1e-8


def test_sign_convention_first_node_nonnegative():
    _, dec = round_decomp(96)
    assert np.all(dec.fields[0, :] >= 0.0)


def test_projections_resolve_identity():
    m, dec = round_decomp(96)
    rng = np.random.default_rng(8)
    u = m.field(rng.normal(size=96))
    pk = sp.project(dec, u, "kernel")
    pp = sp.project(dec, u, "kernel_perp")
    recon = pk.values + pp.values
    assert np.max(np.abs(recon - u.values)) < 1e-10 * max(1.0, np.max(np.abs(u.values)))
    # idempotent
    again = sp.project(dec, pk, "kernel")
    assert np.allclose(again.values, pk.values, atol=1e-12)
    # up/down/kernel partition
    total = (
        sp.project(dec, u, "up").values
        + sp.project(dec, u, "down").values
        + pk.values
    )
    assert np.max(np.abs(total - u.values)) < 1e-10


def test_project_unknown_subspace():
    m, dec = round_decomp(96)
    with pytest.raises(ConfigError, match="unknown subspace"):
        sp.project(dec, m.field(np.ones(96)), "sideways")


def test_second_variation_pairs_with_operator():
    # D2 E[v,w] = -(8/(n-2)) <w, L v>, exact at the discrete level
    grid = geo.make_grid(3, 96)
    m = geo.sample_metric(grid, "round", f_spec="critical")
    op = sp.assemble(m)
    rng = np.random.default_rng(12)
    n = grid.dim
    for _ in range(3):
        v = m.field(rng.normal(size=96))
        w = m.field(rng.normal(size=96))
        lhs = en.second_variation(m, v, w)
        rhs = -(8.0 / (n - 2)) * geo.inner(m, w, op.apply(v))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_potential_f_switch():
    grid = geo.make_grid(3, 64)
    m = geo.sample_metric(grid, "round", f_spec=6.0)
    op_f = sp.assemble(m, potential="f")
    assert np.allclose(op_f.potential, 6.0)
    op_R = sp.assemble(m)
    assert np.allclose(op_R.potential, 6.0)
    with pytest.raises(ConfigError, match="unknown potential"):
        sp.assemble(m, potential="bogus")
    with pytest.raises(DomainError, match="grid mismatch"):
        sp.assemble(m, potential=np.ones(10))


def test_eps_family_lifts_the_kernel():
    # the perturbed family has no exact kernel: the near-zero eigenvalue
    # moves away roughly linearly in eps and stays stable (negative)
    grid = geo.make_grid(3, 128)
    lams = {}
    for eps in (0.05, 0.1):
        m = geo.sample_metric(grid, f"eps:{eps}", f_spec="critical")
        dec = sp.eigendecompose(sp.assemble(m))
        lams[eps] = nearest(dec.eigenvalues, 0.0)
        assert sp.kernel_dimension(dec) == 0
        assert lams[eps] < 0
    assert 1.5 < lams[0.1] / lams[0.05] < 2.5
