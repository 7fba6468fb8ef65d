import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tidypsf.nonconvexity import (
    ApertureRejected,
    SupportPair,
    autocorrelation,
    autocorrelation_direct,
    autocorrelation_fourier,
    candidate_directions,
    certify_average_escapes,
    certify_single_mask,
    find_support_pair,
    lag_coordinate,
    verify_support_pair,
)
from tidypsf.optics import Aperture


def loop_autocorrelation(x):
    n = x.shape[0]
    out = np.zeros((2 * n - 1, 2 * n - 1), dtype=complex)
    for s in range(-(n - 1), n):
        for r in range(-(n - 1), n):
            acc = 0j
            for i in range(n):
                for j in range(n):
                    if 0 <= i + s < n and 0 <= j + r < n:
                        acc += x[i, j] * np.conj(x[i + s, j + r])
            out[s + n - 1, r + n - 1] = acc
    return out


# -- support pairs -------------------------------------------------------------

def test_square_pair():
    pair = find_support_pair(Aperture.square(9))
    assert pair.u == (0, 0) and pair.v == (8, 8)
    assert pair.direction == (1, 1)


def test_two_by_two_pair():
    pair = find_support_pair(Aperture.square(2))
    assert (pair.u, pair.v) == ((0, 0), (1, 1))


@pytest.mark.parametrize("aperture", [
    Aperture.disk(23),
    Aperture.disk(23, radius=10.5),
    Aperture.regular_polygon(23, 5),
    Aperture.regular_polygon(23, 6),
    Aperture.regular_polygon(31, 8, rotation=0.1),
])
def test_pair_exhaustive_audit(aperture):
    pair = find_support_pair(aperture)
    assert pair.u != pair.v
    assert aperture.support[pair.u] and aperture.support[pair.v]
    # independent audit: every open pixel other than u / v projects strictly inside
    w = np.array(pair.direction)
    pu, pv = w @ np.array(pair.u), w @ np.array(pair.v)
    for p in np.argwhere(aperture.support):
        t = w @ p
        if tuple(p) != pair.u:
            assert t > pu
        if tuple(p) != pair.v:
            assert t < pv
    assert verify_support_pair(aperture.support, pair)
    assert aperture.support_pair == (pair.u, pair.v)


def test_only_u_overlaps_at_pair_lag():
    ap = Aperture.disk(23, radius=10.5)
    pair = find_support_pair(ap)
    s, r = pair.lag
    overlaps = [tuple(p) for p in np.argwhere(ap.support)
                if 0 <= p[0] + s < 23 and 0 <= p[1] + r < 23 and ap.support[p[0] + s, p[1] + r]]
    assert overlaps == [pair.u]


def test_candidate_direction_order():
    assert candidate_directions(3)[:4] == [(1, 0), (0, 1), (1, 1), (1, -1)]
    assert len(set(candidate_directions(5))) == len(candidate_directions(5))


def test_sparse_lattice_isolated_by_diagonal():
    lattice = np.zeros((5, 5), dtype=bool)
    lattice[::2, ::2] = True
    pair = find_support_pair(Aperture(lattice))
    assert pair.direction == (1, 1)
    assert (pair.u, pair.v) == ((0, 0), (4, 4))


def test_row_segment_isolated_by_column_direction():
    line = np.zeros((5, 5), dtype=bool)
    line[2, 1:4] = True
    pair = find_support_pair(Aperture(line))
    assert pair.direction == (0, 1)


def test_rejected_when_no_direction_qualifies(monkeypatch):
    import tidypsf.nonconvexity as nc

    monkeypatch.setattr(nc, "candidate_directions", lambda limit: [(1, 0), (0, 1)])
    with pytest.raises(ApertureRejected):
        find_support_pair(Aperture.square(3))


# -- autocorrelation -------------------------------------------------------------

def test_zero_lag_counts_open_pixels():
    x = np.ones((6, 6), dtype=complex)
    c = autocorrelation(x)
    assert c[5, 5] == 36


def test_lag_beyond_overlap_is_zero(rng, random_pupil):
    x = random_pupil(Aperture.disk(7), rng)
    assert lag_coordinate(x, (7, 7)) == 0
    assert lag_coordinate(x, (-7, 2)) == 0


def test_random_4x4_paths_agree(rng):
    x = np.exp(1j * rng.uniform(0, 2 * np.pi, (4, 4)))
    ref = loop_autocorrelation(x)
    assert np.max(np.abs(autocorrelation_direct(x) - ref)) < 1e-12
    assert np.max(np.abs(autocorrelation_fourier(x) - ref)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 9))
def test_two_paths_agree_property(seed, n):
    rng = np.random.default_rng(seed)
    support = rng.uniform(size=(n, n)) < 0.7
    support[0, 0] = support[-1, -1] = True
    x = np.where(support, np.exp(1j * rng.uniform(0, 2 * np.pi, (n, n))), 0j)
    assert np.max(np.abs(autocorrelation_direct(x) - autocorrelation_fourier(x))) < 1e-10


def test_hermitian_symmetry_exact(rng, random_pupil):
    x = random_pupil(Aperture.disk(9), rng)
    c = autocorrelation_direct(x)
    assert np.array_equal(c[::-1, ::-1], np.conj(c))


def test_unknown_method():
    with pytest.raises(ValueError):
        autocorrelation(np.ones((2, 2)), method="bogus")


# -- certificates ----------------------------------------------------------------

def test_two_by_two_certificate():
    x = np.array([[1, 1], [1, -1]], dtype=complex)
    cert = certify_single_mask(x, SupportPair((0, 0), (1, 1), (1, 1)))
    assert cert.coordinate_value == pytest.approx(-1 + 0j)
    assert cert.magnitude == pytest.approx(1.0)
    assert cert.verdict == "on_circle"


def test_zero_phase_certificate():
    ap = Aperture.disk(23)
    pair = find_support_pair(ap)
    cert = certify_single_mask(ap.support.astype(complex), pair)
    assert cert.coordinate_value == 1
    assert cert.verdict == "on_circle"


def test_single_mask_circle_law_monte_carlo(rng, random_pupil):
    ap = Aperture.disk(23, radius=10.5)
    pair = find_support_pair(ap)
    for _ in range(1000):
        x = random_pupil(ap, rng)
        cert = certify_single_mask(x, pair)
        assert abs(cert.magnitude - 1.0) <= 1e-9
        assert cert.coordinate_value == pytest.approx(x[pair.u] * np.conj(x[pair.v]), abs=1e-12)


def test_antipodal_average_is_zero():
    pair = SupportPair((0, 0), (1, 1), (1, 1))
    a = np.array([[1, 1], [1, 1]], dtype=complex)
    b = np.array([[1, 1], [1, -1]], dtype=complex)
    cert = certify_average_escapes([a, b], pair)
    assert cert.coordinate_value == pytest.approx(0j)
    assert cert.verdict == "inside_disc"
    payload = cert.to_json()
    assert payload["per_mask_coordinates"] == [[1.0, 0.0], [-1.0, 0.0]]
    assert set(payload) == {"u", "v", "direction", "per_mask_coordinates", "mean_coordinate",
                            "magnitude", "verdict", "tolerance"}


def test_identical_pupils_stay_on_circle(rng, random_pupil):
    ap = Aperture.disk(11)
    pair = find_support_pair(ap)
    x = random_pupil(ap, rng)
    cert = certify_average_escapes([x] * 4, pair)
    assert cert.magnitude == pytest.approx(1.0, abs=1e-12)
    assert cert.verdict == "on_circle"


def test_average_escape_rate(rng, random_pupil):
    ap = Aperture.disk(15)
    pair = find_support_pair(ap)
    hits = sum(certify_average_escapes([random_pupil(ap, rng), random_pupil(ap, rng)], pair,
                                       tol=1e-6).verdict == "inside_disc" for _ in range(1000))
    assert hits >= 990


def test_average_needs_two():
    with pytest.raises(ValueError):
        certify_average_escapes([np.ones((2, 2))], SupportPair((0, 0), (1, 1), (1, 1)))
