import json
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from stabkit import ObservabilityCertificate, SystemDef, make_example
from stabkit.errors import DomainError, InputError, RateUnattainable
from stabkit.feedback import (
    FeedbackLaw,
    growth_bound,
    komornik_feedback,
    komornik_weight,
    law_to_json,
    load_law,
    lqr_feedback,
    solve_care,
    synthesize_for_rate,
    synthesize_general,
    synthesize_main,
    urquiza_feedback,
    zero_feedback,
)
from stabkit.numerics import QuadSpec, spectral_abscissa
from stabkit.observability import constants_from_feedback, validate_certificate
from stabkit.verify import closed_loop_report

E = math.e
CERT = ObservabilityCertificate(1.0, 3.0, 1.0)
FINE = QuadSpec("simpson", 4096)


def kernel_integral(k, T=1.0):
    return T / k - (1 - math.exp(-k * T)) / k**2


@pytest.fixture(scope="module")
def scalar():
    return make_example("scalar-unstable", a=1.0)


@pytest.fixture(scope="module")
def chain():
    """Wave chain with a certificate validated from an LQ gain."""
    sys = make_example("wave-chain", masses=3, damping=0.1)
    theta = 0.3
    base = lqr_feedback(sys.with_A(sys.A + theta * np.eye(sys.n)))
    cert = constants_from_feedback(sys, base.K, theta)
    assert validate_certificate(sys, cert, 20 / theta).passed
    return sys, cert


# --------------------------------------------------------------------------
# mutated family


def test_main_scalar_oracle(scalar):
    law = synthesize_main(scalar, CERT, 1.0, FINE)
    Pi = E * (1 - (1 - math.exp(-3)) / 3) + (1 - math.exp(-3)) / 3
    assert law.K[0, 0] == pytest.approx(-3 * E / Pi, abs=1e-7)
    assert law.predicted_rate == 0.5
    assert law.method == "mutated-main"
    assert spectral_abscissa(law.closed_loop(scalar)) == pytest.approx(1 - 3 * E / Pi, abs=1e-7)


def test_general_at_eps_hat_is_bitwise_main(chain):
    sys, cert = chain
    T = 1.4 * math.log(cert.C_alpha) / cert.alpha
    main = synthesize_main(sys, cert, T)
    general = synthesize_general(sys, cert, math.log(cert.C_alpha) / T, T)
    assert np.array_equal(main.K, general.K)
    assert main.predicted_rate == general.predicted_rate


def test_general_scalar_closed_form(scalar):
    law = synthesize_general(scalar, CERT, 0.5, 1.0, FINE)
    Pi = 3 * E * kernel_integral(2.5) + (1 - math.exp(-2.5)) / 2.5
    assert law.K[0, 0] == pytest.approx(-3 * E / Pi, rel=1e-9)
    assert law.predicted_rate == 0.25


@pytest.mark.parametrize("T", [0.05, 0.5, 3.0])
def test_unit_C_allows_zero_eps(scalar, T):
    law = synthesize_general(scalar, CERT, 0.0, T)
    assert law.predicted_rate == 0.5
    assert spectral_abscissa(law.closed_loop(scalar)) <= -0.5


def test_zero_D_gives_exactly_zero_gain():
    sys = make_example("stable-diagonal", rates=[1, 2])
    law = synthesize_main(sys, ObservabilityCertificate(2.0, 0.0, 1.0), 1.0)
    assert np.array_equal(law.K, np.zeros((1, 2)))
    assert not np.signbit(law.K).any()


def test_main_rejects_T_outside_window(scalar):
    with pytest.raises(DomainError, match="window"):
        synthesize_main(scalar, ObservabilityCertificate(2.0, 1.0, E), 0.4)


def test_general_rejects_inadmissible(scalar):
    with pytest.raises(DomainError, match="ln"):
        synthesize_general(scalar, ObservabilityCertificate(2.0, 1.0, E), 0.5, 1.0)


def test_rate_monotone_in_eps(chain):
    sys, cert = chain
    T = 3 * math.log(cert.C_alpha) / cert.alpha
    lo = synthesize_general(sys, cert, 0.5 * cert.alpha, T)
    hi = synthesize_general(sys, cert, 0.8 * cert.alpha, T)
    assert lo.predicted_rate > hi.predicted_rate


@pytest.mark.parametrize("factor", [1.3, 2.5])
def test_main_family_stabilizes(chain, factor):
    sys, cert = chain
    law = synthesize_main(sys, cert, factor * math.log(cert.C_alpha) / cert.alpha)
    report = closed_loop_report(sys, law)
    assert report["spectral_abscissa"] < 0
    assert report["passed"]


# --------------------------------------------------------------------------
# rate-targeted synthesis


@pytest.mark.parametrize("mu", [0.5, 2.0])
def test_rate_infinite_branch(scalar, mu):
    law = synthesize_for_rate(scalar, mu)
    assert law.method == "rate-targeted-infinite"
    assert law.params["theta"] == pytest.approx(1.5 * mu)
    assert law.params["omega_star"] == "inf"
    assert law.predicted_rate >= mu
    assert spectral_abscissa(law.closed_loop(scalar)) <= -mu


def test_rate_finite_branch():
    sys = make_example("rand-stabilizable", margin=0.8, seed=0)
    law = synthesize_for_rate(sys, 0.4)
    assert law.method == "rate-targeted-finite"
    assert law.params["theta"] == pytest.approx(0.6, abs=1e-7)
    assert law.predicted_rate >= 0.4
    assert spectral_abscissa(law.closed_loop(sys)) <= -0.4 + 0.05


def test_rate_rejected_above_best_rate():
    sys = make_example("rand-stabilizable", margin=0.8, seed=0)
    with pytest.raises(RateUnattainable) as info:
        synthesize_for_rate(sys, 0.9)
    assert info.value.omega_star == pytest.approx(0.8, abs=1e-6)
    assert "0.8" in str(info.value)


def test_rate_argument_checks(scalar):
    with pytest.raises(DomainError):
        synthesize_for_rate(scalar, 0.0)
    with pytest.raises(DomainError):
        synthesize_for_rate(scalar, 1.0, T_factor=1.0)


# --------------------------------------------------------------------------
# baselines


def test_komornik_weight_pieces():
    w = komornik_weight(1.0, 1.0)
    assert float(w(1.0)) == pytest.approx(math.exp(-2.0))
    assert float(w(1.0 + 1e-12)) == pytest.approx(math.exp(-2.0), rel=1e-9)
    assert float(w(1.5)) == 0.0
    assert float(w(0.3)) == pytest.approx(math.exp(-0.6))


def test_komornik_scalar_closed_form(scalar):
    law = komornik_feedback(scalar, 1.0, 1.0, FINE)
    # ramp piece: 2 e^{-2} int_1^{1.5} (1.5 - s) e^{-2 s} ds
    G = (1 - math.exp(-4)) / 4 + 2 * math.exp(-4) * kernel_integral(2.0, 0.5)
    assert law.K[0, 0] == pytest.approx(-1 / G, rel=1e-10)
    assert spectral_abscissa(law.closed_loop(scalar)) <= -1.0


def test_komornik_refuses_uncontrollable():
    with pytest.raises(DomainError, match="controllab"):
        komornik_feedback(make_example("rand-stabilizable"), 1.0, 1.0)


@pytest.mark.parametrize("omega", [0.5, 1.0, 2.0])
def test_urquiza_scalar_exact_rate(scalar, omega):
    law = urquiza_feedback(scalar, omega)
    assert law.K[0, 0] == pytest.approx(-(2 * omega + 2), rel=1e-9)
    assert spectral_abscissa(law.closed_loop(scalar)) == pytest.approx(-(2 * omega + 1), abs=1e-6)
    assert law.params["growth_bound_minus_A"] == pytest.approx(-1.0, abs=1e-9)
    assert law.predicted_rate == pytest.approx(2 * omega + 1, abs=1e-9)


def test_urquiza_convergence_precondition():
    sys = SystemDef([[-3.0]], [[1.0]])  # -A grows like e^{3t}
    with pytest.raises(DomainError, match="diverges"):
        urquiza_feedback(sys, 1.0)


def test_urquiza_refuses_uncontrollable():
    with pytest.raises(DomainError, match="controllab"):
        urquiza_feedback(make_example("rand-stabilizable"), 1.0)


def test_growth_bound_diagonal():
    assert growth_bound(np.diag([-1.0, 0.5])) == pytest.approx(0.5, abs=1e-9)


def test_lqr_scalar():
    law = lqr_feedback(make_example("scalar-unstable"))
    assert law.K[0, 0] == pytest.approx(-(1 + math.sqrt(2)), rel=1e-12)
    assert law.predicted_rate == pytest.approx(math.sqrt(2), rel=1e-12)
    assert law.params["riccati_residual"] <= 1e-8


def test_lqr_stable_system_solves_lyapunov():
    sys = make_example("stable-diagonal", rates=[1, 2])
    law = lqr_feedback(sys)
    assert np.array_equal(law.K, np.zeros((1, 2)))


@pytest.mark.parametrize("seed", range(5))
def test_care_against_scipy(seed):
    sys = make_example("rand-stabilizable", n=7, m=2, n_unc=2, seed=seed)
    P = solve_care(sys.A, sys.B, np.eye(7), np.eye(2))
    ref = scipy.linalg.solve_continuous_are(sys.A, sys.B, np.eye(7), np.eye(2))
    assert np.linalg.norm(P - ref) <= 1e-8 * np.linalg.norm(ref)


def test_lqr_rejects_unstabilizable():
    with pytest.raises(DomainError):
        lqr_feedback(SystemDef(np.diag([1.0, -1.0]), [[0.0], [1.0]]))


def test_baselines_stabilize_controllable_examples():
    systems = [make_example("scalar-unstable"), make_example("wave-chain", masses=2, damping=0.2)]
    for sys in systems:
        laws = [komornik_feedback(sys, 0.5, 2.0), urquiza_feedback(sys, 1.0), lqr_feedback(sys)]
        for law in laws:
            report = closed_loop_report(sys, law)
            assert report["spectral_abscissa"] < 0, law.method
            assert report["fitted_rate"] >= law.predicted_rate - 0.05, law.method


# --------------------------------------------------------------------------
# law documents


def test_law_json_roundtrip(scalar):
    law = synthesize_main(scalar, CERT, 1.0)
    doc = json.loads(law_to_json(law))
    assert set(doc) >= {"method", "K", "predicted_rate", "params"}
    back = load_law(law_to_json(law))
    assert np.array_equal(back.K, law.K)
    assert back.method == law.method and back.params == law.params


@pytest.mark.parametrize("doc", ["{}", '{"method": "magic", "K": [[1]], "predicted_rate": 0, "params": {}}', "[1]"])
def test_law_rejects_bad_documents(doc):
    with pytest.raises(InputError):
        load_law(doc)


def test_zero_feedback():
    sys = make_example("stable-diagonal", rates=[1, 2])
    law = zero_feedback(sys, 1.0)
    assert isinstance(law, FeedbackLaw)
    assert closed_loop_report(sys, law)["fitted_rate"] == pytest.approx(1.0, abs=0.05)


@given(st.floats(0.2, 3.0))
def test_predicted_rate_formula_main(T):
    sys = make_example("scalar-unstable")
    cert = ObservabilityCertificate(1.0, 3.0, 1.2)
    if T <= math.log(1.2):
        return
    law = synthesize_main(sys, cert, T, QuadSpec("simpson", 32))
    assert law.predicted_rate == pytest.approx(0.5 * (1.0 - math.log(1.2) / T), rel=1e-14)
