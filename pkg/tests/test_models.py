import json

import numpy as np
import pytest

from conftest import GAINS, GENERATOR, PLANT_A, PLANT_B, example_text
from regenstab.models import (
    AssumptionError,
    Cycle,
    Deterministic,
    DiscreteFinite,
    MJLSModel,
    ModelError,
    ModeSet,
    PeriodicObservationModel,
    RegenerativeModel,
    SemiMarkovKernel,
    SemiMarkovModel,
    TruncatedExponential,
    Uniform,
    check_metzler,
    closed_loop_modes,
    holding_from_dict,
    model_to_dict,
    parse_model,
    serialize_model,
)


def mjls_doc(**over):
    doc = {
        "version": 1,
        "m": 2,
        "class": "mjls",
        "modes": [{"label": "a", "matrix": [[-1, 2], [0.5, -3]]},
                  {"label": "b", "matrix": [[0.2, -1], [1, -0.4]]}],
        "generator": [[-1, 1], [2, -2]],
    }
    doc.update(over)
    return doc


def test_example_file_parses_to_case_study(economy):
    assert isinstance(economy, PeriodicObservationModel)
    assert economy.n == 3 and economy.num_states == 3 and economy.plant_B[0].shape == (3, 1)
    for got, want in zip(economy.plant_A, PLANT_A):
        np.testing.assert_array_equal(got, want)
    for got, want in zip(economy.plant_B, PLANT_B):
        np.testing.assert_array_equal(got, want)
    for got, want in zip(economy.gains, GAINS):
        np.testing.assert_array_equal(got, want)
    np.testing.assert_array_equal(economy.generator, GENERATOR)
    assert economy.plant_A[2][0, 0] == 1.80  # the printed "1,80"
    assert economy.assumptions["A1"] == "m even"


def test_closed_loop_modes(economy):
    modes = closed_loop_modes(economy)
    assert len(modes) == 9 and all(modes[lab].shape == (3, 3) for lab in modes)
    A1, B1, K1 = (np.array(v[0], dtype=float) for v in (PLANT_A, PLANT_B, GAINS))
    np.testing.assert_array_equal(modes[(0, 0)], A1 + B1 @ K1)
    zero_gain = PeriodicObservationModel(
        tuple(np.array(a) for a in PLANT_A), tuple(np.array(b) for b in PLANT_B),
        tuple(np.zeros((1, 3)) for _ in range(3)), np.array(GENERATOR), 0.1,
    )
    for i in range(3):
        np.testing.assert_array_equal(zero_gain.modes[(i, 2)], PLANT_A[i])


def test_check_metzler():
    modes = ModeSet.from_list([[[-1, 2], [0.5, -3]], [[-1, -0.1], [0.5, -3]]])
    assert check_metzler(modes) == {0: True, 1: False}


def test_case_study_even_m_satisfies_a1(economy):
    assert not all(check_metzler(economy.modes).values())
    assert economy.assumptions["A1"] == "m even"


def test_generator_row_sum_rejected():
    with pytest.raises(ModelError, match="row 0"):
        parse_model(mjls_doc(generator=[[-1, 1.1], [2, -2]]))


def test_generator_negative_offdiag_rejected():
    with pytest.raises(ModelError):
        parse_model(mjls_doc(generator=[[1, -1], [2, -2]]))


def test_deterministic_zero_rejected():
    with pytest.raises(ModelError):
        Deterministic(0.0)
    with pytest.raises(ModelError):
        holding_from_dict({"type": "deterministic", "value": 0})


def test_holding_invariants():
    with pytest.raises(ModelError):
        DiscreteFinite((1.0, 2.0), (0.5, 0.4))
    with pytest.raises(ModelError):
        DiscreteFinite((1.0, -2.0), (0.5, 0.5))
    with pytest.raises(ModelError):
        Uniform(1.0, 1.0)
    with pytest.raises(ModelError):
        Uniform(0.0, float("inf"))
    with pytest.raises(ModelError):
        TruncatedExponential(1.0, float("inf"))
    assert DiscreteFinite((1.0, 2.0), (0.5, 0.5)).support_bound == 2.0
    assert TruncatedExponential(2.0, 5.0).support_bound == 5.0


def test_holding_samples_stay_in_support():
    rng = np.random.default_rng(0)
    for dist in (Uniform(0.5, 1.5), TruncatedExponential(3.0, 0.4), DiscreteFinite((1, 2), (0.3, 0.7))):
        xs = [dist.sample(rng) for _ in range(2000)]
        assert min(xs) > 0 and max(xs) <= dist.support_bound


def test_truncated_exponential_mean():
    d = TruncatedExponential(2.0, 1.0)
    # closed form mean of Exp(lam) truncated to (0, c]
    lam, c = 2.0, 1.0
    exact = 1 / lam - c * np.exp(-lam * c) / (1 - np.exp(-lam * c))
    assert float(d.expect(lambda t: np.array([[t]]))[0, 0]) == pytest.approx(exact, abs=1e-12)


def test_odd_m_non_metzler_rejected():
    with pytest.raises(AssumptionError, match=r"assumption \(A1\) unsatisfied"):
        parse_model(mjls_doc(m=3))


def test_odd_m_metzler_accepted():
    doc = mjls_doc(m=3)
    doc["modes"][1]["matrix"] = [[0.2, 1], [1, -0.4]]
    model = parse_model(doc)
    assert model.assumptions["A1"] == "all modes Metzler"


def test_periodic_odd_m_refused():
    doc = json.loads(example_text())
    doc["m"] = 3
    with pytest.raises(AssumptionError):
        parse_model(doc)


def test_periodic_dimension_mismatch():
    doc = json.loads(example_text())
    doc["periodic"]["gains"][1] = [[1.0, 2.0]]
    with pytest.raises(ModelError, match="gains"):
        parse_model(doc)


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: d.pop("class"), "class"),
    (lambda d: d.update(version=2), "version"),
    (lambda d: d.update({"class": "weird"}), "unknown class"),
    (lambda d: d["modes"][0].pop("matrix"), "matrix"),
    (lambda d: d["modes"][1].update(matrix=[[1, 2, 3], [4, 5, 6], [7, 8, 9]]), "dimension"),
    (lambda d: d.update(m=0), "m"),
])
def test_schema_errors(mutate, msg):
    doc = mjls_doc()
    mutate(doc)
    with pytest.raises(ModelError, match=msg):
        parse_model(doc)


def test_json_syntax_error_has_line():
    text = '{\n  "version": 1,\n  "m": 2\n  "class": "mjls"\n}'
    with pytest.raises(ModelError) as exc:
        parse_model(text)
    assert exc.value.line == 4


def test_schema_error_located_in_text():
    text = json.dumps(mjls_doc(generator=[[-1, 1.5], [2, -2]]), indent=2)
    with pytest.raises(ModelError) as exc:
        parse_model(text)
    assert exc.value.line == text.splitlines().index('  "generator": [') + 1
    assert str(exc.value).startswith(f"line {exc.value.line}:")


SEMI_DOC = {
    "version": 1, "m": 2, "class": "semi_markov",
    "modes": [{"label": "x", "matrix": [[-1, 0.3], [0, -0.2]]},
              {"label": "y", "matrix": [[0.1, 1], [-1, 0.1]]}],
    "kernel": {
        "P": [[0.25, 0.75], [1.0, 0.0]],
        "holding": [
            {"from": 0, "to": 0, "dist": {"type": "deterministic", "value": 0.5}},
            {"from": 0, "to": 1, "dist": {"type": "uniform", "low": 0.2, "high": 1.0}},
            {"from": 1, "to": 0, "dist": {"type": "truncated_exponential", "rate": 2.0, "cap": 3.0}},
        ],
        "mode_of_state": ["y", "x"],
    },
}

REGEN_DOC = {
    "version": 1, "m": 4, "class": "regenerative",
    "modes": [{"label": 0, "matrix": [[-1, 0.3], [0, -0.2]]},
              {"label": 1, "matrix": [[0.1, 1], [-1, 0.1]]}],
    "cycles": [
        {"prob": 0.4, "schedule": [{"label": 0, "duration": 1.0}, {"label": 1, "duration": 0.5}]},
        {"prob": 0.6, "schedule": [{"label": 1, "duration": 0.25}]},
    ],
}


def test_semi_markov_parse():
    model = parse_model(SEMI_DOC)
    assert isinstance(model, SemiMarkovModel)
    assert model.mode_of_state == ("y", "x")
    assert model.cycle_bound == 3.0
    assert isinstance(model.kernel.holding[(1, 0)], TruncatedExponential)


def test_semi_markov_missing_holding():
    doc = json.loads(json.dumps(SEMI_DOC))
    doc["kernel"]["holding"].pop(1)
    with pytest.raises(ModelError, match="no holding distribution"):
        parse_model(doc)


def test_semi_markov_unnormalized_P():
    doc = json.loads(json.dumps(SEMI_DOC))
    doc["kernel"]["P"][0] = [0.25, 0.70]
    with pytest.raises(ModelError, match="sums to"):
        parse_model(doc)


def test_regenerative_parse_and_validation():
    model = parse_model(REGEN_DOC)
    assert isinstance(model, RegenerativeModel) and model.cycle_bound == 1.5
    doc = json.loads(json.dumps(REGEN_DOC))
    doc["cycles"][0]["prob"] = 0.5
    with pytest.raises(ModelError, match="sum to"):
        parse_model(doc)
    doc = json.loads(json.dumps(REGEN_DOC))
    doc["cycles"][1]["schedule"][0]["duration"] = 0
    with pytest.raises(ModelError):
        parse_model(doc)


@pytest.mark.parametrize("doc", [mjls_doc(), SEMI_DOC, REGEN_DOC, json.loads(example_text())],
                         ids=["mjls", "semi", "regen", "periodic"])
def test_round_trip(doc):
    model = parse_model(doc)
    again = parse_model(serialize_model(model))
    assert again == model
    assert model_to_dict(again) == model_to_dict(model)


def test_round_trip_bit_exact_floats():
    rng = np.random.default_rng(9)
    A = rng.standard_normal((3, 3))
    Q = np.array([[-0.1 / 3, 0.1 / 3], [np.pi, -np.pi]])
    model = MJLSModel(ModeSet.from_list([A, A.T]), Q, 2)
    again = parse_model(serialize_model(model))
    assert np.array_equal(again.modes[0], A) and np.array_equal(again.generator, Q)


def test_models_are_immutable(economy):
    with pytest.raises(ValueError):
        economy.generator[0, 0] = 1.0
    with pytest.raises(Exception):
        economy.h = 0.2


def test_cycle_duration():
    c = Cycle(1.0, (("a", 0.1), ("b", 0.2)))
    assert c.duration == pytest.approx(0.3)


def test_kernel_accepts_no_ergodicity():
    # absorbing embedded chain: valid, nothing about stationarity is required
    k = SemiMarkovKernel(np.array([[1.0, 0.0], [0.5, 0.5]]),
                         {(0, 0): Deterministic(1.0), (1, 0): Deterministic(1.0),
                          (1, 1): Deterministic(2.0)})
    assert k.support_bound == 2.0
