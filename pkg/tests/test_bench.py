import json

import numpy as np
import pytest

from mpgig_ingarch import bench
from mpgig_ingarch.bench import SCHEMES, get_scheme, run_scheme
from mpgig_ingarch.exceptions import EstimationError
from mpgig_ingarch.model import ModelSpec


def test_scheme_reference_values():
    s1 = get_scheme("1").spec
    assert (s1.phi, s1.alpha) == (0.5, 1.5)
    assert np.array_equal(s1.d, [0, 0])
    assert np.array_equal(s1.a_mats[0], np.diag([0.3, 0.25]))
    assert np.array_equal(s1.b_mats[0], np.diag([0.4, 0.3]))
    assert np.array_equal(get_scheme("2").spec.d, [0, 1])
    s3 = get_scheme("3").spec
    assert s3.alpha == -1.5 and np.array_equal(s3.d, [1, 1])
    s4 = get_scheme("4").spec
    assert np.array_equal(s4.d, [0.5, 0.5, 1, 0.5])
    assert np.array_equal(s4.a_mats[0], np.diag([0.35, -0.3, 0.4, -0.3]))
    assert np.array_equal(s4.b_mats[0], np.diag([-0.3, 0.3, -0.3, 0.4]))
    s5 = get_scheme("5").spec
    a5, b5 = s5.a_mats[0], s5.b_mats[0]
    assert (a5[0, 1], a5[3, 2], b5[0, 1], b5[3, 2]) == (-0.2, 0.2, 0.2, -0.25)
    assert np.array_equal(np.diag(a5), np.diag(s4.a_mats[0]))
    s6 = get_scheme("6c").spec
    assert s6.p == 10 and (s6.phi, s6.alpha) == (0.5, 1.5)
    assert get_scheme("6*").method == "h-gmcem"
    assert get_scheme("4c").fit_shape.constraint == "diagonal"
    assert get_scheme("5c").fit_shape.constraint == "band:1"
    for sid, scheme in SCHEMES.items():
        assert scheme.spec.companion_radius() < 1.0, sid


@pytest.mark.parametrize("sid", list(SCHEMES))
def test_specs_round_trip_bit_exactly(sid):
    spec = SCHEMES[sid].spec
    back = ModelSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert np.array_equal(back.big_theta, spec.big_theta)
    assert back.big_theta.tobytes() == spec.big_theta.tobytes()


def test_unknown_scheme():
    with pytest.raises(KeyError):
        get_scheme("7")


def test_single_replicate_table(tmp_path):
    res = run_scheme("1", t_grid=(200,), reps=1, seed=3)
    assert len(res.rows) == 1 and res.estimates(200).shape == (1, 12)
    res.write_csv(tmp_path / "r.csv")
    res.write_json(tmp_path / "r.json")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("T,rep,seed")
    assert json.loads((tmp_path / "r.json").read_text())["by_T"]["200"]["n_reps"] == 1


def test_timing_quartiles_recompute():
    res = run_scheme("2", t_grid=(200,), reps=5, seed=4)
    times = np.array([r["wall_time"] for r in res.rows])
    assert res.timing[200] == pytest.approx(tuple(np.quantile(times, [0.25, 0.5, 0.75])))


def test_failures_are_logged(monkeypatch):
    real = bench.fit_series
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 2:
            raise EstimationError("synthetic failure", "em")
        return real(*args, **kwargs)

    monkeypatch.setattr(bench, "fit_series", flaky)
    res = run_scheme("1", t_grid=(200,), reps=3, seed=5, threads=1)
    assert [bool(r["error"]) for r in res.rows] == [False, True, False]
    assert "synthetic failure" in res.rows[1]["error"]
    assert res.estimates(200).shape[0] == 2


def test_hybrid_scheme_requires_hybrid_method():
    with pytest.raises(ValueError):
        run_scheme("6*", method="gmcem", reps=1, t_grid=(500,))


def test_seed_determinism_across_workers():
    a = run_scheme("1", t_grid=(200,), reps=3, seed=6, threads=1)
    b = run_scheme("1", t_grid=(200,), reps=3, seed=6, threads=2)
    assert np.array_equal(a.estimates(200), b.estimates(200))
    assert [r["seed"] for r in a.rows] == [r["seed"] for r in b.rows]


def test_scheme3_consistency():
    res = run_scheme("3", t_grid=(200, 1000), reps=50, seed=0)
    truth = np.array([res.truth[n] for n in res.names])
    mae = {T: np.median(np.abs(res.estimates(T) - truth), axis=0) for T in (200, 1000)}
    assert np.all(mae[1000] < mae[200]), dict(zip(res.names, zip(mae[200], mae[1000])))


def test_hybrid_faster_on_scheme6():
    slow = run_scheme("6c", t_grid=(500,), reps=3, seed=7)
    fast = run_scheme("6*", t_grid=(500,), reps=3, seed=7)
    assert fast.timing[500][1] < slow.timing[500][1]
