import csv
import dataclasses
import io
import json

import pytest

from cdfsched.experiments import (
    KINDS,
    ExperimentSpec,
    SpecError,
    builtin_names,
    load_spec,
    run_experiment,
    write_outputs,
)
from cdfsched.fairness import i_d_cs

BUILTINS = [
    "cdf_curves", "fig10_gain_vs_nfb", "fig11_csfr_cs_ratio", "fig2_sum_throughput",
    "fig3_gain_vs_car", "fig4_id_per_user", "fig5_qfi_vs_car", "fig6_gain_vs_snr",
    "fig7_feedback_overhead", "fig8_feedback_ratio", "fig9_gain_vs_inv_alpha",
]


def small(name, **changes):
    return dataclasses.replace(load_spec(name), **changes)


def parse_csv(text):
    body = "\n".join(line for line in text.splitlines() if not line.startswith("#"))
    return list(csv.DictReader(io.StringIO(body)))


def test_builtins_listed_and_loadable():
    assert builtin_names() == sorted(BUILTINS)
    for name in BUILTINS:
        spec = load_spec(name)
        assert spec.name == name and spec.kind in KINDS


def test_unknown_spec_and_keys():
    with pytest.raises(SpecError, match="unknown spec"):
        load_spec("fig99")
    doc = load_spec("fig7_feedback_overhead").to_dict()
    with pytest.raises(SpecError, match="unknown top-level"):
        ExperimentSpec.from_dict({**doc, "colour": "red"})
    with pytest.raises(SpecError, match="missing"):
        ExperimentSpec.from_dict({k: v for k, v in doc.items() if k != "kind"})


@pytest.mark.parametrize("change,match", [
    ({"kind": "histogram"}, "unknown experiment kind"),
    ({"sweep": {"axis": "alpha", "values": [0.1]}}, "sweeps over"),
    ({"sweep": {"axis": "p", "values": []}}, "nonempty"),
    ({"sweep": {"axis": "p", "values": [0.0, 0.5]}}, "must lie in"),
    ({"policies": ["cs", "pf"]}, "unknown policies"),
    ({"slots": 4, "replicas": 8}, "at least replicas"),
])
def test_spec_validation(change, match):
    doc = {**load_spec("fig7_feedback_overhead").to_dict(), **change}
    with pytest.raises(SpecError, match=match):
        ExperimentSpec.from_dict(doc)


def test_toml_file_spec(tmp_path):
    path = tmp_path / "mine.toml"
    path.write_text(
        'name = "mine"\nkind = "gain_vs_nfb"\nslots = 2000\nreplicas = 2\n'
        '[sweep]\naxis = "p"\nvalues = [0.0, 0.5]\n[params]\nalphas = [0.5]\n'
    )
    spec = load_spec(path)
    res = run_experiment(spec)
    assert res.complete and len(res.rows) == 2
    assert res.column("gain_csfr_analytic", p=0.0) == res.column("gain_cs_analytic", p=0.0)


def test_feedback_overhead_values():
    spec = small("fig7_feedback_overhead", slots=20_000, replicas=2, params={"n_values": [10], "mc_p": [0.02]})
    res = run_experiment(spec)
    mu = res.column("mu", p=0.02, n=10)[0]
    assert mu == pytest.approx(10 * (1 - 0.02**0.1))
    assert abs(mu - 3.24) < 0.01
    mc = [r for r in res.rows if r["mu_mc"] is not None]
    assert len(mc) == 1 and abs(mc[0]["mu_mc"] - mu) < 4 * mc[0]["mu_se"]


def test_qfi_cs_respects_floor():
    spec = small("fig5_qfi_vs_car", slots=40_000, replicas=2, policies=["cs", "rrs"],
                 sweep={"axis": "alpha", "values": [0.5, 0.8]})
    res = run_experiment(spec, workers=2)
    assert res.complete
    for a, q in zip([0.5, 0.8], res.column("qfi_analytic", policy="cs")):
        assert q == pytest.approx(min(i_d_cs(a), i_d_cs(1 - a)))
        assert q >= 8 / 9 - 1e-12
    assert res.column("qfi_analytic", policy="rrs", alpha1=0.5)[0] == pytest.approx(1 / 1.5)


def test_cdf_curves_values():
    spec = small("cdf_curves", slots=20_000, sweep={"axis": "snr", "values": [0.5, 1.0]})
    res = run_experiment(spec)
    got = dict(zip(res.column("m", snr=0.5), res.column("cdf", snr=0.5)))
    assert got[1] == pytest.approx(0.3935, abs=1e-4)
    assert got[2] == pytest.approx(0.2642, abs=1e-4)
    assert got[4] == pytest.approx(0.1429, abs=1e-4)
    assert got[10] == pytest.approx(0.0318, abs=1e-4)
    for r in res.rows:
        assert abs(r["cdf_mc"] - r["cdf"]) <= 4 * max(r["cdf_se"], 1e-3)


def test_csv_and_manifest_round_trip(tmp_path):
    spec = small("fig10_gain_vs_nfb", slots=4_000, replicas=2, params={"alphas": [0.25], "mc_p": [0.1]},
                 sweep={"axis": "p", "values": [0.0, 0.1]})
    res = run_experiment(spec)
    csv_path, man_path = write_outputs(res, tmp_path)
    text = csv_path.read_text()
    assert text.startswith("# experiment: fig10_gain_vs_nfb\n")
    assert f"# config_sha256: {spec.config_hash()}" in text
    rows = parse_csv(text)
    assert list(rows[0]) == list(KINDS["gain_vs_nfb"].columns)
    assert rows[0]["gain_mc"] == "" and rows[1]["gain_mc"] != ""
    man = json.loads(man_path.read_text())
    assert man["status"] == "complete" and man["seed"] == spec.seed
    again = run_experiment(load_spec(man_path))
    assert again.csv_text() == text


def test_workers_do_not_change_tables():
    spec = small("fig4_id_per_user", slots=20_000, replicas=4, policies=["cs", "rrs"],
                 sweep={"axis": "weight_split", "values": [0.3, 0.7]})
    assert run_experiment(spec, workers=1).csv_text() == run_experiment(spec, workers=4).csv_text()


def test_seed_changes_mc_columns():
    base = small("fig4_id_per_user", slots=20_000, replicas=2, policies=["cs"])
    a = run_experiment(base)
    b = run_experiment(dataclasses.replace(base, seed=base.seed + 1))
    assert a.column("i_d_analytic") == b.column("i_d_analytic")
    assert a.column("i_d_mc") != b.column("i_d_mc")


def test_calibration_failure_marks_run_incomplete(tmp_path):
    spec = small("fig4_id_per_user", slots=20_000, replicas=2, policies=["cs", "liu"],
                 calibration={"max_slots": 2_000, "batch_slots": 500, "check_every": 2,
                              "check_slots": 1_000, "tol": 1e-7})
    res = run_experiment(spec)
    assert not res.complete
    assert res.failures[0]["policy"] == "liu" and "CalibrationError" in res.failures[0]["error"]
    assert all(v is None for v in res.column("i_d_mc", policy="liu"))
    assert all(v is not None for v in res.column("i_d_mc", policy="cs"))
    csv_path, man_path = write_outputs(res, tmp_path)
    assert "# status: incomplete" in csv_path.read_text()
    assert json.loads(man_path.read_text())["status"] == "incomplete"


def test_no_mc_leaves_mc_columns_empty():
    spec = small("fig11_csfr_cs_ratio", monte_carlo=False)
    res = run_experiment(spec)
    assert all(v is None for v in res.column("ratio_mc"))
    for r in res.rows:
        assert r["ratio_floor"] <= r["ratio_lower_bound"] + 1e-12 <= r["ratio_analytic"] + 2e-12
