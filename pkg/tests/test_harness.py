import numpy as np
import pytest

from hsep.harness import (ExperimentSpec, SpecError, merge_bundles, run_experiment, simulate_field,
                          spec_from_config, spec_from_mapping)
from hsep.model import ModelParams
from hsep.stats import StatsAccumulator

BASE = {"epsilons": "0.4, 0.3", "replicas": "6", "taus": "0 0.05 0.1", "rs": "-0.5 0 0.5", "ic": "near_eq",
        "batch": "4"}


def test_field_level_validation_errors():
    with pytest.raises(SpecError) as exc:
        spec_from_mapping({"ic": "flat", "replicas": "0", "taus": "9", "rs": "11", "epsilons": "1.5",
                           "suites": "nope", "seed": "x"})
    assert set(exc.value.errors) >= {"ic", "replicas", "taus", "rs", "epsilons", "suites", "seed"}
    assert "flat" in exc.value.errors["ic"]


def test_overrides_and_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# example\nic = step\nepsilon = 0.3\nreplicas = 5\nnu = 0.4\nalpha = 2\nrho = 0.3\n")
    spec = spec_from_config(cfg, replicas=None, seed=4)
    assert spec.replicas == 5 and spec.seed == 4 and spec.epsilons == (0.3,)
    assert spec.params.nu == 0.4 and spec.params.rho == 0.3 and spec.params.eps == pytest.approx(0.3)
    assert spec_from_config(cfg, replicas=9).replicas == 9


def test_single_replica_initial_snapshot_only():
    spec = spec_from_mapping({"epsilon": "0.3", "replicas": "1", "taus": "0", "rs": "0 1"})
    b = run_experiment(spec, write=False, keep_samples=True)
    H = b.samples[0.3]
    assert H.shape == (1, 1, 2)
    p = spec.params.with_epsilon(0.3)
    c = p.constants
    # step data at tau = 0: Z-tilde(0, r) = r*(1 - rho)/eps * rho^{r r*/eps}
    expect = np.log(c.r_star * (1 - p.rho) / p.eps) + np.array([0.0, c.r_star / p.eps]) * np.log(p.rho)
    ks = np.floor(np.array([0.0, 1.0]) * c.r_star / p.eps)
    frac = np.array([0.0, 1.0]) * c.r_star / p.eps - ks
    lin = np.log(c.r_star * (1 - p.rho) / p.eps) + np.log((1 - frac) * p.rho ** ks + frac * p.rho ** (ks + 1))
    np.testing.assert_allclose(H[0, 0], lin, rtol=1e-12)
    assert H[0, 0, 0] == pytest.approx(expect[0])


def test_same_spec_twice_gives_identical_files(tmp_path):
    outs = []
    for name in ("a", "b"):
        spec = spec_from_mapping(BASE, out=str(tmp_path / name))
        run_experiment(spec)
        outs.append(tmp_path / name)
    names = sorted(p.name for p in outs[0].iterdir())
    assert "stats_eps0.4.csv" in names and "summary.json" in names and "field_eps0.4_replica0.csv" in names
    for n in names:
        if n.startswith(("stats", "field")):
            assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()
    head = (outs[0] / "stats_eps0.4.csv").read_text().splitlines()[:3]
    assert head[0].startswith("# hsep ") and "q=" in head[1]


def test_split_run_merges_to_single_run():
    spec = spec_from_mapping({**BASE, "replicas": "8"})
    whole = run_experiment(spec, write=False)
    halves = [run_experiment(spec, replica_start=0, replicas=4, write=False),
              run_experiment(spec, replica_start=4, replicas=4, write=False)]
    merged = merge_bundles(halves)
    for eps, acc in whole.stats.items():
        m = merged[eps]
        assert m.count == acc.count == 8
        np.testing.assert_allclose(m.mean, acc.mean, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(m.variance, acc.variance, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(m.M4, acc.M4, rtol=1e-10, atol=1e-12)


def test_replicas_do_not_depend_on_batch_position():
    p = ModelParams.scaling(0.4)
    a = simulate_field(p, "near_eq", [0.1], [0.0], 0, 5, seed=2)
    b = simulate_field(p, "near_eq", [0.1], [0.0], 3, 2, seed=2)
    np.testing.assert_array_equal(a.H[3:], b.H)


def test_run_rejects_zero_replicas():
    spec = spec_from_mapping(BASE)
    with pytest.raises(SpecError):
        run_experiment(spec, replicas=0, write=False)
    with pytest.raises(SpecError):
        ExperimentSpec(ModelParams.scaling(0.2), replicas=0).validate()


def test_empty_accumulator_merge_in_bundles():
    assert merge_bundles([]) == {}
    assert StatsAccumulator().count == 0
