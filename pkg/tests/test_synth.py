import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from sfcad.data import METRICS, load_csv
from sfcad.errors import ConfigError
from sfcad.synth import (FAULT_KINDS, SLA_PRESETS, Fault, LatentServiceState, ScenarioConfig,
                         derive_service_state, generate, generate_to_dir, preset, simulate, sla_label)

CHAIN = ("FW", "IDS", "FM", "DPI", "LB")


def _scenario(faults=(), T=400, seed=3, **kw):
    return ScenarioConfig(name="unit", vnf_chain=CHAIN, T=T, faults=faults, seed=seed, **kw)


def _state(rt, sr):
    return LatentServiceState(np.atleast_1d(np.asarray(rt, float)), np.atleast_1d(np.asarray(sr, float)))


def test_sla_presets_carry_the_two_threshold_pairs():
    assert (SLA_PRESETS["default"].response_time_ms, SLA_PRESETS["default"].success_rate) == (250.0, 0.9995)
    assert (SLA_PRESETS["strict"].response_time_ms, SLA_PRESETS["strict"].success_rate) == (200.0, 0.9999)


def test_sla_label_examples():
    s = _state(240.0, 0.9996)
    assert sla_label(s, "default").tolist() == [0]
    assert sla_label(s, "strict").tolist() == [1]
    for sr in (0.0, 0.5, 0.9995, 1.0):
        assert sla_label(_state(300.0, sr), "default").tolist() == [1]


@given(st.lists(st.tuples(st.floats(1.0, 400.0), st.floats(0.99, 1.0)), min_size=1, max_size=50))
def test_strict_labels_contain_default_labels(pairs):
    rt, sr = zip(*pairs)
    s = _state(rt, sr)
    assert np.all(sla_label(s, "strict") >= sla_label(s, "default"))


def test_strict_superset_on_preset_latent_state():
    sim = simulate(preset("wsd-like", T=3000, seed=1))
    default, strict = sla_label(sim.state, "default"), sla_label(sim.state, "strict")
    assert np.all(strict >= default)
    assert strict.sum() > default.sum()


def test_no_faults_gives_all_normal_labels():
    ds = generate(_scenario())
    assert ds.labels.sum() == 0


def test_zero_stress_service_state_sits_at_baseline():
    cfg = _scenario()
    state = derive_service_state(np.zeros((2000, 5, len(FAULT_KINDS))), cfg)
    assert abs(state.response_time.mean() - cfg.service.base_rt_ms) < 0.5
    assert np.all(state.success_rate == 1.0)


def test_packet_loss_plateau_breaks_availability_floor():
    fault = Fault(100, 60, "packet_loss", 1.0, 2)
    sim = simulate(_scenario((fault,)))
    plateau = slice(fault.start + 3, fault.start + fault.duration - 3)
    assert np.all(sim.state.success_rate[plateau] < SLA_PRESETS["default"].success_rate)
    assert np.all(sim.dataset.labels[plateau] == 1)


@given(st.integers(0, 10_000), st.integers(0, len(FAULT_KINDS) - 1), st.integers(0, 4), st.floats(0.0, 1.0))
def test_response_time_is_monotone_in_stress(seed, kind, vnf, bump):
    rng = np.random.default_rng(seed)
    stress = rng.random((20, 5, len(FAULT_KINDS)))
    noise = rng.normal(0.0, 2.0, size=20)
    cfg = _scenario()
    more = stress.copy()
    more[:, vnf, kind] += bump
    assert np.all(derive_service_state(more, cfg, noise).response_time
                  >= derive_service_state(stress, cfg, noise).response_time)


def test_cpu_stress_shifts_target_vnf_metrics():
    fault = Fault(150, 80, "cpu_stress", 1.0, 2)
    ds = generate(_scenario((fault,), T=500))
    inside = ds.frames[fault.start + 3:fault.start + fault.duration - 3, 2]
    before = ds.frames[:fault.start, 2]
    col = {m: j for j, m in enumerate(METRICS)}
    for metric, side in (("cpu_idle", "less"), ("cpu_user", "greater"), ("cpu_system", "greater")):
        res = stats.ttest_ind(inside[:, col[metric]], before[:, col[metric]], equal_var=False, alternative=side)
        assert res.pvalue < 0.01, metric


def test_upstream_fault_reaches_downstream_network_metrics():
    fault = Fault(150, 80, "traffic_surge", 1.0, 0)
    quiet = generate(_scenario(T=500))
    hit = generate(_scenario((fault,), T=500))
    j = METRICS.index("network_rx_bytes")
    window = slice(fault.start + 3, fault.start + fault.duration - 3)
    delta = hit.frames[window, :, j].mean(axis=0) - quiet.frames[window, :, j].mean(axis=0)
    assert np.all(delta[1:] > 0)
    np.testing.assert_allclose(delta[1:], delta[0] / 2, rtol=0.05)


def test_generation_is_deterministic(tmp_path):
    cfg = preset("lad-like", T=800, seed=5)
    a = generate_to_dir(cfg, tmp_path / "a").read_bytes()
    b = generate_to_dir(cfg, tmp_path / "b").read_bytes()
    assert a == b


@pytest.mark.parametrize("name", ["wsd-like", "lad-like"])
@pytest.mark.parametrize("sla", ["default", "strict"])
def test_presets_pass_load_checks(tmp_path, name, sla):
    cfg = preset(name, T=1200, seed=2, sla=sla)
    back = load_csv(generate_to_dir(cfg, tmp_path))
    assert back.V == len(cfg.vnf_chain) and back.T == 1200
    assert list(back.vnf_names) == list(cfg.vnf_chain)


@pytest.mark.parametrize("name", ["wsd-like", "lad-like"])
def test_preset_labels_are_fault_aligned_intervals(name):
    cfg = preset(name, T=20_000, seed=0)
    labels = generate(cfg).labels
    assert 0.25 <= labels.mean() <= 0.40
    covered = np.zeros(cfg.T, bool)
    for f in cfg.faults:
        covered[f.start:f.start + f.duration] = True
    assert not np.any(labels.astype(bool) & ~covered)
    edges = np.flatnonzero(np.diff(np.r_[0, labels, 0]))
    runs = edges[1::2] - edges[::2]
    assert runs.min() >= 20 and runs.mean() >= 20


def test_presets_differ_by_name_and_seed():
    a, b, c = preset("wsd-like", T=5000), preset("lad-like", T=5000), preset("wsd-like", T=5000, seed=1)
    starts = lambda cfg: [f.start for f in cfg.faults]
    assert starts(a) != starts(b) and starts(a) != starts(c)


@pytest.mark.parametrize("fault", [
    Fault(390, 20, "cpu_stress", 1.0, 0),
    Fault(-1, 5, "cpu_stress", 1.0, 0),
    Fault(10, 0, "cpu_stress", 1.0, 0),
    Fault(10, 5, "cpu_stress", 0.0, 0),
    Fault(10, 5, "fan_failure", 1.0, 0),
    Fault(10, 5, "cpu_stress", 1.0, 9),
])
def test_bad_fault_is_a_config_error(fault):
    with pytest.raises(ConfigError):
        _scenario((fault,))


def test_scenario_round_trips_through_dict():
    cfg = preset("wsd-like", T=1000, seed=4)
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
