import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from uwbsim import __version__
from uwbsim.channel import PRESETS
from uwbsim.cli import main
from uwbsim.config import ConfigError, Experiment, load_experiment, parse_experiment

SWEEP_INI = """\
[experiment]
seed = 5

[channel]
preset = indoor_office_los

[frame]
rate_mbps = 15

[users]
count = 2

[receivers]
kinds = conventional, partial

[sweep]
ebn0_db = 5, 15, 25
max_bits = 2000
block_bits = 100
"""

ANALYTIC_INI = """\
[experiment]
seed = 1

[channel]
preset = {preset}

[frame]
rate_mbps = {rate}

[users]
count = {users}

[receivers]
kinds = {kinds}

[analytic]
ebn0_db = 20
"""


def write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        text = fh.read()
    comments = [line for line in text.splitlines() if line.startswith("#")]
    rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
    return text, comments, rows


def run_analytic(tmp_path, preset="residential_los", rate=15, users=1, kinds="conventional"):
    cfg = write(tmp_path, ANALYTIC_INI.format(preset=preset, rate=rate, users=users, kinds=kinds))
    out = str(tmp_path / "analytic.csv")
    assert main(["analytic", "--config", cfg, "--out", out]) == 0
    return read_csv(out)[2]


# --- config ---------------------------------------------------------------------------


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match=r"\[frame\] rate_mbs"):
        parse_experiment("[frame]\nrate_mbs = 15\n")
    with pytest.raises(ConfigError, match=r"\[channel\] gamma"):
        parse_experiment("[channel]\ngamma = 3\n")
    with pytest.raises(ConfigError, match=r"\[sweeps\]"):
        parse_experiment("[sweeps]\nebn0_db = 1\n")


def test_bad_values_are_named():
    with pytest.raises(ConfigError, match=r"\[users\] count"):
        parse_experiment("[users]\ncount = two\n")
    with pytest.raises(ConfigError, match="preset"):
        parse_experiment("[channel]\npreset = outdoor\n")
    with pytest.raises(ConfigError, match="seed"):
        parse_experiment(f"[experiment]\nseed = {2**64}\n")


def test_presets_are_used_verbatim():
    exp = parse_experiment("[channel]\npreset = residential_los\n")
    assert exp.channel_params() == PRESETS["residential_los"]
    exp = parse_experiment("[channel]\npreset = indoor_office_los\ncluster_decay_Gamma = 20\n")
    assert exp.channel_params().cluster_decay_Gamma == 20.0
    assert exp.channel_params().intra_decay_gamma0 == PRESETS["indoor_office_los"].intra_decay_gamma0


def test_round_trip_is_idempotent():
    exp = parse_experiment(SWEEP_INI)
    once = exp.to_ini()
    assert parse_experiment(once) == exp
    assert parse_experiment(once).to_ini() == once


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**64 - 1),
    rate=st.sampled_from([1.0, 7.5, 15.0, 30.0]),
    users=st.integers(1, 8),
    grid=st.lists(st.floats(-5, 40, allow_nan=False).map(lambda x: round(x, 3)), max_size=5, unique=True),
    kinds=st.lists(st.sampled_from(["conventional", "partial", "partial_0.3"]), min_size=1, max_size=3, unique=True),
)
def test_round_trip_property(seed, rate, users, grid, kinds):
    exp = Experiment(seed=seed, rate_mbps=rate, users=users, ebn0_db=tuple(sorted(grid)), receivers=tuple(kinds))
    back = parse_experiment(exp.to_ini())
    assert back == exp and back.sha256() == exp.sha256()


# --- sweep ----------------------------------------------------------------------------


def test_sweep_rows_headers_and_determinism(tmp_path):
    cfg = write(tmp_path, SWEEP_INI)
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert main(["sweep", "--config", cfg, "--out", a]) == 0
    assert main(["sweep", "--config", cfg, "--out", b]) == 0
    text, comments, rows = read_csv(a)
    assert text == read_csv(b)[0]
    assert len(rows) == 3 * 2
    assert {r["receiver_kind"] for r in rows} == {"conventional", "partial"}
    sha = load_experiment(cfg).sha256()
    assert comments[0] == f"# uwbsim {__version__} sweep"
    assert "# master_seed=5" in comments and f"# config_sha256={sha}" in comments
    assert "\r" not in text and text.endswith("\n")


def test_sweep_seed_override_changes_header_and_draws(tmp_path):
    cfg = write(tmp_path, SWEEP_INI)
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert main(["sweep", "--config", cfg, "--out", a]) == 0
    assert main(["sweep", "--config", cfg, "--out", b, "--seed", "6", "--threads", "2"]) == 0
    assert "# master_seed=6" in read_csv(b)[1]
    assert read_csv(a)[2] != read_csv(b)[2]


def test_thread_count_does_not_change_output(tmp_path):
    cfg = write(tmp_path, SWEEP_INI)
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert main(["sweep", "--config", cfg, "--out", a, "--threads", "1"]) == 0
    assert main(["sweep", "--config", cfg, "--out", b, "--threads", "3"]) == 0
    assert read_csv(a)[0] == read_csv(b)[0]


def test_missing_config_exits_nonzero_without_output(tmp_path):
    out = tmp_path / "x.csv"
    assert main(["sweep", "--config", str(tmp_path / "nope.ini"), "--out", str(out)]) != 0
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []


def test_invalid_config_exits_nonzero_and_names_key(tmp_path, caplog):
    cfg = write(tmp_path, SWEEP_INI.replace("count = 2", "count = 2\nfoo = 1"))
    out = tmp_path / "x.csv"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) != 0
    assert not out.exists()
    assert "[users] foo" in caplog.text


def test_missing_output_path_is_a_config_error(tmp_path):
    assert main(["sweep", "--config", write(tmp_path, SWEEP_INI)]) == 2


def test_output_path_from_file(tmp_path):
    out = tmp_path / "from_file.csv"
    cfg = write(tmp_path, SWEEP_INI.replace("seed = 5", f"seed = 5\noutput = {out}"))
    assert main(["sweep", "--config", cfg]) == 0 and out.exists()


def test_bad_seed_flag_is_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["sweep", "--config", write(tmp_path, SWEEP_INI), "--seed", "-1"])


# --- analytic -------------------------------------------------------------------------


def by_term(rows, receiver="conventional"):
    return {r["term"]: r for r in rows if r["receiver"] == receiver}


def test_analytic_single_user_low_rate_has_no_isi_or_mui(tmp_path):
    rows = by_term(run_analytic(tmp_path, preset="indoor_office_los", rate=1, users=1))
    assert float(rows["sigma_isi2"]["analytic_value"]) == 0.0
    assert float(rows["sigma_mui2"]["analytic_value"]) == 0.0
    assert rows["Eb"]["empirical_value"] == ""


def test_analytic_residential_eb(tmp_path):
    rows = by_term(run_analytic(tmp_path))
    assert abs(float(rows["Eb"]["analytic_value"]) - 0.03314) <= 1e-5
    assert set(rows) == {"Eb", "sigma_n2", "sigma_iasi2", "sigma_isi2", "sigma_mui2", "SINR", "BER"}


def test_analytic_keep_fraction_one_rows_equal_conventional(tmp_path):
    rows = run_analytic(tmp_path, users=2, rate=30, kinds="conventional, partial_1")
    conv, part = by_term(rows), by_term(rows, "partial_1")
    for term, r in conv.items():
        assert part[term]["analytic_value"] == r["analytic_value"]


def test_analytic_with_empirical_oracle_fills_ratio(tmp_path):
    text = ANALYTIC_INI.format(preset="indoor_office_los", rate=15, users=1, kinds="conventional")
    cfg = write(tmp_path, text + "empirical_trials = 1000\n")
    out = str(tmp_path / "a.csv")
    assert main(["analytic", "--config", cfg, "--out", out]) == 0
    rows = by_term(read_csv(out)[2])
    r = float(rows["Eb"]["ratio"])
    assert 0.8 < r < 1.25
    assert rows["sigma_isi2"]["ratio"] == ""  # 0/0


def test_analytic_rejects_awgn_channel(tmp_path):
    cfg = write(tmp_path, "[channel]\npreset = awgn\n")
    assert main(["analytic", "--config", cfg, "--out", str(tmp_path / "a.csv")]) == 2


# --- dump -----------------------------------------------------------------------------


def dump(tmp_path, what, *extra, ini=SWEEP_INI):
    out = str(tmp_path / f"{what}.csv")
    assert main(["dump", what, "--config", write(tmp_path, ini), "--out", out, *extra]) == 0
    text, comments, rows = read_csv(out)
    assert "\r" not in text and comments
    return rows


@pytest.mark.parametrize("order", [1, 2, 3, 5])
def test_pulse_dump_has_unit_energy(tmp_path, order):
    rows = dump(tmp_path, "pulse", ini=SWEEP_INI + f"\n[pulse]\norder = {order}\n")
    t = np.array([float(r["time_s"]) for r in rows])
    a = np.array([float(r["amplitude"]) for r in rows])
    assert abs(trapezoid(a**2, t) - 1.0) <= 1e-6


def test_partial_template_dump_is_zero_after_split(tmp_path):
    rows = dump(tmp_path, "template", "--receiver", "partial")
    a = np.array([float(r["amplitude"]) for r in rows])[1:-1]
    half = a.size // 2
    assert np.all(a[half:] == 0.0) and np.any(a[:half] != 0.0)


def test_channel_dump_delays_sorted(tmp_path):
    rows = dump(tmp_path, "channel")
    d = np.array([float(r["delay_ns"]) for r in rows])
    assert d[0] == 0.0 and np.all(np.diff(d) > 0)


def test_dump_unknown_object_is_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["dump", "spectrum", "--config", write(tmp_path, SWEEP_INI), "--out", str(tmp_path / "x.csv")])


def test_csv_uses_dot_decimal_and_comma(tmp_path):
    rows = dump(tmp_path, "pulse")
    assert all("," not in v for r in rows for v in r.values())
    assert float(rows[len(rows) // 2]["amplitude"]) != 0.0
