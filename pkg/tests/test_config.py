import pytest

from nyqwdm.config import ConfigError, ScenarioConfig, dump, dumps, load, loads


class TestRoundTrip:
    """Parse, serialize and parse again."""

    def test_default_round_trip(self):
        cfg = ScenarioConfig()
        assert loads(dumps(cfg)) == cfg

    def test_edited_round_trip(self, tmp_path):
        cfg = (
            ScenarioConfig()
            .replace("tx.n_taps", 128)
            .replace("channel.snr_db", 14.04)
            .replace("tx.dac_quant_bits", 6)
            .replace("rx.cd_length_km", 0.1 + 0.2)
            .replace("channel.ase", True)
        )
        dump(cfg, tmp_path / "s.ini")
        back = load(tmp_path / "s.ini")
        assert back == cfg
        assert back.rx.cd_length_km == 0.1 + 0.2  # repr keeps every bit

    def test_none_tokens(self):
        text = dumps(ScenarioConfig())
        assert "dac_quant_bits = ideal" in text
        assert "cd_length_km = auto" in text
        assert "snr_db = none" in text

    def test_partial_file_uses_defaults(self):
        cfg = loads("[plan]\nn_carriers = 3\n")
        assert cfg.plan.n_carriers == 3 and cfg.tx == ScenarioConfig().tx

    def test_integer_literals(self):
        assert loads("[tx]\nprbs_seed = 0x1234\n").tx.prbs_seed == 0x1234


class TestStrictness:
    """Unknown names and bad values are errors."""

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="n_tap"):
            loads("[tx]\nn_tap = 64\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            loads("[fiber]\nlength = 1\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            loads("[tx]\nn_taps = many\n")

    def test_inconsistent(self):
        with pytest.raises(ConfigError):
            loads("[tx]\nn_taps = 63\n")
        with pytest.raises(ConfigError):
            loads("[rx]\neq_taps = 50\n")
        with pytest.raises(ConfigError):
            loads("[tx]\ndac_quant_bits = 3\n")

    def test_malformed(self):
        with pytest.raises(ConfigError):
            loads("n_taps = 64\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load(tmp_path / "absent.ini")


class TestReplace:
    """Single-field edits by path."""

    def test_replace_and_get(self):
        cfg = ScenarioConfig().replace("plan.spacing", "11.25e9")
        assert cfg.get("plan.spacing") == 11.25e9

    @pytest.mark.parametrize("path", ["tx", "tx.nope", "nosuch.key", ".n_taps"])
    def test_invalid_path(self, path):
        with pytest.raises(ConfigError):
            ScenarioConfig().replace(path, 1)

    def test_non_integer_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig().replace("tx.n_taps", 64.5)

    def test_digest_tracks_content(self):
        a = ScenarioConfig()
        assert a.digest() == ScenarioConfig().digest()
        assert a.digest() != a.replace("channel.master_seed", 2).digest()


class TestDerived:
    def test_derived_objects(self):
        cfg = ScenarioConfig()
        assert cfg.shaper().sample_rate == 25e9
        assert len(cfg.carrier_plan()) == 5
        assert len(cfg.spans()) == 3
        assert cfg.cd_fiber().length == pytest.approx(227.34)
        assert cfg.replace("rx.cd_length_km", 200.0).cd_fiber().length == 200.0
        assert cfg.rx_config().eq_taps == 51
