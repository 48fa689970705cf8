from settings import DEFAULTS, Settings
from instances import GeneratorConfig
from lpbox_admm import AdmmParams
from policy import PolicyConfig
from training import TrainConfig


class TestSettings:
    def test_missing_file_gives_defaults(self, tmp_path):
        settings = Settings(tmp_path / "settings.json")
        assert settings.saved_settings == DEFAULTS

    def test_save_merges_into_category(self, tmp_path):
        path = tmp_path / "settings.json"
        Settings(path).save_settings("admm", tol=1e-5, T=500)
        reloaded = Settings(path)
        assert reloaded.category("admm")["tol"] == 1e-5
        assert reloaded.category("admm")["T"] == 500
        assert reloaded.category("admm")["mu"] == DEFAULTS["admm"]["mu"]
        assert reloaded.category("run") == DEFAULTS["run"]

    def test_category_overlay(self, tmp_path):
        settings = Settings(tmp_path / "settings.json")
        policy = settings.category("policy", "policy_mrf")
        assert (policy["beta"], policy["window"], policy["stride"]) == (10, 1, 1)
        assert policy["d_n"] == 128
        assert settings.category("policy")["beta"] == 100

    def test_category_is_a_copy(self, tmp_path):
        settings = Settings(tmp_path / "settings.json")
        settings.category("policy")["mlp_dims"].append(1)
        assert settings.category("policy")["mlp_dims"] == [256, 128, 16]


class TestFromSettings:
    def test_configs_pick_up_defaults(self, tmp_path):
        settings = Settings(tmp_path / "settings.json")
        assert AdmmParams.from_settings(settings).to_dict() == AdmmParams().to_dict()
        assert PolicyConfig.from_settings(settings).to_dict() == PolicyConfig().to_dict()
        assert TrainConfig.from_settings(settings).to_dict() == TrainConfig().to_dict()
        assert GeneratorConfig.from_settings(settings).to_dict() == GeneratorConfig().to_dict()

    def test_mrf_defaults(self, tmp_path):
        settings = Settings(tmp_path / "settings.json")
        train = TrainConfig.from_settings(settings, mrf=True)
        assert (train.gamma, train.epochs) == (5, 20)
        assert PolicyConfig.from_settings(settings, mrf=True).alpha == 10

    def test_overrides_and_params_file(self, tmp_path):
        settings = Settings(tmp_path / "settings.json")
        params_file = tmp_path / "params.json"
        params_file.write_text('{"rho1": 0.5, "T": 10}')
        params = AdmmParams.from_settings(settings, params_file, T=20, seed=None)
        assert (params.rho1, params.T, params.seed) == (0.5, 20, 0)

    def test_beta_override_rescales_windows(self, tmp_path):
        cfg = PolicyConfig.from_settings(Settings(tmp_path / "settings.json"), beta=50)
        assert (cfg.beta, cfg.window, cfg.stride, cfg.alpha) == (50, 5, 5, 10)
