from json import dump, load
from pathlib import Path
from copy import deepcopy
from typing import Any, Dict, Optional

SETTINGS_FILE = Path(__file__).with_name("settings.json")

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "admm": {
        "rho1": 1e-2, "rho2": 1e-2, "rho3": 1e-2,
        "mu": 1.01, "rho_max": 1e3, "tol": 1e-4, "T": 20000,
        "cg_tol": 1e-6, "cg_max_iters": 200, "seed": 0
    },
    "policy": {
        "beta": 100, "window": 10, "stride": 10,
        "d_n": 128, "H": 8, "L": 2, "d_ff": 512,
        "mlp_dims": [256, 128, 16], "use_attention": True, "seed": 0
    },
    "policy_mrf": {"beta": 10, "window": 1, "stride": 1},
    "training": {
        "epochs": 10, "learning_rate": 1e-4, "batch_size": 256,
        "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8,
        "gamma": 10, "weighted_loss": True, "seed": 0
    },
    "training_mrf": {"epochs": 20, "gamma": 5},
    "run": {"beta": 100, "delta": 0.9, "T_prime": 20000},
    "generator": {
        "n": 500, "items": 100, "xi": 1.0, "density": 0.05, "price_scale": 1.0,
        "grid_width": 100, "grid_height": 100,
        "unary_strength": 1.0, "coupling": 0.5, "noise": 0.8
    },
    "presets": {
        "dataset_1": [[500, 100], [1000, 200], [1500, 300], [4000, 800]],
        "dataset_2": [[10000, 100], [50000, 500], [100000, 1000], [200000, 2000]],
        "grid": [[100, 100], [200, 200], [300, 300]]
    },
    "bench": {"deltas": [0.5, 0.6, 0.7, 0.8, 0.9, 1.0], "bin_width": 5}
}


class Settings():
    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else SETTINGS_FILE
        self.saved_settings = self.load_settings()
        return

    def save_settings(self, category, **kwargs):
        '''
        Save settings for a specific category.

        Example: save_settings("admm", tol=1e-5, T=5000)
        '''
        if category not in self.saved_settings:
            self.saved_settings[category] = {}
        self.saved_settings[category].update(kwargs)
        with open(self.path, "w") as f:
            dump(self.saved_settings, f, indent=4)
        self.saved_settings = self.load_settings()
        return

    def load_settings(self):
        '''Load the settings file; categories or keys missing from it fall back to DEFAULTS'''
        merged = deepcopy(DEFAULTS)
        try:
            with open(self.path, "r") as f:
                loaded = load(f)
        except FileNotFoundError:
            return merged
        for category, values in loaded.items():
            merged.setdefault(category, {}).update(values)
        return merged

    def category(self, name: str, override: Optional[str] = None) -> Dict[str, Any]:
        '''
        Copy of one category, optionally overlaid with a second one

        Example: category("policy", "policy_mrf") gives the policy settings with the
        MRF-specific window sizes applied.
        '''
        values = deepcopy(self.saved_settings.get(name, {}))
        if override:
            values.update(deepcopy(self.saved_settings.get(override, {})))
        return values
