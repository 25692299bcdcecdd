"""Model families, parameter round trips, and YAML IO."""

import numpy as np
import pytest

from smalljumps.measure import SectorParams
from smalljumps.models import (
    load_model,
    make_constant_model,
    make_sine_model,
    model_from_params,
    model_to_params,
    save_model,
)


class TestFamilies:
    def test_sine_amplitude_and_derivatives(self):
        model = make_sine_model(rho=0.5, base=2.0, amplitude=0.5)
        sig, d1, d2, d3 = model.coeff.separable
        x = np.linspace(-3, 3, 13)
        assert np.allclose(sig(x), 2.0 + 0.5 * np.sin(x))
        h = 1e-6
        assert np.allclose(d1(x), (sig(x + h) - sig(x - h)) / (2 * h), atol=1e-8)
        assert np.allclose(d2(x), (d1(x + h) - d1(x - h)) / (2 * h), atol=1e-8)
        assert np.allclose(d3(x), (d2(x + h) - d2(x - h)) / (2 * h), atol=1e-8)

    def test_sine_validation(self):
        with pytest.raises(ValueError):
            make_sine_model(amplitude=-0.1)
        with pytest.raises(ValueError):
            make_sine_model(base=0.5, amplitude=0.7)
        with pytest.raises(ValueError):
            make_sine_model(base=3.0, amplitude=1.0)

    def test_constant_validation(self):
        with pytest.raises(ValueError):
            make_constant_model(scale=0.0)

    def test_envelope_covers_transformed_amplitude(self):
        model = make_sine_model(rho=0.3)
        v = np.geomspace(1.0, 100.0, 200)
        tilde = model.coeff.tilde_partial(0, 0)
        assert np.all(model.coeff.envelope_bar(v)
                      >= np.abs(tilde(0.0, v, 0.9)) - 1e-12)

    def test_separable_partials_consistent(self):
        model = make_sine_model(rho=0.5)
        v = np.geomspace(1.0, 20.0, 9)
        third = model.coeff.tilde_partial(0, 3)
        # c~ = sigma(x) / v, so the third v-derivative is -6 sigma / v**4
        sig = model.coeff.separable[0]
        assert np.allclose(third(0.0, v, 1.1), -6.0 * float(sig(1.1)) / v**4)


class TestRoundTrip:
    def test_params_rebuild(self):
        model = make_sine_model(rho=0.3, base=1.8, amplitude=0.4)
        clone = model_from_params(model_to_params(model))
        assert clone.rho == model.rho
        x = np.linspace(-2, 2, 7)
        assert np.allclose(clone.coeff.separable[0](x), model.coeff.separable[0](x))

    def test_yaml_round_trip(self, tmp_path):
        model = make_constant_model(rho=0.5, scale=2.0,
                                    sector=SectorParams(variant="weak"))
        path = tmp_path / "model.yaml"
        save_model(model, str(path))
        clone = load_model(str(path))
        assert clone.sector.variant == "weak"
        assert float(clone.coeff.separable[0](0.0)) == pytest.approx(2.0)

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError, match="unknown model family"):
            model_from_params({"family": "cubic", "rho": 0.5})

    def test_non_mapping_yaml_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("- just\n- a list\n")
        with pytest.raises(ValueError):
            load_model(str(path))
