"""
Run configuration: a JSON document with one form per section.

Every section is optional and falls back to the defaults below; unknown
keys anywhere are rejected so that a misspelt physics parameter never
goes unnoticed. Errors carry the dotted path of the offending key.
"""

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from django import forms
from django.core.exceptions import NON_FIELD_ERRORS, ValidationError

from .driven_model import DEFAULT_PARAMS, ModelParams
from .ensemble import EnsembleConfig
from .exceptions import ConfigError
from .frsh import ESTIMATORS, FRUSTRATED_POLICIES

METHOD_FRSH = "frsh"
METHOD_FRQME = "frqme"
METHOD_COMPARE = "compare"
METHODS = (METHOD_FRSH, METHOD_FRQME, METHOD_COMPARE)


@dataclass(frozen=True)
class FloquetConfig:
    n_max: int = 2
    n_phonon: int = 40


@dataclass(frozen=True)
class QmeConfig:
    dt: float = 2.0


@dataclass(frozen=True)
class IOConfig:
    output: str = "output.csv"
    stride: int = 200


@dataclass(frozen=True)
class SweepConfig:
    amplitudes: tuple


@dataclass(frozen=True)
class RunConfig:
    method: str = METHOD_FRSH
    params: ModelParams = ModelParams()
    ensemble: EnsembleConfig = EnsembleConfig()
    floquet: FloquetConfig = FloquetConfig()
    qme: QmeConfig = QmeConfig()
    io: IOConfig = IOConfig()
    sweep: SweepConfig | None = None

    def with_overrides(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, ensemble=replace(self.ensemble, master_seed=seed))

    def with_workers(self, worker_count: int) -> "RunConfig":
        return replace(self, ensemble=replace(self.ensemble, worker_count=worker_count))

    def for_amplitude(self, amplitude: float) -> "RunConfig":
        return replace(self, params=self.params.replace(A=amplitude), sweep=None)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class StrictFloatField(forms.FloatField):
    """FloatField that refuses strings and booleans coming from JSON."""

    def to_python(self, value):
        if value is not None and not _is_number(value):
            raise ValidationError("Expected a number.", code="invalid")
        return super().to_python(value)


class StrictIntegerField(forms.IntegerField):
    def to_python(self, value):
        if value is not None and not (_is_number(value) and float(value).is_integer()):
            raise ValidationError("Expected an integer.", code="invalid")
        return super().to_python(value)


class StrictCharField(forms.CharField):
    def to_python(self, value):
        if value is not None and not isinstance(value, str):
            raise ValidationError("Expected a string.", code="invalid")
        return super().to_python(value)


class AmplitudeListField(forms.Field):
    def to_python(self, value):
        if value in self.empty_values:
            return ()
        if not isinstance(value, list) or not all(_is_number(item) for item in value):
            raise ValidationError("Expected a list of numbers.", code="invalid")
        return tuple(float(item) for item in value)

    def validate(self, value):
        super().validate(value)
        if len(set(value)) != len(value):
            raise ValidationError("Amplitudes must be distinct.", code="invalid")


def _positive(form, name):
    value = form.cleaned_data.get(name)
    if value is not None and value <= 0:
        raise ValidationError("Must be positive.", code="min_value")
    return value


class MethodForm(forms.Form):
    method = forms.ChoiceField(choices=[(m, m) for m in METHODS])


class ParamsForm(forms.Form):
    kT = StrictFloatField()
    hbar_omega = StrictFloatField()
    g = StrictFloatField()
    eps_D = StrictFloatField(required=False)
    W = StrictFloatField()
    Gamma = StrictFloatField(min_value=0.0)
    A = StrictFloatField()
    Omega = StrictFloatField()

    def clean_kT(self):
        return _positive(self, "kT")

    def clean_hbar_omega(self):
        return _positive(self, "hbar_omega")

    def clean(self):
        cleaned = super().clean()
        if cleaned.get("A") and cleaned.get("Omega") is not None and cleaned["Omega"] <= 0:
            self.add_error("Omega", "Must be positive when A is nonzero.")
        return cleaned

    def to_config(self) -> ModelParams:
        return ModelParams(**self.cleaned_data)


class EnsembleForm(forms.Form):
    n_traj = StrictIntegerField(min_value=1)
    master_seed = StrictIntegerField(min_value=0, max_value=2**64 - 1)
    dt = StrictFloatField()
    t_end = StrictFloatField(min_value=0.0)
    worker_count = StrictIntegerField(min_value=1)
    frustrated_hops = forms.ChoiceField(choices=[(p, p) for p in FRUSTRATED_POLICIES])
    estimator = forms.ChoiceField(choices=[(e, e) for e in ESTIMATORS])
    max_hop_probability = StrictFloatField(max_value=1.0)

    def clean_dt(self):
        return _positive(self, "dt")

    def clean_max_hop_probability(self):
        return _positive(self, "max_hop_probability")

    def to_config(self, stride: int) -> EnsembleConfig:
        return EnsembleConfig(output_stride=stride, **self.cleaned_data)


class FloquetForm(forms.Form):
    n_max = StrictIntegerField(min_value=0)
    n_phonon = StrictIntegerField(min_value=1)

    def to_config(self) -> FloquetConfig:
        return FloquetConfig(**self.cleaned_data)


class QmeForm(forms.Form):
    dt = StrictFloatField()

    def clean_dt(self):
        return _positive(self, "dt")

    def to_config(self) -> QmeConfig:
        return QmeConfig(**self.cleaned_data)


class IOForm(forms.Form):
    output = StrictCharField()
    stride = StrictIntegerField(min_value=1)

    def to_config(self) -> IOConfig:
        return IOConfig(**self.cleaned_data)


class SweepForm(forms.Form):
    amplitudes = AmplitudeListField()

    def to_config(self) -> SweepConfig:
        return SweepConfig(amplitudes=self.cleaned_data["amplitudes"])


_ENSEMBLE_DEFAULTS = {
    key: value for key, value in asdict(EnsembleConfig()).items() if key != "output_stride"
}

SECTIONS = {
    "params": (ParamsForm, {**DEFAULT_PARAMS, "eps_D": None}),
    "ensemble": (EnsembleForm, _ENSEMBLE_DEFAULTS),
    "floquet": (FloquetForm, asdict(FloquetConfig())),
    "qme": (QmeForm, asdict(QmeConfig())),
    "io": (IOForm, asdict(IOConfig())),
    "sweep": (SweepForm, {}),
}


def _first_error(form: forms.Form, section: str) -> ConfigError:
    for name, errors in form.errors.as_data().items():
        path = section if name == NON_FIELD_ERRORS else f"{section}.{name}" if section else name
        return ConfigError(path, " ".join(message for error in errors for message in error.messages))
    return ConfigError(section, "Invalid section.")


def _bind(section: str, raw) -> forms.Form:
    form_class, defaults = SECTIONS[section]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(section, "Expected an object.")
    unknown = sorted(set(raw) - set(form_class.base_fields))
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}", "Unknown key.")
    form = form_class(data={**defaults, **raw})
    if not form.is_valid():
        raise _first_error(form, section)
    return form


def parse_config(text: str) -> RunConfig:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"Not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError("", "The run configuration must be a JSON object.")
    unknown = sorted(set(document) - set(SECTIONS) - {"method"})
    if unknown:
        raise ConfigError(unknown[0], "Unknown key.")

    method_form = MethodForm(data={"method": document.get("method", METHOD_FRSH)})
    if not method_form.is_valid():
        raise _first_error(method_form, "")

    forms_by_section = {
        section: _bind(section, document.get(section))
        for section in SECTIONS
        if section != "sweep"
    }
    io = forms_by_section["io"].to_config()
    try:
        params = forms_by_section["params"].to_config()
    except ValueError as exc:
        raise ConfigError("params", str(exc)) from exc
    return RunConfig(
        method=method_form.cleaned_data["method"],
        params=params,
        ensemble=forms_by_section["ensemble"].to_config(io.stride),
        floquet=forms_by_section["floquet"].to_config(),
        qme=forms_by_section["qme"].to_config(),
        io=io,
        sweep=_bind("sweep", document["sweep"]).to_config() if "sweep" in document else None,
    )


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("", f"Cannot read {path}: {exc}") from exc
    return parse_config(text)


def config_document(config: RunConfig) -> dict:
    """The fully resolved configuration as plain JSON data."""
    ensemble = asdict(config.ensemble)
    ensemble.pop("output_stride")
    document = {
        "method": config.method,
        "params": asdict(config.params),
        "ensemble": ensemble,
        "floquet": asdict(config.floquet),
        "qme": asdict(config.qme),
        "io": asdict(config.io),
    }
    if config.sweep is not None:
        document["sweep"] = {"amplitudes": list(config.sweep.amplitudes)}
    return document


def serialize_config(config: RunConfig) -> str:
    return json.dumps(config_document(config), indent=2, sort_keys=True)
