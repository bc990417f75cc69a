"""Run configuration: human-readable key/value files with one section per
subsystem, validation with explicit defaulting reports, and a config echo
that round-trips through CSV header comments.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from . import analysis, apd, dpo, photoreceiver, tla

SCHEMES = ("apd-direct", "apd-adaptive", "pr-x", "pr-y", "dpo")

_RUN_DEFAULTS = {
    "scheme": "apd-direct",
    "seed": "1",
    "duration": "20.0",
    "dt": "",
    "sample_interval": "0.01",
    "samples": "1000",
    "transient": "10.0",
    "workers": "",
}
_SYSTEM_DEFAULTS = {"omega": "10.0", "gamma": "1.0"}
_APD_DEFAULTS = {"eta": "0.8", "gamma_r": "7.0", "tau_dd": "2.0",
                 "gamma_dk": "5e-06"}
_PR_DEFAULTS = {"gamma": "1.5", "noise": "0.1", "eta": "0.98"}
_DPO_DEFAULTS = {"chi": "0.5", "eta": "1.0", "noise": "0.0001"}
_SWEEP_DEFAULTS = {
    "omegas": "1, 2, 5, 10, 20",
    "gammas": "0.9, 1.5, 2.5, 4.5, 7.0, 10.0",
    "b_const": "20.0",
    "bandwidths": "0.1, 0.3, 1.0, 3.0, 10.0, 30.0",
    "chis": "0.0, 0.3, 0.5, 0.8",
}

_DEFAULTS = {"run": _RUN_DEFAULTS, "system": _SYSTEM_DEFAULTS,
             "apd": _APD_DEFAULTS, "pr": _PR_DEFAULTS, "dpo": _DPO_DEFAULTS,
             "sweep": _SWEEP_DEFAULTS}

_DETECTOR_SECTIONS = {"apd-direct": "apd", "apd-adaptive": "apd",
                      "pr-x": "pr", "pr-y": "pr", "dpo": "dpo"}


class ConfigError(ValueError):
    """Configuration file failed to parse or validate."""


@dataclass
class SweepSpec:
    omegas: list[float]
    gammas: list[float]
    b_const: float
    bandwidths: list[float]
    chis: list[float]


@dataclass
class RunConfig:
    """Fully resolved run description.

    ``provided`` records which (section, key) pairs came from the file, so
    validation reports can distinguish explicit choices from defaults.
    """

    scheme: str
    seed: int
    duration: float
    dt: float | None
    sample_interval: float
    samples: int
    transient: float
    workers: int | None
    system: tla.SystemParams
    detector: object
    sweep: SweepSpec
    provided: frozenset = field(default_factory=frozenset, compare=False)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_ini(cls, text_or_path) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            if "\n" in str(text_or_path) or "=" in str(text_or_path):
                parser.read_string(str(text_or_path))
            else:
                with open(text_or_path) as fh:
                    parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"parse: {exc}".replace("\n", " ")) from exc

        provided = set()
        for section in parser.sections():
            if section not in _DEFAULTS:
                raise ConfigError(f"unknown-section: [{section}]")
            for key in parser[section]:
                if key not in _DEFAULTS[section]:
                    raise ConfigError(f"unknown-key: [{section}] {key}")
                provided.add((section, key))

        def get(section, key):
            fallback = _DEFAULTS[section][key]
            if parser.has_section(section):
                return parser[section].get(key, fallback)
            return fallback

        scheme = get("run", "scheme").strip()
        if scheme not in SCHEMES:
            raise ConfigError(f"range: run.scheme must be one of {SCHEMES}, "
                              f"got {scheme!r}")
        detector_sections = [s for s in ("apd", "pr", "dpo")
                             if parser.has_section(s)]
        if len(detector_sections) > 1:
            raise ConfigError("detector-block: exactly one of [apd], [pr], "
                              f"[dpo] may appear, found {detector_sections}")
        expected = _DETECTOR_SECTIONS[scheme]
        if detector_sections and detector_sections[0] != expected:
            raise ConfigError(f"detector-block: scheme {scheme} uses "
                              f"[{expected}], found [{detector_sections[0]}]")

        def parse_float(section, key, optional=False):
            raw = get(section, key).strip()
            if raw == "":
                if optional:
                    return None
                raise ConfigError(f"range: {section}.{key} must be set")
            try:
                return float(raw)
            except ValueError:
                raise ConfigError(
                    f"parse: {section}.{key} = {raw!r} is not a number"
                ) from None

        def parse_int(section, key, optional=False):
            raw = get(section, key).strip()
            if raw == "":
                if optional:
                    return None
                raise ConfigError(f"range: {section}.{key} must be set")
            try:
                return int(raw)
            except ValueError:
                raise ConfigError(
                    f"parse: {section}.{key} = {raw!r} is not an integer"
                ) from None

        def parse_list(section, key):
            raw = get(section, key)
            try:
                return [float(tok) for tok in raw.replace(",", " ").split()]
            except ValueError:
                raise ConfigError(
                    f"parse: {section}.{key} = {raw!r} is not a number list"
                ) from None

        try:
            system = tla.SystemParams(omega=parse_float("system", "omega"),
                                      gamma=parse_float("system", "gamma"))
            if expected == "apd":
                detector = apd.ApdParams(
                    eta=parse_float("apd", "eta"),
                    gamma_r=parse_float("apd", "gamma_r"),
                    tau_dd=parse_float("apd", "tau_dd"),
                    gamma_dk=parse_float("apd", "gamma_dk"))
            elif expected == "pr":
                noise = parse_float("pr", "noise")
                if noise >= 1.0:
                    raise ConfigError(
                        "range: pr.noise must be below 1 (the effective "
                        "bandwidth description assumes small noise ratios)")
                detector = photoreceiver.PrParams(
                    gamma=parse_float("pr", "gamma"), noise=noise,
                    eta=parse_float("pr", "eta"),
                    phi=(photoreceiver.PHI_Y if scheme == "pr-y"
                         else photoreceiver.PHI_X))
            else:
                detector = dpo.DpoParams(
                    chi=parse_float("dpo", "chi"),
                    gamma=1.0,  # set per bandwidth downstream
                    noise=parse_float("dpo", "noise"),
                    eta=parse_float("dpo", "eta"))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"range: {exc}") from exc

        sweep = SweepSpec(
            omegas=parse_list("sweep", "omegas"),
            gammas=parse_list("sweep", "gammas"),
            b_const=parse_float("sweep", "b_const"),
            bandwidths=parse_list("sweep", "bandwidths"),
            chis=parse_list("sweep", "chis"),
        )

        cfg = cls(
            scheme=scheme,
            seed=parse_int("run", "seed"),
            duration=parse_float("run", "duration"),
            dt=parse_float("run", "dt", optional=True),
            sample_interval=parse_float("run", "sample_interval"),
            samples=parse_int("run", "samples"),
            transient=parse_float("run", "transient"),
            workers=parse_int("run", "workers", optional=True),
            system=system,
            detector=detector,
            sweep=sweep,
            provided=frozenset(provided),
        )
        cfg._check_ranges()
        return cfg

    def _check_ranges(self):
        if self.duration <= 0:
            raise ConfigError("range: run.duration must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("range: run.dt must be positive")
        if self.sample_interval <= 0:
            raise ConfigError("range: run.sample_interval must be positive")
        if self.samples < 1:
            raise ConfigError("range: run.samples must be at least 1")
        if self.transient < 0:
            raise ConfigError("range: run.transient must be non-negative")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("range: run.workers must be at least 1")

    # -- echo and round-trip ----------------------------------------------

    def _resolved(self) -> dict[str, dict[str, str]]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        out = {
            "run": {
                "scheme": self.scheme,
                "seed": str(self.seed),
                "duration": fmt(self.duration),
                "dt": fmt(self.dt),
                "sample_interval": fmt(self.sample_interval),
                "samples": str(self.samples),
                "transient": fmt(self.transient),
                "workers": "" if self.workers is None else str(self.workers),
            },
            "system": {"omega": fmt(self.system.omega),
                       "gamma": fmt(self.system.gamma)},
            "sweep": {
                "omegas": ", ".join(fmt(v) for v in self.sweep.omegas),
                "gammas": ", ".join(fmt(v) for v in self.sweep.gammas),
                "b_const": fmt(self.sweep.b_const),
                "bandwidths": ", ".join(fmt(v) for v in self.sweep.bandwidths),
                "chis": ", ".join(fmt(v) for v in self.sweep.chis),
            },
        }
        det = _DETECTOR_SECTIONS[self.scheme]
        if det == "apd":
            out["apd"] = {k: fmt(getattr(self.detector, k))
                          for k in ("eta", "gamma_r", "tau_dd", "gamma_dk")}
        elif det == "pr":
            out["pr"] = {"gamma": fmt(self.detector.gamma),
                         "noise": fmt(self.detector.noise),
                         "eta": fmt(self.detector.eta)}
        else:
            out["dpo"] = {"chi": fmt(self.detector.chi),
                          "eta": fmt(self.detector.eta),
                          "noise": fmt(self.detector.noise)}
        return out

    def echo_lines(self) -> list[str]:
        """Full config echo for CSV headers; parsing these reproduces the
        configuration exactly."""
        lines = []
        for section, kv in self._resolved().items():
            for key, value in kv.items():
                lines.append(f"config {section}.{key} = {value}")
        return lines

    @classmethod
    def from_echo_lines(cls, lines) -> "RunConfig":
        parser_text = {}
        for line in lines:
            line = line.lstrip("# ").strip()
            if not line.startswith("config "):
                continue
            body = line[len("config "):]
            dotted, _, value = body.partition("=")
            section, _, key = dotted.strip().partition(".")
            parser_text.setdefault(section, {})[key.strip()] = value.strip()
        buf = io.StringIO()
        for section, kv in parser_text.items():
            buf.write(f"[{section}]\n")
            for key, value in kv.items():
                buf.write(f"{key} = {value}\n")
        return cls.from_ini(buf.getvalue())

    # -- reporting ----------------------------------------------------------

    def validation_report(self) -> list[str]:
        """One line per resolved field, marking which came from the file
        and which fell back to the built-in reference defaults."""
        lines = []
        for section, kv in self._resolved().items():
            for key, value in kv.items():
                src = ("config" if (section, key) in self.provided
                       else "default")
                lines.append(f"{section}.{key} = {value}  [{src}]")
        return lines

    def resolved_dt(self) -> float:
        if self.dt is not None:
            return self.dt
        if self.scheme.startswith("pr"):
            return photoreceiver.DEFAULT_DT
        return apd.DEFAULT_DT

    def resolved_workers(self) -> int:
        return analysis.worker_count(self.workers)
