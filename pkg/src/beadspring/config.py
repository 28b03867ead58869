"""Run configuration: an INI document with fixed sections and keys.

Every key has a default; parsing fills them in and ``RunConfig.to_text``
echoes the complete, explicit configuration so a run can be reproduced
from its manifest alone.
"""

from __future__ import annotations

import configparser
import math
import os
import re
from dataclasses import dataclass, field
from typing import Any, Optional

from .diagnostics import choose_lyapunov_params
from .dynamics import SimParams
from .potentials import PotentialCertificate, PotentialSpec, parse_potential, verify_assumptions
from .spectral_fluid import FluidParams, ModeSet, build_mode_set

__all__ = ["ConfigError", "RunConfig", "parse_config", "DIAGNOSTICS", "OUTPUT_DIR_ENV"]

OUTPUT_DIR_ENV = "BEADSPRING_OUTPUT_DIR"
DIAGNOSTICS = ("hookean", "escape", "drift", "hormander", "converge", "tube")
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` and ``key`` locate the problem when known."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(key)
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _vec2(text: str) -> tuple:
    v = _floats(text)
    if len(v) != 2:
        raise ValueError(f"expected two numbers, got {text!r}")
    return v


def _auto_float(text: str):
    return "auto" if text.strip() == "auto" else float(text)


def _names(allowed):
    def parse(text: str) -> tuple:
        items = tuple(text.replace(",", " ").split())
        bad = [x for x in items if x not in allowed]
        if bad:
            raise ValueError(f"unknown entries {bad}; choose from {list(allowed)}")
        return items

    return parse


# (section, key) -> (parser, default text)
SCHEMA: dict[str, dict[str, tuple[Any, str]]] = {
    "run": {
        "seed": (int, "0"),
        "output_dir": (str, ""),
        "formats": (_names(FORMATS), "csv"),
        "horizon": (float, "10.0"),
        "n": (int, "100"),
        "stride": (int, "10"),
        "r0": (_vec2, "1.0 0.0"),
        "initial_fluid": (_names(("stationary", "zero")), "stationary"),
    },
    "fluid": {
        "lam": (float, "0.5"),
        "nu": (float, "4.0"),
        "beta": (float, "0.25"),
    },
    "modes": {
        "list": (str, "1 0 1.0\n0 1 1.0\n1 1 1.0"),
        "k_max": (int, "0"),
        "sigma_power": (float, "0.0"),
    },
    "potential": {
        "spec": (str, "power_law q=1 alpha=12"),
    },
    "sim": {
        "dt": (float, "0.01"),
        "kappa": (float, "0.0"),
        "r_min_guard": (float, "1e-08"),
        "substep_cfl": (float, "0.25"),
        "max_halvings": (int, "20"),
        "track_center_of_mass": (_bool, "false"),
    },
    "lyapunov": {
        "delta": (float, "0.1"),
        "R_probe": (float, "50.0"),
        "r_floor": (float, "0.0001"),
    },
    "control": {
        "r0": (_vec2, "1.5 0.0"),
        "r_star": (_vec2, "0.0 1.5"),
        "eps1": (_auto_float, "auto"),
        "tube_eps": (float, "1e-06"),
        "samples_per_unit": (int, "256"),
    },
    "diagnose": {
        "hookean_gamma_factor": (float, "10.0"),
        "hookean_n": (int, "100"),
        "escape_eps": (_auto_float, "auto"),
        "escape_n": (int, "1000"),
        "escape_horizon": (float, "10.0"),
        "drift_t": (float, "1.0"),
        "drift_n": (int, "500"),
        "drift_initials": (int, "10"),
        "hormander_samples": (int, "10000"),
        "converge_times": (_floats, "5 10 20 50"),
        "converge_n": (int, "2000"),
        "tube_eps_factor": (float, "2.0"),
        "tube_n": (int, "10000"),
        "tube_length": (float, "1.0"),
    },
}


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` to the line where the key appears."""
    out, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"^([A-Za-z_][\w]*)\s*[=:]", line)
        if m and section is not None:
            out.setdefault((section, m.group(1)), i)
    return out


@dataclass
class RunConfig:
    """Validated configuration with every value explicit."""

    values: dict
    fluid: FluidParams
    modes: ModeSet
    potential: PotentialSpec
    certificate: PotentialCertificate
    sim: SimParams
    seed: int
    output_dir: str
    extras: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        section, name = key.split(".", 1)
        return self.values[section][name]

    def with_overrides(self, **kw) -> "RunConfig":
        """Re-parse with ``section.key=value`` overrides (dots as ``__``)."""
        vals = {s: dict(v) for s, v in self.values.items()}
        for k, v in kw.items():
            s, name = k.split("__", 1)
            vals[s][name] = v
        return parse_config(_render(vals))

    def to_text(self, include_output_dir: bool = True) -> str:
        """Explicit INI echo; without ``include_output_dir`` the text does not
        depend on where the run writes."""
        return _render(self.values, skip=() if include_output_dir else (("run", "output_dir"),))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(_fmt(v) for v in value)
    return str(value)


def _render(values: dict, skip=()) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            if (section, key) in skip:
                continue
            v = values[section][key]
            text = _fmt(v)
            if "\n" in text:
                text = "\n" + "\n".join("    " + ln for ln in text.splitlines())
                lines.append(f"{key} ={text}")
            else:
                lines.append(f"{key} = {text}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str, env: Optional[dict] = None) -> RunConfig:
    """Parse and cross-validate a configuration document.

    Raises
    ------
    ConfigError
        Unknown section or key, duplicate key, malformed value or a
        violated constraint; the message carries the line and key.
    """
    env = os.environ if env is None else env
    cp = configparser.ConfigParser(strict=True, interpolation=None, default_section="__defaults__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", f"{exc.section}.{exc.option}", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section {exc.section!r}", exc.section, exc.lineno) from None
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    lines = _key_lines(text)
    values: dict = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]; expected one of {list(SCHEMA)}", section)
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key; allowed: {sorted(SCHEMA[section])}", f"{section}.{key}", lines.get((section, key)))
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (conv, default) in keys.items():
            given = cp.has_option(section, key)
            raw = cp.get(section, key) if given else default
            try:
                values[section][key] = conv(raw.strip() if conv is not str else raw.strip())
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value {raw!r}: {exc}", f"{section}.{key}", lines.get((section, key))) from None

    def fail(msg, section, key):
        raise ConfigError(msg, f"{section}.{key}", lines.get((section, key)))

    run = values["run"]
    if not run["output_dir"]:
        run["output_dir"] = env.get(OUTPUT_DIR_ENV, "") or "."
    for key in ("n", "stride"):
        if run[key] < 1:
            fail("must be >= 1", "run", key)
    if run["horizon"] < 0:
        fail("must be >= 0", "run", "horizon")
    if len(run["initial_fluid"]) != 1:
        fail("give exactly one of 'stationary', 'zero'", "run", "initial_fluid")
    run["initial_fluid"] = run["initial_fluid"][0]

    try:
        fluid = FluidParams(**values["fluid"])
    except ValueError as exc:
        raise ConfigError(str(exc), "fluid") from None

    mv = values["modes"]
    try:
        if mv["k_max"] > 0:
            if cp.has_option("modes", "list"):
                fail("give either 'list' or 'k_max', not both", "modes", "k_max")
            p = mv["sigma_power"]
            modes = build_mode_set(mv["k_max"], lambda kn: kn ** (-p))
            mv["list"] = modes.to_text().rstrip("\n")
            mv["k_max"] = 0
        else:
            modes = ModeSet.from_text(mv["list"])
            mv["list"] = modes.to_text().rstrip("\n")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        fail(str(exc), "modes", "list")

    try:
        pot = parse_potential(values["potential"]["spec"])
    except ValueError as exc:
        fail(str(exc), "potential", "spec")
    values["potential"]["spec"] = pot.to_text()

    ly = values["lyapunov"]
    cert = verify_assumptions(pot, R_probe=ly["R_probe"], r_floor=ly["r_floor"])
    if cert.passed_large_r:
        try:
            choose_lyapunov_params(cert.gamma, fluid, modes, cert.R0, ly["delta"])
        except ValueError as exc:
            fail(str(exc), "lyapunov", "delta")

    s = values["sim"]
    try:
        sim = SimParams(
            fluid,
            pot,
            dt=s["dt"],
            kappa=s["kappa"],
            r_min_guard=s["r_min_guard"],
            substep_cfl=s["substep_cfl"],
            max_halvings=s["max_halvings"],
            track_center_of_mass=s["track_center_of_mass"],
            stride=run["stride"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "sim") from None
    if sim.track_center_of_mass:
        fail("center-of-mass tracking is available through the library API only", "sim", "track_center_of_mass")

    d = values["diagnose"]
    for key in ("escape_eps",):
        v = d[key]
        if v != "auto" and cert.passed_small_r and not 0 < v <= cert.eps0:
            fail(f"must lie in (0, eps0={cert.eps0!r}]", "diagnose", key)
    c = values["control"]
    if c["eps1"] != "auto" and not c["eps1"] > 0:
        fail("must be > 0", "control", "eps1")
    if c["tube_eps"] < 0:
        fail("must be >= 0", "control", "tube_eps")
    if not d["converge_times"] or any(t < 0 for t in d["converge_times"]):
        fail("need nonnegative times", "diagnose", "converge_times")
    if not math.isfinite(d["tube_eps_factor"]) or d["tube_eps_factor"] <= 0:
        fail("must be > 0", "diagnose", "tube_eps_factor")

    return RunConfig(values, fluid, modes, pot, cert, sim, int(run["seed"]), run["output_dir"])
