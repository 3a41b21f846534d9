"""Experiment configuration files.

Configs are INI-style: ``[experiment]``, ``[model]``, ``[prior.mu]``,
``[prior.nu]``, ``[criteria]`` and ``[output]`` sections of ``key = value``
lines. Matrices are written row by row, rows separated by ``;`` and
entries by spaces (``A = 0 1; 0 0``). Unknown sections or keys are errors.
"""
import configparser
import math
import re
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigError
from ..measures import DiscreteMeasure, GaussianMeasure, GaussianNoise
from ..models import (DiffusionModel, Example12Model, FiniteHMM, LinearGaussianModel,
                      ar1_chain, constant_diffusion, linear_drift)

KINDS = ("simulate", "filter", "stability", "counterexample", "predictor", "convolution",
         "future_law", "diagnose")

EXPERIMENT_KEYS = {
    "kind", "filter", "horizon", "dt", "particles", "steps", "seeds", "cadence", "workers",
    "n_max", "n_from", "ns", "t_max", "k", "bl_trials", "eps_fraction", "pairs", "mc_paths",
    "check_times", "probes", "noise_var",
}
MODEL_KEYS = {
    "linear_gaussian": {"A", "B", "C", "D"},
    "diffusion": {"drift", "drift_matrix", "drift_scale", "sigma", "C", "D", "h0", "h0_scale",
                  "lip_b", "trace_bound", "lip_cinv_h0"},
    "exp_growth": {"lam"},
    "ar1": {"a", "noise_std", "h", "xi_var"},
    "finite_hmm": {"transition", "emission"},
    "none": set(),
}
PRIOR_KEYS = {
    "gaussian": {"mean", "cov"},
    "discrete": {"atoms", "weights"},
    "dirac": {"point"},
    "probabilities": {"probs"},
}
CRITERIA_KEYS = {
    "mean_gap_ratio", "cov_gap", "bl_final", "bl_trend", "unobserved_ratio", "bl_ratio",
    "residual", "min_gap", "min_fraction", "tv_tol", "discrepancy", "zero_tol",
}
OUTPUT_KEYS = {"dir"}


def parse_matrix(text):
    rows = [r for r in text.replace(",", " ").split(";") if r.strip()]
    try:
        mat = np.array([[float(v) for v in r.split()] for r in rows], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"cannot parse matrix {text!r}: {exc}") from None
    if mat.ndim != 2 or mat.size == 0:
        raise ConfigError(f"ragged or empty matrix {text!r}")
    return mat


def parse_vector(text):
    try:
        return np.array([float(v) for v in text.replace(",", " ").replace(";", " ").split()])
    except ValueError as exc:
        raise ConfigError(f"cannot parse vector {text!r}: {exc}") from None


def parse_seeds(text):
    """``0 1 2`` or a range ``0-19``."""
    m = re.fullmatch(r"\s*(\d+)\s*-\s*(\d+)\s*", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        return list(range(lo, hi + 1))
    try:
        seeds = [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"cannot parse seeds {text!r}") from None
    if not seeds:
        raise ConfigError("seeds list is empty")
    return seeds


@dataclass
class ExperimentConfig:
    kind: str
    model: object = None
    model_type: str = "none"
    prior_mu: object = None
    prior_nu: object = None
    horizon: float = 1.0
    dt: float = 0.01
    particles: int = 1000
    steps: int = 25
    seeds: list = field(default_factory=lambda: [0])
    cadence: int = 1
    workers: int = 1
    filter: str = "kalman"
    bl_trials: int = 256
    params: dict = field(default_factory=dict)
    criteria: dict = field(default_factory=dict)
    output_dir: str = None
    source: str = None


def _line_of(text, section, key):
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return no, line
    return None, ""


def _error(text, source, section, key, message):
    no, line = _line_of(text, section, key)
    where = f"{source or '<config>'}"
    if no is not None:
        where += f":{no}: {line.strip()}"
    return ConfigError(f"{where}: {message}")


def _h_map(name):
    if name in ("identity", "id", "x"):
        return (lambda x: x), 1.0
    if name in ("2x+sin", "2x+sinx", "2x+sin(x)"):
        # derivative 2 + cos x lies in [1, 3]
        return (lambda x: 2.0 * x + np.sin(x)), 1.0
    raise ConfigError(f"unknown observation map {name!r} (identity | 2x+sin)")


def build_model(mtype, sec):
    get = sec.get
    if mtype == "linear_gaussian":
        return LinearGaussianModel(parse_matrix(get("A", "0")), parse_matrix(get("B", "0")),
                                   parse_matrix(get("C", "1")), parse_matrix(get("D", "1")))
    if mtype == "diffusion":
        C = parse_matrix(get("C", "1"))
        q = C.shape[0]
        kind = get("drift", "zero")
        scale = float(get("drift_scale", "1"))
        if kind == "zero":
            drift = lambda x: np.zeros_like(x)  # noqa: E731
        elif kind == "linear":
            drift = linear_drift(parse_matrix(get("drift_matrix", "0")))
        elif kind == "sine":
            drift = lambda x: scale * np.sin(x)  # noqa: E731
        elif kind == "clipped_linear":
            drift = lambda x: scale * np.clip(x, -10.0, 10.0)  # noqa: E731
        else:
            raise ConfigError(f"unknown drift {kind!r} (zero | linear | sine | clipped_linear)")
        h0_kind = get("h0", "zero")
        h0_scale = float(get("h0_scale", "1"))
        if h0_kind == "zero":
            h0 = None
        elif h0_kind == "sine":
            h0 = lambda x: h0_scale * np.sin(x)  # noqa: E731
        else:
            raise ConfigError(f"unknown h0 {h0_kind!r} (zero | sine)")
        sigma = parse_matrix(get("sigma", " ; ".join(" ".join("0" for _ in range(q)) for _ in range(q))))
        return DiffusionModel(drift=drift, diffusion=constant_diffusion(sigma), C=C,
                              D=parse_matrix(get("D", "1")), h0=h0,
                              lip_b=float(get("lip_b", "0")),
                              trace_bound=float(get("trace_bound", str(float(np.sum(sigma ** 2))))),
                              lip_cinv_h0=float(get("lip_cinv_h0", "0")))
    if mtype == "exp_growth":
        return Example12Model(float(get("lam", "1")))
    if mtype == "ar1":
        h, inv_lip = _h_map(get("h", "identity"))
        xi = GaussianNoise.standard(1, float(get("xi_var", "1")))
        return ar1_chain(float(get("a", "2")), float(get("noise_std", "1")), h=h, xi=xi,
                         h_inverse_lipschitz=inv_lip)
    if mtype == "finite_hmm":
        return FiniteHMM(parse_matrix(get("transition")), parse_matrix(get("emission")))
    if mtype == "none":
        return None
    raise ConfigError(f"unknown model type {mtype!r}")


def build_prior(sec):
    ptype = sec.get("type", "gaussian")
    if ptype == "gaussian":
        mean = parse_vector(sec.get("mean", "0"))
        cov = parse_matrix(sec.get("cov", "1"))
        return GaussianMeasure(mean, cov)
    if ptype == "discrete":
        atoms = _parse_number_tokens(sec.get("atoms", ""))
        weights = parse_vector(sec.get("weights", ""))
        if weights.size == 0 or atoms.size % weights.size:
            raise ConfigError("discrete prior needs one weight per atom")
        return DiscreteMeasure(atoms.reshape(weights.size, -1), weights / weights.sum())
    if ptype == "dirac":
        return DiscreteMeasure.dirac(parse_vector(sec.get("point")))
    if ptype == "probabilities":
        probs = parse_vector(sec.get("probs"))
        return probs / probs.sum()
    raise ConfigError(f"unknown prior type {ptype!r}")


def _parse_number_tokens(text):
    """Floats, allowing ``exp(pi)`` and ``pi`` for convenience."""
    out = []
    for tok in text.replace(",", " ").split():
        if tok == "pi":
            out.append(math.pi)
        elif tok in ("exp(pi)", "e^pi"):
            out.append(math.exp(math.pi))
        else:
            out.append(float(tok))
    return np.array(out)


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, source=str(path))


def parse_config(text, source=None):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    allowed_sections = {"experiment", "model", "prior.mu", "prior.nu", "criteria", "output"}
    for name in parser.sections():
        if name not in allowed_sections:
            raise _error(text, source, name, "", f"unknown section [{name}]")
    if not parser.has_section("experiment"):
        raise ConfigError(f"{source or '<config>'}: missing [experiment] section")

    def check_keys(section, allowed):
        if not parser.has_section(section):
            return
        for key in parser[section]:
            if key not in allowed:
                raise _error(text, source, section, key, f"unknown key {key!r} in [{section}]")

    exp = parser["experiment"]
    check_keys("experiment", EXPERIMENT_KEYS)
    kind = exp.get("kind")
    if kind not in KINDS:
        raise _error(text, source, "experiment", "kind", f"unknown kind {kind!r}")

    mtype = parser["model"].get("type", "none") if parser.has_section("model") else "none"
    if mtype not in MODEL_KEYS:
        raise _error(text, source, "model", "type", f"unknown model type {mtype!r}")
    check_keys("model", MODEL_KEYS[mtype] | {"type"})
    for name in ("prior.mu", "prior.nu"):
        if parser.has_section(name):
            ptype = parser[name].get("type", "gaussian")
            if ptype not in PRIOR_KEYS:
                raise _error(text, source, name, "type", f"unknown prior type {ptype!r}")
            check_keys(name, PRIOR_KEYS[ptype] | {"type"})
    check_keys("criteria", CRITERIA_KEYS)
    check_keys("output", OUTPUT_KEYS)

    def section_or_empty(name):
        return parser[name] if parser.has_section(name) else {}

    try:
        model = build_model(mtype, section_or_empty("model"))
        priors = {}
        for name in ("prior.mu", "prior.nu"):
            if parser.has_section(name):
                priors[name] = build_prior(dict(parser[name]))
        cfg = ExperimentConfig(kind=kind, model=model, model_type=mtype,
                               prior_mu=priors.get("prior.mu"), prior_nu=priors.get("prior.nu"),
                               source=source)
        floats = {"horizon", "dt", "eps_fraction", "noise_var"}
        ints = {"particles", "steps", "cadence", "workers", "bl_trials", "n_max", "n_from",
                "t_max", "k", "pairs", "mc_paths"}
        for key, value in exp.items():
            if key == "kind":
                continue
            if key == "seeds":
                cfg.seeds = parse_seeds(value)
            elif key == "filter":
                if value not in ("kalman", "particle"):
                    raise _error(text, source, "experiment", key, "filter must be kalman or particle")
                cfg.filter = value
            elif key in ("horizon", "dt"):
                setattr(cfg, key, float(value))
            elif key in ("particles", "steps", "cadence", "workers", "bl_trials"):
                setattr(cfg, key, int(value))
            elif key in ints:
                cfg.params[key] = int(value)
            elif key in floats:
                cfg.params[key] = float(value)
            elif key in ("ns", "check_times", "probes"):
                cfg.params[key] = parse_vector(value).tolist()
        cfg.criteria = {k: float(v) for k, v in section_or_empty("criteria").items()}
        if parser.has_section("output"):
            cfg.output_dir = parser["output"].get("dir")
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{source or '<config>'}: {exc}") from None
    if cfg.cadence < 1:
        raise ConfigError("cadence must be a positive number of grid steps")
    return cfg
