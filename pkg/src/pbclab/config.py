"""Scenario configuration documents: schema, overrides, variants.

A configuration is a plain YAML mapping with sections

* ``model``       - circuit parameters (SI units: H, F, Ohm, V)
* ``controller``  - controller type, gains, target voltage, feedback source
* ``observers``   - list of observer blocks (name, kind, gains)
* ``scenario``    - initial state, horizon, step, sampling, events
* ``output``      - artifact switches (csv/svg/metrics), checkpoints, band
* ``variants``    - optional list of labeled override sets, each producing
  one run in the same figure (curves are overlaid per variant)
* ``description`` - optional one-line string shown by ``presets list``

Unknown keys are rejected everywhere; every value is type-checked.  A
document round-trips through :func:`canonical_dump` unchanged, and
``--set dotted.path=value`` overrides address any entry, including list
elements (``observers.0.gamma=1e11``).
"""

from __future__ import annotations

import copy

import yaml

from .cuk import CukParams
from .sim import ControllerSpec, EventSpec, ObserverSpec, Scenario

__all__ = [
    "ConfigError",
    "default_config",
    "load_config",
    "loads_config",
    "validate_config",
    "canonical_dump",
    "apply_overrides",
    "expand_variants",
    "scenario_from_config",
    "output_options",
]


class ConfigError(ValueError):
    """Malformed configuration document or override."""


_MODEL_KEYS = {"L1", "C1", "L2", "C2", "r1", "r2", "r", "E"}
_CONTROLLER_KEYS = {
    "type", "kp", "ki", "x4_star", "u_min", "u_max", "feedback", "root_policy", "xc0",
}
_OBSERVER_KEYS = {"name", "kind", "lambda", "gamma", "mu", "mode", "s", "h0"}
_SCENARIO_KEYS = {"x0", "horizon", "h", "stride", "label", "events"}
_EVENT_KEYS = {"time", "kind", "value"}
_OUTPUT_KEYS = {"dir", "csv", "svg", "metrics", "checkpoints", "band_frac"}
_VARIANT_KEYS = {"label", "set"}
_TOP_KEYS = {"model", "controller", "observers", "scenario", "output", "variants", "description"}


def default_config() -> dict:
    """A complete document with the table defaults (fresh copy)."""
    p = CukParams()
    c = ControllerSpec()
    s = Scenario()
    return {
        "model": {
            "E": p.E, "r1": p.r1, "r2": p.r2, "r": p.r,
            "L1": p.L1, "L2": p.L2, "C1": p.C1, "C2": p.C2,
        },
        "controller": {
            "type": c.type, "kp": c.kp, "ki": c.ki, "x4_star": c.x4_star,
            "u_min": c.u_min, "u_max": c.u_max, "feedback": c.feedback,
            "root_policy": c.root_policy, "xc0": c.xc0,
        },
        "observers": [],
        "scenario": {
            "x0": list(s.x0), "horizon": s.horizon, "h": s.h,
            "stride": s.stride, "label": s.label, "events": [],
        },
        "output": {
            "dir": None, "csv": True, "svg": True, "metrics": True,
            "checkpoints": [0.01, 0.03, 0.05], "band_frac": 0.01,
        },
    }


def _require_mapping(node, where):
    if not isinstance(node, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(node).__name__}")


def _reject_unknown(node: dict, allowed, where):
    unknown = sorted(set(node) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}")


def _as_float(node, key, where):
    v = node[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {v!r}")
    return float(v)


def _merge_section(base: dict, user: dict, allowed, where):
    _require_mapping(user, where)
    _reject_unknown(user, allowed, where)
    merged = dict(base)
    merged.update(user)
    return merged


def loads_config(text: str) -> dict:
    """Parse and validate a YAML document string (defaults filled in)."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML parse error: {exc}") from exc
    if raw is None:
        raw = {}
    _require_mapping(raw, "the document")
    _reject_unknown(raw, _TOP_KEYS, "the document")
    cfg = default_config()
    if "model" in raw:
        cfg["model"] = _merge_section(cfg["model"], raw["model"], _MODEL_KEYS, "model")
    if "controller" in raw:
        cfg["controller"] = _merge_section(
            cfg["controller"], raw["controller"], _CONTROLLER_KEYS, "controller"
        )
    if "observers" in raw:
        cfg["observers"] = raw["observers"]
    if "scenario" in raw:
        cfg["scenario"] = _merge_section(
            cfg["scenario"], raw["scenario"], _SCENARIO_KEYS, "scenario"
        )
    if "output" in raw:
        cfg["output"] = _merge_section(cfg["output"], raw["output"], _OUTPUT_KEYS, "output")
    if "variants" in raw:
        cfg["variants"] = raw["variants"]
    if "description" in raw:
        cfg["description"] = raw["description"]
    return validate_config(cfg)


def load_config(path) -> dict:
    with open(path) as fh:
        return loads_config(fh.read())


def validate_config(cfg: dict) -> dict:
    """Type- and key-check a full document; returns it normalized."""
    _require_mapping(cfg, "the document")
    _reject_unknown(cfg, _TOP_KEYS, "the document")
    for section in ("model", "controller", "scenario", "output"):
        if section not in cfg:
            raise ConfigError(f"missing section {section!r}")
    model = cfg["model"]
    _require_mapping(model, "model")
    _reject_unknown(model, _MODEL_KEYS, "model")
    for key in _MODEL_KEYS:
        if key not in model:
            raise ConfigError(f"model.{key} is required")
        model[key] = _as_float(model, key, "model")

    ctl = cfg["controller"]
    _require_mapping(ctl, "controller")
    _reject_unknown(ctl, _CONTROLLER_KEYS, "controller")
    if ctl.get("type") not in ("pi-pbc", "classical-pi"):
        raise ConfigError(f"controller.type must be pi-pbc or classical-pi, got {ctl.get('type')!r}")
    if ctl.get("feedback") not in ("state", "observer"):
        raise ConfigError(f"controller.feedback must be state or observer, got {ctl.get('feedback')!r}")
    if ctl.get("root_policy") not in ("smallest", "largest"):
        raise ConfigError(f"controller.root_policy must be smallest or largest")
    for key in ("kp", "ki", "x4_star", "u_min", "u_max", "xc0"):
        ctl[key] = _as_float(ctl, key, "controller")

    observers = cfg.get("observers", [])
    if not isinstance(observers, list):
        raise ConfigError("observers must be a list")
    for i, obs in enumerate(observers):
        where = f"observers.{i}"
        _require_mapping(obs, where)
        _reject_unknown(obs, _OBSERVER_KEYS, where)
        kind = obs.setdefault("kind", "fct-gpebo")
        if kind not in ("fct-gpebo", "gpebo", "emulator", "kbf", "gradient"):
            raise ConfigError(f"{where}.kind unknown: {kind!r}")
        obs.setdefault("name", "")
        for key, dv in (("lambda", 5.0), ("gamma", 1e12), ("mu", 1e-6)):
            obs.setdefault(key, dv)
            obs[key] = _as_float(obs, key, where)
        obs.setdefault("mode", "raw")
        if obs["mode"] not in ("raw", "extended"):
            raise ConfigError(f"{where}.mode must be raw or extended")
        for key in ("s", "h0"):
            obs.setdefault(key, 1.0)
            if not isinstance(obs[key], (int, float)) or isinstance(obs[key], bool):
                raise ConfigError(f"{where}.{key} must be a number")
            obs[key] = float(obs[key])
    cfg["observers"] = observers

    scn = cfg["scenario"]
    _require_mapping(scn, "scenario")
    _reject_unknown(scn, _SCENARIO_KEYS, "scenario")
    x0 = scn.get("x0")
    if not isinstance(x0, (list, tuple)) or len(x0) != 4:
        raise ConfigError("scenario.x0 must be a list of four numbers (i1, v2, i3, v4)")
    scn["x0"] = [float(v) for v in x0]
    for key in ("horizon", "h"):
        scn[key] = _as_float(scn, key, "scenario")
    if not isinstance(scn.get("stride"), int) or isinstance(scn.get("stride"), bool):
        raise ConfigError("scenario.stride must be an integer")
    if not isinstance(scn.get("label"), str):
        raise ConfigError("scenario.label must be a string")
    events = scn.get("events", [])
    if not isinstance(events, list):
        raise ConfigError("scenario.events must be a list")
    for i, ev in enumerate(events):
        where = f"scenario.events.{i}"
        _require_mapping(ev, where)
        _reject_unknown(ev, _EVENT_KEYS, where)
        for key in _EVENT_KEYS:
            if key == "kind":
                if ev.get("kind") not in ("reference", "load"):
                    raise ConfigError(f"{where}.kind must be reference or load")
            else:
                ev[key] = _as_float(ev, key, where)

    out = cfg["output"]
    _require_mapping(out, "output")
    _reject_unknown(out, _OUTPUT_KEYS, "output")
    if out.get("dir") is not None and not isinstance(out["dir"], str):
        raise ConfigError("output.dir must be a string")
    for key in ("csv", "svg", "metrics"):
        if not isinstance(out.get(key), bool):
            raise ConfigError(f"output.{key} must be a boolean")
    cps = out.get("checkpoints", [])
    if not isinstance(cps, list):
        raise ConfigError("output.checkpoints must be a list of times")
    out["checkpoints"] = [float(v) for v in cps]
    out["band_frac"] = _as_float(out, "band_frac", "output")

    variants = cfg.get("variants")
    if variants is not None:
        if not isinstance(variants, list) or not variants:
            raise ConfigError("variants must be a non-empty list")
        labels = set()
        for i, var in enumerate(variants):
            where = f"variants.{i}"
            _require_mapping(var, where)
            _reject_unknown(var, _VARIANT_KEYS, where)
            label = var.get("label")
            if not isinstance(label, str) or not label:
                raise ConfigError(f"{where}.label must be a non-empty string")
            if label in labels:
                raise ConfigError(f"duplicate variant label {label!r}")
            labels.add(label)
            _require_mapping(var.get("set", {}), f"{where}.set")
    if "description" in cfg and not isinstance(cfg["description"], str):
        raise ConfigError("description must be a string")
    return cfg


def canonical_dump(cfg: dict) -> str:
    """Stable serialization; loads back to an identical document."""
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)


# -- overrides -----------------------------------------------------------------


def _parse_value(text: str):
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {text!r}: {exc}") from exc
    if isinstance(value, str):
        # YAML 1.1 reads "1e12" as a string; accept it as a float anyway.
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _walk(cfg, parts, full):
    """Return (container, final key/index) for a dotted path."""
    node = cfg
    for j, part in enumerate(parts[:-1]):
        node = _step(node, part, full)
        if node is None:
            raise ConfigError(f"path {full!r} hits a null node at {part!r}")
    return node, parts[-1]


def _step(node, part, full):
    if isinstance(node, list):
        try:
            idx = int(part)
        except ValueError:
            raise ConfigError(f"list index expected at {part!r} in {full!r}") from None
        if not 0 <= idx < len(node):
            raise ConfigError(f"index {idx} out of range in {full!r}")
        return node[idx]
    if isinstance(node, dict):
        if part not in node:
            raise ConfigError(f"unknown path segment {part!r} in {full!r}")
        return node[part]
    raise ConfigError(f"cannot descend into scalar at {part!r} in {full!r}")


def get_path(cfg, path: str):
    """Read the value at a dotted path."""
    parts = path.split(".")
    node, last = _walk(cfg, parts, path)
    return _step(node, last, path)


def set_path(cfg, path: str, value):
    """Assign at a dotted path.  New observer/event list entries are allowed
    one past the end; everything else must already exist."""
    parts = path.split(".")
    node, last = _walk(cfg, parts, path)
    if isinstance(node, list):
        try:
            idx = int(last)
        except ValueError:
            raise ConfigError(f"list index expected at {last!r} in {path!r}") from None
        if idx == len(node):
            node.append(value)
        elif 0 <= idx < len(node):
            node[idx] = value
        else:
            raise ConfigError(f"index {idx} out of range in {path!r}")
    elif isinstance(node, dict):
        # unknown keys survive until re-validation, which rejects them
        node[last] = value
    else:
        raise ConfigError(f"cannot assign into scalar at {last!r} in {path!r}")


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply ``path=value`` strings and re-validate."""
    for text in assignments:
        if "=" not in text:
            raise ConfigError(f"override {text!r} is not of the form path=value")
        path, _, value = text.partition("=")
        path = path.strip()
        if not path:
            raise ConfigError(f"override {text!r} has an empty path")
        set_path(cfg, path, _parse_value(value.strip()))
    return validate_config(cfg)


def expand_variants(cfg: dict):
    """List of (label, concrete config) pairs, one per run of the figure."""
    variants = cfg.get("variants")
    if not variants:
        return [(cfg["scenario"]["label"], cfg)]
    out = []
    for var in variants:
        sub = copy.deepcopy(cfg)
        sub.pop("variants", None)
        for path, value in var.get("set", {}).items():
            set_path(sub, path, copy.deepcopy(value))
        sub["scenario"]["label"] = var["label"]
        out.append((var["label"], validate_config(sub)))
    return out


# -- bridge to the simulation types ----------------------------------------------


def scenario_from_config(cfg: dict) -> Scenario:
    model = cfg["model"]
    params = CukParams(
        E=model["E"], r1=model["r1"], r2=model["r2"], r=model["r"],
        L1=model["L1"], L2=model["L2"], C1=model["C1"], C2=model["C2"],
    )
    c = cfg["controller"]
    controller = ControllerSpec(
        type=c["type"], kp=c["kp"], ki=c["ki"], x4_star=c["x4_star"],
        u_min=c["u_min"], u_max=c["u_max"], feedback=c["feedback"],
        root_policy=c["root_policy"], xc0=c["xc0"],
    )
    observers = [
        ObserverSpec(
            name=o["name"], kind=o["kind"], lam=o["lambda"], gamma=o["gamma"],
            mu=o["mu"], mode=o["mode"], s=o["s"], h0=o["h0"],
        )
        for o in cfg["observers"]
    ]
    s = cfg["scenario"]
    events = [EventSpec(time=e["time"], kind=e["kind"], value=e["value"]) for e in s["events"]]
    return Scenario(
        params=params, controller=controller, observers=observers,
        x0=tuple(s["x0"]), horizon=s["horizon"], h=s["h"], stride=s["stride"],
        events=events, label=s["label"],
    )


def output_options(cfg: dict) -> dict:
    return dict(cfg["output"])
