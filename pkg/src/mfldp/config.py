"""JSON run configuration: schema validation, semantic checks and derived constants."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from .functionals import functional_from_dict
from .ldp import EventSpec, OptConfig
from .meanfield import DEFAULT_DT, contraction_constant, trajectory_bound
from .model import Activation, ConditionError, DataAtomSet, InitialWeightAtomSet, SimConfig
from .sgd import c_bar, sgd_constant

log = logging.getLogger("mfldp")

EXPERIMENTS = ("simulate", "meanfield", "lln", "rate_I", "rate_J", "importance", "decay", "check")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending entry."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


def load_schema() -> dict:
    return json.loads(resources.files("mfldp").joinpath("config_schema.json").read_text())


@dataclass(frozen=True)
class MeanFieldConfig:
    dt: float = DEFAULT_DT
    tol: float = 1e-8
    max_iter: int = 50
    damping: float = 0.0


@dataclass(frozen=True)
class TiltConfig:
    blocks: int = 1
    tail: str = "pi"


@dataclass(frozen=True)
class LLNConfig:
    n_list: tuple = (64, 256, 1024)
    replicas: int = 32
    functional: str = "tanh_c_T"


@dataclass(frozen=True)
class MCConfig:
    replicas: int = 2000
    n_list: tuple = (32, 64, 128)
    method: str = "tilted"


@dataclass(frozen=True, eq=False)
class RunConfig:
    experiment: str
    seed: int
    output_dir: str
    act: Activation
    pi: DataAtomSet
    nu: InitialWeightAtomSet
    sim: SimConfig
    meanfield: MeanFieldConfig
    tilt: TiltConfig
    event: EventSpec | None
    optimizer: OptConfig
    lln: LLNConfig
    mc: MCConfig
    plots: bool
    document: dict
    warnings: tuple = field(default=())

    def canonical(self) -> str:
        return json.dumps(self.document, sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def constants(self) -> dict:
        T = self.sim.T
        return {
            "C_nu": self.nu.c_nu,
            "C_pi": self.pi.c_pi,
            "C_sigma": self.act.c_sigma,
            "L_sigma": self.act.l_sigma,
            "c_bar": c_bar(self.act.c_sigma, T),
            "C_SGD": sgd_constant(self.nu.c_nu, self.act.c_sigma, T),
            "C_traj": trajectory_bound(self.nu, self.pi, self.act, T),
            "C_contr": contraction_constant(self.nu, self.pi, self.act, T),
        }


def _json_path(err: jsonschema.ValidationError) -> str:
    return "/" + "/".join(str(p) for p in err.absolute_path)


def parse_config(text: str, experiment: str | None = None) -> RunConfig:
    """Validate a JSON document and build a :class:`RunConfig`.

    ``experiment`` overrides the document's own ``experiment`` entry.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("/", f"malformed JSON: {exc}") from None
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(_json_path(err), err.message)

    doc = copy.deepcopy(doc)
    notes = []
    if "seed" not in doc:
        doc["seed"] = 0
        notes.append("seed missing; using the default seed 0")
        log.warning(notes[-1])
    if experiment is not None:
        if experiment not in EXPERIMENTS:
            raise ConfigError("/experiment", f"unknown experiment {experiment!r}")
        doc["experiment"] = experiment
    if "experiment" not in doc:
        raise ConfigError("/experiment", "no experiment given")

    m = doc["model"]
    try:
        act = Activation.named(m["activation"])
    except ConditionError as exc:
        raise ConfigError("/model/activation", str(exc)) from None
    try:
        pi = DataAtomSet(m["data"]["z"], m["data"]["y"], m["data"]["probs"])
    except ValueError as exc:
        raise ConfigError("/model/data", str(exc)) from None
    try:
        nu = InitialWeightAtomSet(m["weights"]["atoms"], m["weights"]["probs"])
    except ValueError as exc:
        raise ConfigError("/model/weights", str(exc)) from None
    if len({len(r) for r in m["data"]["z"]}) != 1:
        raise ConfigError("/model/data/z", "all inputs must have the same dimension")
    if len({len(r) for r in m["weights"]["atoms"]}) != 1:
        raise ConfigError("/model/weights/atoms", "all weight atoms must have the same dimension")
    if nu.dim != pi.dim_in + 1:
        raise ConfigError("/model/weights/atoms", f"atoms need dimension {pi.dim_in + 1} = 1 + input dimension")

    sim = SimConfig(doc["sim"]["n"], float(doc["sim"]["T"]), pi.dim_in, doc["seed"])
    mf = MeanFieldConfig(**doc.get("meanfield", {}))
    tilt = TiltConfig(**doc.get("tilt", {}))
    event = None
    if "event" in doc:
        e = doc["event"]
        fspec = e["functional"]
        f = functional_from_dict(fspec) if isinstance(fspec, dict) else fspec
        try:
            event = EventSpec(f, float(e["threshold"]), e.get("direction", "geq"))
        except KeyError as exc:
            raise ConfigError("/event/functional", str(exc)) from None
    opt = OptConfig(T=sim.T, blocks=tilt.blocks, **doc.get("optimizer", {}))
    lln = doc.get("lln", {})
    lln_cfg = LLNConfig(tuple(lln.get("n_list", LLNConfig.n_list)), lln.get("replicas", LLNConfig.replicas),
                        lln.get("functional", LLNConfig.functional))
    mc = doc.get("mc", {})
    mc_cfg = MCConfig(mc.get("replicas", MCConfig.replicas), tuple(mc.get("n_list", MCConfig.n_list)),
                      mc.get("method", MCConfig.method))
    if any(b <= a for a, b in zip(lln_cfg.n_list, lln_cfg.n_list[1:])):
        raise ConfigError("/lln/n_list", "must be increasing")
    if any(b <= a for a, b in zip(mc_cfg.n_list, mc_cfg.n_list[1:])):
        raise ConfigError("/mc/n_list", "must be increasing")
    if doc["experiment"] in ("rate_I", "rate_J", "importance", "decay") and event is None:
        raise ConfigError("/event", f"experiment {doc['experiment']!r} needs an event")

    return RunConfig(
        experiment=doc["experiment"], seed=int(doc["seed"]), output_dir=doc.get("output_dir", "out"),
        act=act, pi=pi, nu=nu, sim=sim, meanfield=mf, tilt=tilt, event=event, optimizer=opt,
        lln=lln_cfg, mc=mc_cfg, plots=bool(doc.get("plots", False)), document=doc, warnings=tuple(notes),
    )

