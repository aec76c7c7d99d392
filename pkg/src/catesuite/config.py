"""Run configuration: one TOML file fully determines a CLI run.

Sections (all optional unless a subcommand needs them):

    [input]    path, outcome, treatment, cluster, categorical, features, unit_id
    [output]   dir
    [run]      seed, threads (0 = all cores), B, level, clip = [lo, hi]
    [suite]    estimators = ["T_gbt_nocluster", ...], n_folds
    [suite.base.<family>]   hyperparameter overrides for a base family
    [suite.cf] causal-forest hyperparameters
    [stability] mode, threshold, spread_threshold
    [fit]      estimator
    [ate]      estimators, outcome, propensity, crossfit, match_features,
               sensitivity, alpha  (+ [ate.outcome_params], [ate.propensity_params])
    [pdp]      features, points, bins, estimators
    [subgroup] estimator  (+ [[subgroup.hypothesis]] with label, conditions)
    [simulate] dgp, n, d, noise_sd, n_clusters, cluster_sd, seed  (+ [simulate.params])

The sha256 of the raw config bytes is embedded in every output file, so a
result can always be traced back to the exact configuration that made it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib

from .analysis import SubgroupDef
from .causal_forest import CausalForestSpec
from .data import ColumnSchema, Dataset, load_csv
from .dgp import DgpSpec
from .errors import ConfigError
from .learners import LearnerSpec
from .nuisance import DEFAULT_CLIP
from .stability import EstimatorDef, SuiteSpec

SECTIONS = ("input", "output", "run", "suite", "stability", "fit", "ate", "pdp", "subgroup", "simulate")

LEARNER_FAMILIES = ("tree", "forest", "gbt", "knn", "ridge")


def parse_estimator_name(name: str) -> EstimatorDef:
    """Canonical "<kind>_<base>_<cluster|nocluster>" -> EstimatorDef."""
    parts = name.split("_")
    if len(parts) != 3 or parts[2] not in ("cluster", "nocluster"):
        raise ConfigError(
            f"estimator name {name!r} is not of the form <kind>_<base>_<cluster|nocluster>"
        )
    return EstimatorDef(parts[0], parts[1], parts[2] == "cluster")


def _learner_spec(family: str, params: Mapping) -> LearnerSpec:
    if family not in LEARNER_FAMILIES:
        raise ConfigError(f"unknown learner family {family!r}; choose one of {LEARNER_FAMILIES}")
    return LearnerSpec(family, tuple(sorted(params.items())))


@dataclass(frozen=True)
class RunConfig:
    data: Mapping
    sha256: str
    path: str
    seed: int
    threads: Optional[int]  # None -> all cores

    @classmethod
    def from_bytes(cls, raw: bytes, path: str = "<memory>") -> "RunConfig":
        digest = hashlib.sha256(raw).hexdigest()
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"{path}: unknown config section(s) {sorted(unknown)}")
        run = data.get("run", {})
        seed = int(run.get("seed", 0))
        threads = int(run.get("threads", 0)) or None
        return cls(data=data, sha256=digest, path=path, seed=seed, threads=threads)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        return cls.from_bytes(raw, path=path)

    def override(self, seed: Optional[int] = None, threads: Optional[int] = None) -> "RunConfig":
        out = self
        if seed is not None:
            out = replace(out, seed=int(seed))
        if threads is not None:
            out = replace(out, threads=int(threads) or None)
        return out

    # -- generic accessors ---------------------------------------------------

    def section(self, name: str) -> Mapping:
        return self.data.get(name, {})

    def require(self, name: str) -> Mapping:
        if name not in self.data:
            raise ConfigError(f"config is missing the [{name}] section")
        return self.data[name]

    def meta(self) -> Mapping:
        """Provenance embedded in every output file."""
        return {"config_sha256": self.sha256, "seed": self.seed}

    @property
    def outdir(self) -> str:
        return str(self.section("output").get("dir", "out"))

    @property
    def B(self) -> int:
        return int(self.section("run").get("B", 2000))

    @property
    def level(self) -> float:
        return float(self.section("run").get("level", 0.95))

    @property
    def clip(self) -> Tuple[float, float]:
        lo, hi = self.section("run").get("clip", DEFAULT_CLIP)
        return (float(lo), float(hi))

    # -- typed builders --------------------------------------------------------

    def schema(self) -> ColumnSchema:
        inp = self.require("input")
        if "outcome" not in inp or "treatment" not in inp:
            raise ConfigError("[input] needs at least outcome= and treatment=")
        return ColumnSchema(
            outcome=str(inp["outcome"]),
            treatment=str(inp["treatment"]),
            cluster=str(inp["cluster"]) if "cluster" in inp else None,
            categorical=tuple(str(c) for c in inp.get("categorical", ())),
            features=tuple(str(f) for f in inp["features"]) if inp.get("features") else None,
            unit_id=str(inp["unit_id"]) if "unit_id" in inp else None,
        )

    def load_dataset(self) -> Dataset:
        inp = self.require("input")
        if "path" not in inp:
            raise ConfigError("[input] needs path=")
        return load_csv(str(inp["path"]), self.schema())

    def suite(self, estimators: Optional[Tuple[str, ...]] = None) -> SuiteSpec:
        sec = self.section("suite")
        names = estimators if estimators is not None else sec.get("estimators")
        base_params = tuple(
            (fam, tuple(sorted(params.items())))
            for fam, params in sorted(sec.get("base", {}).items())
        )
        cf_params = dict(sec.get("cf", {}))
        try:
            cf = CausalForestSpec(**cf_params)
        except TypeError as exc:
            raise ConfigError(f"[suite.cf]: {exc}") from exc
        kwargs = dict(
            clip=self.clip,
            n_folds=int(sec.get("n_folds", 5)),
            master_seed=self.seed,
            base_params=base_params,
            cf=cf,
        )
        if names:
            return SuiteSpec(estimators=tuple(parse_estimator_name(str(n)) for n in names), **kwargs)
        return SuiteSpec(**kwargs)

    def nuisance_specs(self) -> Tuple[LearnerSpec, LearnerSpec]:
        """(outcome, propensity) learner specs for the ate/subgroup commands."""
        sec = self.section("ate")
        outcome = _learner_spec(str(sec.get("outcome", "gbt")), sec.get("outcome_params", {}))
        propensity = _learner_spec(str(sec.get("propensity", "gbt")), sec.get("propensity_params", {}))
        return outcome, propensity

    def hypotheses(self) -> Tuple[SubgroupDef, ...]:
        sec = self.section("subgroup")
        out = []
        for h in sec.get("hypothesis", ()):
            conditions = h.get("conditions")
            if not conditions:
                raise ConfigError("each [[subgroup.hypothesis]] needs conditions = [[feature, op, value], ...]")
            triples = []
            for c in conditions:
                if len(c) != 3:
                    raise ConfigError(f"condition {c!r} must be [feature, op, value]")
                triples.append((str(c[0]), str(c[1]), c[2]))
            out.append(SubgroupDef.where(*triples, label=str(h.get("label", ""))))
        return tuple(out)

    def dgp_spec(self) -> DgpSpec:
        sec = self.require("simulate")
        if "dgp" not in sec:
            raise ConfigError("[simulate] needs dgp=")
        params = tuple(sorted((str(k), float(v)) for k, v in sec.get("params", {}).items()))
        return DgpSpec(
            name=str(sec["dgp"]),
            n=int(sec.get("n", 2000)),
            d=int(sec["d"]) if "d" in sec else None,
            noise_sd=float(sec.get("noise_sd", 0.5)),
            n_clusters=int(sec.get("n_clusters", 20)),
            cluster_sd=float(sec.get("cluster_sd", 0.0)),
            seed=int(sec.get("seed", self.seed)),
            params=params,
        )
