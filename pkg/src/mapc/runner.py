"""Experiment configuration, seed fan-out, baselines, coexistence and replay."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import mac, metrics, protocol, topology
from .agent import Agent, make_backend, make_knowledge_base
from .agent.memory import KnowledgeBase, ShortTermMemory
from .channel import ChannelParams
from .llm_gateway import ConfigurationError, LlmSettings, OfflineEmbedder, Transcript, client_from_settings, embedder_from_settings
from .rng import substream
from .types import SlotState

log = logging.getLogger(__name__)

POLICIES = ("llm", "heuristic", "genie", "scripted")
ABLATIONS = ("no_reflection", "no_negotiation", "no_stm", "no_ltm")
LOG_VERSION = 1

AGENT_DEFAULTS = {
    "stm_capacity": 5,
    "kb_capacity": 10,
    "similarity_threshold": 0.85,
    "retrieve_k": 3,
    "seed_exemplars": True,
    "temperature": 0.2,
    "retries": 2,
    "prompt_budget": 6000,
}


class ConfigError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


def parse_seeds(spec) -> list[int]:
    """``"0..9"`` (inclusive), ``"1,4,7"``, a single integer or a list."""
    if isinstance(spec, (list, tuple, range)):
        return [int(s) for s in spec]
    if isinstance(spec, int):
        return [spec]
    out = []
    for part in str(spec).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ConfigError("seeds", f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    return out


def parse_ablations(spec) -> tuple[str, ...]:
    if spec is None:
        return ()
    items = spec.split(",") if isinstance(spec, str) else list(spec)
    flags = sorted({s.strip() for s in items if s and s.strip() and s.strip() != "none"})
    bad = [f for f in flags if f not in ABLATIONS]
    if bad:
        raise ConfigError("ablations", f"unknown flag(s) {bad}; choose from {list(ABLATIONS)}")
    return tuple(flags)


@dataclass
class RunConfig:
    scenario: str = "co-sr"
    k: int = 2
    policy: str = "heuristic"
    rounds: int = 18
    slots: int = 5
    seeds: list = field(default_factory=lambda: list(range(10)))
    ablations: tuple = ()
    out: str = "out"
    workers: int | None = None
    channel: dict = field(default_factory=dict)
    mac: dict = field(default_factory=dict)
    agent: dict = field(default_factory=dict)
    script: dict = field(default_factory=dict)
    kb_dir: str | None = None
    save_kb: bool = False

    def validate(self) -> "RunConfig":
        try:
            self.scenario = topology.ScenarioKind.parse(self.scenario).value
        except ValueError:
            raise ConfigError("scenario", f"unknown scenario {self.scenario!r}") from None
        if self.policy not in POLICIES:
            raise ConfigError("policy", f"must be one of {list(POLICIES)}, got {self.policy!r}")
        if not isinstance(self.k, int) or self.k < 2:
            raise ConfigError("k", "need at least 2 APs")
        if not isinstance(self.rounds, int) or self.rounds < 0:
            raise ConfigError("rounds", "must be a non-negative integer")
        if not isinstance(self.slots, int) or self.slots < 1:
            raise ConfigError("slots", "must be a positive integer")
        self.seeds = parse_seeds(self.seeds)
        if not self.seeds:
            raise ConfigError("seeds", "no seeds given")
        self.ablations = parse_ablations(self.ablations)
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        unknown = set(self.agent) - set(AGENT_DEFAULTS)
        if unknown:
            raise ConfigError("agent", f"unknown key(s) {sorted(unknown)}")
        try:
            ChannelParams(**self.channel)
        except TypeError as exc:
            raise ConfigError("channel", str(exc)) from None
        except ValueError as exc:
            raise ConfigError("channel", str(exc)) from None
        try:
            mac.MacParams(**self.mac)
        except (TypeError, ValueError) as exc:
            raise ConfigError("mac", str(exc)) from None
        if self.policy == "scripted" and not self.script:
            raise ConfigError("script", "scripted policy needs per-AP decisions")
        return self

    def agent_param(self, key):
        return self.agent.get(key, AGENT_DEFAULTS[key])

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ablations"] = list(self.ablations)
        d["seeds"] = list(self.seeds)
        d["script"] = {str(k): list(v) for k, v in self.script.items()}
        return d

    def log_identity(self) -> dict:
        """Fields that define the simulation (excludes output location and pool size)."""
        d = self.to_dict()
        for key in ("out", "workers", "seeds", "save_kb"):
            d.pop(key)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration field")
        return cls(**d)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """YAML (or JSON) file mirroring RunConfig; ``overrides`` win."""
    data = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be a mapping")
        data.update(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    return RunConfig.from_dict(data).validate()


# --------------------------------------------------------------------------
# pipelines


@dataclass
class Pipeline:
    agents: dict
    negotiation: bool = True


def apply_ablation(flags, pipeline: Pipeline) -> Pipeline:
    """Switch off pipeline parts; the flags are independent."""
    flags = set(parse_ablations(flags))
    for agent in pipeline.agents.values():
        if "no_reflection" in flags:
            agent.reflection_enabled = False
        if "no_stm" in flags:
            agent.stm = ShortTermMemory(0)
        if "no_ltm" in flags:
            agent.kb = None
    negotiation = pipeline.negotiation and "no_negotiation" not in flags
    return Pipeline(pipeline.agents, negotiation)


def _kb_for(config: RunConfig, ap: int, embedder) -> KnowledgeBase:
    if config.kb_dir:
        p = Path(config.kb_dir) / f"ap{ap}.json"
        if p.exists():
            return KnowledgeBase.load(p)
    return make_knowledge_base(
        embedder,
        capacity=config.agent_param("kb_capacity"),
        threshold=config.agent_param("similarity_threshold"),
        seed_exemplars=config.agent_param("seed_exemplars"),
    )


def build_pipeline(config: RunConfig, scenario, seed: int, client=None, embedder=None, aps=None) -> Pipeline:
    embedder = embedder or OfflineEmbedder()
    aps = list(range(scenario.bss_count)) if aps is None else list(aps)
    agents = {}
    for ap in aps:
        if config.policy == "scripted":
            script = config.script.get(ap, config.script.get(str(ap)))
            if script is None:
                raise ConfigError("script", f"no decisions for AP{ap}")
            backend = make_backend("scripted", decisions=script)
        elif config.policy == "llm":
            backend = make_backend(
                "llm",
                client=client,
                model=getattr(client, "model", None) or os.environ.get("MAPC_LLM_MODEL", "gpt-4o"),
                temperature=config.agent_param("temperature"),
                retries=config.agent_param("retries"),
                prompt_budget=config.agent_param("prompt_budget"),
            )
        else:
            backend = make_backend(config.policy, scenario=scenario)
        kb = None if "no_ltm" in config.ablations else _kb_for(config, ap, embedder)
        agents[ap] = Agent(
            ap,
            backend,
            slots=config.slots,
            stm_capacity=config.agent_param("stm_capacity"),
            kb=kb,
            embedder=embedder,
            retrieve_k=config.agent_param("retrieve_k"),
            seed=seed,
        )
    return apply_ablation(config.ablations, Pipeline(agents, True))


# --------------------------------------------------------------------------
# single runs


@dataclass
class SeedResult:
    seed: int
    log_text: str
    report: metrics.ThroughputReport | None
    outcomes: list = field(default_factory=list)
    error: str | None = None
    kbs: dict = field(default_factory=dict)


def make_run_scenario(config: RunConfig, seed: int):
    return topology.generate_scenario(config.scenario, config.k, seed, params=ChannelParams(**config.channel))


def run_seed(config: RunConfig, seed: int, client=None, embedder=None) -> SeedResult:
    scenario = make_run_scenario(config, seed)
    pipe = build_pipeline(config, scenario, seed, client, embedder)
    txcfg = protocol.TxopConfig(config.rounds, config.slots)
    res = protocol.run_txop(
        scenario,
        pipe.agents,
        txcfg,
        seed=seed,
        negotiation=pipe.negotiation,
        mac_params=mac.MacParams(**config.mac),
        parallel=config.policy == "llm",
    )
    header = {
        "type": "header",
        "version": LOG_VERSION,
        "run": config.log_identity(),
        "seed": seed,
        "scenario": scenario.to_dict(),
        "group": list(res.group),
        "contention": {
            "winner": res.contention.winner,
            "backoff_slots_elapsed": res.contention.backoff_slots_elapsed,
            "tie_rounds": res.contention.tie_rounds,
        },
    }
    lines = [json.dumps(header)]
    lines += [json.dumps(protocol.outcome_to_record(o)) for o in res.outcomes]
    report = metrics.normalized_throughput(res.outcomes) if res.outcomes else None
    lines.append(json.dumps({"type": "summary", **(report.to_dict() if report else {"rounds": 0})}))
    kbs = {ap: a.kb.to_dict() for ap, a in pipe.agents.items() if a.kb is not None} if config.save_kb else {}
    return SeedResult(seed, "\n".join(lines) + "\n", report, res.outcomes, kbs=kbs)


def _run_seed_safe(config: RunConfig, seed: int, client=None, embedder=None) -> SeedResult:
    try:
        return run_seed(config, seed, client, embedder)
    except Exception as exc:  # reported per seed; the experiment exits nonzero
        log.exception("seed %d failed", seed)
        return SeedResult(seed, "", None, error=f"{type(exc).__name__}: {exc}")


def log_name(config: RunConfig, seed: int) -> str:
    abl = "-" + "+".join(config.ablations) if config.ablations else ""
    return f"{config.scenario}-k{config.k}-{config.policy}{abl}-seed{seed}.jsonl"


@dataclass
class ExperimentResult:
    status: int
    log_paths: list[Path]
    summary_csv: Path | None
    heatgrid: Path | None
    reports: dict
    errors: dict


def _pool_size(workers: int | None, n_tasks: int) -> int:
    n = workers or os.cpu_count() or 1
    return max(1, min(n, n_tasks))


def run_experiment(config: RunConfig, client=None, embedder=None) -> ExperimentResult:
    config.validate()
    transcript = None
    if config.policy == "llm" and client is None:
        settings = LlmSettings.from_env()  # fails fast before any simulation
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        transcript = Transcript(out / "transcript.jsonl")
        client = client_from_settings(settings, transcript)
        embedder = embedder or embedder_from_settings(settings, client)
    out = Path(config.out)
    logs = out / "logs"
    logs.mkdir(parents=True, exist_ok=True)

    workers = _pool_size(config.workers, len(config.seeds))
    if config.policy == "llm" or client is not None or embedder is not None or workers == 1:
        results = [_run_seed_safe(config, s, client, embedder) for s in config.seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_seed_safe, [config] * len(config.seeds), config.seeds))

    paths, reports, errors = [], {}, {}
    for r in results:
        if r.error:
            errors[r.seed] = r.error
            continue
        p = logs / log_name(config, r.seed)
        p.write_text(r.log_text, encoding="utf-8")
        paths.append(p)
        reports[r.seed] = r.report
        for ap, kb in r.kbs.items():
            kdir = out / "kb" / f"seed{r.seed}"
            kdir.mkdir(parents=True, exist_ok=True)
            (kdir / f"ap{ap}.json").write_text(json.dumps(kb, indent=1))
    summary = metrics.summarize_run(paths, out) if paths else None
    return ExperimentResult(
        status=1 if errors else 0,
        log_paths=paths,
        summary_csv=summary.summary_csv if summary else None,
        heatgrid=summary.heatgrid if summary else None,
        reports=reports,
        errors=errors,
    )


# --------------------------------------------------------------------------
# baselines

DEFAULT_SUITE = (("co-tdma", 2), ("co-tdma", 3), ("co-sr", 2), ("co-sr", 3))
BASELINE_METHODS = ("obss_pd-best", "csma-legacy", "genie", "heuristic")
SUITE_COLUMNS = ("scenario", "k", "method", "mean", "std", "n")


def _agentic_total(kind: str, k: int, seed: int, policy: str, rounds: int, slots: int) -> float:
    cfg = RunConfig(scenario=kind, k=k, policy=policy, rounds=rounds, slots=slots, seeds=[seed]).validate()
    return run_seed(cfg, seed).report.total_normalized


def baseline_cell(kind: str, k: int, seed: int, horizon_us: int = 1_000_000, rounds: int = 18, slots: int = 5, grid=None) -> dict:
    """Every suite method on one (scenario, seed); same topology for all."""
    scenario = topology.generate_scenario(kind, k, seed)
    sweep = mac.sweep_obss_pd(scenario, grid, seed=seed, horizon_us=horizon_us)
    return {
        "obss_pd-best": sweep.best_throughput,
        "obss_pd-best-point": (sweep.best_threshold_dbm, sweep.best_tx_power_dbm),
        "csma-legacy": mac.run_csma_baseline(scenario, seed=seed, horizon_us=horizon_us),
        "genie": _agentic_total(kind, k, seed, "genie", rounds, slots),
        "heuristic": _agentic_total(kind, k, seed, "heuristic", rounds, slots),
    }


@dataclass
class SuiteResult:
    rows: list[dict]
    per_seed: dict  # (kind, k) -> {seed: cell}
    csv_path: Path | None = None


def run_baseline_suite(scenarios=DEFAULT_SUITE, seeds: Sequence[int] = range(10), grid=None, horizon_us: int = 1_000_000,
                       rounds: int = 18, slots: int = 5, workers: int | None = None, out=None) -> SuiteResult:
    tasks = [(kind, k, s) for kind, k in scenarios for s in seeds]
    n = _pool_size(workers, len(tasks))
    args = ([t[0] for t in tasks], [t[1] for t in tasks], [t[2] for t in tasks], [horizon_us] * len(tasks),
            [rounds] * len(tasks), [slots] * len(tasks), [grid] * len(tasks))
    if n == 1:
        cells = [baseline_cell(*a) for a in zip(*args)]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            cells = list(pool.map(baseline_cell, *args))
    per_seed: dict = {}
    for (kind, k, s), cell in zip(tasks, cells):
        per_seed.setdefault((kind, k), {})[s] = cell
    rows = []
    for kind, k in scenarios:
        for method in BASELINE_METHODS:
            vals = [per_seed[(kind, k)][s][method] for s in seeds]
            m, sd = metrics.mean_std(vals)
            rows.append({"scenario": kind, "k": k, "method": method, "mean": m, "std": sd, "n": len(vals)})
    res = SuiteResult(rows, per_seed)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        res.csv_path = Path(out) / "baseline_suite.csv"
        metrics.write_csv(res.csv_path, rows, SUITE_COLUMNS)
    return res


# --------------------------------------------------------------------------
# coexistence with legacy APs


@dataclass
class CoexistenceResult:
    seed: int
    legacy_aps: tuple
    agentic_aps: tuple
    legacy_with_agents: dict
    legacy_only: dict
    agentic_normalized: float
    n_grants: int

    @property
    def ratios(self) -> dict:
        return {ap: (self.legacy_with_agents[ap] / self.legacy_only[ap]) if self.legacy_only[ap] > 0 else float("inf") for ap in self.legacy_aps}


COEXIST_HORIZON_US = 5_000_000


def run_coexistence(seed: int, policy: str = "heuristic", horizon_us: int = COEXIST_HORIZON_US, n_legacy: int = 2,
                    slots: int = 5, negotiate: bool = True) -> CoexistenceResult:
    """Legacy throughput with two agentic APs present versus all-legacy.

    Each contention win by an agentic AP opens one TXOP of five 80 us slots
    that hosts one negotiation round among the agentic APs it polls. The
    MAC timeline is fixed before grants are filled, so ``negotiate=False``
    leaves every legacy number unchanged and only skips the agentic rounds.
    """
    scenario = topology.generate_coexistence_scenario(seed, n_legacy=n_legacy)
    agentic = (0, 1)
    legacy = tuple(range(2, 2 + n_legacy))
    mparams = mac.MacParams()
    mixed = mac.run_legacy_traffic(scenario, legacy, agentic, seed=seed, horizon_us=horizon_us, params=mparams)
    base = mac.run_legacy_traffic(scenario, legacy + agentic, (), seed=seed, horizon_us=horizon_us, params=mparams)

    cfg = RunConfig(scenario="co-tdma", k=2, policy=policy, slots=slots, seeds=[seed]).validate()
    pipe = build_pipeline(cfg, scenario, seed, aps=agentic)
    txcfg = protocol.TxopConfig(1, slots, mparams.txop_duration_us / slots)
    successes = 0
    r = 0
    for g in range(len(mixed.grant_time_us)):
        if not negotiate:
            break
        if not mixed.grant_ok[g]:
            continue
        winner = int(mixed.grant_ap[g])
        members = [a for a in agentic if mixed.grant_members[g, a] and a != winner]
        group = (winner, *sorted(members))
        out = protocol.run_negotiation_round(r, group, pipe.agents, scenario, substream(seed, "coexist", r), txcfg, pipe.negotiation)
        successes += sum(st is SlotState.SUCCESS for ap in out.aps for st in out.states(ap))
        r += 1
    agentic_norm = successes * txcfg.slot_duration_us / horizon_us
    return CoexistenceResult(
        seed,
        legacy,
        agentic,
        {ap: float(mixed.normalized()[ap]) for ap in legacy},
        {ap: float(base.normalized()[ap]) for ap in legacy},
        agentic_norm,
        int(mixed.grant_ok.sum()),
    )


# --------------------------------------------------------------------------
# replay


@dataclass
class ReplayResult:
    path: str
    report: metrics.ThroughputReport | None
    ok: bool
    problems: list[str]


def replay(path) -> ReplayResult:
    """Re-derive metrics from a round log and cross-check what was stored.

    Checks stored scores against ``score_round``, the summary against
    ``normalized_throughput``, and every slot state against SINR recomputed
    from the logged scenario and fading draws.
    """
    parsed = metrics.read_round_log(path)
    problems = []
    if parsed.warnings:
        problems.append(f"{parsed.warnings} corrupt line(s)")
    if parsed.score_mismatches:
        problems.append(f"score mismatch in rounds {parsed.score_mismatches}")
    report = metrics.normalized_throughput(parsed.outcomes) if parsed.outcomes else None
    if parsed.summary is not None and report is not None:
        stored = parsed.summary.get("total_normalized")
        if stored != report.total_normalized:
            problems.append(f"summary total {stored} != recomputed {report.total_normalized}")
    if parsed.header is not None and parsed.outcomes:
        scenario = topology.TopologyScenario.from_dict(parsed.header["scenario"])
        for o in parsed.outcomes:
            if o.fading is None:
                continue
            per = protocol.execute_schedules(o.schedules, scenario, np.asarray(o.fading))
            if any(tuple(r.state for r in per[ap]) != o.states(ap) for ap in o.aps):
                problems.append(f"slot states in round {o.round_index} disagree with recomputed SINR")
    idx = [o.round_index for o in parsed.outcomes]
    if idx != list(range(len(idx))):
        problems.append("round indices are not 0..T-1 without gaps")
    return ReplayResult(str(path), report, not problems, problems)


__all__ = [
    "RunConfig",
    "ConfigError",
    "ConfigurationError",
    "load_config",
    "apply_ablation",
    "build_pipeline",
    "run_seed",
    "run_experiment",
    "run_baseline_suite",
    "baseline_cell",
    "run_coexistence",
    "replay",
    "parse_seeds",
]
