"""Experiment driver: config manifests, seeded runs, metrics, sweeps.

A run is described by a small INI file with [environment], [scheduler],
[run], and optionally [sweep] sections.  Presets fill in the common
setups (`desk` for fast checks, `paper` for full-scale reproduction);
any key given explicitly overrides its preset value.  Runs are
deterministic given the seed: the environment stream and the policy's
own randomness use separate generators spawned from it, so every
scheduler sees the identical arrival and channel path.  Metrics
averages cover the post-warmup window only, while discounted sums start
at slot zero where the discount actually has mass.  CSV is the output
contract: fixed column order, 12 significant digits.
"""

import configparser
import dataclasses
import io
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .baselines import QLearningScheduler, StabilityScheduler
from .env import (ChannelStateTable, DeterministicTraffic, FsmcChannel,
                  IidChannel, MovingAverageChannel, PoissonTraffic,
                  energy_cost, fsmc_from_doppler, generate_arrival_path,
                  generate_channel_path, priority_utility)
from .errors import ConfigError
from .learner import Learner, StepSchedule
from .oracle import DiscreteMdp, lagrange_search, solve_exact
from .priority import PriorityConfig, PriorityLearner

log = logging.getLogger("adp_sched.harness")

PRESETS = {
    "desk": {
        "environment": {
            "b": "16", "alpha": "0.95", "channel": "fsmc",
            "boundaries": "0.058, 0.198, inf",
            "representatives": "0.0418, 0.1157, 0.3407",
            "transition": "0.9 0.1 0; 0.05 0.9 0.05; 0 0.1 0.9",
            "traffic": "poisson", "arrival_rate": "2", "arrival_cap": "16",
        },
        "run": {"slots": "50000"},
    },
    "paper": {
        "environment": {
            "b": "500", "alpha": "0.95", "channel": "fsmc",
            "doppler_hz": "10", "slot_s": "0.01", "mean_gain": "0.14",
            "traffic": "poisson", "arrival_rate": "15", "arrival_cap": "500",
        },
        "run": {"slots": "10000"},
    },
}

_KNOWN_KEYS = {
    "environment": {"preset", "b", "alpha", "seed", "h0", "channel",
                    "boundaries", "representatives", "transition",
                    "iid_probs", "ma_coefficients", "ma_std", "doppler_hz",
                    "slot_s", "mean_gain", "traffic", "arrival_rate",
                    "arrival_cap", "arrival_units"},
    "scheduler": {"method", "delta", "t", "beta", "gamma", "lam", "cbar",
                  "lambda_window", "weights", "caps", "v_param", "epsilon0",
                  "grid_step", "max_evals"},
    "run": {"slots", "warmup_fraction", "warmup_slots", "checkpoints",
            "trace"},
    "sweep": {"parameter", "values"},
}

METHODS = ("oracle", "learner", "priority", "stability", "qlearning")
SWEEPABLE = ("delta", "T", "lambda", "cbar", "V_param", "weights")


def _fail(section, key, msg):
    raise ConfigError(f"{section}.{key}: {msg}")


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _matrix(text):
    return [[float(v) for v in row.split()] for row in text.split(";")]


@dataclass
class ExperimentConfig:
    seed: int
    B: float
    alpha: float
    h0: int
    channel: object
    traffics: Tuple[object, ...]
    method: str
    delta: float
    refresh_period: int
    beta: Optional[StepSchedule]
    gamma: Optional[StepSchedule]
    lam: Optional[float]
    cbar: Optional[float]
    lambda_window: int
    weights: Optional[Tuple[float, ...]]
    caps: Optional[Tuple[float, ...]]
    v_param: float
    epsilon0: float
    grid_step: float
    max_evals: int
    slots: int
    warmup_slots: int
    checkpoints: Tuple[int, ...]
    trace: bool
    sweep_parameter: Optional[str]
    sweep_values: Tuple[str, ...]

    @property
    def h_reps(self):
        return self.channel.table.rep_array()


def _merged_sections(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"malformed config file: {e}") from None

    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    for section in raw:
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in raw[section]:
            if key not in _KNOWN_KEYS[section]:
                _fail(section, key, "unknown key")

    preset = raw.get("environment", {}).pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            _fail("environment", "preset", f"unknown preset {preset!r}")
        merged = {s: dict(block) for s, block in PRESETS[preset].items()}
        for section, block in raw.items():
            merged.setdefault(section, {}).update(block)
        raw = merged
    return raw


def _build_channel(env):
    kind = env.get("channel", "fsmc")
    table = ChannelStateTable()
    if "boundaries" in env or "representatives" in env:
        if not ("boundaries" in env and "representatives" in env):
            _fail("environment", "boundaries",
                  "boundaries and representatives come as a pair")
        table = ChannelStateTable(boundaries=_floats(env["boundaries"]),
                                  representatives=_floats(
                                      env["representatives"]))
    if kind == "fsmc":
        if "transition" in env:
            return FsmcChannel(P=np.array(_matrix(env["transition"])),
                               table=table)
        return fsmc_from_doppler(
            table=table,
            mean_gain=float(env.get("mean_gain", 0.14)),
            doppler_hz=float(env.get("doppler_hz", 10.0)),
            slot_s=float(env.get("slot_s", 0.01)))
    if kind == "iid":
        if "iid_probs" not in env:
            _fail("environment", "iid_probs", "required for the iid channel")
        return IidChannel(probs=np.array(_floats(env["iid_probs"])),
                          table=table)
    if kind == "ma":
        kw = {"table": table}
        if "ma_coefficients" in env:
            kw["coefficients"] = _floats(env["ma_coefficients"])
        if "ma_std" in env:
            kw["innovation_std"] = float(env["ma_std"])
        if "mean_gain" in env:
            kw["target_mean"] = float(env["mean_gain"])
        return MovingAverageChannel(**kw)
    _fail("environment", "channel", f"unknown channel kind {kind!r}")


def _build_traffics(env, n_queues, caps):
    kind = env.get("traffic", "poisson")
    if kind == "poisson":
        rates = _floats(env.get("arrival_rate", "0"))
        if len(rates) == 1:
            rates = rates * n_queues
        if len(rates) != n_queues:
            _fail("environment", "arrival_rate",
                  f"need 1 or {n_queues} rates")
        if "arrival_cap" in env:
            cap_vals = _floats(env["arrival_cap"])
            if len(cap_vals) == 1:
                cap_vals = cap_vals * n_queues
        else:
            cap_vals = caps
        return tuple(PoissonTraffic(rate=r, cap=int(c))
                     for r, c in zip(rates, cap_vals))
    if kind == "deterministic":
        units = _floats(env.get("arrival_units", "0"))
        if len(units) == 1:
            units = units * n_queues
        if len(units) != n_queues:
            _fail("environment", "arrival_units",
                  f"need 1 or {n_queues} values")
        return tuple(DeterministicTraffic(units=int(u)) for u in units)
    _fail("environment", "traffic", f"unknown traffic kind {kind!r}")


def load_config(path, method=None, seed=None):
    """Parse and validate an experiment manifest.

    `method` lets a CLI subcommand dictate the scheduler regardless of
    the file; `seed` overrides the manifest seed.
    """
    raw = _merged_sections(path)
    env = raw.get("environment", {})
    sch = raw.get("scheduler", {})
    run_blk = raw.get("run", {})
    swp = raw.get("sweep", {})

    if seed is None:
        if "seed" not in env:
            _fail("environment", "seed", "required (runs must be seeded)")
        try:
            seed = int(env["seed"])
        except ValueError:
            _fail("environment", "seed", "must be an integer")
    method = method or sch.get("method")
    if method is None:
        _fail("scheduler", "method", "required")
    if method not in METHODS:
        _fail("scheduler", "method", f"must be one of {', '.join(METHODS)}")

    try:
        B = float(env.get("b", 16))
        alpha = float(env.get("alpha", 0.95))
        h0 = int(env.get("h0", 0))
        delta = float(sch.get("delta", 0.1))
        refresh = int(sch.get("t", 1))
        lam = float(sch["lam"]) if "lam" in sch else None
        cbar = float(sch["cbar"]) if "cbar" in sch else None
        lambda_window = int(sch.get("lambda_window", 100))
        v_param = float(sch.get("v_param", 1.0))
        epsilon0 = float(sch.get("epsilon0", 1.0))
        grid_step = float(sch.get("grid_step", 1.0))
        max_evals = int(sch.get("max_evals", 10_000))
        slots = int(run_blk.get("slots", 10_000))
        warmup_fraction = float(run_blk.get("warmup_fraction", 0.2))
        trace = run_blk.get("trace", "false").strip().lower() in ("true",
                                                                  "1", "yes")
    except ValueError as e:
        raise ConfigError(f"bad numeric value in config: {e}") from None

    beta = gamma = None
    if "beta" in sch:
        beta = StepSchedule.parse(sch["beta"])
    if "gamma" in sch:
        gamma = StepSchedule.parse(sch["gamma"])
    weights = _floats(sch["weights"]) if "weights" in sch else None
    caps = _floats(sch["caps"]) if "caps" in sch else None

    if slots < 1:
        _fail("run", "slots", "must be >= 1")
    if "warmup_slots" in run_blk:
        warmup_slots = int(run_blk["warmup_slots"])
    else:
        if not 0.0 <= warmup_fraction < 1.0:
            _fail("run", "warmup_fraction", "must lie in [0, 1)")
        warmup_slots = int(warmup_fraction * slots)
    if not 0 <= warmup_slots < slots:
        _fail("run", "warmup_slots", "must lie in [0, slots)")
    checkpoints = ()
    if "checkpoints" in run_blk:
        checkpoints = tuple(sorted(int(v) for v in
                                   run_blk["checkpoints"].replace(
                                       ",", " ").split()))
        if checkpoints and (checkpoints[0] < 1 or checkpoints[-1] > slots):
            _fail("run", "checkpoints", "slot indices must lie in [1, slots]")

    channel = _build_channel(env)
    if not 0 <= h0 < channel.n_states:
        _fail("environment", "h0", "channel state index out of range")

    if method == "priority":
        if weights is None:
            _fail("scheduler", "weights", "required for priority runs")
        n_queues = len(weights)
        queue_caps = caps if caps is not None else (B,) * n_queues
        if len(queue_caps) != n_queues:
            _fail("scheduler", "caps", f"need {n_queues} entries")
    else:
        n_queues = 1
        queue_caps = (B,)
    traffics = _build_traffics(env, n_queues, queue_caps)
    for i, tm in enumerate(traffics):
        if tm.cap > queue_caps[i]:
            _fail("environment", "arrival_cap",
                  f"cap {tm.cap} exceeds buffer {queue_caps[i]}")

    if method == "oracle" and lam is None and cbar is None:
        _fail("scheduler", "lam", "oracle needs lam or cbar")
    if method == "stability" and (lam is None) == (cbar is None):
        _fail("scheduler", "lam",
              "stability needs exactly one of lam or cbar")

    sweep_parameter = swp.get("parameter")
    sweep_values: Tuple[str, ...] = ()
    if sweep_parameter is not None:
        if sweep_parameter not in SWEEPABLE:
            _fail("sweep", "parameter",
                  f"must be one of {', '.join(SWEEPABLE)}")
        if "values" not in swp:
            _fail("sweep", "values", "required when a parameter is swept")
        sep = ";" if sweep_parameter == "weights" else ","
        sweep_values = tuple(v.strip() for v in swp["values"].split(sep)
                             if v.strip())
        if not sweep_values:
            _fail("sweep", "values", "need at least one value")

    return ExperimentConfig(
        seed=seed, B=B, alpha=alpha, h0=h0, channel=channel,
        traffics=traffics, method=method, delta=delta,
        refresh_period=refresh, beta=beta, gamma=gamma, lam=lam, cbar=cbar,
        lambda_window=lambda_window, weights=weights, caps=queue_caps,
        v_param=v_param, epsilon0=epsilon0, grid_step=grid_step,
        max_evals=max_evals, slots=slots, warmup_slots=warmup_slots,
        checkpoints=checkpoints, trace=trace,
        sweep_parameter=sweep_parameter, sweep_values=sweep_values)


@dataclass
class MetricsRecord:
    method: str
    seed: int
    slots: int
    warmup_slots: int
    param: str = ""
    value: str = ""
    avg_queue: float = 0.0
    avg_delay: float = 0.0
    avg_power: float = 0.0
    discounted_utility: float = 0.0
    discounted_cost: float = 0.0
    lam_mean: float = 0.0
    lam_final: float = 0.0
    mean_n_delta: float = 0.0
    ops_per_slot: float = 0.0
    class_queues: Tuple[float, ...] = ()
    class_delays: Tuple[float, ...] = ()
    class_utilities: Tuple[float, ...] = ()
    checkpoint_rows: Tuple[Tuple[float, ...], ...] = ()


class _TablePolicy:
    """Fixed grid policy from an exact solve, behind the step interface."""

    def __init__(self, mdp, policy):
        self.B = mdp.B
        self.g = mdp.g
        self.pol = policy
        self.lam = mdp.lam
        self.post_backlog = 0.0

    def learn_step(self, a_prev, h_new):
        x = min(self.post_backlog + float(a_prev), self.B)
        ix = int(round(x / self.g))
        y = float(self.pol[ix, int(h_new)] * self.g)
        self.post_backlog = x - y
        return y


def _build_scheduler(cfg, policy_rng):
    h_reps = cfg.h_reps
    if cfg.method == "learner":
        return Learner(B=cfg.B, h_reps=h_reps, alpha=cfg.alpha,
                       lam=cfg.lam or 0.0, delta=cfg.delta,
                       refresh_period=cfg.refresh_period, beta=cfg.beta,
                       gamma=cfg.gamma, cbar=cfg.cbar,
                       lambda_window=cfg.lambda_window,
                       grid_step=cfg.grid_step, h0=cfg.h0,
                       max_evals=cfg.max_evals)
    if cfg.method == "priority":
        pconf = PriorityConfig(weights=cfg.weights, B=cfg.caps,
                               grid_step=cfg.grid_step)
        return PriorityLearner(pconf, h_reps, cfg.alpha, lam=cfg.lam or 0.0,
                               delta=cfg.delta,
                               refresh_period=cfg.refresh_period,
                               beta=cfg.beta, gamma=cfg.gamma, cbar=cfg.cbar,
                               lambda_window=cfg.lambda_window, h0=cfg.h0,
                               max_evals=cfg.max_evals)
    if cfg.method == "stability":
        return StabilityScheduler(B=cfg.B, h_reps=h_reps, alpha=cfg.alpha,
                                  cbar=cfg.cbar, lam=cfg.lam,
                                  v_param=cfg.v_param,
                                  grid_step=cfg.grid_step, h0=cfg.h0)
    if cfg.method == "qlearning":
        return QLearningScheduler(B=cfg.B, h_reps=h_reps, alpha=cfg.alpha,
                                  lam=cfg.lam or 0.0, cbar=cfg.cbar,
                                  lambda_window=cfg.lambda_window,
                                  beta=cfg.beta, gamma=cfg.gamma,
                                  epsilon0=cfg.epsilon0, h0=cfg.h0,
                                  rng=policy_rng)
    mdp = DiscreteMdp(B=cfg.B, h_reps=h_reps,
                      P=cfg.channel.transition_matrix(),
                      arrival_pmf=cfg.traffics[0].pmf(),
                      lam=cfg.lam or 0.0, alpha=cfg.alpha, g=cfg.grid_step)
    if cfg.cbar is not None:
        found = lagrange_search(mdp, cfg.cbar, gamma=cfg.gamma)
        log.info("oracle multiplier search: lam*=%.6g slack=%s",
                 found.lam, found.slack)
        return _TablePolicy(mdp.with_lambda(found.lam), found.policy)
    return _TablePolicy(mdp, solve_exact(mdp).policy)


def _current_lam(sched):
    if isinstance(sched, StabilityScheduler):
        return sched.lam_t
    return sched.lam


def run(config, trace_path=None):
    """Simulate one seeded trajectory and aggregate its metrics."""
    env_rng = np.random.default_rng([config.seed, 0])
    policy_rng = np.random.default_rng([config.seed, 1])
    n = config.slots
    hs = generate_channel_path(config.channel, config.h0, n, env_rng)
    arrivals = np.stack([generate_arrival_path(tm, n, env_rng)
                         for tm in config.traffics], axis=1).astype(
                             np.float64)
    sched = _build_scheduler(config, policy_rng)
    h_reps = config.h_reps
    pri = config.method == "priority"
    N = arrivals.shape[1]
    caps = np.asarray(config.caps, dtype=np.float64)
    w = np.asarray(config.weights, dtype=np.float64) if pri else None

    trace_fh = None
    if trace_path:
        trace_fh = open(trace_path, "w")
        cols = ["t", "h"]
        for stem in ("a", "x", "y"):
            cols += [f"{stem}_{i+1}" for i in range(N)] if pri else [stem]
        trace_fh.write(",".join(cols + ["u", "c", "lam"]) + "\n")

    warm = config.warmup_slots
    ckpt = set(config.checkpoints)
    disc_u = disc_c = 0.0
    alpha_t = 1.0
    cum_q = cum_c = 0.0
    sum_q = sum_c = sum_lam = 0.0
    sum_qi = np.zeros(N)
    sum_ui = np.zeros(N)
    ckpt_rows = []

    for t in range(n):
        h = int(hs[t + 1])
        a = arrivals[t]
        if pri:
            x = np.minimum(sched.post_backlog + a, caps)
            y = sched.learn_step(a, h)
            u_i = w * np.minimum(x, y)
            u = float(u_i.sum())
            c = float(energy_cost(float(h_reps[h]), float(y.sum())))
            q = float(x.sum())
        else:
            x = min(sched.post_backlog + float(a[0]), config.B)
            y = sched.learn_step(float(a[0]), h)
            u = -(x - y)
            c = float(energy_cost(float(h_reps[h]), y))
            q = x
        disc_u += alpha_t * u
        disc_c += alpha_t * c
        alpha_t *= config.alpha
        cum_q += q
        cum_c += c
        lam_now = float(_current_lam(sched))
        if t >= warm:
            sum_q += q
            sum_c += c
            sum_lam += lam_now
            if pri:
                sum_qi += x
                sum_ui += u_i
        if trace_fh is not None:
            vals = [t, h]
            if pri:
                vals += [*a, *x, *y]
            else:
                vals += [float(a[0]), x, y]
            vals += [u, c, lam_now]
            trace_fh.write(",".join(_fmt(v) for v in vals) + "\n")
        if (t + 1) in ckpt:
            ckpt_rows.append((t + 1, lam_now, cum_q / (t + 1),
                              cum_c / (t + 1)))
    if trace_fh is not None:
        trace_fh.close()

    meas = n - warm
    rates = [tm.mean for tm in config.traffics]
    total_rate = float(sum(rates))
    avg_queue = sum_q / meas
    rec = MetricsRecord(
        method=config.method, seed=config.seed, slots=n, warmup_slots=warm,
        avg_queue=avg_queue,
        avg_delay=avg_queue / total_rate if total_rate > 0 else 0.0,
        avg_power=sum_c / meas,
        discounted_utility=disc_u, discounted_cost=disc_c,
        lam_mean=sum_lam / meas, lam_final=float(_current_lam(sched)),
        mean_n_delta=getattr(sched, "mean_n_delta", 0.0),
        ops_per_slot=getattr(sched, "foresight_ops", 0) / n,
        checkpoint_rows=tuple(ckpt_rows))
    if pri:
        qi = sum_qi / meas
        rec.class_queues = tuple(qi)
        rec.class_delays = tuple(
            q / r if r > 0 else 0.0 for q, r in zip(qi, rates))
        rec.class_utilities = tuple(sum_ui / meas)
    return rec


def _sweep_override(config, parameter, text):
    try:
        if parameter == "delta":
            return dataclasses.replace(config, delta=float(text))
        if parameter == "T":
            return dataclasses.replace(config, refresh_period=int(text))
        if parameter == "lambda":
            return dataclasses.replace(config, lam=float(text), cbar=None)
        if parameter == "cbar":
            return dataclasses.replace(config, cbar=float(text), lam=None)
        if parameter == "V_param":
            return dataclasses.replace(config, v_param=float(text))
        if parameter == "weights":
            return dataclasses.replace(config, weights=_floats(text))
    except ValueError:
        _fail("sweep", "values", f"cannot parse {text!r} for {parameter}")
    _fail("sweep", "parameter", f"unknown parameter {parameter!r}")


def sweep(config):
    """One run per swept value, identical seed, rows sorted by value."""
    if config.sweep_parameter is None:
        raise ConfigError("sweep.parameter: required for sweep runs")
    values = list(config.sweep_values)
    if config.sweep_parameter != "weights":
        values.sort(key=float)
    records = []
    for text in values:
        cfg = _sweep_override(config, config.sweep_parameter, text)
        rec = run(cfg)
        rec.param = config.sweep_parameter
        rec.value = text
        records.append(rec)
        log.info("sweep %s=%s: queue %.4g power %.4g",
                 config.sweep_parameter, text, rec.avg_queue, rec.avg_power)
    return records


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".12g")


_BASE_COLUMNS = ("method", "seed", "slots", "warmup_slots", "param", "value",
                 "avg_queue", "avg_delay", "avg_power", "discounted_utility",
                 "discounted_cost", "lam_mean", "lam_final", "mean_n_delta",
                 "ops_per_slot")


def render_csv(records):
    """Stable-schema CSV for a list of records (one method per file)."""
    n_classes = max(len(r.class_queues) for r in records)
    cols = list(_BASE_COLUMNS)
    for i in range(n_classes):
        cols += [f"queue_{i+1}", f"delay_{i+1}", f"utility_{i+1}"]
    out = io.StringIO()
    out.write(",".join(cols) + "\n")
    for r in records:
        vals = [r.method, str(r.seed), str(r.slots), str(r.warmup_slots),
                r.param, r.value]
        vals += [_fmt(v) for v in
                 (r.avg_queue, r.avg_delay, r.avg_power,
                  r.discounted_utility, r.discounted_cost, r.lam_mean,
                  r.lam_final, r.mean_n_delta, r.ops_per_slot)]
        for i in range(n_classes):
            if i < len(r.class_queues):
                vals += [_fmt(r.class_queues[i]), _fmt(r.class_delays[i]),
                         _fmt(r.class_utilities[i])]
            else:
                vals += ["", "", ""]
        out.write(",".join(vals) + "\n")
    return out.getvalue()


def render_checkpoints(records):
    """Convergence-trajectory CSV; empty string when nothing was recorded."""
    rows = [(r.seed, r.param, r.value) + c
            for r in records for c in r.checkpoint_rows]
    if not rows:
        return ""
    out = io.StringIO()
    out.write("seed,param,value,slot,lam,cum_avg_queue,cum_avg_power\n")
    for seed, param, value, slot, lam, q, c in rows:
        out.write(",".join([str(seed), param, value, str(int(slot)),
                            _fmt(lam), _fmt(q), _fmt(c)]) + "\n")
    return out.getvalue()
