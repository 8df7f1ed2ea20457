"""Command line entry point.

    wbancoex run scenario2 --n 15 --mode both --out results/
    wbancoex validate-markov --n 2..10
    wbancoex poa --n 2,5,8 --instances 50
    wbancoex check --input results/wban.csv
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from wbancoex.channel import dbm_to_watts, make_channel
from wbancoex.checks import check_requirements
from wbancoex.config import PRESETS, ConfigError, ScenarioConfig, load_config
from wbancoex.efficiency import poa_experiment, write_poa_csv, write_poa_table
from wbancoex.markov import closed_form_report, solve_fixed_point
from wbancoex.sim import SERIES_FIELDS, SimConfig, run_scenario

log = logging.getLogger("wbancoex")

SUMMARY_FIELDS = (
    "mode", "n", "replication", "seed", "duration_s", "goodput", "throughput_bps", "tau", "pdr",
    "mean_delay_s", "drop_rate", "collision_prob", "energy_per_bit", "generated", "delivered",
    "dropped", "in_flight",
)
WBAN_FIELDS = ("mode", "n", "replication", "wban_id", "attempts", "pdr", "mean_delay", "goodput",
               "throughput_bps", "drop_rate", "collision_prob")
REQ_FIELDS = ("mode", "n", "replication", "requirement", "value", "threshold", "passed", "detail")
VALIDATION_FIELDS = (
    "n", "tau", "pf", "collision_prob_analytic", "collision_prob_sim", "collision_relerr", "goodput_analytic",
    "goodput_sim", "goodput_relerr", "tau_sim", "delay_analytic", "delay_sim", "superframes", "seed",
)
CLOSED_FORM_FIELDS = (
    "pf", "cw_min", "m", "b00_direct", "tau_direct", "b00_derived", "tau_derived", "b00_relerr_derived",
    "tau_relerr_derived", "derived_ok", "b00_printed", "tau_printed", "b00_relerr_printed",
    "tau_relerr_printed", "printed_ok",
)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, fields, rows, config_hash: str) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(fields) + ["config_hash"])
        for row in rows:
            w.writerow([_fmt(row.get(k)) for k in fields] + [config_hash])


# -- scenario runs --------------------------------------------------------------------


def _simulate(job):
    raw, n, mode, seed, rep = job
    cfg = load_config(overrides=raw)
    sim_cfg = cfg.sim_config(n, mode, seed)
    channel = _channel(cfg, sim_cfg)
    m = run_scenario(sim_cfg, channel)
    summary = m.summary()
    summary["replication"] = rep
    head = dict(mode=mode, n=n, replication=rep)
    wban = []
    for i in range(n):
        wban.append(dict(
            head, wban_id=i, attempts=int(m.attempts[i]), pdr=_nan_none(m.pdr()[i]),
            mean_delay=_nan_none(m.mean_delay()[i]), goodput=float(m.goodput()[i]),
            throughput_bps=float(m.throughput()[i]), drop_rate=_nan_none(m.drop_rate()[i]),
            collision_prob=_nan_none(m.collision_prob()[i]),
        ))
    reqs = [dict(head, **r.__dict__) for r in check_requirements(m)]
    series = [dict(head, **r) for r in m.series]
    return summary, wban, reqs, series


def _nan_none(x):
    x = float(x)
    return None if np.isnan(x) else x


def _channel(cfg: ScenarioConfig, sim_cfg: SimConfig):
    v = cfg.values
    if sim_cfg.outcome == "collision":
        return None
    if v["channel.mode"] == "trace":
        return make_channel("trace", sim_cfg.n, trace_path=v["channel.trace_path"],
                            noise_power=dbm_to_watts(v["channel.noise_dbm"]))
    kw = cfg.channel_kwargs(sim_cfg.seed)
    return make_channel("synthetic", sim_cfg.n, superframe_len=sim_cfg.mac.superframe_len, **kw)


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def cmd_run(cfg: ScenarioConfig, out: Path) -> int:
    v = cfg.values
    jobs = [
        (cfg.raw, n, mode, v["seed"] + rep, rep)
        for n in v["n_wbans"] for mode in v["mode"] for rep in range(v["replications"])
    ]
    results = _map(_simulate, jobs, v["workers"])
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash
    write_csv(out / "summary.csv", SUMMARY_FIELDS, [r[0] for r in results], h)
    write_csv(out / "wban.csv", WBAN_FIELDS, [w for r in results for w in r[1]], h)
    write_csv(out / "requirements.csv", REQ_FIELDS, [q for r in results for q in r[2]], h)
    if v["record_series"]:
        fields = ("mode", "n", "replication") + SERIES_FIELDS
        write_csv(out / "metrics.csv", fields, [s for r in results for s in r[3]], h)
    for s in (r[0] for r in results):
        print(
            f"{s['mode']:<13} N={s['n']:<3} rep={s['replication']} throughput={s['throughput_bps']:.0f} bit/s "
            f"pdr={_show(s['pdr'])} delay={_show(s['mean_delay_s'])} s J/bit={_show(s['energy_per_bit'])}"
        )
    return 0


def _show(x):
    return "n/a" if x is None else f"{x:.4g}"


# -- analytic model validation ------------------------------------------------------------


def _validate_one(job):
    raw, n, seed = job
    cfg = load_config(overrides=raw)
    mac = cfg.mac_params()
    sim_cfg = SimConfig(n=n, superframes=cfg["validate.superframes"], seed=seed, outcome="collision",
                        mac=mac, baseline_rate=mac.rate_set[0], record_series=False)
    m = run_scenario(sim_cfg)
    a = solve_fixed_point(n, mac)
    s = m.summary()
    pf_sim, gp_sim = s["collision_prob"], s["goodput"] / n

    def rel(x, y):
        return None if x is None or y == 0 else abs(x - y) / abs(y)

    return dict(
        n=n, tau=a.tau, pf=a.pf, collision_prob_analytic=a.collision_prob, collision_prob_sim=pf_sim,
        collision_relerr=rel(pf_sim, a.collision_prob), goodput_analytic=a.goodput, goodput_sim=gp_sim,
        goodput_relerr=rel(gp_sim, a.goodput), tau_sim=s["tau"],
        delay_analytic=a.mean_delay, delay_sim=s["mean_delay_s"], superframes=cfg["validate.superframes"],
        seed=seed,
    )


def cmd_validate(cfg: ScenarioConfig, out: Path) -> int:
    v = cfg.values
    rows = _map(_validate_one, [(cfg.raw, n, v["seed"]) for n in v["n_wbans"]], v["workers"])
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash
    write_csv(out / "markov_validation.csv", VALIDATION_FIELDS, rows, h)
    grid = np.round(np.concatenate([np.arange(0.0, 0.50, 0.01), np.arange(0.51, 1.0, 0.01)]), 2)
    write_csv(out / "closed_form.csv", CLOSED_FORM_FIELDS, closed_form_report(grid), h)
    for r in rows:
        print(f"N={r['n']:<3} collision analytic={r['collision_prob_analytic']:.4f} sim={r['collision_prob_sim']:.4f} "
              f"goodput analytic={r['goodput_analytic']:.4f} sim={r['goodput_sim']:.4f}")
    return 0


# -- efficiency ---------------------------------------------------------------------------


def cmd_poa(cfg: ScenarioConfig, out: Path) -> int:
    v = cfg.values
    mac = cfg.mac_params()
    exp = poa_experiment(
        v["n_wbans"], v["poa.instances"], v["seed"], cfg.link_config(mac), cfg.pdr_model(), mac,
        cfg.backoff_config(), v["poa.exact_cap"], channel_kw=_poa_channel_kw(cfg),
        progress=lambda n: log.info("PoA done for N=%d", n),
    )
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash
    write_poa_csv(out / "poa_instances.csv", exp.instances, h)
    write_poa_table(out / "poa_report.csv", exp.table, h)
    for row in exp.table:
        print(f"N={row['n']:<3} {row['game_tag']:<8} PoA={row['poa']:.4f} exp(1/PoA)={row['exp_inv_poa']:.4f} "
              f"L={row['l_metric']:.4g} instances={row['instances']} skipped={row['skipped']}")
    return 0


def _poa_channel_kw(cfg):
    kw = cfg.channel_kwargs(0)
    kw.pop("seed")
    return kw


# -- requirement check on earlier output ------------------------------------------------------


def cmd_check(path: Path, out: Path | None) -> int:
    if not path.exists():
        raise ConfigError(f"input file not found: {path}")
    groups: dict = {}
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["mode"], int(row["n"]), int(row["replication"]))
            groups.setdefault(key, []).append(row)
    rows = []
    for (mode, n, rep), recs in groups.items():
        num = lambda s: float(s) if s else np.nan  # noqa: E731
        res = check_requirements(dict(n=n, pdr=[num(r["pdr"]) for r in recs],
                                      mean_delay=[num(r["mean_delay"]) for r in recs]))
        for r in res:
            rows.append(dict(mode=mode, n=n, replication=rep, **r.__dict__))
            print(f"{mode:<13} N={n:<3} rep={rep} {r.requirement:<18} {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "requirements.csv", REQ_FIELDS, rows, "")
    return 0


# -- argument handling --------------------------------------------------------------------------

VERBS = ("run", "validate-markov", "poa", "check")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wbancoex", description="Coexisting WBAN simulator, games and reports.")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, n_help="WBAN counts, e.g. 10, 2..10 or 2,5,8"):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="base seed (replication r uses seed + r)")
        p.add_argument("--n", help=n_help)
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")

    p = sub.add_parser("run", help="simulate a scenario (or name another verb)")
    p.add_argument("target", nargs="?", help=f"preset ({', '.join(PRESETS)}) or one of validate-markov, poa, check")
    common(p)
    p.add_argument("--mode", help="comma-separated modes: baseline-tdma, link-game, backoff-game, both")
    p.add_argument("--superframes", type=int)
    p.add_argument("--input", help="per-WBAN CSV for check")
    p.add_argument("--instances", type=int)

    p = sub.add_parser("validate-markov", help="analytic model against collision-only simulation")
    common(p)
    p.add_argument("--superframes", type=int)

    p = sub.add_parser("poa", help="Monte-Carlo Price of Anarchy for both games")
    common(p)
    p.add_argument("--instances", type=int)

    p = sub.add_parser("check", help="requirement check on a per-WBAN CSV")
    p.add_argument("--input", required=False, default="out/wban.csv")
    p.add_argument("--out")
    return ap


def _overrides(args, verb) -> dict:
    o = {}
    for item in getattr(args, "set", []) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, val = item.split("=", 1)
        o[k.strip()] = val.strip()
    if getattr(args, "seed", None) is not None:
        o["seed"] = str(args.seed)
    if getattr(args, "n", None):
        o["n_wbans"] = args.n
    if getattr(args, "mode", None):
        o["mode"] = args.mode
    if getattr(args, "superframes", None) is not None:
        o["validate.superframes" if verb == "validate-markov" else "superframes"] = str(args.superframes)
    if getattr(args, "instances", None) is not None:
        o["poa.instances"] = str(args.instances)
    if getattr(args, "out", None):
        o["output_dir"] = args.out
    return o


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    verb = args.verb
    preset = None
    if verb == "run" and args.target:
        if args.target in VERBS[1:]:
            verb = args.target
        elif args.target in PRESETS:
            preset = args.target
        else:
            print(f"error: unknown preset or verb {args.target!r}", file=sys.stderr)
            return 2
    try:
        if verb == "check":
            inp = Path(getattr(args, "input", None) or "out/wban.csv")
            return cmd_check(inp, Path(args.out) if args.out else None)
        if verb == "validate-markov" and preset is None:
            preset = "validation"
        cfg = load_config(args.config, preset, _overrides(args, verb))
        out = Path(cfg["output_dir"])
        if verb == "run":
            return cmd_run(cfg, out)
        if verb == "validate-markov":
            return cmd_validate(cfg, out)
        return cmd_poa(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
