"""Command-line entry point: simulate, fit, convert, diagnose, catalog.

Exit codes: 0 success, 2 invalid input or configuration, 3 a computational
cap was hit, 4 file input/output failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import RunConfig, parse_config
from .configsets import ConfigCatalog, build_catalog
from .errors import BinMRFError, DataIOError, ValidationError
from .io import (
    atomic_write,
    format_covariates,
    format_vector,
    read_covariates,
    read_image,
    read_state,
    read_states,
    read_vector,
    state_line,
    write_csv,
    write_image,
)
from .lattice import Boundary, LatticeSpec, check_fits
from .likelihood import gibbs_sample, make_engine
from .model import BinaryImage, CovariateField, PartitionState
from .param import build_conversion_table, beta_to_phi, canonical_label, independence_phi, ising_phi, phi_to_beta
from .sampler import KERNELS, ChainRecord, Counters, default_init, run_chain
from .stats import (
    DEFAULT_STATISTICS,
    Statistic,
    beta_posterior,
    pair_matrix,
    partition_frequencies,
    posterior_predictive,
    r_histogram,
    statistic,
)
from .synthetic import red_deer_like

log = logging.getLogger("binmrf")

META_MARKER = "binmrf_meta"


# -- shared helpers -----------------------------------------------------------------

def _load_data(cfg: RunConfig) -> tuple[BinaryImage, Optional[CovariateField]]:
    if cfg["data.image"] is None:
        raise ValidationError("data.image is required (use --data)")
    x = read_image(cfg["data.image"], cfg.boundary())
    cov = None
    if cfg["data.covariates"] is not None:
        cov, cmask = read_covariates(cfg["data.covariates"], x.spec.n, x.spec.m)
        if cmask is not None and not cmask.all():
            if x.spec.is_torus:
                raise ValidationError("a covariate mask needs the free boundary")
            if x.spec.mask is not None and not np.array_equal(x.spec.mask_array, cmask):
                raise ValidationError("image mask and covariate mask column disagree")
            x = BinaryImage(x.data * cmask, LatticeSpec.with_mask(cmask))
    return x, cov


def _catalog(cfg: RunConfig, spec: LatticeSpec) -> ConfigCatalog:
    tpl = cfg.template()
    check_fits(spec, tpl)
    return build_catalog(tpl, cfg["model.template_cap"])


def _trace_header(n_theta: int) -> list[str]:
    return (["iteration", "r", "value_min", "value_max", "value_sumsq"]
            + [f"theta_{k + 1}" for k in range(n_theta)]
            + ["log_posterior"] + [f"accept_{k}" for k in KERNELS])


def _trace_row(rec: ChainRecord) -> list:
    v = np.asarray(rec.state.values)
    return ([rec.iteration, rec.state.r, float(v.min()), float(v.max()), float(np.sum(v * v))]
            + list(rec.state.theta) + [rec.log_posterior] + [rec.accepted.get(k) for k in KERNELS])


def _meta(cfg: RunConfig, extra: dict) -> str:
    doc = {META_MARKER: 1, "version": __version__, "config": cfg.nested(), **extra}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _config_path(path):
    """Accept either a plain config file or a previous run's meta.json."""
    if path is None or not str(path).endswith(".json"):
        return path, None
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError):
        return path, None
    if isinstance(doc, dict) and META_MARKER in doc:
        return None, {f"{s}.{k}": v for s, sec in doc["config"].items() for k, v in sec.items()}
    return path, None


def _parse(args, overrides: dict) -> RunConfig:
    path, from_meta = _config_path(getattr(args, "config", None))
    if from_meta is not None:
        merged = dict(from_meta)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return parse_config(None, merged)
    return parse_config(path, overrides)


# -- simulate -------------------------------------------------------------------------

_NAMED = re.compile(r"(ising|independence)\(\s*([-+0-9.eE]+)\s*\)")


def _simulation_state(model: str, cfg: RunConfig) -> PartitionState:
    match = _NAMED.fullmatch(model.strip())
    if match:
        cat = build_catalog(cfg.template(), cfg["model.template_cap"])
        value = float(match.group(2))
        phi = ising_phi(value, cat) if match.group(1) == "ising" else independence_phi(value, cat)
        return PartitionState.from_phi(cat, phi, centre=True)
    kind, _, path = model.partition(":")
    cat = build_catalog(cfg.template(), cfg["model.template_cap"])
    if kind == "phi":
        phi = read_vector(path, cat.class_count)
        return PartitionState.from_phi(cat, phi, centre=True)
    if kind == "state":
        return read_state(path, cat)
    raise ValidationError(
        f"unknown model {model!r}; use ising(w), independence(p), phi:FILE, state:FILE or red-deer")


def cmd_simulate(args) -> int:
    cfg = _parse(args, {
        "simulate.model": args.model, "simulate.n": args.n, "simulate.m": args.m,
        "simulate.sweeps": args.sweeps, "simulate.format": args.format,
        "data.boundary": args.boundary, "model.template": args.template,
        "data.covariates": args.covariates, "sampler.seed": args.seed,
    })
    out = Path(args.output)
    model = cfg["simulate.model"]
    if model is None:
        raise ValidationError("simulate.model is required (use --model)")
    seed = cfg["sampler.seed"]
    if model == "red-deer":
        n, m = cfg["simulate.n"] or 30, cfg["simulate.m"] or 40
        survey = red_deer_like(n, m, seed=seed, sweeps=cfg["simulate.sweeps"])
        write_image(out, survey.image, "text")
        cov_path = out.with_name(out.stem + "_covariates.csv")
        atomic_write(cov_path, format_covariates(survey.covariates, survey.image.spec.mask_array))
        truth_path = out.with_name(out.stem + "_truth.json")
        atomic_write(truth_path, json.dumps(survey.truth.to_dict()) + "\n")
        atomic_write(str(out) + ".meta.json", _meta(cfg, {"image": str(out), "covariates": str(cov_path),
                                                           "truth": str(truth_path)}))
        return 0
    if cfg["simulate.n"] is None or cfg["simulate.m"] is None:
        raise ValidationError("simulate.n and simulate.m are required (use --n and --m)")
    spec = LatticeSpec(cfg["simulate.n"], cfg["simulate.m"], cfg.boundary())
    z = _simulation_state(model, cfg)
    check_fits(spec, z.catalog.template)
    cov = None
    if cfg["data.covariates"] is not None:
        cov, cmask = read_covariates(cfg["data.covariates"], spec.n, spec.m)
        if cmask is not None and not cmask.all():
            spec = LatticeSpec.with_mask(cmask)
    x = gibbs_sample(z, spec, cov, sweeps=cfg["simulate.sweeps"], rng=np.random.default_rng(seed))
    write_image(out, x, cfg["simulate.format"])
    atomic_write(str(out) + ".meta.json", _meta(cfg, {"image": str(out), "state": z.to_dict()}))
    return 0


# -- fit --------------------------------------------------------------------------------

def cmd_fit(args) -> int:
    cfg = _parse(args, {
        "data.image": args.data, "data.covariates": args.covariates, "data.boundary": args.boundary,
        "model.template": args.template, "likelihood.engine": args.engine,
        "likelihood.exchange_sweeps": args.exchange_sweeps, "prior.gamma": args.gamma,
        "prior.sigma_phi": args.sigma_phi, "sampler.sigma": args.sigma,
        "sampler.iterations": args.iterations, "sampler.thinning": args.thinning,
        "sampler.seed": args.seed, "sampler.tree_depth": args.tree_depth,
        "sampler.checkpoint_every": args.checkpoint_every, "sampler.init": args.init,
        "output.dir": args.output,
    })
    outdir = Path(cfg["output.dir"] or "run")
    x, cov = _load_data(cfg)
    catalog = _catalog(cfg, x.spec)
    engine = make_engine(cfg["likelihood.engine"], x.spec, catalog, cov,
                         exchange_sweeps=cfg["likelihood.exchange_sweeps"],
                         transfer_cap=cfg["likelihood.transfer_cap"])
    prior = cfg.prior(catalog.class_count)
    scfg = cfg.sampler()
    n_theta = cov.K if cov is not None else 0
    if cfg["sampler.init"] is not None:
        init = read_state(cfg["sampler.init"], catalog)
        if not init.theta and n_theta:
            init = init.with_theta((0.0,) * n_theta)
        if len(init.theta) != n_theta:
            raise ValidationError(f"initial state has {len(init.theta)} covariate coefficients, data has {n_theta}")
    else:
        init = default_init(catalog, n_theta)

    header = _trace_header(n_theta)
    trace_rows: list = []
    state_lines: list[str] = []
    start, counters = 0, None
    ckpt_path = outdir / "checkpoint.json"
    if args.resume:
        start, init, counters, trace_rows, state_lines = _resume(outdir, catalog, header)

    def save(it, z, ctr):
        _write_outputs(outdir, header, trace_rows, state_lines)
        atomic_write(ckpt_path, json.dumps({
            "iteration": it, "state": z.to_dict(),
            "proposed": ctr.proposed, "accepted": ctr.accepted,
        }) + "\n")

    log.info("fitting %dx%d %s lattice, template %s (%d classes), engine %s",
             x.spec.n, x.spec.m, x.spec.boundary.value, catalog.template.label(), catalog.class_count, engine.name)
    t0 = time.perf_counter()
    last = None
    for rec in run_chain(x, scfg, engine, prior, init, start, counters, save):
        trace_rows.append(_trace_row(rec))
        state_lines.append(state_line(rec.iteration, rec.state))
        last = rec
    elapsed = time.perf_counter() - t0
    _write_outputs(outdir, header, trace_rows, state_lines)
    rates = last.counters.rates() if last is not None else {}
    log.info("finished in %.1f s; acceptance %s", elapsed,
             ", ".join(f"{k} {v:.3f}" for k, v in rates.items() if v == v))
    atomic_write(outdir / "meta.json", _meta(cfg, {
        "engine": engine.describe(),
        "lattice": {"n": x.spec.n, "m": x.spec.m, "boundary": x.spec.boundary.value,
                    "active_nodes": int(x.spec.mask_array.sum())},
        "catalog": {"template": catalog.template.label(), "classes": catalog.class_count},
        "covariates": list(cov.names) if cov is not None else [],
        "acceptance_rates": {k: (None if v != v else v) for k, v in rates.items()},
    }))
    if last is not None:
        save(last.iteration, last.state, last.counters)
    return 0


def _write_outputs(outdir: Path, header, trace_rows, state_lines):
    write_csv(outdir / "trace.csv", header, trace_rows)
    atomic_write(outdir / "states.jsonl", "".join(line + "\n" for line in state_lines))


def _resume(outdir: Path, catalog, header):
    path = outdir / "checkpoint.json"
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataIOError(f"cannot resume: {exc}") from exc
    it = int(doc["iteration"])
    z = PartitionState.from_dict(catalog, doc["state"])
    counters = Counters(dict(doc["proposed"]), dict(doc["accepted"]))
    rows = [ln.split(",") for ln in (outdir / "trace.csv").read_text().splitlines()[1:]]
    rows = [r for r in rows if int(r[0]) <= it]
    states = [ln for ln in (outdir / "states.jsonl").read_text().splitlines()
              if ln and json.loads(ln)["iteration"] <= it]
    log.info("resuming after iteration %d", it)
    return it, z, counters, rows, states


# -- convert ------------------------------------------------------------------------------

def cmd_convert(args) -> int:
    from .lattice import TemplateClique

    cat = build_catalog(TemplateClique.parse(args.template), args.template_cap)
    spec = LatticeSpec(args.n, args.m)
    table = build_conversion_table(spec, cat)
    vec = read_vector(args.input, cat.class_count)
    out = phi_to_beta(vec, table) if args.source == "phi" else beta_to_phi(vec, table)
    labels = [canonical_label(cat, c) for c in range(cat.class_count)]
    text = format_vector(out, labels)
    if args.output:
        atomic_write(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


# -- catalog ---------------------------------------------------------------------------------

def format_catalog(cat: ConfigCatalog) -> str:
    tpl = cat.template
    lines = [f"# template {tpl.label()}: {cat.class_count} classes, {cat.free_parameters} free parameters",
             "id  order  multiplicity  bitmap"]
    for c in cat.classes:
        lines.append(f"{c.id:<3} {c.order:<6} {c.multiplicity:<13} {c.bitmap(tpl.k, tpl.l)}")
    return "\n".join(lines) + "\n"


def cmd_catalog(args) -> int:
    from .lattice import TemplateClique

    cat = build_catalog(TemplateClique.parse(args.template), args.template_cap)
    sys.stdout.write(format_catalog(cat))
    return 0


# -- diagnose ----------------------------------------------------------------------------------

def cmd_diagnose(args) -> int:
    run = Path(args.run)
    meta_path = run / "meta.json"
    if not meta_path.exists():
        raise DataIOError(f"{meta_path} not found")
    cfg = _parse(argparse.Namespace(config=str(meta_path)), {})
    x, cov = _load_data(cfg)
    catalog = _catalog(cfg, x.spec)
    records = [(it, z) for it, z in read_states(run / "states.jsonl", catalog) if it > args.burn_in]
    if not records:
        raise ValidationError("no states left after burn-in")
    states = [z for _, z in records]
    out = Path(args.output) if args.output else run
    K = catalog.class_count
    labels = [canonical_label(catalog, c) for c in range(K)]

    pm = pair_matrix(states)
    write_csv(out / "pair_matrix.csv", ["class"] + labels,
              ([labels[a]] + list(pm[a]) for a in range(K)))
    write_csv(out / "r_hist.csv", ["r", "probability"], ((r + 1, p) for r, p in enumerate(r_histogram(states))))
    write_csv(out / "partitions.csv", ["rank", "probability", "groups"],
              ((i + 1, p, " | ".join(" ".join(labels[c] for c in g) for g in groups))
               for i, (groups, p) in enumerate(partition_frequencies(states)[: args.top])))
    try:
        summary = beta_posterior(states, x.spec)
        write_csv(out / "beta_posterior.csv", ["class", "label", "mean", "lower_95", "upper_95"],
                  ((c, labels[c], summary.mean[c], summary.lower[c], summary.upper[c]) for c in range(K)))
    except ValidationError as exc:
        log.warning("beta summary skipped: %s", exc)
    _acceptance_summary(run, out)

    if args.ppc_states > 0:
        stats = [Statistic.parse(s) for s in args.statistics.split(",")] if args.statistics else list(DEFAULT_STATISTICS)
        stats = [s for s in stats if s.kind != "pattern" or (s.template().k <= x.spec.n and s.template().l <= x.spec.m)]
        idx = np.unique(np.linspace(0, len(states) - 1, min(args.ppc_states, len(states))).round().astype(int))
        draws = posterior_predictive([states[i] for i in idx], x.spec, stats, 1, args.ppc_sweeps,
                                     np.random.default_rng(args.seed), cov)
        for s in stats:
            write_csv(out / f"ppc_{s.name}.csv", ["draw", "value"], enumerate(draws[s.name]))
        write_csv(out / "ppc_observed.csv", ["statistic", "observed"], ((s.name, statistic(x, s)) for s in stats))
    return 0


def _acceptance_summary(run: Path, out: Path):
    path = run / "trace.csv"
    if not path.exists():
        log.warning("trace.csv not found; acceptance summary skipped")
        return
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    result = []
    for k in KERNELS:
        col = header.index(f"accept_{k}")
        flags = [r[col] for r in rows if r[col] != ""]
        if flags:
            result.append((k, len(flags), sum(f == "1" for f in flags) / len(flags)))
    write_csv(out / "acceptance.csv", ["kernel", "recorded", "rate"], result)


# -- argument parsing -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="binmrf", description="Bayesian binary Markov random fields with partition priors")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate an image by Gibbs sampling")
    s.add_argument("--config")
    s.add_argument("--model", help="ising(w), independence(p), phi:FILE, state:FILE or red-deer")
    s.add_argument("--n", type=int)
    s.add_argument("--m", type=int)
    s.add_argument("--boundary", choices=[b.value for b in Boundary])
    s.add_argument("--template")
    s.add_argument("--covariates")
    s.add_argument("--sweeps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--format", choices=["text", "pbm", "p1"])
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="sample the posterior of the partition state")
    f.add_argument("--config", help="YAML/JSON config or a previous run's meta.json")
    f.add_argument("--data")
    f.add_argument("--covariates")
    f.add_argument("--template")
    f.add_argument("--boundary", choices=[b.value for b in Boundary])
    f.add_argument("--engine", choices=["brute", "transfer", "exchange", "pseudo", "none"])
    f.add_argument("--exchange-sweeps", type=int)
    f.add_argument("--gamma", type=float)
    f.add_argument("--sigma-phi", type=float)
    f.add_argument("--sigma", type=float)
    f.add_argument("--iterations", type=int)
    f.add_argument("--thinning", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--tree-depth", type=int)
    f.add_argument("--checkpoint-every", type=int)
    f.add_argument("--init", help="initial state JSON document")
    f.add_argument("--output", help="output directory")
    f.add_argument("--resume", action="store_true", help="continue from the output directory's checkpoint")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("convert", help="convert between phi and beta vectors on a torus")
    c.add_argument("--template", default="2x2")
    c.add_argument("--template-cap", type=int, default=12)
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--m", type=int, required=True)
    c.add_argument("--from", dest="source", choices=["phi", "beta"], required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--output")
    c.set_defaults(func=cmd_convert)

    d = sub.add_parser("diagnose", help="posterior summaries of a fit run")
    d.add_argument("--run", required=True, help="fit output directory")
    d.add_argument("--output")
    d.add_argument("--burn-in", type=int, default=0)
    d.add_argument("--top", type=int, default=20, help="number of partitions listed")
    d.add_argument("--ppc-states", type=int, default=100, help="states used for predictive checks (0 skips)")
    d.add_argument("--ppc-sweeps", type=int, default=100)
    d.add_argument("--statistics", help="comma list, e.g. sum_ones,equal_vertical,pattern:11/11")
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_diagnose)

    k = sub.add_parser("catalog", help="list the configuration classes of a template")
    k.add_argument("--template", required=True)
    k.add_argument("--template-cap", type=int, default=12)
    k.set_defaults(func=cmd_catalog)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BinMRFError as exc:
        print(f"binmrf: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"binmrf: error: {exc}", file=sys.stderr)
        return DataIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
