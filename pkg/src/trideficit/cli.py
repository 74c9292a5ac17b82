"""Command-line front end.

Every subcommand writes a CSV with a header row to ``--output``, or to stdout
when no output path is given. Floats carry 17 significant digits, so identical
arguments and seed give byte-identical files whatever ``--workers`` is. Report
subcommands also print a summary table: to stdout when the CSV goes to a file,
to stderr otherwise.

``--config FILE`` reads a JSON object whose keys are the long flag names of the
subcommand (``n_samples`` or ``n-samples``). Flags on the command line override
it. There is no environment-variable configuration.

Failures print one JSON line on stderr, ``{"error": ..., "code": ..., "message": ...}``,
and exit with 2 (usage), 3 (parameter outside an operation's domain) or
4 (degenerate estimate; the CSV is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import numbers
import sys
from fractions import Fraction
from math import comb
from typing import Any, Callable, Iterable, Sequence, TextIO

import numpy as np

from trideficit import counterex, dist, graphs, nets, rare, spectral

__all__ = ["EXIT_USAGE", "EXIT_DOMAIN", "EXIT_DEGENERATE", "CliError", "build_parser", "run", "main"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DOMAIN = 3
EXIT_DEGENERATE = 4

_KINDS = {EXIT_USAGE: "usage", EXIT_DOMAIN: "domain", EXIT_DEGENERATE: "degenerate"}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise CliError(EXIT_USAGE, f"{self.prog}: {message}")


# -- output -----------------------------------------------------------------


def _cell(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, numbers.Integral):
        return str(int(x))
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, numbers.Real):
        return format(float(x), ".17g")
    return str(x)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def _table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    def short(x):
        if isinstance(x, numbers.Real) and not isinstance(x, numbers.Integral):
            return format(float(x), ".6g")
        return _cell(x)

    cells = [list(header)] + [[short(x) for x in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


class _Result:
    """What a subcommand produced: CSV content, an optional summary and exit code."""

    def __init__(self, header, rows, summary: str | None = None, code: int = EXIT_OK, diagnostic: str = ""):
        self.header = tuple(header)
        self.rows = [tuple(r) for r in rows]
        self.summary = summary
        self.code = code
        self.diagnostic = diagnostic


# -- parameter helpers --------------------------------------------------------


def _need_seed(args) -> int:
    if args.seed is None:
        raise CliError(EXIT_DOMAIN, "--seed is required for stochastic subcommands")
    return args.seed


def _model(args) -> rare.GraphModel:
    if args.model == "gnm":
        if args.m is None:
            raise CliError(EXIT_DOMAIN, "gnm needs --m")
        return rare.GraphModel.gnm(args.n, args.m)
    if args.p is None:
        raise CliError(EXIT_DOMAIN, "gnp needs --p")
    return rare.GraphModel.gnp(args.n, args.p)


def _parse_atoms(text: str) -> dist.EdgeDistribution:
    atoms = []
    for part in text.split(","):
        try:
            v, p = part.split("@")
            atoms.append((float(v), float(p)))
        except ValueError:
            raise CliError(EXIT_USAGE, f"bad atom {part!r}; expected value@prob") from None
    return dist.finite_support(atoms)


def _laws(args) -> list[tuple[str, dist.EdgeDistribution]]:
    if args.atoms is not None:
        return [(args.atoms, _parse_atoms(args.atoms))]
    return [(repr(q), dist.centered_bernoulli(q)) for q in args.q]


def _bernoulli_closed(q: float) -> tuple[float, float]:
    if q == 0.5:
        return 2.0, 0.0
    return math.log((1 - q) / q) / (1 - 2 * q), 1 - 2 * q


def _threshold(args, model: rare.GraphModel, seed: int) -> float:
    if (args.t is None) == (args.level is None):
        raise CliError(EXIT_DOMAIN, "give exactly one of --t and --level")
    if args.t is not None:
        return args.t
    pilot_seed = seed + 1 if args.pilot_seed is None else args.pilot_seed
    return rare.deficit_quantile(model, args.level, args.pilot_samples, pilot_seed, args.workers)


# -- subcommands --------------------------------------------------------------

RATE_FIELDS = ("law", "L", "s_star", "L_closed", "s_star_closed", "subg_const", "duality_residual")


def cmd_rate(args) -> _Result:
    rows = []
    for name, law in _laws(args):
        r = dist.rate_constant(law, positive_only=args.positive_only)
        closed = _bernoulli_closed(law.q) if law.q is not None and not args.positive_only else (math.nan, math.nan)
        rows.append((name, r.L, r.s_star, *closed, r.subg_const, r.duality_residual))
    return _Result(RATE_FIELDS, rows)


IDENTITY_FIELDS = ("replica", "n", "m", "p", "residual", "inequality_holds")


def cmd_identity_check(args) -> _Result:
    seed = _need_seed(args)
    N = comb(args.n, 2)
    if not 0 <= args.m <= N:
        raise CliError(EXIT_DOMAIN, f"m must lie in [0, {N}]")
    p = Fraction(args.m, N) if args.p is None else Fraction(args.p)
    rows = []
    for i in range(args.samples):
        G = graphs.sample_gnm(args.n, args.m, graphs.replica_rng(seed, i))
        rows.append((i, args.n, args.m, p, graphs.centering_identity_residual(G, p), graphs.centering_inequality_holds(G)))
    bad = sum(r[4] != 0 for r in rows)
    return _Result(IDENTITY_FIELDS, rows, summary=f"{args.samples} graphs, {bad} non-zero residuals\n")


SPECTRUM_FIELDS = (
    "replica",
    "lambda_max",
    "lambda_min",
    "lambda_second_min",
    "sigma_max",
    "cubic_sum",
    "bulk_cubic",
    "extreme_cubic",
    "capped_stat",
    "deficit",
)


def cmd_spectrum(args) -> _Result:
    seed = _need_seed(args)
    model = _model(args)
    cfg = spectral.BulkStatConfig(K=args.K, n=model.n)
    rows = []
    for i in range(args.samples):
        adj = model.sample(1, graphs.replica_rng(seed, i))
        d = float(rare.deficits(model, adj)[0])
        G = graphs.Graph.from_adjacency(adj[0])
        S = spectral.spectrum(graphs.center(G, model.edge_prob).matrix)
        split = spectral.bulk_extreme_split(S, cfg)
        lam = S.eigenvalues
        rows.append(
            (i, lam[0], lam[-1], lam[-2], S.singular_values[0], S.cubic_sum, split.bulk_cubic,
             split.extreme_cubic, spectral.capped_cubic_stat(S, cfg), d)
        )
    return _Result(SPECTRUM_FIELDS, rows)


NET_FIELDS = ("kind", "dim", "k", "eps", "net_size", "max_distance", "mean_distance", "n_draws", "passed")


def cmd_net_verify(args) -> _Result:
    seed = _need_seed(args)
    if args.kind == "euclidean":
        pts = nets.euclidean_net(args.d, args.eps, max_points=args.max_net_size)
        cert = nets.verify_euclidean_cover(pts, args.eps, args.draws, seed, workers=args.workers)
        dim, k, size = args.d, 0, len(pts)
    else:
        net = nets.rank_k_net(args.n, args.k, args.eps, args.kind, max_factors=args.max_net_size)
        cert = nets.verify_matrix_cover(net, args.draws, seed, workers=args.workers)
        dim, k, size = args.n, args.k, net.size
    row = (args.kind, dim, k, args.eps, size, cert.max_distance, cert.mean_distance, cert.n_draws, cert.passed)
    return _Result(NET_FIELDS, [row])


BOUND_FIELDS = ("law", "n", "k", "t", "L", "hoeffding_log_bound", "union_log_bound")


def cmd_bound(args) -> _Result:
    rows = []
    for name, law in _laws(args):
        L = nets.hoeffding_rate(law)
        for t in args.t:
            hoeff = nets.hoeffding_tail_bound(law, t)
            try:
                union = nets.union_upper_bound(law, args.n, args.k, t, args.eps, args.C)
            except ValueError:
                # t below the range where the union bound is informative
                union = math.nan
            rows.append((name, args.n, args.k, t, L, hoeff, union))
    return _Result(BOUND_FIELDS, rows)


def cmd_tail_estimate(args) -> _Result:
    seed = _need_seed(args)
    model = _model(args)
    t = _threshold(args, model, seed)
    estimates = []
    plant = None
    if args.estimator in ("naive", "both"):
        estimates.append(rare.naive_tail_estimate(model, t, args.samples, seed, args.workers))
    if args.estimator in ("tilted", "both"):
        plant = rare.PlantedConfig.calibrated(model, t, floor=args.floor, kl_budget=args.kl_budget)
        estimates.append(rare.tilted_tail_estimate(model, t, plant, args.samples, seed, args.workers))
    rows = [[e.csv_row()[f] for f in rare.TAIL_CSV_FIELDS] for e in estimates]
    summary = _table(
        ("estimator", "log_prob", "stderr", "ess", "hits", "theory"),
        [(e.estimator, e.log_prob, e.stderr, e.effective_sample_size, e.hits, e.theoretical_exponent) for e in estimates],
    )
    if plant is not None:
        summary += f"plant: ell={plant.ell} shift={plant.shift:.6g} compensate={plant.compensate}\n"
    summary += f"t = {t:.17g}\n"
    bad = [e.estimator for e in estimates if e.degenerate]
    if bad:
        return _Result(rare.TAIL_CSV_FIELDS, rows, summary, EXIT_DEGENERATE, f"no hits for {', '.join(bad)} at t={t!r}")
    return _Result(rare.TAIL_CSV_FIELDS, rows, summary)


STRUCTURE_FIELDS = ("share", "q25", "median", "q75", "accepted", "n_samples", "t", "K")


def cmd_structure_report(args) -> _Result:
    seed = _need_seed(args)
    model = _model(args)
    t = _threshold(args, model, seed)
    rep = rare.conditional_structure_report(model, t, args.samples, seed, K=args.K, workers=args.workers)
    summ = rep.summary()
    rows = [(name, *summ[name], rep.accepted, rep.n_samples, rep.t, rep.K) for name in rep.SHARES]
    summary = _table(("share", "q25", "median", "q75"), [r[:4] for r in rows])
    summary += f"accepted {rep.accepted} of {rep.n_samples} at t = {t:.6g}, K = {rep.K:.6g}\n"
    if rep.degenerate:
        return _Result(STRUCTURE_FIELDS, rows, summary, EXIT_DEGENERATE, f"no graph reached deficit t={t!r}")
    return _Result(STRUCTURE_FIELDS, rows, summary)


def cmd_counterexample(args) -> _Result:
    rows = []
    for _, law in _laws(args):
        res = counterex.search_eta(law, n_delta=args.n_delta, n_eps=args.n_eps)
        rows.extend(res.csv_rows(best_only=not args.all_rows))
    summary = None if args.all_rows else _table(counterex.SEARCH_CSV_FIELDS, rows)
    return _Result(counterex.SEARCH_CSV_FIELDS, rows, summary)


CRAMER_FIELDS = ("q", "s", "m", "empirical", "limit", "gap")


def cmd_cramer(args) -> _Result:
    law = dist.centered_bernoulli(args.q)
    rows = []
    for m in args.m:
        r = rare.cramer_check(law, m, args.s)
        rows.append((args.q, args.s, m, r.empirical, r.limit, r.gap))
    return _Result(CRAMER_FIELDS, rows)


HYPERGEO_FIELDS = ("N_pop", "K_succ", "r_trials", "s_value", "gap")


def cmd_hypergeo(args) -> _Result:
    s = args.r // 2 if args.s is None else args.s
    rows = []
    for N in args.N:
        K = min(N - 1, max(1, round(args.k_frac * N)))
        rows.append((N, K, args.r, s, rare.hypergeo_binom_gap(N, K, args.r, s)))
    summary = None
    gaps = [r[4] for r in rows]
    if len(rows) > 1 and all(g > 0 for g in gaps):
        summary = f"log-log slope of gap against N_pop: {rare.loglog_slope(args.N, gaps):.6g}\n"
    return _Result(HYPERGEO_FIELDS, rows, summary)


# -- parser -------------------------------------------------------------------

def _schema(fields: Sequence[str], extra: str = "") -> str:
    return "CSV columns: " + ", ".join(fields) + ("\n" + extra if extra else "")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=("gnm", "gnp"), default="gnm")
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--m", type=int, help="edge count for gnm")
    p.add_argument("--p", type=float, help="edge probability for gnp")


def _add_threshold(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t", type=float, help="deficit threshold on E tau - tau")
    p.add_argument("--level", type=float, help="set t to this upper quantile of the deficit from a pilot run")
    p.add_argument("--pilot-samples", type=int, default=100_000)
    p.add_argument("--pilot-seed", type=int, help="pilot seed; defaults to seed + 1")


def _add_laws(p: argparse.ArgumentParser, default_q: Sequence[float]) -> None:
    p.add_argument("--q", type=float, nargs="+", default=list(default_q), help="centered Bernoulli parameters")
    p.add_argument("--atoms", help="general law as value@prob,value@prob,... (use --atoms=...)")


COMMANDS: dict[str, tuple[Callable, str, str]] = {
    "rate": (cmd_rate, "rate constant inf Lambda*(s)/s^2 and its minimiser", _schema(RATE_FIELDS)),
    "identity-check": (
        cmd_identity_check,
        "exact centering identity and inequality on G(n,m) samples",
        _schema(IDENTITY_FIELDS, "p and residual are exact fractions."),
    ),
    "spectrum": (cmd_spectrum, "centered spectra and bulk/extreme cubic sums", _schema(SPECTRUM_FIELDS)),
    "net-verify": (cmd_net_verify, "randomised covering check of an eps-net", _schema(NET_FIELDS)),
    "bound": (
        cmd_bound,
        "Hoeffding and union (net) log tail bounds",
        _schema(BOUND_FIELDS, "union_log_bound is nan where t^2 L <= 2 n k."),
    ),
    "tail-estimate": (
        cmd_tail_estimate,
        "naive and planted-tilt estimates of ln P(E tau - tau >= t)",
        _schema(rare.TAIL_CSV_FIELDS),
    ),
    "structure-report": (
        cmd_structure_report,
        "deficit shares of graphs conditioned on a large deficit",
        _schema(STRUCTURE_FIELDS, "one row per share: " + ", ".join(rare.StructureReport.SHARES)),
    ),
    "counterexample": (
        cmd_counterexample,
        "grid search for a rank-one PSD plant beating the small-s bound",
        _schema(counterex.SEARCH_CSV_FIELDS),
    ),
    "cramer": (cmd_cramer, "exact binomial tails against the Cramer limit", _schema(CRAMER_FIELDS)),
    "hypergeo": (
        cmd_hypergeo,
        "log-pmf gap between hypergeometric and binomial laws",
        _schema(HYPERGEO_FIELDS),
    ),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of defaults for this subcommand")
    common.add_argument("--output", "-o", help="CSV path (default: stdout)")
    common.add_argument("--seed", type=int, help="master seed; required by stochastic subcommands")
    common.add_argument("--workers", type=int, default=1, help="threads; never changes results")
    common.add_argument("--max-net-size", type=int, default=nets.DEFAULT_SIZE_GUARD)

    parser = _Parser(prog="trideficit", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    subs = {}
    for name, (_, helptext, schema) in COMMANDS.items():
        subs[name] = sub.add_parser(
            name,
            parents=[common],
            help=helptext,
            description=helptext,
            epilog=schema,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )

    p = subs["rate"]
    _add_laws(p, [0.5])
    p.add_argument("--positive-only", action="store_true", help="restrict the infimum to s > 0")

    p = subs["identity-check"]
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--p", help="centering value as a fraction; default m / C(n, 2)")
    p.add_argument("--samples", type=int, default=100)

    p = subs["spectrum"]
    _add_model(p)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--K", type=float, default=1.0, help="extreme eigenvalues lie below -sqrt(K n)")

    p = subs["net-verify"]
    p.add_argument("--kind", choices=("euclidean", "rank_k", "psd_rank_k"), default="euclidean")
    p.add_argument("--d", type=int, default=3, help="dimension of the Euclidean ball")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--draws", type=int, default=10_000)

    p = subs["bound"]
    _add_laws(p, [0.5])
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--t", type=float, nargs="+", default=[20.0, 40.0, 80.0])
    p.add_argument("--eps", type=float, help="net resolution in (0, 1/2); default adapts to t")
    p.add_argument("--C", type=float, default=1.0, help="absolute constant of the net count")

    p = subs["tail-estimate"]
    _add_model(p)
    _add_threshold(p)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--estimator", choices=("naive", "tilted", "both"), default="both")
    p.add_argument("--floor", type=float, default=0.25, help="floor on |s| in the plant-size rule")
    p.add_argument("--kl-budget", type=float, help="cap on the plant's divergence in nats")

    p = subs["structure-report"]
    _add_model(p)
    _add_threshold(p)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--K", type=float, help="default: median smallest eigenvalue of unconditioned graphs")

    p = subs["counterexample"]
    _add_laws(p, [0.75])
    p.add_argument("--n-delta", type=int, default=40)
    p.add_argument("--n-eps", type=int, default=40)
    p.add_argument("--all-rows", action="store_true", help="write every grid point, not just the best")

    p = subs["cramer"]
    p.add_argument("--q", type=float, default=0.3)
    p.add_argument("--s", type=float, default=0.2)
    p.add_argument("--m", type=int, nargs="+", default=[250, 500, 1000, 2000, 4000, 8000])

    p = subs["hypergeo"]
    p.add_argument("--N", type=int, nargs="+", default=[200, 400, 800, 1600, 3200])
    p.add_argument("--k-frac", type=float, default=0.5, help="success fraction K / N")
    p.add_argument("--r", type=int, default=20)
    p.add_argument("--s", type=int, help="value at which the pmfs are compared; default r // 2")

    parser.subcommands = subs  # config keys are resolved against these
    return parser


def _config_argv(path: str, sub: argparse.ArgumentParser) -> list[str]:
    """Turn a JSON config into flag tokens placed ahead of the real flags."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_DOMAIN, f"cannot read config {path!r}: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError(EXIT_DOMAIN, "config must be a JSON object")
    actions = {a.dest: a for a in sub._actions if a.option_strings}
    tokens: list[str] = []
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("config", "help") or dest not in actions:
            raise CliError(EXIT_DOMAIN, f"unknown config key {key!r}")
        action = actions[dest]
        flag = next(s for s in action.option_strings if s.startswith("--"))
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                tokens.append(flag)
            continue
        values = value if isinstance(value, list) else [value]
        tokens.append(flag + "=" + _cell(values[0]) if len(values) == 1 else flag)
        if len(values) > 1:
            tokens.extend(_cell(v) for v in values)
    return tokens


def _parse(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        sub = parser.subcommands[args.command]
        rest = list(argv)
        i = rest.index(args.command)
        args = parser.parse_args(rest[: i + 1] + _config_argv(args.config, sub) + rest[i + 1 :])
    if args.workers < 1:
        raise CliError(EXIT_DOMAIN, "--workers must be at least 1")
    return args


def _emit_error(code: int, message: str, stream: TextIO) -> None:
    stream.write(json.dumps({"error": _KINDS[code], "code": code, "message": message}) + "\n")


def run(argv: Sequence[str] | None = None, stdout: TextIO | None = None, stderr: TextIO | None = None) -> int:
    """Execute one subcommand and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        args = _parse(argv)
        result = COMMANDS[args.command][0](args)
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except CliError as exc:
        _emit_error(exc.code, str(exc), stderr)
        return exc.code
    except ValueError as exc:
        _emit_error(EXIT_DOMAIN, str(exc), stderr)
        return EXIT_DOMAIN

    text = _csv_text(result.header, result.rows)
    if args.output:
        with open(args.output, "w", newline="") as fh:
            fh.write(text)
        if result.summary:
            stdout.write(result.summary)
    else:
        stdout.write(text)
        if result.summary:
            stderr.write(result.summary)
    if result.code != EXIT_OK:
        _emit_error(result.code, result.diagnostic, stderr)
    return result.code


def main() -> None:
    sys.exit(run())
