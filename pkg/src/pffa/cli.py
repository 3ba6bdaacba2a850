"""Command line front end.

Every subcommand is a thin client of the HTTP service: it builds a request
payload, posts it to either an in-process app instance (the default) or a
remote server (``--server``), and renders the response. Solver behavior
therefore cannot drift between the CLI and the service.

Options come from three layers, least to most specific: defaults, a config
file (``--config``, JSON or flat ``key=value`` lines with dotted keys for
the homotopy block), then explicit flags.
"""

from __future__ import annotations

import asyncio
import csv
import io
import json
import os

import click
import httpx

from .analysis import CSV_COLUMNS
from .cases import BUILTIN_BUILDERS

API = "/api/v1"


# ---------------------------------------------------------------------------
# transport


class ServiceClient:
    """Posts requests to a remote server or an in-process app."""

    def __init__(self, server: str | None):
        self.server = server.rstrip("/") if server else None

    def post(self, path: str, payload: dict) -> dict:
        if self.server:
            resp = httpx.post(self.server + API + path, json=payload,
                              timeout=None)
        else:
            resp = asyncio.run(self._in_process(path, payload))
        if resp.status_code != 200:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise click.ClickException(f"{detail}")
        return resp.json()

    async def _in_process(self, path: str, payload: dict) -> httpx.Response:
        from .service import create_app
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport,
                                     base_url="http://pffa",
                                     timeout=None) as client:
            return await client.post(API + path, json=payload)


# ---------------------------------------------------------------------------
# payload assembly


def case_payload(case_arg: str) -> dict:
    """Resolve a CLI case argument to a wire CaseSpec.

    A readable file is sent inline (.json or brace-led content is the
    native format, anything else MATPOWER); otherwise the argument must
    name a builtin case.
    """
    if os.path.exists(case_arg):
        with open(case_arg) as fh:
            text = fh.read()
        stem = os.path.splitext(os.path.basename(case_arg))[0]
        native = case_arg.endswith(".json") or text.lstrip().startswith("{")
        return {"format": "native" if native else "matpower",
                "text": text, "name": stem}
    if case_arg in BUILTIN_BUILDERS:
        return {"format": "builtin", "name": case_arg}
    raise click.ClickException(
        f"case {case_arg!r} is neither a file nor a builtin "
        f"({', '.join(sorted(BUILTIN_BUILDERS))})")


def parse_config(path: str) -> dict:
    """Read solver options from a JSON or flat key=value file."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise click.ClickException(f"{path}: expected a JSON object")
        return doc
    doc: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.ClickException(
                f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        target = doc
        while "." in key:
            head, key = key.split(".", 1)
            target = target.setdefault(head, {})
        target[key] = _coerce(value)
    return doc


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "on", "yes"):
        return True
    if low in ("false", "off", "no"):
        return False
    for kind in (int, float):
        try:
            return kind(value)
        except ValueError:
            pass
    if value.startswith("["):
        return json.loads(value)
    return value


def read_placement_file(path: str) -> list[int]:
    """Bus ids, one per line or comma separated, or a JSON list."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("["):
        return [int(b) for b in json.loads(text)]
    buses = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            buses.extend(int(tok) for tok in line.replace(",", " ").split())
    return buses


def common_options(fn):
    decorators = [
        click.option("--server", default=None, metavar="URL",
                     help="Send requests to a running service instead of "
                          "solving in process."),
        click.option("--config", "config_path", default=None,
                     type=click.Path(exists=True, dir_okay=False),
                     help="Options file, JSON or flat key=value."),
        click.option("--feasibility", type=click.Choice(["on", "off"]),
                     default=None, help="Couple the adjoint network."),
        click.option("--homotopy", "homotopy_flag",
                     type=click.Choice(["on", "off"]), default=None,
                     help="Transmission-stepping continuation."),
        click.option("--qlimits", type=click.Choice(["outer", "ignore"]),
                     default=None, help="Generator reactive limit handling."),
        click.option("--placement", default=None, metavar="all|loads|FILE",
                     help="Feasibility source placement: every bus, load "
                          "buses, or explicit bus ids from a file."),
        click.option("--nr-tolerance", type=float, default=None),
        click.option("--max-iterations", type=int, default=None),
        click.option("--delta-v-max", type=float, default=None),
        click.option("--q-step-max", type=float, default=None),
        click.option("--v-mag-min", type=float, default=None),
        click.option("--v-mag-max", type=float, default=None),
        click.option("--v-floor", type=float, default=None),
        click.option("--start", type=click.Choice(["flat", "from_input"]),
                     default=None),
        click.option("--infeasibility-threshold", type=float, default=None),
        click.option("--max-outer-iterations", type=int, default=None),
        click.option("--second-order-cap", type=int, default=None),
        click.option("--y-scale", type=float, default=None),
        click.option("--mu-start", type=float, default=None),
        click.option("--mu-divisor", type=float, default=None),
        click.option("--mu-floor", type=float, default=None),
        click.option("--max-subproblem-iterations", type=int, default=None),
        click.option("--max-refinements", type=int, default=None),
        click.option("--dump-matrix", "matrix_dump_path", default=None,
                     type=click.Path(dir_okay=False),
                     help="Write the assembled system in MatrixMarket "
                          "format (in-process runs only)."),
    ]
    for dec in reversed(decorators):
        fn = dec(fn)
    return fn


_HOMOTOPY_KEYS = ("y_scale", "mu_start", "mu_divisor", "mu_floor",
                  "max_subproblem_iterations", "max_refinements")
_OPTION_KEYS = ("nr_tolerance", "max_iterations", "delta_v_max",
                "q_step_max", "v_mag_min", "v_mag_max", "v_floor",
                "start", "infeasibility_threshold", "max_outer_iterations",
                "second_order_cap", "matrix_dump_path")


def options_payload(config_path, feasibility, homotopy_flag, qlimits,
                    placement, **flags) -> dict:
    doc = parse_config(config_path) if config_path else {}
    homotopy = doc.setdefault("homotopy", {})
    for key in _OPTION_KEYS:
        if flags.get(key) is not None:
            doc[key] = flags[key]
    for key in _HOMOTOPY_KEYS:
        if flags.get(key) is not None:
            homotopy[key] = flags[key]
    if feasibility is not None:
        doc["feasibility"] = feasibility == "on"
    if homotopy_flag is not None:
        homotopy["enabled"] = homotopy_flag == "on"
    if qlimits is not None:
        doc["q_limit_mode"] = qlimits
    if placement is not None:
        if placement in ("all", "loads"):
            doc["placement"] = placement
        else:
            doc["placement"] = "explicit"
            doc["placement_buses"] = read_placement_file(placement)
    if not homotopy:
        del doc["homotopy"]
    return doc


# ---------------------------------------------------------------------------
# rendering


def write_output(doc: dict, out: str | None, to_csv) -> bool:
    """Write a response document to --out; returns True if written."""
    if out is None:
        return False
    if out == "-":
        click.echo(json.dumps(doc, indent=2))
        return True
    if out.endswith(".csv"):
        if to_csv is None:
            raise click.ClickException(
                "this command has no CSV form; use a .json path")
        content = to_csv(doc)
    else:
        content = json.dumps(doc, indent=2) + "\n"
    with open(out, "w") as fh:
        fh.write(content)
    click.echo(f"wrote {out}")
    return True


def report_csv(doc: dict) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in doc["buses"]:
        writer.writerow([row[col] for col in CSV_COLUMNS])
    return out.getvalue()


def render_report(doc: dict) -> None:
    head = (f"{doc['case']} @ loading {doc['loading']:g}: "
            f"{doc['verdict'].upper()}")
    click.echo(head)
    click.echo(f"  converged={doc['converged']} "
               f"iterations={doc['iterations']} "
               f"(final stage {doc['final_stage_iterations']}) "
               f"residual={doc['residual']:.3e}")
    if doc["failure"]:
        click.echo(f"  failure: {doc['failure']}")
    if doc["verdict"] == "infeasible":
        click.echo(f"  total P deficiency {doc['total_p_inf']:.6g} p.u., "
                   f"Q deficiency {doc['total_q_inf']:.6g} p.u., "
                   f"objective {doc['objective']:.6g}")
        click.echo("  worst buses (bus, p_def, q_def, |I_F| norm):")
        for row in doc["buses"][:5]:
            if row["norm_mag"] == 0.0:
                break
            click.echo(f"    {row['bus']:>6} {row['p_def']:>12.6f} "
                       f"{row['q_def']:>12.6f} {row['norm_mag']:>8.3f}")
    so = doc.get("second_order")
    if so:
        click.echo(f"  second-order: {so['verdict']} "
                   f"(min eigenvalue {so['min_eigenvalue']:.3e})")


# ---------------------------------------------------------------------------
# commands


@click.group()
@click.version_option(package_name="pffa")
def main():
    """Power flow feasibility analysis."""


@main.command()
@click.argument("case")
@click.option("--loading", type=float, default=1.0, show_default=True,
              help="Scale all loads by this factor before solving.")
@click.option("--second-order", is_flag=True,
              help="Classify the solution against the curvature of the "
                   "compensation norm.")
@click.option("--out", default=None, metavar="PATH",
              help="Write the report (.json or .csv by extension, "
                   "- for JSON on stdout).")
@common_options
def solve(case, loading, second_order, out, server, **opt_flags):
    """Solve CASE and report feasibility bus by bus."""
    client = ServiceClient(server)
    doc = client.post("/solve", {
        "case": case_payload(case),
        "loading": loading,
        "second_order": second_order,
        "options": options_payload(**opt_flags),
    })
    if not write_output(doc, out, report_csv) or out != "-":
        render_report(doc)


@main.command()
@click.argument("case")
@click.option("--from", "from_", type=float, required=True,
              help="First loading factor.")
@click.option("--to", type=float, required=True, help="Last loading factor.")
@click.option("--step", type=float, required=True, help="Factor increment.")
@click.option("--out", default=None, metavar="PATH",
              help="Write sweep results (.json or .csv).")
@common_options
def sweep(case, from_, to, step, out, server, **opt_flags):
    """Solve CASE over a range of loading factors."""
    if step <= 0:
        raise click.ClickException("--step must be positive")
    factors = []
    f = from_
    while f <= to + 1e-12:
        factors.append(round(f, 12))
        f += step
    if not factors:
        raise click.ClickException("empty sweep range")
    client = ServiceClient(server)
    doc = client.post("/sweep", {
        "case": case_payload(case),
        "factors": factors,
        "options": options_payload(**opt_flags),
    })

    def sweep_csv(doc):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = ("factor", "verdict", "total_p_inf", "total_q_inf",
                "iterations", "converged")
        writer.writerow(cols)
        for row in doc["points"]:
            writer.writerow([row[c] for c in cols])
        return buf.getvalue()

    wrote = write_output(doc, out, sweep_csv)
    if not wrote or out != "-":
        click.echo(f"{doc['case']}: loading sweep")
        click.echo(f"  {'factor':>8} {'verdict':>14} {'P_inf':>12} "
                   f"{'Q_inf':>12} {'iters':>6}")
        for row in doc["points"]:
            click.echo(f"  {row['factor']:>8.4f} {row['verdict']:>14} "
                       f"{row['total_p_inf']:>12.6g} "
                       f"{row['total_q_inf']:>12.6g} "
                       f"{row['iterations']:>6}")


@main.command()
@click.argument("case")
@click.option("--lo", type=float, required=True,
              help="Loading factor that must solve feasible.")
@click.option("--hi", type=float, required=True,
              help="Loading factor that must solve infeasible.")
@click.option("--tol", type=float, default=1e-4, show_default=True,
              help="Bracket width to bisect down to.")
@click.option("--out", default=None, metavar="PATH",
              help="Write the result as JSON.")
@common_options
def collapse(case, lo, hi, tol, out, server, **opt_flags):
    """Bisect the loading factor to the feasibility boundary of CASE."""
    client = ServiceClient(server)
    doc = client.post("/collapse", {
        "case": case_payload(case),
        "lo": lo, "hi": hi, "tol": tol,
        "options": options_payload(**opt_flags),
    })
    wrote = write_output(doc, out, None)
    if not wrote or out != "-":
        click.echo(f"{doc['case']}: collapse at loading factor "
                   f"{doc['collapse_factor']:.6f}")
        click.echo(f"  bracket [{doc['feasible_below']:.6f}, "
                   f"{doc['infeasible_above']:.6f}], "
                   f"{len(doc['evaluations'])} solves")


@main.command()
@click.argument("case")
@click.option("--branch", "branches", multiple=True, metavar="F,T[,ORD]",
              help="Outage one branch by endpoints (repeatable); ORD "
                   "selects among parallel branches, default 0.")
@click.option("--all", "all_branches", is_flag=True,
              help="Screen every in-service branch (the default).")
@click.option("--out", default=None, metavar="PATH",
              help="Write results (.json or .csv).")
@common_options
def n1(case, branches, all_branches, out, server, **opt_flags):
    """Rank single-branch outages of CASE by feasibility impact."""
    outages = None
    if branches and all_branches:
        raise click.ClickException("--branch and --all are exclusive")
    if branches:
        outages = []
        for raw in branches:
            parts = raw.split(",")
            if len(parts) not in (2, 3):
                raise click.ClickException(
                    f"--branch expects F,T or F,T,ORD, got {raw!r}")
            try:
                outages.append([int(parts[0]), int(parts[1]),
                                int(parts[2]) if len(parts) == 3 else 0])
            except ValueError:
                raise click.ClickException(
                    f"--branch expects integers, got {raw!r}") from None
    client = ServiceClient(server)
    doc = client.post("/contingency", {
        "case": case_payload(case),
        "outages": outages,
        "options": options_payload(**opt_flags),
    })

    def n1_csv(doc):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = ("from_bus", "to_bus", "ordinal", "status", "total_p_inf",
                "total_q_inf", "worst_bus")
        writer.writerow(cols)
        for row in doc["results"]:
            writer.writerow([row[c] for c in cols])
        return buf.getvalue()

    wrote = write_output(doc, out, n1_csv)
    if not wrote or out != "-":
        click.echo(f"{doc['case']}: {len(doc['results'])} outages, "
                   f"most severe first")
        click.echo(f"  {'branch':>12} {'status':>14} {'P_inf':>12} "
                   f"{'Q_inf':>12} {'worst bus':>10}")
        for row in doc["results"]:
            name = f"{row['from_bus']}-{row['to_bus']}"
            if row["ordinal"]:
                name += f"#{row['ordinal']}"
            p = row["total_p_inf"]
            q = row["total_q_inf"]
            click.echo(
                f"  {name:>12} {row['status']:>14} "
                f"{'n/a' if p is None else format(p, '.6g'):>12} "
                f"{'n/a' if q is None else format(q, '.6g'):>12} "
                f"{row['worst_bus'] if row['worst_bus'] else '-':>10}")


@main.command()
@click.argument("case")
@click.option("--server", default=None, metavar="URL")
def validate(case, server):
    """Parse and structurally check CASE."""
    client = ServiceClient(server)
    doc = client.post("/validate", {"case": case_payload(case)})
    click.echo(f"{doc['case']}: ok "
               f"({doc['buses']} buses, {doc['branches']} branches, "
               f"{doc['generators']} generators, {doc['loads']} loads)")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
