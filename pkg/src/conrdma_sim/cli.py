"""``conrdma-sim``: thin command-line client for the simulator service.

By default commands run against an in-process instance of the service;
pass ``--server URL`` to target a running one (see ``conrdma-sim serve``).
Exit codes: 0 success, 1 usage/parse error, 2 invariant violation,
3 unexpected placement outcome.
"""

import json
import sys
import warnings
from pathlib import Path

import click
import httpx

from .scenario import (
    EXIT_USAGE,
    bundled_scenario_names,
    load_bundled_scenario,
)
from .service.app import create_app


def _make_client(server):
    if server:
        return httpx.Client(base_url=server, timeout=60.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient
        return TestClient(create_app())


def _load_scenario(source: str) -> tuple[str, dict]:
    """Scenario from a file path, or from the bundled corpus by name."""
    path = Path(source)
    if path.exists():
        try:
            return path.stem, json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            click.echo(f"error: {source}: not valid JSON: {exc}", err=True)
            sys.exit(EXIT_USAGE)
    name = source[:-5] if source.endswith(".json") else source
    if name in bundled_scenario_names():
        return name, load_bundled_scenario(name)
    click.echo(
        f"error: no such file or bundled scenario: {source}\n"
        f"bundled scenarios: {', '.join(bundled_scenario_names())}",
        err=True,
    )
    sys.exit(EXIT_USAGE)


def _post(client, url: str, payload: dict):
    response = client.post(url, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        click.echo(f"error: {detail}", err=True)
        sys.exit(EXIT_USAGE)
    return response.json()


@click.group()
@click.option("--server", metavar="URL", default=None,
              help="Base URL of a running service (default: in-process).")
@click.pass_context
def cli(ctx, server):
    """Scenario-driven simulator for RDMA-aware pod scheduling."""
    ctx.obj = server


@cli.command()
@click.argument("scenario")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Directory for the output artifacts.")
@click.option("--mode", type=click.Choice(["controlled", "uncontrolled"]), default=None,
              help="Override the scenario's mode.")
@click.option("--seed", type=int, default=None,
              help="Recorded in the report; runs are deterministic either way.")
@click.pass_obj
def run(server, scenario, out, mode, seed):
    """Execute SCENARIO (a file path or a bundled name) and write artifacts."""
    name, data = _load_scenario(scenario)
    client = _make_client(server)
    payload = _post(client, "/scenario/run",
                    {"scenario": data, "mode": mode, "seed": seed, "name": name})
    for line in payload["errors"]:
        click.echo(f"error: {line}", err=True)
    for entry in payload["placements"]:
        result = entry["result"]
        if result == "placed":
            ifaces = ", ".join(i["name"] + "->" + i["vf"] for i in entry["interfaces"])
            click.echo(f"{entry['pod']}: placed on {entry['node']}"
                       + (f" ({ifaces})" if ifaces else ""))
        elif result == "torn_down":
            click.echo(f"{entry['pod']}: torn down")
        else:
            note = " (expected)" if entry.get("expected") == result else ""
            click.echo(f"{entry['pod']}: {result}{note}: {entry.get('reason', '')}")
    if payload["status"] != "ok":
        click.echo(f"scenario failed: {payload['status']}", err=True)
        sys.exit(payload["exit_code"])
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    for fname, text in payload["artifacts"].items():
        (outdir / fname).write_text(text)
    click.echo(f"{name}: ok ({payload['iterations']} iterations); "
               f"artifacts in {outdir}/")


@cli.command()
@click.argument("scenario")
@click.option("--pod", required=True, help="Pod whose placement to explain.")
@click.option("--mode", type=click.Choice(["controlled", "uncontrolled"]), default=None)
@click.pass_obj
def explain(server, scenario, pod, mode):
    """Narrate the scheduling decision for one pod of SCENARIO."""
    name, data = _load_scenario(scenario)
    client = _make_client(server)
    payload = _post(client, "/scenario/explain",
                    {"scenario": data, "pod": pod, "mode": mode, "name": name})
    click.echo(payload["text"], nl=False)


@cli.command()
@click.argument("scenario")
@click.pass_obj
def validate(server, scenario):
    """Statically validate SCENARIO without running it."""
    name, data = _load_scenario(scenario)
    client = _make_client(server)
    payload = _post(client, "/scenario/validate", {"scenario": data, "name": name})
    if payload["valid"]:
        click.echo(f"{name}: valid")
        return
    for line in payload["errors"]:
        click.echo(f"error: {line}", err=True)
    sys.exit(EXIT_USAGE)


@cli.command()
def scenarios():
    """List the bundled scenario corpus."""
    for name in bundled_scenario_names():
        click.echo(name)


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("conrdma_sim.service.app:app", host=host, port=port)


def main(argv=None):
    """Console entry point; maps CLI usage errors to exit code 1."""
    try:
        cli(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.Abort:
        sys.exit(EXIT_USAGE)


if __name__ == "__main__":
    main()
