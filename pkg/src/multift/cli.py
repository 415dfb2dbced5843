"""Command-line client for the experiment service.

Each subcommand maps to one experiment. By default the client talks to an
in-process instance of the service; pass --server to target a running one.

Exit codes: 0 all assertions passed, 1 at least one row failed,
2 usage or configuration error.
"""

from __future__ import annotations

import logging
import os
import sys

import click
import httpx

from .experiments import (
    CSV_HEADER,
    EXPERIMENTS,
    ExperimentConfig,
    parse_config_file,
)

LOG_ENV = "MULTIFT_LOG_LEVEL"


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=3600.0)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def _configure_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "WARNING"
    logging.basicConfig(level=getattr(logging, level))


def _rows_to_csv_lines(rows: list[dict]) -> str:
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow(
            (
                r["experiment"],
                r["seed"],
                r["quantity"],
                f"{r['value']:.12e}",
                f"{r['target']:.12e}",
                f"{r['tolerance']:.1e}",
                str(r["passed"]),
            )
        )
    return buf.getvalue()


def _run(experiment: str, config_path: str | None, out: str | None,
         seed: int | None, server: str | None, **overrides):
    _configure_logging()
    data = {"experiment": experiment}
    if config_path:
        try:
            parsed = parse_config_file(config_path)
        except (OSError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        if "experiment" in parsed and parsed["experiment"] != experiment:
            click.echo(
                f"error: config names experiment {parsed['experiment']!r}, "
                f"but the {experiment!r} subcommand was invoked",
                err=True,
            )
            sys.exit(2)
        data.update(parsed)
        data["experiment"] = experiment
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if seed is not None:
        data["seed"] = seed
    try:
        config = ExperimentConfig.from_mapping(data)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)

    payload = {
        "experiment": config.experiment,
        "d": config.d,
        "d_env": config.d_env,
        "n": config.n,
        "ensemble": config.ensemble,
        "seed": config.seed,
    }
    with _client(server) as client:
        resp = client.post("/run", json=payload)
    if resp.status_code == 422:
        click.echo(f"error: {resp.json().get('detail')}", err=True)
        sys.exit(2)
    resp.raise_for_status()
    body = resp.json()
    csv_text = _rows_to_csv_lines(body["rows"])
    if out:
        with open(out, "w") as fh:
            fh.write(csv_text)
    else:
        click.echo(csv_text, nl=False)
    failed = [r for r in body["rows"] if not r["passed"]]
    if failed:
        click.echo(f"{len(failed)} of {len(body['rows'])} assertions failed", err=True)
        sys.exit(1)
    sys.exit(0)


def _common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(),
                      default=None, help="flat key=value config file")(fn)
    fn = click.option("--out", type=click.Path(), default=None,
                      help="write the CSV report here instead of stdout")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="base seed (overrides the config file)")(fn)
    fn = click.option("--server", default=None,
                      help="base URL of a running service; default is in-process")(fn)
    fn = click.option("--d", type=int, default=None, help="system dimension")(fn)
    fn = click.option("--d-env", "d_env", type=int, default=None,
                      help="environment dimension")(fn)
    fn = click.option("--n", type=int, default=None, help="number of times")(fn)
    fn = click.option("--ensemble", type=int, default=None,
                      help="number of sampled instances")(fn)
    return fn


@click.group()
def main():
    """Fluctuation-theorem experiment runner."""


def _make_command(name: str):
    @main.command(name=name)
    @_common_options
    def cmd(config_path, out, seed, server, d, d_env, n, ensemble):
        _run(name, config_path, out, seed, server,
             d=d, d_env=d_env, n=n, ensemble=ensemble)

    cmd.__doc__ = f"Run the {name} experiment."
    return cmd


for _name in EXPERIMENTS:
    _make_command(_name)


if __name__ == "__main__":
    main()
