"""Command-line client for the sgdlab service.

Every subcommand builds a request and sends it through the HTTP API: against
an in-process application by default (no server required, shared filesystem),
or against a running instance given ``--server``. Exit status is 0 on
success and 1 with a diagnostic on any service-reported error.
"""

from __future__ import annotations

import json
import sys
import warnings
from pathlib import Path

import click
import httpx


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    with warnings.catch_warnings():
        # starlette warns about its httpx-based test client; it is exactly the
        # in-process transport we want here.
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service.app import app

    return TestClient(app, raise_server_exceptions=False)


def _format_detail(detail) -> str:
    if isinstance(detail, str):
        return detail
    if isinstance(detail, list):  # pydantic validation errors
        parts = []
        for item in detail:
            loc = ".".join(str(p) for p in item.get("loc", []) if p != "body")
            parts.append(f"{loc}: {item.get('msg', 'invalid')}")
        return "; ".join(parts)
    return json.dumps(detail)


def _call(server: str | None, path: str, payload: dict) -> dict:
    with _client(server) as client:
        response = client.post(path, json=payload)
    if response.status_code >= 400:
        try:
            detail = _format_detail(response.json().get("detail"))
        except (ValueError, AttributeError):
            detail = response.text
        click.echo(f"error: {detail}", err=True)
        sys.exit(1)
    return response.json()


def _emit(obj: dict) -> None:
    click.echo(json.dumps(obj, sort_keys=True, indent=2))


server_option = click.option(
    "--server", default=None, metavar="URL", help="Remote service URL (default: in-process)."
)
out_option = click.option(
    "--out",
    envvar="SGDLAB_OUT",
    default="./sgdlab-out",
    show_default=True,
    metavar="DIR",
    help="Experiment directory (defaults to $SGDLAB_OUT when set).",
)


@click.group()
def main() -> None:
    """Measure the intrinsic, seed-induced randomness of SGD; calibrate private releases."""


@main.command("gen-data")
@server_option
@out_option
@click.option("--name", default="synthetic", show_default=True, help="Dataset file stem.")
@click.option("--n", required=True, type=int, help="Number of rows.")
@click.option("--d", required=True, type=int, help="Feature dimension.")
@click.option("--separation", default=2.0, show_default=True, type=float, help="Class mean distance.")
@click.option("--seed", default=0, show_default=True, type=int, help="Generator seed.")
@click.option("--normalize", is_flag=True, help="Scale rows to max norm 1 before writing.")
def gen_data(server, out, name, n, d, separation, seed, normalize) -> None:
    """Write a synthetic two-Gaussian dataset as a CSV fixture."""
    path = str(Path(out) / "datasets" / f"{name}.csv")
    _emit(
        _call(
            server,
            "/data/generate",
            {
                "out_path": path,
                "n": n,
                "d": d,
                "separation": separation,
                "seed": seed,
                "normalize": normalize,
            },
        )
    )


@main.command("run-grid")
@server_option
@out_option
@click.option("--config", required=True, metavar="PATH", help="Grid config JSON.")
@click.option("--jobs", default=1, show_default=True, type=int, help="Parallel workers.")
def run_grid_cmd(server, out, config, jobs) -> None:
    """Run every missing (member, seed, init mode) cell of the grid."""
    _emit(_call(server, "/grid/run", {"config_path": config, "out_dir": out, "jobs": jobs}))


@main.command("analyze")
@server_option
@out_option
def analyze(server, out) -> None:
    """Summarize the weight-distance distributions of a finished grid."""
    _emit(_call(server, "/analysis/deltas", {"store_dir": out}))


@main.command("estimate-epsilon")
@server_option
@out_option
def estimate_epsilon(server, out) -> None:
    """Estimate sensitivity, intrinsic variability, and the intrinsic epsilon."""
    _emit(_call(server, "/analysis/epsilon", {"store_dir": out}))


@main.command("privatize")
@server_option
@click.option("--weights", default=None, metavar="PATH", help="Input weight file.")
@click.option("--out-weights", default=None, metavar="PATH", help="Output weight file.")
@click.option("--epsilon", required=True, type=float, help="Target epsilon.")
@click.option("--delta", required=True, type=float, help="Failure probability in (0, 1).")
@click.option("--sensitivity", default=0.0, show_default=True, type=float, help="l2 sensitivity.")
@click.option(
    "--sigma-intrinsic", default=0.0, show_default=True, type=float, help="Intrinsic noise scale."
)
@click.option("--seed", default=0, show_default=True, type=int, help="Noise stream seed.")
def privatize_cmd(server, weights, out_weights, epsilon, delta, sensitivity, sigma_intrinsic, seed) -> None:
    """Release weights with Gaussian noise reduced by the intrinsic noise."""
    _emit(
        _call(
            server,
            "/privacy/privatize",
            {
                "weights_path": weights,
                "out_path": out_weights,
                "epsilon": epsilon,
                "delta": delta,
                "sensitivity": sensitivity,
                "sigma_intrinsic": sigma_intrinsic,
                "seed": seed,
            },
        )
    )


@main.command("evaluate-utility")
@server_option
@out_option
@click.option(
    "--epsilon",
    "epsilons",
    multiple=True,
    type=float,
    default=(0.5, 1.0),
    show_default=True,
    help="Target epsilon (repeatable).",
)
@click.option("--seed", default=0, show_default=True, type=int, help="Noise seed for the paired design.")
@click.option("--max-models", default=500, show_default=True, type=int, help="Cap on models used.")
@click.option("--significance", default=1e-6, show_default=True, type=float, help="p-value threshold.")
def evaluate_utility(server, out, epsilons, seed, max_models, significance) -> None:
    """Compare noiseless, full-noise, and reduced-noise accuracy (paired design)."""
    _emit(
        _call(
            server,
            "/utility/evaluate",
            {
                "store_dir": out,
                "epsilons": list(epsilons),
                "seed": seed,
                "max_models": max_models,
                "significance_threshold": significance,
            },
        )
    )


@main.command("normality")
@server_option
@out_option
def normality(server, out) -> None:
    """Shapiro-Wilk sweep over weight coordinates with Bonferroni correction."""
    _emit(_call(server, "/stats/normality", {"store_dir": out}))


@main.command("theory-bounds")
@server_option
@click.option("--k", required=True, type=float, help="Passes over the data.")
@click.option("--l", "lipschitz", required=True, type=float, help="Lipschitz constant.")
@click.option("--eta", required=True, type=float, help="Learning rate.")
@click.option("--n", "n_rows", required=True, type=int, help="Dataset size.")
@click.option("--b", "batch_size", default=1, show_default=True, type=int, help="Batch size.")
def theory_bounds(server, k, lipschitz, eta, n_rows, batch_size) -> None:
    """Print the closed-form sensitivity and variability bounds."""
    result = _call(
        server,
        "/theory/bounds",
        {
            "k": k,
            "lipschitz": lipschitz,
            "learning_rate": eta,
            "n_rows": n_rows,
            "batch_size": batch_size,
        },
    )
    for key in (
        "sensitivity_bound",
        "variability_bound",
        "variability_to_sensitivity_ratio",
        "expected_variability",
        "variability_variance",
        "chebyshev_tail_probability",
        "chebyshev_threshold",
    ):
        value = result[key]
        click.echo(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")


@main.command("report")
@server_option
@out_option
@click.option("--reports-dir", default=None, metavar="DIR", help="Override the reports directory.")
@click.option(
    "--epsilon",
    "epsilons",
    multiple=True,
    type=float,
    default=(0.5, 1.0),
    show_default=True,
    help="Epsilons for the utility report (repeatable).",
)
@click.option("--seed", default=0, show_default=True, type=int, help="Report seed.")
@click.option("--max-models", default=500, show_default=True, type=int, help="Cap on models used.")
@click.option("--significance", default=1e-6, show_default=True, type=float, help="p-value threshold.")
@click.option(
    "--accounting",
    default="fractional",
    show_default=True,
    type=click.Choice(["fractional", "per_epoch"]),
    help="Pass-count accounting for the theory curve.",
)
def report(server, out, reports_dir, epsilons, seed, max_models, significance, accounting) -> None:
    """Emit the full report bundle (histograms, epsilon, utility, curves)."""
    _emit(
        _call(
            server,
            "/reports/make",
            {
                "store_dir": out,
                "out_dir": reports_dir,
                "epsilons": list(epsilons),
                "seed": seed,
                "max_models": max_models,
                "significance_threshold": significance,
                "step_accounting": accounting,
            },
        )
    )


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port) -> None:
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("sgdlab.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
