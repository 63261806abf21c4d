"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 I/O or endpoint error.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

import json

import click
import httpx

from .audit import verify_file
from .config import ServiceConfig
from .errors import EndpointUnreachable, TbacError, WorkloadParseError
from .manifest import parse_manifest
from .service import build_service
from .simulate import HttpSubmitter, InProcessSubmitter, load_workload, run_simulation
from .tokens import write_keypair

EXIT_VALIDATION = 1
EXIT_IO = 2


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def cli():
    """Task authorization service: policy synthesis, risk thresholds, tokens."""


@cli.command()
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    default=lambda: os.environ.get("TBAC_CONFIG"),
    required=False,
    help="Config file path (defaults to $TBAC_CONFIG).",
)
def serve(config_path):
    """Run the authorization service."""
    if not config_path:
        _fail("no config given (use --config or $TBAC_CONFIG)", EXIT_VALIDATION)
    try:
        config = ServiceConfig.from_file(config_path)
        service = build_service(config)
    except (TbacError, OSError) as exc:
        _fail(str(exc), EXIT_VALIDATION)
        return
    import uvicorn

    from .api import create_app

    click.echo(f"listening on {config.host}:{config.port}")
    uvicorn.run(create_app(service), host=config.host, port=config.port, log_level="warning")


@cli.command()
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def keygen(out_dir):
    """Generate an Ed25519 keypair (hex seed + hex public key)."""
    try:
        private_path, public_path, key_id = write_keypair(out_dir)
    except OSError as exc:
        _fail(str(exc), EXIT_IO)
        return
    click.echo(f"private key: {private_path}")
    click.echo(f"public key:  {public_path}")
    click.echo(f"key id:      {key_id}")


@cli.group()
def manifest():
    """Validate or push tool manifests."""


@manifest.command("validate")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
def manifest_validate(file):
    try:
        document = Path(file).read_bytes()
    except OSError as exc:
        _fail(str(exc), EXIT_IO)
        return
    try:
        parsed = parse_manifest(document)
    except TbacError as exc:
        _fail(str(exc), EXIT_VALIDATION)
        return
    click.echo(f"ok: version {parsed.version}, {len(parsed.tools)} tools")


@manifest.command("push")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--endpoint", required=True)
@click.option("--admin-token", required=True)
def manifest_push(file, endpoint, admin_token):
    try:
        document = Path(file).read_bytes()
    except OSError as exc:
        _fail(str(exc), EXIT_IO)
        return
    try:
        response = httpx.put(
            f"{endpoint.rstrip('/')}/v1/manifest",
            content=document,
            headers={"Authorization": f"Bearer {admin_token}"},
            timeout=30.0,
        )
    except httpx.TransportError as exc:
        _fail(f"cannot reach {endpoint}: {exc}", EXIT_IO)
        return
    if response.status_code != 200:
        _fail(f"push rejected ({response.status_code}): {response.text}", EXIT_VALIDATION)
        return
    body = response.json()
    click.echo(f"active manifest: version {body['version']} ({body['tools']} tools)")


@cli.command()
@click.option("--agent", "agent_id", required=True)
@click.option("--goal", required=True)
@click.option("--endpoint", required=True)
@click.option("--json", "as_json", is_flag=True, default=False)
def submit(agent_id, goal, endpoint, as_json):
    """Submit one task intent."""
    try:
        result = HttpSubmitter(endpoint).submit(agent_id, goal)
    except EndpointUnreachable as exc:
        _fail(str(exc), EXIT_IO)
        return
    except httpx.HTTPStatusError as exc:
        _fail(f"submission rejected: {exc.response.text}", EXIT_VALIDATION)
        return
    if as_json:
        click.echo(json.dumps(result, indent=2))
        return
    click.echo(f"task {result['task_id']}: {result['status']}")
    tuple_ = result.get("tuple") or {}
    click.echo(f"  r_comp={tuple_.get('r_comp')} upsilon={tuple_.get('upsilon')}")
    if result.get("token"):
        click.echo(f"  token ttl {result['token_ttl']}s")
    if result.get("escalation_id"):
        click.echo(f"  escalation {result['escalation_id']}")


@cli.command()
@click.argument("workload_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--endpoint")
@click.option("--parallel", type=int, default=1)
@click.option("--json", "as_json", is_flag=True, default=False)
def simulate(workload_file, config_path, endpoint, parallel, as_json):
    """Replay a scripted workload and report decision rates."""
    if bool(config_path) == bool(endpoint):
        _fail("give exactly one of --config (in-process) or --endpoint", EXIT_VALIDATION)
    try:
        workload = load_workload(workload_file)
    except (WorkloadParseError, OSError) as exc:
        _fail(str(exc), EXIT_VALIDATION)
        return
    try:
        if endpoint:
            submitter = HttpSubmitter(endpoint)
        else:
            submitter = InProcessSubmitter(build_service(ServiceConfig.from_file(config_path)))
        report = run_simulation(workload, submitter, parallel=parallel)
    except EndpointUnreachable as exc:
        _fail(str(exc), EXIT_IO)
        return
    except TbacError as exc:
        _fail(str(exc), EXIT_VALIDATION)
        return
    if as_json:
        click.echo(report.to_json())
    else:
        click.echo(
            f"{report.total} submissions: "
            f"auto {report.auto_rate:.3f}, escalate {report.escalation_rate:.3f}, "
            f"deny {report.deny_rate:.3f}, errors {report.error_count}, "
            f"cache hits {report.cache_hit_count}"
        )
        for outcome in report.outcomes:
            flag = "" if outcome.match in (True, None) else "  << expected " + outcome.expected
            click.echo(f"  [{outcome.index:3d}] {outcome.status:20s} {outcome.goal[:60]}{flag}")
    if report.mismatches:
        sys.exit(EXIT_VALIDATION)


@cli.group()
def audit():
    """Audit chain tools."""


@audit.command("verify")
@click.argument("logfile", type=click.Path(exists=True, dir_okay=False))
def audit_verify(logfile):
    try:
        status = verify_file(logfile)
    except OSError as exc:
        _fail(str(exc), EXIT_IO)
        return
    if status.ok:
        click.echo(f"ok: {status.length} entries, chain intact")
    else:
        _fail(f"chain broken at index {status.first_bad_index}", EXIT_VALIDATION)


@cli.group()
def escalations():
    """Operator fallback for the escalation queue."""


def _escalation_request(method: str, url: str, **kwargs):
    try:
        response = httpx.request(method, url, timeout=30.0, **kwargs)
    except httpx.TransportError as exc:
        _fail(f"cannot reach endpoint: {exc}", EXIT_IO)
        raise
    return response


@escalations.command("list")
@click.option("--endpoint", required=True)
@click.option("--status", default="pending", show_default=True)
def escalations_list(endpoint, status):
    response = _escalation_request(
        "GET", f"{endpoint.rstrip('/')}/v1/escalations", params={"status": status}
    )
    if response.status_code != 200:
        _fail(response.text, EXIT_VALIDATION)
        return
    items = response.json()["escalations"]
    if not items:
        click.echo("no escalations")
        return
    for item in items:
        tuple_ = item["tuple"]
        reasons = ",".join(r["reason"] for r in tuple_["decision"]["reasons"])
        click.echo(
            f"{item['escalation_id']}  {item['status']:9s} "
            f"r={tuple_['r_comp']} u={tuple_['upsilon']} [{reasons}] {tuple_['goal'][:50]}"
        )


def _resolve(endpoint: str, escalation_id: str, verdict: str, approver: str, comment: str | None):
    response = _escalation_request(
        "POST",
        f"{endpoint.rstrip('/')}/v1/escalations/{escalation_id}/decision",
        json={"verdict": verdict, "approver_id": approver, "comment": comment},
    )
    if response.status_code != 200:
        _fail(f"({response.status_code}) {response.text}", EXIT_VALIDATION)
        return
    body = response.json()
    line = f"{escalation_id}: {body['status']}"
    if body.get("token"):
        line += f" (token ttl {body['token_ttl']}s)"
    click.echo(line)


@escalations.command("approve")
@click.argument("escalation_id")
@click.option("--endpoint", required=True)
@click.option("--approver", required=True)
@click.option("--comment", default=None)
def escalations_approve(escalation_id, endpoint, approver, comment):
    _resolve(endpoint, escalation_id, "approve", approver, comment)


@escalations.command("deny")
@click.argument("escalation_id")
@click.option("--endpoint", required=True)
@click.option("--approver", required=True)
@click.option("--comment", default=None)
def escalations_deny(escalation_id, endpoint, approver, comment):
    _resolve(endpoint, escalation_id, "deny", approver, comment)


def main():
    cli()


if __name__ == "__main__":
    main()
