"""Command-line front end: generate | audit | utility | experiment | inspect-card.

Exit codes: 0 success / no evidence of violation, 3 violation detected,
1 error. Every JSON output carries a ``provenance`` block (tool version,
flags, seeds) and keeps wall-clock timestamps in a separate ``metadata``
block so reruns can be compared byte for byte without it.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from sdgaudit import __version__
from sdgaudit.auditor import VIOLATION, AuditConfig, audit, dump_test_distributions
from sdgaudit.dataset import (
    DEFAULT_CELL_CAP,
    IngestConfig,
    Schema,
    ThetaVector,
    ingest_csv,
    sample_iid,
    write_csv,
)
from sdgaudit.errors import SdgError
from sdgaudit.generators import GeneratorCard, GeneratorConfig, generate, make_card, train
from sdgaudit.statspace import MarginalSpec, Workload, build_safespace, sample_perp_subspace
from sdgaudit.utility import DerivedStatSpec, utility_report

log = logging.getLogger("sdgaudit")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATION = 3


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SdgError("bad-json", f"{path}: {exc}") from exc
    except OSError as exc:
        raise SdgError("io-error", f"{path}: {exc}") from exc


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _timestamp() -> dict:
    return {"created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}


def _provenance(args, **extra) -> dict:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}
    return {"tool": "sdgaudit", "version": __version__, "command": args.command, "flags": flags, **extra}


def _load_schema(path, cap: int) -> Schema:
    obj = _read_json(path)
    schema = Schema.from_json(obj if isinstance(obj, list) else obj.get("attributes", obj))
    schema.check_cap(cap)
    return schema


def _ingest(path, schema: Schema, args):
    pre = frozenset(a.name for a in schema.attributes if a.values is None)
    cfg = IngestConfig(
        delimiter=args.delimiter,
        pre_encoded=pre,
        unknown_policy="drop-row" if args.drop_unknown else "reject",
    )
    return ingest_csv(path, schema, cfg)


def _load_generator(spec: str, schema: Schema, workload: Workload) -> GeneratorConfig:
    if os.path.exists(spec):
        obj = _read_json(spec)
    else:
        try:
            obj = json.loads(spec)
        except json.JSONDecodeError:
            obj = {"kind": spec}
    if isinstance(obj, str):
        obj = {"kind": obj}
    if obj.get("kind") == "ipf-dishonest" and "leak_workload" not in obj and "leak_workload" not in obj.get("params", {}):
        obj = {**obj, "leak_workload": default_leak(workload)}
    return GeneratorConfig.from_descriptor(obj, schema, default_workload=workload)


def default_leak(workload: Workload) -> list[list[str]]:
    """The full marginal over every attribute the workload touches."""
    attrs = [a for a in workload.schema.names if any(a in m.attributes for m in workload.marginals)]
    return [attrs]


def cmd_generate(args) -> int:
    schema = _load_schema(args.schema, args.max_cells)
    workload = Workload.from_json(schema, _read_json(args.workload))
    real = _ingest(args.data, schema, args)
    ss = build_safespace(workload)
    config = GeneratorConfig("ipf", workload=workload)
    model = train(config, real, ss, train_seed=args.seed)
    sym = generate(model, args.n, args.seed)
    write_csv(sym, args.out)
    card = make_card(real, ss, config, purpose=args.purpose)
    card_path = args.card or str(Path(args.out).with_suffix(".card.json"))
    payload = card.to_json()
    payload["provenance"] = _provenance(args, seed=args.seed, card_fingerprint=card.fingerprint)
    payload["metadata"] = {**payload["metadata"], **_timestamp()}
    _write_json(card_path, payload)
    log.info("wrote %d synthetic rows to %s and card to %s", args.n, args.out, card_path)
    if not model.converged:
        log.warning("IPF stopped after %d sweeps without reaching tolerance", model.iters_used)
    return EXIT_OK


def _audit_safespace(card: GeneratorCard, args):
    if args.perp_sample:
        widest = max(m.width for m in card.workload.marginals)
        attrs = sorted({a for m in card.workload.marginals for a in m.attributes}, key=card.schema.names.index)
        probes = Workload.all_kway(card.schema, min(widest + 1, len(attrs)), attrs).marginals
        return sample_perp_subspace(card.workload, probes, args.perp_sample, args.perp_seed)
    return build_safespace(card.workload)


def cmd_audit(args) -> int:
    card = GeneratorCard.from_json(_read_json(args.card))
    card.schema.check_cap(args.max_cells)
    gen = _load_generator(args.generator, card.schema, card.workload)
    start = _ingest(args.start, card.schema, args) if args.start else None
    cfg = AuditConfig(
        K1=args.k1, K2=args.k2, n_sym=args.n_sym, alpha_level=args.alpha, direction_seed=args.seed,
        retries=args.retries, start_mode=args.start_mode, probes=args.probes, jobs=args.jobs,
    )
    report = audit(card, gen, start, cfg, safespace=_audit_safespace(card, args))
    out = {"provenance": _provenance(args, seed=args.seed), "report": report.to_json(), "metadata": _timestamp()}
    _write_json(args.out, out)
    samples = args.samples_out or str(Path(args.out).with_suffix(".samples.csv"))
    dump_test_distributions(report, samples)
    print(report.summary)
    return EXIT_VIOLATION if report.verdict == VIOLATION else EXIT_OK


def _parse_gap(text: str, schema: Schema) -> DerivedStatSpec:
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise SdgError("bad-config", f"gap spec {text!r} must be name:group:split[:attr=category]")
    cond = None
    if len(parts) == 4:
        attr, _, cat = parts[3].partition("=")
        labels = schema.attributes[schema.axis(attr)].values
        cond = (attr, labels.index(cat) if labels and cat in labels else int(cat))
    return DerivedStatSpec(parts[0], parts[1], parts[2], cond)


def cmd_utility(args) -> int:
    schema = _load_schema(args.schema, args.max_cells)
    real = _ingest(args.real, schema, args)
    sym = _ingest(args.sym, schema, args)
    marginals = [MarginalSpec(tuple(m.split(","))) for m in args.marginal]
    for m in marginals:
        m.axes(schema)
    derived = [_parse_gap(g, schema) for g in args.gap]
    report = utility_report(real, sym, marginals, derived)
    out = {"provenance": _provenance(args), "report": report.to_json(), "metadata": _timestamp()}
    if args.out:
        _write_json(args.out, out)
    else:
        print(json.dumps(out["report"], indent=2, sort_keys=True))
    if args.csv:
        report.write_csv(args.csv)
    return EXIT_OK


def cmd_inspect_card(args) -> int:
    card = GeneratorCard.from_json(_read_json(args.card))
    info = {
        "card_fingerprint": card.fingerprint,
        "schema": [f"{a.name}({a.cardinality})" for a in card.schema.attributes],
        "workload": card.workload.to_json(),
        "safespace_fingerprint": card.safespace_fingerprint,
        "dim_phi": int(card.psi.psi.size),
        "generator": card.generator,
        "metadata": card.metadata,
    }
    if args.json:
        print(json.dumps(info, indent=2, sort_keys=True))
    else:
        for k, v in info.items():
            print(f"{k}: {v}")
    return EXIT_OK


def _manifest_data(manifest: dict, schema: Schema, base: Path, seed: int, args):
    data = manifest.get("data", {"random": {}})
    if "csv" in data:
        return _ingest(base / data["csv"], schema, args)
    spec = data.get("random", {})
    rng = np.random.default_rng([seed, 0xDA7A])
    theta = rng.dirichlet(np.full(schema.total_cells, float(spec.get("concentration", 2.0))))
    return sample_iid(ThetaVector(schema, theta), int(spec.get("n", 50_000)), int(rng.integers(2**32)))


def _cell_generator(entry: dict, honesty: str, app: dict, schema: Schema, workload: Workload) -> GeneratorConfig:
    kind = entry["kind"]
    params = {k: v for k, v in entry.items() if k not in ("name", "kind", "honesty")}
    if kind == "ipf" and honesty == "dishonest":
        leak = app.get("leak_workload") or default_leak(workload)
        return GeneratorConfig.from_descriptor({"kind": "ipf-dishonest", "leak_workload": leak, **params}, schema, workload)
    if kind == "mixture":
        params["leak_fraction"] = params.get("leak_fraction", 1.0) if honesty == "dishonest" else 0.0
    return GeneratorConfig.from_descriptor({"kind": kind, **params}, schema, workload)


def run_experiment(manifest: dict, base: Path, out_dir: Path, jobs: int, args) -> list[dict]:
    """Audit every (application, generator, honesty) cell; returns summary rows."""
    schema = Schema.from_json(manifest["schema"]) if isinstance(manifest["schema"], list) else _load_schema(base / manifest["schema"], args.max_cells)
    schema.check_cap(args.max_cells)
    seed = int(manifest.get("seed", 0))
    real = _manifest_data(manifest, schema, base, seed, args)
    acfg = dict(manifest.get("audit", {}))
    cells = []
    for app in manifest["applications"]:
        for entry in manifest["generators"]:
            for honesty in entry.get("honesty", ["honest"]):
                cells.append((app, entry, honesty))

    def run_cell(i):
        app, entry, honesty = cells[i]
        name = f"{app['name']}__{entry['name']}__{honesty}".replace("/", "_").replace(" ", "_")
        row = {"generator": entry["name"], "honesty": honesty, "application": app["name"], "p_value": "", "verdict": "", "error": ""}
        cell_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        try:
            workload = Workload.from_json(schema, app["workload"])
            ss = build_safespace(workload)
            gen = _cell_generator(entry, honesty, app, schema, workload)
            card = make_card(real, ss, gen, purpose=app["name"])
            cfg = AuditConfig(direction_seed=cell_seed, **acfg)
            report = audit(card, gen, real, cfg, safespace=ss)
            _write_json(out_dir / f"{name}.report.json", {
                "provenance": {"tool": "sdgaudit", "version": __version__, "manifest_seed": seed, "cell_seed": cell_seed,
                               "application": app["name"], "generator": entry, "honesty": honesty},
                "report": report.to_json(),
                "metadata": _timestamp(),
            })
            dump_test_distributions(report, out_dir / f"{name}.samples.csv")
            row.update(p_value=repr(report.p_value), verdict=report.verdict)
        except (SdgError, KeyError) as exc:
            row["error"] = str(exc)
        return row

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(run_cell, range(len(cells))))
    return [run_cell(i) for i in range(len(cells))]


def cmd_experiment(args) -> int:
    manifest = _read_json(args.manifest)
    base = Path(args.manifest).resolve().parent
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = run_experiment(manifest, base, out_dir, args.jobs or int(manifest.get("jobs", 1)), args)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["generator", "honesty", "application", "p_value", "verdict", "error"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['application']:>12} {r['generator']:>12} {r['honesty']:>10}  p={r['p_value'] or 'ERROR'}  {r['verdict'] or r['error']}")
    return EXIT_ERROR if any(r["error"] for r in rows) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdgaudit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sdgaudit {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--delimiter", default=",")
        sp.add_argument("--drop-unknown", action="store_true", help="drop rows with unmapped values instead of failing")
        sp.add_argument("--max-cells", type=int, default=DEFAULT_CELL_CAP)

    g = sub.add_parser("generate", help="fit honest IPF on a safe workload; write synthetic CSV and a generator card")
    g.add_argument("--schema", required=True)
    g.add_argument("--workload", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--card")
    g.add_argument("--purpose", default="")
    common(g)
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("audit", help="audit a generator against a card")
    a.add_argument("--card", required=True)
    a.add_argument("--generator", default="ipf", help="kind name, inline JSON, or path to a JSON generator spec")
    a.add_argument("--start", help="CSV of the starting dataset (usually the real data)")
    a.add_argument("--k1", type=int, default=10)
    a.add_argument("--k2", type=int, default=10)
    a.add_argument("--n-sym", type=int, default=100_000)
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--retries", type=int, default=5)
    a.add_argument("--start-mode", default="auto", choices=["auto", "max-entropy", "from-dataset"])
    a.add_argument("--probes", type=int, default=1)
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--perp-sample", type=int, default=0, help="audit on a random complement subspace of this many probes")
    a.add_argument("--perp-seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.add_argument("--samples-out")
    common(a)
    a.set_defaults(func=cmd_audit)

    u = sub.add_parser("utility", help="marginal and gap RMSE between real and synthetic data")
    u.add_argument("--schema", required=True)
    u.add_argument("--real", required=True)
    u.add_argument("--sym", required=True)
    u.add_argument("--marginal", action="append", default=[], help="comma-separated attribute names; repeatable")
    u.add_argument("--gap", action="append", default=[], help="name:group:split[:attr=category]; repeatable")
    u.add_argument("--out")
    u.add_argument("--csv")
    common(u)
    u.set_defaults(func=cmd_utility)

    e = sub.add_parser("experiment", help="run an honest/dishonest audit grid from a manifest")
    e.add_argument("manifest")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--jobs", type=int, default=0)
    common(e)
    e.set_defaults(func=cmd_experiment)

    c = sub.add_parser("inspect-card", help="print a generator card")
    c.add_argument("card")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_inspect_card)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SdgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc!r}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
