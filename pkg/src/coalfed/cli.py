"""Command-line front end: scenario runner, bounds calculator, policy
tooling.  Batch only; all outputs are UTF-8 text files meant for plotting
or inspection.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import bounds as bounds_mod
from . import curator as curator_mod
from . import datagen, fusion, protocol
from . import models as models_mod
from . import policy as policy_mod
from .errors import CoalfedError, PolicyParseError


def _fail_usage(msg):
    print(f"error: {msg}", file=sys.stderr)
    return 2


# --- scenario loading ------------------------------------------------------

SCENARIO_DEFAULTS = {
    "seed": 0,
    "mode": "model_sharing",
    "fusion": "sync",               # protocol flavor: sync | round_robin
    "rounds": 30,
    "local_batches_per_round": 20,
    "sample_k": 0,
    "grid_points": 301,
    "guidance": {"qoi_threshold": 0.0, "voi_threshold": 0.0, "trust_threshold": 0.0},
    "arch": {"kind": "polynomial", "input_dim": 1, "degree": 3,
             "feature_offset": [1.5], "feature_scale": [1.5]},
    "train": {"learning_rate": 0.05, "epochs": 3000, "batch_size": 0,
              "seed": 0, "optimizer": "full_batch_gd", "loss": "mse"},
    "ensemble": {"fusion_inside_cells": "round_robin", "basis": "raw_features"},
    "data": {"kind": "curve"},
    "partners": [],
}


def load_scenario(path, seed_override=None, out_override=None):
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    sc = json.loads(json.dumps(SCENARIO_DEFAULTS))
    for k, v in raw.items():
        if isinstance(v, dict) and isinstance(sc.get(k), dict):
            sc[k].update(v)
        else:
            sc[k] = v
    if seed_override is not None:
        sc["seed"] = seed_override
    if out_override is not None:
        sc["out"] = out_override
    sc.setdefault("out", "out")
    sc["train"]["seed"] = sc["seed"]
    return sc


def _curve_spec(sc):
    d = dict(sc["data"])
    d.pop("kind", None)
    d.setdefault("seed", sc["seed"])
    for key in ("site_windows", "coefficients", "domain", "pieces"):
        if key in d and d[key] is not None:
            d[key] = tuple(tuple(v) if isinstance(v, list) else v for v in d[key])
    return datagen.CurveSpec(**d)


def _arch(sc):
    return models_mod.ModelArch.from_dict(sc["arch"])


def _cfg(sc):
    return models_mod.TrainConfig(**sc["train"])


def _guidance(sc):
    return policy_mod.GuidancePackage(**sc["guidance"])


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v))


# --- run: model sharing ----------------------------------------------------

def run_model_sharing(sc, outdir):
    spec = _curve_spec(sc)
    sites, truth = datagen.synth_curve(spec)
    arch = _arch(sc)
    cfg = _cfg(sc)
    ids = [f"site{i}" for i in range(len(sites))]
    data = dict(zip(ids, sites))

    site_models = {i: models_mod.train(arch, data[i], cfg) for i in ids}
    naive = fusion.naive_fusion([site_models[i] for i in ids])
    ens = fusion.build_ensemble(site_models, data,
                                sc["ensemble"]["fusion_inside_cells"],
                                sc["ensemble"]["basis"], cfg)
    k = int(sc["sample_k"])
    exchange_models = None
    if k > 0:
        exchanged = fusion.sample_exchange([data[i] for i in ids], k, sc["seed"])
        exchange_models = [models_mod.train(arch, ds, cfg) for ds in exchanged]
        exchange_fused = fusion.naive_fusion(exchange_models)

    # protocol session for the configured flavor
    mode = (protocol.MODE_SYNC if sc["fusion"] == "sync"
            else protocol.MODE_ASYNC)
    schema = sites[0].schema
    grid = np.linspace(spec.domain[0], spec.domain[1],
                       int(sc["grid_points"])).reshape(-1, 1)
    grid_labels = np.asarray([spec.f(v) for v in grid[:, 0]])
    grid_ds = models_mod.Dataset(schema, grid, grid_labels)

    fs = protocol.FusionService(
        "session-0", ids, arch, cfg, mode, sc["rounds"],
        sc["local_batches_per_round"], _guidance(sc), schema,
        sample_k=k, exchange_seed=sc["seed"], validation=grid_ds)
    services = [protocol.TrainingService(
        protocol.PartnerSpec(i, data[i]), arch, cfg, "session-0") for i in ids]
    transcript = protocol.run_session(fs, services)

    # metrics on the ground-truth grid
    rows = []
    for i in ids:
        rows.append((i, _fmt(models_mod.evaluate(site_models[i], grid_ds, "mse"))))
    rows.append(("naive", _fmt(models_mod.evaluate(naive, grid_ds, "mse"))))
    ens_pred = np.asarray([fusion.ensemble_predict(ens, x) for x in grid])
    rows.append(("ensemble", _fmt(float(np.mean((ens_pred - grid_labels) ** 2)))))
    if exchange_models is not None:
        rows.append(("sample_exchange",
                     _fmt(models_mod.evaluate(exchange_fused, grid_ds, "mse"))))
    rows.append(("session", _fmt(models_mod.evaluate(transcript.final_model,
                                                     grid_ds, "mse"))))
    _write_csv(os.path.join(outdir, "metrics.csv"), ["model", "mse"], rows)

    fusion.save_region_table(ens.cells, os.path.join(outdir, "regions.csv"))

    with open(os.path.join(outdir, "policies.txt"), "w", encoding="utf-8") as fh:
        fh.write(policy_mod.serialize_policy_set(fs.policies))
        fh.write(policy_mod.serialize_policy_set(ens.selector))

    with open(os.path.join(outdir, "transcript.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(transcript.to_jsonl())

    plot_rows = []
    for r, x in enumerate(grid[:, 0]):
        row = [_fmt(x), _fmt(grid_labels[r])]
        for i in ids:
            row.append(_fmt(site_models[i].predict([x])))
        row.append(_fmt(naive.predict([x])))
        row.append(_fmt(ens_pred[r]))
        plot_rows.append(row)
    _write_csv(os.path.join(outdir, "plotdata.csv"),
               ["x", "ground_truth", *ids, "naive", "ensemble"], plot_rows)
    return 0


# --- run: data sharing -----------------------------------------------------

def run_data_sharing(sc, outdir):
    spec = _curve_spec(sc)
    sites, truth = datagen.synth_curve(spec)
    arch = _arch(sc)
    cfg = _cfg(sc)
    guidance = _guidance(sc)
    ids = [f"site{i}" for i in range(len(sites))]
    partners = {p["id"]: p for p in sc["partners"]}

    offered = []
    descriptors = []
    for i, site_id in enumerate(ids):
        ds = sites[i]
        p = partners.get(site_id, {})
        nu = float(p.get("nu", 0.0))
        if nu > 0:
            ds = datagen.inject_noise(ds, nu, sc["seed"] + i)
        descriptors.append(policy_mod.PartnerDescriptor(
            site_id, p.get("declared_format", "canonical"),
            (), tuple(ds.schema.fields), float(p.get("trustworthiness", 1.0))))
        offered.append((site_id, ds, nu))

    context = policy_mod.Context(
        tuple(descriptors),
        policy_mod.CanonicalSchema("canonical", ("value",),
                                   tuple(sites[0].schema.fields)))
    policies = policy_mod.generate_policies(guidance, context)
    task = models_mod.AnalysisTask(arch, cfg)
    cur = curator_mod.Curator(sites[0].schema, policies, guidance,
                              truth=truth, task=task,
                              trust={d.id: d.trustworthiness for d in descriptors})

    report_rows = []
    for site_id, ds, nu in offered:
        offer = curator_mod.DataOffer(
            site_id, "canonical", ds,
            bounds_mod.PartnerDataStats(site_id, len(ds), nu))
        res = cur.ingest(offer)
        report_rows.append((site_id, str(res.accepted),
                            res.report["rejection_reason"] or ""))

    rows = []
    if len(cur.consolidated):
        model = models_mod.train(arch, cur.consolidated, cfg)
        grid = np.linspace(spec.domain[0], spec.domain[1],
                           int(sc["grid_points"])).reshape(-1, 1)
        grid_labels = np.asarray([spec.f(v) for v in grid[:, 0]])
        grid_ds = models_mod.Dataset(sites[0].schema, grid, grid_labels)
        rows.append(("consolidated", _fmt(models_mod.evaluate(model, grid_ds, "mse"))))
    _write_csv(os.path.join(outdir, "metrics.csv"), ["model", "mse"], rows)
    _write_csv(os.path.join(outdir, "curation.csv"),
               ["partner", "accepted", "reason"], report_rows)
    with open(os.path.join(outdir, "policies.txt"), "w", encoding="utf-8") as fh:
        fh.write(policy_mod.serialize_policy_set(policies))
    curator_mod.save_dataset_csv(cur.consolidated,
                                 os.path.join(outdir, "consolidated.csv"),
                                 os.path.join(outdir, "consolidated.provenance.json"))
    return 0


def cmd_run(args):
    if not os.path.exists(args.scenario):
        return _fail_usage(f"scenario file {args.scenario!r} not found")
    try:
        sc = load_scenario(args.scenario, args.seed, args.out)
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        return _fail_usage(f"invalid scenario: {exc}")
    outdir = sc["out"]
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(sc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    try:
        if sc["mode"] == "model_sharing":
            return run_model_sharing(sc, outdir)
        if sc["mode"] == "data_sharing":
            return run_data_sharing(sc, outdir)
        return _fail_usage(f"unknown mode {sc['mode']!r}")
    except CoalfedError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


# --- bounds ----------------------------------------------------------------

def cmd_bounds(args):
    params = bounds_mod.CouponCollectorParams(c0=args.c0, c1=args.c1)
    try:
        if args.stats_file:
            with open(args.stats_file, encoding="utf-8") as fh:
                d = json.load(fh)
            partners = [bounds_mod.PartnerDataStats(p["partner_id"], p["q"], p["nu"])
                        for p in d["partners"]]
            union = bounds_mod.effective_union(partners, d["dedup_count"],
                                               d["reference"])
            ref = next(p for p in partners if p.partner_id == d["reference"])
            ok, margin = bounds_mod.sharing_benefit(union, ref)
            print("partner\tq\tnu\tprecision\trecall")
            for p in partners:
                print(f"{p.partner_id}\t{p.q}\t{p.nu}\t"
                      f"{bounds_mod.precision_bound(params, p.q, p.nu):.6f}\t"
                      f"{bounds_mod.recall_bound(params, p.q, p.nu):.6f}")
            print(f"union\tk={union.k:.6f}\tnu_agg={union.nu_agg:.6f}\t"
                  f"effective_q={union.effective_q}")
            print(f"sharing_benefit\t{'yes' if ok else 'no'}\tmargin={margin:.6f}")
        else:
            if args.q is None or args.nu is None:
                return _fail_usage("bounds needs --q and --nu (or --stats-file)")
            p = bounds_mod.precision_bound(params, args.q, args.nu)
            r = bounds_mod.recall_bound(params, args.q, args.nu)
            print("q\tnu\tprecision_lower\trecall_upper")
            print(f"{args.q}\t{args.nu}\t{p:.6f}\t{r:.6f}")
        return 0
    except CoalfedError as exc:
        print(f"bounds failed: {exc}", file=sys.stderr)
        return 1


# --- policies --------------------------------------------------------------

def _context_from_json(d):
    return policy_mod.Context(
        tuple(policy_mod.PartnerDescriptor(
            p["id"], p.get("declared_format", "canonical"),
            tuple(p.get("declared_labels", ())),
            tuple(p.get("declared_fields", ())),
            float(p.get("trustworthiness", 1.0)))
            for p in d.get("partners", [])),
        policy_mod.CanonicalSchema(
            d["canonical_schema"].get("format", "canonical"),
            tuple(d["canonical_schema"]["labels"]),
            tuple(d["canonical_schema"]["fields"])),
        tuple(policy_mod.HelperService(h["name"], h["from_format"], h["to_format"])
              for h in d.get("helper_services", [])),
        tuple((tuple(tuple(b) for b in r["bounds"]), r["model_id"])
              for r in d["region_table"]) if d.get("region_table") else None,
        tuple(sorted(d.get("label_synonyms", {}).items())),
        tuple(sorted(d.get("field_synonyms", {}).items())),
    )


def cmd_policies(args):
    try:
        if args.action == "generate":
            with open(args.context, encoding="utf-8") as fh:
                context = _context_from_json(json.load(fh))
            guidance = policy_mod.GuidancePackage()
            if args.guidance:
                with open(args.guidance, encoding="utf-8") as fh:
                    guidance = policy_mod.GuidancePackage(**json.load(fh))
            text = policy_mod.serialize_policy_set(
                policy_mod.generate_policies(guidance, context))
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return 0
        # check
        with open(args.policies, encoding="utf-8") as fh:
            text = fh.read()
        try:
            ps = policy_mod.parse_policy_file(text)
        except PolicyParseError as exc:
            print(f"invalid: {exc}")
            return 1
        print(f"valid: {len(ps)} policies")
        for p in ps:
            print(policy_mod.serialize_policy(p))
        return 0
    except FileNotFoundError as exc:
        return _fail_usage(str(exc))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        return _fail_usage(f"invalid input file: {exc}")
    except CoalfedError as exc:
        print(f"policies failed: {exc}", file=sys.stderr)
        return 1


# --- entry point -----------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="coalfed",
                                 description="coalition federated learning simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(fn=cmd_run)

    p_b = sub.add_parser("bounds", help="evaluate the training-size bounds")
    p_b.add_argument("--q", type=int, default=None)
    p_b.add_argument("--nu", type=float, default=None)
    p_b.add_argument("--c0", type=float, default=1.0)
    p_b.add_argument("--c1", type=float, default=1.0)
    p_b.add_argument("--stats-file", default=None)
    p_b.set_defaults(fn=cmd_bounds)

    p_p = sub.add_parser("policies", help="generate or check policy files")
    p_p.add_argument("action", choices=["generate", "check"])
    p_p.add_argument("--context", default=None)
    p_p.add_argument("--guidance", default=None)
    p_p.add_argument("--policies", default=None)
    p_p.add_argument("--out", default=None)
    p_p.set_defaults(fn=cmd_policies)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "policies":
        if args.action == "generate" and not args.context:
            return _fail_usage("policies generate needs --context")
        if args.action == "check" and not args.policies:
            return _fail_usage("policies check needs --policies")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
