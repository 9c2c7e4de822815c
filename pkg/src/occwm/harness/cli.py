"""Command-line interface.

    occwm tokenizer train|eval|encode|decode ...
    occwm data gen ...
    occwm wm pretrain|tune|generate ...
    occwm eval forecast|plan|qa ...
    occwm pipeline run ...
    occwm render ...

All commands accept --config FILE (JSON), repeated --set key=value
overrides (dotted paths, JSON-parsed values), and --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..occ import read_occ, render_bev, write_occ, write_ppm
from ..tok import SceneTokenizer, read_sct, write_sct
from ..vocab import parse_generated
from .pipeline import Pipeline, default_config, merge_config, set_by_path
from .reports import (
    forecast_figure,
    forecast_table,
    plan_figure,
    plan_table,
    qa_figure,
    qa_table,
    write_report,
)


def load_cli_config(args) -> dict:
    cfg = default_config()
    if args.config:
        with open(args.config) as f:
            cfg = merge_config(cfg, json.load(f))
    for item in args.set or []:
        key, _, raw = item.partition("=")
        if not _:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        set_by_path(cfg, key, value)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry (dotted path, JSON value)")
    p.add_argument("--seed", type=int, help="override the root seed")
    p.add_argument("--out", default="runs/default", help="artifacts directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="occwm",
                                 description="occupancy-language-action world model")
    sub = ap.add_subparsers(dest="group", required=True)

    tok = sub.add_parser("tokenizer", help="scene tokenizer stages")
    tok_sub = tok.add_subparsers(dest="cmd", required=True)
    for name in ("train", "eval"):
        add_common(tok_sub.add_parser(name))
    enc = tok_sub.add_parser("encode")
    add_common(enc)
    enc.add_argument("--grid", required=True, help="input .occ file")
    enc.add_argument("--tokens", required=True, help="output .sct file")
    dec = tok_sub.add_parser("decode")
    add_common(dec)
    dec.add_argument("--tokens", required=True, help="input .sct file")
    dec.add_argument("--grid", required=True, help="output .occ file")

    data = sub.add_parser("data", help="synthetic dataset generation")
    data_sub = data.add_subparsers(dest="cmd", required=True)
    add_common(data_sub.add_parser("gen"))

    wm = sub.add_parser("wm", help="world-model stages")
    wm_sub = wm.add_subparsers(dest="cmd", required=True)
    for name in ("pretrain", "tune"):
        add_common(wm_sub.add_parser(name))
    gen = wm_sub.add_parser("generate")
    add_common(gen)
    gen.add_argument("--scenario", type=int, default=0, help="eval scenario index")
    gen.add_argument("--trace", action="store_true", help="write the per-step branch trace")

    ev = sub.add_parser("eval", help="evaluation protocols")
    ev_sub = ev.add_subparsers(dest="cmd", required=True)
    for name in ("forecast", "plan", "qa"):
        add_common(ev_sub.add_parser(name))

    pipe = sub.add_parser("pipeline", help="all three stages + evals")
    pipe_sub = pipe.add_subparsers(dest="cmd", required=True)
    add_common(pipe_sub.add_parser("run"))

    rend = sub.add_parser("render", help="BEV snapshot of a grid file")
    add_common(rend)
    rend.add_argument("--grid", required=True, help="input .occ file")
    rend.add_argument("--image", required=True, help="output .ppm file")
    rend.add_argument("--mode", choices=("top_label", "height_map"), default="top_label")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_cli_config(args)
    pipe = Pipeline(cfg, args.out)

    if args.group == "render":
        grid = read_occ(args.grid)
        write_ppm(args.image, render_bev(grid, args.mode))
        print(f"wrote {args.image}")
        return 0

    if args.group == "data" and args.cmd == "gen":
        ds = pipe.build_datasets()
        paths = pipe.render_samples()
        pipe.save_manifest()
        print(json.dumps(pipe.manifest["stages"]["data"], indent=1))
        print("sample renders:", *paths, sep="\n  ")
        return 0

    if args.group == "tokenizer":
        if args.cmd == "train":
            pipe.build_datasets()
            pipe.stage_tokenizer()
            print(json.dumps(pipe.manifest["stages"]["tokenizer"], indent=1))
        elif args.cmd == "eval":
            pipe.build_datasets()
            pipe._load_tokenizer()
            recon = pipe._tokenizer_recon_metrics(pipe.tokenizer, pipe.datasets)
            print(json.dumps(recon, indent=1))
        elif args.cmd == "encode":
            tok, _ = SceneTokenizer.load(Path(args.out) / "tokenizer.ckpt")
            write_sct(args.tokens, tok.encode_tokens(read_occ(args.grid)))
            print(f"wrote {args.tokens}")
        elif args.cmd == "decode":
            tok, _ = SceneTokenizer.load(Path(args.out) / "tokenizer.ckpt")
            grid = tok.decode_grid(read_sct(args.tokens))
            write_occ(args.grid, grid, tok.cfg.num_classes)
            print(f"wrote {args.grid}")
        return 0

    if args.group == "wm":
        if args.cmd == "pretrain":
            pipe.build_datasets()
            pipe.stage_pretrain()
            print(json.dumps(pipe.manifest["stages"]["pretrain"], indent=1))
        elif args.cmd == "tune":
            pipe.build_datasets()
            pipe.stage_tune()
            print(json.dumps(pipe.manifest["stages"]["tune"], indent=1))
        elif args.cmd == "generate":
            ds = pipe.build_datasets()
            bundle = pipe.bundle()
            sc = ds.eval[args.scenario]
            out = bundle.complete(bundle.forecast_prompt(sc, cfg["eval"]["history"]))
            parsed = parse_generated(out.tokens, bundle.vocab,
                                     action_as_text=bundle.action_as_text)
            print(f"generated {len(out)} tokens, {len(parsed.scenes)} scene blocks, "
                  f"{len(parsed.trajectory)} waypoints, diagnostics: {parsed.diagnostics}")
            if args.trace:
                trace_path = Path(args.out) / f"trace_{args.scenario}.jsonl"
                with open(trace_path, "w") as f:
                    for rec in out.meta["trace"]:
                        f.write(json.dumps(rec) + "\n")
                print(f"wrote {trace_path}")
        return 0

    if args.group == "eval":
        from .evals import eval_forecast, eval_plan, eval_qa

        ds = pipe.build_datasets()
        ev = cfg["eval"]
        if args.cmd == "forecast":
            rep = eval_forecast(pipe.bundle(), ds.eval, ev["history"], ev["horizon"])
            paths = write_report(args.out, "forecast", rep, forecast_table(rep), forecast_figure)
        elif args.cmd == "plan":
            bundle = pipe.bundle()
            rep = {}
            for mode in ev["plan_modes"]:
                rep[mode] = eval_plan(bundle, ds.eval, ev["history"], ev["horizon"], mode=mode)
                paths = write_report(args.out, f"plan_{mode}", rep[mode],
                                     plan_table(rep[mode]), plan_figure)
        else:
            bundle = pipe.bundle(with_adapters=True)
            qa_items = [(ds.eval[si].grids[item.frame], item)
                        for si, item in ds.qa_eval][: ev["qa_items"]]
            rep = eval_qa(bundle, qa_items)
            paths = write_report(args.out, "qa", rep, qa_table(rep), qa_figure)
        print(f"report written under {args.out}")
        return 0

    if args.group == "pipeline" and args.cmd == "run":
        report = pipe.run_all()
        print(open(Path(args.out) / "forecast.txt").read())
        for mode in cfg["eval"]["plan_modes"]:
            print(open(Path(args.out) / f"plan_{mode}.txt").read())
        print(open(Path(args.out) / "qa.txt").read())
        print(f"manifest: {pipe.manifest_path}")
        return 0

    raise SystemExit(f"unhandled command {args.group} {getattr(args, 'cmd', '')}")


if __name__ == "__main__":
    sys.exit(main())
