"""Command-line entry points.

Every subcommand takes ``--config <json>`` plus repeated
``--override key=value`` flags (dotted keys, JSON-parsed values), e.g.::

    dinseg phantom --out data/train --count 8 --override phantom.seed=3
    dinseg train --data data/train --out runs/toy.ckpt --override train.epochs=20
    dinseg eval --data data/val --checkpoint runs/toy.ckpt --out runs/eval
    dinseg segment --backend graphcut --in case.raw --clicks clicks.json \
        --boxes boxes.json --out pred.raw
    dinseg transform --in case.raw --clicks clicks.json --method exp \
        --sigma 1,5,5 --out guide.raw
    dinseg serve --port 8000 --checkpoint runs/toy.ckpt
"""

from __future__ import annotations

import argparse
import dataclasses
import json
from pathlib import Path
from typing import Any

import numpy as np

from .baselines import GcParams, RwParams, graph_cut, random_walk
from .clicksim import SamplingConfig, SessionConfig
from .harness import ExperimentSpec, compare, evaluate, build_boxes
from .net.checkpoint import load_model, save_model
from .net.model import DinModel, NetConfig, predict
from .net.train import TrainConfig, train
from .phantoms import PhantomConfig, generate_phantoms, load_dataset
from .transforms import ClickSet, ExpParams, GdtParams, make_guides
from .volume import BoundingBox, Mask, read_volume, write_volume


def _merge_config(path: str | None, overrides: list[str]) -> dict:
    cfg: dict = {}
    if path:
        cfg = json.loads(Path(path).read_text())
    for item in overrides or []:
        if "=" not in item:
            raise SystemExit(f"--override expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return cfg


def _build(cls: type, data: dict | None) -> Any:
    """Instantiate a dataclass from a plain dict, converting lists to tuples."""
    data = data or {}
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise SystemExit(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if isinstance(v, list):
            v = tuple(v)
        if f.name == "augment" and isinstance(v, dict):
            from .net.train import AugmentConfig

            v = _build(AugmentConfig, v)
        kwargs[f.name] = v
    return cls(**kwargs)


def _parse_triple(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise SystemExit(f"expected three comma-separated values, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _load_boxes(path: str | None, gt: Mask | None) -> list[BoundingBox]:
    if path:
        obj = json.loads(Path(path).read_text())
        return [BoundingBox(tuple(b[:3]), tuple(b[3:6])) for b in obj["boxes"]]
    if gt is not None:
        return build_boxes(gt)
    raise SystemExit("need --boxes, or a ground-truth mask to derive boxes from")


def cmd_phantom(args) -> None:
    cfg = _merge_config(args.config, args.override)
    pcfg = _build(PhantomConfig, cfg.get("phantom"))
    pairs = generate_phantoms(pcfg, args.count, args.out)
    print(f"wrote {len(pairs)} phantom pairs under {args.out}")


def cmd_train(args) -> None:
    cfg = _merge_config(args.config, args.override)
    net_cfg = _build(NetConfig, cfg.get("net"))
    train_cfg = _build(TrainConfig, cfg.get("train"))
    sampling = _build(SamplingConfig, cfg.get("sampling"))
    exp_params = _build(ExpParams, cfg.get("exp"))
    dataset = load_dataset(args.data)
    model = DinModel(net_cfg, seed=train_cfg.seed)
    result = train(model, dataset, train_cfg, sampling, exp_params)
    result.restore_best()
    extra = result.optimizer.state_tensors()
    extra["__meta__.best_val_loss"] = np.array([result.best_val_loss], dtype=np.float32)
    extra["__meta__.epochs"] = np.array([len(result.history)], dtype=np.float32)
    save_model(args.out, model, extra)
    curve_path = Path(args.out).with_suffix(".history.csv")
    rows = ["epoch,train_loss,val_loss,lr"] + [h.csv_row() for h in result.history]
    curve_path.write_text("\n".join(rows) + "\n")
    print(f"checkpoint -> {args.out} (best val loss {result.best_val_loss:.4f})")
    print(f"loss history -> {curve_path}")


def _spec_from_args(args, cfg: dict) -> ExperimentSpec:
    return ExperimentSpec(
        data_dir=args.data,
        out_dir=args.out,
        backend=getattr(args, "backend", "din"),
        checkpoint=getattr(args, "checkpoint", None),
        exp_params=_build(ExpParams, cfg.get("exp")),
        sampling=_build(SamplingConfig, cfg.get("sampling")),
        session=_build(SessionConfig, cfg.get("session")),
        sigma_sweep=tuple(tuple(s) for s in cfg.get("sigma_sweep", [])),
        n3d_sweep=tuple(cfg.get("n3d_sweep", [])),
        dim_variant_sweep=tuple(cfg.get("dim_variant_sweep", [])),
        use_boxes=bool(cfg.get("use_boxes", False)),
        gc_params=_build(GcParams, cfg.get("graphcut")),
        rw_params=_build(RwParams, cfg.get("randomwalk")),
        net_cfg=_build(NetConfig, cfg["net"]) if "net" in cfg else None,
        train_cfg=_build(TrainConfig, cfg["train"]) if "train" in cfg else None,
        seed=int(cfg.get("seed", 0)),
    )


def cmd_eval(args) -> None:
    cfg = _merge_config(args.config, args.override)
    spec = _spec_from_args(args, cfg)
    curves = evaluate(spec)
    for name, vals in sorted(curves.items()):
        print(f"{name}: DSC@1 {vals[0]:.3f} DSC@{len(vals)} {vals[-1]:.3f}")
    print(f"outputs -> {args.out}")


def cmd_compare(args) -> None:
    cfg = _merge_config(args.config, args.override)
    spec = _spec_from_args(args, cfg)
    rows = compare(spec, args.backends.split(","))
    for r in rows:
        print(
            f"{r['backend']}: DSC {r['mean_dsc_at_cap']:.3f}, "
            f"clicks {r['mean_clicks_to_threshold']:.1f}, "
            f"{r['mean_seconds_per_interaction'] * 1000:.0f} ms/interaction"
        )
    print(f"outputs -> {args.out}")


def cmd_segment(args) -> None:
    cfg = _merge_config(args.config, args.override)
    vol = read_volume(args.input)
    clicks = ClickSet.load(args.clicks)
    exp_params = _build(ExpParams, cfg.get("exp"))
    gt = Mask.from_volume(read_volume(args.gt)) if args.gt else None

    if args.backend == "din":
        if not args.checkpoint:
            raise SystemExit("din backend needs --checkpoint")
        model, _ = load_model(args.checkpoint)
        boxes = _load_boxes(args.boxes, gt) if (args.boxes or args.use_boxes) else None
        mask = predict(model, vol, clicks, exp_params, boxes)
    elif args.backend in ("graphcut", "randomwalk"):
        boxes = _load_boxes(args.boxes, gt)
        out = np.zeros(vol.dims, dtype=bool)
        for box in boxes:
            if args.backend == "graphcut":
                m = graph_cut(vol, clicks, box, _build(GcParams, cfg.get("graphcut")))
            else:
                _, m = random_walk(vol, clicks, box, _build(RwParams, cfg.get("randomwalk")))
            out |= m.data
        mask = Mask(out, vol.spacing)
    else:
        raise SystemExit(f"unknown backend {args.backend!r}")

    write_volume(mask.to_volume(), args.out)
    print(f"mask -> {args.out} ({mask.count()} voxels)")
    if gt is not None:
        from . import metrics

        print(f"DSC vs ground truth: {metrics.dsc(mask, gt):.4f}")


def cmd_transform(args) -> None:
    vol = read_volume(args.input)
    clicks = ClickSet.load(args.clicks)
    if args.method == "exp":
        params = ExpParams(gamma=args.gamma, sigma=_parse_triple(args.sigma))
    else:
        params = GdtParams(alpha=args.alpha, beta=args.beta)
    guides = make_guides(vol, clicks, args.method, params)
    out = Path(args.out)
    write_volume(guides.foreground, out)
    bg_path = out.with_name(out.stem + "_bg" + out.suffix)
    write_volume(guides.background, bg_path)
    print(f"foreground guide -> {out}")
    print(f"background guide -> {bg_path}")


def cmd_serve(args) -> None:
    import uvicorn

    from .harness import make_server_factory
    from .server import create_app

    backend = args.backend
    model = None
    if args.checkpoint:
        model, _ = load_model(args.checkpoint)
        backend = "din"
    elif backend == "din":
        raise SystemExit("din backend needs --checkpoint")

    app = create_app(make_server_factory(backend, model), static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(prog="dinseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--override", action="append", default=[], help="key=value (dotted keys)")

    p = sub.add_parser("phantom", help="generate synthetic volumes")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    common(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="train the interactive network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="simulated interactive evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="din")
    p.add_argument("--checkpoint")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="compare backends")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backends", default="din,graphcut,randomwalk")
    p.add_argument("--checkpoint")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("segment", help="segment one volume")
    p.add_argument("--backend", default="din")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--clicks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--boxes", help="JSON {\"boxes\": [[zmin,ymin,xmin,zmax,ymax,xmax], ...]}")
    p.add_argument("--use-boxes", action="store_true")
    p.add_argument("--gt", help="optional ground-truth mask volume")
    common(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("transform", help="clicks -> guide maps")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--clicks", required=True)
    p.add_argument("--method", default="exp", choices=["edt", "gdt", "blend", "exp"])
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--sigma", default="1,5,5")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--checkpoint")
    p.add_argument("--backend", default="threshold")
    p.add_argument("--static", help="directory with the web UI bundle")
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
