"""Command-line interface.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict

import numpy as np
from threadpoolctl import threadpool_limits

from . import synth
from .context_maps import build_scene_maps, load_map, save_map
from .data_io import DataError, HorizonConfig, ade_fde, load_csv, make_samples, split, write_csv
from .model import ABLATIONS, ModelConfig
from .checks import grad_check_toy
from .tracker import MODES, TrackerConfig, aggregate, synthetic_streams, track_streams, tracking_report
from .trainer import TrainConfig, full_config, load_model, predict, save_model, train

FORMAT_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def blob_hash(path):
    """Git blob id (sha1 over ``blob <size>\\0`` + content) of a file."""
    with open(path, "rb") as fh:
        data = fh.read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def manifest(command, config, seed, inputs, outputs, checkpoint=None):
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "format_version": FORMAT_VERSION,
        "checkpoint_hash": blob_hash(checkpoint) if checkpoint else None,
    }


# -- dataset directories ----------------------------------------------------
def write_dataset(out_dir, samples, horizon, extra=None):
    """One CSV per recording plus ``dataset.json`` listing them."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        name = f"rec_{i:04d}.csv"
        write_csv(os.path.join(out_dir, name), s.trajectories, horizon.dt)
        entries.append({"file": name, "scene_id": s.scene_id, "recording_id": s.recording_id})
    doc = {"format_version": FORMAT_VERSION, "horizon": asdict(horizon), "recordings": entries}
    doc.update(extra or {})
    write_json(os.path.join(out_dir, "dataset.json"), doc)
    return doc


def read_dataset(data_dir, horizon=None):
    path = os.path.join(data_dir, "dataset.json")
    if not os.path.exists(path):
        raise DataError(f"{data_dir} has no dataset.json (run gen-synthetic or preprocess first)")
    with open(path) as fh:
        doc = json.load(fh)
    horizon = horizon or HorizonConfig(**doc["horizon"])
    samples = []
    for rec in doc["recordings"]:
        trajs = load_csv(os.path.join(data_dir, rec["file"]), dt=horizon.dt)
        samples.extend(make_samples(trajs, horizon, rec["scene_id"], rec["recording_id"], stride=horizon.total))
    return doc, samples, horizon


def read_maps(data_dir):
    maps = {}
    map_dir = os.path.join(data_dir, "maps")
    if os.path.isdir(map_dir):
        for name in sorted(os.listdir(map_dir)):
            if name.endswith(".json"):
                prefix = os.path.join(map_dir, name[:-5])
                cmap = load_map(prefix)
                maps[cmap.provenance.get("scene_id", name[:-5])] = cmap
    return maps


def write_maps(data_dir, maps):
    map_dir = os.path.join(data_dir, "maps")
    os.makedirs(map_dir, exist_ok=True)
    for sid, cmap in maps.items():
        save_map(os.path.join(map_dir, _safe(sid)), cmap)


def _safe(name):
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in str(name))


def _splits(samples, seed):
    tr, va, te = split(samples, (0.7, 0.1, 0.2), seed)
    return tr, va, te


# -- commands ----------------------------------------------------------------
def cmd_gen_synthetic(args):
    horizon = HorizonConfig(args.T_h, args.T_f, args.dt)
    samples = synth.generate_dataset(args.archetype, args.n_scenes, horizon, seed=args.seed,
                                     noise_std=args.noise, agents=(args.min_agents, args.max_agents))
    config = {"archetype": args.archetype, "n_scenes": args.n_scenes, "horizon": asdict(horizon),
              "noise_std": args.noise, "agents": [args.min_agents, args.max_agents]}
    m = manifest("gen-synthetic", config, args.seed, [], [args.out])
    write_dataset(args.out, samples, horizon, {"manifest": m})
    print(f"wrote {len(samples)} recordings to {args.out}")


def cmd_preprocess(args):
    horizon = HorizonConfig(args.T_h, args.T_f, args.dt)
    samples = []
    for path in args.input:
        trajs = load_csv(path, dt=args.dt, frame_dt=args.frame_dt)
        rec = os.path.splitext(os.path.basename(path))[0]
        samples.extend(make_samples(trajs, horizon, args.scene_id, rec, stride=args.stride))
    if not samples:
        raise DataError("no complete windows in the input")
    tr, va, te = _splits(samples, args.seed)
    config = {"horizon": asdict(horizon), "frame_dt": args.frame_dt, "stride": args.stride,
              "cell_size": args.cell_size, "split_sizes": [len(tr), len(va), len(te)]}
    m = manifest("preprocess", config, args.seed, list(args.input), [args.out])
    write_dataset(args.out, samples, horizon, {"manifest": m})
    write_maps(args.out, build_scene_maps(tr, cell_size=args.cell_size))
    print(f"wrote {len(samples)} windows ({len(tr)}/{len(va)}/{len(te)} train/val/test) to {args.out}")


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = set(doc) - {"model", "train"}
    if unknown:
        raise ValueError(f"unknown config sections {sorted(unknown)}")
    return doc


def _build(cls, kwargs, section):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValueError(f"bad '{section}' config: {exc}") from None


def cmd_train(args):
    cfg = _load_config(args.config)
    doc, samples, horizon = read_dataset(args.data)
    model_kw = dict(cfg.get("model", {}))
    model_kw.setdefault("T_h", horizon.T_h)
    model_kw.setdefault("T_f", horizon.T_f)
    model_kw.setdefault("dt", horizon.dt)
    if args.ablation:
        model_kw["ablation"] = args.ablation
    model_config = _build(ModelConfig, model_kw, "model")
    train_kw = dict(cfg.get("train", {}))
    train_kw["seed"] = args.seed
    if args.epochs is not None:
        train_kw["epochs"] = args.epochs
    train_config = _build(TrainConfig, train_kw, "train")
    tr, va, _ = _splits(samples, args.seed)
    if not va:
        va = tr[-1:]
    os.makedirs(args.out, exist_ok=True)
    maps = read_maps(args.data) or None
    metrics = os.path.join(args.out, "metrics.jsonl")
    result = train(tr, va, model_config, train_config, maps=maps, metrics_path=metrics)
    ck = os.path.join(args.out, "checkpoint.json")
    save_model(ck, result.model, train_config, {"best_epoch": result.best_epoch})
    write_maps(args.out, result.maps)
    m = manifest("train", full_config(model_config, train_config), args.seed, [args.data, args.config],
                 [ck, metrics], checkpoint=ck)
    write_json(os.path.join(args.out, "manifest.json"), m)
    print(f"best epoch {result.best_epoch} val_ade={result.best_val_ade:.4f}; checkpoint {ck}")


def _prediction_doc(results, samples, model):
    cfg = model.config
    out = []
    for res, s in zip(results, samples):
        agents = []
        for i, tr in enumerate(s.trajectories):
            t_last = tr.t[cfg.T_h - 1]
            entry = {"agent_id": tr.agent_id, "agent_type": tr.agent_type,
                     "t": [float(t_last + (k + 1) * cfg.dt) for k in range(cfg.T_f)],
                     "samples": res["samples"][:, i].tolist()}
            unc = res.get("uncertainty")
            if unc and unc[i] is not None:
                entry["uncertainty"] = {k: v.tolist() for k, v in unc[i].items()}
            agents.append(entry)
        out.append({"scene_id": s.scene_id, "recording_id": s.recording_id, "start_time": s.start_time,
                    "mode": res["mode"], "agents": agents})
    return out


def cmd_predict(args):
    model, train_config, _ = load_model(args.checkpoint)
    cfg = model.config
    horizon = HorizonConfig(cfg.T_h, cfg.T_f, cfg.dt)
    doc, samples, data_horizon = read_dataset(args.data, horizon)
    if abs(data_horizon.dt - cfg.dt) > 1e-12:
        raise ValueError(f"dataset dt {data_horizon.dt} does not match checkpoint dt {cfg.dt}")
    if args.split != "all":
        tr, va, te = _splits(samples, train_config.seed)
        samples = {"train": tr, "val": va, "test": te}[args.split]
    maps = read_maps(os.path.dirname(os.path.abspath(args.checkpoint))) or read_maps(args.data)
    mode = args.mode if args.mode != "det" or args.k == 1 else "sample"
    results = predict(model, samples, maps, k=args.k, mode=mode, seed=args.seed, n_particles=args.particles)
    m = manifest("predict", {"k": args.k, "mode": mode, "split": args.split, "particles": args.particles,
                             "model": cfg.to_dict()}, args.seed, [args.checkpoint, args.data], [args.out],
                 checkpoint=args.checkpoint)
    write_json(args.out, {"manifest": m, "horizon": asdict(horizon), "predictions": _prediction_doc(results, samples, model)})
    print(f"wrote {len(results)} scene predictions to {args.out}")


def _truth_tables(path, dt, recordings):
    """recording_id -> {agent_id: trajectory} from a dataset directory or one CSV."""
    if os.path.isdir(path):
        doc_path = os.path.join(path, "dataset.json")
        if not os.path.exists(doc_path):
            raise DataError(f"{path} has no dataset.json")
        with open(doc_path) as fh:
            doc = json.load(fh)
        return {rec["recording_id"]: {tr.agent_id: tr for tr in load_csv(os.path.join(path, rec["file"]), dt=dt)}
                for rec in doc["recordings"] if rec["recording_id"] in recordings}
    if len(recordings) > 1:
        raise DataError(f"predictions span {len(recordings)} recordings; pass --recording or a dataset directory")
    table = {tr.agent_id: tr for tr in load_csv(path, dt=dt)}
    return {rid: table for rid in recordings}


def cmd_eval(args):
    with open(args.pred) as fh:
        pred = json.load(fh)
    dt = pred.get("horizon", {}).get("dt", args.dt)
    scenes = pred["predictions"]
    if args.recording is not None:
        scenes = [sc for sc in scenes if str(sc.get("recording_id")) == args.recording]
    recordings = sorted({sc.get("recording_id") for sc in scenes}, key=str)
    tables = _truth_tables(args.truth, dt, recordings)
    preds, gts = [], []
    for scene in scenes:
        truth = tables.get(scene.get("recording_id"), {})
        for ag in scene["agents"]:
            tr = truth.get(ag["agent_id"])
            if tr is None:
                raise DataError(f"agent {ag['agent_id']} of {scene.get('recording_id')} missing from {args.truth}")
            idx = [int(np.argmin(np.abs(tr.t - t))) for t in ag["t"]]
            if any(abs(tr.t[j] - t) > 1e-6 for j, t in zip(idx, ag["t"])):
                raise DataError(f"truth for agent {ag['agent_id']} does not cover the forecast times")
            preds.append(np.asarray(ag["samples"], dtype=np.float64))
            gts.append(tr.xy[idx])
    if not preds:
        raise DataError("prediction file holds no agents")
    first = np.stack([p[0] for p in preds])
    truth_arr = np.stack(gts)
    ade, fde = ade_fde(first, truth_arr)
    errs = np.stack([np.linalg.norm(p - g[None], axis=-1) for p, g in zip(preds, gts)])  # (N, K, T_f)
    min_ade = float(errs.mean(axis=2).min(axis=1).mean())
    min_fde = float(errs[..., -1].min(axis=1).mean())
    report = {"ade": ade, "fde": fde, "min_ade": min_ade, "min_fde": min_fde, "n_agents": len(preds),
              "n_samples": int(errs.shape[1])}
    print(f"ade={ade:g} fde={fde:g} min_ade={min_ade:g} min_fde={min_fde:g}")
    if args.out:
        write_json(args.out, report)


def _occlusion(spec, dt, T):
    mask = np.zeros(T, dtype=bool)
    if spec:
        a, b = (float(x) for x in spec.split(":"))
        if b <= a:
            raise ValueError("occlusion window must be START:END with END > START (seconds)")
        t = np.arange(T) * dt
        mask[(t >= a - 1e-9) & (t < b - 1e-9)] = True
    return mask


def cmd_track(args):
    if args.process == "model" and not args.checkpoint:
        raise ValueError("--process model needs --checkpoint")
    model = maps = None
    dt = args.dt
    if args.checkpoint:
        model, _, _ = load_model(args.checkpoint)
        dt = model.config.dt
        maps = read_maps(os.path.dirname(os.path.abspath(args.checkpoint)))
    config = TrackerConfig(dt=dt, meas_std=args.meas_std)
    rng = np.random.default_rng(args.seed)
    streams = synthetic_streams(args.archetype, args.n_scenes, args.steps, dt, args.seed)
    occ = _occlusion(args.occlusion, dt, args.steps)
    reports = track_streams(streams, args.process, config, rng, occ, model, maps)
    summary = aggregate(reports)
    doc = json.loads(tracking_report({args.process: {**summary, "per_scene": reports}}, config))
    doc["manifest"] = manifest("track", {"process": args.process, "occlusion": args.occlusion, "steps": args.steps,
                                         "archetype": args.archetype, "n_scenes": args.n_scenes,
                                         "tracker": asdict(config)}, args.seed,
                               [args.checkpoint] if args.checkpoint else [], [args.out], checkpoint=args.checkpoint)
    write_json(args.out, doc)
    print(f"{args.process}: position_rmse={summary['position_rmse']:.4f} m "
          f"velocity_rmse={summary['velocity_rmse']:.4f} m/s")


def cmd_grad_check(args):
    report = grad_check_toy(args.ablation, seed=args.seed, max_entries=args.entries)
    worst = max(report.values())
    doc = {"ablation": args.ablation, "max_relative_error": worst, "per_parameter": report,
           "manifest": manifest("grad-check", {"ablation": args.ablation, "entries": args.entries}, args.seed,
                                [], [args.out] if args.out else [])}
    if args.out:
        write_json(args.out, doc)
    print(f"{args.ablation}: max relative error {worst:.3e}")
    if worst >= args.tol:
        raise RuntimeError(f"gradient check failed: {worst:.3e} >= {args.tol:g}")


# -- parser ------------------------------------------------------------------
def build_parser():
    p = _Parser(prog="stgdat", description="Multi-agent trajectory prediction and tracking.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0, help="master random seed (integer)")
        sp.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP worker threads (count; 1 is reproducible)")

    g = sub.add_parser("gen-synthetic", help="simulate a synthetic dataset")
    g.add_argument("--archetype", choices=["intersection", "roundabout", "highway"], default="intersection",
                   help="scenario layout")
    g.add_argument("--n-scenes", type=int, default=200, help="number of recordings (count)")
    g.add_argument("--T-h", dest="T_h", type=int, default=4, help="history length (steps)")
    g.add_argument("--T-f", dest="T_f", type=int, default=10, help="forecast length (steps)")
    g.add_argument("--dt", type=float, default=0.5, help="time step (seconds)")
    g.add_argument("--noise", type=float, default=0.02, help="position noise std (meters)")
    g.add_argument("--min-agents", type=int, default=2, help="fewest agents per recording (count)")
    g.add_argument("--max-agents", type=int, default=4, help="most agents per recording (count)")
    g.add_argument("--out", required=True, help="output dataset directory (path)")
    common(g)
    g.set_defaults(func=cmd_gen_synthetic)

    pp = sub.add_parser("preprocess", help="resample CSV recordings, window them and build context maps")
    pp.add_argument("--input", nargs="+", required=True, help="trajectory CSV files, one per recording (paths)")
    pp.add_argument("--scene-id", default="scene", help="location key shared by the inputs (string)")
    pp.add_argument("--dt", type=float, default=0.4, help="resampling step (seconds)")
    pp.add_argument("--frame-dt", type=float, default=None, help="time between frame ids (seconds; default dt)")
    pp.add_argument("--T-h", dest="T_h", type=int, default=8, help="history length (steps)")
    pp.add_argument("--T-f", dest="T_f", type=int, default=12, help="forecast length (steps)")
    pp.add_argument("--stride", type=int, default=1, help="window stride (steps)")
    pp.add_argument("--cell-size", type=float, default=1.0, help="context grid cell edge (meters)")
    pp.add_argument("--out", required=True, help="output dataset directory (path)")
    common(pp)
    pp.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="train a predictor")
    t.add_argument("--data", required=True, help="dataset directory (path)")
    t.add_argument("--config", default=None, help="JSON config with 'model' and 'train' sections (path)")
    t.add_argument("--ablation", choices=ABLATIONS, default=None, help="model variant")
    t.add_argument("--epochs", type=int, default=None, help="training epochs (count)")
    t.add_argument("--out", required=True, help="run directory for checkpoint and metrics (path)")
    common(t)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="forecast from a checkpoint")
    pr.add_argument("--checkpoint", required=True, help="checkpoint JSON (path)")
    pr.add_argument("--data", required=True, help="dataset directory (path)")
    pr.add_argument("--split", choices=["all", "train", "val", "test"], default="test", help="which split to forecast")
    pr.add_argument("--k", type=int, default=1, help="latent draws per scene (count)")
    pr.add_argument("--mode", choices=["det", "sample", "gaussian", "mc"], default="det",
                    help="det: prior mean; sample: k prior draws; gaussian/mc: vehicle uncertainty")
    pr.add_argument("--particles", type=int, default=100, help="Monte-Carlo particles per vehicle (count)")
    pr.add_argument("--out", required=True, help="prediction JSON (path)")
    common(pr)
    pr.set_defaults(func=cmd_predict)

    tk = sub.add_parser("track", help="track synthetic scenes with a chosen process model")
    tk.add_argument("--process", choices=MODES, default="cvm", help="prior-update model")
    tk.add_argument("--checkpoint", default=None, help="checkpoint JSON, required for model (path)")
    tk.add_argument("--archetype", choices=["intersection", "roundabout", "highway"], default="intersection",
                    help="scenario layout")
    tk.add_argument("--n-scenes", type=int, default=20, help="scenes to track (count)")
    tk.add_argument("--steps", type=int, default=14, help="steps per scene (count)")
    tk.add_argument("--dt", type=float, default=0.5, help="time step without a checkpoint (seconds)")
    tk.add_argument("--meas-std", type=float, default=0.02, help="position measurement noise std (meters)")
    tk.add_argument("--occlusion", default="3:4", help="occluded window START:END (seconds)")
    tk.add_argument("--out", required=True, help="tracking report JSON (path)")
    common(tk)
    tk.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score predictions against a truth CSV")
    e.add_argument("--pred", required=True, help="prediction JSON (path)")
    e.add_argument("--truth", required=True, help="truth trajectory CSV or dataset directory (path)")
    e.add_argument("--recording", default=None, help="only score scenes of this recording id")
    e.add_argument("--dt", type=float, default=0.4, help="truth time step if the predictions lack one (seconds)")
    e.add_argument("--out", default=None, help="optional report JSON (path)")
    common(e)
    e.set_defaults(func=cmd_eval)

    gc = sub.add_parser("grad-check", help="finite-difference check of the full training loss on a toy scene")
    gc.add_argument("--ablation", choices=ABLATIONS, default="T+C+K", help="model variant")
    gc.add_argument("--entries", type=int, default=6, help="probed entries per parameter tensor (count)")
    gc.add_argument("--tol", type=float, default=1e-4, help="pass threshold on relative error (unitless)")
    gc.add_argument("--out", default=None, help="optional report JSON (path)")
    common(gc)
    gc.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    threads = args.threads
    if threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return 1
    try:
        with threadpool_limits(limits=threads):
            args.func(args)
    except (ValueError, KeyError, DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
