"""End-to-end stages shared by the command line and the experiment scripts.

Every stage reads and writes inside ``cfg.out_dir``::

    config.json               resolved configuration
    data/client_<id>.gamr     per-client train/val/test SampleSets
    data/contrast_shift.gamr  held-out sites (test split only)
    data/unseen_center.gamr
    search_rounds.jsonl       RoundReports of the search phase
    search_state.gamr         final supernet weights and logits
    arch.json                 discretized architecture
    train_rounds.jsonl        RoundReports of the training phase
    model.gamr                trained weights (+ model_round<r>.gamr if periodic)
    metrics.csv / .jsonl      MetricRecords for every scenario
    summary.json / .csv       aggregated tables
"""

import csv
import json
import os

import numpy as np

from .config import save_config
from .container import load_checkpoint, save_checkpoint
from .datasim import (DatasetSplit, build_client_split, contrast_shift_profile,
                      generate_samples, load_split, save_split, unseen_center_profile)
from .errors import ValidationError
from .evaluation import evaluate_scenarios
from .federation import ClientState, build_model, build_supernet, searcher_run, trainer_run
from .metrics import SCENARIOS, fairness_stats, read_records_jsonl, write_records_csv, write_records_jsonl
from .search_space import CellTopology, DiscreteArch

HELDOUT = ("contrast_shift", "unseen_center")


def _path(cfg, *parts):
    return os.path.join(cfg.out_dir, *parts)


def _heldout_profiles(cfg):
    return {"contrast_shift": contrast_shift_profile(cfg.seed, cfg.noise_sigma),
            "unseen_center": unseen_center_profile(cfg.seed)}


def gen_data(cfg):
    """Simulate every client's dataset and the held-out sites."""
    os.makedirs(_path(cfg, "data"), exist_ok=True)
    save_config(cfg)
    acq = dict(size=cfg.image_size, mask_kind=cfg.mask_kind, acceleration=cfg.acceleration,
               acs_fraction=cfg.acs_fraction)
    written = []
    for profile in cfg.client_profiles():
        split = build_client_split(profile, cfg.samples_per_client, tuple(cfg.split_ratios), **acq)
        path = _path(cfg, "data", f"client_{profile.client_id}.gamr")
        save_split(path, split, {"profile": profile.to_dict(), "acquisition": acq,
                                 "config_hash": cfg.hash()})
        written.append(path)
    for name, profile in _heldout_profiles(cfg).items():
        samples = generate_samples(profile, cfg.heldout_samples, **acq)
        path = _path(cfg, "data", f"{name}.gamr")
        save_split(path, DatasetSplit([], [], samples),
                   {"profile": profile.to_dict(), "acquisition": acq, "config_hash": cfg.hash()})
        written.append(path)
    return written


def load_data(cfg):
    """``(clients, heldout)``: ``{id: (DatasetSplit, noise_sigma)}`` and held-out sets."""
    data_dir = _path(cfg, "data")
    if not os.path.isdir(data_dir):
        raise ValidationError(f"no datasets under {data_dir}; run gen-data first")
    clients, heldout = {}, {}
    for profile in cfg.client_profiles():
        path = os.path.join(data_dir, f"client_{profile.client_id}.gamr")
        if not os.path.exists(path):
            raise ValidationError(f"missing dataset {path}; run gen-data first")
        split, manifest = load_split(path, cfg.dtype)
        clients[profile.client_id] = (split, manifest["profile"]["noise_sigma"])
    for name in HELDOUT:
        path = os.path.join(data_dir, f"{name}.gamr")
        if os.path.exists(path):
            split, manifest = load_split(path, cfg.dtype)
            heldout[name] = (manifest["profile"]["client_id"], split.test)
    return clients, heldout


def client_states(clients):
    return [ClientState(cid, split) for cid, (split, _) in sorted(clients.items())]


class _JsonlSink:
    def __init__(self, path):
        self.f = open(path, "w")

    def __call__(self, report, *_):
        self.f.write(report.to_json() + "\n")
        self.f.flush()

    def close(self):
        self.f.close()


def run_search(cfg, clients=None):
    """Federated architecture search; writes ``arch.json`` and returns the arch."""
    if clients is None:
        clients, _ = load_data(cfg)
    save_config(cfg)
    topo = CellTopology(num_intermediate=cfg.nodes)
    model = build_supernet(cfg.channels, cfg.cells, topo, cfg.iterations, cfg.lambda_init)
    sink = _JsonlSink(_path(cfg, "search_rounds.jsonl"))
    try:
        result = searcher_run(cfg.search_federation(), client_states(clients), model, on_round=sink)
    finally:
        sink.close()
    state = dict(result.theta, **{"alpha": result.alpha})
    save_checkpoint(_path(cfg, "search_state.gamr"), state, result.arch, model.describe(), cfg.hash(),
                    {"stage": "search"})
    write_arch(_path(cfg, "arch.json"), result.arch)
    return result


def write_arch(path, arch):
    with open(path, "w") as f:
        json.dump(arch.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def read_arch(path):
    if not path or not os.path.exists(path):
        raise ValidationError(f"architecture file {path!r} not found")
    try:
        with open(path) as f:
            return DiscreteArch.from_dict(json.load(f))
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"{path}: invalid architecture ({e})") from None


def run_train(cfg, arch, clients=None):
    """Fairness-adjusted federated training of ``arch``; writes ``model.gamr``."""
    if clients is None:
        clients, _ = load_data(cfg)
    save_config(cfg)
    model = build_model(arch, cfg.iterations, cfg.lambda_init)
    sink = _JsonlSink(_path(cfg, "train_rounds.jsonl"))

    def on_round(report, server):
        sink(report)
        if cfg.checkpoint_every and report.round % cfg.checkpoint_every == 0:
            save_checkpoint(_path(cfg, f"model_round{report.round}.gamr"), server.global_theta, arch,
                            model.describe(), cfg.hash(), {"stage": "train", "round": report.round})

    try:
        theta, reports = trainer_run(cfg.train_federation(), client_states(clients), arch,
                                     cfg.iterations, on_round=on_round, model=model)
    finally:
        sink.close()
    save_checkpoint(_path(cfg, "model.gamr"), theta, arch, model.describe(), cfg.hash(),
                    {"stage": "train", "round": cfg.train_rounds})
    return theta, reports


def run_eval(cfg, checkpoint=None, scenarios=None, arch=None):
    """Score a checkpoint on every scenario; writes ``metrics.csv``/``.jsonl``."""
    checkpoint = checkpoint or _path(cfg, "model.gamr")
    if not os.path.exists(checkpoint):
        raise ValidationError(f"checkpoint {checkpoint} not found; run train first")
    ckpt = load_checkpoint(checkpoint)
    if ckpt.arch is None:
        raise ValidationError(f"{checkpoint} carries no architecture")
    if arch is not None and arch != ckpt.arch:
        raise ValidationError("--arch does not match the architecture stored in the checkpoint")
    scenarios = list(scenarios or cfg.scenarios)
    for s in scenarios:
        if s not in SCENARIOS:
            raise ValidationError(f"unknown scenario {s!r}; choose from {SCENARIOS}")
    clients, heldout = load_data(cfg)
    model = build_model(ckpt.arch, ckpt.model.get("iterations", cfg.iterations),
                        ckpt.model.get("lambda_init", cfg.lambda_init))
    theta = {k: v.astype(cfg.dtype) for k, v in ckpt.params.items()}
    missing = [s for s in scenarios if s in HELDOUT and s not in heldout]
    if missing:
        raise ValidationError(f"no held-out data for {missing}; run gen-data first")
    records = evaluate_scenarios(cfg, model, theta, clients, heldout, scenarios)
    write_records_csv(records, _path(cfg, "metrics.csv"))
    write_records_jsonl(records, _path(cfg, "metrics.jsonl"))
    return records


def summarize(records):
    """Per-scenario means plus the spread of per-client model losses."""
    rows = []
    for scenario in SCENARIOS:
        model = [r for r in records if r.scenario == scenario and r.recon == "model"]
        if not model:
            continue
        zf = {r.client_id: r for r in records if r.scenario == scenario and r.recon == "zero_filled"}
        loss_mean, loss_std = fairness_stats([r.loss for r in model])
        rows.append({
            "scenario": scenario,
            "clients": len(model),
            "psnr": float(np.mean([r.psnr for r in model])),
            "ssim": float(np.mean([r.ssim for r in model])),
            "zero_filled_psnr": float(np.mean([zf[r.client_id].psnr for r in model])),
            "zero_filled_ssim": float(np.mean([zf[r.client_id].ssim for r in model])),
            "loss_mean": loss_mean,
            "loss_std": loss_std,
        })
    return rows


def run_report(cfg):
    path = _path(cfg, "metrics.jsonl")
    if not os.path.exists(path):
        raise ValidationError(f"{path} not found; run eval first")
    rows = summarize(read_records_jsonl(path))
    with open(_path(cfg, "summary.json"), "w") as f:
        json.dump(rows, f, indent=2)
        f.write("\n")
    if rows:
        with open(_path(cfg, "summary.csv"), "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return rows


def format_summary(rows):
    head = f"{'scenario':<20}{'PSNR':>8}{'ZF PSNR':>9}{'SSIM':>8}{'loss mean':>12}{'loss std':>12}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['scenario']:<20}{r['psnr']:>8.2f}{r['zero_filled_psnr']:>9.2f}"
                     f"{r['ssim']:>8.4f}{r['loss_mean']:>12.3e}{r['loss_std']:>12.3e}")
    return "\n".join(lines)


def run_all(cfg):
    """gen-data, search, train, eval and report in one call."""
    gen_data(cfg)
    clients, _ = load_data(cfg)
    result = run_search(cfg, clients)
    run_train(cfg, result.arch, clients)
    run_eval(cfg)
    return run_report(cfg)


__all__ = ["gen_data", "load_data", "run_search", "run_train", "run_eval", "run_report", "run_all",
           "read_arch", "write_arch", "summarize", "format_summary"]
