"""Command-line entry points for the experiments and the live protocol demo.

Every verb reads one INI configuration (defaults when ``--config`` is
absent), derives all randomness from ``--seed``, and writes CSV tables
that embed the resolved configuration.  Failures exit nonzero after a
single ``error: <kind>: <detail>`` line on stderr.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .anc import Diverged, select_and_switch, train_bank
from .bankfile import BankFileError, load_bank, save_bank
from .config import Config, ConfigError, load_config
from .experiments import (
    message_from_frame,
    run_anc_rotation,
    run_anc_translation,
    run_rotation_accuracy,
    run_spectra,
    run_translation_accuracy,
    write_rows,
)
from .provider import SyntheticProvider
from .scene import HeadPose, canonical_head
from .wire import SocketPublisher, SocketSubscriber, Status


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="headrest",
        description="Grid-switched active headrest simulator: accuracy and "
        "noise-reduction experiments, filter-bank training, and a "
        "two-process positioning demo.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--seed", type=int, default=0, metavar="N", help="base random seed")
    common.add_argument("--bank", metavar="PATH", help="filter-bank file")
    common.add_argument("--out", default=".", metavar="DIR", help="output directory")
    common.add_argument(
        "--noise", choices=("on", "off"), help="override the observation-noise switch"
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="VERB")
    for verb, help_text in (
        ("accuracy-translate", "signed per-axis deviation over the translation grid"),
        ("accuracy-rotate", "3-D ear error across yaw angles"),
        ("train-bank", "train one filter per grid node and save the bank"),
        ("anc-translate", "noise reduction per node under Ideal/EpOff/EpOn"),
        ("anc-rotate", "noise reduction across yaw angles, three conditions"),
        ("spectra", "ear spectra at the displaced node, all conditions"),
        ("serve-ep", "publish ear positions on the configured endpoint"),
        ("serve-controller", "subscribe and switch filters from a bank"),
    ):
        sub.add_parser(verb, parents=[common], help=help_text)
    return parser


def _resolve_config(args) -> Config:
    cfg = load_config(args.config)
    if args.noise is not None:
        cfg = cfg.with_noise(args.noise == "on")
    return cfg


def _obtain_bank(args, cfg: Config):
    """Load the bank file when given, otherwise train one in-run."""
    if args.bank:
        return load_bank(args.bank)
    return train_bank(
        cfg.acoustic_scene(),
        cfg.anc_grid(),
        canonical_head(),
        cfg.fxlms(),
        base_seed=args.seed,
    )


def _out_path(args, name: str) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _write(args, cfg: Config, name: str, rows) -> None:
    path = _out_path(args, name)
    write_rows(path, rows, cfg, run={"command": args.command, "seed": args.seed})
    print(f"wrote {path}")


def _serve_ep(args, cfg: Config) -> None:
    grid = cfg.anc_grid()
    pose = HeadPose(center=grid.node(*cfg.initial_node))
    n_frames = max(1, round(cfg.serve_seconds * cfg.frame_hz))
    provider = SyntheticProvider(
        [pose] * n_frames,
        camera=cfg.camera(),
        observation=cfg.observation_model(args.seed),
        confidence_gate=cfg.confidence_gate,
        camera_distance=cfg.camera_distance,
    )
    publisher = SocketPublisher(cfg.ep_endpoint)
    print(f"serve-ep endpoint={publisher.address} frames={n_frames}", flush=True)
    interval = 1.0 / cfg.frame_hz
    sent = 0
    try:
        for frame in provider:
            try:
                publisher.publish(message_from_frame(frame, cfg.camera_distance))
            except (BrokenPipeError, ConnectionResetError):
                break  # subscriber hung up; a one-shot demo ends here
            sent += 1
            time.sleep(interval)
    finally:
        publisher.close()
    print(f"serve-ep done sent={sent}")


def _serve_controller(args, cfg: Config) -> None:
    if not args.bank:
        raise ConfigError("serve-controller requires --bank PATH")
    bank = load_bank(args.bank)
    subscriber = SocketSubscriber(cfg.ep_endpoint)
    interval = 1.0 / cfg.poll_hz
    deadline = time.monotonic() + cfg.serve_seconds
    received = 0
    switches = 0
    active_node = None
    try:
        while time.monotonic() < deadline:
            msg = subscriber.poll()
            status = subscriber.status()
            if msg is not None:
                received += 1
                filt = select_and_switch(bank, msg)
                node = filt.trained_at
                if node != active_node:
                    switches += 1
                    active_node = node
                print(
                    f"poll t_us={msg.timestamp_us} node={active_node} "
                    f"status={status.value}",
                    flush=True,
                )
            if status is Status.DISCONNECTED:
                break
            time.sleep(interval)
    finally:
        subscriber.close()
    print(f"serve-controller done received={received} switches={switches}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "accuracy-translate":
            _write(args, cfg, "accuracy_translate.csv", run_translation_accuracy(cfg, args.seed))
        elif args.command == "accuracy-rotate":
            _write(args, cfg, "accuracy_rotate.csv", run_rotation_accuracy(cfg, args.seed))
        elif args.command == "train-bank":
            if not args.bank:
                raise ConfigError("train-bank requires --bank PATH")
            bank = train_bank(
                cfg.acoustic_scene(),
                cfg.anc_grid(),
                canonical_head(),
                cfg.fxlms(),
                base_seed=args.seed,
            )
            n_bytes = save_bank(bank, args.bank)
            print(f"wrote {args.bank} ({n_bytes} bytes, {bank.grid.num_nodes} nodes)")
        elif args.command == "anc-translate":
            bank = _obtain_bank(args, cfg)
            _write(args, cfg, "anc_translate.csv", run_anc_translation(cfg, bank, args.seed))
        elif args.command == "anc-rotate":
            _write(args, cfg, "anc_rotate.csv", run_anc_rotation(cfg, args.seed))
        elif args.command == "spectra":
            bank = _obtain_bank(args, cfg)
            result = run_spectra(cfg, bank, args.seed)
            for ear in ("left", "right"):
                _write(args, cfg, f"spectra_{ear}.csv", result[ear])
        elif args.command == "serve-ep":
            _serve_ep(args, cfg)
        elif args.command == "serve-controller":
            _serve_controller(args, cfg)
    except (ConfigError, BankFileError, Diverged, ValueError, OSError) as exc:
        kind = type(exc).__name__
        print(f"error: {kind}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
