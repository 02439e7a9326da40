"""Config-driven pipeline: model -> game -> certify -> run -> extract.

Every stage writes its artifact into ``--out-dir`` so later stages (or a
third party) can pick it up.  Exit codes: 0 success, 2 configuration,
3 solver, 4 protocol abort, 5 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import entropy_account as ea
from .constellation import Constellation
from .game_builder import DegenerateWitnessError, GameSpec, choose_delta, construct_game, expected_omega
from .honest_model import (ConditionalDistribution, HonestDeviceModel, effective_efficiency,
                           expected_distribution)
from .pm_hierarchy import CapacityError, DualCertificate, SolverError, distribution_witness, guessing_bound
from .protocol_engine import BitSource, ReplayDevice, SeedExhausted, Transcript, accept, raw_bits, run, simulate_fast
from .toeplitz_extractor import ToeplitzSpec, extract_stream, plan_geometry, read_seed_file, write_seed_file

log = logging.getLogger("sdqre")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ABORT, EXIT_IO = 0, 2, 3, 4, 5

ARTIFACTS = {
    "distribution": "distribution.txt",
    "game": "game.yaml",
    "report_text": "report.txt",
    "report_json": "report.json",
    "transcript": "transcript.bin",
    "output": "output.bin",
    "extractor_seed": "extractor_seed.bin",
}


class ConfigError(ValueError):
    pass


class ProtocolAbort(RuntimeError):
    pass


# -- config --------------------------------------------------------------

def packaged_config(name: str = "published") -> Path:
    """Path of a shipped example config (``published`` or ``desk``)."""
    return Path(str(resources.files("sdqre") / "configs" / f"{name}.yaml"))


def load_config(path: str | Path) -> dict:
    try:
        cfg = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    for key in ("constellation", "device", "certification"):
        if key not in cfg:
            raise ConfigError(f"missing config block '{key}'")
    return cfg


def _get(block: dict, key: str, kind=float, default: Any = ...):
    if key not in block or block[key] is None:
        if default is ...:
            raise ConfigError(f"missing key '{key}'")
        return default
    try:
        return kind(block[key])
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for '{key}': {block[key]!r}") from None


def build_constellation(cfg: dict) -> Constellation:
    c = cfg["constellation"]
    kind = c.get("kind", "qpsk")
    try:
        if kind == "qpsk":
            return Constellation.qpsk_from_photon_number(_get(c, "mean_photon_number"),
                                                         tuple(c.get("order", (0, 1, 2, 3))))
        if kind == "qam16":
            return Constellation.qam16(_get(c, "corner_amplitude"))
        if kind == "explicit":
            return Constellation.from_config(c["amplitudes"])
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"constellation: {exc}") from None
    raise ConfigError(f"unknown constellation kind '{kind}'")


def build_device(cfg: dict) -> HonestDeviceModel:
    d = cfg["device"]
    if d.get("eta_eff") is not None:
        eta = _get(d, "eta_eff")
    elif "components" in d:
        comp = d["components"]
        eta = effective_efficiency(_get(comp, "pd_eff_avg"), _get(comp, "bs_loss_db"),
                                   _get(comp, "clearance_db"), _get(comp, "extra_loss_db", default=0.0))
    else:
        raise ConfigError("device needs eta_eff or components")
    phases = {int(k): float(v) for k, v in d.get("lo_phases", {0: math.pi / 2, 1: 0.0}).items()}
    try:
        return HonestDeviceModel(build_constellation(cfg), eta, phases)
    except ValueError as exc:
        raise ConfigError(f"device: {exc}") from None


def _cert_block(cfg: dict) -> dict:
    c = cfg["certification"]
    out = {
        "n": _get(c, "n"),
        "gamma": _get(c, "gamma"),
        "eps_com": _get(c, "eps_com", default=1e-3),
        "eps_sou": _get(c, "eps_sou", default=1e-6),
        "level": _get(c, "level", int, default=2),
        "nu_points": _get(c, "nu_points", int, default=21),
        "delta": _get(c, "delta", default=None),
    }
    if not 0 < out["gamma"] < 1:
        raise ConfigError("certification.gamma must lie in (0, 1)")
    return out


# -- pipeline stages -----------------------------------------------------

def stage_model(cfg: dict) -> ConditionalDistribution:
    return expected_distribution(build_device(cfg))


def stage_game(cfg: dict, level: int | None = None) -> GameSpec:
    """Witness -> game, with omega from the honest model and delta from the completeness target."""
    cert = _cert_block(cfg)
    level = level or cert["level"]
    dev = build_device(cfg)
    dist = expected_distribution(dev)
    g = cfg.get("game", {}) or {}
    if g.get("mode", "derive") == "explicit":
        game = GameSpec.from_config(g)
        witness_value = None
    else:
        w = distribution_witness(dev.constellation.gram(), dist, level)
        game = construct_game(w)
        witness_value = w.value(dist)
    omega = _get(g, "omega", default=expected_omega(game, dist)) + _get(g, "omega_shift", default=0.0)
    if not 0 < omega < 1:
        raise ConfigError(f"winning probability {omega} outside (0, 1)")
    delta = cert["delta"]
    if delta is None:
        delta = choose_delta(cert["n"], cert["gamma"], omega, cert["eps_com"])
    out = game.with_params(omega, delta)
    out.meta.update({"level": level, "witness_value": witness_value})
    return out


def certificate_factory(cfg: dict, game: GameSpec, level: int, threads: int = 1):
    gram = build_constellation(cfg).gram()
    weights = game.weights()

    def make(nu: float) -> DualCertificate:
        return guessing_bound(gram, weights, nu, level)

    if threads <= 1:
        return make
    return _Prefetching(make, threads)


class _Prefetching:
    """Certificate factory that solves a whole grid in a thread pool on first use."""

    def __init__(self, make, threads):
        self.make, self.threads, self.cache = make, threads, {}

    def prefetch(self, nus):
        with ThreadPoolExecutor(self.threads) as pool:
            for nu, c in zip(nus, pool.map(self.make, nus)):
                self.cache[nu] = c

    def __call__(self, nu):
        if nu not in self.cache:
            self.cache[nu] = self.make(nu)
        return self.cache[nu]


def stage_certify(cfg: dict, game: GameSpec, level: int | None = None, threads: int = 1) -> ea.CertificationReport:
    cert = _cert_block(cfg)
    level = level or cert["level"]
    factory = certificate_factory(cfg, game, level, threads)
    if isinstance(factory, _Prefetching):
        lo = max(1e-6, game.omega - 5 * game.delta)
        hi = min(1 - 1e-6, game.omega + 5 * game.delta)
        factory.prefetch([float(v) for v in np.linspace(lo, hi, cert["nu_points"])])
    return ea.optimize_rate(cert["n"], cert["gamma"], game.omega, game.delta, game.q, factory,
                            eps_sou=cert["eps_sou"], eps_com=cert["eps_com"], nu_points=cert["nu_points"],
                            game=game.to_config())


def stage_run(cfg: dict, game: GameSpec, seed_file: str | None = None) -> Transcript:
    r = cfg.get("run", {}) or {}
    n = int(_get(r, "n", default=1e6))
    gamma = _get(r, "gamma", default=_cert_block(cfg)["gamma"])
    seed = _get(r, "seed", int, default=0)
    sampler = r.get("sampler", "interval")
    kind = r.get("device", "simulate")
    if kind == "replay":
        device = ReplayDevice.from_file(r["replay_file"])
    elif kind == "simulate":
        device = build_device(cfg)
    else:
        raise ConfigError(f"unknown device '{kind}'")
    if sampler == "fast" and kind == "simulate" and seed_file is None:
        tr = simulate_fast(n, gamma, game, device, np.random.default_rng(seed))
        tr.seed_id = f"rng:{seed}:fast"
        return tr
    if sampler not in ("fast", "interval"):
        raise ConfigError(f"unknown sampler '{sampler}'")
    source = BitSource.from_file(seed_file) if seed_file else BitSource.from_seed(seed)
    seed_id = f"file:{Path(seed_file).name}" if seed_file else f"rng:{seed}"
    return run(n, gamma, game, device, source, np.random.default_rng([seed, 1]), seed_id=seed_id)


def stage_extract(cfg: dict, tr: Transcript, gross_rate: float | None, seed_file: str | None = None,
                  m: int | None = None, n_blk: int | None = None, width: int | None = None):
    """Hash the accepted outcome string; returns ``(output_bits, spec)``."""
    x = cfg.get("extractor", {}) or {}
    n_blk = n_blk or _get(x, "n_blk", int, default=10000)
    width = width or _get(x, "width", int, default=1000)
    if m is None:
        m = _get(x, "m", int, default=None)
    if m is None:
        if not gross_rate:
            raise ConfigError("certified output length is zero; nothing to extract (set extractor.m to force)")
        m, ok = plan_geometry(gross_rate, n_blk)
        if not ok:
            raise ConfigError("certified rate too small for this block size; enlarge extractor.n_blk")
    if seed_file:
        seed = read_seed_file(seed_file, n_blk + m - 1)
    else:
        seed = np.random.default_rng([_get(cfg.get("run", {}) or {}, "seed", int, default=0), 2]) \
            .integers(0, 2, n_blk + m - 1, dtype=np.uint8)
    spec = ToeplitzSpec(m, n_blk, seed, width)
    bits = np.unpackbits(np.frombuffer(raw_bits(tr), np.uint8), count=tr.n)
    return extract_stream(spec, bits, reuse_matrix=bool(x.get("reuse_matrix", True))), spec


# -- artifact helpers ----------------------------------------------------

def _write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data)


def _write_report(out: Path, rep: ea.CertificationReport) -> None:
    _write(out / ARTIFACTS["report_text"], rep.to_text())
    _write(out / ARTIFACTS["report_json"], rep.to_json())


def _load_game(out: Path) -> GameSpec:
    path = out / ARTIFACTS["game"]
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run the 'game' command first")
    return GameSpec.from_config(yaml.safe_load(path.read_text()))


def _save_game(out: Path, game: GameSpec) -> None:
    d = game.to_config()
    d["meta"] = {k: v for k, v in game.meta.items() if v is not None}
    _write(out / ARTIFACTS["game"], yaml.safe_dump(d, sort_keys=False))


# -- commands ------------------------------------------------------------

@dataclass
class Context:
    cfg: dict
    out: Path
    args: argparse.Namespace

    @property
    def level(self):
        return self.args.level


def cmd_model(ctx: Context) -> int:
    dist = stage_model(ctx.cfg)
    text = dist.to_text()
    _write(ctx.out / ARTIFACTS["distribution"], text)
    print(text, end="")
    return EXIT_OK


def cmd_game(ctx: Context) -> int:
    game = stage_game(ctx.cfg, ctx.level)
    _save_game(ctx.out, game)
    print(game.to_table(), end="")
    return EXIT_OK


def cmd_certify(ctx: Context) -> int:
    game = _load_game(ctx.out)
    rep = stage_certify(ctx.cfg, game, ctx.level, ctx.args.threads)
    _write_report(ctx.out, rep)
    print(rep.to_text(), end="")
    return EXIT_OK


def _accept_or_abort(tr: Transcript, game: GameSpec) -> None:
    ok = accept(tr, game.omega, game.delta)
    log.info("n_test=%d n_lost=%d threshold=%d accepted=%s", tr.n_test, tr.n_lost,
             ea.abort_threshold(tr.n, tr.gamma, game.omega, game.delta), ok)
    if not ok:
        raise ProtocolAbort(f"protocol aborted: {tr.n_lost} lost test rounds exceed "
                            f"{ea.abort_threshold(tr.n, tr.gamma, game.omega, game.delta)}")


def cmd_run(ctx: Context) -> int:
    game = _load_game(ctx.out)
    tr = stage_run(ctx.cfg, game, ctx.args.seed_file)
    try:
        _accept_or_abort(tr, game)
    finally:
        tr.save(ctx.out / ARTIFACTS["transcript"])
    print(f"rounds: {tr.n}\ntests: {tr.n_test}\nlost: {tr.n_lost}\naccepted: {tr.accepted}")
    return EXIT_OK


def _gross_from_report(out: Path) -> float | None:
    path = out / ARTIFACTS["report_json"]
    if not path.exists():
        return None
    return json.loads(path.read_text())["gross_rate"]


def _do_extract(ctx: Context, tr: Transcript, seed_file: str | None) -> int:
    if tr.accepted is not True:
        raise ProtocolAbort("transcript was not accepted; refusing to extract")
    a = ctx.args
    bits, spec = stage_extract(ctx.cfg, tr, _gross_from_report(ctx.out), seed_file,
                               getattr(a, "m", None), getattr(a, "n_blk", None), getattr(a, "width", None))
    _write(ctx.out / ARTIFACTS["output"], np.packbits(bits).tobytes())
    write_seed_file(ctx.out / ARTIFACTS["extractor_seed"], spec.seed)
    print(f"raw bits: {tr.n}\nblocks: {tr.n // spec.n_blk}\noutput bits: {bits.size}\nm: {spec.m}\nn_blk: {spec.n_blk}")
    return EXIT_OK


def cmd_extract(ctx: Context) -> int:
    tr = Transcript.load(ctx.out / ARTIFACTS["transcript"])
    return _do_extract(ctx, tr, ctx.args.seed_file)


def cmd_e2e(ctx: Context) -> int:
    t0 = time.perf_counter()
    dist = stage_model(ctx.cfg)
    _write(ctx.out / ARTIFACTS["distribution"], dist.to_text())
    game = stage_game(ctx.cfg, ctx.level)
    _save_game(ctx.out, game)
    log.info("game: omega=%.5f delta=%.5f (%.1fs)", game.omega, game.delta, time.perf_counter() - t0)
    rep = stage_certify(ctx.cfg, game, ctx.level, ctx.args.threads)
    _write_report(ctx.out, rep)
    log.info("certified length %d bits, gross %.3g (%.1fs)", rep.length, rep.gross_rate, time.perf_counter() - t0)
    tr = stage_run(ctx.cfg, game, ctx.args.seed_file)
    try:
        _accept_or_abort(tr, game)
    finally:
        tr.save(ctx.out / ARTIFACTS["transcript"])
    code = _do_extract(ctx, tr, getattr(ctx.args, "extractor_seed_file", None))
    log.info("done in %.1fs", time.perf_counter() - t0)
    return code


COMMANDS = {"model": cmd_model, "game": cmd_game, "certify": cmd_certify, "run": cmd_run,
            "extract": cmd_extract, "e2e": cmd_e2e}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdqre", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML run config ('published' or 'desk' for the shipped ones)")
        s.add_argument("--out-dir", default=".", help="artifact directory")
        s.add_argument("--seed-file", default=None,
                       help="trusted seed for protocol inputs (run, e2e) or the extractor (extract)")
        s.add_argument("--level", type=int, default=None, help="hierarchy level override")
        s.add_argument("--threads", type=int, default=1, help="parallel SDP solves")
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("extract", "e2e"):
            s.add_argument("--m", type=int, default=None)
            s.add_argument("--n-blk", type=int, default=None)
            s.add_argument("--width", type=int, default=None)
        if name == "e2e":
            s.add_argument("--extractor-seed-file", default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg_path = packaged_config(args.config) if args.config in ("published", "desk") else Path(args.config)
        cfg = load_config(cfg_path)
        if args.level is not None and args.level < 1:
            raise ConfigError("level must be >= 1")
        return COMMANDS[args.command](Context(cfg, Path(args.out_dir), args))
    except (ConfigError, DegenerateWitnessError, CapacityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ProtocolAbort as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ABORT
    except (OSError, SeedExhausted) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
