"""Command-line pipeline: LUT compilation, phantoms, tracking, evaluation.

Exit codes: 0 success, 2 configuration error, 3 input-format error,
4 numeric failure.  The tracker runs on a process pool sized by
--threads (or the FANFILTER_THREADS environment variable); output order
is canonical in (seed index, repetition), so any pool size produces
byte-identical files.
"""

import collections
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np

from . import bingham as bg, formats, metrics, phantom as ph, tracker as tr
from .config import RunConfig
from .errors import (ConfigError, ContractError, DomainError, FanfilterError,
                     FormatError, MetricError)

CONV_NAME = "conv.blut"
INIT_NAME = "init.blut"


def _fail(code, message):
    click.echo("error: %s" % message, err=True)
    sys.exit(code)


def _thread_count(threads):
    env = os.environ.get("FANFILTER_THREADS")
    if env is not None:
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError("FANFILTER_THREADS must be an integer")
    if threads is None:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigError("thread count must be at least 1")
    return threads


@click.group()
def main():
    """Anisotropic-fanning tractography on order-6 fODF tensor fields."""


@main.command("lut")
@click.argument("action", type=click.Choice(["build"]))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--kappa-step", default=bg.GRID_STEP, show_default=True)
@click.option("--beta-step", default=bg.GRID_STEP, show_default=True)
def lut_cmd(action, out, kappa_step, beta_step):
    """Build the convolution and initialization lookup tables."""
    try:
        if kappa_step <= 0 or beta_step <= 0:
            raise ConfigError("grid steps must be positive")
        os.makedirs(out, exist_ok=True)
        conv = bg.build_conv_lut(kappa_step=kappa_step, beta_step=beta_step)
        conv.save(os.path.join(out, CONV_NAME))
        init = bg.build_init_lut(conv)
        init.save(os.path.join(out, INIT_NAME))
        click.echo("wrote %s and %s (%d nodes)"
                   % (os.path.join(out, CONV_NAME),
                      os.path.join(out, INIT_NAME), len(conv.payload)))
    except ConfigError as exc:
        _fail(2, exc)
    except (DomainError, FanfilterError) as exc:
        _fail(4, exc)


@main.command("phantom")
@click.argument("action", type=click.Choice(["gen"]))
@click.option("--spec", "spec_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "prefix", required=True)
def phantom_cmd(action, spec_path, prefix):
    """Generate a phantom field, reference streamlines, and seeds."""
    try:
        spec = ph.PhantomSpec.from_json(spec_path)
    except (ConfigError, json.JSONDecodeError) as exc:
        _fail(2, exc)
    try:
        rng = np.random.default_rng(0)
        field, refs = ph.gen_phantom(spec, rng)
        formats.write_fof(prefix + ".fof", field)
        formats.write_tsl(prefix + ".ref.tsl", refs)
        seeds = []
        for r in refs:
            tangent = r.points[1] - r.points[0]
            seeds.append(tr.Seed(r.points[0], tangent))
        formats.write_seeds(prefix + ".seeds", seeds)
        click.echo("wrote %s.fof, %s.ref.tsl, %s.seeds (%d references)"
                   % (prefix, prefix, prefix, len(refs)))
    except FanfilterError as exc:
        _fail(4, exc)


_worker_ctx = {}


def _worker_init(field_path, lut_dir, cfg_dict):
    _worker_ctx["field"] = formats.read_fof(field_path)
    _worker_ctx["conv"] = bg.ConvLut.load(os.path.join(lut_dir, CONV_NAME))
    _worker_ctx["init"] = bg.build_init_lut(_worker_ctx["conv"]) \
        if not os.path.exists(os.path.join(lut_dir, INIT_NAME)) \
        else bg.InitLut.load(os.path.join(lut_dir, INIT_NAME))
    _worker_ctx["cfg"] = cfg_dict


def _worker_track(job):
    si, rep, position, direction, global_seed = job
    cfg = _worker_ctx["cfg"]
    sl = _track_one(_worker_ctx["field"], tr.Seed(position, direction), cfg,
                    _worker_ctx["conv"], _worker_ctx["init"],
                    si, rep, global_seed)
    return si, rep, sl


def _track_one(field, seed, cfg, conv, init, si, rep, global_seed):
    rng = tr.rng_for_seed(global_seed, si, rep)
    sl = tr.track_streamline(field, seed, cfg, conv, init, rng)
    if cfg.bidirectional:
        rng_b = tr.rng_for_seed(global_seed, si, rep + cfg.seeds_per_point)
        back = tr.track_streamline(
            field, tr.Seed(seed.position, -seed.direction), cfg, conv, init,
            rng_b)
        if len(back) > 1:
            sl = tr.Streamline(
                np.concatenate([back.points[::-1], sl.points[1:]]), sl.reason)
    return sl


@main.command("track")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--threads", default=None, type=int,
              help="worker processes (default: logical cores; "
                   "FANFILTER_THREADS overrides)")
def track_cmd(config_path, threads):
    """Track all seeds from a run configuration."""
    try:
        cfg = RunConfig.from_json(config_path)
        threads = _thread_count(threads)
        for name in ("field_file", "seeds_file", "lut_file", "output_tsl"):
            if getattr(cfg, name) is None:
                raise ConfigError("track requires config key %r" % name)
    except ConfigError as exc:
        _fail(2, exc)
    try:
        field = formats.read_fof(cfg.field_file)
        seeds = formats.read_seeds(cfg.seeds_file)
    except FormatError as exc:
        _fail(3, exc)
    try:
        tcfg = cfg.tracking()
        lut_dir = cfg.lut_file
        jobs = [(si, rep, s.position, s.direction, cfg.rng_seed)
                for si, s in enumerate(seeds)
                for rep in range(cfg.seeds_per_point)]
        if threads == 1:
            _worker_init(cfg.field_file, lut_dir, tcfg)
            results = [_worker_track(j) for j in jobs]
        else:
            with ProcessPoolExecutor(
                    max_workers=threads, initializer=_worker_init,
                    initargs=(cfg.field_file, lut_dir, tcfg)) as pool:
                results = list(pool.map(_worker_track, jobs, chunksize=4))
        results.sort(key=lambda t: (t[0], t[1]))
        out = [sl for _, _, sl in results
               if sl.length_mm >= tcfg.min_length_mm]
        formats.write_tsl(cfg.output_tsl, out)
        counts = collections.Counter(sl.reason for _, _, sl in results)
        for reason in tr.TERMINATION_REASONS:
            click.echo("%s: %d" % (reason, counts.get(reason, 0)))
        click.echo("kept %d of %d streamlines (min length %.1f mm) -> %s"
                   % (len(out), len(results), tcfg.min_length_mm,
                      cfg.output_tsl))
    except FormatError as exc:
        _fail(3, exc)
    except FanfilterError as exc:
        _fail(4, exc)


@main.command("eval")
@click.option("--ref", "ref_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--rec", "rec_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "report_path", default=None)
def eval_cmd(ref_path, rec_path, config_path, report_path):
    """Score a reconstruction against references (completeness / excess)."""
    cfg = None
    try:
        if config_path is not None:
            cfg = RunConfig.from_json(config_path)
    except ConfigError as exc:
        _fail(2, exc)
    try:
        ref = formats.read_tsl(ref_path)
        rec = formats.read_tsl(rec_path)
    except FormatError as exc:
        _fail(3, exc)
    try:
        n_raw = len(rec)
        if cfg is not None:
            rec = metrics.roi_filter(rec, cfg.rois)
            if cfg.field_file is not None:
                field = formats.read_fof(cfg.field_file)
                rec = metrics.density_filter(
                    rec, field.dims, field.spacing, field.origin,
                    cfg.min_visits, cfg.max_low_frac)
        completeness = metrics.directed_hausdorff_q95(ref, rec)
        excess = metrics.directed_hausdorff_q95(rec, ref)
        click.echo("completeness: %.6f mm" % completeness)
        click.echo("excess: %.6f mm" % excess)
        report = {
            "completeness_mm": round(completeness, 9),
            "excess_mm": round(excess, 9),
            "n_reference": len(ref),
            "n_reconstructed": n_raw,
            "n_after_filters": len(rec),
        }
        out = report_path
        if out is None and cfg is not None:
            out = cfg.report_file
        if out is not None:
            with open(out, "w") as fh:
                json.dump(report, fh, indent=2, sort_keys=True)
                fh.write("\n")
    except FormatError as exc:
        _fail(3, exc)
    except (MetricError, FanfilterError) as exc:
        _fail(4, exc)


if __name__ == "__main__":
    main()
