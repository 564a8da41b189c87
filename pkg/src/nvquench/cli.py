"""Command-line batch pipeline: ``nvquench analyze|models|synth|unmix|linewidth``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import charge, photodyn, separate, synth
from .inference import InferenceError, PriorConfig, smc_run
from .spectra import (ManifestRecord, PairMeta, SpectrumError, ZoneSet,
                      integrate_intensity, load_spectrum_pair, read_manifest, write_columns_csv,
                      write_manifest, write_spectrum_csv)

log = logging.getLogger("nvquench")

SUMMARY_COLUMNS = ("temperature_K", "wavelength_nm", "power_uW", "epsilon_mean", "epsilon_sd",
                   "delta_mean", "delta_sd", "alpha", "alpha_sd", "pl_fraction_minus",
                   "integrated_minus", "integrated_zero")

# Acquisition grid the batch is sized for: 9 temperatures x 9 wavelengths x 5 powers.
GRID_TEMPERATURES_K = (1.6, 10.0, 25.0, 50.0, 75.0, 100.0, 150.0, 200.0, 295.0)
GRID_WAVELENGTHS_NM = (458.0, 476.0, 488.0, 497.0, 502.0, 515.0, 532.0, 550.0, 560.0)
GRID_POWERS_UW = (10.0, 30.0, 100.0, 300.0, 1000.0)


def _from_dict(cls, d: dict | None):
    d = d or {}
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class ModelConfig:
    rates: photodyn.NvMinusRates = field(default_factory=photodyn.NvMinusRates)
    nv_zero: photodyn.NvZeroRates = field(default_factory=photodyn.NvZeroRates)
    ionization: charge.IonizationCrossSections = field(default_factory=charge.IonizationCrossSections)
    donor: charge.DonorConfig = field(default_factory=charge.DonorConfig)
    emission: charge.EmissionConstants = field(default_factory=charge.EmissionConstants)
    fixed_c_NVm: float = 0.66
    angle_deg: float = 54.7356
    field_mT: float = 100.0
    power_uW: float = 10.0
    spot_diameter_um: float = 1.0

    @classmethod
    def from_dict(cls, d: dict | None) -> "ModelConfig":
        d = dict(d or {})
        kw = {}
        for key, sub in (("rates", photodyn.NvMinusRates), ("nv_zero", photodyn.NvZeroRates),
                         ("ionization", charge.IonizationCrossSections),
                         ("donor", charge.DonorConfig), ("emission", charge.EmissionConstants)):
            if key in d:
                kw[key] = _from_dict(sub, d.pop(key))
        kw.update(d)
        return _from_dict(cls, kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("rates", "nv_zero"):
            d[key].pop("absorption", None)
        return d


@dataclass(frozen=True)
class RunConfig:
    manifest: Path | None = None
    zones: ZoneSet = field(default_factory=ZoneSet)
    prior: PriorConfig = field(default_factory=PriorConfig)
    models: ModelConfig = field(default_factory=ModelConfig)
    out: Path = Path("out")
    seed: int = 0
    jobs: int = 1
    linewidth_window: tuple[float, float] | None = None
    unmix_floor: float = separate.UNMIX_FLOOR

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("worker count must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    @classmethod
    def from_dict(cls, d: dict | None, base: Path | None = None) -> "RunConfig":
        d = dict(d or {})
        kw = {}
        if d.get("manifest") is not None:
            p = Path(d.pop("manifest"))
            kw["manifest"] = p if p.is_absolute() or base is None else base / p
        d.pop("manifest", None)
        if "zones" in d:
            kw["zones"] = ZoneSet.from_dict(d.pop("zones"))
        if "prior" in d:
            kw["prior"] = PriorConfig.from_dict(d.pop("prior"))
        if "models" in d:
            kw["models"] = ModelConfig.from_dict(d.pop("models"))
        if "out" in d:
            kw["out"] = Path(d.pop("out"))
        if d.get("linewidth_window") is not None:
            kw["linewidth_window"] = tuple(map(float, d.pop("linewidth_window")))
        kw.update(d)
        return _from_dict(cls, kw)

    def to_dict(self) -> dict:
        return {"manifest": None if self.manifest is None else str(self.manifest),
                "zones": self.zones.to_dict(), "prior": self.prior.to_dict(),
                "models": self.models.to_dict(), "out": str(self.out), "seed": self.seed,
                "jobs": self.jobs, "linewidth_window": self.linewidth_window,
                "unmix_floor": self.unmix_floor}


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return RunConfig.from_dict(json.load(fh), base=path.parent)


def pair_seed(master: int, index: int) -> int:
    """Seed for pair ``index``; depends only on (master, index), never on scheduling."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def _num(x) -> float:
    return float("nan") if x is None else float(x)


def analyze_pair(index: int, rec: ManifestRecord, cfg: RunConfig) -> dict:
    """Inference, separation and linewidth for one pair. Returns a JSON-ready report."""
    pair = load_spectrum_pair(rec.off, rec.on, rec.meta, rec.field_mT)
    seed = pair_seed(cfg.seed, index)
    post, ens = smc_run(pair, cfg.zones, cfg.prior, seed)
    report = {"index": index, "off": str(rec.off), "on": str(rec.on), "seed": seed,
              "meta": asdict(rec.meta), "field_mT": rec.field_mT, "posterior": post.to_dict(),
              "resample_steps": len(ens.resample_steps)}
    row = {"temperature_K": _num(rec.temperature_K), "wavelength_nm": _num(rec.wavelength_nm),
           "power_uW": _num(rec.power_uW), "epsilon_mean": post.epsilon_mean,
           "epsilon_sd": post.epsilon_sd, "delta_mean": post.delta_mean,
           "delta_sd": post.delta_sd}
    try:
        sep = separate.unmix(pair, post.epsilon_mean, post.delta_mean, post.C_mean,
                             floor=cfg.unmix_floor)
        im = integrate_intensity(sep.i_minus)
        iz = integrate_intensity(sep.i_zero)
        row.update(integrated_minus=im, integrated_zero=iz,
                   pl_fraction_minus=im / (im + iz) if im + iz != 0 else float("nan"))
        report["peak_leakage"] = separate.peak_leakage(sep, cfg.zones.zplminus)
    except separate.UnmixError as exc:
        row.update(integrated_minus=float("nan"), integrated_zero=float("nan"),
                   pl_fraction_minus=float("nan"))
        report["unmix_error"] = str(exc)
    s0, sB = ens.noise
    try:
        fit = separate.linewidth_contrast(pair, cfg.linewidth_window, seed=seed,
                                          background=post.C_mean,
                                          noise_ratio=sB / s0 if s0 > 0 else 1.0)
        row.update(alpha=fit.alpha, alpha_sd=fit.alpha_sd)
        report["linewidth"] = asdict(fit)
    except (separate.LinewidthError, SpectrumError) as exc:
        row.update(alpha=float("nan"), alpha_sd=float("nan"))
        report["linewidth_error"] = str(exc)
    report["row"] = {k: row[k] for k in SUMMARY_COLUMNS}
    return report


def _analyze_task(args) -> tuple[int, dict | None, str | None]:
    index, rec, cfg = args
    try:
        return index, analyze_pair(index, rec, cfg), None
    except (SpectrumError, InferenceError, ValueError, OSError) as exc:
        return index, None, f"{type(exc).__name__}: {exc}"


def _map(func, tasks, jobs: int):
    if jobs == 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, allow_nan=True) + "\n", encoding="utf-8")


def run_batch(cfg: RunConfig) -> tuple[list[dict], list[dict]]:
    """Analyze every manifest pair; writes reports, ``summary.csv`` and ``failures.json``.

    Returns ``(rows, failures)``. Rows are in manifest order.
    """
    if cfg.manifest is None:
        raise SpectrumError("no manifest given")
    records = read_manifest(cfg.manifest)
    out = Path(cfg.out)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    results = _map(_analyze_task, [(i, r, cfg) for i, r in enumerate(records)], cfg.jobs)
    rows, failures = [], []
    for index, report, err in sorted(results, key=lambda t: t[0]):
        if err is not None:
            log.warning("pair %d failed: %s", index, err)
            failures.append({"index": index, "off": str(records[index].off),
                             "on": str(records[index].on), "error": err})
            continue
        # the worker count is left out so outputs do not depend on it
        report["config"] = {k: v for k, v in cfg.to_dict().items() if k != "jobs"}
        _dump(report, out / "reports" / f"pair_{index:04d}.json")
        rows.append(report["row"])
    write_columns_csv(out / "summary.csv", {c: [r[c] for r in rows] for c in SUMMARY_COLUMNS})
    _dump(failures, out / "failures.json")
    return rows, failures


@dataclass(frozen=True)
class Sweep:
    wl_lo: float = 458.0
    wl_hi: float = 560.0
    wl_step: float = 1.0
    B_max: float = 300.0
    B_step: float = 5.0
    field_wavelength_nm: float = 532.0

    def __post_init__(self):
        if not (self.wl_lo > 0 and self.wl_hi >= self.wl_lo and self.wl_step > 0):
            raise ValueError("invalid wavelength sweep")
        if not (self.B_max >= 0 and self.B_step > 0):
            raise ValueError("invalid field sweep")

    def wavelengths(self) -> np.ndarray:
        n = int(math.floor((self.wl_hi - self.wl_lo) / self.wl_step + 1e-9)) + 1
        return self.wl_lo + self.wl_step * np.arange(n)

    def fields(self) -> np.ndarray:
        n = int(math.floor(self.B_max / self.B_step + 1e-9)) + 1
        return self.B_step * np.arange(n)


def model_curves(mc: ModelConfig, wavelengths) -> dict[str, np.ndarray]:
    """PL fraction and contrast predictions of each charge model versus excitation wavelength.

    Donor-model columns are NaN where NV- ionizes from the ground state,
    since its two-photon form does not apply there.
    """
    cols = {k: [] for k in ("wavelength_nm", "pl_fixed", "pl_balanced_excited",
                            "pl_balanced_full", "pl_donor", "epsilon_fixed", "delta_fixed",
                            "epsilon_balanced", "delta_balanced", "epsilon_donor",
                            "delta_donor")}
    mix0 = photodyn.FieldMixing.from_field(0.0, mc.angle_deg)
    mixB = photodyn.FieldMixing.from_field(mc.field_mT, mc.angle_deg)
    k = mc.emission
    for wl in np.asarray(wavelengths, dtype=float):
        E = photodyn.photon_energy(wl)
        J = photodyn.photon_flux(mc.power_uW, wl, mc.spot_diameter_um)
        p0 = photodyn.populations(mc.rates, mix0, J, E, mc.nv_zero)
        pB = photodyn.populations(mc.rates, mixB, J, E, mc.nv_zero)
        sig = mc.ionization.at(E)
        fixed = charge.fixed_p_prediction(mc.fixed_c_NVm, p0, pB, k)
        excited = charge.balanced_rate_contrasts(p0, pB, sig.excited_only(), k)
        full = charge.balanced_rate_contrasts(p0, pB, sig, k)
        if sig.sigma_g_minus == 0:
            don = charge.donor_model_contrasts(mc.donor, p0, pB, sig, J, k)
            don_vals = (don.pl_fraction, don.epsilon, don.delta)
        else:
            don_vals = (float("nan"),) * 3
        for key, v in (("wavelength_nm", wl), ("pl_fixed", fixed.pl_fraction),
                       ("pl_balanced_excited", excited.pl_fraction),
                       ("pl_balanced_full", full.pl_fraction), ("pl_donor", don_vals[0]),
                       ("epsilon_fixed", fixed.epsilon), ("delta_fixed", fixed.delta),
                       ("epsilon_balanced", full.epsilon), ("delta_balanced", full.delta),
                       ("epsilon_donor", don_vals[1]), ("delta_donor", don_vals[2])):
            cols[key].append(float(v))
    return {key: np.array(v) for key, v in cols.items()}


def run_models(cfg: RunConfig, sweep: Sweep | None = None) -> dict[str, Path]:
    """Write plot-ready model CSVs into ``cfg.out``; returns their paths by name."""
    sweep = sweep or Sweep()
    mc = cfg.models
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    curves = model_curves(mc, sweep.wavelengths())
    paths = {"pl_fraction": out / "pl_fraction_vs_wavelength.csv",
             "contrasts": out / "contrasts_vs_wavelength.csv",
             "populations": out / "populations_vs_field.csv"}
    write_columns_csv(paths["pl_fraction"], {k: curves[k] for k in (
        "wavelength_nm", "pl_fixed", "pl_balanced_excited", "pl_balanced_full", "pl_donor")})
    write_columns_csv(paths["contrasts"], {k: curves[k] for k in (
        "wavelength_nm", "epsilon_fixed", "delta_fixed", "epsilon_balanced", "delta_balanced",
        "epsilon_donor", "delta_donor")})
    wl = sweep.field_wavelength_nm
    pops = photodyn.field_sweep(mc.rates, sweep.fields(), mc.angle_deg,
                                photodyn.photon_flux(mc.power_uW, wl, mc.spot_diameter_um),
                                photodyn.photon_energy(wl), mc.nv_zero)
    write_columns_csv(paths["populations"], pops)
    return paths


def synth_truth_for(T: float, wl: float, power: float, base: synth.SynthTruth) -> synth.SynthTruth:
    """Smoothly varying contrasts over the acquisition grid (arbitrary but fixed)."""
    x = (wl - 458.0) / 102.0
    y = math.log10(power / 10.0) / 2.0
    cold = 1.0 / (1.0 + T / 100.0)
    return replace(base, epsilon=0.08 + 0.10 * cold + 0.03 * y,
                   delta=-0.06 * x * cold + 0.01, alpha=-0.02 * x * cold)


def run_synth(out: Path, seed: int, n_pairs: int = 4, grid: bool = False,
              truth: synth.SynthTruth | None = None) -> Path:
    """Write synthetic pair CSVs, per-pair truth and a manifest; returns the manifest path."""
    base = truth or synth.SynthTruth()
    out = Path(out)
    (out / "pairs").mkdir(parents=True, exist_ok=True)
    if grid:
        combos = list(product(GRID_TEMPERATURES_K, GRID_WAVELENGTHS_NM, GRID_POWERS_UW))
        truths = [synth_truth_for(T, wl, P, base) for T, wl, P in combos]
        metas = [PairMeta(T, wl, P) for T, wl, P in combos]
    else:
        truths = [base] * n_pairs
        metas = [PairMeta() for _ in range(n_pairs)]
    records, truth_out = [], []
    for i, (t, meta) in enumerate(zip(truths, metas)):
        pair, _ = synth.generate_pair(t, pair_seed(seed, i), meta)
        off, on = out / "pairs" / f"pair_{i:04d}_off.csv", out / "pairs" / f"pair_{i:04d}_on.csv"
        write_spectrum_csv(pair.off, off)
        write_spectrum_csv(pair.on, on)
        records.append(ManifestRecord(off, on, t.field_mT, meta.temperature_K,
                                      meta.wavelength_nm, meta.power_uW))
        truth_out.append({"index": i, "epsilon": t.epsilon, "delta": t.delta, "alpha": t.alpha})
    manifest = out / "manifest.json"
    write_manifest(records, manifest)
    _dump({"base": base.to_dict(), "pairs": truth_out}, out / "truth.json")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nvquench", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--jobs", type=int, help="worker processes (overrides config)")
    common.add_argument("--out", type=Path, help="output directory (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="SMC inference over a pair manifest")
    p.add_argument("manifest", nargs="?", type=Path)

    p = sub.add_parser("models", parents=[common], help="model PL-fraction and contrast curves")
    p.add_argument("--sweep", type=Path, help="JSON sweep settings")

    p = sub.add_parser("synth", parents=[common], help="write synthetic pairs and a manifest")
    p.add_argument("--pairs", type=int, default=4)
    p.add_argument("--grid", action="store_true", help="full 9x9x5 acquisition grid")
    p.add_argument("--truth", type=Path, help="JSON SynthTruth overrides")

    p = sub.add_parser("unmix", parents=[common], help="separate one pair for given contrasts")
    p.add_argument("off", type=Path)
    p.add_argument("on", type=Path)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--background", "-C", type=float, default=0.0)

    p = sub.add_parser("linewidth", parents=[common], help="ZPL linewidth contrast of one pair")
    p.add_argument("off", type=Path)
    p.add_argument("on", type=Path)
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--background", "-C", type=float, default=0.0)
    p.add_argument("--noise-ratio", type=float, default=1.0,
                   help="field-on to field-off noise ratio used to weight the fit")
    return ap


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.jobs is not None:
        over["jobs"] = args.jobs
    if args.out is not None:
        over["out"] = args.out
    if getattr(args, "manifest", None) is not None:
        over["manifest"] = args.manifest
    return replace(cfg, **over) if over else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        if args.command == "analyze":
            rows, failures = run_batch(cfg)
            print(f"{len(rows)} pairs analyzed, {len(failures)} failed -> {cfg.out}")
            return 0 if not failures else 1
        if args.command == "models":
            sweep = Sweep()
            if args.sweep is not None:
                sweep = _from_dict(Sweep, json.loads(args.sweep.read_text(encoding="utf-8")))
            for name, path in run_models(cfg, sweep).items():
                print(f"{name}: {path}")
            return 0
        if args.command == "synth":
            truth = None
            if args.truth is not None:
                truth = synth.SynthTruth.from_dict(json.loads(args.truth.read_text(encoding="utf-8")))
            print(run_synth(cfg.out, cfg.seed, args.pairs, args.grid, truth))
            return 0
        pair = load_spectrum_pair(args.off, args.on)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "unmix":
            sep = separate.unmix(pair, args.epsilon, args.delta, args.background, cfg.unmix_floor)
            path = out / "separated.csv"
            write_columns_csv(path, {"wavelength_nm": sep.wavelengths,
                                     "i_minus": sep.i_minus.intensities,
                                     "i_zero": sep.i_zero.intensities})
            print(path)
            return 0
        window = tuple(args.window) if args.window else cfg.linewidth_window
        fit = separate.linewidth_contrast(pair, window, seed=cfg.seed, background=args.background,
                                          noise_ratio=args.noise_ratio)
        path = out / "linewidth.json"
        _dump(asdict(fit), path)
        print(path)
        return 0
    except (SpectrumError, InferenceError, separate.UnmixError, separate.LinewidthError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
