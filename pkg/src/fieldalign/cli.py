"""Command-line entry points and run orchestration.

Subcommands: align-pair, align-all, gpa, cluster, tfield, simulate.
Configuration is a flat key-value text file ('key = value', '#' comments)
plus --set key=value overrides; named profiles preload the published
defaults so a bare invocation reproduces the reference protocols.  Every
artifact embeds its effective configuration and master seed.

Exit codes: 0 success, 1 alignment failure, 2 configuration error,
3 IO error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, gpa, mcmc, molio, simulation
from .covariance import GAUSSIAN, MATERN, CovarianceModel
from .geometry import RigidTransform, principal_axes_transform
from .kriging import build_field
from .mcmc import Hyperparameters, InitSpec, LinearSchedule

STERIC_RHO_DEFAULT = 1.7 / np.sqrt(3.0)


class ConfigError(ValueError):
    """Bad run configuration (unknown key, missing key, bad value)."""


class CliIOError(OSError):
    """File system problem while reading inputs or writing artifacts."""


# -- configuration schema ----------------------------------------------------

_REQUIRED = object()

_ALIGN_KEYS = {
    "channel": (str, "both"),
    "kernel": (str, "gaussian"),
    "nu": (float, 0.5),
    "rho_charge": (float, 6.35),
    "rho_steric": (float, STERIC_RHO_DEFAULT),
    "alpha": (float, 31.0),
    "beta": (float, 0.04),
    "zeta": (float, 3.0),
    "zeta_interaction": (float, 1.0),
    "neighbor_delta": (float, 0.0),  # 0 = auto (twice the steric range)
    "rotation_sd_deg": (float, 3.25),
    "translation_sd": (float, 0.25),
    "iterations": (int, 10_000),
    "burn_in": (int, 0),  # 0 = default (20% of iterations)
    "thin": (int, 20),
    "escape_period": (int, 125),
    "escape_scale": (float, 10.0),
    "restart_threshold": (float, 0.3),
    "restart_check": (int, 2_500),
    "max_restarts": (int, 10),
    "weight_initial_iters": (int, 1_500),
    "weight_q": (float, 0.5),
    "likelihood": (str, "exponential"),
    "principal_axes": (bool, True),
    "init_rotation_deg": (float, 90.0),
    "init_translation": (float, 5.0),
    "mask_init_p": (float, 0.5),
    "seed": (int, 0),
}

_SCHEMAS: dict[str, dict] = {
    "align-pair": {
        "molecule_a": (str, _REQUIRED),
        "molecule_b": (str, _REQUIRED),
        **_ALIGN_KEYS,
    },
    "align-all": {
        "molecules": (str, _REQUIRED),
        "retry_budget": (int, 2),
        "workers": (int, 2),
        **_ALIGN_KEYS,
    },
    "gpa": {
        "molecules": (str, _REQUIRED),
        "channel": (str, "steric"),
        "kernel": (str, "gaussian"),
        "nu": (float, 0.5),
        "rho": (float, STERIC_RHO_DEFAULT),
        "step1_alpha": (float, 31.0),
        "step1_beta": (float, 0.04),
        "step1_zeta": (float, 2.0),
        "step1_rotation_sd_deg": (float, 3.25),
        "step1_translation_sd": (float, 0.25),
        "step1_iterations": (int, 10_000),
        "step1_restart_threshold": (float, 0.3),
        "step1_restart_check": (int, 2_500),
        "step1_max_restarts": (int, 10),
        "init_rotation_deg": (float, 90.0),
        "init_translation": (float, 5.0),
        "mask_init_p": (float, 0.5),
        "refine_alpha": (float, 600.0),
        "refine_beta": (float, 0.0001),
        "refine_zeta": (float, 2.0),
        "refine_rotation_sd_deg": (float, 0.03),
        "refine_translation_sd": (float, 0.75),
        "refine_iterations": (int, 500),
        "tol": (float, 0.0001),
        "max_passes": (int, 50),
        "seed": (int, 0),
    },
    "cluster": {
        "distances": (str, _REQUIRED),
        "kind": (str, "map"),
    },
    "tfield": {
        "molecules": (str, _REQUIRED),
        "transforms_from": (str, _REQUIRED),
        "group_a": (str, _REQUIRED),
        "group_b": (str, _REQUIRED),
        "channel": (str, "steric"),
        "kernel": (str, "gaussian"),
        "nu": (float, 0.5),
        "rho": (float, STERIC_RHO_DEFAULT),
        "spacing": (float, 0.5),
        "padding": (float, 3.0),
        "offset": (float, 0.001),
        "threshold": (float, 8.0),
    },
    "simulate": {
        "scenario": (str, _REQUIRED),
        "replications": (int, 1),
        "zetas": (str, "10,50,90"),
        "beta_zeta": (str, "0.04:70"),
        "zeta_subsample": (bool, False),
        "iterations": (int, 0),  # 0 = scenario default
        "n_fields": (int, 3),
        "reference": (str, ""),
        "workers": (int, 2),
        "seed": (int, 0),
    },
}

PROFILES: dict[str, tuple[str, dict]] = {
    "steroid-pairwise": ("align-pair", {}),
    "steroid-gpa": ("gpa", {}),
    "sim2d-setting1": ("simulate", {"scenario": "setting1"}),
    "sim2d-setting2": ("simulate", {"scenario": "setting2"}),
    "sim3d": ("simulate", {"scenario": "sim3d"}),
}


def _parse_value(raw: str, typ):
    raw = raw.strip()
    if typ is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"expected {typ.__name__}, got {raw!r}") from None


def load_config_file(path) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise CliIOError(str(err)) from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def build_config(subcommand: str, file_values: dict, overrides: dict, profile: str | None):
    schema = _SCHEMAS[subcommand]
    merged: dict[str, str] = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        profile_cmd, profile_values = PROFILES[profile]
        if profile_cmd != subcommand:
            raise ConfigError(
                f"profile {profile!r} belongs to subcommand {profile_cmd!r}"
            )
        merged.update({k: str(v) for k, v in profile_values.items()})
    merged.update(file_values)
    merged.update(overrides)
    config = {}
    for key, raw in merged.items():
        if key not in schema:
            raise ConfigError(f"unknown configuration key {key!r} for {subcommand}")
        config[key] = _parse_value(raw, schema[key][0])
    for key, (_typ, default) in schema.items():
        if key in config:
            continue
        if default is _REQUIRED:
            raise ConfigError(f"missing required configuration key {key!r}")
        config[key] = default
    return config


# -- shared pieces -------------------------------------------------------------


def _kernel_model(kind: str, rho: float, nu: float) -> CovarianceModel:
    if kind == "gaussian":
        return CovarianceModel(GAUSSIAN, rho=rho)
    if kind == "matern":
        return CovarianceModel(MATERN, rho=rho, nu=nu)
    raise ConfigError(f"unknown kernel {kind!r}")


def _channels_for(config, charge_pair, steric_pair):
    """Per-channel (set_a, set_b, model) triples in (charge, steric) order."""
    channel = config["channel"]
    charge_model = _kernel_model(config["kernel"], config["rho_charge"], config["nu"])
    steric_model = _kernel_model(config["kernel"], config["rho_steric"], config["nu"])
    if channel == "both":
        return (
            [charge_pair[0], steric_pair[0]],
            [charge_pair[1], steric_pair[1]],
            [charge_model, steric_model],
        )
    if channel == "charge":
        return [charge_pair[0]], [charge_pair[1]], [charge_model]
    if channel == "steric":
        return [steric_pair[0]], [steric_pair[1]], [steric_model]
    raise ConfigError(f"unknown channel {channel!r}")


def _pair_hyper(config, n_channels: int) -> Hyperparameters:
    weight_schedule = None
    if n_channels == 2 and config["weight_initial_iters"] > 0:
        weight_schedule = LinearSchedule(1.0, 0.0, config["weight_initial_iters"])
    return Hyperparameters(
        alpha=config["alpha"],
        beta=config["beta"],
        zeta=config["zeta"],
        zeta_i=config["zeta_interaction"],
        neighbor_delta=config["neighbor_delta"] or None,
        proposal_sd_rotation=np.radians(config["rotation_sd_deg"]),
        proposal_sd_translation=config["translation_sd"],
        n_iterations=config["iterations"],
        burn_in=config["burn_in"] or None,
        thin=config["thin"],
        escape_period=config["escape_period"] or None,
        escape_scale=config["escape_scale"],
        restart_threshold=config["restart_threshold"],
        restart_check_iter=config["restart_check"],
        max_restarts=config["max_restarts"],
        likelihood_kind=config["likelihood"],
        weight_schedule=weight_schedule,
        weight_q=config["weight_q"] if n_channels == 2 else 1.0,
    )


def _pair_init(config) -> InitSpec:
    return InitSpec(
        rotation_range=np.radians(config["init_rotation_deg"]),
        translation_range=config["init_translation"],
        mask_p=config["mask_init_p"],
    )


def _align_one_direction(args):
    """Run one directed alignment; standalone for process pools."""
    config, mol_a, mol_b, seed = args
    charge_a, steric_a = mol_a
    charge_b, steric_b = mol_b
    if config["principal_axes"]:
        ta = principal_axes_transform(charge_a.coords)
        tb = principal_axes_transform(charge_b.coords)
        charge_a = charge_a.with_coords(ta.apply(charge_a.coords))
        steric_a = steric_a.with_coords(charge_a.coords)
        charge_b = charge_b.with_coords(tb.apply(charge_b.coords))
        steric_b = steric_b.with_coords(charge_b.coords)
    sets_a, sets_b, models = _channels_for(
        config, (charge_a, charge_b), (steric_a, steric_b)
    )
    hyper = _pair_hyper(config, len(models))
    init = _pair_init(config)
    result = mcmc.run_pairwise_alignment(
        sets_a if len(sets_a) > 1 else sets_a[0],
        sets_b if len(sets_b) > 1 else sets_b[0],
        models if len(models) > 1 else models[0],
        hyper,
        init,
        seed,
    )
    start_coords = sets_b[0].coords
    return result, start_coords, sets_a[0].coords


def _effective_config(config: dict) -> dict:
    return {k: config[k] for k in sorted(config)}


def _artifact_comments(config: dict) -> list[str]:
    lines = [f"config: {json.dumps(_effective_config(config), sort_keys=True)}"]
    if "seed" in config:
        lines.append(f"seed: {config['seed']}")
    return lines


def _write_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_molecules(spec: str) -> list[tuple[str, tuple]]:
    """Molecules from a directory (all *.mol sorted) or a list file."""
    p = Path(spec)
    if p.is_dir():
        paths = sorted(p.glob("*.mol"))
    elif p.is_file() and p.suffix != ".mol":
        paths = [Path(line.strip()) for line in p.read_text().splitlines() if line.strip()]
    else:
        paths = [p]
    if not paths:
        raise CliIOError(f"no molecule files found under {spec}")
    out = []
    for path in paths:
        out.append((path.stem, molio.parse_molecule_file(path)))
    return out


# -- subcommands ---------------------------------------------------------------


def cmd_align_pair(config, out_dir: Path) -> int:
    mol_a = molio.parse_molecule_file(config["molecule_a"])
    mol_b = molio.parse_molecule_file(config["molecule_b"])
    result, start_b, coords_a = _align_one_direction(
        (config, mol_a, mol_b, config["seed"])
    )
    embed = {"config": _effective_config(config), "seed": config["seed"]}
    comments = _artifact_comments(config)
    mcmc.write_result(out_dir / "result.json", result, extra=embed)
    mcmc.write_trace(out_dir / "trace.csv", result, header_lines=comments)
    mapped = result.map_state.transform.apply(start_b)
    with open(out_dir / "scatter.csv", "w") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write("set,stage,x,y,z\n")
        for row in coords_a:
            fh.write("A,start," + ",".join(repr(float(v)) for v in row) + "\n")
        for row in coords_a:
            fh.write("A,map," + ",".join(repr(float(v)) for v in row) + "\n")
        for row in start_b:
            fh.write("B,start," + ",".join(repr(float(v)) for v in row) + "\n")
        for row in mapped:
            fh.write("B,map," + ",".join(repr(float(v)) for v in row) + "\n")
    return 1 if result.failed else 0


def cmd_align_all(config, out_dir: Path) -> int:
    molecules = _read_molecules(config["molecules"])
    names = [name for name, _ in molecules]
    n = len(molecules)
    if n < 2:
        raise ConfigError("align-all needs at least two molecules")
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    root = np.random.SeedSequence(config["seed"])
    seeds = root.spawn(len(pairs) * (1 + config["retry_budget"]))
    jobs = [
        (config, molecules[i][1], molecules[j][1], seeds[idx])
        for idx, (i, j) in enumerate(pairs)
    ]
    workers = max(1, config["workers"])
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_align_one_direction, jobs, chunksize=1))
    else:
        outcomes = [_align_one_direction(job) for job in jobs]
    retry_base = len(pairs)
    failed_pairs = []
    directed_map = {}
    directed_mean = {}
    for idx, (pair, (result, _sb, _ca)) in enumerate(zip(pairs, outcomes)):
        attempt = 0
        while result.failed and attempt < config["retry_budget"]:
            attempt += 1
            seed = seeds[retry_base + idx * config["retry_budget"] + attempt - 1]
            result, _sb, _ca = _align_one_direction(
                (config, molecules[pair[0]][1], molecules[pair[1]][1], seed)
            )
        if result.failed:
            failed_pairs.append(pair)
            continue
        directed_map[pair] = result.plug_in_distance
        directed_mean[pair] = result.plug_in_distance_mean
    def build_matrix(directed):
        mat = np.zeros((n, n))
        missing = []
        for i in range(n):
            for j in range(i + 1, n):
                if (i, j) in directed and (j, i) in directed:
                    mat[i, j] = mat[j, i] = analysis.symmetrize_distances(
                        directed[(i, j)], directed[(j, i)]
                    )
                else:
                    missing.append((i, j))
                    mat[i, j] = mat[j, i] = np.nan
        return mat, missing

    mat_map, missing = build_matrix(directed_map)
    mat_mean, _ = build_matrix(directed_mean)
    embed = {"config": _effective_config(config), "seed": config["seed"],
             "molecules": names,
             "failed_pairs": [[names[i], names[j]] for i, j in failed_pairs]}
    _write_json(out_dir / "align_all.json", embed)
    comments = _artifact_comments(config)
    for kind, mat in (("map", mat_map), ("mean", mat_mean)):
        if not np.isnan(mat).any():
            analysis.DistanceMatrix(mat, kind=kind, labels=names).save(
                out_dir / f"d{kind}.tsv", header_lines=comments
            )
        else:
            with open(out_dir / f"d{kind}.tsv", "w") as fh:
                for line in comments:
                    fh.write(f"# {line}\n")
                fh.write("\t".join(names) + "\n")
                for row in mat:
                    fh.write("\t".join(repr(float(x)) for x in row) + "\n")
    return 1 if missing else 0


def _gpa_config_to_objects(config):
    model = _kernel_model(config["kernel"], config["rho"], config["nu"])
    step1 = Hyperparameters(
        alpha=config["step1_alpha"],
        beta=config["step1_beta"],
        zeta=config["step1_zeta"],
        proposal_sd_rotation=np.radians(config["step1_rotation_sd_deg"]),
        proposal_sd_translation=config["step1_translation_sd"],
        n_iterations=config["step1_iterations"],
        restart_threshold=config["step1_restart_threshold"],
        restart_check_iter=config["step1_restart_check"],
        max_restarts=config["step1_max_restarts"],
    )
    refine = Hyperparameters(
        alpha=config["refine_alpha"],
        beta=config["refine_beta"],
        zeta=config["refine_zeta"],
        proposal_sd_rotation=np.radians(config["refine_rotation_sd_deg"]),
        proposal_sd_translation=config["refine_translation_sd"],
        n_iterations=config["refine_iterations"],
        escape_period=None,
    )
    init = InitSpec(
        rotation_range=np.radians(config["init_rotation_deg"]),
        translation_range=config["init_translation"],
        mask_p=config["mask_init_p"],
    )
    return model, gpa.GpaConfig(
        step1_hyper=step1,
        step1_init=init,
        refine_hyper=refine,
        tol=config["tol"],
        max_passes=config["max_passes"],
    )


def cmd_gpa(config, out_dir: Path) -> int:
    molecules = _read_molecules(config["molecules"])
    names = [name for name, _ in molecules]
    channel_idx = {"charge": 0, "steric": 1}.get(config["channel"])
    if channel_idx is None:
        raise ConfigError("gpa channel must be 'charge' or 'steric'")
    sets = [mol[channel_idx] for _name, mol in molecules]
    model, gpa_config = _gpa_config_to_objects(config)
    state, results = gpa.run_field_gpa(sets, model, gpa_config, config["seed"])
    payload = {
        "config": _effective_config(config),
        "seed": config["seed"],
        "molecules": names,
        "transforms": [mcmc._transform_dict(t) for t in state.transforms],
        "masks": [[int(v) for v in m] for m in state.masks],
        "multi_carbo": float(state.multi_carbo),
        "criterion_history": [float(c) for c in state.criterion_history],
        "passes": int(state.iteration),
        "converged": bool(state.converged),
    }
    _write_json(out_dir / "gpa.json", payload)
    comments = _artifact_comments(config)
    for name, res in zip(names, results):
        mcmc.write_trace(out_dir / f"gpa_trace_{name}.csv", res, header_lines=comments)
    return 0


def cmd_cluster(config, out_dir: Path) -> int:
    matrix = analysis.DistanceMatrix.load(config["distances"], kind=config["kind"])
    dendrogram = analysis.ward_cluster(matrix)
    dendrogram.save(out_dir / "merges.tsv", header_lines=_artifact_comments(config))
    with open(out_dir / "dendrogram.newick", "w") as fh:
        fh.write(dendrogram.to_newick() + "\n")
    return 0


def _load_gpa_result(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def cmd_tfield(config, out_dir: Path) -> int:
    molecules = dict(_read_molecules(config["molecules"]))
    channel_idx = {"charge": 0, "steric": 1}.get(config["channel"])
    if channel_idx is None:
        raise ConfigError("tfield channel must be 'charge' or 'steric'")
    model = _kernel_model(config["kernel"], config["rho"], config["nu"])
    overall = _load_gpa_result(config["transforms_from"])
    transforms = {}
    for name, tdict in zip(overall["molecules"], overall["transforms"]):
        transforms[name] = RigidTransform(
            np.radians(tdict["euler_degrees"]), tdict["translation"]
        )

    def group_fields(group_path):
        group = _load_gpa_result(group_path)
        fields = []
        coords = []
        for name, mask in zip(group["molecules"], group["masks"]):
            if name not in molecules:
                raise ConfigError(f"molecule {name!r} not found in inputs")
            if name not in transforms:
                raise ConfigError(f"molecule {name!r} missing from transforms_from")
            ps = molecules[name][channel_idx]
            field = build_field(ps, mask=np.array(mask, dtype=bool), model=model)
            field = field.transformed(transforms[name])
            fields.append(field)
            coords.append(field.active_coords)
        return fields, np.vstack(coords)

    fields_a, coords_a = group_fields(config["group_a"])
    fields_b, coords_b = group_fields(config["group_b"])
    grid = analysis.GridSpec.covering(
        np.vstack([coords_a, coords_b]), config["spacing"], config["padding"]
    )
    tf = analysis.t_field(fields_a, fields_b, grid, offset_d=config["offset"])
    comments = _artifact_comments(config)
    tf.save(out_dir / "tfield.txt", header_lines=comments)
    regions = analysis.threshold_regions(tf, config["threshold"])
    analysis.write_regions(out_dir / "regions.tsv", regions, grid, header_lines=comments)
    _write_json(
        out_dir / "tfield.json",
        {
            "config": _effective_config(config),
            "grid": {
                "origin": list(grid.origin),
                "spacing": grid.spacing,
                "shape": list(grid.shape),
            },
            "n_nodes": grid.n_nodes,
            "n_regions": len(regions),
        },
    )
    return 0


def cmd_simulate(config, out_dir: Path) -> int:
    scenario = config["scenario"]
    if scenario in ("setting1", "setting2"):
        zetas = [float(z) for z in config["zetas"].split(",") if z]
        records = simulation.run_success_study(
            scenario,
            replications=config["replications"],
            hyper_grid=zetas,
            rng_seed=config["seed"],
            workers=max(1, config["workers"]),
            n_iterations=config["iterations"] or None,
            n_fields=config["n_fields"],
            zeta_subsample=config["zeta_subsample"],
        )
        summary = simulation.aggregate_table1(records)
    elif scenario == "sim3d":
        grid = []
        for cell in config["beta_zeta"].split(","):
            if not cell:
                continue
            beta, _, zeta = cell.partition(":")
            grid.append((float(beta), float(zeta)))
        reference = None
        if config["reference"]:
            _charge, steric = molio.parse_molecule_file(config["reference"])
            reference = steric.coords
        records = simulation.run_success_study(
            "sim3d",
            replications=config["replications"],
            hyper_grid=grid,
            rng_seed=config["seed"],
            workers=max(1, config["workers"]),
            n_iterations=config["iterations"] or None,
            reference_coords=reference,
        )
        summary = {"cells": simulation.aggregate_table2(records)}
    else:
        raise ConfigError(f"unknown scenario {scenario!r}")
    simulation.write_records(
        out_dir / "records.tsv", records, header_lines=_artifact_comments(config)
    )
    _write_json(
        out_dir / "summary.json",
        {
            "config": _effective_config(config),
            "seed": config["seed"],
            "summary": summary,
        },
    )
    return 0


_COMMANDS = {
    "align-pair": cmd_align_pair,
    "align-all": cmd_align_all,
    "gpa": cmd_gpa,
    "cluster": cmd_cluster,
    "tfield": cmd_tfield,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fieldalign",
        description="Bayesian alignment of unlabeled marked point sets via kriged random fields",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key-value configuration file")
        p.add_argument("--profile", help="named default profile")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out-dir", default=".", help="artifact output directory")
        p.add_argument("--workers", type=int, help="worker pool size override")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="configuration override (repeatable)",
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_values = load_config_file(args.config) if args.config else {}
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, _, value = item.partition("=")
            overrides[key.strip()] = value.strip()
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if args.workers is not None and "workers" in _SCHEMAS[args.subcommand]:
            overrides["workers"] = str(args.workers)
        config = build_config(args.subcommand, file_values, overrides, args.profile)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.subcommand](config, out_dir)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (molio.MoleculeParseError, CliIOError, OSError) as err:
        print(f"io error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
