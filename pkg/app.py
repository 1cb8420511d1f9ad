"""UAV Array - multi-UAV virtual array design and secure transmission tool."""

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from uavarray.config import ConfigError, apply_overrides, build_config, config_snapshot, get_setting, load_config
from uavarray.evaluation import (
    capacity_sweep,
    power_sweep,
    radiation_comparison,
    robust_secrecy_sweep,
    secrecy_sweep,
)
from uavarray.report import (
    format_fekete_report,
    format_solver_log,
    generate_filename,
    precoders_to_dataframe,
    topology_to_dataframe,
    trajectory_to_dataframe,
    write_csv,
)
from uavarray.topology import fekete_points, fekete_topology, topology_from_config
from uavarray.trajectory import double_loop_optimize
from uavarray.validation import chance_validation_table, run_acceptance

logger = logging.getLogger(__name__)

SUBCOMMANDS = {
    "topology": "Fekete トポロジーを計算して CSV に出力",
    "capacity-sweep": "NULA / ULA の容量を SNR・回転角ごとに比較",
    "optimize": "軌道とプリコーダを二重ループで最適化",
    "secrecy-eval": "秘匿レート (提案 / ZF / 盗聴者なし上限) を評価",
    "radiation-map": "地上の受信 SNR マップ (平面 / 立方体配列)",
    "validate": "受け入れ検査を一括実行",
    "power-sweep": "UAV 数に対する総送信電力 (SDR / ZF)",
    "robust-sweep": "CSI 不確かさに対する秘匿レート (ロバスト / 非ロバスト)",
}

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

SNAPSHOT_NAME = "config_snapshot.txt"
ERROR_NAME = "error.json"


class InfeasibleScenario(Exception):
    """Raised inside ``run`` when an optimizer report carries an infeasibility cause."""

    def __init__(self, report):
        super().__init__(report.message or f"infeasible ({report.cause})")
        self.report = report


@dataclass(frozen=True)
class Command:
    subcommand: str
    config_path: str | None = None
    output_dir: str = "outputs"
    seed: int | None = None
    overrides: tuple = field(default_factory=tuple)
    K: int | None = None
    N: int | None = None

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand {self.subcommand!r}")


def _load(command):
    if command.config_path is None:
        raw = apply_overrides({}, command.overrides)
        if command.seed is not None:
            raw.setdefault("experiment", {})["rng_seed"] = int(command.seed)
        return build_config(raw)
    return load_config(command.config_path, command.overrides, command.seed)


def _run_topology(command, config, out):
    if command.K is not None:
        K = command.K
        N = command.N if command.N is not None else K
        topology = fekete_topology(N, K, config.fekete_tol)
    else:
        K = config.K
        topology = topology_from_config(config)
    name = generate_filename("topology", config.rng_seed)
    write_csv(topology_to_dataframe(topology), out / name)
    if K >= 2:
        solution = fekete_points(K, config.fekete_tol)
        (out / generate_filename("topology_fekete", config.rng_seed, "txt")).write_text(
            format_fekete_report(solution), encoding="utf-8",
        )
    return name


def _run_optimize(command, config, out):
    traj, precoders, report = double_loop_optimize(config, topology_from_config(config))
    (out / generate_filename("optimize_solver", config.rng_seed, "txt")).write_text(
        format_solver_log(report), encoding="utf-8",
    )
    if report.cause is not None:
        raise InfeasibleScenario(report)
    name = generate_filename("optimize", config.rng_seed)
    write_csv(trajectory_to_dataframe(traj), out / name)
    write_csv(precoders_to_dataframe(precoders), out / generate_filename("optimize_precoders", config.rng_seed))
    return name


def _run_validate(command, config, out):
    frame = run_acceptance(config)
    name = generate_filename("validate", config.rng_seed)
    write_csv(frame, out / name)
    write_csv(chance_validation_table(config, config.validation_samples),
              out / generate_filename("validate_chance", config.rng_seed))
    failed = frame.loc[~frame["passed"], "name"].tolist()
    if failed:
        raise ValueError(f"acceptance checks failed: {', '.join(failed)}")
    return name


def _run_experiment(experiment):
    def runner(command, config, out):
        result = experiment(config)
        name = generate_filename(command.subcommand, config.rng_seed)
        write_csv(result.frame, out / name)
        return name

    return runner


RUNNERS = {
    "topology": _run_topology,
    "capacity-sweep": _run_experiment(capacity_sweep),
    "optimize": _run_optimize,
    "secrecy-eval": _run_experiment(secrecy_sweep),
    "radiation-map": _run_experiment(radiation_comparison),
    "validate": _run_validate,
    "power-sweep": _run_experiment(power_sweep),
    "robust-sweep": _run_experiment(robust_secrecy_sweep),
}


def _error_record(command, kind, error):
    record = {"subcommand": command.subcommand, "kind": kind, "message": str(error)}
    if isinstance(error, ConfigError):
        record["key"] = error.key
        record["message"] = error.message
    if isinstance(error, InfeasibleScenario):
        record["cause"] = error.report.cause
        record["slot"] = error.report.slot
    return record


def _report_error(command, out, kind, error):
    record = _error_record(command, kind, error)
    line = json.dumps(record, ensure_ascii=False)
    print(line, file=sys.stderr)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / ERROR_NAME).write_text(line + "\n", encoding="utf-8")
    except OSError as e:
        logger.error("Could not write %s: %s", ERROR_NAME, e)


def run(command):
    """Execute one subcommand and write its artifacts.

    Returns:
        int: 0 on success, 2 for configuration errors, 3 for infeasible
        scenarios, 1 for any other failure.
    """
    out = Path(command.output_dir)
    try:
        config = _load(command)
        out.mkdir(parents=True, exist_ok=True)
        (out / SNAPSHOT_NAME).write_text(config_snapshot(config), encoding="utf-8")
        name = RUNNERS[command.subcommand](command, config, out)
    except ConfigError as e:
        logger.error("設定エラー: %s", e)
        _report_error(command, out, "config", e)
        return EXIT_CONFIG
    except InfeasibleScenario as e:
        logger.error("実行不能: %s (slot %s)", e.report.cause, e.report.slot)
        _report_error(command, out, "infeasible", e)
        return EXIT_INFEASIBLE
    except (ValueError, OSError) as e:
        logger.error("%s に失敗: %s", command.subcommand, e)
        _report_error(command, out, type(e).__name__, e)
        return EXIT_FAILURE
    logger.info("%s を出力しました: %s", command.subcommand, out / name)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="uavarray",
        description="複数 UAV による仮想アレー: トポロジー設計・安全なプリコーディング・軌道最適化",
    )
    parser.add_argument("subcommand", choices=list(SUBCOMMANDS),
                        help=" / ".join(f"{k}: {v}" for k, v in SUBCOMMANDS.items()))
    parser.add_argument("--config", dest="config_path", help="シナリオ TOML ファイル (省略時は既定値)")
    parser.add_argument("--output-dir", default=get_setting("UAVARRAY_OUTPUT_DIR", default="outputs"),
                        help="出力ディレクトリ (環境変数 UAVARRAY_OUTPUT_DIR)")
    parser.add_argument("--seed", type=int, help="experiment.rng_seed を上書き")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="設定値を上書き (複数指定可)")
    parser.add_argument("--K", type=int, help="topology: ストリーム数")
    parser.add_argument("--N", type=int, help="topology: UAV 数 (省略時は K)")
    parser.add_argument("--log-level", default=get_setting("UAVARRAY_LOG_LEVEL", default="INFO"),
                        help="ログレベル (環境変数 UAVARRAY_LOG_LEVEL)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    command = Command(
        subcommand=args.subcommand,
        config_path=args.config_path,
        output_dir=args.output_dir,
        seed=args.seed,
        overrides=tuple(args.overrides),
        K=args.K,
        N=args.N,
    )
    return run(command)


if __name__ == "__main__":
    sys.exit(main())
