import time
from dataclasses import replace
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from floquet_dynamics import __version__
from floquet_dynamics.config import METHODS, config_document, load_config, parse_config
from floquet_dynamics.exceptions import FloquetDynamicsError
from floquet_dynamics.models import SimulationRun
from floquet_dynamics.outputs import manifest_path_for, write_manifest
from floquet_dynamics.runner import execute


def resolve_output_path(path) -> Path | None:
    """Relative data paths live under FLOQUET_OUTPUT_ROOT."""
    if not path:
        return None
    path = Path(path)
    return path if path.is_absolute() else Path(settings.FLOQUET_OUTPUT_ROOT) / path


class Command(BaseCommand):
    help = "Run a driven molecule-metal simulation (FR-SH, FR-QME or both) and write CSV results."

    def add_arguments(self, parser):
        parser.add_argument(
            "--config",
            help="Path to a JSON run configuration. Built-in defaults are used if omitted.",
        )
        parser.add_argument("--seed", type=int, help="Override ensemble.master_seed.")
        parser.add_argument("--method", choices=METHODS, help="Override the configured method.")
        parser.add_argument("--out", help="Override io.output (CSV path, relative to FLOQUET_OUTPUT_ROOT).")
        parser.add_argument(
            "--frsh-csv",
            help="With --method compare: read FR-SH results from this CSV (relative to FLOQUET_OUTPUT_ROOT).",
        )
        parser.add_argument(
            "--frqme-csv",
            help="With --method compare: read FR-QME results from this CSV (relative to FLOQUET_OUTPUT_ROOT).",
        )
        parser.add_argument(
            "--record",
            action="store_true",
            help="Store the run in the SimulationRun ledger.",
        )

    def _resolve_config(self, options):
        config = load_config(options["config"]) if options.get("config") else parse_config("{}")
        if options.get("seed") is not None:
            if options["seed"] < 0:
                raise CommandError("--seed must be non-negative.")
            config = config.with_seed(options["seed"])
        if options.get("method"):
            config = config.with_overrides(method=options["method"])
        if options.get("out"):
            config = config.with_overrides(io=replace(config.io, output=options["out"]))
        if settings.FLOQUET_WORKERS is not None:
            config = config.with_workers(settings.FLOQUET_WORKERS)
        return config

    def handle(self, *args, **options):
        try:
            config = self._resolve_config(options)
        except (FloquetDynamicsError, ValueError) as exc:
            raise CommandError(str(exc)) from exc
        if (options.get("frsh_csv") or options.get("frqme_csv")) and config.method != "compare":
            raise CommandError("--frsh-csv/--frqme-csv only apply to --method compare.")

        output = resolve_output_path(config.io.output)
        manifest = manifest_path_for(output)
        document = config_document(config)

        run = None
        if options["record"]:
            run = SimulationRun.objects.create(
                method=config.method,
                master_seed=str(config.ensemble.master_seed),
                config=document,
                code_version=__version__,
                output_path=str(output),
                manifest_path=str(manifest),
            )

        started = time.perf_counter()
        try:
            outcome = execute(
                config,
                output,
                resolve_output_path(options.get("frsh_csv")),
                resolve_output_path(options.get("frqme_csv")),
            )
            wall_time = time.perf_counter() - started
            write_manifest(
                manifest,
                config=document,
                seed=config.ensemble.master_seed,
                code_version=__version__,
                wall_time=wall_time,
                outputs=outcome.outputs,
                diagnostics=outcome.diagnostics,
            )
        except (FloquetDynamicsError, ValueError, OSError) as exc:
            if run is not None:
                run.mark_finished("FAILED", wall_time=time.perf_counter() - started, error_message=str(exc))
            raise CommandError(str(exc)) from exc

        if run is not None:
            run.mark_finished("SUCCEEDED", wall_time=wall_time, diagnostics=outcome.diagnostics)

        for path in outcome.outputs:
            self.stdout.write(f"  {path}")
        self.stdout.write(
            self.style.SUCCESS(
                f"{config.method} run finished in {wall_time:.1f}s; manifest written to {manifest}"
            )
        )
