from __future__ import annotations

import argparse
import logging
import math
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np
import pandas as pd
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from kahs import __version__
from kahs.commandline.base import Argument, Command, Option, Parser
from kahs.commandline.manifest import RunManifest
from kahs.commandline.verify import CheckResult, VerifySettings, run_checks
from kahs.experiments import (
    captured_coefficients,
    detection_experiment,
    energy_experiment,
    image_experiment,
    image_pair,
    kterm_psnr,
    maps_from_log,
    rate_distortion_frame,
    sense_image,
)
from kahs.models import (
    ModelKind,
    ModelSpec,
    alpha_star,
    energy_fraction_top1,
    max_partition_size,
    mse_top1,
    zeta,
)
from kahs.pgm import read_pgm, to_pixels, write_pgm
from kahs.transforms import TransformKind
from kahs.utils import write_csv

logger = logging.getLogger(__name__)

BASES = {
    "identity": TransformKind.IDENTITY,
    "haar": TransformKind.HAAR2D,
    "cdf97": TransformKind.CDF97_2D,
}

PSNR_NOTE = "PSNR of the reconstruction clipped to [0, 255]"


def parse_grid(text: str) -> list[float]:
    """``start:step:stop`` (inclusive) or a comma separated list."""
    if ":" in text:
        try:
            start, step, stop = (float(part) for part in text.split(":"))
        except ValueError:
            raise ValueError(f"Grid must read start:step:stop, got {text!r}") from None
        if step <= 0 or stop < start:
            raise ValueError(f"Empty grid {text!r}")
        count = math.floor((stop - start) / step + 1e-9) + 1
        return [round(start + i * step, 12) for i in range(count)]
    return [float(part) for part in text.split(",") if part.strip()]


def parse_ints(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


@contextmanager
def progress_bar(description: str, total: int) -> Iterator[Callable[[int], None]]:
    with Progress(
        TextColumn("{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=Console(stderr=True),
        transient=True,
    ) as progress:
        task = progress.add_task(description, total=total)
        yield lambda n: progress.advance(task, n)


class ExperimentCommand(Command):
    """Writes its outputs and a manifest into ``--out``."""

    seed = Option[int]("--seed", argparse_args={"type": int, "default": 0, "help": "Master seed."})
    out = Option[str](
        "--out",
        aliases=["-o"],
        argparse_args={"default": "results", "help": "Output directory."},
    )
    threads = Option[Optional[int]](
        "--threads", argparse_args={"type": int, "default": None, "help": "Worker threads."}
    )

    notes: dict[str, str] = {}

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def inputs(self) -> list[Path]:
        return []

    def execute(self) -> list[Path]:
        raise NotImplementedError

    def run(self) -> int:
        outputs = self.execute()
        manifest = RunManifest.for_run(
            self.name(),
            self.config(),
            self.seed,
            __version__,
            inputs=self.inputs(),
            outputs=outputs,
            out_dir=self.out_dir,
            notes=self.notes,
        )
        path = manifest.write(self.out_dir)
        for output in outputs:
            logger.info("Wrote %s", output)
        logger.info("Wrote %s", path)
        return 0


class ImageCommand(ExperimentCommand):
    input = Option[str]("--input", aliases=["-i"], argparse_args={"required": True, "help": "PGM image."})
    basis = Option[str]("--basis", choices=BASES, argparse_args={"default": "cdf97"})

    def inputs(self) -> list[Path]:
        return [Path(self.input)]

    def image(self) -> np.ndarray:
        return read_pgm(self.input)


class SynthDetection(ExperimentCommand):
    command_name = "synth-detection"
    help = "Detection probability of the 16 largest coefficients."

    model = Option[str]("--model", choices=[m.value for m in ModelKind], argparse_args={"required": True})
    n = Option[int]("--N", argparse_args={"type": int, "default": 1024})
    k = Option[Optional[int]]("--k", argparse_args={"type": int, "default": None})
    q = Option[Optional[float]]("--q", argparse_args={"type": float, "default": None})
    alpha = Option[Optional[float]]("--alpha", argparse_args={"type": float, "default": None})
    big_k = Option[int]("--K", argparse_args={"type": int, "default": 4})
    trials = Option[int]("--trials", argparse_args={"type": int, "default": 1000})

    def execute(self) -> list[Path]:
        spec = ModelSpec(self.model, self.n, k=self.k, q=self.q, alpha=self.alpha)
        with progress_bar("trials", self.trials) as advance:
            report = detection_experiment(
                spec, self.big_k, self.trials, self.seed, threads=self.threads, progress=advance
            )
        return [write_csv(report.to_frame(), self.out_dir / "detection.csv")]


class SynthEnergy(ExperimentCommand):
    command_name = "synth-energy"
    help = "Captured energy of power-law signals over alpha and K."

    alphas = Option[list]("--alphas", argparse_args={"type": parse_grid, "default": "1.5,2,3,5"})
    ks = Option[list]("--Ks", argparse_args={"type": parse_ints, "default": "1,2,4,8,16,32,64,128"})
    n = Option[int]("--N", argparse_args={"type": int, "default": 1024})
    trials = Option[int]("--trials", argparse_args={"type": int, "default": 1000})

    def execute(self) -> list[Path]:
        with progress_bar("trials", self.trials * len(self.alphas)) as advance:
            frame = energy_experiment(
                self.alphas, self.ks, self.trials, self.seed,
                n=self.n, threads=self.threads, progress=advance,
            )
        return [write_csv(frame, self.out_dir / "energy.csv")]


class Image(ImageCommand):
    help = "Rate-distortion sweep over measurement budgets."
    notes = {"psnr": PSNR_NOTE}

    ratios = Option[list]("--ratios", argparse_args={"type": parse_grid, "default": "0.02:0.02:0.30"})
    trials = Option[int]("--trials", argparse_args={"type": int, "default": 10})
    reconstructions = Option[bool]("--reconstructions", bool_flag=True)

    def execute(self) -> list[Path]:
        with progress_bar("trials", self.trials * len(self.ratios)) as advance:
            points = image_experiment(
                self.image(), BASES[self.basis], self.ratios, self.trials, self.seed,
                keep_reconstruction=self.reconstructions, threads=self.threads, progress=advance,
            )
        outputs = [write_csv(rate_distortion_frame(points), self.out_dir / "rate_distortion.csv")]
        for point in points:
            if point.reconstruction is not None:
                path = self.out_dir / f"reconstruction_{point.ratio:.3f}.pgm"
                outputs.append(write_pgm(path, to_pixels(point.reconstruction)))
        return outputs


class Maps(ImageCommand):
    help = "Spatial sensing maps, one PGM per level."

    big_k = Option[int]("--K", argparse_args={"type": int, "default": 4095})
    runlog = Option[bool]("--runlog", bool_flag=True)

    def execute(self) -> list[Path]:
        image = self.image()
        pair, _, log = sense_image(image, BASES[self.basis], self.big_k, self.seed)
        outputs = [
            write_pgm(self.out_dir / f"map_level{m.level}.pgm", m.to_bytes())
            for m in maps_from_log(image, pair, log)
        ]
        if self.runlog:
            outputs.append(log.write_csv(self.out_dir / "runlog.csv"))
        return outputs


class Captured(ImageCommand):
    help = "Overlap of the sensed and the optimal K-term coefficient sets."
    notes = {"psnr": PSNR_NOTE}

    big_k = Option[int]("--K", argparse_args={"type": int, "default": 4506})
    runs = Option[int]("--runs", argparse_args={"type": int, "default": 100})

    def execute(self) -> list[Path]:
        image = self.image()
        with progress_bar("runs", self.runs) as advance:
            report = captured_coefficients(
                image, BASES[self.basis], self.big_k, self.runs, self.seed,
                threads=self.threads, progress=advance,
            )
        summary = pd.DataFrame(
            [
                {
                    "K": self.big_k,
                    "runs": self.runs,
                    "overlap_mean": report.mean,
                    "overlap_std": report.std,
                    "kterm_psnr": kterm_psnr(image, image_pair(image, BASES[self.basis]), self.big_k),
                }
            ]
        )
        return [
            write_csv(report.overlap_frame(), self.out_dir / "captured.csv"),
            write_csv(report.magnitude_frame(), self.out_dir / "magnitudes.csv"),
            write_csv(summary, self.out_dir / "captured_summary.csv"),
        ]


class Theory(ExperimentCommand):
    help = "alpha*, energy and MSE of the top coefficient, partition sizes."

    alphas = Option[list]("--alphas", argparse_args={"type": parse_grid, "default": "1.05:0.05:5"})
    n = Option[int]("--N", argparse_args={"type": int, "default": 1024})

    def execute(self) -> list[Path]:
        rows = []
        for alpha in self.alphas:
            bound = max_partition_size(alpha)
            sound = max_partition_size(alpha, sound=True)
            rows.append(
                {
                    "alpha": alpha,
                    "energy_top1": energy_fraction_top1(alpha),
                    "energy_top1_N": energy_fraction_top1(alpha, self.n),
                    "mse_top1": mse_top1(alpha, self.n),
                    "partition": bound.partition,
                    "level": bound.level,
                    "unbounded": int(bound.unbounded),
                    "partition_sound": sound.partition,
                    "level_sound": sound.level,
                }
            )
        star = alpha_star()
        constants = pd.DataFrame(
            {
                "name": ["alpha_star", "zeta_alpha_star", "zeta_2", "zeta_1.5", "energy_top1_alpha_star"],
                "value": [star, zeta(star), zeta(2.0), zeta(1.5), energy_fraction_top1(star)],
            }
        )
        return [
            write_csv(pd.DataFrame(rows), self.out_dir / "theory.csv"),
            write_csv(constants, self.out_dir / "constants.csv"),
        ]


class Verify(Command):
    help = "Run the invariant suites."

    instances = Option[int]("--instances", argparse_args={"type": int, "default": 10_000})
    seed = Option[int]("--seed", argparse_args={"type": int, "default": 0})
    threads = Option[Optional[int]]("--threads", argparse_args={"type": int, "default": None})
    out = Option[Optional[str]]("--out", aliases=["-o"], argparse_args={"default": None})
    inject_fault = Option[bool](
        "--inject-fault", bool_flag=True, argparse_args={"help": argparse.SUPPRESS}
    )

    def run(self) -> int:
        settings = VerifySettings(self.instances, self.seed, self.inject_fault, self.threads)
        console = Console()
        with console.status("verifying") as status:
            results = run_checks(settings, lambda r: status.update(f"{r.name}: done"))
        console.print(results_table(results))
        if self.out:
            frame = pd.DataFrame(
                [{"check": r.name, "passed": int(r.passed), "detail": r.detail} for r in results]
            )
            path = write_csv(frame, Path(self.out) / "verify.csv")
            RunManifest.for_run(
                self.name(), self.config(), self.seed, __version__, outputs=[path], out_dir=self.out
            ).write(self.out)
        return 0 if all(r.passed for r in results) else 1


class Rerun(Command):
    help = "Re-execute a run from its manifest."

    manifest = Argument[str]("manifest", argparse_args={"help": "manifest.json or its directory."})
    out = Option[Optional[str]]("--out", aliases=["-o"], argparse_args={"default": None})

    def run(self) -> int:
        manifest = RunManifest.load(self.manifest)
        changed = manifest.verify_inputs()
        if changed:
            logger.warning("Inputs changed since the recorded run: %s", ", ".join(changed))
        command = build_parser().build(manifest.command, manifest.config)
        if self.out:
            command.out = self.out  # type: ignore[attr-defined]
        logger.info("Rerunning %s", manifest.command)
        return command.run()


def results_table(results: list[CheckResult]) -> Table:
    table = Table(title="kahs verify", show_lines=False)
    table.add_column("check")
    table.add_column("result")
    table.add_column("detail", overflow="fold")
    for r in results:
        table.add_row(r.name, "[green]pass" if r.passed else "[red]FAIL", r.detail)
    return table


COMMANDS: list[type[Command]] = [
    Verify,
    SynthDetection,
    SynthEnergy,
    Image,
    Maps,
    Captured,
    Theory,
    Rerun,
]


def build_parser() -> Parser:
    return Parser(*COMMANDS, prog="kahs", version=__version__)
