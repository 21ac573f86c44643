import argparse
import logging

import numpy

from tandist.commands.subcommand import ExperimentCommand, Subcommand
from tandist.experiments import run_registration

logger = logging.getLogger(__name__)


@Subcommand.register(
    name="register",
    description="register a synthetic target against its reference pattern and write the iteration trace",
)
class RegisterCommand(ExperimentCommand):
    def setup(self) -> None:
        super().setup()
        self.parser.add_argument(
            "--bruteforce",
            action="store_true",
            help="compute the optimal parameters by brute-force projection (enables the bound column)",
        )
        self.parser.add_argument(
            "--quiet",
            action="store_true",
            help="do not print the trace table",
        )

    def run(self, args: argparse.Namespace) -> None:
        sets = list(args.sets)
        if args.bruteforce:
            sets.append("schedule.bruteforce=true")
        args.sets = sets
        config = self.load_config(args)

        run = run_registration(config)
        table = run.result.to_table(run.model)
        path = table.save_csv(config.out_dir / "register.csv", config.preamble())
        logger.info("Wrote %d rows to %s", len(table), path)

        if not args.quiet:
            table.show()
        error = float(numpy.linalg.norm(run.result.final - run.lam_star))
        status = "converged" if run.result.converged else "diverged" if run.result.diverged else "finished"
        print(f"{status} after {run.result.iterations} iterations, |lambda_e - lambda_*| = {error!r}")
        print(path)
