import argparse
from typing import NoReturn

from core.config import get_settings
from core.errors import UsageError


class ArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; usage errors here map to exit code 1."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_help()}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from exc


def build_parser() -> ArgumentParser:
    settings = get_settings()
    parser = ArgumentParser(
        prog="density-confidence",
        description=(
            "Density-model confidence for neural classifiers: train → fit-density → score, "
            "plus distortion sweeps, adversarial failure counts and the annulus/pathology demos. "
            "Every command is deterministic; absent --seed flags default to 0."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.version}")
    parser.add_argument("--verbose", action="store_true", help="log debug detail to stderr")
    sub = parser.add_subparsers(dest="command", metavar="<command>", parser_class=ArgumentParser)
    sub.required = True

    dataset_help = "dataset: mnist, synthetic or idx:<images>:<labels> (default: synthetic)"

    train = sub.add_parser("train", help="train the feedforward classifier with SGD")
    train.add_argument("--data", default="synthetic", help=dataset_help)
    train.add_argument("--out", required=True, help="model JSON to write")
    train.add_argument("--seed", type=int, default=settings.default_seed, help="init and shuffle seed (default: 0)")
    train.add_argument("--epochs", type=int, default=settings.epochs, help=f"SGD epochs (default: {settings.epochs})")
    train.add_argument("--batch-size", type=int, default=settings.batch_size, help=f"mini-batch size (default: {settings.batch_size})")
    train.add_argument("--learning-rate", type=float, default=settings.learning_rate, help=f"SGD step size (default: {settings.learning_rate})")
    train.add_argument(
        "--hidden", type=_int_list, default=list(settings.hidden_dims),
        help="comma-separated hidden widths (default: %s)" % ",".join(map(str, settings.hidden_dims)),
    )
    train.add_argument("--no-bias", action="store_true", help="keep all biases at zero (needed by pathology)")
    train.add_argument("--limit", type=int, default=None, help="use only the first N training samples")

    fit = sub.add_parser("fit-density", help="fit per-class diagonal Gaussians over pre-softmax features")
    fit.add_argument("--model", required=True, help="model JSON")
    fit.add_argument("--data", default="synthetic", help=dataset_help)
    fit.add_argument("--out", required=True, help="density JSON to write")
    fit.add_argument("--variance-scale", type=float, default=None, help="covariance multiplier (default: feature dimension d; 1 disables)")
    fit.add_argument("--limit", type=int, default=None, help="use only the first N samples")

    score = sub.add_parser("score", help="print a confidence report for one image as JSON")
    score.add_argument("--model", required=True, help="model JSON")
    score.add_argument("--density", required=True, help="density JSON")
    score.add_argument("--input", required=True, help="IDX image file")
    score.add_argument("--index", type=int, default=0, help="image index in the file (default: 0)")

    distort = sub.add_parser("distort", help="apply a distortion and write IDX or PGM")
    distort.add_argument("--input", required=True, help="IDX image file")
    distort.add_argument("--distortion", required=True, help="noise:<σ>, blur:<σ> or jpeg:<quality>")
    distort.add_argument("--out", required=True, help="output path ending in .idx (all images) or .pgm (one image)")
    distort.add_argument("--index", type=int, default=None, help="only this image (required for .pgm)")
    distort.add_argument("--seed", type=int, default=settings.default_seed, help="noise seed; image i uses seed+i (default: 0)")

    attack = sub.add_parser("attack", help="generate one adversarial example and write its JSON")
    attack.add_argument("--model", required=True, help="model JSON")
    attack.add_argument("--input", required=True, help="IDX image file")
    attack.add_argument("--labels", default=None, help="IDX label file (fgsm needs the true label)")
    attack.add_argument("--index", type=int, default=0, help="image index in the file (default: 0)")
    attack.add_argument("--attack", required=True, help="fgsm:<eps>, deepfool or deepfool:<overshoot>:<max_iter>")
    attack.add_argument("--out", default=None, help="AttackResult JSON to write (default: stdout)")

    sweep = sub.add_parser("sweep", help="run the distortion sweeps of an experiment config")
    sweep.add_argument("--config", required=True, help="experiment config JSON")

    failures = sub.add_parser("failures", help="count adversarial confidence failures for an experiment config")
    failures.add_argument("--config", required=True, help="experiment config JSON")

    annulus = sub.add_parser("annulus", help="Monte Carlo check of Gaussian norm concentration")
    annulus.add_argument("--dims", type=_int_list, default=[1, 10, 100, 1000], help="comma-separated dimensions (default: 1,10,100,1000)")
    annulus.add_argument("--beta", type=float, default=1.0, help="half-width of the annulus (default: 1)")
    annulus.add_argument("--samples", type=int, default=100_000, help="draws per dimension (default: 100000)")
    annulus.add_argument("--seed", type=int, default=settings.default_seed, help="sampling seed (default: 0)")
    annulus.add_argument("--out", required=True, help="CSV to write")

    pathology = sub.add_parser("pathology", help="confidence of k·x for growing k (bias-free model)")
    pathology.add_argument("--model", required=True, help="bias-free model JSON")
    pathology.add_argument("--density", required=True, help="density JSON")
    pathology.add_argument("--input", required=True, help="IDX image file")
    pathology.add_argument("--index", type=int, default=0, help="image index in the file (default: 0)")
    pathology.add_argument("--ks", type=_float_list, default=[1.3, 2.0, 5.0], help="comma-separated scale factors > 1 (default: 1.3,2,5)")

    return parser
