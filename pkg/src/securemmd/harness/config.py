"""Run configuration: defaults, key=value files and CLI flags, in that precedence."""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..he import FixedPointParams
from ..kernels import KernelSpec, KernelSpecError

log = logging.getLogger(__name__)

MODES = ("plaintext", "encrypted", "source_only")
POLY3_SECURE_WIDTH = 16
ENCRYPTED_BATCH_CAP = 256
DESK_ROWS = {"credit": 5000, "credit-sample": 5000, "census": 10000}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    schema: str = "credit-sample"
    max_rows: int | None = None
    full: bool = False
    synthetic_n: int = 200
    synthetic_features: int = 8

    kernel: str = "gaussian"
    sigma: float = 1.0
    poly_degree: int = 2
    c: float = 0.0
    kernel_mode: str = "auto"

    alpha: float = 1.0
    beta: float = 0.01
    lr: float = 0.05
    epochs: int = 50
    batch_size: int | None = None
    early_stop: bool = True

    mode: str = "plaintext"
    key_bits: int = 2048
    frac_bits: int = 40
    int_bits: int = 128

    source_fraction: float = 0.5
    overlap_fraction: float = 0.5
    test_fraction: float = 0.2

    l1_layers: tuple[int, ...] = (128,)
    l2_layers: tuple[int, ...] = (64,)
    activation: str = "relu"

    transport: str = "loopback"
    listen: str | None = None
    connect: str | None = None

    seed_data: int = 0
    seed_model: int = 0
    seed_crypto: int = 0
    out: str | None = None

    notes: list[str] = field(default_factory=list)

    # -- derived -------------------------------------------------------------

    def kernel_spec(self) -> KernelSpec:
        mode = self.kernel_mode
        if mode == "auto":
            mode = "taylor2" if (self.kernel in ("gaussian", "rbf") and self.mode == "encrypted") else "exact"
        try:
            return KernelSpec(self.kernel, c=self.c, d=self.poly_degree, sigma=self.sigma,
                              mode=mode if self.kernel in ("gaussian", "rbf") else "exact")
        except KernelSpecError as exc:
            raise ConfigError(str(exc)) from None

    def fixed(self) -> FixedPointParams:
        return FixedPointParams(self.frac_bits, self.int_bits)

    def desk_rows(self) -> int | None:
        if self.full:
            return None
        if self.max_rows is not None:
            return self.max_rows
        return DESK_ROWS.get(self.schema)

    def effective_batch(self, n_st: int) -> int:
        b = n_st if self.batch_size is None else min(self.batch_size, n_st)
        if self.mode == "encrypted":
            b = min(b, ENCRYPTED_BATCH_CAP)
        return max(1, b)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["l1_layers"] = list(self.l1_layers)
        d["l2_layers"] = list(self.l2_layers)
        if self.mode != "source_only":
            d["resolved_kernel"] = self.kernel_spec().label()
        return d

    def header(self) -> str:
        keys = ("mode", "data", "schema", "kernel", "sigma", "poly_degree", "c", "kernel_mode", "alpha", "beta",
                "lr", "epochs", "batch_size", "key_bits", "frac_bits", "source_fraction", "overlap_fraction",
                "test_fraction", "l1_layers", "l2_layers", "activation", "transport", "seed_data",
                "seed_model", "seed_crypto")
        d = self.to_dict()
        body = " ".join(f"{k}={d[k]}" for k in keys)
        if "resolved_kernel" in d:
            body += f" resolved_kernel={d['resolved_kernel']}"
        return "# " + body

    # -- validation ------------------------------------------------------------

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.kernel_mode not in ("auto", "exact", "taylor2"):
            raise ConfigError(f"kernel_mode must be auto, exact or taylor2, got {self.kernel_mode!r}")
        for name in ("lr",):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.transport not in ("loopback", "tcp"):
            raise ConfigError("transport must be loopback or tcp")
        if self.listen and self.connect:
            raise ConfigError("--listen and --connect are mutually exclusive")
        if self.mode == "source_only":
            return self
        spec = self.kernel_spec()
        if self.mode == "encrypted":
            if spec.family == "polynomial" and spec.c != 0.0:
                raise ConfigError("polynomial secure mode requires c=0")
            if spec.family == "gaussian" and spec.mode != "taylor2":
                raise ConfigError("encrypted gaussian requires kernel_mode taylor2 (or auto)")
            if not spec.secure_evaluable:
                raise ConfigError(f"kernel {spec.label()} has no secure evaluation")
            if spec.family == "polynomial" and spec.d == 3 and max(self.l2_layers) > POLY3_SECURE_WIDTH:
                capped = tuple(min(w, POLY3_SECURE_WIDTH) for w in self.l2_layers)
                msg = f"secure cubic kernel: aligned widths capped {self.l2_layers} -> {capped}"
                log.warning(msg)
                self.notes.append(msg)
                self.l2_layers = capped
        return self


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "notes"}
_ALIASES = {"poly-degree": "poly_degree", "d": "poly_degree", "key-bits": "key_bits", "frac-bits": "frac_bits",
            "int-bits": "int_bits", "seed-data": "seed_data", "seed-model": "seed_model",
            "seed-crypto": "seed_crypto", "kernel-mode": "kernel_mode", "batch-size": "batch_size",
            "max-rows": "max_rows"}


def _field_name(key: str) -> str:
    key = key.strip().lower()
    key = _ALIASES.get(key, key).replace("-", "_")
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def _coerce(name: str, raw):
    if raw is None:
        return None
    default = _FIELDS[name].default
    if name in ("l1_layers", "l2_layers"):
        if isinstance(raw, (list, tuple)):
            return tuple(int(w) for w in raw)
        text = str(raw).strip().strip("[]()")
        return tuple(int(w) for w in text.replace(",", " ").split()) if text else ()
    if isinstance(raw, str):
        raw = raw.strip()
        if raw.lower() in ("none", "null", ""):
            return None
    if isinstance(default, bool):
        return raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes", "on")
    if name in ("batch_size", "max_rows") or isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return str(raw)


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` comments; an optional ``[run]`` header."""
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read_string(text)
    out = {}
    for section in cp.sections():
        for k, v in cp[section].items():
            name = _field_name(k)
            out[name] = _coerce(name, v)
    return out


def add_run_flags(ap: argparse.ArgumentParser) -> None:
    """Every RunConfig field as a flag with default None (so we see what was set)."""
    ap.add_argument("--config", help="key=value config file")
    ap.add_argument("--data")
    ap.add_argument("--schema")
    ap.add_argument("--max-rows", type=int)
    ap.add_argument("--full", action="store_const", const=True)
    ap.add_argument("--synthetic-n", type=int)
    ap.add_argument("--synthetic-features", type=int)
    ap.add_argument("--kernel", choices=("linear", "polynomial", "poly", "gaussian", "rbf"))
    ap.add_argument("--sigma", type=float)
    ap.add_argument("--poly-degree", type=int)
    ap.add_argument("--c", type=float)
    ap.add_argument("--kernel-mode", choices=("auto", "exact", "taylor2"))
    ap.add_argument("--alpha", type=float)
    ap.add_argument("--beta", type=float)
    ap.add_argument("--lr", type=float)
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--batch-size", type=int)
    ap.add_argument("--no-early-stop", dest="early_stop", action="store_const", const=False)
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--key-bits", type=int)
    ap.add_argument("--frac-bits", type=int)
    ap.add_argument("--int-bits", type=int)
    ap.add_argument("--source-fraction", type=float)
    ap.add_argument("--overlap-fraction", type=float)
    ap.add_argument("--test-fraction", type=float)
    ap.add_argument("--l1-layers")
    ap.add_argument("--l2-layers")
    ap.add_argument("--activation", choices=("relu", "tanh"))
    ap.add_argument("--transport", choices=("loopback", "tcp"))
    ap.add_argument("--listen", metavar="HOST:PORT")
    ap.add_argument("--connect", metavar="HOST:PORT")
    ap.add_argument("--seed-data", type=int)
    ap.add_argument("--seed-model", type=int)
    ap.add_argument("--seed-crypto", type=int)
    ap.add_argument("--out")


def config_from_namespace(ns: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(ns, "config", None):
        values.update(read_config_file(ns.config))
    for name in _FIELDS:
        v = getattr(ns, name, None)
        if v is not None:
            values[name] = _coerce(name, v)
    return RunConfig(**values).validate()


def parse_config(args: list[str] | None = None, file=None) -> RunConfig:
    """CLI flags override ``file`` values, which override defaults.

    Unknown flags raise :class:`ConfigError`.
    """
    ap = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    add_run_flags(ap)
    ns, extra = ap.parse_known_args(args or [])
    if extra:
        raise ConfigError(f"unknown flag(s): {' '.join(extra)}")
    if file is not None:
        ns.config = str(file)
    return config_from_namespace(ns)
