"""
Run configuration: the typed settings of a run and the line-based `key = value` file format they are
read from. A file consists of lines like

```
# two-class toy run
variant = mcdc
latent_dim = 2
classes = 0,1
```

Keys are the field names of the #RunConfig sections (`lambda` for `TrainConfig.lambda_`). Values given on
the command-line take precedence over values from a file, which take precedence over the defaults.
"""

import dataclasses
import enum
import logging
import re
import typing as t
from dataclasses import dataclass, field
from pathlib import Path

from nr.io.lexer import Cursor, ProxyToken, RuleSet, Tokenizer, rules

from ._data import DataConfig
from ._errors import ConfigError, InvalidArgumentError, SpecError
from ._model import ArchitectureSpec
from ._train import TrainConfig

logger = logging.getLogger(__name__)

#: Directory of the configuration presets shipped with the package.
PRESETS_DIR = Path(__file__).parent / "presets"

#: Pseudo filename of values given on the command-line.
ARGV = "<argv>"


class Token(enum.Enum):
    Eof = enum.auto()
    Newline = enum.auto()
    Whitespace = enum.auto()
    Comment = enum.auto()
    Control = enum.auto()
    Word = enum.auto()


rule_set = RuleSet((Token.Eof, ""))
rule_set.rule(Token.Newline, rules.regex_extract(r"\n"))
rule_set.rule(Token.Whitespace, rules.regex_extract(r"[ \t\r]+"))
rule_set.rule(Token.Comment, rules.regex_extract(r"#.*"))
rule_set.rule(Token.Control, rules.regex_extract(re.escape("=")))
rule_set.rule(Token.Word, rules.regex_extract(r"[^\s#=]+"))


@dataclass
class EvalConfig:
    """Settings of the clustering evaluation and the latent analyses."""

    #: Number of clusters; 0 uses the class count of the dataset.
    k: int = 0

    #: Number of k-means restarts; the restart with the lowest inertia wins.
    kmeans_restarts: int = 1000

    kmeans_max_iter: int = 300

    #: Added to every eigenvalue before whitening.
    whiten_eps: float = 1e-8

    #: Number of principal components kept by the whitening; 0 keeps all of them.
    whiten_components: int = 0

    #: Leading components of the per-class PCA profile.
    cutoff: int = 40

    #: Random pairs and alpha steps of an interpolation grid.
    pairs: int = 16
    steps: int = 11

    #: Mixing coefficient at which the side score of an interpolation is measured.
    side_alpha: float = 0.25

    #: When off, k-means restarts run on a thread pool (with identical results).
    deterministic: bool = True

    def validate(self) -> None:
        if self.k < 0 or self.whiten_components < 0:
            raise InvalidArgumentError("k and whiten_components must be >= 0")
        if self.kmeans_restarts < 1 or self.kmeans_max_iter < 1:
            raise InvalidArgumentError("kmeans_restarts and kmeans_max_iter must be >= 1")
        if self.cutoff < 1 or self.pairs < 1 or self.steps < 2:
            raise InvalidArgumentError("cutoff and pairs must be >= 1, steps must be >= 2")
        if self.whiten_eps < 0:
            raise InvalidArgumentError(f"whiten_eps must be >= 0, got {self.whiten_eps}")


@dataclass
class RunConfig:
    """All settings of a run, in four sections."""

    model: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)

    #: The keys that were given in a file or on the command-line.
    explicit_keys: t.Set[str] = field(default_factory=set)

    def sections(self) -> t.Dict[str, t.Any]:
        return {"model": self.model, "train": self.train, "eval": self.eval, "data": self.data}

    def validate(self) -> None:
        """The architecture is validated once its input shape is known from the data, see #build_model()."""

        self.train.validate()
        self.eval.validate()
        self.data.validate()

    def to_items(self) -> t.Dict[str, str]:
        """The effective value of every key, formatted such that #parse_config() reads it back."""

        items = {}
        for section, obj in self.sections().items():
            for f in dataclasses.fields(obj):
                items[config_key(f.name)] = format_value(getattr(obj, f.name))
        return items


@dataclass
class ConfigEntry:
    key: str
    value: str
    filename: str
    line: int
    column: int
    text: str

    def error(self, message: str) -> ConfigError:
        return ConfigError(message, self.filename, self.line, self.column, self.text)


def config_key(field_name: str) -> str:
    return field_name.rstrip("_")


def _key_table() -> t.Dict[str, t.Tuple[str, str]]:
    table = {}
    for section, obj in RunConfig().sections().items():
        for f in dataclasses.fields(obj):
            table[config_key(f.name)] = (section, f.name)
    return table


#: Maps a configuration key to its `(section, field name)`.
KEYS = _key_table()


def format_value(value: t.Any) -> str:
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, tuple):
        return ",".join(map(str, value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def convert_value(current: t.Any, text: str) -> t.Any:
    """Convert *text* to the type of the *current* value of a field. Raises #ValueError."""

    if isinstance(current, enum.Enum):
        return type(current)(text)
    if isinstance(current, bool):
        lowered = text.lower()
        if lowered in ("on", "true", "yes", "1"):
            return True
        if lowered in ("off", "false", "no", "0"):
            return False
        raise ValueError(f"expected on or off, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return tuple(int(part) for part in text.split(",") if part.strip())
    return text


def _syntax_error(tokenizer: Tokenizer, filename: str, message: str, pos: t.Optional[Cursor] = None) -> ConfigError:
    pos = pos or tokenizer.current.pos
    return ConfigError(message, filename, pos.line, pos.column, tokenizer.scanner.getline(pos).rstrip("\n"))


def parse_config(text: str, filename: str = "<string>") -> t.List[ConfigEntry]:
    """
    Parse `key = value` lines. Blank lines and `#` comments are ignored, the value extends to the end of the
    line (or the start of a comment) with surrounding whitespace removed. Keys must be known and unique.
    """

    tokenizer = Tokenizer(rule_set, text)
    token = ProxyToken(tokenizer)
    entries: t.List[ConfigEntry] = []
    seen: t.Dict[str, int] = {}

    while token.type != Token.Eof:
        if token.type in (Token.Whitespace, Token.Comment, Token.Newline):
            token.next()
            continue
        if token.type != Token.Word:
            raise _syntax_error(tokenizer, filename, f"expected a key, got {token.value!r}")

        key, key_pos = token.value, token.pos
        if key not in KEYS:
            raise _syntax_error(tokenizer, filename, f"unknown key {key!r}")
        if key in seen:
            raise _syntax_error(tokenizer, filename, f"duplicate key {key!r} (first set on line {seen[key]})")
        token.next()
        while token.type == Token.Whitespace:
            token.next()
        if token.tv != (Token.Control, "="):
            raise _syntax_error(tokenizer, filename, f"expected '=' after key {key!r}")
        token.next()
        while token.type == Token.Whitespace:
            token.next()

        value_pos = token.pos
        parts: t.List[str] = []
        while token.type not in (Token.Newline, Token.Comment, Token.Eof):
            if token.type == Token.Control:
                raise _syntax_error(tokenizer, filename, "unexpected '=' in value")
            parts.append(token.value)
            token.next()
        value = "".join(parts).strip()
        if not value:
            raise _syntax_error(tokenizer, filename, f"missing value for key {key!r}", value_pos)

        seen[key] = key_pos.line
        line_text = tokenizer.scanner.getline(value_pos).rstrip("\n")
        entries.append(ConfigEntry(key, value, filename, value_pos.line, value_pos.column, line_text))
    return entries


def apply_entries(cfg: RunConfig, entries: t.Iterable[ConfigEntry]) -> None:
    """Convert and assign each entry to its field of *cfg*."""

    for entry in entries:
        if entry.key not in KEYS:
            raise entry.error(f"unknown key {entry.key!r}")
        section, name = KEYS[entry.key]
        obj = cfg.sections()[section]
        try:
            value = convert_value(getattr(obj, name), entry.value)
        except ValueError as exc:
            raise entry.error(f"invalid value for {entry.key!r}: {exc}") from exc
        setattr(obj, name, value)
        cfg.explicit_keys.add(entry.key)


def build_config(*layers: t.Sequence[ConfigEntry]) -> RunConfig:
    """Apply the entry *layers* to the defaults in order and validate the result."""

    cfg = RunConfig()
    for entries in layers:
        apply_entries(cfg, entries)
    try:
        cfg.validate()
    except (InvalidArgumentError, SpecError) as exc:
        source = next((entries[-1].filename for entries in reversed(layers) if entries), ARGV)
        raise ConfigError(str(exc), source, 0, 0, "") from exc
    return cfg


def find_config(name: str) -> Path:
    """Resolve *name* as a file path, or else as the name of a preset (with or without the `.cfg` suffix)."""

    path = Path(name)
    if path.is_file():
        return path
    preset = PRESETS_DIR / (name if name.endswith(".cfg") else name + ".cfg")
    if preset.is_file():
        return preset
    raise FileNotFoundError(f"no config file or preset named {name!r}")


def load_config(name: str) -> t.List[ConfigEntry]:
    path = find_config(name)
    logger.info("reading config %s", path)
    data = path.read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line_start = data.rfind(b"\n", 0, exc.start) + 1
        line_end = data.find(b"\n", exc.start)
        raw_line = data[line_start : line_end if line_end >= 0 else len(data)]
        raise ConfigError(
            f"invalid UTF-8 at byte offset {exc.start}",
            str(path),
            data.count(b"\n", 0, exc.start) + 1,
            len(data[line_start : exc.start].decode("utf-8", errors="replace")),
            raw_line.decode("utf-8", errors="replace"),
        ) from exc
    return parse_config(text, str(path))


def argv_entries(overrides: t.Mapping[str, t.Any]) -> t.List[ConfigEntry]:
    """Entries for values given on the command-line; `None` values are skipped."""

    entries = []
    for key, value in overrides.items():
        if value is None:
            continue
        text = value if isinstance(value, str) else format_value(value)
        entries.append(ConfigEntry(key, text, ARGV, 0, len(f"--{key} "), f"--{key} {text}"))
    return entries


def resolve_config(config: t.Optional[str], overrides: t.Optional[t.Mapping[str, t.Any]] = None) -> RunConfig:
    """
    Build the effective #RunConfig from the defaults, the optional *config* file (or preset) and the
    command-line *overrides*, in increasing order of precedence. Settings that fail validation raise a
    #ConfigError.
    """

    file_entries = load_config(config) if config is not None else []
    return build_config(file_entries, argv_entries(overrides or {}))
