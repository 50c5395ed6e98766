from __future__ import annotations

import argparse
from abc import abstractmethod
from argparse import Namespace
from itertools import chain
from typing import (
    TYPE_CHECKING,
    Any,
    Callable,
    Generic,
    Iterable,
    Mapping,
    Optional,
    Sequence,
    Type,
    TypeVar,
    Union,
    overload,
)

from typing_extensions import Self

if TYPE_CHECKING:
    ChoicesType = Union[Iterable[str], Callable[[], Iterable[str]], None]

T = TypeVar("T")


class Argument(Generic[T]):
    """A positional command-line argument declared on a `Command` class.

    Values live on the command instance, so one class can be parsed repeatedly.
    """

    def __init__(
        self,
        name: str,
        choices: ChoicesType = None,
        argparse_args: Optional[dict[str, Any]] = None,
    ):
        self.name = name
        self._choices = choices
        self.argparse_args = argparse_args or {}
        self.attr = name.lstrip("-").replace("-", "_")

    def __set_name__(self, owner: type, attr: str) -> None:
        self.attr = attr

    @property
    def choices(self) -> Optional[list[str]]:
        choices = self._choices
        if callable(choices):
            choices = choices()
        return list(choices) if choices is not None else None

    @property
    def default(self) -> Optional[T]:
        return self.argparse_args.get("default")

    @overload
    def __get__(self, instance: None, owner: type) -> Self: ...
    @overload
    def __get__(self, instance: object, owner: type) -> T: ...
    def __get__(self, instance, owner):
        if instance is None:
            return self
        return instance.__dict__.get(self.attr, self.default)

    def __set__(self, instance: Command, value: T) -> None:
        instance.__dict__[self.attr] = value

    def add_to(self, parser: argparse.ArgumentParser) -> None:
        kwargs = dict(self.argparse_args)
        if self.choices is not None:
            kwargs["choices"] = self.choices
        parser.add_argument(self.name, **kwargs)


class Option(Argument[T]):
    def __init__(
        self,
        name: str,
        choices: ChoicesType = None,
        bool_flag: bool = False,
        aliases: Optional[list[str]] = None,
        argparse_args: Optional[dict[str, Any]] = None,
    ):
        super().__init__(name, choices, argparse_args)
        self.aliases = aliases or []
        self.bool_flag = bool_flag

    @property
    def default(self) -> Optional[T]:
        if self.bool_flag:
            return self.argparse_args.get("default", False)  # type: ignore
        return super().default

    def add_to(self, parser: argparse.ArgumentParser) -> None:
        kwargs = dict(self.argparse_args)
        if self.bool_flag:
            kwargs["action"] = "store_true"
        elif self.choices is not None:
            kwargs["choices"] = self.choices
        parser.add_argument(self.name, *self.aliases, dest=self.attr, **kwargs)


class Command:
    """A subcommand; its arguments and options are class-level descriptors.

    Descriptors declared on base classes are inherited, so shared flags are
    declared once.
    """

    help: str = ""

    @classmethod
    def name(cls) -> str:
        return getattr(cls, "command_name", None) or cls.__name__.lower()

    @classmethod
    def arguments(cls) -> list[Argument]:
        return [a for a in cls._descriptors() if not isinstance(a, Option)]

    @classmethod
    def options(cls) -> dict[str, Option]:
        return {o.name: o for o in cls._descriptors() if isinstance(o, Option)}

    @classmethod
    def _descriptors(cls) -> list[Argument]:
        seen: dict[str, Argument] = {}
        for klass in reversed(cls.__mro__):
            for attr, value in vars(klass).items():
                if isinstance(value, Argument):
                    seen[attr] = value
        return list(seen.values())

    def set_parsed_values(self, args: Union[Namespace, Mapping[str, Any]]) -> Self:
        values = vars(args) if isinstance(args, Namespace) else args
        for arg in chain(self.arguments(), self.options().values()):
            if arg.attr in values:
                setattr(self, arg.attr, values[arg.attr])
        return self

    def config(self) -> dict[str, Any]:
        """The parsed values, keyed by attribute name."""
        return {
            arg.attr: getattr(self, arg.attr)
            for arg in chain(self.arguments(), self.options().values())
        }

    @abstractmethod
    def run(self) -> int:
        """Execute the command and return its exit status."""


class Parser:
    def __init__(self, *commands: Type[Command], prog: str = "kahs", version: str = ""):
        self._commands: dict[str, Type[Command]] = {cmd.name(): cmd for cmd in commands}
        self._argparse_parser = self._create_argparse_parser(commands, prog, version)

    @property
    def commands(self) -> dict[str, Type[Command]]:
        return self._commands

    def _create_argparse_parser(
        self, commands: Iterable[Type[Command]], prog: str, version: str
    ) -> argparse.ArgumentParser:
        """Create the argparse parser for the given commands."""
        parser = argparse.ArgumentParser(prog=prog, exit_on_error=False)
        parser.add_argument("--version", action="version", version=f"%(prog)s {version}")
        verbosity = parser.add_mutually_exclusive_group()
        verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
        verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only.")
        subparsers = parser.add_subparsers(dest="command", required=True)
        for command in commands:
            subparser = subparsers.add_parser(
                command.name(), help=command.help, exit_on_error=False
            )
            for arg in command.arguments():
                arg.add_to(subparser)
            for opt in command.options().values():
                opt.add_to(subparser)
        return parser

    def parse(self, argv: Optional[Sequence[str]] = None) -> tuple[Command, Namespace]:
        args = self._argparse_parser.parse_args(argv)
        command = self._commands[args.command]().set_parsed_values(args)
        return command, args

    def build(self, name: str, config: Mapping[str, Any]) -> Command:
        """Instantiate command `name` from a stored config."""
        try:
            cls = self._commands[name]
        except KeyError:
            raise ValueError(f"Unknown command {name!r}") from None
        return cls().set_parsed_values(config)
