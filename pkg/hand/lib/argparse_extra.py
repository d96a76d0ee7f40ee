#!/usr/bin/env python3
import argparse

TRUE_WORDS = ('yes', 'y', 'true', 't', '1')
FALSE_WORDS = ('no', 'n', 'false', 'f', '0')


class ActionStoreBool(argparse.Action):
    """Boolean flag with a matching ``--no-`` form and optional value.

    >>> parser = argparse.ArgumentParser()
    >>> _ = parser.add_argument('--verbose', action=ActionStoreBool,
    ...                         default=False)
    >>> parser.parse_args([]).verbose
    False
    >>> parser.parse_args(['--verbose']).verbose
    True
    >>> parser.parse_args(['--no-verbose']).verbose
    False
    >>> parser.parse_args(['--verbose', 'no']).verbose
    False
    """

    def __init__(
            self,
            option_strings,
            dest,
            default=None,
            required=False,
            help=None,
            metavar=None
    ):
        names = []
        for s in option_strings:
            assert s.startswith("--"), s
            names.extend([s, "--no-" + s[2:]])
        super().__init__(
            names,
            dest=dest,
            nargs='?',
            const=None,
            default=default,
            type=parse_bool,
            required=required,
            help=help,
            metavar=metavar
        )

    def __call__(self, parser, namespace, value, option_string=None):
        if option_string.startswith("--no-"):
            value = False
        elif value is None:
            value = True
        setattr(namespace, self.dest, value)


def parse_bool(s):
    """Convert a yes/no style word into a boolean.

    >>> parse_bool('Y'), parse_bool('false')
    (True, False)
    """
    if s.lower() in TRUE_WORDS:
        return True
    if s.lower() in FALSE_WORDS:
        return False
    raise argparse.ArgumentTypeError('Boolean value expected.')


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
