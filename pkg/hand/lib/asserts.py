#!/usr/bin/env python3
from .errors import DimensionError


def _safe_call(f, a):
    """Call a function and capture all exceptions."""
    try:
        return f(a)
    except Exception as e:
        return "{}@{}({})".format(a.__class__.__name__, id(a), e)


def _safe_error(msg, a, b):
    """Generate the error message for assert_XX without causing an error."""
    return "{} {} {}".format(
        _safe_call(repr, a),
        msg,
        _safe_call(repr, b),
    )


def assert_eq(a, b, msg=None):
    """Assert equal with better error message.

    >>> assert_eq(3, 3)
    >>> assert_eq((2, 3), (3, 2))
    Traceback (most recent call last):
        ...
    AssertionError: (2, 3) != (3, 2)
    """
    assert a == b, msg or _safe_error("!=", a, b)


def assert_type(
        obj, cls, msg="{obj!r} should be a {cls}, not {objcls}"
):
    """Raise a type error if obj is not an instance of cls."""
    if not isinstance(obj, cls):
        raise TypeError(msg.format(obj=obj, objcls=type(obj), cls=cls))


def check_shape(name, actual, expected):
    """Raise DimensionError unless actual matches expected.

    ``None`` in expected matches any size along that axis.

    >>> check_shape("x", (3, 4), (3, None))
    >>> check_shape("x", (3, 4), (4, 4))
    Traceback (most recent call last):
        ...
    hand.lib.errors.DimensionError: x: shape (3, 4) does not match (4, 4)
    """
    actual = tuple(actual)
    ok = len(actual) == len(expected) and all(
        e is None or a == e for a, e in zip(actual, expected)
    )
    if not ok:
        raise DimensionError(
            "{}: shape {} does not match {}".format(
                name, actual, tuple(expected)
            )
        )


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
